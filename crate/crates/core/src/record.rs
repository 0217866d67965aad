//! Analysis-record files and their ingestion into compressed STGs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    is_legal_feature, node_id, FeatureSet, InstanceNode, Interval, Level, LevelKind,
    StructuralTemporalGraph,
};
use crate::validate::validate_stg;

/// Boundary slack, in seconds, when matching a child interval to parents.
pub const COVER_TOLERANCE: f64 = 0.010;

pub const RECORD_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PieceInfo {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub label: u32,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MotifPattern {
    Number(u32),
    Filler(FillerTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillerTag {
    Filler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSpan {
    pub pattern: MotifPattern,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySpan {
    pub relative_key_num: u32,
    pub quality: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordSpan {
    pub quality: String,
    pub degree1: u8,
    pub degree2: u8,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelodySpan {
    pub abs_interval: i64,
    pub interval_sign: String,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordLevels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Vec<SegmentSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motif: Option<Vec<MotifSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<KeySpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chord: Option<Vec<ChordSpan>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub melody: Option<Vec<MelodySpan>>,
}

/// Versioned JSON container for the per-level analyzer outputs of one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecordFile {
    pub version: u32,
    #[serde(default)]
    pub piece: PieceInfo,
    pub levels: RecordLevels,
}

/// A span reduced to its interval and feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Span {
    pub interval: Interval,
    pub features: FeatureSet,
}

impl AnalysisRecordFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: AnalysisRecordFile = serde_json::from_str(text)?;
        if file.version != RECORD_VERSION {
            return Err(Error::UnsupportedVersion(file.version));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    /// Levels present in the file, in hierarchy order.
    pub fn present_levels(&self) -> Vec<LevelKind> {
        LevelKind::ALL
            .into_iter()
            .filter(|l| self.spans(*l).is_some())
            .collect()
    }

    /// Spans of one level in file order, or `None` when the level is absent.
    pub fn spans(&self, level: LevelKind) -> Option<Vec<Span>> {
        let iv = |s: f64, e: f64| Interval::new(s, e);
        let l = &self.levels;
        match level {
            LevelKind::Segmentation => l.segmentation.as_ref().map(|v| {
                v.iter()
                    .map(|s| Span {
                        interval: iv(s.start, s.end),
                        features: FeatureSet::new().with("section_num", s.label),
                    })
                    .collect()
            }),
            LevelKind::Motif => l.motif.as_ref().map(|v| {
                v.iter()
                    .map(|s| Span {
                        interval: iv(s.start, s.end),
                        features: match &s.pattern {
                            MotifPattern::Number(n) => FeatureSet::new().with("pattern_num", n),
                            MotifPattern::Filler(_) => FeatureSet::new().with("filler", "filler"),
                        },
                    })
                    .collect()
            }),
            LevelKind::Key => l.key.as_ref().map(|v| {
                v.iter()
                    .map(|s| Span {
                        interval: iv(s.start, s.end),
                        features: FeatureSet::new()
                            .with("relative_key_num", s.relative_key_num)
                            .with("quality", &s.quality),
                    })
                    .collect()
            }),
            LevelKind::Chord => l.chord.as_ref().map(|v| {
                v.iter()
                    .map(|s| Span {
                        interval: iv(s.start, s.end),
                        features: FeatureSet::new()
                            .with("quality", &s.quality)
                            .with("degree1", s.degree1)
                            .with("degree2", s.degree2),
                    })
                    .collect()
            }),
            LevelKind::Melody => l.melody.as_ref().map(|v| {
                v.iter()
                    .map(|s| Span {
                        interval: iv(s.start, s.end),
                        features: FeatureSet::new()
                            .with("abs_interval", s.abs_interval)
                            .with("interval_sign", &s.interval_sign),
                    })
                    .collect()
            }),
        }
    }
}

/// Sort spans into chain order and merge chain-adjacent duplicates on levels
/// where neighbours must differ.
fn chain_order(level: LevelKind, spans: Vec<Span>) -> Result<Vec<Span>> {
    for (index, s) in spans.iter().enumerate() {
        let Interval { start, end } = s.interval;
        if !(end > start) || !(start >= 0.0) {
            return Err(Error::MalformedSpan {
                level,
                index,
                start,
                end,
            });
        }
        for (name, value) in s.features.iter() {
            if !is_legal_feature(level, name, value) {
                return Err(Error::IllegalFeature {
                    level,
                    name: name.to_string(),
                    value: value.to_string(),
                });
            }
        }
    }
    // Stable sort: ties on (start, end) keep file order.
    let mut spans = spans;
    spans.sort_by(|a, b| {
        a.interval
            .start
            .total_cmp(&b.interval.start)
            .then(a.interval.end.total_cmp(&b.interval.end))
    });
    if !level.requires_distinct_neighbors() {
        return Ok(spans);
    }
    let mut merged: Vec<Span> = Vec::with_capacity(spans.len());
    for s in spans {
        match merged.last_mut() {
            Some(prev) if prev.features == s.features => {
                prev.interval.end = prev.interval.end.max(s.interval.end);
            }
            _ => merged.push(s),
        }
    }
    Ok(merged)
}

/// Parent positions of a child interval: one when a parent contains it
/// entirely, otherwise the parent it starts in and the one it ends in.
fn covering_parents(child: Interval, parents: &[InstanceNode]) -> Option<Vec<usize>> {
    let eps = COVER_TOLERANCE;
    let iv = |p: &InstanceNode| p.interval.expect("ingested nodes have intervals");
    if let Some(i) = parents.iter().position(|p| {
        let p = iv(p);
        p.start - eps <= child.start && child.end <= p.end + eps
    }) {
        return Some(vec![i]);
    }
    let first = parents.iter().position(|p| {
        let p = iv(p);
        p.start - eps <= child.start && child.start < p.end - eps
    })?;
    let last = parents.iter().rposition(|p| {
        let p = iv(p);
        p.start + eps < child.end && child.end <= p.end + eps
    })?;
    match first.cmp(&last) {
        std::cmp::Ordering::Less => Some(vec![first, last]),
        std::cmp::Ordering::Equal => Some(vec![first]),
        std::cmp::Ordering::Greater => None,
    }
}

/// Build a compressed STG from an analysis file, keeping `levels_to_include`.
///
/// Within a level, nodes are ordered by start time, then end time, then file
/// position. The resulting graph is validated before it is returned.
pub fn ingest(
    file: &AnalysisRecordFile,
    levels_to_include: &BTreeSet<LevelKind>,
) -> Result<StructuralTemporalGraph> {
    let mut levels: Vec<Level> = Vec::new();
    for kind in levels_to_include.iter().copied() {
        let spans = file.spans(kind).ok_or(Error::MissingLevel(kind))?;
        if spans.is_empty() {
            return Err(Error::MissingLevel(kind));
        }
        let nodes = chain_order(kind, spans)?
            .into_iter()
            .enumerate()
            .map(|(i, s)| InstanceNode {
                id: node_id(kind, i),
                level: kind,
                chain_index: i,
                interval: Some(s.interval),
                features: s.features,
            })
            .collect();
        levels.push(Level { kind, nodes });
    }
    if levels.is_empty() {
        return Err(Error::MalformedGraph("no levels requested".into()));
    }
    let mut edges = Vec::new();
    for w in levels.windows(2) {
        let (upper, lower) = (&w[0], &w[1]);
        for child in &lower.nodes {
            let iv = child.interval.expect("ingested");
            let ps = covering_parents(iv, &upper.nodes).ok_or_else(|| Error::Uncovered {
                level: lower.kind,
                parent: upper.kind,
                id: child.id.clone(),
                start: iv.start,
                end: iv.end,
            })?;
            for p in ps {
                edges.push((upper.nodes[p].id.clone(), child.id.clone()));
            }
        }
    }
    let g = StructuralTemporalGraph::new(levels, edges)?;
    let report = validate_stg(&g);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    Ok(g)
}

/// Ingest every level present in the file.
pub fn ingest_all(file: &AnalysisRecordFile) -> Result<StructuralTemporalGraph> {
    ingest(file, &file.present_levels().into_iter().collect())
}

/// Build a record from per-level span lists (used by fixtures and generators).
pub fn record_from_spans(title: &str, spans: &BTreeMap<LevelKind, Vec<Span>>) -> AnalysisRecordFile {
    let mut levels = RecordLevels::default();
    let mut duration: f64 = 0.0;
    for (kind, list) in spans {
        for s in list {
            duration = duration.max(s.interval.end);
        }
        let f = |s: &Span, n: &str| s.features.get(n).unwrap_or_default().to_string();
        match kind {
            LevelKind::Segmentation => {
                levels.segmentation = Some(
                    list.iter()
                        .map(|s| SegmentSpan {
                            label: f(s, "section_num").parse().unwrap_or(0),
                            start: s.interval.start,
                            end: s.interval.end,
                        })
                        .collect(),
                )
            }
            LevelKind::Motif => {
                levels.motif = Some(
                    list.iter()
                        .map(|s| MotifSpan {
                            pattern: match s.features.get("pattern_num") {
                                Some(n) => MotifPattern::Number(n.parse().unwrap_or(0)),
                                None => MotifPattern::Filler(FillerTag::Filler),
                            },
                            start: s.interval.start,
                            end: s.interval.end,
                        })
                        .collect(),
                )
            }
            LevelKind::Key => {
                levels.key = Some(
                    list.iter()
                        .map(|s| KeySpan {
                            relative_key_num: f(s, "relative_key_num").parse().unwrap_or(0),
                            quality: f(s, "quality"),
                            start: s.interval.start,
                            end: s.interval.end,
                        })
                        .collect(),
                )
            }
            LevelKind::Chord => {
                levels.chord = Some(
                    list.iter()
                        .map(|s| ChordSpan {
                            quality: f(s, "quality"),
                            degree1: f(s, "degree1").parse().unwrap_or(1),
                            degree2: f(s, "degree2").parse().unwrap_or(1),
                            start: s.interval.start,
                            end: s.interval.end,
                        })
                        .collect(),
                )
            }
            LevelKind::Melody => {
                levels.melody = Some(
                    list.iter()
                        .map(|s| MelodySpan {
                            abs_interval: f(s, "abs_interval").parse().unwrap_or(0),
                            interval_sign: f(s, "interval_sign"),
                            start: s.interval.start,
                            end: s.interval.end,
                        })
                        .collect(),
                )
            }
        }
    }
    AnalysisRecordFile {
        version: RECORD_VERSION,
        piece: PieceInfo {
            title: title.to_string(),
            duration,
        },
        levels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(label: u32, start: f64, end: f64) -> SegmentSpan {
        SegmentSpan { label, start, end }
    }

    fn chord(q: &str, d: u8, start: f64, end: f64) -> ChordSpan {
        ChordSpan {
            quality: q.into(),
            degree1: d,
            degree2: 1,
            start,
            end,
        }
    }

    fn two_level(chords: Vec<ChordSpan>) -> AnalysisRecordFile {
        AnalysisRecordFile {
            version: 1,
            piece: PieceInfo::default(),
            levels: RecordLevels {
                segmentation: Some(vec![seg(0, 0.0, 4.0), seg(1, 4.0, 8.0)]),
                chord: Some(chords),
                ..Default::default()
            },
        }
    }

    fn both() -> BTreeSet<LevelKind> {
        [LevelKind::Segmentation, LevelKind::Chord].into_iter().collect()
    }

    #[test]
    fn single_span_single_node() {
        let f = AnalysisRecordFile {
            version: 1,
            piece: PieceInfo::default(),
            levels: RecordLevels {
                segmentation: Some(vec![seg(0, 0.0, 3.0)]),
                ..Default::default()
            },
        };
        let g = ingest_all(&f).unwrap();
        assert_eq!(g.node_count(), 1);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn one_parent_per_contained_child() {
        let f = two_level(vec![
            chord("M", 1, 0.0, 2.0),
            chord("D7", 5, 2.0, 4.0),
            chord("M", 1, 4.0, 6.0),
            chord("M", 4, 6.0, 8.0),
        ]);
        let g = ingest(&f, &both()).unwrap();
        assert_eq!(g.edges().len(), 4);
    }

    #[test]
    fn straddling_child_gets_two_parents() {
        let f = two_level(vec![chord("M", 1, 0.0, 3.0), chord("D7", 5, 3.0, 8.0)]);
        let g = ingest(&f, &both()).unwrap();
        assert_eq!(g.parents("C1"), vec!["S0", "S1"]);
        assert_eq!(g.parents("C0"), vec!["S0"]);
    }

    #[test]
    fn tolerance_absorbs_small_boundary_drift() {
        let f = two_level(vec![chord("M", 1, 0.0, 4.005), chord("D7", 5, 4.005, 8.0)]);
        let g = ingest(&f, &both()).unwrap();
        assert_eq!(g.parents("C0"), vec!["S0"]);
        assert_eq!(g.parents("C1"), vec!["S1"]);
    }

    #[test]
    fn uncovered_child_is_an_error() {
        let f = two_level(vec![chord("M", 1, 0.0, 4.0), chord("D7", 5, 4.0, 9.0)]);
        assert!(matches!(ingest(&f, &both()), Err(Error::Uncovered { .. })));
    }

    #[test]
    fn malformed_span_is_an_error() {
        let f = two_level(vec![chord("M", 1, 2.0, 2.0)]);
        assert!(matches!(ingest(&f, &both()), Err(Error::MalformedSpan { .. })));
    }

    #[test]
    fn missing_level_is_an_error() {
        let f = two_level(vec![chord("M", 1, 0.0, 8.0)]);
        let want: BTreeSet<_> = [LevelKind::Key].into_iter().collect();
        assert!(matches!(ingest(&f, &want), Err(Error::MissingLevel(LevelKind::Key))));
    }

    #[test]
    fn equal_starts_order_by_end_then_file_position() {
        let f = AnalysisRecordFile {
            version: 1,
            piece: PieceInfo::default(),
            levels: RecordLevels {
                segmentation: Some(vec![seg(0, 0.0, 8.0)]),
                motif: Some(vec![
                    MotifSpan { pattern: MotifPattern::Number(2), start: 0.0, end: 6.0 },
                    MotifSpan { pattern: MotifPattern::Number(1), start: 0.0, end: 3.0 },
                    MotifSpan { pattern: MotifPattern::Number(3), start: 0.0, end: 3.0 },
                    MotifSpan { pattern: MotifPattern::Filler(FillerTag::Filler), start: 3.0, end: 8.0 },
                ]),
                ..Default::default()
            },
        };
        let g = ingest_all(&f).unwrap();
        let order: Vec<String> = g.levels()[1]
            .nodes
            .iter()
            .map(|n| n.features.display_label(LevelKind::Motif))
            .collect();
        assert_eq!(order, vec!["1", "3", "2", "filler"]);
    }

    #[test]
    fn repeated_chord_labels_merge() {
        let f = two_level(vec![
            chord("M", 1, 0.0, 2.0),
            chord("M", 1, 2.0, 4.0),
            chord("D7", 5, 4.0, 8.0),
        ]);
        let g = ingest(&f, &both()).unwrap();
        assert_eq!(g.levels()[1].nodes.len(), 2);
        assert_eq!(g.levels()[1].nodes[0].interval.unwrap().end, 4.0);
    }

    #[test]
    fn version_is_checked() {
        let text = r#"{"version":2,"levels":{}}"#;
        assert!(matches!(
            AnalysisRecordFile::from_json(text),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn json_motif_pattern_accepts_int_or_filler() {
        let text = r#"{"version":1,"piece":{"title":"t","duration":2.0},
            "levels":{"motif":[{"pattern":0,"start":0,"end":1},{"pattern":"filler","start":1,"end":2}]}}"#;
        let f = AnalysisRecordFile::from_json(text).unwrap();
        let spans = f.spans(LevelKind::Motif).unwrap();
        assert_eq!(spans[0].features.get("pattern_num"), Some("0"));
        assert_eq!(spans[1].features.get("filler"), Some("filler"));
    }
}
