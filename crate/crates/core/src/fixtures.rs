//! Reference pieces and random analysis-record generation.
//!
//! `biamonti_461` follows the published walkthrough of Beethoven's Biamonti
//! sketch No. 461: one section, motif 0 twice then filler, a single Eb major
//! key, five chords and fifteen melody intervals, the penultimate of which
//! straddles the last two chords. `biamonti_811` is a companion piece in the
//! same style used for two-piece corpora.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{FeatureSet, Interval, LevelKind, StructuralTemporalGraph};
use crate::record::{ingest, ingest_all, record_from_spans, AnalysisRecordFile, Span};

fn span(start: f64, end: f64, features: FeatureSet) -> Span {
    Span {
        interval: Interval::new(start, end),
        features,
    }
}

fn section(n: u32) -> FeatureSet {
    FeatureSet::new().with("section_num", n)
}

fn pattern(n: u32) -> FeatureSet {
    FeatureSet::new().with("pattern_num", n)
}

fn filler() -> FeatureSet {
    FeatureSet::new().with("filler", "filler")
}

fn key(n: u32, q: &str) -> FeatureSet {
    FeatureSet::new().with("relative_key_num", n).with("quality", q)
}

fn chord(q: &str, d1: u8, d2: u8) -> FeatureSet {
    FeatureSet::new()
        .with("quality", q)
        .with("degree1", d1)
        .with("degree2", d2)
}

fn step(v: i64) -> FeatureSet {
    FeatureSet::new()
        .with("abs_interval", v.abs())
        .with("interval_sign", if v < 0 { "-" } else { "+" })
}

fn melody(bounds: &[f64], steps: &[i64]) -> Vec<Span> {
    assert_eq!(bounds.len(), steps.len() + 1);
    bounds
        .windows(2)
        .zip(steps)
        .map(|(w, &s)| span(w[0], w[1], step(s)))
        .collect()
}

pub fn biamonti_461_record() -> AnalysisRecordFile {
    let mut levels = BTreeMap::new();
    levels.insert(LevelKind::Segmentation, vec![span(0.0, 12.0, section(0))]);
    levels.insert(
        LevelKind::Motif,
        vec![
            span(0.0, 3.0, pattern(0)),
            span(3.0, 6.0, pattern(0)),
            span(6.0, 12.0, filler()),
        ],
    );
    levels.insert(LevelKind::Key, vec![span(0.0, 12.0, key(0, "M"))]);
    levels.insert(
        LevelKind::Chord,
        vec![
            span(0.0, 3.0, chord("M", 1, 1)),
            span(3.0, 5.0, chord("M", 4, 1)),
            span(5.0, 7.0, chord("M", 1, 1)),
            span(7.0, 10.0, chord("D7", 5, 1)),
            span(10.0, 12.0, chord("M", 1, 1)),
        ],
    );
    levels.insert(
        LevelKind::Melody,
        melody(
            &[
                0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.5, 8.0, 8.5, 9.0, 9.5, 9.75, 10.5, 12.0,
            ],
            &[-2, 2, 3, -1, -2, 5, -3, 2, -2, 1, -1, 2, -3, -1, 1],
        ),
    );
    record_from_spans("Beethoven Biamonti Sketch No. 461", &levels)
}

pub fn biamonti_811_record() -> AnalysisRecordFile {
    let mut levels = BTreeMap::new();
    levels.insert(
        LevelKind::Segmentation,
        vec![span(0.0, 8.0, section(0)), span(8.0, 16.0, section(1))],
    );
    levels.insert(
        LevelKind::Motif,
        vec![
            span(0.0, 4.0, pattern(0)),
            span(4.0, 8.0, pattern(1)),
            span(8.0, 12.0, pattern(0)),
            span(12.0, 16.0, filler()),
        ],
    );
    levels.insert(
        LevelKind::Key,
        vec![span(0.0, 10.0, key(0, "M")), span(10.0, 16.0, key(7, "M"))],
    );
    levels.insert(
        LevelKind::Chord,
        vec![
            span(0.0, 4.0, chord("M", 1, 1)),
            span(4.0, 8.0, chord("M", 5, 1)),
            span(8.0, 10.0, chord("M", 1, 1)),
            span(10.0, 13.0, chord("M", 4, 1)),
            span(13.0, 16.0, chord("D7", 5, 1)),
        ],
    );
    levels.insert(
        LevelKind::Melody,
        melody(
            &[0.0, 1.5, 3.0, 4.5, 6.0, 8.0, 9.0, 10.0, 11.5, 13.0, 14.0, 15.0, 16.0],
            &[2, 2, -1, -3, 4, -2, -2, 1, 3, -5, 2, -1],
        ),
    );
    record_from_spans("Beethoven Biamonti Sketch No. 811", &levels)
}

pub fn biamonti_461() -> StructuralTemporalGraph {
    ingest_all(&biamonti_461_record()).expect("fixture ingests")
}

pub fn biamonti_811() -> StructuralTemporalGraph {
    ingest_all(&biamonti_811_record()).expect("fixture ingests")
}

/// Two sections over three keys: 11 augmented nodes, 15 augmented edges.
pub fn toy_record() -> AnalysisRecordFile {
    let mut levels = BTreeMap::new();
    levels.insert(
        LevelKind::Segmentation,
        vec![span(0.0, 4.0, section(0)), span(4.0, 8.0, section(1))],
    );
    levels.insert(
        LevelKind::Key,
        vec![
            span(0.0, 3.0, key(0, "M")),
            span(3.0, 6.0, key(5, "m")),
            span(6.0, 8.0, key(0, "M")),
        ],
    );
    record_from_spans("toy", &levels)
}

pub fn toy() -> StructuralTemporalGraph {
    ingest_all(&toy_record()).expect("fixture ingests")
}

/// Shape of a random analysis record.
#[derive(Debug, Clone)]
pub struct RandomRecordConfig {
    pub levels: Vec<LevelKind>,
    /// Timeline length in beats (one second each).
    pub beats: u32,
    /// Approximate number of spans per level, top to bottom.
    pub spans: Vec<u32>,
}

impl Default for RandomRecordConfig {
    fn default() -> Self {
        RandomRecordConfig {
            levels: LevelKind::ALL.to_vec(),
            beats: 16,
            spans: vec![2, 3, 2, 5, 10],
        }
    }
}

/// Random contiguous partition of `0..beats` into about `count` spans.
fn cut(rng: &mut ChaCha8Rng, beats: u32, count: u32) -> Vec<(f64, f64)> {
    let count = count.clamp(1, beats);
    let mut bounds: BTreeSet<u32> = [0, beats].into_iter().collect();
    while bounds.len() < count as usize + 1 {
        bounds.insert(rng.gen_range(1..beats));
    }
    let b: Vec<u32> = bounds.into_iter().collect();
    b.windows(2).map(|w| (w[0] as f64, w[1] as f64)).collect()
}

/// A well-formed random record: every level is a contiguous cover of the
/// timeline, so every child is covered by the level above.
pub fn random_record(seed: u64, config: &RandomRecordConfig) -> AnalysisRecordFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut levels = BTreeMap::new();
    for (i, &kind) in config.levels.iter().enumerate() {
        let count = config.spans.get(i).copied().unwrap_or(4);
        let spans = cut(&mut rng, config.beats, count)
            .into_iter()
            .map(|(s, e)| {
                let features = match kind {
                    LevelKind::Segmentation => section(rng.gen_range(0..3)),
                    LevelKind::Motif => {
                        if rng.gen_bool(0.25) {
                            filler()
                        } else {
                            pattern(rng.gen_range(0..3))
                        }
                    }
                    LevelKind::Key => key(rng.gen_range(0..3) * 5, if rng.gen_bool(0.7) { "M" } else { "m" }),
                    LevelKind::Chord => {
                        let q = ["M", "m", "D7", "d"][rng.gen_range(0..4)];
                        chord(q, [1, 4, 5, 2][rng.gen_range(0..4)], 1)
                    }
                    LevelKind::Melody => {
                        let v: i64 = rng.gen_range(1..6);
                        step(if rng.gen_bool(0.5) { v } else { -v })
                    }
                };
                span(s, e, features)
            })
            .collect();
        levels.insert(kind, spans);
    }
    record_from_spans(&format!("random-{seed}"), &levels)
}

pub fn random_stg(seed: u64, config: &RandomRecordConfig) -> StructuralTemporalGraph {
    let record = random_record(seed, config);
    ingest(&record, &config.levels.iter().copied().collect()).expect("random records ingest")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::validate_stg;

    #[test]
    fn biamonti_461_topology() {
        let g = biamonti_461();
        let counts: Vec<usize> = g.levels().iter().map(|l| l.nodes.len()).collect();
        assert_eq!(counts, vec![1, 3, 1, 5, 15]);
        // Key spans from the first motif to the filler.
        assert_eq!(g.parents("K0"), vec!["P0", "P2"]);
        assert_eq!(g.node("P2").unwrap().features.get("filler"), Some("filler"));
        // First melody interval (-2) inside the first chord.
        assert_eq!(g.parents("M0"), vec!["C0"]);
        assert_eq!(g.node("M0").unwrap().features.display_label(LevelKind::Melody), "-2");
        // Penultimate interval (-1) runs from the V7 chord into the final I.
        assert_eq!(g.parents("M13"), vec!["C3", "C4"]);
        assert_eq!(g.node("C3").unwrap().features.get("quality"), Some("D7"));
        assert_eq!(g.node("M13").unwrap().features.display_label(LevelKind::Melody), "-1");
        let two_parent = g
            .levels()
            .iter()
            .flat_map(|l| l.nodes.iter())
            .filter(|n| g.parents(&n.id).len() == 2)
            .count();
        assert_eq!(two_parent, 2);
    }

    #[test]
    fn random_records_are_valid() {
        for seed in 0..20 {
            let g = random_stg(seed, &RandomRecordConfig::default());
            assert!(validate_stg(&g).is_empty());
        }
    }
}
