//! Compressed structural temporal graph (STG) data model.
//!
//! An STG is a k-partite DAG. Each part is one analysis level, ordered from
//! coarse (segmentation) to fine (melody). Instance nodes carry a time
//! interval and a feature set; edges run from a node to the nodes of the next
//! level whose intervals it (partially) contains.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One level of the structural hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelKind {
    Segmentation,
    Motif,
    Key,
    Chord,
    Melody,
}

impl LevelKind {
    pub const ALL: [LevelKind; 5] = [
        LevelKind::Segmentation,
        LevelKind::Motif,
        LevelKind::Key,
        LevelKind::Chord,
        LevelKind::Melody,
    ];

    /// Position in the hierarchy, 0 = top.
    pub fn rank(self) -> usize {
        self as usize
    }

    /// Motif is the only level whose instance intervals may overlap.
    pub fn allows_overlap(self) -> bool {
        self == LevelKind::Motif
    }

    /// Levels on which chain-adjacent nodes must differ in prototype parents.
    pub fn requires_distinct_neighbors(self) -> bool {
        matches!(
            self,
            LevelKind::Segmentation | LevelKind::Key | LevelKind::Chord
        )
    }

    /// Single-letter tag used for node ids and rendering.
    pub fn tag(self) -> char {
        match self {
            LevelKind::Segmentation => 'S',
            LevelKind::Motif => 'P',
            LevelKind::Key => 'K',
            LevelKind::Chord => 'C',
            LevelKind::Melody => 'M',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LevelKind::Segmentation => "segmentation",
            LevelKind::Motif => "motif",
            LevelKind::Key => "key",
            LevelKind::Chord => "chord",
            LevelKind::Melody => "melody",
        }
    }

    pub fn from_name(name: &str) -> Option<LevelKind> {
        LevelKind::ALL.into_iter().find(|l| l.name() == name)
    }

    /// Feature slots of the level. Every instance has exactly one prototype
    /// parent per slot; a slot lists the feature names that can fill it.
    /// Motif nodes carry either a pattern number or the filler marker.
    pub fn slots(self) -> &'static [&'static [&'static str]] {
        match self {
            LevelKind::Segmentation => &[&["section_num"]],
            LevelKind::Motif => &[&["pattern_num", "filler"]],
            LevelKind::Key => &[&["relative_key_num"], &["quality"]],
            LevelKind::Chord => &[&["quality"], &["degree1"], &["degree2"]],
            LevelKind::Melody => &[&["abs_interval"], &["interval_sign"]],
        }
    }

    /// All feature names that may appear on this level.
    pub fn feature_names(self) -> impl Iterator<Item = &'static str> {
        self.slots().iter().flat_map(|s| s.iter().copied())
    }

    pub fn has_feature(self, name: &str) -> bool {
        self.feature_names().any(|f| f == name)
    }

    /// Index of the slot a feature name belongs to.
    pub fn slot_of(self, name: &str) -> Option<usize> {
        self.slots().iter().position(|s| s.contains(&name))
    }
}

impl fmt::Display for LevelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const CHORD_QUALITIES: [&str; 9] = ["M", "m", "d", "d7", "h7", "D7", "a", "a6", "a7"];

/// Whether `value` is a legal value for feature `name` on `level`.
pub fn is_legal_feature(level: LevelKind, name: &str, value: &str) -> bool {
    let non_negative = || value.parse::<u64>().is_ok() && !value.starts_with('+');
    match (level, name) {
        (LevelKind::Segmentation, "section_num") => non_negative(),
        (LevelKind::Motif, "pattern_num") => non_negative(),
        (LevelKind::Motif, "filler") => value == "filler",
        (LevelKind::Key, "relative_key_num") => non_negative(),
        (LevelKind::Key, "quality") => value == "M" || value == "m",
        (LevelKind::Chord, "quality") => CHORD_QUALITIES.contains(&value),
        (LevelKind::Chord, "degree1") | (LevelKind::Chord, "degree2") => {
            matches!(value.parse::<u8>(), Ok(1..=12)) && !value.starts_with('+')
        }
        (LevelKind::Melody, "abs_interval") => {
            value.parse::<i64>().is_ok() && !value.starts_with('+')
        }
        (LevelKind::Melody, "interval_sign") => value == "+" || value == "-",
        _ => false,
    }
}

/// Ordered feature-name → value mapping of one instance node.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSet(pub BTreeMap<String, String>);

impl FeatureSet {
    pub fn new() -> Self {
        FeatureSet(BTreeMap::new())
    }

    pub fn with(mut self, name: &str, value: impl ToString) -> Self {
        self.0.insert(name.to_string(), value.to_string());
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Problems with this feature set on `level`: missing or doubly filled
    /// slots, unknown names, illegal values.
    pub fn problems(&self, level: LevelKind) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in self.iter() {
            if !level.has_feature(name) {
                out.push(format!("unknown feature {name} on {level}"));
            } else if !is_legal_feature(level, name, value) {
                out.push(format!("illegal value {name}:{value}"));
            }
        }
        for slot in level.slots() {
            let filled = slot.iter().filter(|n| self.0.contains_key(**n)).count();
            if filled != 1 {
                out.push(format!("slot {} filled {filled} times", slot.join("|")));
            }
        }
        out
    }

    /// Human-readable label, e.g. `0M` for a key or `-2` for a melody step.
    pub fn display_label(&self, level: LevelKind) -> String {
        let g = |n: &str| self.get(n).unwrap_or("?").to_string();
        match level {
            LevelKind::Segmentation => g("section_num"),
            LevelKind::Motif => {
                if self.get("filler").is_some() {
                    "filler".to_string()
                } else {
                    g("pattern_num")
                }
            }
            LevelKind::Key => format!("{}{}", g("relative_key_num"), g("quality")),
            LevelKind::Chord => format!("{}:{}/{}", g("quality"), g("degree1"), g("degree2")),
            LevelKind::Melody => format!("{}{}", g("interval_sign"), g("abs_interval")),
        }
    }
}

/// Time span of an instance in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Interval { start, end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceNode {
    pub id: String,
    pub level: LevelKind,
    pub chain_index: usize,
    /// Absent on derived centroids, which have no timeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
    pub features: FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub kind: LevelKind,
    /// Nodes in chain order.
    pub nodes: Vec<InstanceNode>,
}

/// Compressed STG: levels of instance nodes plus inter-level edges.
///
/// Construction only checks referential integrity; structural rules are
/// checked by [`crate::validate::validate_stg`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralTemporalGraph {
    levels: Vec<Level>,
    edges: BTreeSet<(String, String)>,
    index: HashMap<String, (usize, usize)>,
}

impl StructuralTemporalGraph {
    pub fn new(
        levels: Vec<Level>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::MalformedGraph("graph has no levels".into()));
        }
        for w in levels.windows(2) {
            if w[0].kind.rank() >= w[1].kind.rank() {
                return Err(Error::MalformedGraph(format!(
                    "levels out of hierarchy order: {} before {}",
                    w[0].kind, w[1].kind
                )));
            }
        }
        let mut index = HashMap::new();
        for (li, level) in levels.iter().enumerate() {
            for (ni, node) in level.nodes.iter().enumerate() {
                if node.level != level.kind {
                    return Err(Error::MalformedGraph(format!(
                        "node {} tagged {} inside level {}",
                        node.id, node.level, level.kind
                    )));
                }
                if let Some(iv) = node.interval {
                    if !(iv.end > iv.start) || !(iv.start >= 0.0) {
                        return Err(Error::MalformedSpan {
                            level: level.kind,
                            index: ni,
                            start: iv.start,
                            end: iv.end,
                        });
                    }
                }
                if index.insert(node.id.clone(), (li, ni)).is_some() {
                    return Err(Error::MalformedGraph(format!("duplicate node id {}", node.id)));
                }
            }
        }
        let edges: BTreeSet<(String, String)> = edges.into_iter().collect();
        for (a, b) in &edges {
            for id in [a, b] {
                if !index.contains_key(id) {
                    return Err(Error::MalformedGraph(format!("edge references unknown node {id}")));
                }
            }
        }
        Ok(StructuralTemporalGraph {
            levels,
            edges,
            index,
        })
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level_kinds(&self) -> Vec<LevelKind> {
        self.levels.iter().map(|l| l.kind).collect()
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    /// (level position, position within level) of a node id.
    pub fn locate(&self, id: &str) -> Option<(usize, usize)> {
        self.index.get(id).copied()
    }

    pub fn node(&self, id: &str) -> Option<&InstanceNode> {
        self.locate(id).map(|(l, n)| &self.levels[l].nodes[n])
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(|l| l.nodes.len()).sum()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &InstanceNode> {
        self.levels.iter().flat_map(|l| l.nodes.iter())
    }

    /// Parent ids of `id`, in parent-level chain order.
    pub fn parents(&self, id: &str) -> Vec<&str> {
        let mut ps: Vec<(usize, usize, &str)> = self
            .edges
            .iter()
            .filter(|(_, c)| c == id)
            .filter_map(|(p, _)| self.locate(p).map(|(l, n)| (l, n, p.as_str())))
            .collect();
        ps.sort();
        ps.into_iter().map(|(_, _, p)| p).collect()
    }

    /// Keep the top `keep_top_n` levels and the edges among them.
    pub fn ablate(&self, keep_top_n: usize) -> Result<StructuralTemporalGraph> {
        if keep_top_n == 0 || keep_top_n > self.levels.len() {
            return Err(Error::AblationRange {
                keep: keep_top_n,
                levels: self.levels.len(),
            });
        }
        let levels: Vec<Level> = self.levels[..keep_top_n].to_vec();
        let edges = self
            .edges
            .iter()
            .filter(|(a, b)| {
                let la = self.index[a].0;
                let lb = self.index[b].0;
                la < keep_top_n && lb < keep_top_n
            })
            .cloned()
            .collect::<Vec<_>>();
        StructuralTemporalGraph::new(levels, edges)
    }

    /// Copy of the graph with all intervals removed.
    pub fn without_intervals(&self) -> StructuralTemporalGraph {
        let mut g = self.clone();
        for level in &mut g.levels {
            for node in &mut level.nodes {
                node.interval = None;
            }
        }
        g
    }
}

/// Free-function form of [`StructuralTemporalGraph::ablate`].
pub fn levels_ablate(g: &StructuralTemporalGraph, keep_top_n: usize) -> Result<StructuralTemporalGraph> {
    g.ablate(keep_top_n)
}

/// Conventional id of the `index`-th node of a level.
pub fn node_id(level: LevelKind, index: usize) -> String {
    format!("{}{}", level.tag(), index)
}
