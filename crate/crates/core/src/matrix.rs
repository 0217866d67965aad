//! Partition-aware padded adjacency matrices.
//!
//! Rows are grouped into partitions: one per instance level, then one per
//! (level, feature name) prototype group. Graphs compared or averaged
//! together share one [`PartitionMap`]; each partition is padded with
//! zero-arity dummy rows up to the largest size among the graphs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{AugInstance, AugNode, AugmentedGraph, PrototypeNode};
use crate::error::{Error, Result};
use crate::model::{is_legal_feature, LevelKind, CHORD_QUALITIES};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PartitionKind {
    Instance { level: LevelKind },
    Prototype { level: LevelKind, feature: String },
}

impl PartitionKind {
    pub fn level(&self) -> LevelKind {
        match self {
            PartitionKind::Instance { level } | PartitionKind::Prototype { level, .. } => *level,
        }
    }

    pub fn is_instance(&self) -> bool {
        matches!(self, PartitionKind::Instance { .. })
    }

    fn order_key(&self) -> (u8, usize, &str) {
        match self {
            PartitionKind::Instance { level } => (0, level.rank(), ""),
            PartitionKind::Prototype { level, feature } => (1, level.rank(), feature.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    #[serde(flatten)]
    pub kind: PartitionKind,
    pub start: usize,
    pub len: usize,
}

impl Partition {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Ordered, disjoint partitions covering all rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    parts: Vec<Partition>,
    part_of: Vec<usize>,
    levels: Vec<LevelKind>,
}

impl PartitionMap {
    /// Build from (kind, size) pairs; partitions are laid out in canonical
    /// order (instance levels top-down, then prototype groups).
    pub fn from_sizes(levels: Vec<LevelKind>, sizes: Vec<(PartitionKind, usize)>) -> Result<Self> {
        let mut sizes = sizes;
        sizes.sort_by(|a, b| a.0.order_key().cmp(&b.0.order_key()));
        let mut parts = Vec::new();
        let mut part_of = Vec::new();
        let mut seen = BTreeSet::new();
        for (kind, len) in sizes {
            if !seen.insert(kind.clone()) {
                return Err(Error::MalformedGraph(format!("duplicate partition {kind:?}")));
            }
            if !levels.contains(&kind.level()) {
                return Err(Error::MalformedGraph(format!("partition on unlisted level {kind:?}")));
            }
            let start = part_of.len();
            part_of.extend(std::iter::repeat(parts.len()).take(len));
            parts.push(Partition { kind, start, len });
        }
        for &l in &levels {
            if !seen.contains(&PartitionKind::Instance { level: l }) {
                return Err(Error::MalformedGraph(format!("no instance partition for {l}")));
            }
        }
        Ok(PartitionMap {
            parts,
            part_of,
            levels,
        })
    }

    /// Shared layout for a set of augmented graphs with identical level lists.
    pub fn covering(graphs: &[&AugmentedGraph]) -> Result<Self> {
        let first = graphs.first().ok_or(Error::EmptyCorpus)?;
        let levels = first.levels().to_vec();
        let mut sizes: BTreeMap<PartitionKind, usize> = BTreeMap::new();
        for g in graphs {
            if g.levels() != levels.as_slice() {
                return Err(Error::LevelMismatch(levels.clone(), g.levels().to_vec()));
            }
            for (kind, count) in Self::counts(g) {
                let e = sizes.entry(kind).or_default();
                *e = (*e).max(count);
            }
        }
        Self::from_sizes(levels, sizes.into_iter().collect())
    }

    fn counts(g: &AugmentedGraph) -> BTreeMap<PartitionKind, usize> {
        let mut out = BTreeMap::new();
        for &l in g.levels() {
            out.insert(PartitionKind::Instance { level: l }, g.instances_of(l).len());
        }
        for ((level, feature), members) in g.prototype_groups() {
            out.insert(PartitionKind::Prototype { level, feature }, members.len());
        }
        out
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.parts
    }

    pub fn levels(&self) -> &[LevelKind] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.part_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.part_of.is_empty()
    }

    /// Index of the partition containing `row`.
    pub fn part_of(&self, row: usize) -> usize {
        self.part_of[row]
    }

    pub fn kind_of(&self, row: usize) -> &PartitionKind {
        &self.parts[self.part_of[row]].kind
    }

    pub fn instance_partition(&self, level: LevelKind) -> Option<&Partition> {
        self.parts
            .iter()
            .find(|p| p.kind == PartitionKind::Instance { level })
    }

    /// Position of a row's level in the level list.
    pub fn level_position(&self, row: usize) -> usize {
        let l = self.kind_of(row).level();
        self.levels.iter().position(|x| *x == l).expect("level listed")
    }

    /// Whether setting cell (i, j) to 1 respects every global rule.
    pub fn globally_admissible(&self, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match (self.kind_of(i), self.kind_of(j)) {
            (_, PartitionKind::Prototype { .. }) => false,
            (PartitionKind::Prototype { level, feature }, PartitionKind::Instance { level: t }) => {
                level == t && t.has_feature(feature)
            }
            (PartitionKind::Instance { .. }, PartitionKind::Instance { .. }) => {
                let (a, b) = (self.level_position(i), self.level_position(j));
                b == a || b == a + 1
            }
        }
    }
}

/// Square 0/1 matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    n: usize,
    cells: Vec<u8>,
}

impl BitMatrix {
    pub fn zeros(n: usize) -> Self {
        BitMatrix {
            n,
            cells: vec![0; n * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[i * self.n + j] = v as u8;
    }

    #[inline]
    pub fn flip(&mut self, i: usize, j: usize) {
        self.cells[i * self.n + j] ^= 1;
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(k, _)| (k / self.n, k % self.n))
    }

    pub fn count_ones(&self) -> usize {
        self.cells.iter().map(|&v| v as usize).sum()
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n)
            .map(|k| (self.get(i, k) + self.get(k, i)) as usize)
            .sum()
    }

    /// Number of cells where the two matrices differ.
    pub fn hamming(&self, other: &BitMatrix) -> usize {
        self.cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Padded adjacency matrix of an augmented graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedMatrix {
    pub adj: BitMatrix,
    pub partitions: Arc<PartitionMap>,
    /// Instance id or prototype value of each row; `None` for padding or
    /// for rows whose identity is unknown.
    pub labels: Vec<Option<String>>,
    /// Rows added as zero-arity padding.
    pub dummy: Vec<bool>,
}

impl PaddedMatrix {
    /// Lay out `g` under `map`. Real rows keep graph node order and come
    /// first in each partition.
    pub fn pad(g: &AugmentedGraph, map: &Arc<PartitionMap>) -> Result<Self> {
        let n = map.len();
        let mut row_of = vec![usize::MAX; g.node_count()];
        let mut labels = vec![None; n];
        let mut dummy = vec![true; n];
        let mut fill: Vec<usize> = map.partitions().iter().map(|p| p.start).collect();
        for (i, node) in g.nodes().iter().enumerate() {
            let kind = match node {
                AugNode::Instance(x) => PartitionKind::Instance { level: x.level },
                AugNode::Prototype(p) => PartitionKind::Prototype {
                    level: p.level,
                    feature: p.feature_name.clone(),
                },
            };
            let pi = map
                .partitions()
                .iter()
                .position(|p| p.kind == kind)
                .ok_or(Error::PartitionMismatch)?;
            let part = &map.partitions()[pi];
            if fill[pi] >= part.start + part.len {
                return Err(Error::PartitionMismatch);
            }
            let row = fill[pi];
            fill[pi] += 1;
            row_of[i] = row;
            dummy[row] = false;
            labels[row] = Some(match node {
                AugNode::Instance(x) => x.id.clone(),
                AugNode::Prototype(p) => p.feature_value.clone(),
            });
        }
        let mut adj = BitMatrix::zeros(n);
        for &(a, b) in g.edges() {
            adj.set(row_of[a], row_of[b], true);
        }
        Ok(PaddedMatrix {
            adj,
            partitions: Arc::clone(map),
            labels,
            dummy,
        })
    }

    pub fn dim(&self) -> usize {
        self.adj.dim()
    }

    pub fn same_layout(&self, other: &PaddedMatrix) -> bool {
        Arc::ptr_eq(&self.partitions, &other.partitions) || self.partitions == other.partitions
    }

    pub fn dummy_count(&self) -> usize {
        self.dummy.iter().filter(|d| **d).count()
    }

    /// Rows with at least one incident edge.
    pub fn active_rows(&self) -> Vec<bool> {
        (0..self.dim()).map(|i| self.adj.degree(i) > 0).collect()
    }

    /// Relabel by a row permutation: row `a` of the result is row `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> PaddedMatrix {
        let n = self.dim();
        let mut adj = BitMatrix::zeros(n);
        for a in 0..n {
            for b in 0..n {
                if self.adj.get(perm[a], perm[b]) == 1 {
                    adj.set(a, b, true);
                }
            }
        }
        PaddedMatrix {
            adj,
            partitions: Arc::clone(&self.partitions),
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            dummy: perm.iter().map(|&p| self.dummy[p]).collect(),
        }
    }

    /// Give every active, unlabeled prototype row a legal value unused in its
    /// partition.
    pub fn fill_missing_labels(&mut self) {
        let active = self.active_rows();
        for part in self.partitions.partitions().to_vec() {
            let PartitionKind::Prototype { level, feature } = &part.kind else {
                continue;
            };
            let mut used: BTreeSet<String> =
                part.rows().filter_map(|r| self.labels[r].clone()).collect();
            for r in part.rows() {
                if active[r] && self.labels[r].is_none() {
                    let v = fresh_value(*level, feature, &used);
                    used.insert(v.clone());
                    self.labels[r] = Some(v);
                }
            }
        }
    }

    /// Graph of the active rows. Prototype rows must be labeled.
    pub fn to_augmented(&self) -> Result<AugmentedGraph> {
        let active = self.active_rows();
        let map = &self.partitions;
        let mut node_of = vec![usize::MAX; self.dim()];
        let mut nodes = Vec::new();
        let mut ids = BTreeSet::new();
        for part in map.partitions() {
            for r in part.rows() {
                if !active[r] {
                    continue;
                }
                let node = match &part.kind {
                    PartitionKind::Instance { level } => {
                        let mut id = self.labels[r]
                            .clone()
                            .unwrap_or_else(|| format!("{}r{r}", level.tag()));
                        if ids.contains(&id) {
                            id = format!("{}r{r}", level.tag());
                        }
                        ids.insert(id.clone());
                        AugNode::Instance(AugInstance {
                            id,
                            level: *level,
                            interval: None,
                        })
                    }
                    PartitionKind::Prototype { level, feature } => {
                        let value = self.labels[r].clone().ok_or_else(|| {
                            Error::MalformedGraph(format!("prototype row {r} has no value"))
                        })?;
                        AugNode::Prototype(PrototypeNode::new(*level, feature, &value))
                    }
                };
                node_of[r] = nodes.len();
                nodes.push(node);
            }
        }
        let edges: Vec<(usize, usize)> = self
            .adj
            .ones()
            .map(|(a, b)| (node_of[a], node_of[b]))
            .collect();
        AugmentedGraph::new(map.levels().to_vec(), nodes, edges)
    }
}

/// A legal value for `feature` on `level` not in `used`.
pub fn fresh_value(level: LevelKind, feature: &str, used: &BTreeSet<String>) -> String {
    let candidates: Vec<String> = match (level, feature) {
        (LevelKind::Key, "quality") => vec!["M".into(), "m".into()],
        (LevelKind::Chord, "quality") => CHORD_QUALITIES.iter().map(|s| s.to_string()).collect(),
        (LevelKind::Chord, _) => (1..=12).map(|d| d.to_string()).collect(),
        (LevelKind::Melody, "interval_sign") => vec!["+".into(), "-".into()],
        (LevelKind::Motif, "filler") => vec!["filler".into()],
        _ => (0..10_000).map(|d| d.to_string()).collect(),
    };
    candidates
        .into_iter()
        .find(|c| !used.contains(c) && is_legal_feature(level, feature, c))
        .unwrap_or_else(|| {
            // Bounded value sets can run out; reuse the first legal value.
            used.iter().next().cloned().unwrap_or_default()
        })
}

/// Pad two graphs under one shared partition map.
pub fn to_padded_pair(a1: &AugmentedGraph, a2: &AugmentedGraph) -> Result<(PaddedMatrix, PaddedMatrix)> {
    let map = Arc::new(PartitionMap::covering(&[a1, a2])?);
    Ok((PaddedMatrix::pad(a1, &map)?, PaddedMatrix::pad(a2, &map)?))
}

/// Pad a corpus under one shared partition map.
pub fn pad_corpus(graphs: &[AugmentedGraph]) -> Result<Vec<PaddedMatrix>> {
    let refs: Vec<&AugmentedGraph> = graphs.iter().collect();
    let map = Arc::new(PartitionMap::covering(&refs)?);
    graphs.iter().map(|g| PaddedMatrix::pad(g, &map)).collect()
}

/// ‖A1 − A2‖_F for binary matrices: the square root of the differing-cell count.
pub fn frobenius_distance(m1: &PaddedMatrix, m2: &PaddedMatrix) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch(m1.dim(), m2.dim()));
    }
    Ok((m1.adj.hamming(&m2.adj) as f64).sqrt())
}

/// Serialized form of a padded matrix (approximate centroids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDocument {
    pub format: String,
    pub version: u32,
    pub levels: Vec<LevelKind>,
    pub partitions: Vec<PartitionDoc>,
    pub labels: Vec<Option<String>>,
    pub dummy: Vec<bool>,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDoc {
    #[serde(flatten)]
    pub kind: PartitionKind,
    pub size: usize,
}

pub const MATRIX_FORMAT: &str = "stg-matrix";

impl MatrixDocument {
    pub fn from_matrix(m: &PaddedMatrix) -> Self {
        MatrixDocument {
            format: MATRIX_FORMAT.into(),
            version: 1,
            levels: m.partitions.levels().to_vec(),
            partitions: m
                .partitions
                .partitions()
                .iter()
                .map(|p| PartitionDoc {
                    kind: p.kind.clone(),
                    size: p.len,
                })
                .collect(),
            labels: m.labels.clone(),
            dummy: m.dummy.clone(),
            edges: m.adj.ones().collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<PaddedMatrix> {
        if self.format != MATRIX_FORMAT {
            return Err(Error::MalformedGraph(format!("not a matrix document: {}", self.format)));
        }
        let map = PartitionMap::from_sizes(
            self.levels.clone(),
            self.partitions.iter().map(|p| (p.kind.clone(), p.size)).collect(),
        )?;
        // Partition order is canonical; reject documents listed otherwise.
        let listed: Vec<&PartitionKind> = self.partitions.iter().map(|p| &p.kind).collect();
        let canonical: Vec<&PartitionKind> = map.partitions().iter().map(|p| &p.kind).collect();
        if listed != canonical {
            return Err(Error::MalformedGraph("partitions not in canonical order".into()));
        }
        let n = map.len();
        if self.labels.len() != n || self.dummy.len() != n {
            return Err(Error::DimensionMismatch(self.labels.len(), n));
        }
        let mut adj = BitMatrix::zeros(n);
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(Error::MalformedGraph(format!("edge ({a}, {b}) out of range")));
            }
            adj.set(a, b, true);
        }
        Ok(PaddedMatrix {
            adj,
            partitions: Arc::new(map),
            labels: self.labels.clone(),
            dummy: self.dummy.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix document serializes")
    }

    pub fn load(path: &Path) -> Result<PaddedMatrix> {
        let doc: MatrixDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        doc.to_matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::augment;
    use crate::fixtures;
    use crate::model::StructuralTemporalGraph;
    use crate::record::ingest_all;

    fn chords(n: usize) -> StructuralTemporalGraph {
        let mut levels = BTreeMap::new();
        levels.insert(
            LevelKind::Segmentation,
            vec![crate::record::Span {
                interval: crate::model::Interval::new(0.0, n as f64),
                features: crate::model::FeatureSet::new().with("section_num", 0),
            }],
        );
        levels.insert(
            LevelKind::Chord,
            (0..n)
                .map(|i| crate::record::Span {
                    interval: crate::model::Interval::new(i as f64, i as f64 + 1.0),
                    features: crate::model::FeatureSet::new()
                        .with("quality", "M")
                        .with("degree1", 1 + (i % 2))
                        .with("degree2", 1),
                })
                .collect(),
        );
        ingest_all(&crate::record::record_from_spans("c", &levels)).unwrap()
    }

    #[test]
    fn identical_graphs_have_no_dummies() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let (m1, m2) = to_padded_pair(&a, &a).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.dummy_count(), 0);
        assert_eq!(frobenius_distance(&m1, &m2).unwrap(), 0.0);
    }

    #[test]
    fn chord_partition_pads_to_larger() {
        let a3 = augment(&chords(3)).unwrap();
        let a5 = augment(&chords(5)).unwrap();
        let (m3, m5) = to_padded_pair(&a3, &a5).unwrap();
        let part = m3
            .partitions
            .instance_partition(LevelKind::Chord)
            .unwrap()
            .clone();
        assert_eq!(part.len, 5);
        assert_eq!(part.rows().filter(|&r| m3.dummy[r]).count(), 2);
        assert_eq!(part.rows().filter(|&r| m5.dummy[r]).count(), 0);
        for r in part.rows().filter(|&r| m3.dummy[r]) {
            assert_eq!(m3.adj.degree(r), 0);
        }
    }

    #[test]
    fn biamonti_pair_layout() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let b = augment(&fixtures::biamonti_811()).unwrap();
        let (m1, m2) = to_padded_pair(&a, &b).unwrap();
        assert!(m1.same_layout(&m2));
        let parts = m1.partitions.partitions();
        assert_eq!(parts.iter().filter(|p| p.kind.is_instance()).count(), 5);
        let protos: Vec<(LevelKind, String)> = parts
            .iter()
            .filter_map(|p| match &p.kind {
                PartitionKind::Prototype { level, feature } => Some((*level, feature.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(protos.len(), 10);
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let b = augment(&fixtures::toy()).unwrap();
        assert!(matches!(to_padded_pair(&a, &b), Err(Error::LevelMismatch(..))));
    }

    #[test]
    fn one_cell_difference() {
        let a = augment(&fixtures::toy()).unwrap();
        let (m1, mut m2) = to_padded_pair(&a, &a).unwrap();
        m2.adj.flip(0, 3);
        assert_eq!(frobenius_distance(&m1, &m2).unwrap(), 1.0);
    }

    #[test]
    fn matrix_round_trips_to_graph() {
        let a = augment(&fixtures::biamonti_811()).unwrap();
        let (m, _) = to_padded_pair(&a, &a).unwrap();
        let back = crate::augment::compress(&m.to_augmented().unwrap()).unwrap();
        assert_eq!(back, fixtures::biamonti_811().without_intervals());
        let doc = MatrixDocument::from_matrix(&m);
        let back: MatrixDocument = serde_json::from_str(&doc.to_json()).unwrap();
        assert_eq!(back.to_matrix().unwrap().adj, m.adj);
    }

    #[test]
    fn admissibility_follows_global_rules() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let (m, _) = to_padded_pair(&a, &a).unwrap();
        let map = &m.partitions;
        let seg = map.instance_partition(LevelKind::Segmentation).unwrap().start;
        let motif = map.instance_partition(LevelKind::Motif).unwrap().start;
        let key = map.instance_partition(LevelKind::Key).unwrap().start;
        assert!(!map.globally_admissible(seg, seg));
        assert!(map.globally_admissible(seg, motif));
        assert!(!map.globally_admissible(motif, seg));
        assert!(!map.globally_admissible(seg, key));
        let proto = map
            .partitions()
            .iter()
            .find(|p| !p.kind.is_instance() && p.kind.level() == LevelKind::Key)
            .unwrap()
            .start;
        assert!(map.globally_admissible(proto, key));
        assert!(!map.globally_admissible(proto, motif));
        assert!(!map.globally_admissible(key, proto));
    }
}
