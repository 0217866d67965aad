//! Augmented STGs: prototype nodes, prototype→instance edges and
//! intra-level chains make every structural attribute part of the topology,
//! so that two graphs can be compared by isomorphism alone.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    FeatureSet, InstanceNode, Interval, Level, LevelKind, StructuralTemporalGraph,
};
use crate::validate::{validate_augmented, validate_stg};

/// A (feature name, feature value) pair describing instances of one level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PrototypeNode {
    pub level: LevelKind,
    pub feature_name: String,
    pub feature_value: String,
}

impl PrototypeNode {
    pub fn new(level: LevelKind, name: &str, value: &str) -> Self {
        PrototypeNode {
            level,
            feature_name: name.to_string(),
            feature_value: value.to_string(),
        }
    }

    /// `feature_name:feature_value`
    pub fn label(&self) -> String {
        format!("{}:{}", self.feature_name, self.feature_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugInstance {
    pub id: String,
    pub level: LevelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum AugNode {
    Instance(AugInstance),
    Prototype(PrototypeNode),
}

impl AugNode {
    pub fn level(&self) -> LevelKind {
        match self {
            AugNode::Instance(i) => i.level,
            AugNode::Prototype(p) => p.level,
        }
    }

    pub fn is_instance(&self) -> bool {
        matches!(self, AugNode::Instance(_))
    }

    pub fn as_prototype(&self) -> Option<&PrototypeNode> {
        match self {
            AugNode::Prototype(p) => Some(p),
            AugNode::Instance(_) => None,
        }
    }

    /// Stable display name: the instance id, or `level/name:value`.
    pub fn display_id(&self) -> String {
        match self {
            AugNode::Instance(i) => i.id.clone(),
            AugNode::Prototype(p) => format!("{}/{}", p.level, p.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeRole {
    Hierarchy,
    Prototype,
    Chain,
}

/// STG plus prototype nodes, prototype edges and intra-level chains.
///
/// Node order is part of the representation (it seeds the identity
/// alignment) but carries no meaning of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    levels: Vec<LevelKind>,
    nodes: Vec<AugNode>,
    edges: BTreeSet<(usize, usize)>,
}

impl AugmentedGraph {
    pub fn new(
        levels: Vec<LevelKind>,
        nodes: Vec<AugNode>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if levels.is_empty() || levels.windows(2).any(|w| w[0].rank() >= w[1].rank()) {
            return Err(Error::MalformedGraph(format!("bad level list {levels:?}")));
        }
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if let AugNode::Instance(i) = n {
                if !levels.contains(&i.level) {
                    return Err(Error::MalformedGraph(format!(
                        "instance {} on level {} not in graph levels",
                        i.id, i.level
                    )));
                }
                if !ids.insert(i.id.clone()) {
                    return Err(Error::MalformedGraph(format!("duplicate instance id {}", i.id)));
                }
            }
        }
        let edges: BTreeSet<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(a, b)) = edges.iter().find(|(a, b)| *a >= nodes.len() || *b >= nodes.len()) {
            return Err(Error::MalformedGraph(format!("edge ({a}, {b}) out of range")));
        }
        Ok(AugmentedGraph {
            levels,
            nodes,
            edges,
        })
    }

    pub fn levels(&self) -> &[LevelKind] {
        &self.levels
    }

    pub fn nodes(&self) -> &[AugNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &AugNode {
        &self.nodes[i]
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a, b))
    }

    /// Set or clear one directed edge; returns whether anything changed.
    pub fn set_edge(&mut self, a: usize, b: usize, present: bool) -> bool {
        assert!(a < self.nodes.len() && b < self.nodes.len());
        if present {
            self.edges.insert((a, b))
        } else {
            self.edges.remove(&(a, b))
        }
    }

    pub fn flip_edge(&mut self, a: usize, b: usize) {
        let present = self.has_edge(a, b);
        self.set_edge(a, b, !present);
    }

    /// Append a node and return its index.
    pub fn push_node(&mut self, node: AugNode) -> Result<usize> {
        match &node {
            AugNode::Instance(i) => {
                if !self.levels.contains(&i.level) {
                    return Err(Error::MalformedGraph(format!("level {} not in graph", i.level)));
                }
                if self.nodes.iter().any(|n| matches!(n, AugNode::Instance(o) if o.id == i.id)) {
                    return Err(Error::MalformedGraph(format!("duplicate instance id {}", i.id)));
                }
            }
            AugNode::Prototype(_) => {}
        }
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    /// Position of a level kind in this graph's level list.
    pub fn level_position(&self, kind: LevelKind) -> Option<usize> {
        self.levels.iter().position(|l| *l == kind)
    }

    /// Instance node indices of a level, in node order.
    pub fn instances_of(&self, kind: LevelKind) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(&self.nodes[i], AugNode::Instance(n) if n.level == kind))
            .collect()
    }

    /// Prototype node indices grouped by (level, feature name), node order
    /// within each group.
    pub fn prototype_groups(&self) -> BTreeMap<(LevelKind, String), Vec<usize>> {
        let mut out: BTreeMap<(LevelKind, String), Vec<usize>> = BTreeMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if let AugNode::Prototype(p) = n {
                out.entry((p.level, p.feature_name.clone())).or_default().push(i);
            }
        }
        out
    }

    /// Role of an edge, or `None` when the edge breaks a global rule.
    pub fn edge_role(&self, a: usize, b: usize) -> Option<EdgeRole> {
        if a == b {
            return None;
        }
        match (&self.nodes[a], &self.nodes[b]) {
            (AugNode::Prototype(p), AugNode::Instance(i)) => {
                (p.level == i.level && i.level.has_feature(&p.feature_name))
                    .then_some(EdgeRole::Prototype)
            }
            (AugNode::Instance(x), AugNode::Instance(y)) => {
                let px = self.level_position(x.level)?;
                let py = self.level_position(y.level)?;
                if px == py {
                    Some(EdgeRole::Chain)
                } else if py == px + 1 {
                    Some(EdgeRole::Hierarchy)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// Chain of a level as node indices, head first, if the level's chain
    /// edges form a single path through all of its instances.
    pub fn chain(&self, kind: LevelKind) -> Option<Vec<usize>> {
        let members = self.instances_of(kind);
        chain_from_edges(&members, |a, b| self.has_edge(a, b))
    }

    /// Prototype parents of an instance node.
    pub fn prototype_parents(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(p, c)| c == i && matches!(self.edge_role(p, c), Some(EdgeRole::Prototype)))
            .map(|&(p, _)| p)
            .collect()
    }

    /// Hierarchy parents of an instance node.
    pub fn hierarchy_parents(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(p, c)| c == i && matches!(self.edge_role(p, c), Some(EdgeRole::Hierarchy)))
            .map(|&(p, _)| p)
            .collect()
    }

    pub fn instance_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_instance()).count()
    }

    pub fn prototype_count(&self) -> usize {
        self.nodes.len() - self.instance_count()
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph stg {\n  rankdir=TB;\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let (label, shape) = match n {
                AugNode::Instance(x) => (format!("{} ({})", x.id, x.level.tag()), "ellipse"),
                AugNode::Prototype(p) => (p.label(), "box"),
            };
            s.push_str(&format!("  n{i} [label=\"{label}\", shape={shape}];\n"));
        }
        for &(a, b) in &self.edges {
            let color = match self.edge_role(a, b) {
                Some(EdgeRole::Hierarchy) => "black",
                Some(EdgeRole::Prototype) => "red",
                Some(EdgeRole::Chain) => "green",
                None => "gray",
            };
            s.push_str(&format!("  n{a} -> n{b} [color={color}];\n"));
        }
        s.push_str("}\n");
        s
    }
}

/// Order `members` along a path given by `edge`, or `None` if the induced
/// edges are not exactly one Hamiltonian path.
pub(crate) fn chain_from_edges(members: &[usize], edge: impl Fn(usize, usize) -> bool) -> Option<Vec<usize>> {
    if members.is_empty() {
        return None;
    }
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut indeg: HashMap<usize, usize> = HashMap::new();
    let mut count = 0;
    for &a in members {
        for &b in members {
            if a != b && edge(a, b) {
                count += 1;
                if next.insert(a, b).is_some() {
                    return None;
                }
                *indeg.entry(b).or_default() += 1;
                if indeg[&b] > 1 {
                    return None;
                }
            }
            if a == b && edge(a, b) {
                return None;
            }
        }
    }
    if count != members.len() - 1 {
        return None;
    }
    let heads: Vec<usize> = members.iter().copied().filter(|m| !indeg.contains_key(m)).collect();
    if heads.len() != 1 {
        return None;
    }
    let mut order = vec![heads[0]];
    while let Some(&n) = next.get(order.last().unwrap()) {
        order.push(n);
        if order.len() > members.len() {
            return None;
        }
    }
    (order.len() == members.len()).then_some(order)
}

/// Make structure explicit: one prototype per distinct (level, feature)
/// pair, prototype→instance edges, and chain edges in chain-index order.
pub fn augment(g: &StructuralTemporalGraph) -> Result<AugmentedGraph> {
    let report = validate_stg(g);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let mut nodes = Vec::new();
    let mut id_index = HashMap::new();
    for level in g.levels() {
        for n in &level.nodes {
            id_index.insert(n.id.clone(), nodes.len());
            nodes.push(AugNode::Instance(AugInstance {
                id: n.id.clone(),
                level: n.level,
                interval: n.interval,
            }));
        }
    }
    let protos: BTreeSet<(usize, PrototypeNode)> = g
        .nodes()
        .flat_map(|n| {
            n.features
                .iter()
                .map(move |(k, v)| (n.level.rank(), PrototypeNode::new(n.level, k, v)))
        })
        .collect();
    let mut proto_index = HashMap::new();
    for (_, p) in protos {
        proto_index.insert(p.clone(), nodes.len());
        nodes.push(AugNode::Prototype(p));
    }
    let mut edges = Vec::new();
    for (a, b) in g.edges() {
        edges.push((id_index[a], id_index[b]));
    }
    for level in g.levels() {
        for w in level.nodes.windows(2) {
            edges.push((id_index[&w[0].id], id_index[&w[1].id]));
        }
        for n in &level.nodes {
            for (k, v) in n.features.iter() {
                edges.push((proto_index[&PrototypeNode::new(n.level, k, v)], id_index[&n.id]));
            }
        }
    }
    AugmentedGraph::new(g.level_kinds(), nodes, edges)
}

/// Fold prototypes and chains back into node labels and ordering.
///
/// Intervals survive only if the augmented nodes still carry them.
pub fn compress(a: &AugmentedGraph) -> Result<StructuralTemporalGraph> {
    let report = validate_augmented(a);
    if !report.is_empty() {
        return Err(Error::Invalid(report));
    }
    let mut levels = Vec::new();
    for &kind in a.levels() {
        let chain = a.chain(kind).ok_or_else(|| {
            Error::MalformedGraph(format!("level {kind} has no chain"))
        })?;
        let nodes = chain
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let AugNode::Instance(inst) = a.node(i) else {
                    unreachable!("chains contain instances only")
                };
                let mut features = FeatureSet::new();
                for p in a.prototype_parents(i) {
                    let proto = a.node(p).as_prototype().expect("prototype parent");
                    features = features.with(&proto.feature_name, &proto.feature_value);
                }
                InstanceNode {
                    id: inst.id.clone(),
                    level: kind,
                    chain_index: pos,
                    interval: inst.interval,
                    features,
                }
            })
            .collect();
        levels.push(Level { kind, nodes });
    }
    let id = |i: usize| match a.node(i) {
        AugNode::Instance(n) => n.id.clone(),
        AugNode::Prototype(_) => unreachable!(),
    };
    let edges: Vec<(String, String)> = a
        .edges()
        .iter()
        .filter(|&&(x, y)| a.edge_role(x, y) == Some(EdgeRole::Hierarchy))
        .map(|&(x, y)| (id(x), id(y)))
        .collect();
    StructuralTemporalGraph::new(levels, edges)
}
