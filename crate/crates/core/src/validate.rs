//! Structural validity rules for compressed and augmented STGs.
//!
//! Global rules (G1–G5) restrict which cells of the adjacency matrix may ever
//! hold an edge. Instance rules (I1–I5) describe the hierarchy and chains.
//! Prototype rules (P1–P2) describe prototype wiring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::augment::{chain_from_edges, AugNode, AugmentedGraph};
use crate::model::{is_legal_feature, LevelKind, StructuralTemporalGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// No self-loops.
    G1,
    /// No instance→prototype or prototype→prototype edges.
    G2,
    /// Prototype edges only into instances whose level carries that feature.
    G3,
    /// No edges from a lower level up to a higher one.
    G4,
    /// No edges between non-adjacent levels.
    G5,
    /// Every non-top instance has one or two parents in the level above.
    I1,
    /// Each level forms one linear chain.
    I2,
    /// Chain ends are children of the previous level's chain ends.
    I3,
    /// Non-overlapping levels: first parent of node i is not before the last
    /// parent of node i-1.
    I4,
    /// First parent of node i is not before the first parent of node i-1.
    I5,
    /// Exactly one prototype parent per feature slot.
    P1,
    /// Segmentation, key and chord neighbours differ in prototype parents.
    P2,
}

impl Rule {
    pub const ALL: [Rule; 12] = [
        Rule::G1,
        Rule::G2,
        Rule::G3,
        Rule::G4,
        Rule::G5,
        Rule::I1,
        Rule::I2,
        Rule::I3,
        Rule::I4,
        Rule::I5,
        Rule::P1,
        Rule::P2,
    ];

    pub fn is_global(self) -> bool {
        matches!(self, Rule::G1 | Rule::G2 | Rule::G3 | Rule::G4 | Rule::G5)
    }

    pub fn is_instance(self) -> bool {
        matches!(self, Rule::I1 | Rule::I2 | Rule::I3 | Rule::I4 | Rule::I5)
    }

    pub fn is_prototype(self) -> bool {
        matches!(self, Rule::P1 | Rule::P2)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub nodes: Vec<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn rules(&self) -> BTreeSet<Rule> {
        self.violations.iter().map(|v| v.rule).collect()
    }

    /// Keep only violations of rules matching `keep`.
    pub fn filtered(&self, keep: impl Fn(Rule) -> bool) -> ValidationReport {
        ValidationReport {
            violations: self.violations.iter().filter(|v| keep(v.rule)).cloned().collect(),
        }
    }

    fn push(&mut self, rule: Rule, nodes: Vec<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            rule,
            nodes,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{} {} [{}]", v.rule, v.message, v.nodes.join(", "))?;
        }
        Ok(())
    }
}

/// Level-indexed view of the instance hierarchy shared by both graph forms.
struct Hierarchy {
    levels: Vec<LevelKind>,
    names: Vec<String>,
    /// Members of each level (any order).
    members: Vec<Vec<usize>>,
    /// Chain of each level when it is a valid linear chain.
    chains: Vec<Option<Vec<usize>>>,
    /// Parents of each node from the level directly above.
    parents: HashMap<usize, Vec<usize>>,
}

impl Hierarchy {
    fn check(&self, report: &mut ValidationReport) {
        let name = |i: usize| self.names[i].clone();
        for li in 1..self.levels.len() {
            for &n in &self.members[li] {
                let count = self.parents.get(&n).map_or(0, Vec::len);
                if !(1..=2).contains(&count) {
                    report.push(Rule::I1, vec![name(n)], format!("{count} parents"));
                }
            }
            let (Some(upper), Some(lower)) = (&self.chains[li - 1], &self.chains[li]) else {
                continue;
            };
            let pos: HashMap<usize, usize> = upper.iter().enumerate().map(|(p, &n)| (n, p)).collect();
            let parents_of = |n: usize| -> Vec<usize> {
                let mut ps: Vec<usize> = self
                    .parents
                    .get(&n)
                    .map(|v| v.iter().filter_map(|p| pos.get(p).copied()).collect())
                    .unwrap_or_default();
                ps.sort_unstable();
                ps
            };
            let (head, tail) = (lower[0], *lower.last().unwrap());
            if !parents_of(head).contains(&0) {
                report.push(
                    Rule::I3,
                    vec![name(head), name(upper[0])],
                    "chain start lacks the upper chain start as parent",
                );
            }
            if !parents_of(tail).contains(&(upper.len() - 1)) {
                report.push(
                    Rule::I3,
                    vec![name(tail), name(*upper.last().unwrap())],
                    "chain end lacks the upper chain end as parent",
                );
            }
            for w in lower.windows(2) {
                let (prev, cur) = (parents_of(w[0]), parents_of(w[1]));
                let (Some(&pf), Some(&pl), Some(&cf)) = (prev.first(), prev.last(), cur.first())
                else {
                    continue;
                };
                if !self.levels[li].allows_overlap() && cf < pl {
                    report.push(
                        Rule::I4,
                        vec![name(w[0]), name(w[1])],
                        format!("first parent #{cf} precedes previous last parent #{pl}"),
                    );
                }
                if cf < pf {
                    report.push(
                        Rule::I5,
                        vec![name(w[0]), name(w[1])],
                        format!("first parent #{cf} precedes previous first parent #{pf}"),
                    );
                }
            }
        }
    }
}

/// Check a compressed STG. Chains are implicit in `chain_index` order and
/// prototype rules are checked against each node's feature set.
pub fn validate_stg(g: &StructuralTemporalGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let levels = g.level_kinds();
    let mut names = Vec::new();
    let mut flat: HashMap<&str, usize> = HashMap::new();
    let mut level_of = Vec::new();
    let mut members = vec![Vec::new(); levels.len()];
    for (li, level) in g.levels().iter().enumerate() {
        for n in &level.nodes {
            flat.insert(n.id.as_str(), names.len());
            members[li].push(names.len());
            level_of.push(li);
            names.push(n.id.clone());
        }
    }
    let mut parents: HashMap<usize, Vec<usize>> = HashMap::new();
    for (a, b) in g.edges() {
        let (x, y) = (flat[a.as_str()], flat[b.as_str()]);
        let (lx, ly) = (level_of[x], level_of[y]);
        if x == y {
            report.push(Rule::G1, vec![a.clone()], "self-loop");
        } else if ly < lx {
            report.push(Rule::G4, vec![a.clone(), b.clone()], "edge points up the hierarchy");
        } else if ly == lx {
            report.push(
                Rule::I2,
                vec![a.clone(), b.clone()],
                "explicit intra-level edge in compressed graph",
            );
        } else if ly > lx + 1 {
            report.push(Rule::G5, vec![a.clone(), b.clone()], "edge skips a level");
        } else {
            parents.entry(y).or_default().push(x);
        }
    }
    let mut chains = Vec::new();
    for (li, level) in g.levels().iter().enumerate() {
        let mut ok = !level.nodes.is_empty();
        if level.nodes.is_empty() {
            report.push(Rule::I2, vec![], format!("level {} is empty", level.kind));
        }
        for (i, n) in level.nodes.iter().enumerate() {
            if n.chain_index != i {
                ok = false;
                report.push(
                    Rule::I2,
                    vec![n.id.clone()],
                    format!("chain_index {} at position {i}", n.chain_index),
                );
            }
        }
        for w in level.nodes.windows(2) {
            if let (Some(x), Some(y)) = (w[0].interval, w[1].interval) {
                if (y.start, y.end) < (x.start, x.end) {
                    ok = false;
                    report.push(
                        Rule::I2,
                        vec![w[0].id.clone(), w[1].id.clone()],
                        "chain not ordered by start time",
                    );
                }
            }
        }
        chains.push(ok.then(|| members[li].clone()));
        for n in &level.nodes {
            for p in n.features.problems(level.kind) {
                report.push(Rule::P1, vec![n.id.clone()], p);
            }
        }
        if level.kind.requires_distinct_neighbors() {
            for w in level.nodes.windows(2) {
                if w[0].features == w[1].features {
                    report.push(
                        Rule::P2,
                        vec![w[0].id.clone(), w[1].id.clone()],
                        "adjacent nodes share every feature",
                    );
                }
            }
        }
    }
    Hierarchy {
        levels,
        names,
        members,
        chains,
        parents,
    }
    .check(&mut report);
    report
}

/// Check an augmented graph against every rule.
pub fn validate_augmented(a: &AugmentedGraph) -> ValidationReport {
    let mut report = ValidationReport::default();
    let names: Vec<String> = a.nodes().iter().map(AugNode::display_id).collect();
    let levels = a.levels().to_vec();
    let level_pos = |k: LevelKind| levels.iter().position(|l| *l == k);

    let mut parents: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut proto_parents: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut chain_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(x, y) in a.edges() {
        let pair = || vec![names[x].clone(), names[y].clone()];
        if x == y {
            report.push(Rule::G1, vec![names[x].clone()], "self-loop");
            continue;
        }
        match (a.node(x), a.node(y)) {
            (_, AugNode::Prototype(_)) => {
                report.push(Rule::G2, pair(), "edge into a prototype");
            }
            (AugNode::Prototype(p), AugNode::Instance(i)) => {
                if p.level != i.level || !i.level.has_feature(&p.feature_name) {
                    report.push(Rule::G3, pair(), "prototype feature not carried by instance level");
                } else {
                    proto_parents.entry(y).or_default().push(x);
                }
            }
            (AugNode::Instance(u), AugNode::Instance(v)) => {
                let (pu, pv) = (level_pos(u.level).unwrap(), level_pos(v.level).unwrap());
                if pv < pu {
                    report.push(Rule::G4, pair(), "edge points up the hierarchy");
                } else if pv > pu + 1 {
                    report.push(Rule::G5, pair(), "edge skips a level");
                } else if pv == pu {
                    chain_edges.insert((x, y));
                } else {
                    parents.entry(y).or_default().push(x);
                }
            }
        }
    }

    let mut members = Vec::new();
    let mut chains = Vec::new();
    for &kind in &levels {
        let m = a.instances_of(kind);
        let chain = chain_from_edges(&m, |x, y| chain_edges.contains(&(x, y)));
        if chain.is_none() {
            let msg = if m.is_empty() {
                format!("level {kind} is empty")
            } else {
                format!("level {kind} chain edges do not form one linear chain")
            };
            report.push(Rule::I2, m.iter().map(|&i| names[i].clone()).collect(), msg);
        }
        members.push(m);
        chains.push(chain);
    }

    let mut seen: BTreeMap<(LevelKind, &str, &str), usize> = BTreeMap::new();
    for (i, n) in a.nodes().iter().enumerate() {
        if let AugNode::Prototype(p) = n {
            if !is_legal_feature(p.level, &p.feature_name, &p.feature_value) {
                report.push(Rule::P1, vec![names[i].clone()], "illegal prototype label");
            }
            if let Some(j) = seen.insert((p.level, &p.feature_name, &p.feature_value), i) {
                report.push(
                    Rule::P1,
                    vec![names[j].clone(), names[i].clone()],
                    "duplicate prototype",
                );
            }
        }
    }
    for (li, &kind) in levels.iter().enumerate() {
        for &i in &members[li] {
            let ps = proto_parents.get(&i).cloned().unwrap_or_default();
            for slot in kind.slots() {
                let filled = ps
                    .iter()
                    .filter(|&&p| {
                        a.node(p)
                            .as_prototype()
                            .is_some_and(|p| slot.contains(&p.feature_name.as_str()))
                    })
                    .count();
                if filled != 1 {
                    report.push(
                        Rule::P1,
                        vec![names[i].clone()],
                        format!("slot {} has {filled} prototype parents", slot.join("|")),
                    );
                }
            }
        }
        if kind.requires_distinct_neighbors() {
            if let Some(chain) = &chains[li] {
                for w in chain.windows(2) {
                    let set = |n: usize| -> BTreeSet<usize> {
                        proto_parents.get(&n).into_iter().flatten().copied().collect()
                    };
                    if set(w[0]) == set(w[1]) {
                        report.push(
                            Rule::P2,
                            vec![names[w[0]].clone(), names[w[1]].clone()],
                            "adjacent nodes share every prototype parent",
                        );
                    }
                }
            }
        }
    }

    Hierarchy {
        levels,
        names,
        members,
        chains,
        parents,
    }
    .check(&mut report);
    report
}
