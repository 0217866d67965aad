//! Exact mining of small connected labelled subgraphs shared by a corpus.
//!
//! A pattern is a connected graph on `k` nodes with node labels (level name
//! for instances, `level/feature:value` for prototypes) and directed,
//! role-tagged edges. It occurs in a host when some injective,
//! label-preserving map sends each pattern edge to a host edge of the same
//! direction; extra host edges among the mapped nodes are allowed.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::augment::{AugNode, AugmentedGraph, EdgeRole};
use crate::error::{Error, Result};
use crate::par;

/// Largest supported pattern size.
pub const MAX_SIZE: usize = 5;
/// Default cap on distinct patterns per graph.
pub const DEFAULT_CAP: usize = 200_000;

/// A pattern in canonical form: the lexicographically least
/// `(labels, edges)` over all node orderings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledSubgraph {
    pub labels: Vec<String>,
    pub edges: Vec<(usize, usize, EdgeRole)>,
}

impl LabeledSubgraph {
    /// Canonicalize an arbitrary labelled graph.
    pub fn canonical(labels: &[String], edges: &[(usize, usize, EdgeRole)]) -> Self {
        let n = labels.len();
        let mut best: Option<LabeledSubgraph> = None;
        for_each_permutation(n, |order| {
            // order[new] = old
            let mut pos = vec![0; n];
            for (new, &old) in order.iter().enumerate() {
                pos[old] = new;
            }
            let cand_labels: Vec<String> = order.iter().map(|&o| labels[o].clone()).collect();
            if let Some(b) = &best {
                if cand_labels > b.labels {
                    return;
                }
            }
            let mut cand_edges: Vec<(usize, usize, EdgeRole)> =
                edges.iter().map(|&(a, b, r)| (pos[a], pos[b], r)).collect();
            cand_edges.sort();
            let cand = LabeledSubgraph {
                labels: cand_labels,
                edges: cand_edges,
            };
            if best.as_ref().is_none_or(|b| cand < *b) {
                best = Some(cand);
            }
        });
        best.unwrap_or(LabeledSubgraph {
            labels: Vec::new(),
            edges: Vec::new(),
        })
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph pattern {\n");
        for (i, l) in self.labels.iter().enumerate() {
            out.push_str(&format!("  n{i} [label=\"{}\"];\n", l.replace('"', "\\\"")));
        }
        for (a, b, r) in &self.edges {
            let style = match r {
                EdgeRole::Hierarchy => "solid",
                EdgeRole::Prototype => "dashed",
                EdgeRole::Chain => "bold",
            };
            out.push_str(&format!("  n{a} -> n{b} [style={style}];\n"));
        }
        out.push_str("}\n");
        out
    }
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], f: &mut dyn FnMut(&[usize])) {
        if cur.len() == used.len() {
            f(cur);
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, f);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut f);
}

/// Mining label of an augmented node.
pub fn node_label(node: &AugNode) -> String {
    match node {
        AugNode::Instance(i) => i.level.name().to_string(),
        AugNode::Prototype(p) => format!("{}/{}", p.level.name(), p.label()),
    }
}

fn undirected_neighbors(g: &AugmentedGraph) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); g.node_count()];
    for &(a, b) in g.edges() {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    adj
}

/// Every node set of size `k` inducing a connected subgraph, each once
/// (enumeration by exclusive extension).
fn connected_sets(adj: &[BTreeSet<usize>], k: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn extend(
        adj: &[BTreeSet<usize>],
        k: usize,
        root: usize,
        set: &mut Vec<usize>,
        frontier: BTreeSet<usize>,
        f: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if set.len() == k {
            return f(set);
        }
        let mut frontier = frontier;
        while let Some(&w) = frontier.iter().next() {
            frontier.remove(&w);
            // Exclusive neighbours of w: not in the set and not adjacent to it.
            let mut next = frontier.clone();
            for &u in &adj[w] {
                if u > root && !set.contains(&u) && !set.iter().any(|&s| adj[s].contains(&u)) {
                    next.insert(u);
                }
            }
            set.push(w);
            extend(adj, k, root, set, next, f)?;
            set.pop();
        }
        Ok(())
    }
    for root in 0..adj.len() {
        let frontier: BTreeSet<usize> = adj[root].iter().copied().filter(|&u| u > root).collect();
        extend(adj, k, root, &mut vec![root], frontier, &mut f)?;
    }
    Ok(())
}

fn is_connected(n: usize, edges: &[(usize, usize, EdgeRole)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b, _) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == v && !seen[y] {
                    seen[y] = true;
                    stack.push(y);
                }
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// All canonical connected `k`-node patterns occurring in `g`.
pub fn graph_patterns(g: &AugmentedGraph, k: usize, cap: usize) -> Result<HashSet<LabeledSubgraph>> {
    if !(2..=MAX_SIZE).contains(&k) {
        return Err(Error::SubgraphSize(k));
    }
    let labels: Vec<String> = g.nodes().iter().map(node_label).collect();
    let adj = undirected_neighbors(g);
    let mut out = HashSet::new();
    let mut memo: HashSet<(Vec<String>, Vec<(usize, usize, EdgeRole)>)> = HashSet::new();
    connected_sets(&adj, k, |set| {
        let local: Vec<String> = set.iter().map(|&v| labels[v].clone()).collect();
        let edges: Vec<(usize, usize, EdgeRole)> = set
            .iter()
            .enumerate()
            .flat_map(|(a, &u)| set.iter().enumerate().map(move |(b, &v)| (a, u, b, v)))
            .filter(|&(_, u, _, v)| g.has_edge(u, v))
            .map(|(a, u, b, v)| (a, b, g.edge_role(u, v).unwrap_or(EdgeRole::Hierarchy)))
            .collect();
        // Spanning connected edge subsets give the non-induced patterns.
        for mask in 1u32..(1 << edges.len()) {
            let sub: Vec<(usize, usize, EdgeRole)> =
                (0..edges.len()).filter(|&e| mask >> e & 1 == 1).map(|e| edges[e]).collect();
            if sub.len() + 1 < k || !is_connected(k, &sub) {
                continue;
            }
            if !memo.insert((local.clone(), sub.clone())) {
                continue;
            }
            out.insert(LabeledSubgraph::canonical(&local, &sub));
            if out.len() > cap {
                return Err(Error::SubgraphOverflow(cap));
            }
        }
        Ok(())
    })?;
    Ok(out)
}

/// Patterns of size `k` occurring in every graph, sorted.
pub fn common_subgraphs(corpus: &[AugmentedGraph], k: usize) -> Result<Vec<LabeledSubgraph>> {
    common_subgraphs_capped(corpus, k, DEFAULT_CAP)
}

pub fn common_subgraphs_capped(corpus: &[AugmentedGraph], k: usize, cap: usize) -> Result<Vec<LabeledSubgraph>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by_key(|&i| (corpus[i].node_count(), corpus[i].edge_count(), i));
    let sets = par::map_slice(&order, |&i| graph_patterns(&corpus[i], k, cap))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (first, rest) = sets.split_first().expect("non-empty corpus");
    let mut common: Vec<LabeledSubgraph> = first.iter().filter(|p| rest.iter().all(|s| s.contains(*p))).cloned().collect();
    common.sort();
    Ok(common)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub total: usize,
    pub contained: usize,
    /// Percentage in `[0, 100]`.
    pub percent: f64,
    /// No common patterns; the rate is 100% by convention.
    pub vacuous: bool,
}

/// Share of `common` occurring in `centroid`.
pub fn containment_rate(common: &[LabeledSubgraph], centroid: &AugmentedGraph) -> Result<Containment> {
    if common.is_empty() {
        log::warn!("no common subgraphs; containment is vacuously 100%");
        return Ok(Containment {
            total: 0,
            contained: 0,
            percent: 100.0,
            vacuous: true,
        });
    }
    let sizes: BTreeSet<usize> = common.iter().map(|p| p.size()).collect();
    let mut host = HashSet::new();
    for k in sizes {
        host.extend(graph_patterns(centroid, k, usize::MAX)?);
    }
    let contained = common.iter().filter(|p| host.contains(*p)).count();
    Ok(Containment {
        total: common.len(),
        contained,
        percent: 100.0 * contained as f64 / common.len() as f64,
        vacuous: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::augment;
    use crate::fixtures;

    fn role() -> EdgeRole {
        EdgeRole::Hierarchy
    }

    #[test]
    fn canonical_form_ignores_node_order() {
        let a = LabeledSubgraph::canonical(
            &["x".into(), "y".into(), "x".into()],
            &[(0, 1, role()), (2, 1, role())],
        );
        let b = LabeledSubgraph::canonical(
            &["y".into(), "x".into(), "x".into()],
            &[(1, 0, role()), (2, 0, role())],
        );
        let c = LabeledSubgraph::canonical(
            &["y".into(), "x".into(), "x".into()],
            &[(0, 1, role()), (2, 0, role())],
        );
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn size_out_of_range() {
        let g = augment(&fixtures::toy()).unwrap();
        assert!(matches!(graph_patterns(&g, 6, 10), Err(Error::SubgraphSize(6))));
        assert!(matches!(graph_patterns(&g, 1, 10), Err(Error::SubgraphSize(1))));
        assert!(matches!(common_subgraphs(&[], 3), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn overflow_is_an_error() {
        let g = augment(&fixtures::toy()).unwrap();
        assert!(matches!(graph_patterns(&g, 4, 2), Err(Error::SubgraphOverflow(2))));
    }

    #[test]
    fn member_centroid_contains_everything() {
        let g = augment(&fixtures::toy()).unwrap();
        let common = common_subgraphs(&[g.clone(), g.clone()], 4).unwrap();
        assert!(!common.is_empty());
        let c = containment_rate(&common, &g).unwrap();
        assert_eq!(c.percent, 100.0);
        assert!(!c.vacuous);
        let v = containment_rate(&[], &g).unwrap();
        assert!(v.vacuous && v.percent == 100.0);
    }
}
