use std::collections::HashSet;

use stg_core::augment::{AugmentedGraph, EdgeRole};
use stg_core::mine::{common_subgraphs, containment_rate, graph_patterns, node_label, LabeledSubgraph};
use stg_core::synth::random_valid_edits_with;
use stg_core::{augment, fixtures};

type Pattern = (Vec<String>, Vec<(usize, usize)>);

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

fn connected(k: usize, edges: &[(usize, usize)]) -> bool {
    let mut comp: Vec<usize> = (0..k).collect();
    fn find(c: &mut [usize], x: usize) -> usize {
        if c[x] != x {
            let r = find(c, c[x]);
            c[x] = r;
        }
        c[x]
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut comp, a), find(&mut comp, b));
        comp[ra] = rb;
    }
    let r = find(&mut comp, 0);
    (0..k).all(|x| find(&mut comp, x) == r)
}

/// Every connected k-node edge-subgraph of `g`, as raw (labels, edges).
fn oracle_patterns(g: &AugmentedGraph, k: usize) -> Vec<Pattern> {
    let mut out = Vec::new();
    for set in combinations(g.node_count(), k) {
        let labels: Vec<String> = set.iter().map(|&v| node_label(g.node(v))).collect();
        let edges: Vec<(usize, usize)> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .filter(|&(a, b)| g.has_edge(set[a], set[b]))
            .collect();
        for mask in 1u32..(1 << edges.len()) {
            let sub: Vec<(usize, usize)> = (0..edges.len()).filter(|e| mask >> e & 1 == 1).map(|e| edges[e]).collect();
            if connected(k, &sub) {
                out.push((labels.clone(), sub));
            }
        }
    }
    out
}

/// Injective label-preserving map of `p` into `g` covering all pattern edges.
fn embeds(p: &Pattern, g: &AugmentedGraph) -> bool {
    let k = p.0.len();
    fn rec(p: &Pattern, g: &AugmentedGraph, map: &mut Vec<usize>, k: usize) -> bool {
        if map.len() == k {
            return true;
        }
        let i = map.len();
        for v in 0..g.node_count() {
            if map.contains(&v) || node_label(g.node(v)) != p.0[i] {
                continue;
            }
            map.push(v);
            let ok = p.1.iter().all(|&(a, b)| a.max(b) > i || g.has_edge(map[a], map[b]));
            if ok && rec(p, g, map, k) {
                return true;
            }
            map.pop();
        }
        false
    }
    rec(p, g, &mut Vec::new(), k)
}

fn isomorphic(p: &Pattern, q: &Pattern) -> bool {
    let k = p.0.len();
    if k != q.0.len() || p.1.len() != q.1.len() {
        return false;
    }
    let qe: HashSet<(usize, usize)> = q.1.iter().copied().collect();
    combinations_perm(k).into_iter().any(|m| {
        (0..k).all(|i| p.0[i] == q.0[m[i]]) && p.1.iter().all(|&(a, b)| qe.contains(&(m[a], m[b])))
    })
}

fn combinations_perm(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in combinations_perm(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn to_pattern(s: &LabeledSubgraph) -> Pattern {
    (s.labels.clone(), s.edges.iter().map(|&(a, b, _)| (a, b)).collect())
}

/// Isomorphism classes of the patterns of `corpus[0]` embedding in every member.
fn oracle_common(corpus: &[AugmentedGraph], k: usize) -> Vec<Pattern> {
    let mut classes: Vec<Pattern> = Vec::new();
    for p in oracle_patterns(&corpus[0], k) {
        if corpus[1..].iter().all(|g| embeds(&p, g)) && !classes.iter().any(|c| isomorphic(c, &p)) {
            classes.push(p);
        }
    }
    classes
}

fn small_corpus() -> Vec<AugmentedGraph> {
    let g = augment(&fixtures::toy()).unwrap();
    let mut corpus = vec![g.clone()];
    for seed in 0..2 {
        let s = random_valid_edits_with(&g, 3, seed, None).unwrap();
        corpus.push(s.apply(&g).unwrap());
    }
    corpus
}

#[test]
fn common_subgraphs_match_brute_force() {
    let corpus = small_corpus();
    assert!(corpus.iter().all(|g| g.node_count() <= 14));
    for k in 2..=5 {
        let mined = common_subgraphs(&corpus, k).unwrap();
        let oracle = oracle_common(&corpus, k);
        assert_eq!(mined.len(), oracle.len(), "k = {k}");
        for m in &mined {
            let p = to_pattern(m);
            assert!(oracle.iter().any(|o| isomorphic(o, &p)), "k = {k}: extra {m:?}");
            assert!(corpus.iter().all(|g| embeds(&p, g)));
        }
    }
}

#[test]
fn singleton_corpus_yields_its_own_patterns() {
    let g = augment(&fixtures::toy()).unwrap();
    let mined = common_subgraphs(std::slice::from_ref(&g), 5).unwrap();
    assert_eq!(mined.len(), oracle_common(std::slice::from_ref(&g), 5).len());
}

#[test]
fn disjoint_labels_share_nothing() {
    let toy = augment(&fixtures::toy()).unwrap();
    let melody = fixtures::random_stg(
        3,
        &fixtures::RandomRecordConfig {
            levels: vec![stg_core::LevelKind::Melody],
            beats: 8,
            spans: vec![6],
        },
    );
    let common = common_subgraphs(&[toy.clone(), augment(&melody).unwrap()], 3).unwrap();
    assert!(common.is_empty());
    assert!(containment_rate(&common, &toy).unwrap().vacuous);
}

#[test]
fn canonical_forms_agree_with_isomorphism() {
    let g = augment(&fixtures::toy()).unwrap();
    let raw = oracle_patterns(&g, 4);
    let sample: Vec<&Pattern> = raw.iter().step_by((raw.len() / 60).max(1)).collect();
    let canon = |p: &Pattern| {
        let edges: Vec<(usize, usize, EdgeRole)> = p.1.iter().map(|&(a, b)| (a, b, EdgeRole::Hierarchy)).collect();
        LabeledSubgraph::canonical(&p.0, &edges)
    };
    for a in &sample {
        for b in &sample {
            assert_eq!(canon(a) == canon(b), isomorphic(a, b));
        }
    }
}

#[test]
fn member_centroid_is_fully_contained() {
    let corpus = small_corpus();
    let common = common_subgraphs(&corpus, 5).unwrap();
    for member in &corpus {
        let c = containment_rate(&common, member).unwrap();
        assert_eq!(c.percent, 100.0);
    }
    assert!(graph_patterns(&corpus[1], 5, usize::MAX).unwrap().len() >= common.len());
}
