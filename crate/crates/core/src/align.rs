//! Structural distance by partition-respecting permutation search.
//!
//! An alignment is a row permutation `perm` of the second matrix:
//! `aligned[a][b] = m2[perm[a]][perm[b]]`, with `perm[a]` always in the same
//! partition as `a`. Its energy is the Frobenius distance between `m1` and
//! the aligned matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentedGraph};
use crate::error::{Error, Result};
use crate::matrix::{to_padded_pair, PaddedMatrix, PartitionMap};
use crate::model::StructuralTemporalGraph;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub steps: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            steps: 2000,
            t_max: 2.0,
            t_min: 0.01,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub fn new(steps: usize, t_max: f64, t_min: f64, seed: u64) -> Result<Self> {
        let s = AnnealSchedule {
            steps,
            t_max,
            t_min,
            seed,
        };
        s.check()?;
        Ok(s)
    }

    pub fn with_seed(self, seed: u64) -> Self {
        AnnealSchedule { seed, ..self }
    }

    pub fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Schedule("steps must be at least 1".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::Schedule(format!(
                "need 0 < t_min < t_max, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    /// Geometric decay from `t_max` at step 0 to `t_min` at the last step.
    pub fn temperature(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.t_max;
        }
        let frac = step as f64 / (self.steps - 1) as f64;
        self.t_max * (self.t_min / self.t_max).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub perm: Vec<usize>,
    /// Number of differing cells after alignment.
    pub mismatches: usize,
    pub energy: f64,
}

impl Alignment {
    fn new(perm: Vec<usize>, mismatches: usize) -> Self {
        Alignment {
            perm,
            mismatches,
            energy: (mismatches as f64).sqrt(),
        }
    }

    pub fn identity(m1: &PaddedMatrix, m2: &PaddedMatrix) -> Self {
        let perm: Vec<usize> = (0..m1.dim()).collect();
        let c = mismatches(m1, m2, &perm);
        Alignment::new(perm, c)
    }
}

fn check_pair(m1: &PaddedMatrix, m2: &PaddedMatrix) -> Result<()> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch(m1.dim(), m2.dim()));
    }
    if !m1.same_layout(m2) {
        return Err(Error::PartitionMismatch);
    }
    Ok(())
}

/// Differing cells between `m1` and `m2` permuted by `perm`.
pub fn mismatches(m1: &PaddedMatrix, m2: &PaddedMatrix, perm: &[usize]) -> usize {
    let n = m1.dim();
    let mut c = 0;
    for a in 0..n {
        for b in 0..n {
            c += (m1.adj.get(a, b) != m2.adj.get(perm[a], perm[b])) as usize;
        }
    }
    c
}

/// Whether `perm` is a permutation that keeps every row in its partition.
pub fn respects_partitions(map: &PartitionMap, perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.len() == map.len()
        && perm.iter().enumerate().all(|(a, &p)| {
            p < seen.len() && !std::mem::replace(&mut seen[p], true) && map.part_of(a) == map.part_of(p)
        })
}

/// Mismatch contribution of every cell in rows or columns `i` and `j`.
fn cross_cost(m1: &PaddedMatrix, m2: &PaddedMatrix, perm: &[usize], i: usize, j: usize) -> usize {
    let n = m1.dim();
    let (a1, a2) = (&m1.adj, &m2.adj);
    let mut c = 0;
    for &r in &[i, j] {
        let pr = perm[r];
        for b in 0..n {
            c += (a1.get(r, b) != a2.get(pr, perm[b])) as usize;
        }
    }
    for a in 0..n {
        if a == i || a == j {
            continue;
        }
        let pa = perm[a];
        c += (a1.get(a, i) != a2.get(pa, perm[i])) as usize;
        c += (a1.get(a, j) != a2.get(pa, perm[j])) as usize;
    }
    c
}

/// Pick a swap (i, j) with both rows in the same partition (the move
/// function of the alignment annealer).
fn propose(map: &PartitionMap, movable: &[usize], rng: &mut impl Rng) -> (usize, usize) {
    let i = movable[rng.gen_range(0..movable.len())];
    let part = &map.partitions()[map.part_of(i)];
    let mut j = part.start + rng.gen_range(0..part.len - 1);
    if j >= i {
        j += 1;
    }
    assert_eq!(map.part_of(i), map.part_of(j), "swap crosses partitions");
    (i, j)
}

struct Run {
    best: Alignment,
    trace: Vec<f64>,
}

fn anneal(
    m1: &PaddedMatrix,
    m2: &PaddedMatrix,
    sched: &AnnealSchedule,
    init: Vec<usize>,
    record: bool,
) -> Run {
    let map = &m1.partitions;
    let movable: Vec<usize> = map
        .partitions()
        .iter()
        .filter(|p| p.len >= 2)
        .flat_map(|p| p.rows())
        .collect();
    let mut perm = init;
    let mut cost = mismatches(m1, m2, &perm);
    let mut best = Alignment::new(perm.clone(), cost);
    let mut trace = Vec::with_capacity(if record { sched.steps } else { 0 });
    if movable.is_empty() || cost == 0 {
        if record {
            trace.resize(sched.steps, best.energy);
        }
        return Run { best, trace };
    }
    let mut rng = seed::rng(sched.seed);
    for step in 0..sched.steps {
        let t = sched.temperature(step);
        let (i, j) = propose(map, &movable, &mut rng);
        let before = cross_cost(m1, m2, &perm, i, j);
        perm.swap(i, j);
        let after = cross_cost(m1, m2, &perm, i, j);
        let next = cost + after - before;
        let delta = (next as f64).sqrt() - (cost as f64).sqrt();
        if delta <= 0.0 || rng.gen::<f64>() < (-delta / t).exp() {
            cost = next;
            if cost < best.mismatches {
                best = Alignment::new(perm.clone(), cost);
            }
        } else {
            perm.swap(i, j);
        }
        if record {
            trace.push(best.energy);
        }
        if best.mismatches == 0 {
            if record {
                trace.resize(sched.steps, 0.0);
            }
            break;
        }
    }
    Run { best, trace }
}

/// Anneal from the identity permutation.
pub fn align(m1: &PaddedMatrix, m2: &PaddedMatrix, sched: &AnnealSchedule) -> Result<Alignment> {
    check_pair(m1, m2)?;
    sched.check()?;
    Ok(anneal(m1, m2, sched, (0..m1.dim()).collect(), false).best)
}

/// Anneal from a given partition-respecting permutation (warm start).
pub fn align_from(
    m1: &PaddedMatrix,
    m2: &PaddedMatrix,
    sched: &AnnealSchedule,
    init: &[usize],
) -> Result<Alignment> {
    check_pair(m1, m2)?;
    sched.check()?;
    if !respects_partitions(&m1.partitions, init) {
        return Err(Error::PartitionMismatch);
    }
    Ok(anneal(m1, m2, sched, init.to_vec(), false).best)
}

/// Like [`align`], also returning the best-so-far energy after every step.
pub fn align_traced(
    m1: &PaddedMatrix,
    m2: &PaddedMatrix,
    sched: &AnnealSchedule,
) -> Result<(Alignment, Vec<f64>)> {
    check_pair(m1, m2)?;
    sched.check()?;
    let run = anneal(m1, m2, sched, (0..m1.dim()).collect(), true);
    Ok((run.best, run.trace))
}

/// Exact minimum-energy alignment by branch and bound.
///
/// `limit` bounds the size of the search space (product of partition-size
/// factorials, after collapsing interchangeable empty rows) and guards
/// against accidental exponential runs.
pub fn align_exhaustive(m1: &PaddedMatrix, m2: &PaddedMatrix, limit: f64) -> Result<Alignment> {
    check_pair(m1, m2)?;
    let n = m1.dim();
    let map = &m1.partitions;
    let empty: Vec<bool> = (0..n).map(|i| m2.adj.degree(i) == 0).collect();
    let space: f64 = map
        .partitions()
        .iter()
        .map(|p| {
            let e = p.rows().filter(|&r| empty[r]).count();
            // L! / e! distinct assignments once empty rows are collapsed.
            ((e + 1)..=p.len).map(|k| k as f64).product::<f64>()
        })
        .product();
    if space > limit {
        return Err(Error::Degenerate(format!(
            "exhaustive alignment space {space:.3e} exceeds limit {limit:.3e}"
        )));
    }
    let start = Alignment::identity(m1, m2);
    let mut search = Search {
        m1,
        m2,
        map,
        empty,
        perm: vec![usize::MAX; n],
        used: vec![false; n],
        best: start,
    };
    search.descend(0, 0);
    Ok(search.best)
}

struct Search<'a> {
    m1: &'a PaddedMatrix,
    m2: &'a PaddedMatrix,
    map: &'a PartitionMap,
    empty: Vec<bool>,
    perm: Vec<usize>,
    used: Vec<bool>,
    best: Alignment,
}

impl Search<'_> {
    /// Cost of cells between row `a` (mapped to `s`) and rows `0..a`,
    /// plus the diagonal cell.
    fn added_cost(&self, a: usize, s: usize) -> usize {
        let (a1, a2) = (&self.m1.adj, &self.m2.adj);
        let mut c = (a1.get(a, a) != a2.get(s, s)) as usize;
        for b in 0..a {
            let pb = self.perm[b];
            c += (a1.get(a, b) != a2.get(s, pb)) as usize;
            c += (a1.get(b, a) != a2.get(pb, s)) as usize;
        }
        c
    }

    fn descend(&mut self, a: usize, cost: usize) {
        if cost >= self.best.mismatches {
            return;
        }
        let n = self.perm.len();
        if a == n {
            self.best = Alignment::new(self.perm.clone(), cost);
            return;
        }
        let part = self.map.partitions()[self.map.part_of(a)].clone();
        let mut tried_empty = false;
        for s in part.rows() {
            if self.used[s] {
                continue;
            }
            if self.empty[s] {
                // Empty rows are interchangeable; one representative suffices.
                if tried_empty {
                    continue;
                }
                tried_empty = true;
            }
            let extra = self.added_cost(a, s);
            self.used[s] = true;
            self.perm[a] = s;
            self.descend(a + 1, cost + extra);
            self.used[s] = false;
            if self.best.mismatches == 0 {
                return;
            }
        }
    }
}

/// Alignment strategy used by the higher-level pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Aligner {
    Anneal(AnnealSchedule),
    Exhaustive { limit: f64 },
    /// Exact when the search space is at most `limit`, annealed otherwise.
    Auto { limit: f64, schedule: AnnealSchedule },
}

impl Default for Aligner {
    fn default() -> Self {
        Aligner::Anneal(AnnealSchedule::default())
    }
}

impl Aligner {
    /// Align with the annealer seeded by `seed` (the schedule's own seed is
    /// replaced so that independent runs get independent streams).
    pub fn run(&self, m1: &PaddedMatrix, m2: &PaddedMatrix, seed: u64) -> Result<Alignment> {
        match self {
            Aligner::Anneal(s) => align(m1, m2, &s.with_seed(seed)),
            Aligner::Exhaustive { limit } => align_exhaustive(m1, m2, *limit),
            Aligner::Auto { limit, schedule } => match align_exhaustive(m1, m2, *limit) {
                Err(Error::Degenerate(_)) => align(m1, m2, &schedule.with_seed(seed)),
                other => other,
            },
        }
    }
}

/// Annealed structural distance between two compressed STGs.
pub fn structural_distance(
    g1: &StructuralTemporalGraph,
    g2: &StructuralTemporalGraph,
    sched: &AnnealSchedule,
) -> Result<f64> {
    augmented_distance(&augment(g1)?, &augment(g2)?, sched)
}

/// Annealed structural distance between two augmented graphs.
pub fn augmented_distance(a1: &AugmentedGraph, a2: &AugmentedGraph, sched: &AnnealSchedule) -> Result<f64> {
    let (m1, m2) = to_padded_pair(a1, a2)?;
    Ok(align(&m1, &m2, sched)?.energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matrix::frobenius_distance;

    fn toy_pair() -> (PaddedMatrix, PaddedMatrix) {
        let a = augment(&fixtures::toy()).unwrap();
        to_padded_pair(&a, &a).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let s = AnnealSchedule::default();
        assert!((s.temperature(0) - 2.0).abs() < 1e-12);
        assert!((s.temperature(1999) - 0.01).abs() < 1e-12);
        assert!(AnnealSchedule::new(0, 2.0, 0.01, 0).is_err());
        assert!(AnnealSchedule::new(10, 0.01, 2.0, 0).is_err());
    }

    #[test]
    fn identical_matrices_align_at_zero() {
        let (m1, m2) = toy_pair();
        let al = align(&m1, &m2, &AnnealSchedule::default()).unwrap();
        assert_eq!(al.energy, 0.0);
        assert_eq!(al.perm, (0..m1.dim()).collect::<Vec<_>>());
    }

    #[test]
    fn scrambled_copy_is_recovered() {
        let (m1, m2) = toy_pair();
        // Reverse every partition of the second matrix.
        let mut perm: Vec<usize> = (0..m2.dim()).collect();
        for p in m2.partitions.partitions() {
            perm[p.rows()].reverse();
        }
        let scrambled = m2.permuted(&perm);
        let al = align(&m1, &scrambled, &AnnealSchedule::default()).unwrap();
        assert_eq!(al.mismatches, 0);
        assert!(respects_partitions(&m1.partitions, &al.perm));
        let exact = align_exhaustive(&m1, &scrambled, 1e7).unwrap();
        assert_eq!(exact.mismatches, 0);
    }

    #[test]
    fn reported_energy_is_reproducible() {
        let (m1, mut m2) = toy_pair();
        m2.adj.flip(0, 2);
        m2.adj.flip(3, 4);
        let al = align(&m1, &m2, &AnnealSchedule::default().with_seed(5)).unwrap();
        let aligned = m2.permuted(&al.perm);
        assert_eq!(frobenius_distance(&m1, &aligned).unwrap(), al.energy);
        assert_eq!(al, align(&m1, &m2, &AnnealSchedule::default().with_seed(5)).unwrap());
    }

    #[test]
    fn trace_is_non_increasing() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let b = augment(&fixtures::biamonti_811()).unwrap();
        let (m1, m2) = to_padded_pair(&a, &b).unwrap();
        let (al, trace) = align_traced(&m1, &m2, &AnnealSchedule::default()).unwrap();
        assert_eq!(trace.len(), 2000);
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*trace.last().unwrap(), al.energy);
    }

    #[test]
    fn warm_start_must_respect_partitions() {
        let (m1, m2) = toy_pair();
        let mut bad: Vec<usize> = (0..m1.dim()).collect();
        bad.swap(0, m1.dim() - 1);
        assert!(align_from(&m1, &m2, &AnnealSchedule::default(), &bad).is_err());
    }

    #[test]
    fn distance_of_a_graph_to_itself() {
        let g = fixtures::biamonti_461();
        assert_eq!(structural_distance(&g, &g, &AnnealSchedule::default()).unwrap(), 0.0);
    }
}
