//! Approximate corpus centroids by nested simulated annealing.
//!
//! The outer annealer flips one cell of a candidate matrix per step, chosen
//! from the cells the aligned corpus disagrees with most. After every
//! proposal each corpus member is re-aligned to the candidate (warm-started
//! from its previous permutation, with a step budget that shrinks as the
//! outer annealer cools) and the mean aligned distance decides acceptance.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{align_from, Aligner, AnnealSchedule};
use crate::augment::AugmentedGraph;
use crate::error::{Error, Result};
use crate::matrix::{frobenius_distance, pad_corpus, PaddedMatrix, PartitionKind, PartitionMap};
use crate::{par, seed};

/// Endpoints of the nested alignment schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedEndpoints {
    pub t_initial_max: f64,
    pub t_final_max: f64,
    pub s_initial: usize,
    pub s_final: usize,
    /// Minimum temperature of every nested run.
    pub t_min: f64,
}

impl Default for NestedEndpoints {
    fn default() -> Self {
        NestedEndpoints {
            t_initial_max: 1.0,
            t_final_max: 0.05,
            s_initial: 500,
            s_final: 5,
            t_min: 0.01,
        }
    }
}

/// Maximum temperature and step count of the nested alignment runs when the
/// outer annealer is at temperature `outer_t`. Interpolates linearly in the
/// fraction of outer cooling still ahead.
pub fn nested_schedule(
    outer_t: f64,
    outer_t_min: f64,
    outer_t_max: f64,
    ep: &NestedEndpoints,
) -> Result<(f64, usize)> {
    if !(outer_t_max > outer_t_min) {
        return Err(Error::Schedule(format!(
            "degenerate outer schedule: t_min={outer_t_min} t_max={outer_t_max}"
        )));
    }
    let tol = 1e-9 * outer_t_max;
    if outer_t < outer_t_min - tol || outer_t > outer_t_max + tol {
        return Err(Error::Schedule(format!(
            "outer temperature {outer_t} outside [{outer_t_min}, {outer_t_max}]"
        )));
    }
    let r = ((outer_t - outer_t_min) / (outer_t_max - outer_t_min)).clamp(0.0, 1.0);
    let t = ep.t_initial_max * r + ep.t_final_max * (1.0 - r);
    let s = (ep.s_initial as f64 * r + ep.s_final as f64 * (1.0 - r) + 1e-9).floor() as usize;
    Ok((t, s))
}

/// Mean Frobenius distance from `candidate` to each aligned corpus matrix.
pub fn loss(candidate: &PaddedMatrix, aligned: &[PaddedMatrix]) -> Result<f64> {
    if aligned.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for m in aligned {
        sum += frobenius_distance(candidate, m)?;
    }
    Ok(sum / aligned.len() as f64)
}

/// Per-cell count of aligned corpus matrices disagreeing with the candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreMatrix {
    n: usize,
    cells: Vec<u32>,
}

impl ScoreMatrix {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.cells[i * self.n + j]
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

pub fn score_matrix(candidate: &PaddedMatrix, aligned: &[PaddedMatrix]) -> Result<ScoreMatrix> {
    if aligned.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = candidate.dim();
    let mut cells = vec![0u32; n * n];
    for m in aligned {
        if m.dim() != n {
            return Err(Error::DimensionMismatch(n, m.dim()));
        }
        for (c, (a, b)) in cells
            .iter_mut()
            .zip(candidate.adj.cells().iter().zip(m.adj.cells()))
        {
            *c += (a != b) as u32;
        }
    }
    Ok(ScoreMatrix { n, cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellFlip {
    pub i: usize,
    pub j: usize,
    /// Cell value after the flip.
    pub value: bool,
}

/// Moves the outer annealer may not repeat.
#[derive(Debug, Clone, Default)]
pub struct MoveMemory {
    last: Option<CellFlip>,
    rejected: HashSet<(usize, usize)>,
}

impl MoveMemory {
    pub fn accept(&mut self, flip: CellFlip) {
        self.last = Some(flip);
        self.rejected.clear();
    }

    pub fn reject(&mut self, flip: CellFlip) {
        self.rejected.insert((flip.i, flip.j));
    }

    pub fn last(&self) -> Option<CellFlip> {
        self.last
    }

    /// Whether flipping (i, j) would undo the last accepted move or repeat
    /// a move rejected since then.
    pub fn blocks(&self, i: usize, j: usize) -> bool {
        self.last.is_some_and(|l| (l.i, l.j) == (i, j)) || self.rejected.contains(&(i, j))
    }
}

/// Whether a flip of (i, j) on `m` keeps every global rule intact. Removing
/// an edge never breaks one.
pub fn flip_is_globally_valid(m: &PaddedMatrix, i: usize, j: usize) -> bool {
    m.adj.get(i, j) == 1 || m.partitions.globally_admissible(i, j)
}

/// Choose and apply the highest-scoring admissible flip. Cells are ranked by
/// score, ties shuffled; `None` when no cell is admissible.
pub fn centroid_move(
    candidate: &mut PaddedMatrix,
    score: &ScoreMatrix,
    memory: &MoveMemory,
    rng: &mut impl Rng,
) -> Option<CellFlip> {
    let n = candidate.dim();
    let mut tiers: BTreeMap<std::cmp::Reverse<u32>, Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            tiers
                .entry(std::cmp::Reverse(score.get(i, j)))
                .or_default()
                .push((i, j));
        }
    }
    for (_, mut cells) in tiers {
        cells.shuffle(rng);
        for (i, j) in cells {
            if memory.blocks(i, j) || !flip_is_globally_valid(candidate, i, j) {
                continue;
            }
            candidate.adj.flip(i, j);
            return Some(CellFlip {
                i,
                j,
                value: candidate.adj.get(i, j) == 1,
            });
        }
    }
    None
}

/// Count of present cells that break a global rule.
pub fn global_violations(m: &PaddedMatrix) -> usize {
    m.adj
        .ones()
        .filter(|&(i, j)| !m.partitions.globally_admissible(i, j))
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveCentroid {
    pub index: usize,
    /// Mean distance of each member to the rest of the corpus.
    pub rest_losses: Vec<f64>,
    /// Pairwise aligned distances.
    pub distances: Vec<Vec<f64>>,
    /// `perms[j]` aligns member `j` onto the chosen member.
    #[serde(skip)]
    pub perms: Vec<Vec<usize>>,
}

/// Corpus member with the least mean distance to the other members; ties
/// go to the lowest index.
pub fn naive_centroid(corpus: &[AugmentedGraph], aligner: &Aligner, seed: u64) -> Result<NaiveCentroid> {
    let mats = pad_corpus(corpus)?;
    naive_centroid_of(&mats, aligner, seed)
}

pub fn naive_centroid_of(mats: &[PaddedMatrix], aligner: &Aligner, seed: u64) -> Result<NaiveCentroid> {
    let k = mats.len();
    if k == 0 {
        return Err(Error::EmptyCorpus);
    }
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let results = par::map_slice(&pairs, |&(i, j)| {
        aligner.run(&mats[i], &mats[j], seed::derive(seed, &[i as u64, j as u64]))
    });
    let mut distances = vec![vec![0.0; k]; k];
    let mut perm_of: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (&(i, j), r) in pairs.iter().zip(results) {
        let a = r?;
        distances[i][j] = a.energy;
        distances[j][i] = a.energy;
        perm_of.insert((i, j), a.perm);
    }
    let rest_losses: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                0.0
            } else {
                distances[i].iter().sum::<f64>() / (k - 1) as f64
            }
        })
        .collect();
    let mut index = 0;
    for (i, &l) in rest_losses.iter().enumerate() {
        if l < rest_losses[index] {
            index = i;
        }
    }
    let perms = (0..k)
        .map(|j| match j.cmp(&index) {
            std::cmp::Ordering::Equal => (0..mats[j].dim()).collect(),
            // perm aligns the later matrix onto the earlier one.
            std::cmp::Ordering::Greater => perm_of[&(index, j)].clone(),
            std::cmp::Ordering::Less => invert(&perm_of[&(j, index)]),
        })
        .collect();
    Ok(NaiveCentroid {
        index,
        rest_losses,
        distances,
        perms,
    })
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (a, &p) in perm.iter().enumerate() {
        inv[p] = a;
    }
    inv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidConfig {
    pub outer: AnnealSchedule,
    pub nested: NestedEndpoints,
    /// Alignment used to pick the naive centroid.
    pub naive: Aligner,
}

impl Default for CentroidConfig {
    fn default() -> Self {
        CentroidConfig {
            outer: AnnealSchedule {
                steps: 1000,
                t_max: 2.5,
                t_min: 0.05,
                seed: 0,
            },
            nested: NestedEndpoints::default(),
            naive: Aligner::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CentroidOutcome {
    /// Best candidate found, with prototype labels inferred from the corpus.
    pub centroid: PaddedMatrix,
    pub loss: f64,
    pub naive: NaiveCentroid,
    /// Loss of the naive centroid against the whole corpus (the start state).
    pub initial_loss: f64,
    /// Best-so-far loss after each executed step.
    pub best_trace: Vec<f64>,
    /// Current-state loss after each executed step.
    pub loss_trace: Vec<f64>,
    pub accepted: usize,
    pub stopped_early: bool,
    /// Alignment of each corpus member to the returned centroid.
    pub perms: Vec<Vec<usize>>,
    pub corpus: Vec<PaddedMatrix>,
}

/// Derive an approximate centroid of `corpus`.
pub fn derive_centroid(corpus: &[AugmentedGraph], cfg: &CentroidConfig) -> Result<CentroidOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.outer.check()?;
    let mats = pad_corpus(corpus)?;
    let k = mats.len();
    let seed0 = cfg.outer.seed;
    let naive = naive_centroid_of(&mats, &cfg.naive, seed::derive(seed0, &[0]))?;
    let mut candidate = mats[naive.index].clone();
    let mut perms = naive.perms.clone();
    let aligned = |perms: &[Vec<usize>]| -> Vec<PaddedMatrix> {
        mats.iter().zip(perms).map(|(m, p)| m.permuted(p)).collect()
    };
    let mut current = loss(&candidate, &aligned(&perms))?;
    let initial_loss = current;
    let mut best = (current, candidate.clone(), perms.clone());
    let mut memory = MoveMemory::default();
    let mut rng = seed::sub_rng(seed0, &[1]);
    let mut best_trace = Vec::new();
    let mut loss_trace = Vec::new();
    let mut accepted = 0;
    let mut stopped_early = false;

    for step in 0..cfg.outer.steps {
        if best.0 == 0.0 {
            break;
        }
        let t = cfg.outer.temperature(step);
        let (t_max, steps) = nested_schedule(t, cfg.outer.t_min, cfg.outer.t_max, &cfg.nested)?;
        let nested_t_min = cfg.nested.t_min.min(t_max * 0.5);
        let score = score_matrix(&candidate, &aligned(&perms))?;
        let Some(flip) = centroid_move(&mut candidate, &score, &memory, &mut rng) else {
            log::warn!("no admissible centroid move at step {step}; stopping early");
            stopped_early = true;
            break;
        };
        let results = par::map_indexed(k, |j| {
            let sched = AnnealSchedule {
                steps: steps.max(1),
                t_max,
                t_min: nested_t_min,
                seed: seed::derive(seed0, &[2, step as u64, j as u64]),
            };
            align_from(&candidate, &mats[j], &sched, &perms[j])
        });
        let mut next_perms = Vec::with_capacity(k);
        let mut sum = 0.0;
        for r in results {
            let a = r?;
            sum += a.energy;
            next_perms.push(a.perm);
        }
        let next = sum / k as f64;
        let delta = next - current;
        if delta <= 0.0 || rng.gen::<f64>() < (-delta / t).exp() {
            current = next;
            perms = next_perms;
            memory.accept(flip);
            accepted += 1;
            debug_assert_eq!(global_violations(&candidate), 0);
            if current < best.0 {
                best = (current, candidate.clone(), perms.clone());
            }
        } else {
            candidate.adj.flip(flip.i, flip.j);
            memory.reject(flip);
        }
        best_trace.push(best.0);
        loss_trace.push(current);
    }

    let (loss_value, mut centroid, perms) = best;
    infer_labels(&mut centroid, &mats, &perms);
    Ok(CentroidOutcome {
        centroid,
        loss: loss_value,
        naive,
        initial_loss,
        best_trace,
        loss_trace,
        accepted,
        stopped_early,
        perms,
        corpus: mats,
    })
}

/// Label each prototype row of `centroid` by majority vote over the corpus
/// rows aligned to it, keeping labels unique within a partition. Active
/// rows left without a vote get a fresh legal value.
pub fn infer_labels(centroid: &mut PaddedMatrix, corpus: &[PaddedMatrix], perms: &[Vec<usize>]) {
    let map: Arc<PartitionMap> = Arc::clone(&centroid.partitions);
    for part in map.partitions() {
        if !matches!(part.kind, PartitionKind::Prototype { .. }) {
            continue;
        }
        let mut votes: BTreeMap<(usize, String), usize> = BTreeMap::new();
        for (m, perm) in corpus.iter().zip(perms) {
            for r in part.rows() {
                let src = perm[r];
                if let Some(label) = &m.labels[src] {
                    if m.adj.degree(src) > 0 {
                        *votes.entry((r, label.clone())).or_default() += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(usize, usize, String)> =
            votes.into_iter().map(|((r, l), c)| (c, r, l)).collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for r in part.rows() {
            centroid.labels[r] = None;
        }
        let mut taken = HashSet::new();
        for (_, r, l) in ranked {
            if centroid.labels[r].is_none() && !taken.contains(&l) {
                taken.insert(l.clone());
                centroid.labels[r] = Some(l);
            }
        }
    }
    for (r, d) in centroid.dummy.iter_mut().enumerate() {
        *d = centroid.adj.degree(r) == 0;
    }
    centroid.fill_missing_labels();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::augment;
    use crate::fixtures;
    use crate::matrix::to_padded_pair;

    fn toy_pair() -> (PaddedMatrix, PaddedMatrix) {
        let a = augment(&fixtures::toy()).unwrap();
        to_padded_pair(&a, &a).unwrap()
    }

    #[test]
    fn nested_schedule_endpoints() {
        let ep = NestedEndpoints::default();
        assert_eq!(nested_schedule(2.5, 0.05, 2.5, &ep).unwrap(), (1.0, 500));
        let (t, s) = nested_schedule(0.05, 0.05, 2.5, &ep).unwrap();
        assert!((t - 0.05).abs() < 1e-12);
        assert_eq!(s, 5);
        let (t, s) = nested_schedule(1.275, 0.05, 2.5, &ep).unwrap();
        assert!((t - 0.525).abs() < 1e-12);
        assert_eq!(s, 252);
        assert!(nested_schedule(1.0, 1.0, 1.0, &ep).is_err());
    }

    #[test]
    fn nested_schedule_is_monotone() {
        let ep = NestedEndpoints::default();
        let mut prev = (f64::INFINITY, usize::MAX);
        for k in 0..100 {
            let t = 2.5 * (0.05f64 / 2.5).powf(k as f64 / 99.0);
            let cur = nested_schedule(t, 0.05, 2.5, &ep).unwrap();
            assert!(cur.0 <= prev.0 + 1e-12 && cur.1 <= prev.1);
            prev = cur;
        }
    }

    #[test]
    fn loss_of_copies_is_zero() {
        let (m, c) = toy_pair();
        assert_eq!(loss(&m, &[c.clone(), c.clone(), c]).unwrap(), 0.0);
        assert!(loss(&m, &[]).is_err());
    }

    #[test]
    fn singleton_loss_is_distance() {
        let (m, mut c) = toy_pair();
        c.adj.flip(1, 2);
        c.adj.flip(0, 3);
        assert_eq!(loss(&m, &[c.clone()]).unwrap(), frobenius_distance(&m, &c).unwrap());
    }

    #[test]
    fn score_single_difference() {
        let (m, mut c) = toy_pair();
        c.adj.flip(2, 3);
        let s = score_matrix(&m, &[c]).unwrap();
        for i in 0..m.dim() {
            for j in 0..m.dim() {
                assert_eq!(s.get(i, j), ((i, j) == (2, 3)) as u32);
            }
        }
    }

    #[test]
    fn move_takes_the_only_disagreement() {
        let (mut m, c) = toy_pair();
        // Remove an edge from the candidate; the corpus still has it.
        let (i, j) = m.adj.ones().next().unwrap();
        m.adj.flip(i, j);
        let s = score_matrix(&m, &[c.clone(), c]).unwrap();
        let mut rng = seed::rng(0);
        let f = centroid_move(&mut m, &s, &MoveMemory::default(), &mut rng).unwrap();
        assert_eq!((f.i, f.j, f.value), (i, j, true));
    }

    #[test]
    fn self_loop_is_never_proposed() {
        let (mut m, mut c) = toy_pair();
        c.adj.flip(0, 0);
        let s = score_matrix(&m, &[c]).unwrap();
        let mut rng = seed::rng(0);
        let f = centroid_move(&mut m, &s, &MoveMemory::default(), &mut rng).unwrap();
        assert_ne!((f.i, f.j), (0, 0));
        assert_eq!(s.get(f.i, f.j), 0);
    }

    #[test]
    fn memory_blocks_and_clears() {
        let mut mem = MoveMemory::default();
        let f = CellFlip { i: 1, j: 2, value: true };
        mem.reject(f);
        assert!(mem.blocks(1, 2));
        mem.accept(CellFlip { i: 3, j: 4, value: false });
        assert!(!mem.blocks(1, 2));
        assert!(mem.blocks(3, 4));
    }

    #[test]
    fn naive_centroid_cases() {
        let g = augment(&fixtures::toy()).unwrap();
        let one = naive_centroid(&[g.clone()], &Aligner::default(), 0).unwrap();
        assert_eq!(one.index, 0);
        let far = crate::synth::random_valid_edits(&g, 8, 3).unwrap().apply(&g).unwrap();
        let n = naive_centroid(&[far, g.clone(), g], &Aligner::default(), 0).unwrap();
        assert_eq!(n.index, 1);
    }

    #[test]
    fn identical_corpus_centroid() {
        let g = augment(&fixtures::toy()).unwrap();
        let out = derive_centroid(&[g.clone(), g.clone(), g.clone()], &CentroidConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        let back = out.centroid.to_augmented().unwrap();
        assert_eq!(
            crate::augment::compress(&back).unwrap(),
            fixtures::toy().without_intervals()
        );
    }
}
