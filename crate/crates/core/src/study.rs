//! Evaluation studies over synthetic corpora: distance relative error,
//! centroid loss error and level ablation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::{AnnealSchedule, Aligner};
use crate::augment::{augment, AugmentedGraph};
use crate::centroid::{derive_centroid, naive_centroid, CentroidConfig};
use crate::error::{Error, Result};
use crate::matrix::{pad_corpus, to_padded_pair, PaddedMatrix};
use crate::model::StructuralTemporalGraph;
use crate::repair::{repair, SolverConfig};
use crate::stats::DistanceMatrix;
use crate::synth::{build_corpus, edit_count, random_valid_edits_with, Certification};
use crate::{par, seed};

/// Serialize rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorConfig {
    pub p_grid: Vec<f64>,
    /// Independent edit scripts per (base, p).
    pub replicates: usize,
    pub schedule: AnnealSchedule,
    /// Certify each script as irreducible before measuring it.
    pub certify: Option<Certification>,
    pub seed: u64,
}

impl Default for RelativeErrorConfig {
    fn default() -> Self {
        RelativeErrorConfig {
            p_grid: (1..=30).map(|i| i as f64 / 10.0).collect(),
            replicates: 1,
            schedule: AnnealSchedule::default(),
            certify: Some(Certification::default()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorRow {
    pub base: String,
    pub edges: usize,
    pub p: f64,
    pub replicate: usize,
    pub edits: usize,
    pub distance: f64,
    pub expected: f64,
    pub relative_error: f64,
}

/// Annealed distance between each base and a copy carrying `⌈|E|·p⌉`
/// random valid edits, against the ground truth `sqrt(⌈|E|·p⌉)`.
pub fn relative_error_study(bases: &[(String, AugmentedGraph)], cfg: &RelativeErrorConfig) -> Result<Vec<RelativeErrorRow>> {
    cfg.schedule.check()?;
    let jobs: Vec<(usize, usize, usize)> = (0..bases.len())
        .flat_map(|b| (0..cfg.p_grid.len()).flat_map(move |p| (0..cfg.replicates).map(move |r| (b, p, r))))
        .collect();
    par::map_slice(&jobs, |&(b, pi, r)| {
        let (name, g) = &bases[b];
        let p = cfg.p_grid[pi];
        let n = edit_count(g.edge_count(), p);
        let path = [b as u64, pi as u64, r as u64];
        let script = random_valid_edits_with(g, n, seed::derive(cfg.seed, &path), cfg.certify.as_ref())?;
        let variant = script.apply(g)?;
        let (m1, m2) = to_padded_pair(g, &variant)?;
        let sched = cfg.schedule.with_seed(seed::derive(cfg.seed, &[b as u64, pi as u64, r as u64, 1]));
        let distance = crate::align::align(&m1, &m2, &sched)?.energy;
        let expected = (n as f64).sqrt();
        let relative_error = if n == 0 {
            distance
        } else {
            (distance - expected).abs() / expected
        };
        Ok(RelativeErrorRow {
            base: name.clone(),
            edges: g.edge_count(),
            p,
            replicate: r,
            edits: n,
            distance,
            expected,
            relative_error,
        })
    })
    .into_iter()
    .collect()
}

/// Mean aligned distance from `candidate` to every corpus matrix; all
/// matrices must share one layout.
pub fn corpus_loss(candidate: &PaddedMatrix, corpus: &[PaddedMatrix], aligner: &Aligner, seed: u64) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let d = par::map_indexed(corpus.len(), |j| {
        aligner.run(candidate, &corpus[j], seed::derive(seed, &[j as u64])).map(|a| a.energy)
    });
    Ok(d.into_iter().collect::<Result<Vec<f64>>>()?.iter().sum::<f64>() / corpus.len() as f64)
}

/// [`corpus_loss`] of a graph, padded together with the corpus.
pub fn graph_loss(candidate: &AugmentedGraph, corpus: &[AugmentedGraph], aligner: &Aligner, seed: u64) -> Result<f64> {
    let mut all = Vec::with_capacity(corpus.len() + 1);
    all.push(candidate.clone());
    all.extend_from_slice(corpus);
    let mats = pad_corpus(&all)?;
    corpus_loss(&mats[0], &mats[1..], aligner, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidErrorConfig {
    pub ks: Vec<usize>,
    pub centroid: CentroidConfig,
    /// Alignment used to score every candidate against the corpus.
    pub eval: Aligner,
    /// Repair the derived centroid before scoring it.
    pub solver: Option<SolverConfig>,
    pub seed: u64,
}

impl Default for CentroidErrorConfig {
    fn default() -> Self {
        CentroidErrorConfig {
            ks: (3..=14).collect(),
            centroid: CentroidConfig::default(),
            eval: Aligner::Auto {
                limit: 1e7,
                schedule: AnnealSchedule::default(),
            },
            solver: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidErrorRow {
    pub k: usize,
    pub edits: usize,
    /// Loss of the true centroid `g`.
    pub loss_true: f64,
    /// Mean distance of the naive centroid to the rest of the corpus.
    pub loss_naive: f64,
    /// Loss of the annealer output before repair.
    pub loss_approx: f64,
    /// Loss of the repaired centroid, or of the approximate one when no
    /// solver was configured.
    pub loss_derived: f64,
    pub repaired: bool,
    pub repair_flips: Option<usize>,
    pub steps: usize,
    pub accepted: usize,
    pub e_gn: f64,
    pub e_gd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidStudy {
    pub rows: Vec<CentroidErrorRow>,
    /// Best-so-far loss trace of each centroid run, in `ks` order.
    pub traces: Vec<Vec<f64>>,
}

fn signed_error(loss: f64, truth: f64) -> f64 {
    if truth == 0.0 {
        loss
    } else {
        (loss - truth) / truth
    }
}

/// For each `k`, build a corpus of `k` variants of `g`, derive (and
/// optionally repair) its centroid, and report signed relative loss errors
/// of the derived and naive centroids against `g`.
pub fn centroid_error_study(g: &AugmentedGraph, cfg: &CentroidErrorConfig) -> Result<CentroidStudy> {
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &k in &cfg.ks {
        let corpus = build_corpus(g, k, seed::derive(cfg.seed, &[k as u64]))?;
        let eval_seed = seed::derive(cfg.seed, &[k as u64, 1]);
        let loss_true = graph_loss(g, &corpus.variants, &cfg.eval, eval_seed)?;
        let naive = naive_centroid(&corpus.variants, &cfg.eval, eval_seed)?;
        let loss_naive = naive.rest_losses[naive.index];
        let mut ccfg = cfg.centroid;
        ccfg.outer.seed = seed::derive(cfg.seed, &[k as u64, 2]);
        let outcome = derive_centroid(&corpus.variants, &ccfg)?;
        let loss_approx = corpus_loss(&outcome.centroid, &outcome.corpus, &cfg.eval, eval_seed)?;
        let (loss_derived, repair_flips) = match &cfg.solver {
            Some(solver) => {
                let fixed = repair(&outcome.centroid, solver)?;
                let loss = corpus_loss(&fixed.matrix, &outcome.corpus, &cfg.eval, eval_seed)?;
                (loss, Some(fixed.objective))
            }
            None => (loss_approx, None),
        };
        log::info!("k = {k}: true {loss_true:.4} naive {loss_naive:.4} derived {loss_derived:.4}");
        rows.push(CentroidErrorRow {
            k,
            edits: corpus.edits_per_variant,
            loss_true,
            loss_naive,
            loss_approx,
            loss_derived,
            repaired: repair_flips.is_some(),
            repair_flips,
            steps: outcome.best_trace.len(),
            accepted: outcome.accepted,
            e_gn: signed_error(loss_naive, loss_true),
            e_gd: signed_error(loss_derived, loss_true),
        });
        traces.push(outcome.best_trace);
    }
    Ok(CentroidStudy { rows, traces })
}

/// Pairwise aligned distances between `graphs`.
pub fn distance_matrix(
    labels: Vec<String>,
    graphs: &[AugmentedGraph],
    aligner: &Aligner,
    seed: u64,
) -> Result<DistanceMatrix> {
    let n = graphs.len();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(labels.len(), n));
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let d = par::map_slice(&pairs, |&(i, j)| {
        let (m1, m2) = to_padded_pair(&graphs[i], &graphs[j])?;
        aligner.run(&m1, &m2, seed::derive(seed, &[i as u64, j as u64])).map(|a| a.energy)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(d) {
        values[i][j] = v;
        values[j][i] = v;
    }
    DistanceMatrix::new(labels, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    /// Number of top levels kept.
    pub keep: usize,
    pub matrix: DistanceMatrix,
}

/// Distance matrices over `graphs` with the top `L, L-1, …, 1` levels kept,
/// where `L` is the fewest levels of any graph.
pub fn ablation_study(
    graphs: &[(String, StructuralTemporalGraph)],
    aligner: &Aligner,
    seed: u64,
) -> Result<Vec<AblationMatrix>> {
    let depth = graphs.iter().map(|(_, g)| g.levels().len()).min().ok_or(Error::EmptyCorpus)?;
    let labels: Vec<String> = graphs.iter().map(|(l, _)| l.clone()).collect();
    (1..=depth)
        .rev()
        .map(|keep| {
            let aug = graphs
                .iter()
                .map(|(_, g)| augment(&g.ablate(keep)?))
                .collect::<Result<Vec<_>>>()?;
            let matrix = distance_matrix(labels.clone(), &aug, aligner, seed::derive(seed, &[keep as u64]))?;
            Ok(AblationMatrix { keep, matrix })
        })
        .collect()
}
