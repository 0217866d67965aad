//! Distance matrices and the Mantel test with Spearman's rank correlation.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, seed};

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// Symmetrizes by averaging `v[i][j]` and `v[j][i]` and zeroes the
    /// diagonal.
    pub fn new(labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(n, values.len()));
        }
        if values.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Degenerate("distances must be finite and non-negative".into()));
        }
        let mut sym = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = (values[i][j] + values[j][i]) / 2.0;
                sym[i][j] = v;
                sym[j][i] = v;
            }
        }
        Ok(DistanceMatrix { labels, values: sym })
    }

    /// Fill a matrix from a function of the upper-triangle pair `(i, j)`.
    pub fn from_fn(labels: Vec<String>, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let n = labels.len();
        let mut v = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                v[i][j] = f(i, j);
                v[j][i] = v[i][j];
            }
        }
        Self::new(labels, v)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// Row-major upper triangle without the diagonal.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| self.values[i][j]).collect()
    }

    /// Rows and columns reordered jointly: entry `(a, b)` of the result is
    /// entry `(perm[a], perm[b])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> DistanceMatrix {
        DistanceMatrix {
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            values: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.values[a][b]).collect())
                .collect(),
        }
    }

    /// CSV with a header row of labels, then one row of values per label.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels).map_err(csv_err)?;
        for row in &self.values {
            out.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv). A leading label
    /// column (detected by a non-numeric first field in the data rows) is
    /// accepted and ignored, as is an empty corner cell in the header.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut rows: Vec<Vec<String>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
        }
        let Some((header, data)) = rows.split_first() else {
            return Err(Error::Degenerate("empty distance matrix file".into()));
        };
        let labelled = data.first().is_some_and(|r| r.first().is_some_and(|c| c.parse::<f64>().is_err()));
        let labels: Vec<String> = if labelled && header.len() == data.len() + 1 {
            header[1..].to_vec()
        } else {
            header.clone()
        };
        let values = data
            .iter()
            .map(|r| {
                let cells = if labelled { &r[1..] } else { &r[..] };
                cells
                    .iter()
                    .map(|c| c.parse::<f64>().map_err(|_| Error::Degenerate(format!("bad distance {c:?}"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Element-wise mean, then min–max scaled to `[0, 1]` over the off-diagonal
/// entries. A constant mean stays as all zeros.
pub fn mean_normalize(mats: &[DistanceMatrix]) -> Result<DistanceMatrix> {
    let first = mats.first().ok_or(Error::EmptyCorpus)?;
    if mats.iter().any(|m| m.labels != first.labels) {
        return Err(Error::LabelMismatch);
    }
    let n = first.len();
    let k = mats.len() as f64;
    let mean = |i: usize, j: usize| mats.iter().map(|m| m.values[i][j]).sum::<f64>() / k;
    let upper: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| mean(i, j)).collect();
    let lo = upper.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    DistanceMatrix::from_fn(first.labels.clone(), |i, j| {
        if span > 0.0 {
            (mean(i, j) - lo) / span
        } else {
            0.0
        }
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation of two equally long samples; `None` when
/// either is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub rho: f64,
    pub p_value: f64,
    /// Permutations evaluated, the identity included.
    pub permutations: usize,
    /// Whether every label permutation was enumerated.
    pub exact: bool,
}

/// Default number of random permutations.
pub const DEFAULT_PERMUTATIONS: usize = 9999;

fn factorial_at_most(n: usize, cap: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, k| acc.checked_mul(k).filter(|&v| v <= cap))
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Two-sided Mantel test of `a` against `b` using Spearman's ρ over the
/// upper triangles. Rows and columns of `b` are permuted jointly. When
/// `n!` does not exceed `permutations` every permutation is enumerated and
/// the p-value is exact; otherwise `permutations` random ones are drawn and
/// the identity is counted as one more, so `p ≥ 1 / (permutations + 1)`.
pub fn mantel_spearman(a: &DistanceMatrix, b: &DistanceMatrix, permutations: usize, seed: u64) -> Result<MantelResult> {
    if a.labels != b.labels {
        return Err(Error::LabelMismatch);
    }
    if permutations == 0 {
        return Err(Error::Degenerate("at least one permutation is required".into()));
    }
    let n = a.len();
    let x = a.upper_triangle();
    let rho = spearman(&x, &b.upper_triangle())
        .ok_or_else(|| Error::Degenerate("constant or too small distance matrix".into()))?;
    let rank_x = average_ranks(&x);
    let stat = |perm: &[usize]| -> f64 {
        let y = average_ranks(&b.permuted(perm).upper_triangle());
        pearson(&rank_x, &y).unwrap_or(0.0)
    };
    // Ties in |ρ| must count as "at least as extreme".
    let extreme = |r: f64| r.abs() >= rho.abs() - 1e-12;
    if factorial_at_most(n, permutations).is_some() {
        let perms = all_permutations(n);
        let hits: usize = par::map_slice(&perms, |p| extreme(stat(p)) as usize).into_iter().sum();
        return Ok(MantelResult {
            rho,
            p_value: hits as f64 / perms.len() as f64,
            permutations: perms.len(),
            exact: true,
        });
    }
    let hits: usize = par::map_indexed(permutations, |i| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut seed::sub_rng(seed, &[i as u64]));
        extreme(stat(&perm)) as usize
    })
    .into_iter()
    .sum();
    Ok(MantelResult {
        rho,
        p_value: (hits + 1) as f64 / (permutations + 1) as f64,
        permutations: permutations + 1,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("x{i}")).collect()
    }

    fn dm(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        DistanceMatrix::from_fn(labels(n), f).unwrap()
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_and_reversed() {
        let a = dm(5, |i, j| (i * 7 + j * 3) as f64);
        let rev = dm(5, |i, j| 100.0 - (i * 7 + j * 3) as f64);
        assert!((mantel_spearman(&a, &a, 99, 0).unwrap().rho - 1.0).abs() < 1e-12);
        assert!((mantel_spearman(&a, &rev, 99, 0).unwrap().rho + 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_normalization() {
        // Mean of the two: d01 = 2, d02 = 4, d12 = 3 → (0, 1, 0.5).
        let a = dm(3, |i, j| [[0.0, 1.0, 2.0], [0.0, 0.0, 3.0], [0.0; 3]][i][j]);
        let b = dm(3, |i, j| [[0.0, 3.0, 6.0], [0.0, 0.0, 3.0], [0.0; 3]][i][j]);
        let m = mean_normalize(&[a.clone(), b]).unwrap();
        assert_eq!(m.upper_triangle(), vec![0.0, 1.0, 0.5]);
        let unit = dm(3, |i, j| [[0.0, 0.0, 1.0], [0.0, 0.0, 0.5], [0.0; 3]][i][j]);
        assert_eq!(mean_normalize(&[unit.clone()]).unwrap(), unit);
        assert_eq!(mean_normalize(&[unit.clone(), unit.clone()]).unwrap(), unit);
        let other = DistanceMatrix::from_fn(vec!["a".into(), "b".into(), "c".into()], |_, _| 1.0).unwrap();
        assert!(matches!(mean_normalize(&[a, other]), Err(Error::LabelMismatch)));
    }

    #[test]
    fn constant_input_is_degenerate() {
        let a = dm(4, |_, _| 1.0);
        let b = dm(4, |i, j| (i + j) as f64);
        assert!(matches!(mantel_spearman(&a, &b, 99, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn csv_round_trip_and_label_column() {
        let a = dm(3, |i, j| (i + 2 * j) as f64 / 4.0);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(DistanceMatrix::read_csv(&buf[..]).unwrap(), a);
        let text = ",x0,x1,x2\nx0,0,0.5,1\nx1,0.5,0,1.25\nx2,1,1.25,0\n";
        assert_eq!(DistanceMatrix::read_csv(text.as_bytes()).unwrap(), a);
    }

    #[test]
    fn random_permutations_are_seeded() {
        let a = dm(9, |i, j| ((i * 13 + j * 7) % 11) as f64);
        let b = dm(9, |i, j| ((i * 5 + j * 3) % 7) as f64);
        let r1 = mantel_spearman(&a, &b, 199, 4).unwrap();
        assert_eq!(r1, mantel_spearman(&a, &b, 199, 4).unwrap());
        assert!(!r1.exact);
        assert!(r1.p_value >= 1.0 / 200.0 && r1.p_value <= 1.0);
    }

    /// Closed-form ρ, valid only without ties.
    fn rho_no_ties(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64).collect()
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    fn heap_permutations(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap_permutations(k - 1, a, out);
            a.swap(if k % 2 == 0 { i } else { 0 }, k - 1);
        }
    }

    #[test]
    fn exact_p_matches_brute_force() {
        let a = dm(4, |i, j| [[0., 1., 4., 9.], [0., 0., 2., 7.], [0., 0., 0., 3.], [0.; 4]][i][j]);
        let b = dm(4, |i, j| [[0., 2., 1., 8.], [0., 0., 5., 6.], [0., 0., 0., 4.], [0.; 4]][i][j]);
        let (x, y) = (a.upper_triangle(), b.upper_triangle());
        let rho = rho_no_ties(&x, &y);
        let mut perms = Vec::new();
        heap_permutations(4, &mut (0..4).collect(), &mut perms);
        assert_eq!(perms.len(), 24);
        let mut hits = 0;
        for p in &perms {
            let yp: Vec<f64> = (0..4)
                .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
                .map(|(i, j)| b.get(p[i], p[j]))
                .collect();
            if rho_no_ties(&x, &yp).abs() >= rho.abs() - 1e-12 {
                hits += 1;
            }
        }
        let r = mantel_spearman(&a, &b, DEFAULT_PERMUTATIONS, 0).unwrap();
        assert!(r.exact);
        assert_eq!(r.permutations, 24);
        assert!((r.rho - rho).abs() < 1e-12);
        assert!((r.p_value - hits as f64 / 24.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn rho_is_invariant_under_monotone_maps(vals in proptest::collection::vec(0.0f64..100.0, 10)) {
            let a = dm(5, |i, j| vals[i * 5 + j - (i + 1) * (i + 2) / 2]);
            let b = dm(5, |i, j| (i * 3 + j) as f64);
            let cubed = dm(5, |i, j| a.get(i, j).powi(3) + 1.0);
            if let (Ok(r1), Ok(r2)) = (mantel_spearman(&a, &b, 1, 0), mantel_spearman(&cubed, &b, 1, 0)) {
                prop_assert!((r1.rho - r2.rho).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&r1.rho));
            }
        }
    }
}
