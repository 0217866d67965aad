use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use stg_core::fixtures::{self, RandomRecordConfig};
use stg_core::matrix::{PaddedMatrix, PartitionMap};
use stg_core::repair::{repair, SolverConfig};
use stg_core::{augment, seed, validate_augmented, LevelKind};

fn solver() -> Option<SolverConfig> {
    let s = SolverConfig::locate(None).ok();
    if s.is_none() {
        eprintln!("no SMT solver found; skipping");
    }
    s
}

fn valid(m: &PaddedMatrix) -> bool {
    let mut m = m.clone();
    m.fill_missing_labels();
    m.to_augmented().is_ok_and(|a| validate_augmented(&a).is_empty())
}

fn flip_sets(cells: usize, size: usize) -> Vec<Vec<usize>> {
    if size == 0 {
        return vec![vec![]];
    }
    (size - 1..cells)
        .flat_map(|last| {
            flip_sets(last, size - 1).into_iter().map(move |mut s| {
                s.push(last);
                s
            })
        })
        .collect()
}

/// Corrupt small valid graphs by up to three admissible flips; repair must
/// land on a valid graph no further away than the corruption, and no
/// smaller flip set may reach one.
#[test]
fn corruptions_are_repaired_minimally() {
    let Some(solver) = solver() else { return };
    let small = RandomRecordConfig {
        levels: vec![LevelKind::Segmentation, LevelKind::Key],
        beats: 6,
        spans: vec![2, 2],
    };
    let mut repaired = 0;
    for base_seed in 0..4u64 {
        let g = augment(&fixtures::random_stg(base_seed, &small)).unwrap();
        let map = Arc::new(PartitionMap::covering(&[&g]).unwrap());
        let clean = PaddedMatrix::pad(&g, &map).unwrap();
        assert_eq!(repair(&clean, &solver).unwrap().objective, 0);
        let n = clean.dim();
        let cells: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| map.globally_admissible(i, j))
            .collect();
        let mut rng = seed::rng(base_seed);
        let mut tried = 0;
        while tried < 8 {
            let k = rng.gen_range(1..=3);
            let mut picked = BTreeSet::new();
            while picked.len() < k {
                picked.insert(rng.gen_range(0..cells.len()));
            }
            let mut bad = clean.clone();
            for &c in &picked {
                bad.adj.flip(cells[c].0, cells[c].1);
            }
            if (0..n).any(|r| clean.adj.degree(r) > 0 && bad.adj.degree(r) == 0) || valid(&bad) {
                continue;
            }
            tried += 1;
            let fixed = repair(&bad, &solver).unwrap();
            assert!(valid(&fixed.matrix), "base {base_seed}: repaired graph invalid");
            assert!(fixed.objective <= k, "base {base_seed}: objective {} > {k}", fixed.objective);
            assert_eq!(bad.adj.hamming(&fixed.matrix.adj), fixed.objective);
            assert_eq!(repair(&fixed.matrix, &solver).unwrap().objective, 0);
            for size in 0..fixed.objective {
                for set in flip_sets(cells.len(), size) {
                    let mut m = bad.clone();
                    for c in set {
                        m.adj.flip(cells[c].0, cells[c].1);
                    }
                    assert!(!valid(&m), "base {base_seed}: {size} flips suffice, repair used {}", fixed.objective);
                }
            }
            repaired += 1;
        }
    }
    assert_eq!(repaired, 32);
}
