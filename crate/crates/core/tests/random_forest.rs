use proptest::prelude::*;
use rand::Rng;
use wbw_core::math::DenseMatrix;
use wbw_core::random_forest::{bootstrap_indices, train_rf, RfModel, RfParams};
use wbw_core::seed;

fn gini(labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let p = labels.iter().filter(|&&b| b).count() as f64 / labels.len() as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

#[test]
fn depth_one_split_matches_exhaustive_gini_search() {
    let mut rng = seed::rng(21);
    let mut checked = 0;
    for trial in 0..200u64 {
        let n = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.random_range(0..4) as f64, rng.random_range(0..4) as f64])
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let pos = y.iter().filter(|&&b| b).count();
        if pos == 0 || pos == n {
            continue;
        }
        let params = RfParams {
            n_trees: 1,
            max_depth: 1,
            m_try: Some(2),
            min_samples_leaf: 1,
            bootstrap: false,
        };
        let model = train_rf(&DenseMatrix::from_rows(&rows, 2).unwrap(), &y, &params, trial).unwrap();

        let parent = n as f64 * gini(&y);
        let mut candidates = Vec::new();
        for f in 0..2 {
            let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let left: Vec<bool> = rows
                    .iter()
                    .zip(&y)
                    .filter(|(r, _)| r[f] <= thr)
                    .map(|(_, &l)| l)
                    .collect();
                let right: Vec<bool> = rows
                    .iter()
                    .zip(&y)
                    .filter(|(r, _)| r[f] > thr)
                    .map(|(_, &l)| l)
                    .collect();
                let gain = parent - left.len() as f64 * gini(&left) - right.len() as f64 * gini(&right);
                candidates.push((f, thr, gain));
            }
        }
        let best = candidates.iter().map(|c| c.2).fold(0.0f64, f64::max);
        match model.trees()[0].root_split() {
            None => assert!(best < 1e-12),
            Some((f, thr)) => {
                let first = candidates.iter().find(|c| (c.2 - best).abs() < 1e-9).unwrap();
                assert_eq!((first.0, first.1), (f, thr), "trial {trial}");
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

/// Training accuracy of the best depth-2 tree on XOR, found by enumeration.
fn exhaustive_depth_two_accuracy(rows: &[Vec<f64>], y: &[bool]) -> f64 {
    let thresholds = [0.5];
    let mut best = 0.0f64;
    for f1 in 0..2 {
        for &t1 in &thresholds {
            for f2 in 0..2 {
                for &t2 in &thresholds {
                    // each of 4 leaves predicts its majority
                    let mut cells = [[0usize; 2]; 4];
                    for (r, &l) in rows.iter().zip(y) {
                        let c = usize::from(r[f1] > t1) * 2 + usize::from(r[f2] > t2);
                        cells[c][usize::from(l)] += 1;
                    }
                    let correct: usize = cells.iter().map(|c| c[0].max(c[1])).sum();
                    best = best.max(correct as f64 / rows.len() as f64);
                }
            }
        }
    }
    best
}

#[test]
fn xor_is_fit_exactly() {
    let mut rng = seed::rng(22);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| vec![rng.random_range(0..2) as f64, rng.random_range(0..2) as f64])
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| (r[0] > 0.5) != (r[1] > 0.5)).collect();
    assert_eq!(exhaustive_depth_two_accuracy(&rows, &y), 1.0);
    let params = RfParams {
        n_trees: 25,
        max_depth: 2,
        m_try: Some(2),
        ..RfParams::default()
    };
    let m = train_rf(&DenseMatrix::from_rows(&rows, 2).unwrap(), &y, &params, 7).unwrap();
    let correct = rows
        .iter()
        .zip(&y)
        .filter(|(r, &l)| (m.predict_proba(r).unwrap() > 0.5) == l)
        .count();
    assert_eq!(correct, rows.len());
}

#[test]
fn same_seed_same_forest() {
    let mut rng = seed::rng(23);
    let rows: Vec<Vec<f64>> = (0..150)
        .map(|_| (0..5).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| r[0] + r[3] > 1.0).collect();
    let x = DenseMatrix::from_rows(&rows, 5).unwrap();
    let params = RfParams {
        n_trees: 10,
        ..RfParams::default()
    };
    let a = train_rf(&x, &y, &params, 3).unwrap();
    assert_eq!(a, train_rf(&x, &y, &params, 3).unwrap());
    assert_ne!(a, train_rf(&x, &y, &params, 4).unwrap());
}

#[test]
fn bootstrap_has_size_n_and_nonempty_out_of_bag() {
    for s in 0..200u64 {
        let idx = bootstrap_indices(50, s);
        assert_eq!(idx.len(), 50);
        let mut seen = [false; 50];
        idx.iter().for_each(|&i| seen[i] = true);
        assert!(seen.iter().any(|&b| !b));
    }
}

proptest! {
    #[test]
    fn duplicating_a_tree_follows_the_weighted_mean(
        data in prop::collection::vec((prop::array::uniform2(0.0f64..1.0), any::<bool>()), 10..40),
        probe in prop::array::uniform2(0.0f64..1.0),
        seed_value in any::<u64>(),
    ) {
        let pos = data.iter().filter(|d| d.1).count();
        prop_assume!(pos > 0 && pos < data.len());
        let rows: Vec<Vec<f64>> = data.iter().map(|d| d.0.to_vec()).collect();
        let y: Vec<bool> = data.iter().map(|d| d.1).collect();
        let params = RfParams { n_trees: 5, max_depth: 3, ..RfParams::default() };
        let m = train_rf(&DenseMatrix::from_rows(&rows, 2).unwrap(), &y, &params, seed_value).unwrap();
        let p = m.predict_proba(&probe).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        let extra = m.trees()[0].clone();
        let t = extra.leaf(&probe).0;
        let mut trees = m.trees().to_vec();
        trees.push(extra);
        let mut seeds = m.tree_seeds().to_vec();
        seeds.push(seeds[0]);
        let bigger = RfModel::new(trees, seeds, m.m_try(), 2).unwrap();
        let q = bigger.predict_proba(&probe).unwrap();
        prop_assert!((q - (5.0 * p + t) / 6.0).abs() < 1e-12);
        prop_assert!((q - t).abs() <= (p - t).abs() + 1e-12);
    }
}
