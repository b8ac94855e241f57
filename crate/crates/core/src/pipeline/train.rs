use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::archive::ARCHIVE_VERSION;
use super::model::{Dims, InputScaler, Manifest, StageMetrics, WbwModel};
use super::{Structure, Top};
use crate::config::RunConfig;
use crate::feature_engineering::{group_by_account, AccountGroup, FeaturePipeline, TransactionRecord};
use crate::gbdt::train_gbdt;
use crate::gru::{padded_rows, train_gru, SequenceSet};
use crate::math::{DenseMatrix, SparseRow};
use crate::random_forest::train_rf;
use crate::sequence_builder::balance_indices;
use crate::{seed, Error, Result, Stage, StageContext};

/// Trains the GBDT -> GRU -> RF stack.
pub fn train_wbw(records: &[TransactionRecord], config: &RunConfig) -> Result<WbwModel> {
    train_structure(records, config, Structure::Wbw)
}

/// Trains one of the three stacking orders.
pub fn train_variant(records: &[TransactionRecord], config: &RunConfig, order: Structure) -> Result<WbwModel> {
    if !matches!(order, Structure::Wbw | Structure::Wwb | Structure::Bww) {
        return Err(Error::Config(format!(
            "`{order}` is not a stacking order (wbw, wwb, bww)"
        )));
    }
    train_structure(records, config, order)
}

/// Sequences of fixed length drawn from account windows, referring to
/// shared per-transaction rows.
struct WindowSet<'a> {
    rows: &'a [SparseRow],
    groups: &'a [AccountGroup],
    /// `(group, 1-based ordinal)`.
    samples: Vec<(usize, usize)>,
    labels: Vec<bool>,
    timesteps: usize,
}

impl SequenceSet for WindowSet<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    fn rows(&self, i: usize) -> Vec<&SparseRow> {
        let (g, t) = self.samples[i];
        let len = t.min(self.timesteps);
        let group = &self.groups[g].rows;
        padded_rows(self.timesteps - len, group[t - len..t].iter().map(|&r| &self.rows[r]))
    }
}

/// Seeded uniform subsample down to `cap`, keeping ascending order.
fn cap_indices(mut idx: Vec<usize>, cap: usize, seed_value: u64) -> Vec<usize> {
    if idx.len() > cap {
        idx.shuffle(&mut seed::rng(seed_value));
        idx.truncate(cap);
        idx.sort_unstable();
    }
    idx
}

fn labels_of(records: &[TransactionRecord]) -> Result<Vec<bool>> {
    let y: Vec<bool> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .ok_or_else(|| Error::Data(format!("training record {} has no label", i + 1)))
        })
        .collect::<Result<_>>()?;
    let fraud = y.iter().filter(|&&l| l).count();
    if fraud == 0 || fraud == y.len() {
        return Err(Error::Data(
            "training data needs both fraud and legitimate records".into(),
        ));
    }
    Ok(y)
}

/// Trains `structure` on labelled records. Every structure draws its random
/// streams from the same run seed, so shared stages see identical data.
pub fn train_structure(records: &[TransactionRecord], config: &RunConfig, structure: Structure) -> Result<WbwModel> {
    config.validate()?;
    let y = labels_of(records)?;
    let run_seed = config.seed;
    let features = FeaturePipeline::fit(records, &config.features).stage(Stage::Features)?;
    let x_a = features.featurize_all(records).stage(Stage::Features)?;
    let groups = group_by_account(records);
    let n_a = features.n_a();
    let mut metrics = StageMetrics::default();

    let mut model = WbwModel {
        manifest: Manifest {
            format_version: ARCHIVE_VERSION,
            structure,
            dims: Dims {
                n_a,
                n_g: 0,
                n: n_a,
                n_m: 0,
                gru_input: 0,
                n_op: 0,
            },
            seed: run_seed,
            config_hash: config.hash(),
            config: config.clone(),
            training_records: records.len(),
            trained_until: records.iter().map(|r| r.timestamp).max().unwrap_or_default(),
            feature_columns: features.columns().to_vec(),
            metrics: StageMetrics::default(),
        },
        features,
        gbdt: None,
        inner_rf: None,
        scaler: None,
        buckets: config.buckets.clone(),
        grus: Vec::new(),
        rf: None,
    };

    // single-transaction encoding
    let leaves: Option<Vec<Vec<usize>>> = if structure.leading_gbdt() {
        let fit = train_gbdt(&x_a, &y, &config.gbdt).stage(Stage::Gbdt)?;
        let g = fit.model;
        let leaves = (0..x_a.rows())
            .into_par_iter()
            .map(|i| g.leaf_positions(x_a.row(i)))
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Gbdt)?;
        model.manifest.dims.n_g = g.n_g();
        model.manifest.dims.n = n_a + g.n_g();
        metrics.gbdt_loss = fit.loss_history;
        model.gbdt = Some(g);
        Some(leaves)
    } else {
        None
    };
    let leaf_of = |i: usize| leaves.as_ref().map(|l| l[i].as_slice());

    let rf_rows = cap_indices(
        balance_indices(&y, config.rf.legit_per_fraud, seed::derive_seed(run_seed, "rf-balance")),
        config.rf.max_train_rows,
        seed::derive_seed(run_seed, "rf-cap"),
    );
    metrics.rf_rows = rf_rows.len();

    let p_rf: Option<Vec<f64>> = if structure == Structure::Wwb {
        let m = DenseMatrix::from_rows(
            &rf_rows
                .iter()
                .map(|&i| model.single_vector(x_a.row(i), leaf_of(i)))
                .collect::<Vec<_>>(),
            model.manifest.dims.n,
        )?;
        let yy: Vec<bool> = rf_rows.iter().map(|&i| y[i]).collect();
        let inner =
            train_rf(&m, &yy, &config.rf.forest, seed::derive_seed(run_seed, "inner-rf")).stage(Stage::RandomForest)?;
        model.inner_rf = Some(inner);
        let p = (0..records.len())
            .into_par_iter()
            .map(|i| model.inner_probability(x_a.row(i), leaf_of(i)))
            .collect::<Result<Vec<_>>>()?;
        Some(p)
    } else {
        None
    };

    let seq_rows: Option<Vec<SparseRow>> = if structure.uses_gru() {
        model.scaler = Some(InputScaler::fit(&x_a));
        let rows: Vec<SparseRow> = (0..records.len())
            .into_par_iter()
            .map(|i| model.sequence_row(x_a.row(i), leaf_of(i), p_rf.as_ref().map(|p| p[i])))
            .collect();
        let input_dim = model.manifest.dims.n + usize::from(p_rf.is_some());
        model.manifest.dims.gru_input = input_dim;
        model.manifest.dims.n_m = config.gru.network.n_m;
        for b in 0..config.buckets.len() {
            let (set, fallback) = bucket_sequences(&rows, &groups, &y, config, b);
            log::info!(
                "gru bucket {b} (TS {}): {} sequences{}",
                set.timesteps,
                set.samples.len(),
                if fallback { ", all accounts" } else { "" }
            );
            let fit = train_gru(
                &set,
                input_dim,
                &config.gru.network,
                &config.gru.train,
                seed::derive_indexed(run_seed, "gru", b as u64),
            )
            .map_err(|e| match e {
                Error::Training(m) => Error::Training(format!("bucket {b}: {m}")),
                other => other,
            })
            .stage(Stage::Gru)?;
            metrics.gru_samples.push(set.samples.len());
            metrics.gru_fallback.push(fallback);
            metrics.gru_loss.push(fit.loss_history);
            model.grus.push(fit.network);
        }
        Some(rows)
    } else {
        None
    };

    if structure.top() == Top::Forest {
        // V_sq for the forest rows, account by account
        let v_sq: Option<Vec<Vec<f64>>> = match &seq_rows {
            Some(rows) => {
                let mut slot = vec![usize::MAX; records.len()];
                rf_rows.iter().enumerate().for_each(|(k, &i)| slot[i] = k);
                let parts: Vec<Vec<(usize, Vec<f64>)>> = groups
                    .par_iter()
                    .map(|g| {
                        let refs: Vec<&SparseRow> = g.rows.iter().map(|&r| &rows[r]).collect();
                        let (ks, ords): (Vec<usize>, Vec<usize>) = g
                            .rows
                            .iter()
                            .enumerate()
                            .filter(|(_, &r)| slot[r] != usize::MAX)
                            .map(|(pos, &r)| (slot[r], pos + 1))
                            .unzip();
                        if ks.is_empty() {
                            return Ok(Vec::new());
                        }
                        let out = model.gru_outputs(&refs, &ords)?;
                        Ok(ks.into_iter().zip(out.into_iter().map(|o| o.0)).collect())
                    })
                    .collect::<Result<_>>()
                    .stage(Stage::Gru)?;
                let mut v = vec![Vec::new(); rf_rows.len()];
                for (k, vs) in parts.into_iter().flatten() {
                    v[k] = vs;
                }
                Some(v)
            }
            None => None,
        };
        let yy: Vec<bool> = rf_rows.iter().map(|&i| y[i]).collect();
        if structure == Structure::Bww {
            let v = v_sq.as_ref().expect("bww runs a gru");
            let z: Vec<Vec<f64>> = rf_rows
                .iter()
                .zip(v)
                .map(|(&i, s)| [x_a.row(i), s.as_slice()].concat())
                .collect();
            let zm = DenseMatrix::from_rows(&z, n_a + config.gru.network.n_m)?;
            let fit = train_gbdt(&zm, &yy, &config.gbdt).stage(Stage::Gbdt)?;
            model.manifest.dims.n_g = fit.model.n_g();
            metrics.gbdt_loss = fit.loss_history;
            model.gbdt = Some(fit.model);
        }
        let inputs: Vec<Vec<f64>> = rf_rows
            .iter()
            .enumerate()
            .map(|(k, &i)| model.top_input(x_a.row(i), leaf_of(i), v_sq.as_ref().map(|v| v[k].as_slice())))
            .collect::<Result<_>>()
            .stage(Stage::RandomForest)?;
        let width = inputs.first().map_or(0, Vec::len);
        model.manifest.dims.n_op = width;
        let m = DenseMatrix::from_rows(&inputs, width)?;
        let rf = train_rf(&m, &yy, &config.rf.forest, seed::derive_seed(run_seed, "rf")).stage(Stage::RandomForest)?;
        model.rf = Some(rf);
    }

    model.manifest.metrics = metrics;
    model.check_dims()?;
    Ok(model)
}

/// Training sequences of bucket `b`: every window of accounts whose total
/// count falls in the bucket, balanced and capped. Falls back to windows of
/// all accounts when the bucket's own accounts lack a class.
fn bucket_sequences<'a>(
    rows: &'a [SparseRow],
    groups: &'a [AccountGroup],
    y: &[bool],
    config: &RunConfig,
    b: usize,
) -> (WindowSet<'a>, bool) {
    let spec = &config.buckets;
    let collect = |all: bool| {
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for (g, group) in groups.iter().enumerate() {
            if all || spec.bucket_for(group.rows.len()) == Some(b) {
                for (pos, &r) in group.rows.iter().enumerate() {
                    samples.push((g, pos + 1));
                    labels.push(y[r]);
                }
            }
        }
        (samples, labels)
    };
    let (mut samples, mut labels) = collect(false);
    let has_both = |l: &[bool]| l.iter().any(|&v| v) && l.iter().any(|&v| !v);
    let fallback = !has_both(&labels);
    if fallback {
        (samples, labels) = collect(true);
    }
    let keep = cap_indices(
        balance_indices(
            &labels,
            config.gru.legit_per_fraud,
            seed::derive_indexed(config.seed, "gru-balance", b as u64),
        ),
        config.gru.max_train_samples,
        seed::derive_indexed(config.seed, "gru-cap", b as u64),
    );
    (
        WindowSet {
            rows,
            groups,
            samples: keep.iter().map(|&k| samples[k]).collect(),
            labels: keep.iter().map(|&k| labels[k]).collect(),
            timesteps: spec.timesteps(b),
        },
        fallback,
    )
}
