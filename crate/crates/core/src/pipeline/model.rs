use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_vop, Structure, Top};
use crate::codec::{Decoder, Encoder};
use crate::config::RunConfig;
use crate::feature_engineering::{group_by_account, FeaturePipeline, TransactionRecord};
use crate::gbdt::GbdtModel;
use crate::gru::GruNetwork;
use crate::math::{DenseMatrix, SparseRow};
use crate::random_forest::RfModel;
use crate::sequence_builder::BucketSpec;
use crate::{Error, Result, Stage, StageContext};

/// Widths along the stacking chain. Entries of stages a structure does not
/// have are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Artificial features.
    pub n_a: usize,
    /// GBDT leaf encoding.
    pub n_g: usize,
    /// Single-transaction vector handed to later stages (`n_A + n_G` after
    /// a leading GBDT, `n_A` otherwise).
    pub n: usize,
    /// Sequential feature vector.
    pub n_m: usize,
    /// GRU input rows.
    pub gru_input: usize,
    /// Top random forest input.
    pub n_op: usize,
}

impl Dims {
    /// Dimensions of the GBDT -> GRU -> RF stack.
    pub fn stacked(n_a: usize, n_g: usize, n_m: usize) -> Self {
        Self {
            n_a,
            n_g,
            n: n_a + n_g,
            n_m,
            gru_input: n_a + n_g,
            n_op: n_a + n_g + n_m,
        }
    }
}

/// Per-stage training diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StageMetrics {
    pub gbdt_loss: Vec<f64>,
    /// Per bucket: mean loss per epoch.
    pub gru_loss: Vec<Vec<f64>>,
    /// Per bucket: training sequences after balancing.
    pub gru_samples: Vec<usize>,
    /// Per bucket: true when the bucket's own accounts lacked a class and
    /// sequences of all accounts were used instead.
    pub gru_fallback: Vec<bool>,
    pub rf_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub structure: Structure,
    pub dims: Dims,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub training_records: usize,
    /// Latest training timestamp.
    pub trained_until: i64,
    pub feature_columns: Vec<String>,
    pub metrics: StageMetrics,
}

/// Signed `log1p` followed by standardisation, applied to the leading
/// columns of GRU input rows.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn signed_log1p(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

impl InputScaler {
    pub fn fit(x: &DenseMatrix) -> Self {
        let (n, d) = (x.rows().max(1) as f64, x.cols());
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            row.iter().zip(&mut mean).for_each(|(&v, m)| *m += signed_log1p(v));
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((&v, m), s) in row.iter().zip(&mean).zip(&mut var) {
                let c = signed_log1p(v) - m;
                *s += c * c;
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform<'a>(&'a self, x: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&v, (m, s))| (signed_log1p(v) - m) / s)
    }

    pub fn encode(&self, e: &mut Encoder) {
        e.slice(&self.mean).slice(&self.scale);
    }

    pub fn decode(d: &mut Decoder<'_>) -> Result<Self> {
        let mean = d.slice()?;
        let scale = d.slice()?;
        if mean.len() != scale.len() || scale.iter().any(|&s| !(s > 0.0)) {
            return Err(d.error("inconsistent scaler"));
        }
        Ok(Self { mean, scale })
    }
}

/// A trained stack. Immutable once built; scoring takes `&self`.
#[derive(Debug, Clone, PartialEq)]
pub struct WbwModel {
    pub(crate) manifest: Manifest,
    pub(crate) features: FeaturePipeline,
    pub(crate) gbdt: Option<GbdtModel>,
    pub(crate) inner_rf: Option<RfModel>,
    pub(crate) scaler: Option<InputScaler>,
    pub(crate) buckets: BucketSpec,
    pub(crate) grus: Vec<GruNetwork>,
    pub(crate) rf: Option<RfModel>,
}

impl WbwModel {
    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn structure(&self) -> Structure {
        self.manifest.structure
    }

    pub fn dims(&self) -> &Dims {
        &self.manifest.dims
    }

    pub fn features(&self) -> &FeaturePipeline {
        &self.features
    }

    pub fn gbdt(&self) -> Option<&GbdtModel> {
        self.gbdt.as_ref()
    }

    pub fn bucket_spec(&self) -> &BucketSpec {
        &self.buckets
    }

    pub fn gru_nets(&self) -> &[GruNetwork] {
        &self.grus
    }

    pub fn rf(&self) -> Option<&RfModel> {
        self.rf.as_ref()
    }

    /// Checks that every component agrees with the recorded dimensions.
    pub fn check_dims(&self) -> Result<()> {
        let s = self.structure();
        let d = &self.manifest.dims;
        let expect = |ctx: &str, want: usize, got: usize| {
            if want == got {
                Ok(())
            } else {
                Err(Error::dimension(ctx, want, got))
            }
        };
        expect("n_A", d.n_a, self.features.n_a())?;
        let leading = if s.leading_gbdt() { d.n_g } else { 0 };
        expect("n", d.n_a + leading, d.n)?;
        match (&self.gbdt, s) {
            (Some(g), Structure::Bww) => {
                expect("gbdt input", d.n_a + d.n_m, g.n_features())?;
                expect("n_G", d.n_g, g.n_g())?;
            }
            (Some(g), _) => {
                expect("gbdt input", d.n_a, g.n_features())?;
                expect("n_G", d.n_g, g.n_g())?;
            }
            (None, _) => expect("n_G", 0, d.n_g)?,
        }
        if (s.leading_gbdt() || s == Structure::Bww) && self.gbdt.is_none() {
            return Err(Error::Precondition(format!("{s} model without a gbdt")));
        }
        if s.uses_gru() {
            expect("gru count", self.buckets.len(), self.grus.len())?;
            let extra = usize::from(s == Structure::Wwb);
            expect("gru input", d.n + extra, d.gru_input)?;
            for (i, g) in self.grus.iter().enumerate() {
                expect("gru input", d.gru_input, g.input_dim())?;
                expect("n_M", d.n_m, g.n_m())?;
                expect("gru timesteps", self.buckets.timesteps(i), g.timesteps())?;
            }
            let scaler = self
                .scaler
                .as_ref()
                .ok_or_else(|| Error::Precondition("gru model without an input scaler".into()))?;
            expect("scaler width", d.n_a, scaler.width())?;
        } else {
            expect("n_M", 0, d.n_m)?;
        }
        if let Some(inner) = &self.inner_rf {
            expect("inner rf input", d.n, inner.n_op())?;
        }
        match (&self.rf, s.top()) {
            (Some(rf), Top::Forest) => {
                let want = match s {
                    Structure::Rf => d.n_a,
                    Structure::GbdtRf => d.n,
                    Structure::Bw => d.n_a + d.n_m,
                    Structure::Bww => d.n_a + d.n_m + d.n_g,
                    _ => d.n + d.n_m,
                };
                expect("n_op", want, d.n_op)?;
                expect("rf input (n_op)", d.n_op, rf.n_op())?;
            }
            (None, Top::Forest) => return Err(Error::Precondition(format!("{s} model without a forest"))),
            _ => expect("n_op", 0, d.n_op)?,
        }
        Ok(())
    }

    /// Fraud probability of `current` given the account's earlier records,
    /// time-sorted.
    pub fn score(&self, current: &TransactionRecord, history: &[TransactionRecord]) -> Result<f64> {
        if history.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::Precondition("history is not sorted by time".into())).stage(Stage::Scoring);
        }
        let mut account: Vec<&TransactionRecord> = history.iter().collect();
        account.push(current);
        Ok(self.score_account(&account, &[history.len()])?[0])
    }

    /// Scores every record against the earlier records of its own account
    /// in the batch. Output is in input order.
    pub fn score_batch(&self, records: &[TransactionRecord]) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..records.len()).collect();
        self.score_indices(records, &all)
    }

    /// Scores `records[i]` for each `i` in `indices`, using all earlier
    /// records of the same account in `records` as history. Output follows
    /// `indices`.
    pub fn score_indices(&self, records: &[TransactionRecord], indices: &[usize]) -> Result<Vec<f64>> {
        let mut wanted = vec![usize::MAX; records.len()];
        for (k, &i) in indices.iter().enumerate() {
            let slot = wanted
                .get_mut(i)
                .ok_or_else(|| Error::Precondition(format!("record index {i} out of range")))?;
            if *slot != usize::MAX {
                return Err(Error::Precondition(format!("record index {i} listed twice")));
            }
            *slot = k;
        }
        let groups = group_by_account(records);
        let parts: Vec<Vec<(usize, f64)>> = groups
            .par_iter()
            .map(|group| {
                let (targets, ks): (Vec<usize>, Vec<usize>) = group
                    .rows
                    .iter()
                    .enumerate()
                    .filter(|(_, &i)| wanted[i] != usize::MAX)
                    .map(|(pos, &i)| (pos, wanted[i]))
                    .unzip();
                if targets.is_empty() {
                    return Ok(Vec::new());
                }
                let last = *targets.last().expect("non-empty");
                let account: Vec<&TransactionRecord> = group.rows[..=last].iter().map(|&i| &records[i]).collect();
                Ok(ks.into_iter().zip(self.score_account(&account, &targets)?).collect())
            })
            .collect::<Result<_>>()?;
        let mut out = vec![f64::NAN; indices.len()];
        for (k, s) in parts.into_iter().flatten() {
            out[k] = s;
        }
        Ok(out)
    }

    /// Scores positions `targets` (0-based) of one time-sorted account.
    pub(crate) fn score_account(&self, account: &[&TransactionRecord], targets: &[usize]) -> Result<Vec<f64>> {
        let s = self.structure();
        let Some(&last) = targets.iter().max() else {
            return Ok(Vec::new());
        };
        let x_a: Vec<Vec<f64>> = (0..=last)
            .map(|k| {
                account[k].validate()?;
                self.features.featurize(account[k], &account[..k])
            })
            .collect::<Result<_>>()
            .stage(Stage::Features)?;
        let leaves: Option<Vec<Vec<usize>>> = match (&self.gbdt, s.leading_gbdt()) {
            (Some(g), true) => Some(
                x_a.iter()
                    .map(|x| g.leaf_positions(x))
                    .collect::<Result<_>>()
                    .stage(Stage::Gbdt)?,
            ),
            _ => None,
        };
        let seq = if s.uses_gru() {
            let p_rf = match &self.inner_rf {
                Some(_) => Some(
                    (0..=last)
                        .map(|k| self.inner_probability(&x_a[k], leaves.as_ref().map(|l| l[k].as_slice())))
                        .collect::<Result<Vec<f64>>>()?,
                ),
                None => None,
            };
            let rows: Vec<SparseRow> = (0..=last)
                .map(|k| {
                    self.sequence_row(
                        &x_a[k],
                        leaves.as_ref().map(|l| l[k].as_slice()),
                        p_rf.as_ref().map(|p| p[k]),
                    )
                })
                .collect();
            let refs: Vec<&SparseRow> = rows.iter().collect();
            let ordinals: Vec<usize> = targets.iter().map(|&t| t + 1).collect();
            Some(self.gru_outputs(&refs, &ordinals).stage(Stage::Gru)?)
        } else {
            None
        };
        targets
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let (v_sq, prob) = match &seq {
                    Some(o) => (Some(o[j].0.as_slice()), Some(o[j].1)),
                    None => (None, None),
                };
                self.final_probability(&x_a[t], leaves.as_ref().map(|l| l[t].as_slice()), v_sq, prob)
            })
            .collect::<Result<_>>()
            .stage(Stage::Scoring)
    }

    /// Dense `V_sg` for a row (or `x_A` when there is no leading GBDT).
    pub(crate) fn single_vector(&self, x_a: &[f64], leaves: Option<&[usize]>) -> Vec<f64> {
        let mut v = x_a.to_vec();
        if let Some(l) = leaves {
            let n_a = v.len();
            v.resize(n_a + self.manifest.dims.n_g, 0.0);
            for &p in l {
                v[n_a + p] = 1.0;
            }
        }
        v
    }

    pub(crate) fn inner_probability(&self, x_a: &[f64], leaves: Option<&[usize]>) -> Result<f64> {
        let inner = self
            .inner_rf
            .as_ref()
            .ok_or_else(|| Error::Precondition("no inner forest".into()))?;
        inner
            .predict_proba(&self.single_vector(x_a, leaves))
            .stage(Stage::RandomForest)
    }

    /// Scaled GRU input row: artificial features, then leaf indicators, then
    /// the inner forest probability.
    pub(crate) fn sequence_row(&self, x_a: &[f64], leaves: Option<&[usize]>, p_rf: Option<f64>) -> SparseRow {
        let scaler = self.scaler.as_ref().expect("gru structures carry a scaler");
        let mut row = SparseRow::default();
        for (j, v) in scaler.transform(x_a).enumerate() {
            row.push(j, v);
        }
        let mut next = x_a.len();
        if let Some(l) = leaves {
            for &p in l {
                row.push(next + p, 1.0);
            }
            next += self.manifest.dims.n_g;
        }
        if let Some(p) = p_rf {
            row.push(next, p);
        }
        row
    }

    /// `(V_sq, fraud probability)` for windows ending at each 1-based
    /// ordinal, each routed to the bucket of its transaction count.
    pub(crate) fn gru_outputs(&self, rows: &[&SparseRow], ordinals: &[usize]) -> Result<Vec<(Vec<f64>, f64)>> {
        let mut by_bucket: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (j, &o) in ordinals.iter().enumerate() {
            let b = self
                .buckets
                .bucket_for(o)
                .ok_or_else(|| Error::Precondition("window ordinal must be at least 1".into()))?;
            by_bucket.entry(b).or_default().push(j);
        }
        let mut out = vec![(Vec::new(), 0.0); ordinals.len()];
        for (b, js) in by_bucket {
            let ords: Vec<usize> = js.iter().map(|&j| ordinals[j]).collect();
            let last = *ords.iter().max().expect("non-empty bucket group");
            let results = self.grus[b].windowed_outputs(&rows[..last], &ords)?;
            for (j, r) in js.into_iter().zip(results) {
                out[j] = r;
            }
        }
        Ok(out)
    }

    /// Input of the top forest.
    pub(crate) fn top_input(&self, x_a: &[f64], leaves: Option<&[usize]>, v_sq: Option<&[f64]>) -> Result<Vec<f64>> {
        let need_vsq = || v_sq.ok_or_else(|| Error::Precondition("missing V_sq".into()));
        match self.structure() {
            Structure::Rf => Ok(x_a.to_vec()),
            Structure::GbdtRf => Ok(self.single_vector(x_a, leaves)),
            Structure::Wbw => build_vop(&self.single_vector(x_a, leaves), need_vsq()?, &self.manifest.dims),
            Structure::Bw => Ok([x_a, need_vsq()?].concat()),
            Structure::Bww => {
                let mut z = [x_a, need_vsq()?].concat();
                let g = self
                    .gbdt
                    .as_ref()
                    .ok_or_else(|| Error::Precondition("bww model without a gbdt".into()))?;
                let l = g.transform_leaves(&z).stage(Stage::Gbdt)?;
                z.extend(l);
                Ok(z)
            }
            s => Err(Error::Precondition(format!("{s} has no top forest"))),
        }
    }

    pub(crate) fn final_probability(
        &self,
        x_a: &[f64],
        leaves: Option<&[usize]>,
        v_sq: Option<&[f64]>,
        gru_prob: Option<f64>,
    ) -> Result<f64> {
        match self.structure().top() {
            Top::Boosting => self
                .gbdt
                .as_ref()
                .ok_or_else(|| Error::Precondition("missing gbdt".into()))?
                .predict_proba(x_a),
            Top::Softmax => gru_prob.ok_or_else(|| Error::Precondition("missing gru output".into())),
            Top::Forest => {
                let input = self.top_input(x_a, leaves, v_sq)?;
                self.rf
                    .as_ref()
                    .ok_or_else(|| Error::Precondition("missing top forest".into()))?
                    .predict_proba(&input)
            }
        }
    }
}
