//! Per-account sequential samples: bucket assignment by transaction count,
//! zero-padded fixed-length windows and balanced sampling.
//!
//! A sample refers to the account's transactions by position instead of
//! copying feature vectors; `materialize` builds the dense `TS x n` input.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::math::DenseMatrix;
use crate::{seed, Error, Result};

/// Transaction-count buckets `(S_i, E_i]`, contiguous from zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BucketRepr", into = "BucketRepr")]
pub struct BucketSpec {
    ranges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BucketRepr {
    ranges: Vec<(usize, usize)>,
    e_max: usize,
}

impl TryFrom<BucketRepr> for BucketSpec {
    type Error = Error;

    fn try_from(r: BucketRepr) -> Result<Self> {
        let spec = Self::new(r.ranges)?;
        if spec.e_max() != r.e_max {
            return Err(Error::Config(format!(
                "bucket e_max {} must equal the upper edge of the last range ({})",
                r.e_max,
                spec.e_max()
            )));
        }
        Ok(spec)
    }
}

impl From<BucketSpec> for BucketRepr {
    fn from(s: BucketSpec) -> Self {
        let e_max = s.e_max();
        Self {
            ranges: s.ranges,
            e_max,
        }
    }
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            ranges: vec![(0, 5), (5, 10), (10, 20), (20, 40), (40, 100)],
        }
    }
}

impl BucketSpec {
    pub fn new(ranges: Vec<(usize, usize)>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(Error::Config("bucket spec needs at least one range".into()));
        }
        let mut expect = 0;
        for &(s, e) in &ranges {
            if s != expect || e <= s {
                return Err(Error::Config(format!(
                    "bucket ranges must be contiguous (S, E] intervals starting at 0; got ({s}, {e}] after {expect}"
                )));
            }
            expect = e;
        }
        Ok(Self { ranges })
    }

    /// One bucket holding every account, windowed at `timesteps`.
    pub fn fixed(timesteps: usize) -> Result<Self> {
        Self::new(vec![(0, timesteps)])
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn e_max(&self) -> usize {
        self.ranges[self.ranges.len() - 1].1
    }

    /// Timesteps (`E_i`) of bucket `i`.
    pub fn timesteps(&self, i: usize) -> usize {
        self.ranges[i].1
    }

    /// Bucket holding an account with `count` transactions; counts above
    /// `E_M` go to the last bucket. Zero has no bucket.
    pub fn bucket_for(&self, count: usize) -> Option<usize> {
        if count == 0 {
            return None;
        }
        Some(
            self.ranges
                .partition_point(|&(_, e)| e < count)
                .min(self.ranges.len() - 1),
        )
    }
}

/// Bucket index per account. Accounts without transactions are dropped.
pub fn assign_buckets<K: Ord + Clone + std::fmt::Debug>(
    counts: &BTreeMap<K, usize>,
    spec: &BucketSpec,
) -> BTreeMap<K, usize> {
    let mut out = BTreeMap::new();
    for (k, &c) in counts {
        match spec.bucket_for(c) {
            Some(b) => {
                out.insert(k.clone(), b);
            }
            None => log::warn!("account {k:?} has no transactions; excluded from buckets"),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceSample {
    pub account_id: String,
    /// 1-based position of the labelled transaction within its account.
    pub ordinal: usize,
    pub timesteps: usize,
    pub pad_rows: usize,
    /// Account-local positions of the data rows, oldest first.
    pub rows: Vec<usize>,
    pub label: bool,
}

impl SequenceSample {
    /// Window ending at transaction `ordinal` (1-based): the last
    /// `min(ordinal, timesteps)` transactions, zero-padded in front.
    pub fn ending_at(account_id: &str, ordinal: usize, timesteps: usize, label: bool) -> Self {
        debug_assert!(ordinal >= 1 && timesteps >= 1);
        let len = ordinal.min(timesteps);
        Self {
            account_id: account_id.to_string(),
            ordinal,
            timesteps,
            pad_rows: timesteps - len,
            rows: (ordinal - len..ordinal).collect(),
            label,
        }
    }

    /// Dense `TS x n` input; `vectors` are the account's rows in time order.
    pub fn materialize<R: AsRef<[f64]>>(&self, vectors: &[R], n: usize) -> Result<DenseMatrix> {
        let mut m = DenseMatrix::zeros(self.timesteps, n);
        for (k, &r) in self.rows.iter().enumerate() {
            let v = vectors
                .get(r)
                .ok_or_else(|| Error::Precondition(format!("sample refers to row {r} of {}", vectors.len())))?
                .as_ref();
            if v.len() != n {
                return Err(Error::dimension("sequence input row", n, v.len()));
            }
            m.row_mut(self.pad_rows + k).copy_from_slice(v);
        }
        Ok(m)
    }

    /// Row-major inputs followed by the label: length `n * TS + 1`.
    pub fn flatten<R: AsRef<[f64]>>(&self, vectors: &[R], n: usize) -> Result<Vec<f64>> {
        let m = self.materialize(vectors, n)?;
        let mut out: Vec<f64> = m.iter_rows().flatten().copied().collect();
        out.push(if self.label { 1.0 } else { 0.0 });
        Ok(out)
    }
}

fn check_sorted(times: &[i64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Precondition(
            "account transactions are not sorted by time".into(),
        ));
    }
    Ok(())
}

/// One sample per transaction of a time-sorted account. Transactions past
/// position `timesteps` use a moving window of that size.
pub fn build_sequences(
    account_id: &str,
    times: &[i64],
    labels: &[bool],
    timesteps: usize,
) -> Result<Vec<SequenceSample>> {
    if times.is_empty() {
        return Err(Error::Precondition(format!("account {account_id} has no transactions")));
    }
    if labels.len() != times.len() {
        return Err(Error::dimension("sequence labels", times.len(), labels.len()));
    }
    if timesteps == 0 {
        return Err(Error::Config("timesteps must be positive".into()));
    }
    check_sorted(times)?;
    Ok((1..=times.len())
        .map(|r| SequenceSample::ending_at(account_id, r, timesteps, labels[r - 1]))
        .collect())
}

/// Moving-window sample for transaction `t > e_max`: rows `t-(E_M-1)..=t`.
pub fn window_sequence(account_id: &str, labels: &[bool], t: usize, e_max: usize) -> Result<SequenceSample> {
    if t <= e_max {
        return Err(Error::Precondition(format!(
            "window_sequence needs t > E_M ({t} <= {e_max}); use build_sequences"
        )));
    }
    if t > labels.len() {
        return Err(Error::Precondition(format!(
            "ordinal {t} beyond {} transactions",
            labels.len()
        )));
    }
    Ok(SequenceSample::ending_at(account_id, t, e_max, labels[t - 1]))
}

/// Deterministic undersampling of negatives to `legit_per_fraud` per
/// positive. Returns kept indices in ascending order; all positives stay.
pub fn balance_indices(labels: &[bool], legit_per_fraud: f64, seed_value: u64) -> Vec<usize> {
    let (pos, mut neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i]);
    let keep = ((pos.len() as f64 * legit_per_fraud).round() as usize).max(1);
    if keep < neg.len() {
        neg.shuffle(&mut seed::rng(seed_value));
        neg.truncate(keep);
    }
    let mut out = pos;
    out.extend(neg);
    out.sort_unstable();
    out
}
