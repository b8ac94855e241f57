use std::borrow::Borrow;

use super::record::TransactionRecord;
use crate::{Error, Result};

pub const DEFAULT_RECENCY_SENTINEL: f64 = 1e9;

/// Number of values emitted by [`compute_rfm_features`] for `n_windows`
/// trailing windows.
pub fn rfm_width(n_windows: usize) -> usize {
    3 + 2 * n_windows + 1
}

/// Recency/frequency/monetary aggregates of `current` given the account's
/// earlier transactions.
///
/// Layout: `[amount, previous_amount, amount - previous_amount,
/// (count_w, total_w) for each window w, seconds_since_previous]`. A window
/// `w` covers `(t - w, t]`. Without history the previous amount is 0 and
/// the recency is `sentinel`.
pub fn compute_rfm_features<R: Borrow<TransactionRecord>>(
    history: &[R],
    current: &TransactionRecord,
    windows: &[i64],
    sentinel: f64,
) -> Result<Vec<f64>> {
    let t = current.timestamp;
    let mut prev_ts = i64::MIN;
    for h in history {
        let ts = h.borrow().timestamp;
        if ts < prev_ts {
            return Err(Error::Precondition("history is not sorted by time".into()));
        }
        prev_ts = ts;
    }
    if history.last().is_some_and(|h| h.borrow().timestamp > t) {
        return Err(Error::Precondition(
            "history contains a transaction later than the current one".into(),
        ));
    }

    let mut out = Vec::with_capacity(rfm_width(windows.len()));
    let previous = history.last().map(|h| h.borrow());
    let prev_amount = previous.map_or(0.0, |p| p.amount);
    out.push(current.amount);
    out.push(prev_amount);
    out.push(current.amount - prev_amount);
    for &w in windows {
        let lower = t - w;
        let start = history.partition_point(|h| h.borrow().timestamp <= lower);
        let in_window = &history[start..];
        out.push(in_window.len() as f64);
        out.push(in_window.iter().map(|h| h.borrow().amount).sum());
    }
    out.push(previous.map_or(sentinel, |p| (t - p.timestamp) as f64));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t: i64, amount: f64) -> TransactionRecord {
        TransactionRecord {
            account_id: "a".into(),
            timestamp: t,
            amount,
            location_code: "L".into(),
            merchant_type: "M".into(),
            channel: "pos".into(),
            label: None,
        }
    }

    const T: i64 = 1_000_000;

    #[test]
    fn empty_history() {
        let f = compute_rfm_features::<TransactionRecord>(&[], &rec(T, 100.0), &[3600], 1e9).unwrap();
        assert_eq!(f, vec![100.0, 0.0, 100.0, 0.0, 0.0, 1e9]);
    }

    #[test]
    fn one_prior_transaction() {
        let f = compute_rfm_features(&[rec(T - 100, 50.0)], &rec(T, 200.0), &[3600], 1e9).unwrap();
        assert_eq!(f, vec![200.0, 50.0, 150.0, 1.0, 50.0, 100.0]);
    }

    #[test]
    fn window_lower_bound_is_open() {
        let f = compute_rfm_features(&[rec(T - 3600, 50.0)], &rec(T, 1.0), &[3600], 1e9).unwrap();
        assert_eq!(f[3], 0.0);
        assert_eq!(f[4], 0.0);
        let f = compute_rfm_features(&[rec(T - 3599, 50.0)], &rec(T, 1.0), &[3600], 1e9).unwrap();
        assert_eq!(f[3], 1.0);
    }

    #[test]
    fn unsorted_history_is_rejected() {
        let err = compute_rfm_features(&[rec(T - 5, 1.0), rec(T - 10, 1.0)], &rec(T, 1.0), &[60], 1e9);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let err = compute_rfm_features(&[rec(T + 5, 1.0)], &rec(T, 1.0), &[60], 1e9);
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn window_aggregates_match_brute_force(
            mut offsets in proptest::collection::vec(0i64..20_000, 0..=20),
            amounts in proptest::collection::vec(0.0f64..1000.0, 20),
            windows in proptest::collection::vec(1i64..10_000, 1..4),
        ) {
            offsets.sort_unstable_by(|a, b| b.cmp(a));
            let history: Vec<TransactionRecord> = offsets
                .iter()
                .zip(&amounts)
                .map(|(&o, &a)| rec(T - o, a))
                .collect();
            let current = rec(T, 10.0);
            let f = compute_rfm_features(&history, &current, &windows, 1e9).unwrap();
            for (k, &w) in windows.iter().enumerate() {
                let mut count = 0.0;
                let mut total = 0.0;
                for h in &history {
                    if h.timestamp > T - w && h.timestamp <= T {
                        count += 1.0;
                        total += h.amount;
                    }
                }
                prop_assert_eq!(f[3 + 2 * k], count);
                prop_assert!((f[4 + 2 * k] - total).abs() <= 1e-9 * total.max(1.0));
            }
        }
    }
}
