use proptest::prelude::*;
use wbw_core::sequence_builder::{build_sequences, window_sequence, BucketSpec};

fn vectors(len: usize) -> Vec<Vec<f64>> {
    (1..=len).map(|r| vec![r as f64, -(r as f64) * 10.0]).collect()
}

/// Brute-force expected matrix for transaction `r` of an account.
fn expected(vecs: &[Vec<f64>], r: usize, ts: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    if r <= ts {
        for _ in 0..ts - r {
            rows.push(vec![0.0, 0.0]);
        }
        for v in &vecs[..r] {
            rows.push(v.clone());
        }
    } else {
        for k in (r - ts + 1)..=r {
            rows.push(vecs[k - 1].clone());
        }
    }
    rows
}

#[test]
fn samples_match_brute_force_enumeration() {
    for len in 1..=12usize {
        let vecs = vectors(len);
        let times: Vec<i64> = (0..len as i64).map(|t| t * 60).collect();
        let labels: Vec<bool> = (0..len).map(|i| i % 3 == 1).collect();
        for ts in [3usize, 5, 10] {
            let samples = build_sequences("acct", &times, &labels, ts).unwrap();
            assert_eq!(samples.len(), len);
            for (k, s) in samples.iter().enumerate() {
                let r = k + 1;
                assert_eq!(s.ordinal, r);
                assert_eq!(s.label, labels[k]);
                let m = s.materialize(&vecs, 2).unwrap();
                let got: Vec<Vec<f64>> = m.iter_rows().map(<[f64]>::to_vec).collect();
                assert_eq!(got, expected(&vecs, r, ts), "len {len} ts {ts} r {r}");
                assert_eq!(s.flatten(&vecs, 2).unwrap().len(), 2 * ts + 1);
                assert_eq!(s.pad_rows + s.rows.len(), ts);
                if r > ts {
                    let w = window_sequence("acct", &labels, r, ts).unwrap();
                    assert_eq!(&w, s);
                }
            }
        }
        for e_max in [5usize, 10] {
            let spec = BucketSpec::new(vec![(0, 2), (2, e_max)]).unwrap();
            let b = spec.bucket_for(len).unwrap();
            let want = if len <= 2 { 0 } else { 1 };
            assert_eq!(b, want);
            assert!(spec.timesteps(b) >= len.min(e_max));
        }
    }
}

proptest! {
    #[test]
    fn no_sample_looks_past_its_transaction(
        gaps in prop::collection::vec(0i64..5000, 1..40),
        ts in 1usize..12,
    ) {
        let times: Vec<i64> = gaps.iter().scan(0i64, |t, g| { *t += g; Some(*t) }).collect();
        let labels = vec![false; times.len()];
        let samples = build_sequences("a", &times, &labels, ts).unwrap();
        prop_assert_eq!(samples.len(), times.len());
        for s in &samples {
            let own = times[s.ordinal - 1];
            prop_assert!(s.rows.iter().all(|&r| times[r] <= own));
            prop_assert_eq!(*s.rows.last().unwrap(), s.ordinal - 1);
            prop_assert!(s.rows.windows(2).all(|w| w[1] == w[0] + 1));
            prop_assert_eq!(s.pad_rows + s.rows.len(), ts);
        }
        for w in samples.windows(2).filter(|w| w[0].ordinal >= ts) {
            prop_assert_eq!(&w[0].rows[1..], &w[1].rows[..ts - 1]);
        }
    }
}
