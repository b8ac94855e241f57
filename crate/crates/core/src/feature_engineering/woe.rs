//! Weight-of-evidence discretisation of continuous fields.
//!
//! Bins are equal-frequency over the training values. Each bin's WOE is
//! `ln(good_share / bad_share)` where goods are legitimate transactions and
//! bads are fraud; every count is smoothed by [`WOE_SMOOTHING`] so empty
//! bins stay finite.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const WOE_SMOOTHING: f64 = 0.5;

/// `ln((good / good_total) / (bad / bad_total))`, unsmoothed.
pub fn weight_of_evidence(good: f64, good_total: f64, bad: f64, bad_total: f64) -> f64 {
    ((good / good_total) / (bad / bad_total)).ln()
}

/// Smoothed WOE for every bin given per-bin class counts.
pub fn woe_from_counts(goods: &[f64], bads: &[f64]) -> Vec<f64> {
    let bins = goods.len() as f64;
    let good_total: f64 = goods.iter().sum::<f64>() + WOE_SMOOTHING * bins;
    let bad_total: f64 = bads.iter().sum::<f64>() + WOE_SMOOTHING * bins;
    goods
        .iter()
        .zip(bads)
        .map(|(&g, &b)| weight_of_evidence(g + WOE_SMOOTHING, good_total, b + WOE_SMOOTHING, bad_total))
        .collect()
}

/// Fitted WOE table. Bin `i` covers `(edges[i-1], edges[i]]`; the last edge
/// is `f64::MAX` (kept finite so the table survives JSON) and the last bin
/// also takes anything above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WoeBins {
    pub edges: Vec<f64>,
    pub woe: Vec<f64>,
}

impl WoeBins {
    pub fn bin_of(&self, value: f64) -> usize {
        self.edges.partition_point(|&e| e < value).min(self.edges.len() - 1)
    }

    pub fn transform(&self, value: f64) -> f64 {
        self.woe[self.bin_of(value)]
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.edges.is_empty() || self.edges.len() != self.woe.len() {
            return Err(Error::Data("WOE table must have one value per bin".into()));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("WOE bin edges must be strictly increasing".into()));
        }
        if self.woe.iter().any(|w| !w.is_finite()) {
            return Err(Error::Data("WOE values must be finite".into()));
        }
        Ok(())
    }
}

pub fn fit_woe_bins(values: &[f64], labels: &[bool], n_bins: usize) -> Result<WoeBins> {
    if values.len() != labels.len() {
        return Err(Error::dimension("fit_woe_bins labels", values.len(), labels.len()));
    }
    if n_bins == 0 {
        return Err(Error::Config("n_bins must be positive".into()));
    }
    let n_bad = labels.iter().filter(|&&l| l).count();
    if n_bad == 0 || n_bad == labels.len() {
        return Err(Error::Training("WOE binning needs both classes present".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("WOE binning received a non-finite value".into()));
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let mut bins = n_bins;
    if bins > distinct.len() {
        log::warn!(
            "requested {n_bins} WOE bins but only {} distinct values; reducing",
            distinct.len()
        );
        bins = distinct.len();
    }

    let n = sorted.len();
    let max = sorted[n - 1];
    let mut edges: Vec<f64> = Vec::with_capacity(bins);
    for b in 1..bins {
        let cut = sorted[(b * n).div_ceil(bins) - 1];
        if cut < max && edges.last().is_none_or(|&last| cut > last) {
            edges.push(cut);
        }
    }
    edges.push(f64::MAX);

    let mut goods = vec![0.0; edges.len()];
    let mut bads = vec![0.0; edges.len()];
    let table = WoeBins { edges, woe: Vec::new() };
    for (&v, &bad) in values.iter().zip(labels) {
        let b = table.bin_of(v);
        if bad {
            bads[b] += 1.0;
        } else {
            goods[b] += 1.0;
        }
    }
    let woe = woe_from_counts(&goods, &bads);
    Ok(WoeBins { woe, ..table })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_rates_give_zero() {
        assert_eq!(weight_of_evidence(50.0, 100.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn unsmoothed_direct_value() {
        // ln(0.8 / 0.25)
        let w = weight_of_evidence(80.0, 100.0, 5.0, 20.0);
        assert!((w - 1.163_150_809_805_681).abs() < 1e-12, "{w}");
    }

    #[test]
    fn smoothing_keeps_empty_bad_bin_finite() {
        // goods (10, 10) and bads (0, 10): totals 20 and 10, two bins
        let woe = woe_from_counts(&[10.0, 10.0], &[0.0, 10.0]);
        let expected = ((10.5f64 / 21.0) / (0.5 / 11.0)).ln();
        assert!((woe[0] - expected).abs() < 1e-12);
        assert!((woe[0] - 2.397_895_272_798_371).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(fit_woe_bins(&[1.0, 2.0], &[false, false], 2).is_err());
    }

    #[test]
    fn too_many_bins_are_reduced() {
        let t = fit_woe_bins(&[1.0, 1.0, 2.0, 2.0], &[false, true, false, true], 10).unwrap();
        assert_eq!(t.len(), 2);
        t.validate().unwrap();
    }

    #[test]
    fn equal_frequency_edges() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        let labels: Vec<bool> = (0..10).map(|i| i % 3 == 0).collect();
        let t = fit_woe_bins(&values, &labels, 5).unwrap();
        assert_eq!(t.edges, vec![2.0, 4.0, 6.0, 8.0, f64::MAX]);
        assert_eq!(t.bin_of(2.0), 0);
        assert_eq!(t.bin_of(2.5), 1);
        assert_eq!(t.bin_of(1e9), 4);
    }

    #[test]
    fn woe_decreases_when_fraud_rate_rises_with_value() {
        // 5 bins of 100 values; fraud count per bin 2, 5, 10, 20, 40
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (bin, frauds) in [2usize, 5, 10, 20, 40].into_iter().enumerate() {
            for k in 0..100 {
                values.push((bin * 100 + k) as f64);
                labels.push(k < frauds);
            }
        }
        let t = fit_woe_bins(&values, &labels, 5).unwrap();
        assert_eq!(t.len(), 5);
        assert!(t.woe.windows(2).all(|w| w[0] > w[1]), "{:?}", t.woe);
    }
}
