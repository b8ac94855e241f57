use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::categorical::{index_values, CategoryIndex};
use super::record::{group_by_account, CategoricalField, NumericField, TransactionRecord};
use super::rfm::{compute_rfm_features, rfm_width, DEFAULT_RECENCY_SENTINEL};
use super::woe::{fit_woe_bins, WoeBins};
use crate::math::DenseMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Trailing window lengths in seconds.
    pub windows: Vec<i64>,
    pub recency_sentinel: f64,
    pub woe_bins: usize,
    pub woe_fields: Vec<NumericField>,
    pub categorical_fields: Vec<CategoricalField>,
    pub risk_sets: Vec<RiskSetConfig>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            windows: vec![3_600, 86_400, 604_800, 2_592_000],
            recency_sentinel: DEFAULT_RECENCY_SENTINEL,
            woe_bins: 10,
            woe_fields: vec![NumericField::Amount, NumericField::Hour],
            categorical_fields: CategoricalField::ALL.to_vec(),
            risk_sets: vec![RiskSetConfig {
                field: CategoricalField::Location,
                values: Vec::new(),
                fit: Some(RiskFit::default()),
            }],
        }
    }
}

/// A configured high-risk set. Values listed explicitly are always in the
/// set; with `fit` set, categories whose training fraud rate is at least
/// `lift` times the overall rate (over at least `min_count` transactions)
/// are added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskSetConfig {
    pub field: CategoricalField,
    #[serde(default)]
    pub values: Vec<String>,
    #[serde(default)]
    pub fit: Option<RiskFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskFit {
    pub min_count: usize,
    pub lift: f64,
}

impl Default for RiskFit {
    fn default() -> Self {
        Self {
            min_count: 20,
            lift: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSet {
    pub field: CategoricalField,
    pub values: BTreeSet<String>,
}

/// One 0/1 flag per risk set: 1 iff the record's field value is in the set.
pub fn risk_flags(record: &TransactionRecord, risk_sets: &[RiskSet]) -> Vec<bool> {
    risk_sets
        .iter()
        .map(|s| s.values.contains(record.categorical(s.field)))
        .collect()
}

fn fit_risk_set(records: &[TransactionRecord], cfg: &RiskSetConfig) -> Result<RiskSet> {
    let mut values: BTreeSet<String> = cfg.values.iter().cloned().collect();
    if let Some(fit) = &cfg.fit {
        let labels = labels_of(records)?;
        let overall = labels.iter().filter(|&&l| l).count() as f64 / labels.len().max(1) as f64;
        let mut stats: HashMap<&str, (usize, usize)> = HashMap::new();
        for (r, &l) in records.iter().zip(&labels) {
            let e = stats.entry(r.categorical(cfg.field)).or_default();
            e.0 += 1;
            e.1 += usize::from(l);
        }
        for (value, (n, frauds)) in stats {
            if n >= fit.min_count && overall > 0.0 && frauds as f64 / n as f64 >= fit.lift * overall {
                values.insert(value.to_string());
            }
        }
    }
    Ok(RiskSet {
        field: cfg.field,
        values,
    })
}

fn labels_of(records: &[TransactionRecord]) -> Result<Vec<bool>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.label
                .ok_or_else(|| Error::Data(format!("record {i} has no label; fitting needs labels")))
        })
        .collect()
}

/// Fitted, immutable transformer from raw records to the artificial
/// feature vector.
///
/// Column order is fixed: hour of day; the RFM block; one WOE value per
/// configured numeric field; one ordinal per categorical field; one flag
/// per risk set. [`FeaturePipeline::columns`] names every column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePipeline {
    pub windows: Vec<i64>,
    pub recency_sentinel: f64,
    pub category_indexes: Vec<CategoryIndex>,
    pub woe: Vec<(NumericField, WoeBins)>,
    pub risk_sets: Vec<RiskSet>,
    columns: Vec<String>,
}

impl FeaturePipeline {
    pub fn fit(records: &[TransactionRecord], config: &FeatureConfig) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("cannot fit features on an empty record set".into()));
        }
        if config.windows.iter().any(|&w| w <= 0) {
            return Err(Error::Config("feature windows must be positive".into()));
        }
        for r in records {
            r.validate()?;
        }
        let category_indexes = config
            .categorical_fields
            .iter()
            .map(|&f| index_values(f, records.iter().map(|r| r.categorical(f))))
            .collect();
        let mut woe = Vec::new();
        if !config.woe_fields.is_empty() {
            let labels = labels_of(records)?;
            for &field in &config.woe_fields {
                let values: Vec<f64> = records.iter().map(|r| r.numeric(field)).collect();
                woe.push((field, fit_woe_bins(&values, &labels, config.woe_bins)?));
            }
        }
        let risk_sets = config
            .risk_sets
            .iter()
            .map(|c| fit_risk_set(records, c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(
            config.windows.clone(),
            config.recency_sentinel,
            category_indexes,
            woe,
            risk_sets,
        ))
    }

    pub fn from_parts(
        windows: Vec<i64>,
        recency_sentinel: f64,
        category_indexes: Vec<CategoryIndex>,
        woe: Vec<(NumericField, WoeBins)>,
        risk_sets: Vec<RiskSet>,
    ) -> Self {
        let mut columns = vec!["hour_of_day".to_string()];
        columns.extend(["amount", "prev_amount", "amount_diff"].map(String::from));
        for w in &windows {
            columns.push(format!("count_{w}s"));
            columns.push(format!("total_{w}s"));
        }
        columns.push("recency_s".into());
        columns.extend(woe.iter().map(|(f, _)| format!("woe_{}", f.name())));
        columns.extend(category_indexes.iter().map(|c| format!("ord_{}", c.field().name())));
        columns.extend(risk_sets.iter().map(|s| format!("risk_{}", s.field.name())));
        debug_assert_eq!(
            columns.len(),
            1 + rfm_width(windows.len()) + woe.len() + category_indexes.len() + risk_sets.len()
        );
        Self {
            windows,
            recency_sentinel,
            category_indexes,
            woe,
            risk_sets,
            columns,
        }
    }

    pub fn n_a(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Feature vector of `record` given the account's earlier transactions
    /// (time-sorted).
    pub fn featurize<R: std::borrow::Borrow<TransactionRecord>>(
        &self,
        record: &TransactionRecord,
        history: &[R],
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.n_a());
        out.push(record.hour_of_day());
        out.extend(compute_rfm_features(
            history,
            record,
            &self.windows,
            self.recency_sentinel,
        )?);
        for (field, bins) in &self.woe {
            out.push(bins.transform(record.numeric(*field)));
        }
        for idx in &self.category_indexes {
            out.push(f64::from(idx.ordinal(record.categorical(idx.field()))));
        }
        out.extend(
            risk_flags(record, &self.risk_sets)
                .into_iter()
                .map(|f| f64::from(u8::from(f))),
        );
        Ok(out)
    }

    /// Featurises every record against its own account's earlier records.
    /// Rows come back in input order.
    pub fn featurize_all(&self, records: &[TransactionRecord]) -> Result<DenseMatrix> {
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); records.len()];
        for group in group_by_account(records) {
            let ordered: Vec<&TransactionRecord> = group.rows.iter().map(|&i| &records[i]).collect();
            for (k, &i) in group.rows.iter().enumerate() {
                records[i].validate()?;
                rows[i] = self.featurize(&records[i], &ordered[..k])?;
            }
        }
        DenseMatrix::from_rows(&rows, self.n_a())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(account: &str, t: i64, amount: f64, loc: &str, merchant: &str, fraud: bool) -> TransactionRecord {
        TransactionRecord {
            account_id: account.into(),
            timestamp: t,
            amount,
            location_code: loc.into(),
            merchant_type: merchant.into(),
            channel: "pos".into(),
            label: Some(fraud),
        }
    }

    fn training_set() -> Vec<TransactionRecord> {
        let mut v = Vec::new();
        for i in 0..40 {
            let fraud = i % 5 == 0;
            let loc = if fraud { "L7" } else { "L1" };
            v.push(rec(
                &format!("a{}", i % 4),
                1_000 + i * 100,
                10.0 + i as f64,
                loc,
                "M1",
                fraud,
            ));
        }
        v
    }

    #[test]
    fn risk_flag_examples() {
        let sets = vec![RiskSet {
            field: CategoricalField::Location,
            values: ["L1", "L7"].map(String::from).into(),
        }];
        assert_eq!(risk_flags(&rec("a", 1, 1.0, "L1", "M", false), &sets), vec![true]);
        assert_eq!(risk_flags(&rec("a", 1, 1.0, "L2", "M", false), &sets), vec![false]);
        let empty = vec![RiskSet {
            field: CategoricalField::Location,
            values: BTreeSet::new(),
        }];
        assert_eq!(risk_flags(&rec("a", 1, 1.0, "L1", "M", false), &empty), vec![false]);
    }

    #[test]
    fn width_matches_configured_blocks() {
        let cfg = FeatureConfig::default();
        let p = FeaturePipeline::fit(&training_set(), &cfg).unwrap();
        let expected = 1
            + rfm_width(cfg.windows.len())
            + cfg.woe_fields.len()
            + cfg.categorical_fields.len()
            + cfg.risk_sets.len();
        assert_eq!(p.n_a(), expected);
        assert_eq!(p.columns().len(), expected);
        let m = p.featurize_all(&training_set()).unwrap();
        assert_eq!(m.cols(), expected);
        assert!(m.is_finite());
    }

    #[test]
    fn featurize_is_deterministic() {
        let data = training_set();
        let p = FeaturePipeline::fit(&data, &FeatureConfig::default()).unwrap();
        let a = p.featurize(&data[5], &data[..1]).unwrap();
        let b = p.featurize(&data[5], &data[..1]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unseen_merchant_gets_reserved_ordinal() {
        let data = training_set();
        let p = FeaturePipeline::fit(&data, &FeatureConfig::default()).unwrap();
        let novel = rec("z", 99_999, 5.0, "L1", "never-seen", false);
        let v = p.featurize::<TransactionRecord>(&novel, &[]).unwrap();
        let slot = p.columns().iter().position(|c| c == "ord_merchant_type").unwrap();
        assert_eq!(v[slot], 0.0);
    }

    #[test]
    fn fitted_risk_set_picks_fraud_heavy_location() {
        let data = training_set();
        let cfg = FeatureConfig {
            risk_sets: vec![RiskSetConfig {
                field: CategoricalField::Location,
                values: vec![],
                fit: Some(RiskFit {
                    min_count: 5,
                    lift: 2.0,
                }),
            }],
            ..FeatureConfig::default()
        };
        let p = FeaturePipeline::fit(&data, &cfg).unwrap();
        assert!(p.risk_sets[0].values.contains("L7"));
        assert!(!p.risk_sets[0].values.contains("L1"));
    }

    #[test]
    fn unlabeled_data_cannot_fit_woe() {
        let mut data = training_set();
        data[3].label = None;
        assert!(matches!(
            FeaturePipeline::fit(&data, &FeatureConfig::default()),
            Err(Error::Data(_))
        ));
    }
}
