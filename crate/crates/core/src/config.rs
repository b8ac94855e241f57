//! Resolved run configuration. Every artifact records the hash of this
//! structure, so two runs with equal hashes used identical settings.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feature_engineering::FeatureConfig;
use crate::gbdt::GbdtParams;
use crate::gru::{GruConfig, TrainParams};
use crate::random_forest::RfParams;
use crate::sequence_builder::BucketSpec;
use crate::synthetic_data::GeneratorConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GruStageConfig {
    pub network: GruConfig,
    pub train: TrainParams,
    /// Legitimate training sequences kept per fraud sequence.
    pub legit_per_fraud: f64,
    /// Cap on training sequences per bucket.
    pub max_train_samples: usize,
}

impl Default for GruStageConfig {
    fn default() -> Self {
        Self {
            network: GruConfig::default(),
            train: TrainParams::default(),
            legit_per_fraud: 1.0,
            max_train_samples: 4_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RfStageConfig {
    pub forest: RfParams,
    /// Legitimate training rows kept per fraud row.
    pub legit_per_fraud: f64,
    pub max_train_rows: usize,
}

impl Default for RfStageConfig {
    fn default() -> Self {
        Self {
            forest: RfParams::default(),
            legit_per_fraud: 5.0,
            max_train_rows: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// Share of the time-ordered records used for training; the rest is
    /// held out.
    pub train_fraction: f64,
    /// Legitimate:fraud ratios of the imbalance sweep.
    pub ratios: Vec<f64>,
    /// Seeds of repeated runs; each feeds both the generator and training.
    pub seeds: Vec<u64>,
    /// Number of equal time slices of the held-out period for decay curves.
    pub slices: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            ratios: vec![1.0, 10.0, 100.0, 1000.0],
            seeds: vec![0, 1, 2, 3, 4],
            slices: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub gbdt: GbdtParams,
    pub buckets: BucketSpec,
    pub gru: GruStageConfig,
    pub rf: RfStageConfig,
    pub generator: GeneratorConfig,
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbdt.validate()?;
        self.gru.network.validate()?;
        self.gru.train.validate()?;
        self.rf.forest.validate()?;
        self.generator.validate()?;
        if !(self.gru.legit_per_fraud > 0.0) || !(self.rf.legit_per_fraud > 0.0) {
            return Err(Error::Config("legit_per_fraud must be positive".into()));
        }
        if self.gru.max_train_samples < 2 || self.rf.max_train_rows < 2 {
            return Err(Error::Config("training caps must allow at least two samples".into()));
        }
        let e = &self.evaluation;
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must be in (0, 1), got {}",
                e.train_fraction
            )));
        }
        if e.ratios.iter().any(|&r| !(r >= 1.0)) {
            return Err(Error::Config("imbalance ratios must be >= 1".into()));
        }
        if e.slices == 0 {
            return Err(Error::Config("evaluation slices must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }

    /// First 12 hex digits of [`RunConfig::hash`], used in file names.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_keeps_hash() {
        let mut c = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        c.gru.network.n_m = 4;
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
        assert_eq!(c.short_hash().len(), 12);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "gru": {"network": {"hidden": 8}}}"#).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.gru.network.hidden, 8);
        assert_eq!(c.gru.network.n_m, 16);
        c.validate().unwrap();
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 3}"#).is_err());
    }
}
