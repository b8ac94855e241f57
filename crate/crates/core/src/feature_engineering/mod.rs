//! Raw transactions to the artificial feature vector.

mod categorical;
mod fitted;
mod record;
mod rfm;
mod woe;

pub use categorical::{fit_categorical_index, index_values, CategoryIndex};
pub use fitted::{risk_flags, FeatureConfig, FeaturePipeline, RiskFit, RiskSet, RiskSetConfig};
pub use record::{
    group_by_account, read_records, read_records_path, write_records, AccountGroup, CategoricalField, NumericField,
    TransactionRecord, CSV_HEADER,
};
pub use rfm::{compute_rfm_features, rfm_width, DEFAULT_RECENCY_SENTINEL};
pub use woe::{fit_woe_bins, weight_of_evidence, woe_from_counts, WoeBins, WOE_SMOOTHING};
