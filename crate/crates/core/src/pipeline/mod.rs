//! End-to-end stacking: feature pipeline, GBDT leaf encoding, one GRU per
//! count bucket, and a random forest over `V_op = [V_sg || V_sq]`. The same
//! machinery trains the comparison structures (standalone models, two-stage
//! stacks and the WWB/BWW orderings), persists them as sectioned archives
//! and scores new transactions.

mod archive;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use archive::{load_model, read_manifest, save_model, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use model::{Dims, InputScaler, Manifest, StageMetrics, WbwModel};
pub use train::{train_structure, train_variant, train_wbw};

/// Model structure. `Wbw`, `Wwb` and `Bww` are the three stacking orders of
/// a GBDT ("within"), a GRU ("between") and a random forest ("within").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Random forest on the artificial features.
    Rf,
    /// GBDT probability on the artificial features.
    Gbdt,
    /// Random forest on `V_sg`.
    GbdtRf,
    /// GRU softmax on artificial-feature sequences.
    Gru,
    /// GRU softmax on `V_sg` sequences.
    Wb,
    /// Random forest on `[x_A || V_sq]`.
    Bw,
    /// Random forest on `[V_sg || V_sq]`.
    Wbw,
    /// GRU softmax on `[V_sg || p_rf]` sequences, where `p_rf` is a random
    /// forest probability on `V_sg`.
    Wwb,
    /// GRU on artificial features, then a GBDT on `[x_A || V_sq]` and a
    /// random forest on `[x_A || V_sq || leaves]`.
    Bww,
}

/// How the final probability is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Top {
    Forest,
    Boosting,
    Softmax,
}

impl Structure {
    pub const ALL: [Structure; 9] = [
        Self::Rf,
        Self::Gbdt,
        Self::GbdtRf,
        Self::Gru,
        Self::Wb,
        Self::Bw,
        Self::Wbw,
        Self::Wwb,
        Self::Bww,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rf => "rf",
            Self::Gbdt => "gbdt",
            Self::GbdtRf => "gbdt_rf",
            Self::Gru => "gru",
            Self::Wb => "wb",
            Self::Bw => "bw",
            Self::Wbw => "wbw",
            Self::Wwb => "wwb",
            Self::Bww => "bww",
        }
    }

    /// A GBDT encodes single transactions before anything else runs.
    pub(crate) fn leading_gbdt(self) -> bool {
        matches!(self, Self::Gbdt | Self::GbdtRf | Self::Wb | Self::Wbw | Self::Wwb)
    }

    pub(crate) fn uses_gru(self) -> bool {
        matches!(
            self,
            Self::Gru | Self::Wb | Self::Bw | Self::Wbw | Self::Wwb | Self::Bww
        )
    }

    pub(crate) fn top(self) -> Top {
        match self {
            Self::Gbdt => Top::Boosting,
            Self::Gru | Self::Wb | Self::Wwb => Top::Softmax,
            Self::Rf | Self::GbdtRf | Self::Bw | Self::Wbw | Self::Bww => Top::Forest,
        }
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model structure `{s}`")))
    }
}

/// `V_op = [V_sg || V_sq]`, checked against the model dimensions.
pub fn build_vop(v_sg: &[f64], v_sq: &[f64], dims: &Dims) -> Result<Vec<f64>> {
    if dims.n_m == 0 {
        return Err(Error::Precondition("n_M must be at least 1".into()));
    }
    if v_sg.len() != dims.n {
        return Err(Error::dimension("V_sg", dims.n, v_sg.len()));
    }
    if v_sq.len() != dims.n_m {
        return Err(Error::dimension("V_sq", dims.n_m, v_sq.len()));
    }
    let mut v = Vec::with_capacity(dims.n + dims.n_m);
    v.extend_from_slice(v_sg);
    v.extend_from_slice(v_sq);
    Ok(v)
}
