//! GRU sequence model ("between" stage): stacked cells, last-node, mean-pool
//! or attention aggregation, a tanh MLP head producing the sequential
//! feature vector `V_sq`, and a two-class softmax used for training.

mod cell;
mod network;
mod train;

use serde::{Deserialize, Serialize};

use crate::math::{DenseMatrix, SparseRow, ZERO_ROW};
use crate::{Error, Result};

pub use cell::{attention_forward, gru_cell_forward, AttentionParams, GruLayerParams};
pub use network::{GruNetwork, SequenceOutput};
pub use train::{
    numeric_gradient_check, numeric_gradient_check_with, random_gradient_check, train_gru, GradCheckSpec, GruFit,
    Stencil, TrainParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    LastNode,
    #[default]
    MeanPool,
    /// Every cell of the first layer reads an attention-weighted average of
    /// the window instead of its own row; the top layer is mean-pooled.
    Attention,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_node" => Ok(Self::LastNode),
            "mean_pool" => Ok(Self::MeanPool),
            "attention" => Ok(Self::Attention),
            _ => Err(Error::Config(format!("unknown aggregation '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GruConfig {
    /// `n_D`.
    pub hidden: usize,
    /// `N_layer`.
    pub layers: usize,
    /// `n_M`, width of the sequential feature vector.
    pub n_m: usize,
    /// Hidden widths of the MLP head before the `n_M` output layer.
    pub head_hidden: Vec<usize>,
    pub aggregation: Aggregation,
    pub attention_dim: usize,
    /// Restrict attention at step `i` to rows `1..=i`.
    pub causal_attention: bool,
}

impl Default for GruConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 1,
            n_m: 16,
            head_hidden: Vec::new(),
            aggregation: Aggregation::MeanPool,
            attention_dim: 16,
            causal_attention: false,
        }
    }
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.n_m == 0 {
            return Err(Error::Config("gru hidden, layers and n_m must be positive".into()));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("gru head layer widths must be positive".into()));
        }
        if self.aggregation == Aggregation::Attention && self.attention_dim == 0 {
            return Err(Error::Config("attention_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-length labelled sequences, rows oldest first, padding as zero rows.
pub trait SequenceSet: Sync {
    fn len(&self) -> usize;
    fn timesteps(&self) -> usize;
    fn label(&self, i: usize) -> bool;
    /// Exactly `timesteps()` rows.
    fn rows(&self, i: usize) -> Vec<&SparseRow>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Owned sequences, convenient for tests and small data.
#[derive(Debug, Clone, Default)]
pub struct SparseSequences {
    timesteps: usize,
    samples: Vec<(Vec<SparseRow>, bool)>,
}

impl SparseSequences {
    pub fn new(timesteps: usize) -> Self {
        Self {
            timesteps,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, rows: Vec<SparseRow>, label: bool) -> Result<()> {
        if rows.len() != self.timesteps {
            return Err(Error::dimension("sequence length", self.timesteps, rows.len()));
        }
        self.samples.push((rows, label));
        Ok(())
    }

    pub fn push_dense(&mut self, inputs: &DenseMatrix, label: bool) -> Result<()> {
        self.push(inputs.iter_rows().map(SparseRow::from_dense).collect(), label)
    }
}

impl SequenceSet for SparseSequences {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn timesteps(&self) -> usize {
        self.timesteps
    }

    fn label(&self, i: usize) -> bool {
        self.samples[i].1
    }

    fn rows(&self, i: usize) -> Vec<&SparseRow> {
        self.samples[i].0.iter().collect()
    }
}

/// `pad` zero rows followed by `data`.
pub fn padded_rows<'a>(pad: usize, data: impl IntoIterator<Item = &'a SparseRow>) -> Vec<&'a SparseRow> {
    let mut rows: Vec<&SparseRow> = std::iter::repeat_n(&ZERO_ROW, pad).collect();
    rows.extend(data);
    rows
}
