//! Mini-batch gradient descent with global-norm clipping, and the finite
//! difference gradient check.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GruConfig, GruNetwork, SequenceSet};
use crate::math::SparseRow;
use crate::{seed, Error, Result};

/// Samples per gradient chunk. Chunks are reduced in a fixed order, so the
/// result does not depend on the number of worker threads.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.1,
            clip_norm: 5.0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("gru batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "invalid gru learning_rate {}",
                self.learning_rate
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("gru clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GruFit {
    pub network: GruNetwork,
    /// Mean training cross-entropy per epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_gru<S: SequenceSet>(
    data: &S,
    input_dim: usize,
    config: &GruConfig,
    params: &TrainParams,
    seed_value: u64,
) -> Result<GruFit> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::Training("no sequences to train on".into()));
    }
    let positives = (0..data.len()).filter(|&i| data.label(i)).count();
    if positives == 0 || positives == data.len() {
        return Err(Error::Training("gru training needs both classes".into()));
    }
    let mut net = GruNetwork::new(
        input_dim,
        data.timesteps(),
        config.clone(),
        seed::derive_seed(seed_value, "init"),
    )?;
    let mut rng = seed::rng(seed::derive_seed(seed_value, "shuffle"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(params.batch_size) {
            let (loss, mut grad) = batch_gradient(&net, data, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gru loss or gradient in epoch {epoch} (loss {loss})"
                )));
            }
            epoch_loss += loss;
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let step = if norm > params.clip_norm {
                params.learning_rate * params.clip_norm / norm
            } else {
                params.learning_rate
            };
            if step != 0.0 {
                for (p, g) in net.params_mut().iter_mut().zip(&grad) {
                    *p -= step * g;
                }
            }
        }
        let mean = epoch_loss / data.len() as f64;
        log::debug!("gru epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok(GruFit {
        network: net,
        loss_history: history,
    })
}

/// Summed loss and gradient over `batch`.
fn batch_gradient<S: SequenceSet>(net: &GruNetwork, data: &S, batch: &[usize]) -> Result<(f64, Vec<f64>)> {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; net.param_count()];
            let mut loss = 0.0;
            for &i in chunk {
                loss += net.accumulate_gradient(&data.rows(i), data.label(i), &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

/// Finite-difference stencil used by the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x + e) - f(x - e)) / 2e`
    #[default]
    Central,
    /// `(-f(x + 2e) + 8 f(x + e) - 8 f(x - e) + f(x - 2e)) / 12e`
    CentralFourthOrder,
    /// `(45 (f(x + e) - f(x - e)) - 9 (f(x + 2e) - f(x - 2e)) + f(x + 3e) - f(x - 3e)) / 60e`
    CentralSixthOrder,
}

/// Largest relative difference `|g_a - g_n| / max(1e-8, |g_a| + |g_n|)`
/// between analytic gradients and central differences, over all parameters.
pub fn numeric_gradient_check(net: &GruNetwork, rows: &[&SparseRow], label: bool, epsilon: f64) -> Result<f64> {
    numeric_gradient_check_with(net, rows, label, epsilon, Stencil::Central)
}

pub fn numeric_gradient_check_with(
    net: &GruNetwork,
    rows: &[&SparseRow],
    label: bool,
    epsilon: f64,
    stencil: Stencil,
) -> Result<f64> {
    let mut analytic = vec![0.0; net.param_count()];
    net.accumulate_gradient(rows, label, &mut analytic)?;
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (k, &ga) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        let mut at = |delta: f64| -> Result<f64> {
            probe.params_mut()[k] = orig + delta;
            let loss = probe.loss(rows, label);
            probe.params_mut()[k] = orig;
            loss
        };
        let gn = match stencil {
            Stencil::Central => (at(epsilon)? - at(-epsilon)?) / (2.0 * epsilon),
            Stencil::CentralFourthOrder => {
                let (p1, m1) = (at(epsilon)?, at(-epsilon)?);
                let (p2, m2) = (at(2.0 * epsilon)?, at(-2.0 * epsilon)?);
                (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * epsilon)
            }
            Stencil::CentralSixthOrder => {
                let mut d = |m: f64| -> Result<f64> { Ok(at(m * epsilon)? - at(-m * epsilon)?) };
                (45.0 * d(1.0)? - 9.0 * d(2.0)? + d(3.0)?) / (60.0 * epsilon)
            }
        };
        worst = worst.max((ga - gn).abs() / (ga.abs() + gn.abs()).max(1e-8));
    }
    Ok(worst)
}

/// Shape and stencil of [`random_gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub timesteps: usize,
    pub n_m: usize,
    pub epsilon: f64,
    pub stencil: Stencil,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        Self {
            input_dim: 4,
            hidden: 5,
            timesteps: 3,
            n_m: 3,
            epsilon: 6e-3,
            stencil: Stencil::CentralSixthOrder,
        }
    }
}

/// Worst relative gradient error over `nets` seeded random networks with the
/// given aggregation. Parameters get a uniform jitter in `(-0.3, 0.3)` so
/// zero-initialised biases are checked away from zero; inputs are standard
/// normal and labels alternate.
pub fn random_gradient_check(
    aggregation: super::Aggregation,
    spec: &GradCheckSpec,
    nets: usize,
    seed_value: u64,
) -> Result<f64> {
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    let config = GruConfig {
        hidden: spec.hidden,
        n_m: spec.n_m,
        attention_dim: spec.hidden,
        aggregation,
        ..GruConfig::default()
    };
    let errors: Vec<f64> = (0..nets)
        .into_par_iter()
        .map(|k| {
            let s = seed::derive_indexed(seed_value, "gradcheck", k as u64);
            let mut net = GruNetwork::new(spec.input_dim, spec.timesteps, config.clone(), s)?;
            let mut rng = seed::rng(seed::derive_seed(s, "jitter"));
            for p in net.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            let rows: Vec<SparseRow> = (0..spec.timesteps)
                .map(|_| {
                    let x: Vec<f64> = (0..spec.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    SparseRow::from_dense(&x)
                })
                .collect();
            let refs: Vec<&SparseRow> = rows.iter().collect();
            numeric_gradient_check_with(&net, &refs, k % 2 == 0, spec.epsilon, spec.stencil)
        })
        .collect::<Result<_>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}
