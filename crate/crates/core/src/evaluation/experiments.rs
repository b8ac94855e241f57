use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{best_f1, pr_curve, BestF1, PrCurve};
use crate::config::RunConfig;
use crate::feature_engineering::TransactionRecord;
use crate::gru::Aggregation;
use crate::math::median;
use crate::pipeline::{train_structure, Structure, WbwModel};
use crate::sequence_builder::BucketSpec;
use crate::synthetic_data::generate;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub model_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: EvalMetadata,
    pub curve: PrCurve,
    pub best_f1: BestF1,
}

impl EvalReport {
    pub fn new(metadata: EvalMetadata, scores: &[f64], labels: &[bool]) -> Result<Self> {
        let curve = pr_curve(scores, labels)?;
        let best_f1 = best_f1(&curve.points)?;
        Ok(Self {
            metadata,
            curve,
            best_f1,
        })
    }
}

/// Training records (the earliest `train_fraction` by time, ties in input
/// order) and the indices of the held-out rest.
pub fn time_split(records: &[TransactionRecord], train_fraction: f64) -> (Vec<TransactionRecord>, Vec<usize>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by_key(|&i| records[i].timestamp);
    let cut = (records.len() as f64 * train_fraction).floor() as usize;
    let mut train_idx = order[..cut].to_vec();
    train_idx.sort_unstable();
    let mut test = order[cut..].to_vec();
    test.sort_unstable();
    (train_idx.into_iter().map(|i| records[i].clone()).collect(), test)
}

fn labels_at(records: &[TransactionRecord], idx: &[usize]) -> Result<Vec<bool>> {
    idx.iter()
        .map(|&i| {
            records[i]
                .label
                .ok_or_else(|| Error::Data(format!("evaluation record {} has no label", i + 1)))
        })
        .collect()
}

/// Scores held-out records with full account history and evaluates them.
pub fn evaluate_holdout(
    model: &WbwModel,
    records: &[TransactionRecord],
    held_out: &[usize],
    metadata: EvalMetadata,
) -> Result<EvalReport> {
    let labels = labels_at(records, held_out)?;
    let scores = model.score_indices(records, held_out)?;
    EvalReport::new(metadata, &scores, &labels)
}

/// One trained-and-evaluated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub structure: Structure,
    pub seed: u64,
    pub average_precision: f64,
    pub best_f1: f64,
    pub threshold: f64,
    pub config_hash: String,
}

fn train_and_evaluate(
    label: &str,
    records: &[TransactionRecord],
    config: &RunConfig,
    structure: Structure,
    dataset_id: &str,
) -> Result<RunResult> {
    let (train, held_out) = time_split(records, config.evaluation.train_fraction);
    let model = train_structure(&train, config, structure)?;
    let report = evaluate_holdout(
        &model,
        records,
        &held_out,
        EvalMetadata {
            model_id: label.to_string(),
            dataset_id: dataset_id.to_string(),
            seed: config.seed,
            config_hash: config.hash(),
        },
    )?;
    Ok(RunResult {
        label: label.to_string(),
        structure,
        seed: config.seed,
        average_precision: report.curve.average_precision,
        best_f1: report.best_f1.f1,
        threshold: report.best_f1.threshold,
        config_hash: config.hash(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ratio: f64,
    pub structure: Structure,
    pub median_best_f1: f64,
    pub median_average_precision: f64,
    pub runs: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// One cell per (ratio, structure), ratios in the given order.
    pub cells: Vec<SweepCell>,
    pub runs: Vec<(f64, RunResult)>,
}

/// For every ratio and every evaluation seed, generates data with that
/// ratio and seed, trains each structure with the same seed and evaluates
/// on the held-out period. Cells report medians over seeds.
pub fn imbalance_sweep(config: &RunConfig, ratios: &[f64], kinds: &[Structure]) -> Result<SweepReport> {
    if let Some(r) = ratios.iter().find(|&&r| !(r >= 1.0)) {
        return Err(Error::Config(format!("imbalance ratio {r} is below 1")));
    }
    let seeds = &config.evaluation.seeds;
    if seeds.is_empty() {
        return Err(Error::Config("the sweep needs at least one seed".into()));
    }
    let mut runs = Vec::new();
    let mut cells = Vec::new();
    for &ratio in ratios {
        let mut per_kind: BTreeMap<Structure, Vec<RunResult>> = BTreeMap::new();
        for &s in seeds {
            let mut cfg = config.clone();
            cfg.seed = s;
            cfg.generator.seed = s;
            cfg.generator.imbalance_ratio = ratio;
            let data = generate(&cfg.generator)?;
            let dataset_id = format!("synthetic-ratio{ratio}-seed{s}");
            for &kind in kinds {
                log::info!("sweep: ratio {ratio}, seed {s}, {kind}");
                let r = train_and_evaluate(kind.name(), &data.records, &cfg, kind, &dataset_id)
                    .map_err(|e| e.context(format!("sweep cell (ratio {ratio}, {kind}, seed {s})")))?;
                per_kind.entry(kind).or_default().push(r.clone());
                runs.push((ratio, r));
            }
        }
        for &kind in kinds {
            let rs = &per_kind[&kind];
            let mut cfg = config.clone();
            cfg.generator.imbalance_ratio = ratio;
            cells.push(SweepCell {
                ratio,
                structure: kind,
                median_best_f1: median(&rs.iter().map(|r| r.best_f1).collect::<Vec<_>>()),
                median_average_precision: median(&rs.iter().map(|r| r.average_precision).collect::<Vec<_>>()),
                runs: rs.len(),
                config_hash: cfg.hash(),
            });
        }
    }
    Ok(SweepReport { cells, runs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub slice: usize,
    pub start: i64,
    pub end: i64,
    pub transactions: usize,
    pub frauds: usize,
    /// `None` when the slice is empty or has a single class.
    pub best_f1: Option<f64>,
    pub average_precision: Option<f64>,
}

/// Splits `[start, end)` into `slices` equal spans and evaluates the fixed
/// model on the records of `held_out` falling in each. The series always has
/// `slices` points; slices without both classes are skipped with a warning.
pub fn temporal_decay(
    model: &WbwModel,
    records: &[TransactionRecord],
    held_out: &[usize],
    slices: usize,
) -> Result<Vec<DecayPoint>> {
    if slices == 0 {
        return Err(Error::Config("decay needs at least one slice".into()));
    }
    let labels = labels_at(records, held_out)?;
    let scores = model.score_indices(records, held_out)?;
    let (start, end) = match (
        held_out.iter().map(|&i| records[i].timestamp).min(),
        held_out.iter().map(|&i| records[i].timestamp).max(),
    ) {
        (Some(a), Some(b)) => (a, b + 1),
        _ => (0, 0),
    };
    let width = ((end - start) as f64 / slices as f64).max(f64::MIN_POSITIVE);
    let mut points = Vec::with_capacity(slices);
    for k in 0..slices {
        let lo = start + (k as f64 * width).round() as i64;
        let hi = if k + 1 == slices {
            end
        } else {
            start + ((k + 1) as f64 * width).round() as i64
        };
        let members: Vec<usize> = (0..held_out.len())
            .filter(|&j| (lo..hi).contains(&records[held_out[j]].timestamp))
            .collect();
        let s: Vec<f64> = members.iter().map(|&j| scores[j]).collect();
        let l: Vec<bool> = members.iter().map(|&j| labels[j]).collect();
        let frauds = l.iter().filter(|&&v| v).count();
        let (best, ap) = if frauds == 0 || frauds == l.len() {
            log::warn!("decay slice {k} has {} records and {frauds} frauds; skipped", l.len());
            (None, None)
        } else {
            let c = pr_curve(&s, &l)?;
            (Some(best_f1(&c.points)?.f1), Some(c.average_precision))
        };
        points.push(DecayPoint {
            slice: k,
            start: lo,
            end: hi,
            transactions: l.len(),
            frauds,
            best_f1: best,
            average_precision: ap,
        });
    }
    Ok(points)
}

/// A named structure and the configuration it is trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareEntry {
    pub label: String,
    pub structure: Structure,
    pub config: RunConfig,
}

/// Every structure under `config`, plus WBW with attention-fed cells, WBW
/// with one fixed TS=20 bucket, and that fixed-TS model with attention.
pub fn default_comparison(config: &RunConfig) -> Result<Vec<CompareEntry>> {
    let mut entries: Vec<CompareEntry> = Structure::ALL
        .iter()
        .map(|&s| CompareEntry {
            label: s.name().to_string(),
            structure: s,
            config: config.clone(),
        })
        .collect();
    let mut attention = config.clone();
    attention.gru.network.aggregation = Aggregation::Attention;
    let mut fixed = config.clone();
    fixed.buckets = BucketSpec::fixed(20)?;
    let mut fixed_attention = fixed.clone();
    fixed_attention.gru.network.aggregation = Aggregation::Attention;
    for (label, cfg) in [
        ("wbw_attention", attention),
        ("wbw_fixed_ts20", fixed),
        ("wbw_fixed_ts20_attention", fixed_attention),
    ] {
        entries.push(CompareEntry {
            label: label.into(),
            structure: Structure::Wbw,
            config: cfg,
        });
    }
    Ok(entries)
}

/// Trains every entry on the same time split of `records` and reports AP
/// and best F1 per entry, in entry order.
pub fn compare_structures(
    records: &[TransactionRecord],
    entries: &[CompareEntry],
    dataset_id: &str,
) -> Result<Vec<RunResult>> {
    entries
        .iter()
        .map(|e| {
            log::info!("compare: {}", e.label);
            train_and_evaluate(&e.label, records, &e.config, e.structure, dataset_id)
                .map_err(|err| err.context(format!("comparison row `{}`", e.label)))
        })
        .collect()
}
