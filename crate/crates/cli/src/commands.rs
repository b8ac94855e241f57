use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use wbw_core::config::RunConfig;
use wbw_core::evaluation::{
    compare_structures, default_comparison, evaluate_holdout, imbalance_sweep, report_path, temporal_decay, write_csv,
    write_jsonl, EvalMetadata,
};
use wbw_core::feature_engineering::{read_records_path, write_records, FeaturePipeline, TransactionRecord};
use wbw_core::gru::{random_gradient_check, GradCheckSpec};
use wbw_core::pipeline::{load_model, read_manifest, save_model, train_structure, Structure, WbwModel};
use wbw_core::synthetic_data::{generate, GeneratorManifest};
use wbw_core::{Error, Result};

use crate::{
    Cli, Command, CompareArgs, DecayArgs, EvaluateCommand, FeaturizeArgs, GenerateArgs, GradcheckArgs, ModelEvalArgs,
    Order, ScoreArgs, SweepArgs, TrainArgs, EXIT_CHECK_FAILED,
};

/// Config file (if any) with the command-line overrides applied.
fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.generator.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<u8> {
    let mut config = resolve_config(cli)?;
    match &cli.command {
        Command::Generate(a) => generate_cmd(&mut config, a),
        Command::Featurize(a) => featurize(&config, a),
        Command::Train(a) => train(&config, a),
        Command::Score(a) => score(a),
        Command::Evaluate(EvaluateCommand::Pr(a)) => evaluate_pr(a),
        Command::Evaluate(EvaluateCommand::Sweep(a)) => sweep(&config, a),
        Command::Evaluate(EvaluateCommand::Decay(a)) => decay(&config, a),
        Command::Evaluate(EvaluateCommand::Compare(a)) => compare(&config, a),
        Command::Gradcheck(a) => gradcheck(&config, a),
        Command::Inspect(a) => {
            let manifest = read_manifest(&a.model)?;
            println!("{}", serde_json::to_string_pretty(&manifest)?);
            Ok(None)
        }
    }
    .map(|code| code.unwrap_or(0))
}

type Outcome = Result<Option<u8>>;

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

#[derive(Serialize)]
struct DataManifest<'a> {
    config_hash: String,
    #[serde(flatten)]
    generator: &'a GeneratorManifest,
}

fn generate_cmd(config: &mut RunConfig, a: &GenerateArgs) -> Outcome {
    let g = &mut config.generator;
    if let Some(n) = a.accounts {
        g.n_accounts = n;
    }
    if let Some(r) = a.ratio {
        g.imbalance_ratio = r;
    }
    if let Some(d) = a.drift {
        g.drift = d;
    }
    config.validate()?;
    let data = generate(&config.generator)?;
    write_records(BufWriter::new(File::create(&a.out)?), &data.records)?;
    let manifest_path = sidecar(&a.out, ".manifest.json");
    write_json(
        &manifest_path,
        &DataManifest {
            config_hash: config.hash(),
            generator: &data.manifest,
        },
    )?;
    let m = &data.manifest;
    println!(
        "{} records ({} fraud) for {} accounts -> {}",
        data.records.len(),
        m.fraud_transactions,
        m.accounts,
        a.out.display()
    );
    Ok(None)
}

fn featurize(config: &RunConfig, a: &FeaturizeArgs) -> Outcome {
    let records = read_records_path(&a.input)?;
    let (pipeline, hash) = match &a.model {
        Some(path) => {
            let model = load_model(path)?;
            let hash = model.manifest().config_hash.clone();
            (model.features().clone(), hash)
        }
        None => (FeaturePipeline::fit(&records, &config.features)?, config.hash()),
    };
    let x = pipeline.featurize_all(&records)?;
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(records.len() + 1);
    let mut header = vec!["account_id".to_string(), "timestamp".to_string()];
    header.extend(pipeline.columns().iter().cloned());
    header.extend(["label".to_string(), "config_hash".to_string()]);
    rows.push(header);
    for (r, v) in records.iter().zip(x.iter_rows()) {
        let mut row = vec![r.account_id.clone(), r.timestamp.to_string()];
        row.extend(v.iter().map(f64::to_string));
        row.push(r.label.map_or(String::new(), |l| u8::from(l).to_string()));
        row.push(hash.clone());
        rows.push(row);
    }
    write_csv(&a.out, &rows)?;
    println!(
        "{} rows x {} features -> {}",
        records.len(),
        pipeline.n_a(),
        a.out.display()
    );
    Ok(None)
}

fn train(config: &RunConfig, a: &TrainArgs) -> Outcome {
    let structure = a.structure.unwrap_or(match a.order {
        Order::Wbw => Structure::Wbw,
        Order::Wwb => Structure::Wwb,
        Order::Bww => Structure::Bww,
    });
    let records = read_records_path(&a.input)?;
    let model = train_structure(&records, config, structure)?;
    save_model(&model, &a.out)?;
    let d = model.dims();
    println!(
        "{structure}: n_A {} n_G {} n_M {} n_op {} config {} -> {}",
        d.n_a,
        d.n_g,
        d.n_m,
        d.n_op,
        config.short_hash(),
        a.out.display()
    );
    Ok(None)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    account_id: &'a str,
    timestamp: i64,
    score: f64,
    config_hash: &'a str,
}

fn score(a: &ScoreArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let records = read_records_path(&a.input)?;
    let scores = model.score_batch(&records)?;
    let hash = &model.manifest().config_hash;
    let rows: Vec<ScoreRow> = records
        .iter()
        .zip(&scores)
        .map(|(r, &score)| ScoreRow {
            account_id: &r.account_id,
            timestamp: r.timestamp,
            score,
            config_hash: hash,
        })
        .collect();
    write_csv(&a.out, &rows)?;
    println!("{} scores -> {}", rows.len(), a.out.display());
    Ok(None)
}

/// Indices of the records to evaluate: those after the model's training
/// period, or all of them.
fn evaluation_indices(model: &WbwModel, records: &[TransactionRecord], all: bool) -> Result<Vec<usize>> {
    let until = model.manifest().trained_until;
    let idx: Vec<usize> = (0..records.len())
        .filter(|&i| all || records[i].timestamp > until)
        .collect();
    if idx.is_empty() {
        return Err(Error::Data(format!(
            "no records after the training period (trained until {until}); pass --all to evaluate every record"
        )));
    }
    Ok(idx)
}

fn metadata(model: &WbwModel, input: &Path) -> EvalMetadata {
    let m = model.manifest();
    EvalMetadata {
        model_id: format!("{}-{}", m.structure, &m.config_hash[..12]),
        dataset_id: input.display().to_string(),
        seed: m.seed,
        config_hash: m.config_hash.clone(),
    }
}

#[derive(Serialize)]
struct PrRow<'a> {
    threshold: f64,
    precision: f64,
    recall: f64,
    true_positives: usize,
    false_positives: usize,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct PrSummary<'a> {
    #[serde(flatten)]
    metadata: &'a EvalMetadata,
    average_precision: f64,
    best_f1: f64,
    threshold: f64,
    positives: usize,
    negatives: usize,
}

fn evaluate_pr(a: &ModelEvalArgs) -> Outcome {
    let model = load_model(&a.model)?;
    let records = read_records_path(&a.input)?;
    let idx = evaluation_indices(&model, &records, a.all)?;
    let report = evaluate_holdout(&model, &records, &idx, metadata(&model, &a.input))?;
    let hash = &report.metadata.config_hash;
    fs::create_dir_all(&a.out_dir)?;
    let rows: Vec<PrRow> = report
        .curve
        .points
        .iter()
        .map(|p| PrRow {
            threshold: p.threshold,
            precision: p.precision,
            recall: p.recall,
            true_positives: p.true_positives,
            false_positives: p.false_positives,
            config_hash: hash,
        })
        .collect();
    write_csv(&report_path(&a.out_dir, "pr", hash, "csv"), &rows)?;
    let summary = PrSummary {
        metadata: &report.metadata,
        average_precision: report.curve.average_precision,
        best_f1: report.best_f1.f1,
        threshold: report.best_f1.threshold,
        positives: report.curve.positives,
        negatives: report.curve.negatives,
    };
    write_jsonl(&report_path(&a.out_dir, "pr", hash, "jsonl"), &[&summary])?;
    println!(
        "AP {:.4}  best F1 {:.4} at {:.4}  ({} fraud / {} legit)",
        summary.average_precision, summary.best_f1, summary.threshold, summary.positives, summary.negatives
    );
    Ok(None)
}

#[derive(Serialize)]
struct SweepRunRow<'a> {
    ratio: f64,
    label: &'a str,
    structure: Structure,
    seed: u64,
    average_precision: f64,
    best_f1: f64,
    threshold: f64,
    config_hash: &'a str,
}

fn sweep(config: &RunConfig, a: &SweepArgs) -> Outcome {
    let ratios = a.ratios.clone().unwrap_or_else(|| config.evaluation.ratios.clone());
    let report = imbalance_sweep(config, &ratios, &a.kinds)?;
    let hash = config.hash();
    fs::create_dir_all(&a.out_dir)?;
    write_csv(&report_path(&a.out_dir, "sweep", &hash, "csv"), &report.cells)?;
    let runs: Vec<SweepRunRow> = report
        .runs
        .iter()
        .map(|(ratio, r)| SweepRunRow {
            ratio: *ratio,
            label: &r.label,
            structure: r.structure,
            seed: r.seed,
            average_precision: r.average_precision,
            best_f1: r.best_f1,
            threshold: r.threshold,
            config_hash: &r.config_hash,
        })
        .collect();
    write_csv(&report_path(&a.out_dir, "sweep-runs", &hash, "csv"), &runs)?;
    for c in &report.cells {
        println!(
            "ratio {:>7}  {:<8} median best F1 {:.4}  median AP {:.4}",
            c.ratio, c.structure, c.median_best_f1, c.median_average_precision
        );
    }
    Ok(None)
}

#[derive(Serialize)]
struct DecayRow<'a> {
    slice: usize,
    start: i64,
    end: i64,
    transactions: usize,
    frauds: usize,
    best_f1: Option<f64>,
    average_precision: Option<f64>,
    config_hash: &'a str,
}

fn decay(config: &RunConfig, a: &DecayArgs) -> Outcome {
    let model = load_model(&a.eval.model)?;
    let records = read_records_path(&a.eval.input)?;
    let idx = evaluation_indices(&model, &records, a.eval.all)?;
    let slices = a.slices.unwrap_or(config.evaluation.slices);
    let series = temporal_decay(&model, &records, &idx, slices)?;
    let meta = metadata(&model, &a.eval.input);
    fs::create_dir_all(&a.eval.out_dir)?;
    let rows: Vec<DecayRow> = series
        .iter()
        .map(|p| DecayRow {
            slice: p.slice,
            start: p.start,
            end: p.end,
            transactions: p.transactions,
            frauds: p.frauds,
            best_f1: p.best_f1,
            average_precision: p.average_precision,
            config_hash: &meta.config_hash,
        })
        .collect();
    write_csv(&report_path(&a.eval.out_dir, "decay", &meta.config_hash, "csv"), &rows)?;
    write_jsonl(
        &report_path(&a.eval.out_dir, "decay", &meta.config_hash, "jsonl"),
        &[&meta],
    )?;
    for p in &series {
        let f1 = p.best_f1.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "slice {}  {} records  {} fraud  best F1 {f1}",
            p.slice, p.transactions, p.frauds
        );
    }
    Ok(None)
}

fn compare(config: &RunConfig, a: &CompareArgs) -> Outcome {
    let records = read_records_path(&a.input)?;
    let entries = default_comparison(config)?;
    let rows = compare_structures(&records, &entries, &a.input.display().to_string())?;
    let hash = config.hash();
    fs::create_dir_all(&a.out_dir)?;
    write_csv(&report_path(&a.out_dir, "compare", &hash, "csv"), &rows)?;
    for r in &rows {
        println!(
            "{:<26} AP {:.4}  best F1 {:.4}",
            r.label, r.average_precision, r.best_f1
        );
    }
    Ok(None)
}

fn gradcheck(config: &RunConfig, a: &GradcheckArgs) -> Outcome {
    let spec = GradCheckSpec::default();
    let mut worst = 0.0f64;
    for mode in a.mode.aggregations() {
        let err = random_gradient_check(mode, &spec, a.nets, config.seed)?;
        println!("{mode:?}: max relative error {err:.3e} over {} networks", a.nets);
        worst = worst.max(err);
    }
    if worst < a.tolerance {
        println!("gradient check passed (tolerance {:e})", a.tolerance);
        Ok(None)
    } else {
        println!("gradient check FAILED (tolerance {:e})", a.tolerance);
        Ok(Some(EXIT_CHECK_FAILED))
    }
}
