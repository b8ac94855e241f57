//! `wbw`: generate synthetic data, train stacked models, score and evaluate.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wbw_core::gru::Aggregation;
use wbw_core::pipeline::Structure;
use wbw_core::{Error, ErrorClass};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_TRAINING: u8 = 4;
/// `gradcheck` ran but the error was above tolerance.
const EXIT_CHECK_FAILED: u8 = 1;

#[derive(Parser, Debug)]
#[command(name = "wbw", version, about = "GBDT -> GRU -> random forest fraud detection")]
struct Cli {
    /// Run seed; overrides `seed` and `generator.seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// TOML run configuration. Omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic transaction CSV and a manifest next to it.
    Generate(GenerateArgs),
    /// Write the artificial feature matrix of a transaction CSV.
    Featurize(FeaturizeArgs),
    /// Train a model and save it as an archive.
    Train(TrainArgs),
    /// Score a transaction CSV with a saved model.
    Score(ScoreArgs),
    /// Evaluation reports.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Compare analytic GRU gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the manifest of a saved model.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    accounts: Option<usize>,
    /// Legitimate transactions per fraud transaction.
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long)]
    drift: Option<f64>,
}

#[derive(Args, Debug)]
struct FeaturizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Use the feature pipeline of this model instead of fitting one.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Order {
    Wbw,
    Wwb,
    Bww,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stacking order of the three-stage model.
    #[arg(long, value_enum, default_value = "wbw", conflicts_with = "structure")]
    order: Order,
    /// Train a baseline or partial stack instead (rf, gbdt, gbdt_rf, gru,
    /// wb, bw, wbw, wwb, bww).
    #[arg(long)]
    structure: Option<Structure>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum EvaluateCommand {
    /// PR curve and best F1 of a saved model.
    Pr(ModelEvalArgs),
    /// Best F1 and AP across imbalance ratios on generated data.
    Sweep(SweepArgs),
    /// Best F1 per time slice of the evaluation period.
    Decay(DecayArgs),
    /// Train and evaluate every structure on one dataset.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct ModelEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Evaluate every record instead of only those after the training period.
    #[arg(long)]
    all: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated ratios (default: from the config).
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Comma-separated structures.
    #[arg(long, value_delimiter = ',', default_value = "rf,gru,wbw")]
    kinds: Vec<Structure>,
}

#[derive(Args, Debug)]
struct DecayArgs {
    #[command(flatten)]
    eval: ModelEvalArgs,
    /// Number of slices (default: from the config).
    #[arg(long)]
    slices: Option<usize>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    All,
    LastNode,
    MeanPool,
    Attention,
}

impl Mode {
    fn aggregations(self) -> Vec<Aggregation> {
        match self {
            Mode::All => vec![Aggregation::LastNode, Aggregation::MeanPool, Aggregation::Attention],
            Mode::LastNode => vec![Aggregation::LastNode],
            Mode::MeanPool => vec![Aggregation::MeanPool],
            Mode::Attention => vec![Aggregation::Attention],
        }
    }
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random networks per aggregation mode.
    #[arg(long, default_value_t = 100)]
    nets: usize,
    #[arg(long, value_enum, default_value = "all")]
    mode: Mode,
    /// Pass threshold on the worst relative error.
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err.class() {
        ErrorClass::Config => EXIT_USAGE,
        ErrorClass::Data | ErrorClass::Io => EXIT_DATA,
        ErrorClass::Training => EXIT_TRAINING,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        })
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wbw_core::Stage;

    #[test]
    fn exit_codes_by_error_class() {
        let staged = |e: Error| Error::Stage {
            stage: Stage::Gru,
            source: Box::new(e),
        };
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&staged(Error::Data("x".into()))), EXIT_DATA);
        assert_eq!(exit_code(&staged(Error::dimension("n_op", 3, 4))), EXIT_DATA);
        assert_eq!(exit_code(&staged(Error::Training("x".into()))), EXIT_TRAINING);
        assert_eq!(
            exit_code(&Error::Training("x".into()).context("sweep cell")),
            EXIT_TRAINING
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
