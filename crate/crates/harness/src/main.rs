use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curvlab_harness::{run_to_dir, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "curvlab", version, about = "Curvature and Jacobian experiments on small networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label smoothing sweep on synthetic clusters
    SweepSmoothing(RunArgs),
    /// Input scaling sweep
    SweepScaling(RunArgs),
    /// Coordinate regression from high and low frequency inits
    RegressionFreq(RunArgs),
    /// Weight decay sweep with a held-out split
    SweepWd(RunArgs),
    /// Batch norm train/eval Jacobian gap
    BnCheck(RunArgs),
    /// Sample-maximum and generalisation bounds
    BoundEval(RunArgs),
    /// Monte Carlo maximum and concentration inequality checks
    MaxineqCheck(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::SweepSmoothing(a) => (ExperimentKind::LabelSmoothingSweep, a),
        Command::SweepScaling(a) => (ExperimentKind::InputScalingSweep, a),
        Command::RegressionFreq(a) => (ExperimentKind::RegressionFrequency, a),
        Command::SweepWd(a) => (ExperimentKind::WeightDecaySweep, a),
        Command::BnCheck(a) => (ExperimentKind::BnCheck, a),
        Command::BoundEval(a) => (ExperimentKind::BoundEval, a),
        Command::MaxineqCheck(a) => (ExperimentKind::MaxIneqCheck, a),
    };
    let result = std::fs::read_to_string(&args.config)
        .map_err(Into::into)
        .and_then(|text| ExperimentConfig::from_json(&text))
        .and_then(|cfg| {
            if cfg.experiment != kind {
                return Err(curvlab_harness::HarnessError::Config(format!(
                    "config is for {}, not {}",
                    cfg.experiment.name(),
                    kind.name()
                )));
            }
            run_to_dir(&cfg, args.seed, &args.out, args.threads)
        });
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
