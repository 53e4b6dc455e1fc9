use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fnr_core::checkpoint::Checkpoint;
use fnr_core::config::{RunConfig, DEFAULT_CONFIG_TOML};
use fnr_core::data::{
    gen_synthetic_clusters, gen_synthetic_xor, load_dataset, save_dataset, Dataset,
    EmbeddingRecord, Encoding, Split,
};
use fnr_core::metrics::{roc_csv, EvalReport};
use fnr_core::model::Mode;
use fnr_core::train::{self, PreparedData, TrainOutcome};
use fnr_core::{FnrError, Result};

#[derive(Parser)]
#[command(
    name = "fnr",
    version,
    about = "Train and evaluate multimodal fake-news classification heads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one mode and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvalArgs),
    /// Train all four modes on the same split and tabulate them.
    Ablate(RunArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write the ROC curve of a checkpoint on a dataset as CSV.
    ExportRoc(EvalArgs),
    /// Write a synthetic dataset (manifest plus records).
    GenData(GenDataArgs),
    /// Print the default config with every key.
    DefaultConfig,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's mode.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset manifest to score.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    dataset: Option<PathBuf>,
    /// Rebuild the test split of a training config instead of reading a manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which manifest split to score.
    #[arg(long, value_enum, default_value_t = SplitArg::Test, conflicts_with = "config")]
    split: SplitArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Scale this parameter's analytic gradient by 1.1, e.g. `classifier.w6`.
    #[arg(long)]
    inject_fault: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Xor,
    Clusters,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Jsonl,
    Binary,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    /// Cluster separation in noise standard deviations.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = EncodingArg::Jsonl)]
    encoding: EncodingArg,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summary(outcome: &TrainOutcome) -> String {
    let r = &outcome.test_report;
    format!(
        "best epoch {} of {}  test accuracy {:.4}  auc {:.4}  micro f1 {:.4}",
        outcome.best_epoch(),
        outcome.history.len(),
        r.accuracy,
        r.auc,
        r.micro_f1
    )
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(&args.run)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| FnrError::io(&cfg.out_dir, e))?;
    let cfg_path = cfg.out_dir.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| FnrError::io(&cfg_path, e))?;
    let outcome = match &args.resume {
        Some(path) => train::resume(&cfg, &Checkpoint::load(path)?)?,
        None => train::train(&cfg)?,
    };
    train::write_run(&cfg.out_dir, &cfg, &outcome)?;
    println!("{}", summary(&outcome));
    println!("run written to {}", cfg.out_dir.display());
    Ok(())
}

fn records_for(args: &EvalArgs) -> Result<Vec<EmbeddingRecord>> {
    if let Some(cfg_path) = &args.config {
        return Ok(PreparedData::from_config(&RunConfig::from_file(cfg_path)?)?.test);
    }
    let manifest = args
        .dataset
        .as_ref()
        .expect("clap requires dataset or config");
    let ds = load_dataset(manifest)?;
    Ok(match args.split {
        SplitArg::Train => ds.split(Split::Train),
        SplitArg::Test => ds.split(Split::Test),
        SplitArg::All => ds.records,
    })
}

fn score(args: &EvalArgs) -> Result<EvalReport> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    train::evaluate_checkpoint(&ck, &records_for(args)?)
}

fn write_to(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| FnrError::io(path, e))
}

fn cmd_evaluate(args: &EvalArgs) -> Result<()> {
    let report = score(args)?;
    print!("{}", report.to_text());
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| FnrError::io(out, e))?;
        write_to(&out.join("report.json"), &report.to_json())?;
        write_to(&out.join("report.txt"), &report.to_text())?;
    }
    Ok(())
}

fn cmd_export_roc(args: &EvalArgs) -> Result<()> {
    let report = score(args)?;
    let csv = roc_csv(&report.roc);
    match &args.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(|e| FnrError::io(out, e))?;
            let path = out.join("roc.csv");
            write_to(&path, &csv)?;
            println!(
                "{} points, auc {:.6}, written to {}",
                report.roc.len(),
                report.auc,
                path.display()
            );
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let table = train::run_ablation(&cfg, Some(&cfg.out_dir))?;
    print!("{}", table.to_text());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let outcome = train::run_gradcheck(args.seed, args.inject_fault.as_deref(), args.tol)?;
    print!("{}", outcome.to_text());
    if outcome.report.passed() {
        Ok(())
    } else {
        Err(FnrError::Numeric(format!(
            "gradient check failed for {}",
            outcome.report.flagged().join(", ")
        )))
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let (name, records) = match args.kind {
        KindArg::Xor => (
            "synthetic_xor",
            gen_synthetic_xor(args.n, args.d, args.seed)?,
        ),
        KindArg::Clusters => (
            "synthetic_clusters",
            gen_synthetic_clusters(args.n, args.d, args.seed, args.separation)?,
        ),
    };
    let encoding = match args.encoding {
        EncodingArg::Jsonl => Encoding::Jsonl,
        EncodingArg::Binary => Encoding::Binary,
    };
    let manifest = save_dataset(&args.out, &Dataset::from_records(name, records)?, encoding)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ExportRoc(a) => cmd_export_roc(a),
        Command::GenData(a) => cmd_gen_data(a),
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG_TOML}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
