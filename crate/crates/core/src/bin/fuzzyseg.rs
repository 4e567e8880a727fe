use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fuzzyseg::harness::{
    build_panels, evaluate, load_checkpoint, read_loss_csv, run_ablation, run_training, save_checkpoint,
    write_report, Dataset, RunOptions, TrainConfig, Variant,
};
use fuzzyseg::metrics::write_eval_csv;
use fuzzyseg::{verify, Error, Result};

/// Environment variable naming the directory that receives run outputs.
const OUTPUT_ROOT_VAR: &str = "FUZZYSEG_OUTPUT_ROOT";
const PANEL_COUNT: usize = 4;

#[derive(Parser)]
#[command(name = "fuzzyseg", version, about = "Semi-supervised segmentation with fuzzy pseudo-labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: under $FUZZYSEG_OUTPUT_ROOT or ./runs).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write checkpoints plus a report.
    Train(ConfigArgs),
    /// Train the component ablations over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated seeds.
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
        /// Comma-separated variants (default: all six).
        #[arg(long)]
        variants: Option<String>,
    },
    /// Evaluate a saved checkpoint on the evaluation scenes.
    Eval {
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the property and gradient suite.
    Verify,
    /// Rebuild the report of a finished training run directory.
    Report { run: PathBuf },
}

fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            TrainConfig::parse_str(&text)?
        }
        None => TrainConfig::default(),
    };
    for o in &args.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(Error::Config(format!("override {o:?} is not key=value")));
        };
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| output_root().join(format!("train-seed{}", cfg.seed)));
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let dataset = Dataset::generate(&cfg)?;
    let split = dataset.split(&cfg)?;
    let options = RunOptions {
        dump_dir: Some(out.clone()),
        iteration_limit: None,
    };
    let outcome = run_training(&cfg, &dataset, &split, &options)?;
    let steps = outcome.records.len();
    save_checkpoint(&out.join("teacher"), &outcome.teacher, &cfg, steps)?;
    save_checkpoint(&out.join("student"), &outcome.student, &cfg, steps)?;
    let panels = build_panels(&outcome.teacher, &cfg.model(), &dataset.eval, PANEL_COUNT)?;
    write_report(&out, &outcome.records, &panels)?;
    let row = &outcome.final_eval.row;
    println!("mIoU {:.4}  pixel accuracy {:.4}  ({steps} iterations)", row.miou, row.pixel_accuracy);
    println!("outputs in {}", out.display());
    Ok(())
}

fn parse_list<T>(text: &str, what: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("empty {what} list")));
    }
    Ok(items)
}

fn ablate(args: &ConfigArgs, seeds: &str, variants: Option<&str>) -> Result<()> {
    let cfg = load_config(args)?;
    let seeds = parse_list(seeds, "seed", |s| {
        s.parse::<u64>().map_err(|_| Error::Config(format!("bad seed {s:?}")))
    })?;
    let variants = match variants {
        Some(v) => parse_list(v, "variant", |s| s.parse::<Variant>())?,
        None => Variant::ALL.to_vec(),
    };
    let out = args.out.clone().unwrap_or_else(|| output_root().join("ablation"));
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    let dataset = Dataset::generate(&cfg)?;
    let options = RunOptions {
        dump_dir: Some(out.clone()),
        iteration_limit: None,
    };
    let report = run_ablation(&cfg, &variants, &seeds, &dataset, &options)?;
    report.write_csv(BufWriter::new(fs::File::create(out.join("ablation.csv"))?))?;
    let table = report.table();
    fs::write(out.join("ablation.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    let (store, cfg, step) = load_checkpoint(checkpoint)?;
    let dataset = Dataset::generate(&cfg)?;
    let summary = evaluate(&store, &cfg.model(), &dataset.eval, "eval")?;
    let out = out.map_or_else(|| checkpoint.to_path_buf(), Path::to_path_buf);
    fs::create_dir_all(&out)?;
    write_eval_csv(BufWriter::new(fs::File::create(out.join("eval.csv"))?), &[summary.row.clone()])?;
    println!(
        "step {step}: mIoU {:.4}  pixel accuracy {:.4}  per-class {:?}",
        summary.row.miou, summary.row.pixel_accuracy, summary.row.iou.iou
    );
    Ok(())
}

fn report(run: &Path) -> Result<()> {
    let records = read_loss_csv(BufReader::new(fs::File::open(run.join("loss.csv"))?))?;
    let (store, cfg, _) = load_checkpoint(&run.join("teacher"))?;
    let dataset = Dataset::generate(&cfg)?;
    let panels = build_panels(&store, &cfg.model(), &dataset.eval, PANEL_COUNT)?;
    write_report(&run.join("report"), &records, &panels)?;
    println!("report written to {}", run.join("report").display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Ablate { cfg, seeds, variants } => ablate(cfg, seeds, variants.as_deref()),
        Command::Eval { checkpoint, out } => eval(checkpoint, out.as_deref()),
        Command::Report { run } => report(run),
        Command::Verify => {
            let outcomes = verify::run_suite();
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().all(|o| o.passed) {
                Ok(())
            } else {
                return ExitCode::from(4);
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
