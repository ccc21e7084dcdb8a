use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use slicedqa::data::{gen_synthetic, write_jsonl, SynthConfig};
use slicedqa::harness::{
    evaluate, load_dataset, load_split, run_sweep, train_on, write_comparison, write_eval_report,
    write_train_outputs, Checkpoint, DataSource, EvalOptions, RunConfig, Split, SweepSpec,
};
use slicedqa::slicing::SliceMode;

#[derive(Parser, Debug)]
#[command(name = "slicedqa", version, about = "Incremental span-extraction reader: data, training, evaluation and sweeps")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    /// Print per-batch progress.
    #[arg(short, long, global = true, conflicts_with = "quiet")]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic train and dev sets as JSON lines.
    GenData(GenDataArgs),
    /// Train a model and save its best checkpoint.
    Train(RunArgs),
    /// Evaluate a checkpoint and write report files.
    Eval(EvalArgs),
    /// Train every mode × slice size × seed cell and tabulate dev F1.
    Sweep(SweepArgs),
    /// Combine eval summaries of several runs into one table and chart.
    Report(ReportArgs),
}

/// Config file, typed overrides and free-form `--set` overrides, applied
/// in that order.
#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// TOML config file; omitted fields take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set train.patience=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// slicing.mode
    #[arg(long)]
    mode: Option<SliceMode>,
    /// slicing.slice_size
    #[arg(long)]
    slice_size: Option<usize>,
    /// train.seed
    #[arg(long)]
    seed: Option<u64>,
    /// train.max_epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// train.learning_rate
    #[arg(long)]
    lr: Option<f64>,
    /// train.batch_size
    #[arg(long)]
    batch_size: Option<usize>,
    /// train.early_stopping
    #[arg(long)]
    early_stopping: Option<bool>,
    /// train.greedy_training
    #[arg(long)]
    greedy: Option<bool>,
    /// stop.stop_threshold
    #[arg(long)]
    stop_threshold: Option<f64>,
    /// output_dir
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<String> {
        let mut o = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                o.push(format!("{key}={v}"));
            }
        };
        push("slicing.mode", self.mode.map(|m| format!("\"{m}\"")));
        push("slicing.slice_size", self.slice_size.map(|v| v.to_string()));
        push("train.seed", self.seed.map(|v| v.to_string()));
        push("train.max_epochs", self.epochs.map(|v| v.to_string()));
        push("train.learning_rate", self.lr.map(toml_float));
        push("train.batch_size", self.batch_size.map(|v| v.to_string()));
        push("train.early_stopping", self.early_stopping.map(|v| v.to_string()));
        push("train.greedy_training", self.greedy.map(|v| v.to_string()));
        push("stop.stop_threshold", self.stop_threshold.map(toml_float));
        push("output_dir", self.output.as_ref().map(|p| toml_string(p)));
        o.extend(self.set.iter().cloned());
        o
    }

    fn apply_to(&self, base: RunConfig) -> Result<RunConfig> {
        Ok(base.with_overrides(&self.overrides())?)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let base = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
            None => RunConfig::default(),
        };
        self.apply_to(base)
    }
}

fn toml_float(v: f64) -> String {
    toml::Value::Float(v).to_string()
}

fn toml_string(p: &Path) -> String {
    toml::Value::String(p.display().to_string()).to_string()
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Directory for `train.jsonl` and `dev.jsonl`.
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on this file instead of the checkpoint's dev set
    /// (`.jsonl` from `gen-data`, anything else is read as SQuAD v1 JSON).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Score every slice prefix to find the best stopping point.
    #[arg(long)]
    oracle: bool,
    /// Report directory; defaults to `eval` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override fields of the checkpoint's config, e.g. `--set stop.stop_threshold=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated slicing modes.
    #[arg(long, value_delimiter = ',', default_values_t = SliceMode::ALL.to_vec())]
    modes: Vec<SliceMode>,
    /// Comma-separated slice sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 4, 16, 64])]
    sizes: Vec<usize>,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1])]
    seeds: Vec<u64>,
    /// Cells trained at once.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Eval directories or `summary.json` files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

fn gen_data(args: &GenDataArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let train = cfg.data.synthetic.clone();
    let dev = SynthConfig {
        num_examples: cfg.data.num_dev,
        seed: cfg.data.dev_seed,
        ..train.clone()
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (name, synth) in [("train.jsonl", &train), ("dev.jsonl", &dev)] {
        let records = gen_synthetic(synth)?;
        let path = args.out.join(name);
        write_jsonl(&path, &records)?;
        println!("{}: {} examples", path.display(), records.len());
    }
    Ok(())
}

fn train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let data = load_dataset(&cfg)?;
    info!(
        "{} train / {} dev examples, vocabulary {}",
        data.train.len(),
        data.dev.len(),
        data.vocab.len()
    );
    let outcome = train_on(&cfg, &data)?;
    let files = write_train_outputs(&cfg.output_dir, &cfg, &outcome)?;
    println!("best epoch {} dev F1 {:.4}", outcome.best_epoch, outcome.best_dev_f1);
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = ckpt.manifest.config.with_overrides(&args.set)?;
    if let Some(path) = &args.data {
        cfg.data.source = match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => DataSource::Jsonl,
            _ => DataSource::Squad,
        };
        cfg.data.train_path = Some(path.clone());
        cfg.data.dev_path = Some(path.clone());
    }
    let (model, store, _) = ckpt.restore_as(&cfg)?;
    let (text, dropped) = load_split(&cfg, Split::Dev)?;
    if text.is_empty() {
        bail!("no examples to evaluate");
    }
    if dropped > 0 {
        warn!("dropped {dropped} unalignable questions");
    }
    let examples = ckpt.manifest.vocab.encode_all(&text);
    let report = evaluate(&model, &store, &examples, &cfg, EvalOptions { oracle: args.oracle })?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).join("eval"),
    };
    let files = write_eval_report(&out, &report)?;
    let s = &report.summary;
    println!(
        "{} examples: F1 {:.4} EM {:.4}, early-stop F1 {:.4}, read ratio {:.3}",
        s.count, s.f1, s.em, s.f1_early, s.consumption.mean_read_ratio
    );
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let base = args.run.resolve()?;
    let spec = SweepSpec {
        modes: args.modes.clone(),
        sizes: args.sizes.clone(),
        seeds: args.seeds.clone(),
    };
    let data = load_dataset(&base)?;
    let result = run_sweep(&base, &spec, &data, Some(&base.output_dir), args.jobs)?;
    println!("{:<18} {:>6} {:>8} {:>8} {:>8}", "mode", "size", "mean F1", "min", "max");
    for c in &result.cells {
        println!(
            "{:<18} {:>6} {:>8.4} {:>8.4} {:>8.4}",
            c.mode.name(),
            c.slice_size,
            c.mean_f1,
            c.min_f1,
            c.max_f1
        );
    }
    println!("results in {}", base.output_dir.display());
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let rows = write_comparison(&args.out, &args.inputs)?;
    for r in &rows {
        let eff = r.efficiency.map_or("undefined".to_string(), |e| format!("{e:.4}"));
        println!(
            "{}: {} slice {} F1 {:.4} early-stop F1 {:.4} read ratio {:.3} efficiency {eff}",
            r.run, r.mode, r.slice_size, r.f1_full, r.f1_early, r.mean_read_ratio
        );
    }
    println!("results in {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        "warn"
    } else if cli.verbose {
        "debug"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
