//! `vad` — train, evaluate and benchmark the anomaly-detection backbone on
//! STDF feature tensors.
//!
//! Every run-config key can come from a `key = value` config file
//! (`--config`) and be overridden by the matching `--key value` flag. Errors
//! exit nonzero with a single machine-parseable line: `error[<class>]: ...`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vad_core::attention::{attention_scaling_probe, ProbeRow};
use vad_core::data::synthetic::{generate_synthetic, AnomalyKind, SyntheticSpec};
use vad_core::data::{read_checkpoint, Split};
use vad_core::harness::{
    eval_csv, evaluate, model_from_checkpoint, render_inspect, score_clip_files, train, RunConfig,
};
use vad_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "vad",
    version,
    about = "Video anomaly detection backbone on precomputed features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a manifest of STDF feature files
    Train(TrainArgs),
    /// Score a manifest (or an ordered list of clip files) with a checkpoint
    Eval(EvalArgs),
    /// Time exact vs linear attention across sequence lengths (CSV)
    Bench(BenchArgs),
    /// Per-layer parameter breakdown of a preset or checkpoint
    Inspect(InspectArgs),
    /// Generate a synthetic dataset with temporally-defined anomalies
    Generate(GenerateArgs),
}

/// Run-config keys as flags; unset flags fall back to --config, then defaults.
#[derive(Args, Default)]
struct ConfigOverrides {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    enhancer_channels: Option<String>,
    #[arg(long)]
    enhancer_depth: Option<String>,
    #[arg(long)]
    attention_channels: Option<String>,
    #[arg(long)]
    attention_depth: Option<String>,
    #[arg(long)]
    random_features: Option<String>,
    #[arg(long)]
    ffn_expansion: Option<String>,
    /// Input feature shape CxTxHxW
    #[arg(long)]
    input_shape: Option<String>,
    #[arg(long)]
    margin: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    batch_half: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    adam_eps: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    total_steps: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<String>,
    #[arg(long)]
    model_seed: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    feature_seed: Option<String>,
    #[arg(long)]
    manifest: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    eval_manifest: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    stop_auc: Option<String>,
}

impl ConfigOverrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        // preset first so explicit field flags override it
        if let Some(v) = &self.preset {
            cfg.apply("preset", v)?;
        }
        let pairs: [(&str, &Option<String>); 26] = [
            ("enhancer_channels", &self.enhancer_channels),
            ("enhancer_depth", &self.enhancer_depth),
            ("attention_channels", &self.attention_channels),
            ("attention_depth", &self.attention_depth),
            ("random_features", &self.random_features),
            ("ffn_expansion", &self.ffn_expansion),
            ("input_shape", &self.input_shape),
            ("margin", &self.margin),
            ("lambda", &self.lambda),
            ("batch_half", &self.batch_half),
            ("lr", &self.lr),
            ("weight_decay", &self.weight_decay),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("adam_eps", &self.adam_eps),
            ("epochs", &self.epochs),
            ("total_steps", &self.total_steps),
            ("checkpoint_every", &self.checkpoint_every),
            ("model_seed", &self.model_seed),
            ("data_seed", &self.data_seed),
            ("feature_seed", &self.feature_seed),
            ("manifest", &self.manifest),
            ("out_dir", &self.out_dir),
            ("eval_manifest", &self.eval_manifest),
            ("eval_every", &self.eval_every),
            ("stop_auc", &self.stop_auc),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint (.stck)
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest to score; omit when passing clip files
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Write the score CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ordered clip files from one video, scored individually
    #[arg(value_name = "CLIP", conflicts_with = "manifest")]
    clips: Vec<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sequence lengths
    #[arg(long, default_value = "400,800,1600,3200")]
    lengths: String,
    /// Random-feature count of the linear path
    #[arg(long, default_value_t = 256)]
    random_features: usize,
    /// Channel width
    #[arg(long, default_value_t = 64)]
    channels: usize,
    /// Timed repetitions per length (one warmup is discarded)
    #[arg(long, default_value_t = 5)]
    reps: usize,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    /// Preset name: fast | base
    #[arg(long, conflicts_with = "checkpoint")]
    preset: Option<String>,
    /// Checkpoint whose architecture should be inspected
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory (clips + manifest.tsv)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_normal: usize,
    #[arg(long, default_value_t = 100)]
    n_abnormal: usize,
    /// Feature shape CxTxHxW
    #[arg(long, default_value = "192x16x10x10")]
    shape: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// static_blob | reversed_motion
    #[arg(long, default_value = "reversed_motion")]
    anomaly_kind: String,
    /// train | test (same seed shares drift structure across splits)
    #[arg(long, default_value = "train")]
    split: String,
}

fn parse_shape(s: &str) -> Result<[usize; 4]> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| {
            d.parse()
                .map_err(|_| Error::Config(format!("bad shape component {d:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 4 {
        return Err(Error::Config(format!("shape must be CxTxHxW, got {s:?}")));
    }
    Ok([dims[0], dims[1], dims[2], dims[3]])
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let outcome = train(&cfg)?;
    println!(
        "trained {} steps over {} epochs{}",
        outcome.steps,
        outcome.epochs_run,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    println!("train AUC {:.6}", outcome.final_train_auc);
    if let Some(auc) = outcome.final_eval_auc {
        println!("eval AUC {auc:.6}");
    }
    println!("log {}", outcome.log.display());
    println!("checkpoint {}", outcome.checkpoint.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if let Some(manifest) = &args.manifest {
        let outcome = evaluate(&args.checkpoint, manifest)?;
        let csv = eval_csv(&outcome.rows);
        match &args.out {
            Some(path) => {
                std::fs::write(path, csv).map_err(|e| Error::io(path, e))?;
                println!("AUC {:.6}", outcome.auc);
                println!("scores {}", path.display());
            }
            None => {
                print!("{csv}");
                eprintln!("AUC {:.6}", outcome.auc);
            }
        }
        return Ok(());
    }
    if args.clips.is_empty() {
        return Err(Error::Config(
            "eval needs --manifest or at least one clip file".into(),
        ));
    }
    let rows = score_clip_files(&args.checkpoint, &args.clips)?;
    let csv = eval_csv(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let lengths: Vec<usize> = args
        .lengths
        .split(',')
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad length {l:?}")))
        })
        .collect::<Result<_>>()?;
    if lengths.is_empty() {
        return Err(Error::Config("bench needs at least one length".into()));
    }
    let rows = attention_scaling_probe(&lengths, args.random_features, args.channels, args.reps);
    let mut csv = String::from(ProbeRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv());
        csv.push('\n');
    }
    match &args.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| Error::io(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let (cfg, label) = match (&args.preset, &args.checkpoint) {
        (Some(name), None) => {
            let mut cfg = RunConfig::default();
            cfg.apply("preset", name)?;
            (cfg.model, name.clone())
        }
        (None, Some(path)) => {
            let ck = read_checkpoint(path)?;
            let (model, _, _) = model_from_checkpoint(&ck)?;
            (model.config().clone(), path.display().to_string())
        }
        _ => {
            return Err(Error::Config(
                "inspect needs exactly one of --preset or --checkpoint".into(),
            ))
        }
    };
    print!("{}", render_inspect(&cfg, &label)?);
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let split = match args.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => {
            return Err(Error::Config(format!(
                "split must be train/test, got {other:?}"
            )))
        }
    };
    let spec = SyntheticSpec {
        n_normal: args.n_normal,
        n_abnormal: args.n_abnormal,
        shape: parse_shape(&args.shape)?,
        seed: args.seed,
        kind: AnomalyKind::parse(&args.anomaly_kind)?,
        split,
    };
    let manifest = generate_synthetic(&spec, &args.out)?;
    let (n, a) = manifest.counts();
    println!(
        "wrote {} clips ({n} normal, {a} abnormal) under {}",
        manifest.entries.len(),
        args.out.display()
    );
    println!("manifest {}", args.out.join("manifest.tsv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            ExitCode::FAILURE
        }
    }
}
