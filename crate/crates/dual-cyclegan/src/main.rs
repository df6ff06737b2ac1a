//! Command-line front end: corpus preprocessing, two-stage training, WAV
//! super-resolution inference, and objective evaluation.
//!
//! Exit codes: 0 success, 2 usage/configuration error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use once_cell::sync::Lazy;
use serde_json::Value;

use dual_cyclegan::data::{
    load_manifest, preprocess_corpus, save_manifest, split_manifest, DomainTag, Manifest,
    PreprocessOpts, Split, SplitPolicy,
};
use dual_cyclegan::metrics::{lsd_db, snr_db};
use dual_cyclegan::model::{composite_sr, generator_forward, GenId, ModelBundle};
use dual_cyclegan::trainer::{load_checkpoint, run_training, TrainConfig, TrainError};
use dual_cyclegan::wav::{read_wav, write_wav, SampleFormat};

/// Capped sentinel reported instead of an unbounded SNR on exact matches.
const SNR_CAP_DB: f64 = 99.0;
/// Whole-utterance inference guard: refuse inputs longer than ten minutes.
const MAX_INFER_SECONDS: usize = 600;

#[derive(Debug)]
enum CliError {
    /// Bad arguments or configuration: exit code 2.
    Usage(String),
    /// Failure while doing the work: exit code 3.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Every training configuration key with its default value, flattened to
/// dotted paths, for `train --help`.
static CONFIG_KEY_HELP: Lazy<String> = Lazy::new(|| {
    fn walk(prefix: &str, value: &Value, out: &mut Vec<String>) {
        match value {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out);
                }
            }
            other => out.push(format!("  {prefix} = {other}")),
        }
    }
    let defaults = serde_json::to_value(TrainConfig::default()).expect("config serializes");
    let mut lines = Vec::new();
    walk("", &defaults, &mut lines);
    format!("Config keys (defaults shown, override with --set KEY=VALUE):\n{}", lines.join("\n"))
});

#[derive(Parser)]
#[command(
    name = "dual-cyclegan",
    version,
    about = "Nonparallel audio super-resolution (16 kHz -> 48 kHz) with two connected CycleGANs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Preprocess raw corpora into a training layout plus manifest.jsonl
    Preprocess(PreprocessArgs),
    /// Run (or resume) the two-stage training schedule
    Train(TrainArgs),
    /// Super-resolve a 16 kHz mono WAV to 48 kHz
    Infer(InferArgs),
    /// Report LSD/SNR metrics on the parallel pairs of a split
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory of source-domain low-resolution WAVs
    #[arg(long = "s-lr")]
    s_lr: PathBuf,
    /// Directory of target-domain 48 kHz WAVs (the 16 kHz copies are derived)
    #[arg(long = "t-hr")]
    t_hr: PathBuf,
    /// Output directory (gets s_lr/, t_lr/, t_hr/ and manifest.jsonl)
    #[arg(long)]
    out: PathBuf,
    /// Recordings per domain held out for validation
    #[arg(long, default_value_t = 1)]
    valid: usize,
    /// Recordings per domain held out for testing
    #[arg(long, default_value_t = 0)]
    test: usize,
    /// Split-shuffle seed
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Skip the 70 Hz high-pass stage
    #[arg(long)]
    no_highpass: bool,
}

#[derive(Args)]
#[command(after_help = &**CONFIG_KEY_HELP)]
struct TrainArgs {
    /// Path to manifest.jsonl produced by `preprocess`
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for logs and checkpoints
    #[arg(long)]
    out: PathBuf,
    /// Base configuration preset
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    /// JSON config file merged over the preset (unknown keys rejected)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. --set lr_g=1e-4 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Checkpoint to resume from
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Production-scale model and schedule
    Full,
    /// Laptop-scale model, iteration counts divided by 1000
    Desk,
    /// Tiny model for smoke tests
    Micro,
}

#[derive(Args)]
struct InferArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input WAV (16 kHz mono)
    #[arg(long, value_name = "IN_WAV")]
    input: PathBuf,
    /// Output WAV (48 kHz, 3x the input samples)
    #[arg(long, value_name = "OUT_WAV")]
    output: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained checkpoint
    #[arg(long)]
    checkpoint: PathBuf,
    /// Path to manifest.jsonl
    #[arg(long)]
    manifest: PathBuf,
    /// Which split's parallel pairs to score
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Preprocess(args) => cmd_preprocess(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Infer(args) => cmd_infer(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    for (name, dir) in [("--s-lr", &args.s_lr), ("--t-hr", &args.t_hr)] {
        if !dir.is_dir() {
            return Err(usage(format!("{name} directory {} does not exist", dir.display())));
        }
    }
    let mut opts = PreprocessOpts::default();
    if args.no_highpass {
        opts.highpass_hz = None;
    }
    let target = preprocess_corpus(&args.t_hr, DomainTag::THr, &args.out, &opts)
        .map_err(|e| runtime(e.to_string()))?;
    let source = preprocess_corpus(&args.s_lr, DomainTag::SLr, &args.out, &opts)
        .map_err(|e| runtime(e.to_string()))?;
    let mut merged = Manifest { entries: target.entries, base: args.out.clone() };
    merged.entries.extend(source.entries);
    if merged.domain_count(DomainTag::THr, Split::Train) == 0 {
        return Err(usage(format!("no usable 48 kHz recordings in {}", args.t_hr.display())));
    }
    if merged.domain_count(DomainTag::SLr, Split::Train) == 0 {
        return Err(usage(format!("no usable recordings in {}", args.s_lr.display())));
    }
    let policy = SplitPolicy { valid: args.valid, test: args.test, seed: args.seed };
    let split = split_manifest(&merged, &policy).map_err(|e| usage(e.to_string()))?;
    split.validate().map_err(|e| runtime(e.to_string()))?;
    let manifest_path = args.out.join("manifest.jsonl");
    save_manifest(&split, &manifest_path).map_err(|e| runtime(e.to_string()))?;
    for domain in [DomainTag::SLr, DomainTag::TLr, DomainTag::THr] {
        let (t, v, s) = (
            split.domain_count(domain, Split::Train),
            split.domain_count(domain, Split::Valid),
            split.domain_count(domain, Split::Test),
        );
        println!("{}: {t} train / {v} valid / {s} test", domain.subdir());
    }
    println!("wrote {}", manifest_path.display());
    Ok(())
}

/// Overlays `overlay` onto `base`, rejecting keys absent from `base`.
fn merge_config(base: &mut Value, overlay: &Value, path: &str) -> Result<(), CliError> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => merge_config(slot, v, &child)?,
                    None => return Err(usage(format!("unknown config key `{child}`"))),
                }
            }
            Ok(())
        }
        (Value::Object(_), _) => {
            Err(usage(format!("config key `{path}` expects a nested object")))
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Applies one `--set key.path=value` override onto the config tree.
fn apply_override(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{spec}`")))?;
    let mut slot = tree;
    for seg in key.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|m| m.get_mut(seg))
            .ok_or_else(|| usage(format!("unknown config key `{key}`")))?;
    }
    if slot.is_object() {
        return Err(usage(format!("config key `{key}` is a nested object, not a value")));
    }
    // numbers/bools/arrays parse as JSON; anything else is taken as a string
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig, CliError> {
    let preset = match args.preset {
        Preset::Full => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
        Preset::Micro => TrainConfig::micro(),
    };
    let mut tree = serde_json::to_value(&preset).map_err(|e| runtime(e.to_string()))?;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        merge_config(&mut tree, &overlay, "")?;
    }
    for spec in &args.set {
        apply_override(&mut tree, spec)?;
    }
    let mut config: TrainConfig =
        serde_json::from_value(tree).map_err(|e| usage(format!("invalid config: {e}")))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let config = build_config(&args)?;
    let manifest = load_manifest(&args.manifest).map_err(|e| usage(e.to_string()))?;
    match run_training(&config, &manifest, &args.out, args.resume.as_deref()) {
        Ok(final_ckpt) => {
            println!("training complete; final checkpoint: {}", final_ckpt.display());
            Ok(())
        }
        Err(TrainError::Config(msg)) => Err(usage(msg)),
        Err(e) => Err(runtime(e.to_string())),
    }
}

fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    let state = load_checkpoint(path)
        .map_err(|e| usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
    Ok(state.bundle)
}

fn cmd_infer(args: InferArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.checkpoint)?;
    let clip = read_wav(&args.input).map_err(|e| usage(e.to_string()))?;
    let want = bundle.arch.lr_rate;
    if clip.sample_rate != want {
        return Err(usage(format!(
            "{}: expected {want} Hz input, got {} Hz",
            args.input.display(),
            clip.sample_rate
        )));
    }
    let rf = bundle.arch.gen_receptive_field();
    if clip.len() < rf {
        return Err(usage(format!(
            "{}: input too short ({} samples, need at least {rf})",
            args.input.display(),
            clip.len()
        )));
    }
    if clip.len() > MAX_INFER_SECONDS * want as usize {
        return Err(usage(format!(
            "{}: input longer than {MAX_INFER_SECONDS} s; split it before inference",
            args.input.display()
        )));
    }
    let out = composite_sr(&bundle, &clip).map_err(|e| runtime(e.to_string()))?;
    write_wav(&args.output, &out, SampleFormat::Float32).map_err(|e| runtime(e.to_string()))?;
    println!(
        "{} ({} samples @{} Hz) -> {} ({} samples @{} Hz)",
        args.input.display(),
        clip.len(),
        clip.sample_rate,
        args.output.display(),
        out.len(),
        out.sample_rate
    );
    Ok(())
}

fn capped_snr(reference: &dual_cyclegan::audio::AudioClip, estimate: &dual_cyclegan::audio::AudioClip) -> Result<f64, CliError> {
    let snr = snr_db(reference, estimate).map_err(|e| runtime(e.to_string()))?;
    Ok(snr.min(SNR_CAP_DB))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest).map_err(|e| usage(e.to_string()))?;
    manifest.validate().map_err(|e| usage(e.to_string()))?;
    let split: Split = args.split.into();

    // collect (pair id, z path, y path) for the requested split
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for e in &manifest.entries {
        if e.split == split && e.domain == DomainTag::TLr {
            let id = e.pair_id.clone().unwrap_or_default();
            let partner = manifest
                .entries
                .iter()
                .find(|h| h.domain == DomainTag::THr && h.pair_id == e.pair_id)
                .ok_or_else(|| usage(format!("pair {id} has no high-resolution entry")))?;
            pairs.push((id, manifest.resolve(e), manifest.resolve(partner)));
        }
    }
    if pairs.is_empty() {
        return Err(usage(format!("no parallel pairs in the {split:?} split")));
    }
    pairs.sort();

    let mut sum_lsd = 0.0;
    let mut sum_snr = 0.0;
    let mut sum_lsd_sr = 0.0;
    let mut sum_snr_sr = 0.0;
    for (id, z_path, y_path) in &pairs {
        let z = read_wav(z_path).map_err(|e| runtime(e.to_string()))?;
        let y = read_wav(y_path).map_err(|e| runtime(e.to_string()))?;
        // resampling CycleGAN alone, then the full deployment composite
        let up = generator_forward(&bundle, GenId::G3, &z).map_err(|e| runtime(e.to_string()))?;
        let sr = composite_sr(&bundle, &z).map_err(|e| runtime(e.to_string()))?;
        let lsd = lsd_db(&y, &up).map_err(|e| runtime(e.to_string()))?;
        let snr = capped_snr(&y, &up)?;
        let lsd_sr = lsd_db(&y, &sr).map_err(|e| runtime(e.to_string()))?;
        let snr_sr = capped_snr(&y, &sr)?;
        sum_lsd += lsd;
        sum_snr += snr;
        sum_lsd_sr += lsd_sr;
        sum_snr_sr += snr_sr;
        println!(
            "{}",
            serde_json::json!({
                "file": id,
                "lsd_db": lsd,
                "snr_db": snr,
                "lsd_composite_db": lsd_sr,
                "snr_composite_db": snr_sr,
            })
        );
    }
    let n = pairs.len() as f64;
    println!(
        "{}",
        serde_json::json!({
            "mean": {
                "files": pairs.len(),
                "lsd_db": sum_lsd / n,
                "snr_db": sum_snr / n,
                "lsd_composite_db": sum_lsd_sr / n,
                "snr_composite_db": sum_snr_sr / n,
            }
        })
    );
    Ok(())
}
