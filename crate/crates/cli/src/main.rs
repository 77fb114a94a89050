//! archperf command line: synthetic data generation, training,
//! finetuning, evaluation, prediction, and debug dumps.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 training failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use archperf::data::{
    load_platforms, save_platforms, split_leave_one_family_out, split_platform_zero_shot,
    vocabulary_for, Dataset,
};
use archperf::dgsa::{DgsaConfig, GateMode, MaskMode};
use archperf::embed::{
    render_node_template, render_platform_template, EncoderKind, EncoderSpec, PlatformRecord,
    Precision, Vocabulary,
};
use archperf::error::Error;
use archperf::graph::{derive_masks, parse_architecture, ArchDoc, OpRegistry};
use archperf::metrics::MetricsReport;
use archperf::model::{Model, TaskKind};
use archperf::synth::{default_families, default_platforms, generate_synthetic, OracleConfig};
use archperf::tensor::AdamHyper;
use archperf::train::{evaluate, finetune, train, write_log_csv, TrainConfig};

const OUT_ROOT_ENV: &str = "ARCHPERF_OUT";

#[derive(Parser)]
#[command(
    name = "archperf",
    version,
    about = "Predict latency and accuracy of neural-network computation graphs on described hardware"
)]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate a synthetic dataset with the closed-form latency oracle.
    GenSynthetic(GenArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training from a checkpoint at a lower learning rate.
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Predict attributes for architectures in a file.
    Predict(PredictArgs),
    /// Human-readable dumps of masks, templates, or embeddings.
    Dump(DumpArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Output directory (default: $ARCHPERF_OUT/gen-synthetic).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Total number of samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Number of architecture families (prefix of the built-in eight).
    #[arg(long)]
    families: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    task: Option<String>,
    /// Platform file to draw from (default: the built-in four).
    #[arg(long)]
    platforms: Option<PathBuf>,
    /// JSON file with default values for any of the above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    /// dynamic | uniform | full-attention
    #[arg(long)]
    gate_mode: Option<String>,
    /// hadamard | additive
    #[arg(long)]
    mask_mode: Option<String>,
    /// Scale the gate's prefix attention by 1/sqrt(d_model).
    #[arg(long)]
    gate_scaling: bool,
    /// hash | trainable | random-init
    #[arg(long)]
    encoder: Option<String>,
}

#[derive(Args, Clone)]
struct FitFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    unfreeze_encoder: bool,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    task: Option<String>,
    /// leave-out:<family> or zero-shot:<platform_id>:<precision>
    #[arg(long)]
    split: Option<String>,
    /// JSON file with default values for any of the above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    platforms: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Held-out dataset evaluated after every epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    platforms: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    platforms: PathBuf,
    /// Write metrics.csv and the run config here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// leave-out:<family> or zero-shot:<platform_id>:<precision>
    #[arg(long)]
    split: Option<String>,
    /// Which side of the split to evaluate (train | test).
    #[arg(long, default_value = "test")]
    side: String,
    /// Replace every sample's platform with this id (hardware-awareness
    /// ablation).
    #[arg(long)]
    platform_override: Option<String>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Architecture file: JSONL dataset or a single JSON document.
    #[arg(long)]
    arch: PathBuf,
    #[arg(long)]
    platforms: Option<PathBuf>,
    /// Platform id to predict for (overrides per-sample platform_id).
    #[arg(long)]
    platform: Option<String>,
}

#[derive(Args)]
struct DumpArgs {
    /// What to dump: masks | templates | embeddings.
    what: String,
    #[arg(long)]
    arch: PathBuf,
    /// Line number within a JSONL file (0-based).
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    platforms: Option<PathBuf>,
    #[arg(long)]
    platform: Option<String>,
    /// Use this checkpoint's encoder for embeddings.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Embedding width when no checkpoint is given.
    #[arg(long, default_value_t = 64)]
    d_model: usize,
}

// ── Error plumbing ──────────────────────────────────────────────────

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Training(_) => 3,
            _ => 2,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Commands::GenSynthetic(args) => cmd_gen_synthetic(args),
        Commands::Train(args) => cmd_train(args),
        Commands::Finetune(args) => cmd_finetune(args),
        Commands::Eval(args) => cmd_eval(args),
        Commands::Predict(args) => cmd_predict(args),
        Commands::Dump(args) => cmd_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

// ── Flag resolution ─────────────────────────────────────────────────

/// Optional defaults loadable from a JSON config file. Explicit flags
/// win over file values, file values win over built-in defaults.
#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDefaults {
    d_model: Option<usize>,
    n_heads: Option<usize>,
    n_layers: Option<usize>,
    gate_mode: Option<String>,
    mask_mode: Option<String>,
    gate_scaling: Option<bool>,
    encoder: Option<String>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
    task: Option<String>,
    threads: Option<usize>,
    unfreeze_encoder: Option<bool>,
    samples: Option<usize>,
    families: Option<usize>,
    noise_sigma: Option<f64>,
    split: Option<String>,
}

fn load_defaults(path: &Option<PathBuf>) -> CliResult<FileDefaults> {
    match path {
        None => Ok(FileDefaults::default()),
        Some(p) => {
            let raw = std::fs::read_to_string(p)
                .map_err(|e| CliError::from(Error::io(p.display().to_string(), e)))?;
            serde_json::from_str(&raw)
                .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn parse_gate_mode(s: &str) -> CliResult<GateMode> {
    match s {
        "dynamic" => Ok(GateMode::Dynamic),
        "uniform" => Ok(GateMode::UniformFixed),
        "full-attention" => Ok(GateMode::DisabledFullAttention),
        other => Err(CliError::usage(format!(
            "--gate-mode {other:?} (expected dynamic | uniform | full-attention)"
        ))),
    }
}

fn parse_mask_mode(s: &str) -> CliResult<MaskMode> {
    match s {
        "hadamard" => Ok(MaskMode::Hadamard),
        "additive" => Ok(MaskMode::AdditiveNegInf),
        other => Err(CliError::usage(format!(
            "--mask-mode {other:?} (expected hadamard | additive)"
        ))),
    }
}

fn parse_encoder(s: &str) -> CliResult<EncoderKind> {
    match s {
        "hash" => Ok(EncoderKind::HashDeterministic),
        "trainable" => Ok(EncoderKind::TrainableSmall),
        "random-init" => Ok(EncoderKind::RandomlyInitialized),
        other => Err(CliError::usage(format!(
            "--encoder {other:?} (expected hash | trainable | random-init)"
        ))),
    }
}

fn parse_task(s: &str) -> CliResult<TaskKind> {
    TaskKind::from_str(s).map_err(|_| {
        CliError::usage(format!("--task {s:?} (expected latency | accuracy)"))
    })
}

enum SplitSpec {
    LeaveOutFamily(String),
    ZeroShot(String, Precision),
}

fn parse_split(s: &str) -> CliResult<SplitSpec> {
    if let Some(fam) = s.strip_prefix("leave-out:") {
        if fam.is_empty() {
            return Err(CliError::usage("--split leave-out: needs a family name"));
        }
        return Ok(SplitSpec::LeaveOutFamily(fam.to_string()));
    }
    if let Some(rest) = s.strip_prefix("zero-shot:") {
        let Some((id, prec)) = rest.rsplit_once(':') else {
            return Err(CliError::usage("--split zero-shot:<platform_id>:<precision>"));
        };
        let precision = Precision::from_str(prec)
            .map_err(|_| CliError::usage(format!("precision {prec:?}")))?;
        return Ok(SplitSpec::ZeroShot(id.to_string(), precision));
    }
    Err(CliError::usage(format!(
        "--split {s:?} (expected leave-out:<family> or zero-shot:<platform_id>:<precision>)"
    )))
}

fn out_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "runs".into());
        Path::new(&root).join(command)
    })
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::from(Error::io(dir.display().to_string(), e)))?;
    Ok(())
}

/// The fully resolved configuration of a run, frozen into its output
/// directory for provenance.
#[derive(serde::Serialize)]
struct RunConfig {
    command: String,
    task: TaskKind,
    seed: u64,
    paths: BTreeMap<String, String>,
    dgsa: Option<DgsaConfig>,
    encoder: Option<EncoderSpec>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    unfreeze_encoder: Option<bool>,
    threads: Option<usize>,
    split: Option<String>,
    samples: Option<usize>,
    families: Option<usize>,
    noise_sigma: Option<f64>,
}

impl RunConfig {
    fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("run_config.json");
        let json = serde_json::to_string_pretty(self).map_err(Error::from)?;
        std::fs::write(&path, json)
            .map_err(|e| CliError::from(Error::io(path.display().to_string(), e)))?;
        Ok(())
    }
}

// ── Commands ────────────────────────────────────────────────────────

fn cmd_gen_synthetic(args: GenArgs) -> CliResult<()> {
    let file = load_defaults(&args.config)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let samples = args.samples.or(file.samples).unwrap_or(1000);
    let n_families = args.families.or(file.families).unwrap_or(8);
    let noise_sigma = args.noise_sigma.or(file.noise_sigma).unwrap_or(0.05);
    let task = parse_task(&args.task.or(file.task).unwrap_or_else(|| "latency".into()))?;

    let registry = OpRegistry::standard();
    let all_families = default_families();
    if n_families == 0 || n_families > all_families.len() {
        return Err(CliError::usage(format!(
            "--families must be in 1..={}, got {n_families}",
            all_families.len()
        )));
    }
    let families = &all_families[..n_families];
    let platforms = match &args.platforms {
        Some(p) => load_platforms(p)?,
        None => default_platforms(),
    };
    let oracle = OracleConfig::standard(noise_sigma, seed);
    let ds = generate_synthetic(&oracle, &platforms, samples, families, task, &registry)?;

    let dir = out_dir(args.out, "gen-synthetic");
    ensure_dir(&dir)?;
    ds.save_jsonl(&dir.join("dataset.jsonl"))?;
    save_platforms(&dir.join("platforms.json"), &platforms)?;
    let oracle_json = serde_json::to_string_pretty(&oracle).map_err(Error::from)?;
    std::fs::write(dir.join("oracle.json"), oracle_json)
        .map_err(|e| CliError::from(Error::io(dir.join("oracle.json").display().to_string(), e)))?;
    RunConfig {
        command: "gen-synthetic".into(),
        task,
        seed,
        paths: BTreeMap::from([("out".to_string(), dir.display().to_string())]),
        dgsa: None,
        encoder: None,
        epochs: None,
        batch_size: None,
        lr: None,
        unfreeze_encoder: None,
        threads: None,
        split: None,
        samples: Some(samples),
        families: Some(n_families),
        noise_sigma: Some(noise_sigma),
    }
    .write(&dir)?;
    println!(
        "wrote {} samples ({} families, {} platforms) to {}",
        ds.len(),
        n_families,
        platforms.len(),
        dir.display()
    );
    Ok(())
}

struct ResolvedFit {
    cfg: TrainConfig,
    task: TaskKind,
    split: Option<SplitSpec>,
    split_raw: Option<String>,
}

fn resolve_fit(fit: &FitFlags, finetuning: bool) -> CliResult<ResolvedFit> {
    let file = load_defaults(&fit.config)?;
    let base = if finetuning { TrainConfig::finetune_default() } else { TrainConfig::default() };
    let cfg = TrainConfig {
        epochs: fit.epochs.or(file.epochs).unwrap_or(base.epochs),
        batch_size: fit.batch_size.or(file.batch_size).unwrap_or(base.batch_size),
        hyper: AdamHyper {
            lr: fit.lr.or(file.lr).unwrap_or(base.hyper.lr),
            ..AdamHyper::default()
        },
        seed: fit.seed.or(file.seed).unwrap_or(base.seed),
        unfreeze_encoder: fit.unfreeze_encoder || file.unfreeze_encoder.unwrap_or(false),
        threads: fit.threads.or(file.threads).unwrap_or(1).max(1),
    };
    let task = parse_task(
        &fit.task.clone().or(file.task).unwrap_or_else(|| "latency".into()),
    )?;
    let split_raw = fit.split.clone().or(file.split);
    let split = split_raw.as_deref().map(parse_split).transpose()?;
    Ok(ResolvedFit { cfg, task, split, split_raw })
}

fn resolve_model(flags: &ModelFlags, config: &Option<PathBuf>) -> CliResult<(DgsaConfig, EncoderSpec)> {
    let file = load_defaults(config)?;
    let d_model = flags.d_model.or(file.d_model).unwrap_or(64);
    let dgsa = DgsaConfig {
        d_model,
        n_heads: flags.n_heads.or(file.n_heads).unwrap_or(4),
        n_layers: flags.n_layers.or(file.n_layers).unwrap_or(2),
        gate_mode: parse_gate_mode(
            flags.gate_mode.as_deref().or(file.gate_mode.as_deref()).unwrap_or("dynamic"),
        )?,
        mask_mode: parse_mask_mode(
            flags.mask_mode.as_deref().or(file.mask_mode.as_deref()).unwrap_or("hadamard"),
        )?,
        gate_scaling: flags.gate_scaling || file.gate_scaling.unwrap_or(false),
    };
    let kind = parse_encoder(
        flags.encoder.as_deref().or(file.encoder.as_deref()).unwrap_or("hash"),
    )?;
    Ok((dgsa, EncoderSpec::new(kind, d_model)))
}

fn apply_split(
    ds: &Dataset,
    split: &Option<SplitSpec>,
) -> CliResult<(Dataset, Option<Dataset>)> {
    match split {
        None => Ok((ds.clone(), None)),
        Some(SplitSpec::LeaveOutFamily(fam)) => {
            let (train_side, test_side) = split_leave_one_family_out(ds, fam)?;
            Ok((train_side, Some(test_side)))
        }
        Some(SplitSpec::ZeroShot(id, prec)) => {
            let (train_side, test_side) = split_platform_zero_shot(ds, id, *prec)?;
            Ok((train_side, Some(test_side)))
        }
    }
}

fn print_report(report: &MetricsReport) {
    println!("samples:     {}", report.n_samples);
    println!("MAPE:        {:.2}%", report.mape_pct);
    println!("Acc(10%):    {:.2}%", report.acc_at_10_pct);
    println!("Kendall tau: {:.4}", report.kendall_tau);
    if report.per_family.len() > 1 {
        println!("{:<16} {:>6} {:>9} {:>9}", "family", "n", "MAPE%", "Acc10%");
        for f in &report.per_family {
            println!(
                "{:<16} {:>6} {:>9.2} {:>9.2}",
                f.family, f.n_samples, f.mape_pct, f.acc_at_10_pct
            );
        }
    }
}

fn write_metrics_csv(path: &Path, report: &MetricsReport) -> CliResult<()> {
    let mut text = String::from("scope,n_samples,mape_pct,acc_at_10_pct,kendall_tau\n");
    text.push_str(&format!(
        "all,{},{},{},{}\n",
        report.n_samples, report.mape_pct, report.acc_at_10_pct, report.kendall_tau
    ));
    for f in &report.per_family {
        text.push_str(&format!(
            "family:{},{},{},{},\n",
            f.family, f.n_samples, f.mape_pct, f.acc_at_10_pct
        ));
    }
    std::fs::write(path, text)
        .map_err(|e| CliError::from(Error::io(path.display().to_string(), e)))?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let resolved = resolve_fit(&args.fit, false)?;
    let (dgsa, encoder_spec) = resolve_model(&args.model, &args.fit.config)?;
    let registry = OpRegistry::standard();
    let platforms = load_platforms(&args.platforms)?;
    let full = Dataset::load_jsonl(&args.data, &platforms, &registry, resolved.task)?;
    let (train_ds, split_eval) = apply_split(&full, &resolved.split)?;
    let eval_ds = match &args.eval_data {
        Some(p) => Some(Dataset::load_jsonl(p, &platforms, &registry, resolved.task)?),
        None => split_eval,
    };

    let vocab = vocabulary_for(&train_ds, &platforms, &registry)?;
    let mut model = Model::new(dgsa, encoder_spec, vocab, resolved.task, resolved.cfg.seed)?;
    let logs = train(&mut model, &train_ds, eval_ds.as_ref(), &registry, &resolved.cfg)
        .map_err(CliError::from)?;

    let dir = out_dir(args.out, "train");
    ensure_dir(&dir)?;
    model.save(&dir.join("checkpoint.json"))?;
    write_log_csv(&dir.join("log.csv"), &logs)?;
    model.tokenizer.vocab.save(&dir.join("vocab.txt"))?;
    RunConfig {
        command: "train".into(),
        task: resolved.task,
        seed: resolved.cfg.seed,
        paths: BTreeMap::from([
            ("data".to_string(), args.data.display().to_string()),
            ("platforms".to_string(), args.platforms.display().to_string()),
            ("out".to_string(), dir.display().to_string()),
        ]),
        dgsa: Some(dgsa),
        encoder: Some(encoder_spec),
        epochs: Some(resolved.cfg.epochs),
        batch_size: Some(resolved.cfg.batch_size),
        lr: Some(resolved.cfg.hyper.lr),
        unfreeze_encoder: Some(resolved.cfg.unfreeze_encoder),
        threads: Some(resolved.cfg.threads),
        split: resolved.split_raw,
        samples: Some(train_ds.len()),
        families: Some(train_ds.families().len()),
        noise_sigma: None,
    }
    .write(&dir)?;

    if let Some(last) = logs.last() {
        match (last.eval_mape, last.eval_acc10, last.eval_tau) {
            (Some(m), Some(a), Some(t)) => println!(
                "epoch {}: train_loss {:.6} eval MAPE {:.2}% Acc10 {:.2}% tau {:.4}",
                last.epoch, last.train_loss, m, a, t
            ),
            _ => println!("epoch {}: train_loss {:.6}", last.epoch, last.train_loss),
        }
    }
    println!("checkpoint: {}", dir.join("checkpoint.json").display());
    Ok(())
}

fn cmd_finetune(args: FinetuneArgs) -> CliResult<()> {
    let resolved = resolve_fit(&args.fit, true)?;
    let registry = OpRegistry::standard();
    let mut model = Model::load(&args.checkpoint)?;
    if model.task != resolved.task && args.fit.task.is_some() {
        return Err(CliError::from(Error::Format(format!(
            "checkpoint task is {:?}, flags request {:?}",
            model.task, resolved.task
        ))));
    }
    let platforms = load_platforms(&args.platforms)?;
    let full = Dataset::load_jsonl(&args.data, &platforms, &registry, model.task)?;
    let (tune_ds, split_eval) = apply_split(&full, &resolved.split)?;
    let eval_ds = match &args.eval_data {
        Some(p) => Some(Dataset::load_jsonl(p, &platforms, &registry, model.task)?),
        None => split_eval,
    };
    let logs = finetune(&mut model, &tune_ds, eval_ds.as_ref(), &registry, &resolved.cfg)
        .map_err(CliError::from)?;

    let dir = out_dir(args.out, "finetune");
    ensure_dir(&dir)?;
    model.save(&dir.join("checkpoint.json"))?;
    write_log_csv(&dir.join("log.csv"), &logs)?;
    RunConfig {
        command: "finetune".into(),
        task: model.task,
        seed: resolved.cfg.seed,
        paths: BTreeMap::from([
            ("checkpoint".to_string(), args.checkpoint.display().to_string()),
            ("data".to_string(), args.data.display().to_string()),
            ("platforms".to_string(), args.platforms.display().to_string()),
            ("out".to_string(), dir.display().to_string()),
        ]),
        dgsa: Some(model.params.dgsa),
        encoder: Some(model.params.encoder_spec),
        epochs: Some(resolved.cfg.epochs),
        batch_size: Some(resolved.cfg.batch_size),
        lr: Some(resolved.cfg.hyper.lr),
        unfreeze_encoder: Some(resolved.cfg.unfreeze_encoder),
        threads: Some(resolved.cfg.threads),
        split: resolved.split_raw,
        samples: Some(tune_ds.len()),
        families: Some(tune_ds.families().len()),
        noise_sigma: None,
    }
    .write(&dir)?;
    println!("checkpoint: {}", dir.join("checkpoint.json").display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let registry = OpRegistry::standard();
    let model = Model::load(&args.checkpoint)?;
    let platforms = load_platforms(&args.platforms)?;
    let full = Dataset::load_jsonl(&args.data, &platforms, &registry, model.task)?;
    let split = args.split.as_deref().map(parse_split).transpose()?;
    let ds = match (&split, args.side.as_str()) {
        (None, _) => full,
        (Some(_), "train") => apply_split(&full, &split)?.0,
        (Some(_), "test") => apply_split(&full, &split)?.1.expect("split produces a test side"),
        (Some(_), other) => {
            return Err(CliError::usage(format!("--side {other:?} (expected train | test)")))
        }
    };
    let override_platform = match &args.platform_override {
        None => None,
        Some(id) => Some(
            platforms
                .iter()
                .find(|p| &p.platform_id == id)
                .cloned()
                .ok_or_else(|| CliError::from(Error::Key(format!("platform_id {id:?}"))))?,
        ),
    };
    let report = evaluate(&model, &ds, &registry, args.threads.max(1), override_platform.as_ref())?;
    print_report(&report);
    if let Some(dir) = args.out {
        ensure_dir(&dir)?;
        write_metrics_csv(&dir.join("metrics.csv"), &report)?;
        RunConfig {
            command: "eval".into(),
            task: model.task,
            seed: 0,
            paths: BTreeMap::from([
                ("checkpoint".to_string(), args.checkpoint.display().to_string()),
                ("data".to_string(), args.data.display().to_string()),
                ("out".to_string(), dir.display().to_string()),
            ]),
            dgsa: Some(model.params.dgsa),
            encoder: Some(model.params.encoder_spec),
            epochs: None,
            batch_size: None,
            lr: None,
            unfreeze_encoder: None,
            threads: Some(args.threads),
            split: args.split.clone(),
            samples: Some(report.n_samples),
            families: Some(report.per_family.len()),
            noise_sigma: None,
        }
        .write(&dir)?;
    }
    Ok(())
}

/// Read architecture documents from a file holding either one JSON
/// object (possibly pretty-printed) or JSONL.
fn read_arch_docs(path: &Path) -> CliResult<Vec<ArchDoc>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::from(Error::io(path.display().to_string(), e)))?;
    if let Ok(doc) = serde_json::from_str::<ArchDoc>(&raw) {
        return Ok(vec![doc]);
    }
    let mut docs = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc: ArchDoc = serde_json::from_str(line).map_err(|e| {
            CliError::from(Error::Schema(format!("{}:{}: {e}", path.display(), lineno + 1)))
        })?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(CliError::from(Error::Schema(format!(
            "{}: no architecture documents",
            path.display()
        ))));
    }
    Ok(docs)
}

fn cmd_predict(args: PredictArgs) -> CliResult<()> {
    let registry = OpRegistry::standard();
    let model = Model::load(&args.checkpoint)?;
    let platforms = match &args.platforms {
        Some(p) => load_platforms(p)?,
        None => default_platforms(),
    };
    let docs = read_arch_docs(&args.arch)?;
    for doc in &docs {
        let graph = parse_architecture(doc, &registry)?;
        let platform = match (&args.platform, &doc.platform_id, model.task) {
            (Some(id), _, _) | (None, Some(id), _) => platforms
                .iter()
                .find(|p| &p.platform_id == id)
                .cloned()
                .ok_or_else(|| CliError::from(Error::Key(format!("platform_id {id:?}"))))?,
            (None, None, TaskKind::Accuracy) => PlatformRecord::pseudo_for_accuracy(),
            (None, None, TaskKind::Latency) => {
                return Err(CliError::usage(format!(
                    "sample {:?} has no platform_id and no --platform given",
                    doc.name
                )))
            }
        };
        let pred = model.predict(&graph, &platform, &registry)?;
        let target = match model.task {
            TaskKind::Latency => doc.targets.latency_ms,
            TaskKind::Accuracy => doc.targets.accuracy,
        };
        match target {
            Some(t) if t > 0.0 => {
                let rel = (pred - t).abs() / t * 100.0;
                println!("{}\t{:.6}\ttarget {:.6}\trel_err {:.2}%", doc.name, pred, t, rel);
            }
            _ => println!("{}\t{:.6}", doc.name, pred),
        }
    }
    Ok(())
}

fn load_dump_platform(args: &DumpArgs) -> CliResult<Option<PlatformRecord>> {
    let Some(id) = &args.platform else { return Ok(None) };
    let platforms = match &args.platforms {
        Some(p) => load_platforms(p)?,
        None => default_platforms(),
    };
    Ok(Some(
        platforms
            .iter()
            .find(|p| &p.platform_id == id)
            .cloned()
            .ok_or_else(|| CliError::from(Error::Key(format!("platform_id {id:?}"))))?,
    ))
}

fn cmd_dump(args: DumpArgs) -> CliResult<()> {
    let registry = OpRegistry::standard();
    let docs = read_arch_docs(&args.arch)?;
    let doc = docs.get(args.index).ok_or_else(|| {
        CliError::usage(format!("--index {} out of {} documents", args.index, docs.len()))
    })?;
    let graph = parse_architecture(doc, &registry)?;
    match args.what.as_str() {
        "masks" => {
            let masks = derive_masks(&graph);
            for (name, m) in [
                ("son", &masks.son),
                ("father", &masks.father),
                ("grandfather", &masks.grandfather),
            ] {
                println!("{name}:");
                for i in 0..m.rows() {
                    let row: Vec<String> =
                        m.row(i).iter().map(|&x| if x > 0.0 { "1".into() } else { "0".into() }).collect();
                    println!("{}", row.join(" "));
                }
            }
        }
        "templates" => {
            for node in graph.nodes() {
                println!("{}", render_node_template(node, &registry)?);
            }
            if let Some(p) = load_dump_platform(&args)? {
                println!("{}", render_platform_template(&p)?);
            }
        }
        "embeddings" => {
            let platform = load_dump_platform(&args)?.ok_or_else(|| {
                CliError::usage("dump embeddings needs --platform (and optionally --platforms)")
            })?;
            let emb = match &args.checkpoint {
                Some(ckpt) => {
                    let model = Model::load(ckpt)?;
                    let embedder = model.embedder(&registry);
                    embedder.embed_graph(&graph, &platform)?
                }
                None => {
                    // Self-contained: vocabulary from this document alone.
                    let mut corpus = Vec::new();
                    for node in graph.nodes() {
                        corpus.push(render_node_template(node, &registry)?);
                    }
                    corpus.push(render_platform_template(&platform)?);
                    let vocab = Vocabulary::build(&corpus);
                    let spec = EncoderSpec::new(EncoderKind::HashDeterministic, args.d_model);
                    let table = archperf::embed::init_table(&spec, &vocab, 0);
                    let tokenizer = archperf::embed::Tokenizer::new(vocab, spec.max_seq_len);
                    let embedder = archperf::embed::Embedder {
                        tokenizer: &tokenizer,
                        registry: &registry,
                        encoder: archperf::embed::EncoderView {
                            spec: &spec,
                            table: &table,
                            attn: None,
                        },
                    };
                    embedder.embed_graph(&graph, &platform)?
                }
            };
            for i in 0..emb.rows() {
                let row: Vec<String> = emb.row(i).iter().map(|x| x.to_string()).collect();
                println!("{}", row.join(","));
            }
        }
        other => {
            return Err(CliError::usage(format!(
                "dump {other:?} (expected masks | templates | embeddings)"
            )))
        }
    }
    Ok(())
}
