use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abt_core::config::{EmbedMode, RunConfig};
use abt_core::data::{dataset_stats, synth_dataset, DatasetStats, Manifest, SynthSpec};
use abt_core::eval::{read_embeddings, read_labels, sidecar_path, write_embeddings, write_embeddings_csv, write_labels, LabelRow, LabelValue};
use abt_core::pipeline::{embed_clips, load_train_data, manifest_labels, probe_records};
use abt_core::provenance::{config_hash, CODE_VERSION};
use abt_core::sweep::{report_path, run_sweep, SweepGrid};
use abt_core::train::{checkpoint_hash, pretrain, Checkpoint, Model, RunPaths, TrainData};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "abt", version, about = "Barlow Twins audio representation learning at desk scale")]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for this command's outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    /// Dotted config override, e.g. `--set train.batch_size=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the synthetic labelled dataset (WAVs, manifest, labels).
    Synth(SynthArgs),
    /// Compute log-mel normalization statistics over a manifest.
    Stats(StatsArgs),
    /// Self-supervised pretraining with checkpoints and a metrics log.
    Pretrain(PretrainArgs),
    /// Extract frozen embeddings from a checkpoint.
    Embed(EmbedArgs),
    /// Train the evaluation probe on exported embeddings.
    Probe(ProbeArgs),
    /// Pretrain and probe each point of a configuration grid.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Dataset spec (TOML); the built-in three-class spec when omitted.
    spec: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Also record per-bin moments.
    #[arg(long)]
    per_bin: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Continue from an epoch-boundary checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Scene,
    Timestamp,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Also write embeddings.csv.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    /// Embedding matrix written by `embed` (its JSON sidecar must sit beside it).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Report mAP over a multilabel task.
    #[arg(long)]
    multilabel: bool,
    /// Checkpoint expected to have produced the embeddings; a hash mismatch is reported.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Grid file listing `[[point]]` entries with `id` and `overrides`.
    grid: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Labels file; otherwise the manifest's own labels.
    #[arg(long)]
    labels: Option<PathBuf>,
}

/// Resolved configuration plus where outputs go.
struct Ctx {
    cfg: RunConfig,
    out_dir: PathBuf,
    seed_flag: Option<u64>,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> anyhow::Result<Self> {
        let base = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_cli_overrides(&cli.overrides)?;
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
        }
        let out_dir = cli.out_dir.clone().or_else(|| cfg.paths.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self { cfg, out_dir, seed_flag: cli.seed })
    }

    fn prepare_out_dir(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(())
    }

    /// Writes the fully-resolved config next to the outputs and returns its hash.
    fn echo_config(&self) -> anyhow::Result<String> {
        self.prepare_out_dir()?;
        std::fs::write(self.out_dir.join("config.toml"), self.cfg.to_toml()?)?;
        let hash = config_hash(&self.cfg);
        log::info!("config hash {hash}, code version {CODE_VERSION}");
        Ok(hash)
    }
}

fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.clone().or_else(|| configured.clone()).with_context(|| format!("no {what} given (flag or paths.{what} in the config)"))
}

fn cmd_synth(ctx: &Ctx, args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading synth spec {}", p.display()))?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| abt_core::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = ctx.seed_flag {
        spec.seed = seed;
    }
    ctx.prepare_out_dir()?;
    let (manifest, labels) = synth_dataset(&spec, &ctx.cfg.mel, &ctx.out_dir)?;
    let rows: Vec<LabelRow> =
        manifest.entries.iter().zip(labels).map(|(e, l)| LabelRow { clip_id: e.clip_id.clone(), label: LabelValue::One(l) }).collect();
    write_labels(&rows, &ctx.out_dir.join("labels.jsonl"))?;
    std::fs::write(ctx.out_dir.join("synth_spec.toml"), toml::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} clips in {} classes to {} (spec hash {})",
        manifest.len(),
        spec.classes.len(),
        ctx.out_dir.display(),
        config_hash(&spec)
    );
    Ok(())
}

fn cmd_stats(ctx: &Ctx, args: &StatsArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&pick(&args.manifest, &ctx.cfg.paths.manifest, "manifest")?)?;
    let stats = dataset_stats(&manifest, &ctx.cfg.mel, args.per_bin)?;
    ctx.prepare_out_dir()?;
    let path = ctx.out_dir.join("stats.json");
    stats.save(&path)?;
    println!("mean {:.6} std {:.6} over {} cells -> {}", stats.mean, stats.std, stats.n_cells, path.display());
    Ok(())
}

fn with_paths(ctx: &mut Ctx, manifest: &Option<PathBuf>, stats: &Option<PathBuf>) {
    if manifest.is_some() {
        ctx.cfg.paths.manifest = manifest.clone();
    }
    if stats.is_some() {
        ctx.cfg.paths.stats = stats.clone();
    }
}

fn cmd_pretrain(mut ctx: Ctx, args: &PretrainArgs) -> anyhow::Result<()> {
    with_paths(&mut ctx, &args.manifest, &args.stats);
    ctx.cfg.validate()?;
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;
    ctx.echo_config()?;
    let (_, data) = load_train_data(&ctx.cfg)?;
    if let Some(stats) = &data.stats {
        stats.save(&ctx.out_dir.join("stats.json"))?;
    }
    let paths = RunPaths { out_dir: Some(ctx.out_dir.clone()) };
    let (trainer, _) = pretrain(&ctx.cfg.snapshot(), &data, &paths, resume.as_ref())?;
    match trainer.history.last() {
        Some(m) => println!("finished at step {} (epoch {}), loss {:.4}, mean |offdiag| {:.4}", m.step, trainer.epoch, m.loss, m.offdiag_mean_abs),
        None => println!("no steps run"),
    }
    println!("checkpoints in {}", paths.checkpoint_dir().expect("out dir set").display());
    Ok(())
}

fn load_stats(path: Option<&Path>, manifest: &Manifest, data: &TrainData, ctx: &Ctx) -> anyhow::Result<Option<DatasetStats>> {
    Ok(match path {
        Some(p) => Some(DatasetStats::load(p)?),
        None => {
            log::warn!("no stats file; normalizing with statistics of the {} clips being embedded", manifest.len());
            Some(abt_core::data::stats_from_spectrograms(&data.clips, &ctx.cfg.mel, false)?)
        }
    })
}

fn cmd_embed(mut ctx: Ctx, args: &EmbedArgs) -> anyhow::Result<()> {
    with_paths(&mut ctx, &args.manifest, &args.stats);
    let ckpt_path = pick(&args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint")?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ckpt_hash = checkpoint_hash(&ckpt_path)?;
    // The checkpoint's own configuration defines the model and front end.
    let snapshot = ckpt.header.config.clone();
    ctx.cfg.mel = snapshot.mel.clone();
    ctx.cfg.augment = snapshot.augment.clone();
    ctx.cfg.train = snapshot.train.clone();
    if let Some(mode) = args.mode {
        ctx.cfg.embed.mode = match mode {
            ModeArg::Scene => EmbedMode::Scene,
            ModeArg::Timestamp => EmbedMode::Timestamp,
        };
    }
    ctx.cfg.embed.csv |= args.csv;
    let cfg_hash = ctx.echo_config()?;
    let manifest = Manifest::load(&pick(&None, &ctx.cfg.paths.manifest, "manifest")?)?;
    let data = TrainData::from_manifest(&manifest, &ctx.cfg.mel, None)?;
    let stats = load_stats(ctx.cfg.paths.stats.as_deref(), &manifest, &data, &ctx)?;
    let model = Model::from_checkpoint(&ckpt)?;
    let records = embed_clips(&model, &snapshot, stats, &manifest, &data.clips, &ctx.cfg.embed)?;
    let bin = ctx.out_dir.join("embeddings.bin");
    let sidecar = write_embeddings(&records, &bin, &ckpt_hash, &cfg_hash)?;
    if ctx.cfg.embed.csv {
        write_embeddings_csv(&records, &ctx.out_dir.join("embeddings.csv"))?;
    }
    println!("{} embeddings of dim {} -> {} (checkpoint {ckpt_hash})", records.len(), sidecar.dim, bin.display());
    Ok(())
}

fn cmd_probe(mut ctx: Ctx, args: &ProbeArgs) -> anyhow::Result<()> {
    let emb_path = pick(&args.embeddings, &ctx.cfg.paths.embeddings, "embeddings")?;
    let labels_path = pick(&args.labels, &ctx.cfg.paths.labels, "labels")?;
    if !sidecar_path(&emb_path).exists() {
        bail!(abt_core::Error::InvalidArgument(format!("{} has no sidecar {}", emb_path.display(), sidecar_path(&emb_path).display())));
    }
    ctx.cfg.probe.multilabel |= args.multilabel;
    let (sidecar, records) = read_embeddings(&emb_path)?;
    if let Some(ckpt) = args.checkpoint.as_ref().or(ctx.cfg.paths.checkpoint.as_ref()) {
        let expected = checkpoint_hash(ckpt)?;
        if expected != sidecar.checkpoint_hash {
            log::warn!(
                "embeddings were extracted from checkpoint {} but {} hashes to {expected}",
                sidecar.checkpoint_hash,
                ckpt.display()
            );
        }
    }
    let rows = read_labels(&labels_path).with_context(|| format!("reading labels {}", labels_path.display()))?;
    let cfg_hash = ctx.echo_config()?;
    let mut report = probe_records(&records, &rows, &ctx.cfg.probe, ctx.cfg.train.seed)?;
    report.embeddings_checkpoint_hash = sidecar.checkpoint_hash.clone();
    let mut json = serde_json::to_value(&report)?;
    json["config_hash"] = serde_json::Value::String(cfg_hash);
    let path = ctx.out_dir.join("probe_report.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&json)?)?;
    println!(
        "{} {} = {:.4} (config `{}`, val {:.4}, test n={}) -> {}",
        report.task_name,
        report.metric_name,
        report.value,
        report.chosen_config_id,
        report.val_value,
        report.test_size,
        path.display()
    );
    Ok(())
}

fn cmd_sweep(mut ctx: Ctx, args: &SweepArgs) -> anyhow::Result<()> {
    with_paths(&mut ctx, &args.manifest, &args.stats);
    let grid = SweepGrid::load(&args.grid).with_context(|| format!("reading sweep grid {}", args.grid.display()))?;
    ctx.cfg.validate()?;
    ctx.echo_config()?;
    let (manifest, data) = load_train_data(&ctx.cfg)?;
    let labels = match args.labels.as_ref().or(ctx.cfg.paths.labels.as_ref()) {
        Some(p) => read_labels(p).with_context(|| format!("reading labels {}", p.display()))?,
        None => manifest_labels(&manifest)?,
    };
    let ranked = run_sweep(&ctx.cfg, &grid, &manifest, &data, &labels, &ctx.out_dir)?;
    for r in &ranked {
        println!("{:<24} probe {:.4} final loss {:.4}", r.config_id, r.probe_metric, r.final_loss);
    }
    println!("report -> {}", report_path(&ctx.out_dir).display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx::from_cli(&cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&ctx, a),
        Command::Stats(a) => cmd_stats(&ctx, a),
        Command::Pretrain(a) => cmd_pretrain(ctx, a),
        Command::Embed(a) => cmd_embed(ctx, a),
        Command::Probe(a) => cmd_probe(ctx, a),
        Command::Sweep(a) => cmd_sweep(ctx, a),
    }
}

/// 1 for bad input (config, arguments, missing files), 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<abt_core::Error>() {
            return match e {
                abt_core::Error::Io(io) => io_code(io),
                e if e.is_user_error() => 1,
                _ => 2,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return io_code(io);
        }
        if cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return 1;
        }
    }
    2
}

fn io_code(e: &std::io::Error) -> u8 {
    match e.kind() {
        std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
