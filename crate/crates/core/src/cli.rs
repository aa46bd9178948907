//! The `petgan` command line.

use std::ffi::OsString;
use std::io::IsTerminal;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::data::{
    build_manifest, load_image_set, normalize_image, read_records, DatasetManifest, ManifestConfig, ProcessedStore,
};
use crate::engagement::{self, ServiceConfig, Store, DEFAULT_PAGE};
use crate::metrics::{
    compare_categories, probe_inception_score, read_page_csv, ClassifierProbe, ConvProbe, IiesWindow, ProbeTraining,
};
use crate::tensor::Tensor;
use crate::train::{generate_samples, Budget, Checkpoint, ImageSet, Preset, TrainConfig, TrainOutputs, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    /// Only for tabular reports.
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "petgan", version, about = "Desk-scale DCGAN pipeline: preprocess, train, sample, evaluate, curate")]
pub struct Cli {
    /// Output format of reports and errors.
    #[arg(long, value_enum, default_value = "text", global = true)]
    pub format: Format,
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, crop and augment raw records into a checksummed manifest.
    Preprocess(PreprocessArgs),
    /// Train a DCGAN on a manifest.
    Train(TrainArgs),
    /// Draw samples from a checkpoint.
    Generate(GenerateArgs),
    /// Inception Score of a sample directory under a classifier probe.
    EvaluateIs(EvaluateArgs),
    /// Page-level engagement comparison or a single page's report.
    EngagementReport(ReportArgs),
    /// Run the curation and engagement HTTP service.
    Serve(ServeArgs),
    /// Write a post's image and caption for manual upload.
    PostingKit(KitArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// JSON-lines raw image records.
    #[arg(long)]
    pub records: PathBuf,
    /// Directory record paths are relative to [default: the records file's directory].
    #[arg(long)]
    pub source_root: Option<PathBuf>,
    /// Side of the processed square images.
    #[arg(long, default_value_t = 64)]
    pub target: u32,
    /// Smallest accepted source width and height.
    #[arg(long, default_value_t = 256)]
    pub min_resolution: u32,
    /// Keep images flagged as containing people.
    #[arg(long)]
    pub keep_humans: bool,
    /// Skip the mirrored copies.
    #[arg(long)]
    pub no_augment: bool,
    /// Subsample species to equal counts.
    #[arg(long)]
    pub balance: bool,
    /// Seed for balancing [default: chosen and printed].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Manifest output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write processed PNGs into this store directory.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    /// lr 2e-4 for both players, batch 128.
    Dcgan,
    /// lr 1e-4 (G) / 4e-4 (D), batch 256.
    Biggan,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory manifest sources are relative to [default: the manifest's directory].
    #[arg(long)]
    pub source_root: Option<PathBuf>,
    /// Read processed images from this store, filling it as needed.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, default_value = "dcgan-64", value_parser = parse_preset)]
    pub preset: Preset,
    #[arg(long, value_enum, default_value = "dcgan")]
    pub optimizer: Optimizer,
    /// Total epochs [default: 1].
    #[arg(long, conflicts_with = "iterations")]
    pub epochs: Option<u64>,
    /// Total D/G iterations instead of epochs.
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Channel width multiplier [default: 64].
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Latent dimension [default: 100].
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Orthogonal penalty weight on generator kernels [default: 1e-4].
    #[arg(long)]
    pub ortho_beta: Option<f64>,
    /// Truncation threshold for preview grids.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Also write a preview grid every N iterations.
    #[arg(long)]
    pub sample_every: Option<u64>,
    /// [default: chosen and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint; its configuration wins over the flags above.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoints, previews and metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Record real epoch durations in metrics.csv (breaks byte-reproducibility).
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Truncation threshold; omitted means an untruncated normal.
    #[arg(long)]
    pub tau: Option<f64>,
    /// [default: chosen and printed]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Register the samples as pending review in this data directory.
    #[arg(long, value_name = "DATA_DIR")]
    pub register: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of square PNG samples (grid.png is skipped).
    #[arg(long)]
    pub samples: PathBuf,
    /// Saved probe to score with.
    #[arg(long, conflicts_with = "probe_manifest", required_unless_present = "probe_manifest")]
    pub probe: Option<PathBuf>,
    /// Train a species probe on this manifest instead.
    #[arg(long)]
    pub probe_manifest: Option<PathBuf>,
    /// Directory manifest sources are relative to [default: the manifest's directory].
    #[arg(long)]
    pub source_root: Option<PathBuf>,
    /// Where to keep a freshly trained probe.
    #[arg(long)]
    pub save_probe: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub probe_epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub splits: usize,
    /// Seed for probe training [default: chosen and printed].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Pages CSV (handle, followers, engagements[, singled_out]) to compare by category.
    #[arg(long, conflicts_with = "page", required_unless_present = "page")]
    pub fixtures: Option<PathBuf>,
    /// Report one page from the engagement store.
    #[arg(long)]
    pub page: Option<String>,
    #[arg(long, env = "PETGAN_DATA_DIR", default_value = "petgan-data")]
    pub data_dir: PathBuf,
    /// RFC 3339 instant to report at [default: now].
    #[arg(long)]
    pub as_of: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PETGAN_BIND", default_value = "127.0.0.1:8787")]
    pub bind: SocketAddr,
    #[arg(long, env = "PETGAN_DATA_DIR", default_value = "petgan-data")]
    pub data_dir: PathBuf,
    /// Static curation UI assets to serve under /ui.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Page handle new posts belong to unless they name one.
    #[arg(long, default_value = DEFAULT_PAGE)]
    pub page: String,
}

#[derive(Debug, Args)]
pub struct KitArgs {
    #[arg(long)]
    pub post: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "PETGAN_DATA_DIR", default_value = "petgan-data")]
    pub data_dir: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset {s:?}; expected dcgan-64 or dcgan-32"))
}

/// Uses `seed` or draws one and announces it on stderr.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u32>() as u64;
        eprintln!("seed: {s} (pass --seed {s} to reproduce)");
        s
    })
}

fn parent_of(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn emit(format: Format, value: &Value, text: String) {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(value).expect("report serializes")),
        Format::Text | Format::Csv => print!("{text}"),
    }
}

fn preprocess(args: PreprocessArgs, format: Format) -> Result<()> {
    let records = read_records(&args.records)?;
    let seed = if args.balance { resolve_seed(args.seed) } else { args.seed.unwrap_or(0) };
    let config = ManifestConfig {
        min_resolution: args.min_resolution,
        drop_humans: !args.keep_humans,
        resolution: args.target,
        augment: !args.no_augment,
        balance: args.balance,
        seed,
    };
    let outcome = build_manifest(&records, config)?;
    outcome.manifest.save(&args.out)?;
    let mut written = None;
    if let Some(root) = &args.store {
        let source_root = args.source_root.clone().unwrap_or_else(|| parent_of(&args.records));
        written = Some(ProcessedStore::new(root).materialize(&outcome.manifest, &source_root)?);
    }
    let m = &outcome.manifest;
    let value = json!({
        "manifest": args.out,
        "entries": m.len(),
        "counts": m.counts,
        "checksum": m.checksum,
        "filter": outcome.filter.summary(),
        "unbalanced": outcome.unbalanced,
        "store_written": written,
        "seed": seed,
    });
    let mut text = format!(
        "wrote {} ({} entries: {} dog, {} cat)\nchecksum {}\n{}\n",
        args.out.display(),
        m.len(),
        m.counts.dog,
        m.counts.cat,
        m.checksum,
        outcome.filter.summary()
    );
    if let Some(n) = written {
        text.push_str(&format!("processed images written: {n}\n"));
    }
    emit(format, &value, text);
    Ok(())
}

fn load_dataset(manifest: &DatasetManifest, manifest_path: &Path, source_root: Option<&Path>, store: Option<&Path>) -> Result<ImageSet> {
    let source_root = source_root.map_or_else(|| parent_of(manifest_path), Path::to_path_buf);
    Ok(match store {
        Some(root) => {
            let store = ProcessedStore::new(root);
            store.materialize(manifest, &source_root)?;
            store.load(manifest)?
        }
        None => load_image_set(manifest, &source_root)?,
    })
}

fn train(args: TrainArgs, format: Format) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let data = load_dataset(&manifest, &args.manifest, args.source_root.as_deref(), args.store.as_deref())?;
    let budget = match (args.epochs, args.iterations) {
        (_, Some(n)) => Budget::Iterations(n),
        (Some(n), None) => Budget::Epochs(n),
        (None, None) => Budget::Epochs(1),
    };
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut t = Trainer::from_checkpoint(&Checkpoint::load(path)?)?;
            t.set_budget(budget);
            t
        }
        None => {
            let mut c = match args.optimizer {
                Optimizer::Dcgan => TrainConfig::dcgan(args.preset),
                Optimizer::Biggan => TrainConfig::biggan_style(args.preset),
            };
            c.budget = budget;
            c.seed = resolve_seed(args.seed);
            c.truncation_tau = args.tau;
            if let Some(v) = args.batch_size {
                c.batch_size = v;
            }
            if let Some(v) = args.base_channels {
                c.base_channels = v;
            }
            if let Some(v) = args.latent_dim {
                c.latent_dim = v;
            }
            if let Some(v) = args.ortho_beta {
                c.ortho_beta = v;
            }
            Trainer::new(c)?
        }
    };
    let outputs = TrainOutputs {
        sample_every: args.sample_every,
        wall_clock: args.wall_clock,
        ..TrainOutputs::in_dir(&args.out)
    };
    let report = trainer.run(&data, &outputs)?;
    let checkpoint = trainer.checkpoint();
    let final_path = args.out.join("final.ckpt");
    checkpoint.save(&final_path)?;
    let last = report.epochs.last();
    let value = json!({
        "checkpoint": final_path,
        "checkpoint_id": checkpoint.id(),
        "epoch": trainer.epoch(),
        "iteration": trainer.iteration(),
        "seed": trainer.config().seed,
        "last_epoch": last,
    });
    let mut text = format!(
        "trained to epoch {} (iteration {}), seed {}\ncheckpoint {} ({})\n",
        trainer.epoch(),
        trainer.iteration(),
        trainer.config().seed,
        final_path.display(),
        checkpoint.id()
    );
    if let Some(e) = last {
        text.push_str(&format!(
            "last epoch: d_loss {:.4} g_loss {:.4} D(x) {:.3} D(G(z)) {:.3}\n",
            e.d_loss, e.g_loss, e.d_real_mean, e.d_fake_mean
        ));
    }
    emit(format, &value, text);
    Ok(())
}

fn generate(args: GenerateArgs, format: Format) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let seed = resolve_seed(args.seed);
    let samples = generate_samples(&checkpoint, args.n, args.tau, seed)?;
    let written = samples.write_to(&args.out)?;
    let mut registered = None;
    if let Some(dir) = &args.register {
        let mut store = Store::open(dir)?;
        let now = Utc::now();
        let mut fresh = 0;
        for (i, prov) in samples.provenance.iter().enumerate() {
            let (_, created) = store.register_sample(&samples.png(i), prov, now)?;
            fresh += usize::from(created);
        }
        registered = Some(fresh);
    }
    let value = json!({
        "out": args.out,
        "checkpoint_id": checkpoint.id(),
        "seed": seed,
        "tau": args.tau,
        "samples": written,
        "registered": registered,
    });
    let mut text = format!(
        "wrote {} samples and grid.png to {} (checkpoint {}, seed {seed})\n",
        written.len(),
        args.out.display(),
        checkpoint.id()
    );
    if let Some(n) = registered {
        text.push_str(&format!("registered {n} new samples for review\n"));
    }
    emit(format, &value, text);
    Ok(())
}

/// Square PNGs of `dir` in name order, as one N×3×R×R batch.
fn read_sample_dir(dir: &Path) -> Result<Tensor> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png") && p.file_name().is_some_and(|n| n != "grid.png"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG samples in {}", dir.display());
    }
    let mut side = None;
    let mut data = Vec::new();
    for f in &files {
        let img = image::open(f).with_context(|| format!("decoding {}", f.display()))?.to_rgb8();
        let (w, h) = img.dimensions();
        if w != h || side.is_some_and(|s| s != w) {
            bail!("{} is {w}×{h}; samples must be square and equally sized", f.display());
        }
        side = Some(w);
        data.extend(normalize_image(&img).into_data());
    }
    let r = side.expect("at least one file") as usize;
    Ok(Tensor::new([files.len(), 3, r, r], data)?)
}

fn evaluate_is(args: EvaluateArgs, format: Format) -> Result<()> {
    let images = read_sample_dir(&args.samples)?;
    let resolution = images.shape()[2];
    let mut seed = None;
    let probe = match (&args.probe, &args.probe_manifest) {
        (Some(path), _) => ConvProbe::load(path)?,
        (None, Some(mpath)) => {
            let manifest = DatasetManifest::load(mpath)?;
            let data = load_dataset(&manifest, mpath, args.source_root.as_deref(), None)?;
            let labels: Vec<usize> = manifest.entries.iter().map(|e| e.species.index()).collect();
            let s = resolve_seed(args.seed);
            seed = Some(s);
            let mut probe = ConvProbe::new(data.resolution(), 2, s)?;
            probe.train(
                &data,
                &labels,
                &ProbeTraining {
                    epochs: args.probe_epochs,
                    seed: s,
                    ..ProbeTraining::default()
                },
            )?;
            if let Some(out) = &args.save_probe {
                probe.save(out)?;
            }
            probe
        }
        (None, None) => bail!("pass --probe or --probe-manifest"),
    };
    if probe.resolution() != resolution {
        bail!("probe expects {0}×{0} images, samples are {resolution}×{resolution}", probe.resolution());
    }
    let score = probe_inception_score(&probe, &images, args.splits)?;
    let value = json!({ "inception_score": score, "probe_id": probe.id(), "probe_seed": seed });
    let text = format!(
        "IS {:.4} ± {:.4} over {} samples ({} splits, {} classes, probe {})\n",
        score.mean,
        score.std,
        score.n,
        score.splits,
        score.classes,
        probe.id()
    );
    emit(format, &value, text);
    Ok(())
}

fn engagement_report(args: ReportArgs, format: Format) -> Result<()> {
    if let Some(path) = &args.fixtures {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let table = compare_categories(&read_page_csv(&text)?)?;
        match format {
            Format::Json => println!("{}", table.to_json()),
            Format::Csv => print!("{}", table.to_csv()),
            Format::Text => print!("{}", table.to_text()),
        }
        return Ok(());
    }
    let handle = args.page.as_deref().expect("clap requires --page without --fixtures");
    let store = Store::open(&args.data_dir)?;
    let report = store.report_page(handle, args.as_of.unwrap_or_else(Utc::now), IiesWindow::default())?;
    let value = serde_json::to_value(&report)?;
    let mut text = format!(
        "{} at {}: p-IES {}{} over {} posts, {} followers ({:?})\n",
        report.handle,
        report.as_of.to_rfc3339(),
        report.p_ies_display,
        if report.p_ies.partial { " (partial)" } else { "" },
        report.p_ies.post_ids.len(),
        report.followers,
        report.category
    );
    for p in &report.posts {
        let i_ies = p
            .i_ies
            .value()
            .map_or_else(|| "unmeasurable".to_string(), |v| format!("{v:.3}"));
        text.push_str(&format!(
            "  {} {} relevant={} likes={} comments={} i-IES {i_ies}{}\n",
            p.post_id,
            p.posted_at.to_rfc3339(),
            p.relevant,
            p.likes,
            p.comments,
            if p.count_decreased { " (counts decreased)" } else { "" }
        ));
    }
    emit(format, &value, text);
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        bind: args.bind,
        data_dir: args.data_dir,
        ui_dir: args.ui,
        default_page: args.page,
    };
    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    runtime.block_on(engagement::serve(config, shutdown_signal(), |addr| {
        println!("listening on http://{addr}");
    }))?;
    Ok(())
}

fn posting_kit(args: KitArgs, format: Format) -> Result<()> {
    let store = Store::open(&args.data_dir)?;
    let (png, txt) = store.export_posting_kit(&args.post, &args.out)?;
    let value = json!({ "image": png, "caption": txt });
    emit(format, &value, format!("wrote {} and {}\n", png.display(), txt.display()));
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(format!("petgan={level}")));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .try_init();
}

/// Parses `argv` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    let format = cli.format;
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a, format),
        Command::Train(a) => train(a, format),
        Command::Generate(a) => generate(a, format),
        Command::EvaluateIs(a) => evaluate_is(a, format),
        Command::EngagementReport(a) => engagement_report(a, format),
        Command::Serve(a) => serve(a),
        Command::PostingKit(a) => posting_kit(a, format),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            // error types here embed their source in their own message
            let mut causes: Vec<String> = Vec::new();
            for c in e.chain().map(ToString::to_string) {
                if !causes.last().is_some_and(|prev| prev.ends_with(&c)) {
                    causes.push(c);
                }
            }
            if format == Format::Json {
                eprintln!("{}", json!({ "error": causes[0], "causes": &causes[1..] }));
            } else {
                eprintln!("error: {}", causes.join(": "));
            }
            1
        }
    }
}
