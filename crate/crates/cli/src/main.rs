//! `waveloc`: synthesise binaural datasets, train the localisation models
//! and score them on held-out rooms.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use waveloc_core::audio::{frame_signal, read_wav, WavContent};
use waveloc_core::dsp::{gcc_phat, GccFeature, GCC_LAGS};
use waveloc_core::harness::{
    evaluate_chunks, mct_modes, run_matrix, train, ExperimentSpec, MatrixOptions, TrainingMode,
};
use waveloc_core::models::{
    load_checkpoint, save_checkpoint, CheckpointMetadata, ModelConfig, ModelKind,
};
use waveloc_core::nn::{gradcheck, TrainingSchedule};
use waveloc_core::sim::dataset::{make_dataset, DatasetManifest, ResolvedManifest, SplitCounts};
use waveloc_core::sim::room::RoomSpec;
use waveloc_core::sim::Split;

#[derive(Parser, Debug)]
#[command(name = "waveloc", version, about = "Binaural sound localisation toolkit")]
struct Cli {
    /// Base random seed; falls back to $WAVELOC_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for generated files.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Print the resolved configuration before running.
    #[arg(long, global = true)]
    verbose: bool,

    /// Worker threads for dataset rendering (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset of spatialised noise signals.
    Simulate(SimulateArgs),
    /// Train one model and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Train and score every system/mode combination.
    Matrix(MatrixArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Export first-layer kernel spectra of a trained model.
    InspectKernels(InspectArgs),
    /// Print per-frame cross-correlation features for a stereo WAV.
    GccFeatures(GccArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Rooms as id=target_t60 pairs, e.g. room_a=0.32,room_b=0.47.
    #[arg(long, default_value = "room_a=0.32,room_b=0.47,room_c=0.68,room_d=0.89")]
    rooms: String,
    /// Signal duration per entry in seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long, default_value_t = 24)]
    train_per_azimuth: usize,
    #[arg(long, default_value_t = 6)]
    valid_per_azimuth: usize,
    #[arg(long, default_value_t = 15)]
    test_per_azimuth: usize,
    /// Render an existing manifest JSON instead of building the default one.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SystemArg {
    Baseline,
    Gtf,
    Conv,
}

impl From<SystemArg> for ModelKind {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Baseline => ModelKind::GccBaseline,
            SystemArg::Gtf => ModelKind::WavelocGtf,
            SystemArg::Conv => ModelKind::WavelocConv,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    /// Train on anechoic signals only.
    Anechoic,
    /// Multi-conditional: everything except the held-out test room.
    Mct,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Resolved manifest (manifest.resolved.json) of a rendered dataset.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    model: SystemArg,
    #[arg(long, value_enum, default_value = "anechoic", requires_if("mct", "test_room"))]
    mode: ModeArg,
    /// Held-out room for --mode mct.
    #[arg(long)]
    test_room: Option<String>,
    #[arg(long)]
    max_epochs: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Train on every n-th frame of each signal.
    #[arg(long, default_value_t = 1)]
    frame_stride: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Restrict scoring to one room.
    #[arg(long)]
    room: Option<String>,
}

#[derive(Args, Debug)]
struct MatrixArgs {
    #[arg(long)]
    data: PathBuf,
    /// Systems to include.
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = [SystemArg::Baseline, SystemArg::Gtf, SystemArg::Conv])]
    systems: Vec<SystemArg>,
    /// Include the anechoic-only training mode.
    #[arg(long, default_value_t = true)]
    anechoic: bool,
    /// Include one multi-conditional run per reverberant room.
    #[arg(long)]
    mct: bool,
    /// JSON file of matrix options; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<u32>,
    #[arg(long)]
    frame_stride: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1024)]
    nfft: usize,
}

#[derive(Args, Debug)]
struct GccArgs {
    /// Stereo WAV at 16 kHz.
    #[arg(long)]
    wav: PathBuf,
}

fn resolved_seed(cli: &Cli) -> u64 {
    cli.seed
        .or_else(|| {
            std::env::var("WAVELOC_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

fn parse_rooms(spec: &str) -> Result<Vec<RoomSpec>> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|pair| {
            let (id, t60) = pair
                .split_once('=')
                .with_context(|| format!("room spec `{pair}` is not id=t60"))?;
            let t60: f64 = t60
                .parse()
                .with_context(|| format!("bad T60 in room spec `{pair}`"))?;
            Ok(RoomSpec::surrey_scale(id, t60))
        })
        .collect()
}

fn schedule_from(max_epochs: Option<u32>, batch: Option<usize>, lr: Option<f64>) -> TrainingSchedule {
    let mut s = TrainingSchedule::default();
    if let Some(e) = max_epochs {
        s.max_epochs = e;
    }
    if let Some(b) = batch {
        s.batch_size = b;
    }
    if let Some(l) = lr {
        s.base_lr = l;
    }
    s
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let manifest = match &args.manifest {
        Some(path) => DatasetManifest::load(path)?,
        None => DatasetManifest::default_synthetic(
            &parse_rooms(&args.rooms)?,
            SplitCounts {
                train: args.train_per_azimuth,
                valid: args.valid_per_azimuth,
                test: args.test_per_azimuth,
            },
            args.duration,
            resolved_seed(cli),
        ),
    };
    if cli.verbose {
        println!(
            "rendering {} entries across {} conditions into {}",
            manifest.entries.len(),
            manifest.room_ids().len(),
            cli.out_dir.display()
        );
    }
    let resolved = make_dataset(&manifest, &cli.out_dir)?;
    for stat in &resolved.room_stats {
        println!(
            "{}: t60 {} s, drr {} dB",
            stat.room_id,
            stat.measured_t60.map_or("n/a".into(), |v| format!("{v:.3}")),
            stat.measured_drr.map_or("n/a".into(), |v| format!("{v:.2}")),
        );
    }
    for err in &resolved.errors {
        eprintln!("render failure: {err}");
    }
    println!(
        "wrote {} files, manifest {}",
        resolved.entries.len(),
        cli.out_dir.join("manifest.resolved.json").display()
    );
    if resolved.errors.is_empty() {
        Ok(())
    } else {
        bail!("{} entries failed to render", resolved.errors.len())
    }
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let resolved = ResolvedManifest::load(&args.data)?;
    let mode = match (args.mode, &args.test_room) {
        (ModeArg::Mct, Some(room)) => TrainingMode::Mct {
            test_room: room.clone(),
        },
        _ => TrainingMode::AnechoicOnly,
    };
    let mut spec = ExperimentSpec::new(
        ModelConfig::new(args.model.into(), resolved_seed(cli)),
        mode,
    );
    spec.schedule = schedule_from(args.max_epochs, args.batch_size, args.learning_rate);
    spec.frame_stride = args.frame_stride;
    if cli.verbose {
        println!("{spec:#?}");
    }

    let (model, report) = train(&spec, &resolved)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let stem = format!("{}_{}", spec.model.kind.as_str(), match &spec.mode {
        TrainingMode::AnechoicOnly => "anechoic".to_string(),
        TrainingMode::Mct { test_room } => format!("mct_{test_room}"),
    });
    let ckpt = cli.out_dir.join(format!("{stem}.wloc"));
    let best = report.epochs[report.best_epoch].val_loss;
    save_checkpoint(
        &model,
        &spec.model,
        &CheckpointMetadata {
            epochs_run: report.epochs.len() as u32,
            best_val_loss: Some(best),
        },
        &ckpt,
    )?;
    let report_path = cli.out_dir.join(format!("{stem}.report.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "trained {} epochs ({} train frames), best val loss {best:.4} at epoch {}",
        report.epochs.len(),
        report.train_frames,
        report.best_epoch
    );
    println!("saved {} and {}", ckpt.display(), report_path.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    let resolved = ResolvedManifest::load(&args.data)?;
    let loaded = load_checkpoint(&args.checkpoint)?;
    if cli.verbose {
        println!(
            "scoring {} on test split{}",
            loaded.config.kind.as_str(),
            args.room.as_deref().map_or(String::new(), |r| format!(", room {r}"))
        );
    }
    let summary = evaluate_chunks(&loaded.model, &resolved, Split::Test, args.room.as_deref())?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    println!(
        "rmse {:.1} deg over {} chunks ({} short files skipped); details in {}",
        summary.rmse_deg,
        summary.results.len(),
        summary.skipped_files,
        path.display()
    );
    Ok(())
}

fn cmd_matrix(cli: &Cli, args: &MatrixArgs) -> Result<()> {
    let resolved = ResolvedManifest::load(&args.data)?;
    let systems: Vec<ModelKind> = args.systems.iter().map(|&s| s.into()).collect();
    let mut modes = Vec::new();
    if args.anechoic {
        modes.push(TrainingMode::AnechoicOnly);
    }
    if args.mct {
        modes.extend(mct_modes(&resolved));
    }
    if modes.is_empty() {
        bail!("no training modes selected");
    }
    let mut options = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice::<MatrixOptions>(&bytes)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => MatrixOptions::default(),
    };
    if let Some(e) = args.max_epochs {
        options.schedule.max_epochs = e;
    }
    if let Some(s) = args.frame_stride {
        options.frame_stride = s;
    }
    if cli.seed.is_some() || std::env::var("WAVELOC_SEED").is_ok() || args.config.is_none() {
        options.seed = resolved_seed(cli);
    }
    if cli.verbose {
        println!("{} systems x {} modes", systems.len(), modes.len());
    }
    let report = run_matrix(&resolved, &systems, &modes, &options);
    print!("{}", report.render());
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("matrix.json");
    report.save(&path)?;
    println!("wrote {}", path.display());
    if report.cells.iter().any(|c| c.error.is_some()) {
        bail!("matrix finished with failed cells");
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let report = gradcheck(args.tolerance)?;
    for check in &report.checks {
        println!(
            "{:<24} {} (max rel err {:.2e}, {} params, {} frozen)",
            check.name,
            if check.passed { "ok" } else { "FAILED" },
            check.max_rel_error,
            check.checked_params,
            check.skipped.len()
        );
    }
    if report.passed() {
        Ok(())
    } else {
        bail!("gradient check failed at tolerance {:.1e}", report.tolerance)
    }
}

fn cmd_inspect(cli: &Cli, args: &InspectArgs) -> Result<()> {
    let loaded = load_checkpoint(&args.checkpoint)?;
    let spectra =
        waveloc_core::harness::export_kernel_spectra(&loaded.model, &loaded.config, args.nfft)?;
    std::fs::create_dir_all(&cli.out_dir)?;
    let path = cli.out_dir.join("kernel_spectra.tsv");
    waveloc_core::harness::write_spectra(&spectra, &path)?;
    let frac = waveloc_core::harness::band_pass_fraction(&spectra, 10);
    println!(
        "{} kernels x {} bins, band-pass fraction {frac:.2}; wrote {}",
        spectra.rows(),
        spectra.cols(),
        path.display()
    );
    Ok(())
}

fn cmd_gcc(args: &GccArgs) -> Result<()> {
    let wave = match read_wav(&args.wav)? {
        WavContent::Binaural(w) => w,
        WavContent::Mono(_) => bail!("{} is mono; need a stereo file", args.wav.display()),
    };
    let header: Vec<String> = (0..GCC_LAGS)
        .map(|i| format!("lag{}", GccFeature::lag_of_index(i)))
        .collect();
    println!("frame\t{}", header.join("\t"));
    for (i, frame) in frame_signal(&wave)?.iter().enumerate() {
        let feat = gcc_phat(frame);
        let row: Vec<String> = feat.values().iter().map(|v| format!("{v:.4}")).collect();
        println!("{i}\t{}", row.join("\t"));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("could not configure worker threads")?;
    }
    // Every run states its resolved configuration up front so it can be
    // reproduced from the output alone.
    println!(
        "config: seed={} out-dir={} jobs={} {:?}",
        resolved_seed(cli),
        cli.out_dir.display(),
        cli.jobs.map_or("auto".into(), |j| j.to_string()),
        cli.command
    );
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Matrix(a) => cmd_matrix(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::InspectKernels(a) => cmd_inspect(cli, a),
        Command::GccFeatures(a) => cmd_gcc(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
