use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, LevelFilter};

use moric::classifier::{MoricModel, TrainConfig};
use moric::delay_doppler::{velocity_set, DopplerParams, Estimator};
use moric::features::{KernelBank, DEFAULT_BIASES, DEFAULT_KERNELS};
use moric::formats::{read_csit, read_dvel, read_feat, write_csit, write_dvel, write_feat};
use moric::harness::{
    evaluate_by_subject, fit_few_shot, generate_dataset, load_samples, run_calibration_sweep, run_loso, train_on_all,
    LoadedSample, Manifest, Report, SyntheticConfig,
};
use moric::pipeline::{velocity_to_features, PipelineConfig};
use moric::sanitize::{sanitize, HampelParams};
use moric::simulator::{synthesize_csi, Scene};
use moric::{Error, Gesture, RadioConfig, Result, SampleMeta};

#[derive(Parser)]
#[command(name = "moric", version, about = "Wi-Fi CSI gesture sensing pipeline")]
struct Cli {
    /// Root seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize CSI from a scene file, or a whole labelled dataset.
    Simulate(SimulateArgs),
    /// Remove linear phase distortion and impulsive noise.
    Sanitize(SanitizeArgs),
    /// Delay-Doppler decomposition into per-bin velocity vectors.
    Decompose(DecomposeArgs),
    /// Random-kernel features of a velocity set.
    Features(FeaturesArgs),
    /// Train a classifier on every sample of a manifest or feature files.
    Train(TrainArgs),
    /// Score a model per subject.
    Eval(EvalArgs),
    /// Fit the few-shot calibration, or sweep over calibration set sizes.
    Calibrate(CalibrateArgs),
    /// Leave-one-subject-out cross-validation.
    Loso(LosoArgs),
    /// Re-emit a report's CSV tables and print a summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene JSON document.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    scene: Option<PathBuf>,
    /// Output CSIT file (with --scene).
    #[arg(long, requires = "scene")]
    out: Option<PathBuf>,
    /// Write ground truth JSON here (with --scene).
    #[arg(long, requires = "scene")]
    truth: Option<PathBuf>,
    /// Label the capture with this gesture; also needs --subject.
    #[arg(long, requires = "scene")]
    gesture: Option<String>,
    #[arg(long, requires = "gesture")]
    subject: Option<String>,
    /// Generate a synthetic dataset and manifest.json in this directory.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    subjects: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 52)]
    subcarriers: usize,
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    #[arg(long, default_value_t = 25.0)]
    snr_db: f64,
}

#[derive(Args)]
struct SanitizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Only compensate the phase.
    #[arg(long)]
    skip_hampel: bool,
}

#[derive(Args, Clone)]
struct DopplerArgs {
    #[arg(long, default_value_t = 64)]
    window: usize,
    #[arg(long, default_value_t = 4)]
    hop: usize,
    #[arg(long, default_value_t = 512)]
    pad: usize,
    /// psd or phase.
    #[arg(long, default_value = "psd")]
    estimator: Estimator,
    /// Vectors at or below this SNR are zeroed.
    #[arg(long, default_value_t = 2.0)]
    snr_db: f64,
}

impl DopplerArgs {
    fn params(&self) -> Result<DopplerParams> {
        Ok(DopplerParams {
            window_len: self.window,
            hop: self.hop,
            fft_pad: self.pad,
            estimator: self.estimator,
            snr_threshold_db: self.snr_db,
            ..DopplerParams::default()
        })
    }
}

#[derive(Args)]
struct DecomposeArgs {
    /// Sanitized CSIT file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    doppler: DopplerArgs,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_KERNELS)]
    kernels: usize,
    #[arg(long, default_value_t = DEFAULT_BIASES)]
    biases: usize,
    /// Write the kernel bank here.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Reuse an existing kernel bank instead of building one.
    #[arg(long, conflicts_with_all = ["bank", "kernels", "biases"])]
    use_bank: Option<PathBuf>,
}

/// Everything needed to turn manifest entries into features.
#[derive(Args, Clone)]
struct PipelineArgs {
    #[arg(long, default_value_t = DEFAULT_KERNELS)]
    kernels: usize,
    #[arg(long, default_value_t = DEFAULT_BIASES)]
    biases: usize,
    #[arg(long)]
    skip_hampel: bool,
    #[command(flatten)]
    doppler: DopplerArgs,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            hampel: (!self.skip_hampel).then(HampelParams::default),
            doppler: self.doppler.params()?,
            n_kernels: self.kernels,
            n_biases: self.biases,
        })
    }
}

#[derive(Args, Clone)]
struct TrainingArgs {
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 2500)]
    epochs: usize,
    #[arg(long, default_value_t = 200)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    label_smoothing: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    head_hidden: usize,
    #[arg(long, default_value_t = 128)]
    reduced_dim: usize,
    #[arg(long, default_value_t = 128)]
    cls_hidden: usize,
    /// Exclude gated vectors from max pooling.
    #[arg(long)]
    mask_gated: bool,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            max_epochs: self.epochs,
            label_smoothing: self.label_smoothing,
            patience: self.patience,
            weight_decay: self.weight_decay,
            seed: 0,
            n_heads: self.heads,
            head_hidden: self.head_hidden,
            reduced_dim: self.reduced_dim,
            cls_hidden: self.cls_hidden,
            mask_gated: self.mask_gated,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "features")]
    manifest: Option<PathBuf>,
    /// Labelled FEAT files, as an alternative to a manifest.
    #[arg(long, num_args = 1.., conflicts_with = "manifest", requires = "labels")]
    features: Vec<PathBuf>,
    /// Gesture of each feature file, in the same order.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    labels: Vec<String>,
    /// Kernel bank; required for feature inputs.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Apply the stored calibration.
    #[arg(long)]
    calibrated: bool,
    /// Report JSON path; CSV tables are written next to it.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Held-out subject's samples.
    #[arg(long)]
    manifest: PathBuf,
    /// Fit on this many samples per class and save the calibrated model.
    #[arg(long, requires = "out", conflicts_with = "counts")]
    per_class: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep these calibration set sizes instead, e.g. 0,4,6,10.
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "per_class",
        requires = "report"
    )]
    counts: Vec<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct LosoArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Kernel bank; required for feature manifests.
    #[arg(long)]
    bank: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Write the report and its tables here; defaults to next to the input.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn run(command: Command, seed: u64) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Sanitize(a) => {
            let frame = read_csit(&a.input)?;
            let hampel = (!a.skip_hampel).then(HampelParams::default);
            write_csit(&sanitize(&frame, hampel)?, &a.out)
        }
        Command::Decompose(a) => {
            let frame = read_csit(&a.input)?;
            let vs = velocity_set(&frame, &a.doppler.params()?)?;
            let kept = vs.vectors.iter().filter(|v| !v.gated).count();
            info!("{} of {} velocity vectors pass the SNR gate", kept, vs.vectors.len());
            write_dvel(&vs, &a.out)
        }
        Command::Features(a) => features(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => {
            let model = MoricModel::read(&a.model)?;
            let samples = model_samples(&model, &a.manifest, &a.pipeline, seed)?;
            let started = Instant::now();
            let mut report = evaluate_by_subject(&model, &samples, a.calibrated)?;
            report.runtime_s = started.elapsed().as_secs_f64();
            finish_report(&report, a.report.as_deref())
        }
        Command::Calibrate(a) => calibrate_cmd(a, seed),
        Command::Loso(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let bank = a.bank.as_deref().map(KernelBank::read).transpose()?;
            let started = Instant::now();
            let (_, samples) = load_samples(&manifest, &a.pipeline.config()?, seed, bank)?;
            let mut report = run_loso(&samples, &a.training.config(), seed)?;
            report.runtime_s = started.elapsed().as_secs_f64();
            finish_report(&report, Some(&a.report))
        }
        Command::Report(a) => {
            let report = Report::from_json(&fs::read_to_string(&a.input)?)?;
            finish_report(&report, Some(a.out.as_deref().unwrap_or(&a.input)))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn simulate(a: SimulateArgs, seed: u64) -> Result<()> {
    if let Some(dir) = a.dataset {
        let cfg = SyntheticConfig {
            n_subjects: a.subjects,
            per_class: a.per_class,
            radio: RadioConfig {
                n_subcarriers: a.subcarriers,
                ..RadioConfig::wifi_2g4()
            },
            duration_s: a.duration,
            snr_db: a.snr_db,
            seed,
            ..SyntheticConfig::default()
        };
        cfg.radio.validate()?;
        let manifest = generate_dataset(&cfg, &dir)?;
        println!("{} samples written to {}", manifest.entries.len(), dir.display());
        return Ok(());
    }
    let scene_path = a.scene.expect("clap enforces --scene or --dataset");
    let out = a
        .out
        .ok_or_else(|| Error::Invalid("--out is required with --scene".into()))?;
    let scene: Scene = read_json(&scene_path)?;
    let (mut frame, truth) = synthesize_csi(&scene, seed)?;
    if let Some(g) = a.gesture {
        let stem = out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        frame = frame.with_labels(SampleMeta {
            sample_id: stem,
            subject: a.subject.unwrap_or_else(|| "unknown".into()),
            orientation_deg: 0,
            gesture: Gesture::from(g),
            access_point: String::new(),
        });
    }
    write_csit(&frame, &out)?;
    if let Some(path) = a.truth {
        let text = serde_json::to_string_pretty(&truth).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text + "\n")?;
    }
    Ok(())
}

fn features(a: FeaturesArgs, seed: u64) -> Result<()> {
    let vs = read_dvel(&a.input)?;
    let bank = match &a.use_bank {
        Some(path) => KernelBank::read(path)?,
        None => PipelineConfig {
            n_kernels: a.kernels,
            n_biases: a.biases,
            ..PipelineConfig::default()
        }
        .bank(seed, vs.n_time)?,
    };
    let fs = velocity_to_features(&vs, &bank)?;
    write_feat(&fs, &a.out)?;
    if let Some(path) = a.bank {
        bank.write(&path)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<()> {
    let cfg = a.pipeline.config()?;
    let bank = a.bank.as_deref().map(KernelBank::read).transpose()?;
    let (bank, samples) = match &a.manifest {
        Some(path) => load_samples(&Manifest::load(path)?, &cfg, seed, bank)?,
        None => {
            let bank = bank.ok_or_else(|| Error::Invalid("--features needs --bank".into()))?;
            if a.labels.len() != a.features.len() {
                return Err(Error::Invalid(format!(
                    "{} feature files but {} labels",
                    a.features.len(),
                    a.labels.len()
                )));
            }
            let samples = a
                .features
                .iter()
                .zip(&a.labels)
                .map(|(p, g)| feature_sample(p, Gesture::from(g.clone()), &bank))
                .collect::<Result<Vec<_>>>()?;
            (bank, samples)
        }
    };
    let (mut model, log) = train_on_all(&samples, &a.training.config(), seed)?;
    model.bank = Some(bank);
    model.write(&a.out)?;
    println!(
        "trained on {} samples, {} classes; best epoch {} of {}",
        samples.len(),
        model.n_classes(),
        log.best_epoch,
        log.train_loss.len()
    );
    Ok(())
}

fn feature_sample(path: &Path, gesture: Gesture, bank: &KernelBank) -> Result<LoadedSample> {
    let fs = read_feat(path)?.with_label(gesture.clone());
    if fs.dim != bank.dim() {
        return Err(Error::Invalid(format!(
            "{}: feature width {} does not match bank width {}",
            path.display(),
            fs.dim,
            bank.dim()
        )));
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadedSample {
        meta: SampleMeta {
            sample_id: stem,
            subject: "unknown".into(),
            orientation_deg: 0,
            gesture,
            access_point: String::new(),
        },
        features: fs,
        snr: vec![],
    })
}

/// Manifest samples featurized with the model's own kernel bank.
fn model_samples(model: &MoricModel, manifest: &Path, pipeline: &PipelineArgs, seed: u64) -> Result<Vec<LoadedSample>> {
    let bank = model
        .bank
        .clone()
        .ok_or_else(|| Error::Invalid("model file carries no kernel bank".into()))?;
    let (_, samples) = load_samples(&Manifest::load(manifest)?, &pipeline.config()?, seed, Some(bank))?;
    Ok(samples)
}

fn calibrate_cmd(a: CalibrateArgs, seed: u64) -> Result<()> {
    let mut model = MoricModel::read(&a.model)?;
    let samples = model_samples(&model, &a.manifest, &a.pipeline, seed)?;
    if let Some(per_class) = a.per_class {
        let cal = fit_few_shot(&model, &samples, per_class, seed)?;
        println!("temperature {:.4}, biases {:?}", cal.temperature, cal.bias);
        model.calibration = Some(cal);
        let out = a.out.expect("clap enforces --out with --per-class");
        return model.write(&out);
    }
    let started = Instant::now();
    let mut report = run_calibration_sweep(&model, &samples, &a.counts, seed)?;
    report.runtime_s = started.elapsed().as_secs_f64();
    finish_report(&report, a.report.as_deref())
}

fn finish_report(report: &Report, path: Option<&Path>) -> Result<()> {
    println!(
        "{}: accuracy {:.2}% +- {:.2}% over {} fold(s)",
        report.kind,
        100.0 * report.mean_accuracy,
        100.0 * report.sd_accuracy,
        report.folds.len()
    );
    for f in &report.folds {
        println!("  {:12} {:7.2}%  (n={})", f.subject, 100.0 * f.accuracy, f.n_test);
    }
    for p in &report.calibration {
        println!(
            "  calibrated with {:2}/class: {:6.2}% +- {:.2}%",
            p.samples_per_class,
            100.0 * p.mean_accuracy,
            100.0 * p.sd_accuracy
        );
    }
    if report.runtime_s > 0.0 {
        println!("  runtime {:.1} s", report.runtime_s);
    }
    if let Some(path) = path {
        for written in report.emit(path)? {
            info!("wrote {}", written.display());
        }
    }
    Ok(())
}
