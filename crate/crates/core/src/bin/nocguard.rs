use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nocguard::bench::{
    self, calibrate_threshold, detection_report, detector_samples, export_frame, generate,
    load_dataset, localization_report, plan_scenarios, read_frame, run_pipeline, segmentation_dice,
    segmentor_samples, write_dataset, Dataset, DatasetPlan, FrameFormat, Models, PipelineConfig,
    PlannedScenario, WindowRecord,
};
use nocguard::cnn::{
    load_detector, load_segmentor, save_model, write_train_log, AnyModel, TrainConfig,
};
use nocguard::config::{parse_override, pipeline_from_kv, scenario_from_kv, KeyValues};
use nocguard::sim::{run_scenario, TrafficClass};
use nocguard::telemetry::{build_frames, normalize_boc, FeatureKind};
use nocguard::traffic::Pattern;
use nocguard::Direction;

/// Exit status when alarms were raised but no attacker could be confirmed.
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "nocguard",
    version,
    about = "Flooding DoS detection and localization on mesh NoCs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and report latency statistics.
    Simulate(SimulateArgs),
    /// Simulate scenarios and write labelled frames with a manifest.
    GenDataset(GenDatasetArgs),
    /// Train the VCO detector on a dataset.
    TrainDetector(TrainArgs),
    /// Train the BOC segmentor on a dataset.
    TrainSegmentor(TrainArgs),
    /// Run the detect/localize/quarantine loop on a scenario.
    RunPipeline(PipelineArgs),
    /// Detection and localization metrics of trained models on a dataset.
    Eval(EvalArgs),
    /// Write one feature frame as CSV or PGM.
    ExportFrame(ExportArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set attackers=39:0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        let o = self
            .overrides
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        kv.override_with(&o);
        Ok(kv)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Per-packet delivery CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct GenDatasetArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scenario files; each gets a matched no-attack run. Without them a
    /// random plan is generated from the flags below.
    #[arg(long = "scenario")]
    scenarios: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    radix: usize,
    /// Comma-separated traffic patterns.
    #[arg(
        long,
        default_value = "uniform_random,tornado,shuffle,neighbor,bit_complement,bit_rotation"
    )]
    patterns: String,
    #[arg(long, default_value_t = 240)]
    scenarios_per_pattern: usize,
    #[arg(long, default_value_t = 1)]
    attackers_per_scenario: usize,
    #[arg(long, default_value_t = 0.8)]
    fir: f64,
    #[arg(long, default_value_t = 0.003)]
    normal_rate: f64,
    #[arg(long, default_value_t = 1)]
    windows: u64,
    #[arg(long, default_value_t = 1000)]
    sample_period: u64,
    #[arg(long, default_value_t = 1000)]
    warmup: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    dataset: PathBuf,
    /// Model output file.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 40)]
    patience: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Share of scenario groups used for training; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Share of training samples used for early-stopping validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    /// Train the detector without mirrored copies of each sample.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    detector: Option<PathBuf>,
    #[arg(long)]
    segmentor: Option<PathBuf>,
    /// Directory for reports.csv, windows.csv and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    detector: PathBuf,
    #[arg(long)]
    segmentor: PathBuf,
    /// Evaluate only the held-out groups of the split used for training.
    #[arg(long)]
    held_out: bool,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    /// Frame CSV to convert; otherwise the frame is simulated from `--config`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    window: usize,
    #[arg(long, default_value = "E")]
    direction: Direction,
    #[arg(long, default_value = "vco")]
    kind: FeatureKind,
    #[arg(long, default_value = "csv")]
    format: FrameFormat,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::TrainDetector(a) => train_cmd(a, true),
        Command::TrainSegmentor(a) => train_cmd(a, false),
        Command::RunPipeline(a) => pipeline(a),
        Command::Eval(a) => eval(a),
        Command::ExportFrame(a) => export(a),
    }
    .map(|()| 0)
    .or_else(|e| match e.downcast_ref::<Inconclusive>() {
        Some(_) => Ok(EXIT_INCONCLUSIVE),
        None => Err(e),
    })
}

#[derive(Debug)]
struct Inconclusive;

impl std::fmt::Display for Inconclusive {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("localization inconclusive")
    }
}

impl std::error::Error for Inconclusive {}

fn simulate(a: SimulateArgs) -> Result<()> {
    let cfg = scenario_from_kv(&a.config.key_values()?)?;
    let trace = run_scenario(&cfg)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "no samples".to_string(), |x| format!("{x:.3}"));
    println!("windows {}", trace.windows.len());
    println!("delivered packets {}", trace.deliveries.len());
    println!(
        "mean latency normal {}",
        fmt(trace.average_latency(TrafficClass::Normal))
    );
    println!(
        "mean latency malicious {}",
        fmt(trace.average_latency(TrafficClass::Malicious))
    );
    println!(
        "attack windows {}",
        trace.windows.iter().filter(|w| w.is_attack()).count()
    );
    if let Some(p) = a.trace {
        let f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        trace
            .write_deliveries_csv(std::io::BufWriter::new(f))
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn gen_dataset(a: GenDatasetArgs) -> Result<()> {
    let plan: Vec<PlannedScenario> = if a.scenarios.is_empty() {
        let patterns = a
            .patterns
            .split(',')
            .map(|s| s.parse::<Pattern>())
            .collect::<Result<Vec<_>, _>>()?;
        plan_scenarios(&DatasetPlan {
            radix: a.radix,
            patterns,
            scenarios_per_pattern: a.scenarios_per_pattern,
            attackers_per_scenario: a.attackers_per_scenario,
            fir: a.fir,
            normal_rate: a.normal_rate,
            warmup_cycles: a.warmup,
            windows: a.windows,
            sample_period: a.sample_period,
            seed: a.seed,
            matched_normal: true,
        })
    } else {
        let mut plan = Vec::new();
        for (group, p) in a.scenarios.iter().enumerate() {
            let config =
                scenario_from_kv(&KeyValues::load(p)?).with_context(|| p.display().to_string())?;
            let normal = nocguard::sim::ScenarioConfig {
                attackers: Vec::new(),
                ..config.clone()
            };
            plan.push(PlannedScenario { group, config });
            plan.push(PlannedScenario {
                group,
                config: normal,
            });
        }
        plan
    };
    let runs = generate(&plan, true);
    let manifest = write_dataset(&a.out, &runs)?;
    let ok: Vec<&WindowRecord> = runs
        .iter()
        .filter_map(|r| r.windows.as_ref().ok())
        .flatten()
        .collect();
    let attack = ok.iter().filter(|w| w.truth.attack).count();
    println!(
        "scenarios {} ({} failed)",
        runs.len(),
        runs.iter().filter(|r| r.windows.is_err()).count()
    );
    println!(
        "windows {} attack {} normal {}",
        ok.len(),
        attack,
        ok.len() - attack
    );
    println!("manifest {}", manifest.display());
    Ok(())
}

/// Windows of the train and held-out groups.
fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> (Vec<&WindowRecord>, Vec<&WindowRecord>) {
    let mut groups: Vec<usize> = ds.scenarios.iter().map(|s| s.1).collect();
    groups.sort_unstable();
    groups.dedup();
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    groups.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    let n = ((groups.len() as f64 * train_fraction).round() as usize).min(groups.len());
    let train: std::collections::BTreeSet<usize> = groups[..n].iter().copied().collect();
    ds.windows
        .iter()
        .partition(|w| ds.group_of(w.scenario).is_some_and(|g| train.contains(&g)))
}

fn train_cmd(a: TrainArgs, detector: bool) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let (train_w, held) = split(&ds, a.train_fraction, a.seed);
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.seed,
        train_fraction: 1.0 - a.val_fraction,
        val_fraction: a.val_fraction,
        patience: a.patience,
        ..TrainConfig::default()
    };
    let log = if detector {
        let out = bench::train_detector(
            ds.radix,
            &detector_samples(train_w.iter().copied())?,
            &cfg,
            !a.no_augment,
        )?;
        let rep = detection_report(&out.model, held.iter().copied(), 0.5)?;
        println!("best epoch {} of {}", out.best_epoch, out.log.len());
        print!("held-out {}", rep.to_text());
        let t = calibrate_threshold(&out.model, train_w.iter().copied(), 0.5)?;
        println!("silent-on-training-normals detection threshold {t:.4}");
        save_model(&AnyModel::Detector(out.model), &a.out)?;
        out.log
    } else {
        let out =
            bench::train_segmentor(ds.radix, &segmentor_samples(train_w.iter().copied())?, &cfg)?;
        let held_samples = segmentor_samples(held.iter().copied())?;
        let d = segmentation_dice(&held_samples, &out.model, 0.5)?;
        println!("best epoch {} of {}", out.best_epoch, out.log.len());
        println!(
            "held-out mean dice {}",
            d.map_or("n/a".into(), |x| format!("{x:.4}"))
        );
        save_model(&AnyModel::Segmentor(out.model), &a.out)?;
        out.log
    };
    if let Some(p) = a.log {
        write_train_log(&p, &log)?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg: PipelineConfig = pipeline_from_kv(&a.config.key_values()?)?;
    if a.detector.is_some() {
        cfg.detector_model = a.detector;
    }
    if a.segmentor.is_some() {
        cfg.segmentor_model = a.segmentor;
    }
    if a.out.is_some() {
        cfg.output_dir = a.out;
    }
    let models = Models::load(&cfg)?;
    let outcome = run_pipeline(&cfg, &models)?;
    print!("{}", outcome.summary_text());
    if let Some(dir) = &cfg.output_dir {
        outcome.write_outputs(dir)?;
    }
    if outcome.inconclusive() {
        return Err(Inconclusive.into());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ds = load_dataset(&a.dataset)?;
    let models = Models {
        detector: load_detector(&a.detector, ds.radix)?,
        segmentor: load_segmentor(&a.segmentor, ds.radix)?,
    };
    let windows: Vec<&WindowRecord> = if a.held_out {
        split(&ds, a.train_fraction, a.seed).1
    } else {
        ds.windows.iter().collect()
    };
    if windows.is_empty() {
        bail!("no windows to evaluate");
    }
    let cfg = PipelineConfig::default();
    let det = detection_report(
        &models.detector,
        windows.iter().copied(),
        cfg.detection_threshold,
    )?;
    let mut loc = localization_report(&models, &cfg, windows.iter().copied())?;
    loc.dice_mean = segmentation_dice(
        &segmentor_samples(windows.iter().copied())?,
        &models.segmentor,
        cfg.segmentation_threshold,
    )?;
    print!("{}{}", det.to_text(), loc.to_text());
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let frame = match &a.input {
        Some(p) => read_frame(p)?,
        None => {
            let cfg = scenario_from_kv(&a.config.key_values()?)?;
            let trace = run_scenario(&cfg)?;
            let snap = trace
                .windows
                .get(a.window)
                .with_context(|| format!("scenario has {} windows", trace.windows.len()))?;
            build_frames(snap, a.kind)?[a.direction.index()].clone()
        }
    };
    let frame = match (a.format, frame.kind) {
        (FrameFormat::Pgm, FeatureKind::Boc) => normalize_boc(&frame),
        _ => frame,
    };
    export_frame(&frame, a.format, Path::new(&a.out))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
