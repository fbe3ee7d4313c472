use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;

use kpseg::arch::{
    gradient_suite, load_checkpoint, predict_cloud, save_checkpoint, train, BatchSampler, Network,
    TrainOptions,
};
use kpseg::config::RunConfig;
use kpseg::metrics::{compute_metrics, ConfusionMatrix};
use kpseg::pccore::{grid_subsample, load_cloud, save_cloud, CloudFormat, LabelMode, LabeledCloud};
use kpseg::synth::{
    build_scene, flyover_scan, fov_coverage, generate_scene, rosette_directions, RosetteConfig,
    SceneSpec, DEFAULT_DENSITY,
};

#[derive(Parser)]
#[command(
    name = "kpseg",
    version,
    about = "Point cloud segmentation with stacked kernel point convolutions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Seed for every random choice of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Network preset: paper or tiny.
    #[arg(long, global = true)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate labeled synthetic interchange scenes.
    GenData(GenData),
    /// Grid-subsample a cloud.
    GridSample(GridSample),
    /// Simulate the rosette scan pattern.
    Pattern(Pattern),
    /// Train a network.
    Train(Train),
    /// Score a checkpoint against labeled clouds.
    Eval(Eval),
    /// Label a cloud with a checkpoint.
    Predict(Predict),
    /// Finite-difference check of every layer's gradients.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 1)]
    scenes: usize,
    /// Scene side length, meters.
    #[arg(long, default_value_t = 40.0)]
    extent: f64,
    /// Surface sampling density, points per square meter.
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    density: f64,
    /// Scene spec JSON used for every scene instead of random layouts.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// ply_ascii, kpc_binary or xyz_text.
    #[arg(long, default_value = "kpc_binary")]
    format: String,
    /// Sample with a simulated rosette flyover instead of uniform surface sampling.
    #[arg(long)]
    scan: bool,
    #[arg(long, default_value_t = 30.0)]
    altitude: f64,
    #[arg(long, default_value_t = 8)]
    poses: usize,
    /// Seconds spent at each pose.
    #[arg(long, default_value_t = 0.5)]
    dwell: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GridSample {
    #[arg(long)]
    input: PathBuf,
    /// Cell size, meters.
    #[arg(long, default_value_t = 0.1)]
    cell: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Pattern {
    /// Integration time, seconds.
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    /// Report the fraction of the field of view covered.
    #[arg(long)]
    coverage: bool,
    #[arg(long, default_value_t = 64)]
    grid_res: usize,
    /// Rosette parameters as JSON; defaults otherwise.
    #[arg(long)]
    rosette: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Train {
    /// Directory of labeled training clouds.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of steps; defaults to epochs x steps_per_epoch.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled cloud or directory of clouds.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    tile_stride: Option<f64>,
    /// Method name in the table.
    #[arg(long, default_value = "kpseg")]
    method: String,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Predict {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    tile_stride: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GradCheck {
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<kpseg::Error>().map_or("cli", |k| k.kind());
            let message = format!("{e:#}");
            eprintln!("{}", json!({ "error": kind, "message": message }));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::GridSample(a) => grid_sample(a),
        Command::Pattern(a) => pattern(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

/// Exits with usage text like clap does for its own argument errors.
fn require_out(common: &Common) -> PathBuf {
    match &common.out {
        Some(p) => p.clone(),
        None => Cli::command()
            .error(
                ErrorKind::MissingRequiredArgument,
                "--out is required for this command",
            )
            .exit(),
    }
}

fn format_of(path: &Path) -> anyhow::Result<CloudFormat> {
    CloudFormat::from_path(path).ok_or_else(|| {
        kpseg::Error::Argument(format!("cannot tell the format of {}", path.display())).into()
    })
}

fn read_cloud(path: &Path) -> anyhow::Result<LabeledCloud> {
    Ok(load_cloud(path, format_of(path)?)?)
}

/// A cloud file, or every cloud file of a directory in name order.
fn read_clouds(path: &Path) -> anyhow::Result<Vec<(PathBuf, LabeledCloud)>> {
    if !path.is_dir() {
        return Ok(vec![(path.to_path_buf(), read_cloud(path)?)]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && CloudFormat::from_path(p).is_some())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(kpseg::Error::Data(format!("no cloud files in {}", path.display())).into());
    }
    files
        .into_iter()
        .map(|f| {
            let c = read_cloud(&f)?;
            Ok((f, c))
        })
        .collect()
}

fn run_config(common: &Common) -> anyhow::Result<RunConfig> {
    let preset = common.preset.as_deref().unwrap_or("paper");
    let mut cfg = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text, preset)?
        }
        None => RunConfig::preset(preset)?,
    };
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    Ok(cfg)
}

fn gen_data(a: GenData) -> anyhow::Result<()> {
    let out = require_out(&a.common);
    let seed = a.common.seed.unwrap_or(0);
    let format: CloudFormat = a.format.parse()?;
    let fixed = a.spec.as_deref().map(SceneSpec::load).transpose()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for i in 0..a.scenes {
        let scene_seed = seed.wrapping_add(i as u64);
        let spec = match &fixed {
            Some(s) => s.clone(),
            None => SceneSpec::random(a.extent, a.density, scene_seed),
        };
        let cloud = if a.scan {
            let scene = build_scene(&spec, scene_seed)?;
            flyover_scan(
                &scene,
                &RosetteConfig::default(),
                a.altitude,
                a.poses,
                a.dwell,
                scene_seed,
            )?
        } else {
            generate_scene(&spec, scene_seed)?
        };
        let stem = format!("scene_{i:03}");
        let path = out.join(format!("{stem}.{}", format.extension()));
        save_cloud(&cloud, &path, format)?;
        let spec_path = out.join(format!("{stem}.json"));
        fs::write(&spec_path, serde_json::to_string_pretty(&spec)? + "\n")
            .with_context(|| format!("writing {}", spec_path.display()))?;
        println!(
            "{}",
            json!({ "scene": path, "points": cloud.len(), "histogram": cloud.class_histogram() })
        );
    }
    Ok(())
}

fn grid_sample(a: GridSample) -> anyhow::Result<()> {
    let out = require_out(&a.common);
    let cloud = read_cloud(&a.input)?;
    let sub = grid_subsample(&cloud, a.cell, LabelMode::Majority)?;
    save_cloud(&sub, &out, format_of(&out)?)?;
    println!(
        "{}",
        json!({ "input_points": cloud.len(), "output_points": sub.len(), "cell": a.cell })
    );
    Ok(())
}

fn pattern(a: Pattern) -> anyhow::Result<()> {
    let cfg: RosetteConfig = match &a.rosette {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| kpseg::Error::Config {
                key: "rosette".into(),
                message: e.to_string(),
            })?
        }
        None => RosetteConfig::default(),
    };
    cfg.validate()?;
    if a.duration.is_nan() || a.duration <= 0.0 {
        return Err(
            kpseg::Error::Argument(format!("duration must be > 0, got {}", a.duration)).into(),
        );
    }
    let beams = rosette_directions(&cfg, 0.0, a.duration);
    let mut report = json!({ "duration": a.duration, "beams": beams.len() });
    if a.coverage {
        report["grid_res"] = json!(a.grid_res);
        report["coverage"] = json!(fov_coverage(&cfg, a.duration, a.grid_res)?);
    }
    if let Some(out) = &a.common.out {
        if a.coverage {
            fs::write(out, report.to_string() + "\n")
                .with_context(|| format!("writing {}", out.display()))?;
        } else {
            let dirs = LabeledCloud::from_coords(beams.iter().map(|b| b.dir).collect());
            save_cloud(&dirs, out, format_of(out)?)?;
        }
    }
    println!("{report}");
    Ok(())
}

fn train_cmd(a: Train) -> anyhow::Result<()> {
    let out = require_out(&a.common);
    let mut cfg = run_config(&a.common)?;
    if let Some(w) = a.workers {
        cfg.run.workers = w;
    }
    if let Some(d) = &a.data {
        cfg.run.data = Some(d.clone());
    }
    cfg.validate()?;
    let Some(data) = cfg.run.data.clone() else {
        return Err(kpseg::Error::Config {
            key: "data".into(),
            message: "no training data; pass --data or set it in the config".into(),
        }
        .into());
    };
    let steps = a.steps.unwrap_or_else(|| cfg.total_steps());
    let scenes: Vec<LabeledCloud> = read_clouds(&data)?.into_iter().map(|(_, c)| c).collect();

    let (mut net, start_step) = match &a.resume {
        Some(p) => {
            let (net, ck) = load_checkpoint(p, Some(&cfg.network))?;
            (net, ck.step)
        }
        None => (Network::new(cfg.network.clone(), cfg.run.seed)?, 0),
    };
    let sampler = BatchSampler::new(&scenes, &cfg.network, cfg.augment(), cfg.run.seed)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let echo = cfg.to_json();
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&echo)? + "\n",
    )?;
    println!("{}", json!({ "config": echo }));

    let log_path = out.join("train_log.jsonl");
    let mut log =
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let opts = TrainOptions {
        optim: cfg.optim.clone(),
        start_step,
        steps,
        workers: cfg.run.workers,
        calibration_batches: cfg.run.bn_calibration,
    };
    let reports = train(&mut net, &sampler, &opts, |r| {
        let line = serde_json::to_string(r).expect("reports serialize");
        writeln!(log, "{line}").map_err(|e| kpseg::Error::Training(format!("writing log: {e}")))?;
        println!("{line}");
        Ok(())
    })?;
    let ck_path = out.join("checkpoint.kpck");
    save_checkpoint(&net, start_step + steps, cfg.run.seed, &ck_path)?;
    let last = reports.last();
    println!(
        "{}",
        json!({
            "checkpoint": ck_path,
            "steps": start_step + steps,
            "final_loss": last.map(|r| r.loss),
            "final_batch_oa": last.map(|r| r.batch_oa),
        })
    );
    Ok(())
}

fn eval(a: Eval) -> anyhow::Result<()> {
    let (net, _) = load_checkpoint(&a.checkpoint, None)?;
    let stride = a.tile_stride.unwrap_or(net.config().sphere_radius / 2.0);
    let mut cm = ConfusionMatrix::new(net.config().num_classes);
    for (path, cloud) in read_clouds(&a.data)? {
        let Some(truth) = &cloud.labels else {
            return Err(kpseg::Error::Data(format!("{} has no labels", path.display())).into());
        };
        let pred = predict_cloud(&net, &cloud, stride)?;
        cm.accumulate(&pred, truth)?;
    }
    let report = compute_metrics(&cm)?;
    let table = report.table(&a.method);
    if let Some(out) = &a.common.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(
            out.join("metrics.json"),
            serde_json::to_string_pretty(&report.to_json())? + "\n",
        )?;
        fs::write(out.join("metrics.txt"), table.clone() + "\n")?;
    }
    println!("{}", report.to_json());
    println!("{table}");
    Ok(())
}

fn predict(a: Predict) -> anyhow::Result<()> {
    let out = require_out(&a.common);
    let format = format_of(&out)?;
    let (net, _) = load_checkpoint(&a.checkpoint, None)?;
    let stride = a.tile_stride.unwrap_or(net.config().sphere_radius / 2.0);
    let mut cloud = read_cloud(&a.input)?;
    let pred = predict_cloud(&net, &cloud, stride)?;
    cloud.labels = Some(pred);
    save_cloud(&cloud, &out, format)?;
    println!(
        "{}",
        json!({ "output": out, "points": cloud.len(), "histogram": cloud.class_histogram() })
    );
    Ok(())
}

fn grad_check(a: GradCheck) -> anyhow::Result<()> {
    let checks = gradient_suite(a.common.seed.unwrap_or(0))?;
    let mut failed = Vec::new();
    for c in &checks {
        println!(
            "{}",
            json!({ "layer": c.layer, "max_rel_error": c.max_rel_error, "tolerance": c.tolerance, "pass": c.passed() })
        );
        if !c.passed() {
            failed.push(c.layer.clone());
        }
    }
    if !failed.is_empty() {
        bail!("gradient check failed for {}", failed.join(", "));
    }
    Ok(())
}
