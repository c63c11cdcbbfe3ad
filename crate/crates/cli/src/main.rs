//! `skl`: collect expert episodes, train the autoencoders and predictor,
//! evaluate the policy, and inspect or render artifacts.

mod config;
mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use skl_core::dataset::{self, Episode};
use skl_core::eval::{self, Scenario};
use skl_core::learner::{gradcheck, write_loss_csv, EncoderPair, Modality, ModelFile, Policy, TrainedAutoencoder};
use skl_core::perception::locate_object;
use skl_core::sim::image::{encode_disparity_pgm, encode_ppm, write_bytes};
use skl_core::sim::scene::{load_scene, scene_for, Variant};
use skl_core::sim::{World, WorldConfig};

use config::RunConfig;
use manifest::{beside, RunManifest};

/// Bad flags, config keys or values; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "skl", version, about = "Scripted-expert data collection and imitation learning for a simulated mobile manipulator")]
struct Cli {
    /// TOML config file layered over the built-in defaults
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override any config key, e.g. --set predictor.epochs=200 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for collect and eval; output order never depends on it
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run seeded expert episodes and save them as a dataset
    Collect(CollectArgs),
    /// Train the RGB or disparity autoencoder on a dataset
    TrainAutoencoder(TrainAeArgs),
    /// Train the recurrent predictor on top of frozen encoders
    Train(TrainArgs),
    /// Roll a trained policy out in closed loop
    Eval(EvalArgs),
    /// Summarize a dataset, an episode or a model file
    Inspect(InspectArgs),
    /// Render a scene's initial camera frame to PPM/PGM
    Render(RenderArgs),
    /// Verify every backward pass against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct CollectArgs {
    /// long or short
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: Option<u64>,
    /// First scene seed; episodes use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainAeArgs {
    /// rgb or disparity
    #[arg(long)]
    modality: String,
    #[arg(long)]
    data: PathBuf,
    /// Model file to write; the loss curve goes to <out>.loss.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    disparity: PathBuf,
    /// Policy file to write; the loss curve goes to <out>.loss.csv
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also update the encoders through the predictor loss
    #[arg(long)]
    fine_tune: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    policy: PathBuf,
    /// Evaluate on the scenes stored in this dataset
    #[arg(long, conflicts_with_all = ["variant", "seed", "episodes"])]
    data: Option<PathBuf>,
    /// Evaluate on a seeded scene family instead
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: Option<u64>,
    /// CSV report to write
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<u64>,
    /// Write every rendered frame as <dir>/<scenario>/rgb_NNNN.ppm
    #[arg(long, value_name = "DIR")]
    dump_frames: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    path: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Scene TOML file; defaults to the seeded family scene
    #[arg(long, conflicts_with_all = ["variant", "seed"])]
    scene: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Only run checks whose name starts with this
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn split_set(raw: &str) -> Result<(String, String), UsageError> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {raw:?}")))
}

/// Flag overrides in precedence order: generic `--set` first, then dedicated flags.
fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, UsageError> {
    let mut out: Vec<(String, String)> = cli.set.iter().map(|s| split_set(s)).collect::<Result<_, _>>()?;
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v));
        }
    };
    push("jobs", cli.jobs.map(|j| j.to_string()));
    match &cli.command {
        Command::Collect(a) => {
            push("scene.variant", a.variant.clone());
            push("collect.episodes", a.episodes.map(|v| v.to_string()));
            push("collect.seed", a.seed.map(|v| v.to_string()));
        }
        Command::TrainAutoencoder(a) => {
            push("autoencoder.epochs", a.epochs.map(|v| v.to_string()));
            push("autoencoder.seed", a.seed.map(|v| v.to_string()));
        }
        Command::Train(a) => {
            push("predictor.epochs", a.epochs.map(|v| v.to_string()));
            push("predictor.seed", a.seed.map(|v| v.to_string()));
            if a.fine_tune {
                push("predictor.fine_tune_encoders", Some("true".into()));
            }
        }
        Command::Eval(a) => {
            push("scene.variant", a.variant.clone());
            push("collect.seed", a.seed.map(|v| v.to_string()));
            push("collect.episodes", a.episodes.map(|v| v.to_string()));
            push("eval.max_steps", a.max_steps.map(|v| v.to_string()));
        }
        Command::Render(a) => {
            push("scene.variant", a.variant.clone());
            push("collect.seed", a.seed.map(|v| v.to_string()));
        }
        Command::Inspect(_) | Command::Gradcheck(_) => {}
    }
    Ok(out)
}

/// Maps `f` over `items` on up to `jobs` threads; results keep input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let f = &f;
                s.spawn(move || {
                    items
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(jobs)
                        .map(|(i, it)| (i, f(it)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every slot filled")).collect()
}

fn family_scene(cfg: &RunConfig, variant: Variant, seed: u64) -> WorldConfig {
    let mut scene = scene_for(variant, seed);
    scene.depth_noise = cfg.float("scene.depth_noise");
    scene
}

pub fn episode_dir_name(seed: u64) -> String {
    format!("episode_{seed:06}")
}

fn collect(cfg: &RunConfig, args: &CollectArgs) -> anyhow::Result<ExitCode> {
    let variant = cfg.variant()?;
    let n = cfg.u64("collect.episodes");
    let seed0 = cfg.u64("collect.seed");
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let params = cfg.expert(variant);
    let seeds: Vec<u64> = (0..n).map(|i| seed0 + i).collect();
    let results = parallel_map(&seeds, cfg.usize("jobs"), |&seed| -> anyhow::Result<Episode> {
        let scene = family_scene(cfg, variant, seed);
        let (ep, _) = dataset::collect_episode(&scene, variant, &params)?;
        let dir = args.out.join(episode_dir_name(seed));
        dataset::save(&ep, &dir).with_context(|| format!("saving {}", dir.display()))?;
        Ok(ep)
    });
    let mut manifest = RunManifest::new("collect", cfg);
    let mut successes = 0;
    let mut rows = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        let ep = r?;
        let outcome = match &ep.outcome {
            skl_core::expert::Outcome::Done => "DONE".to_string(),
            skl_core::expert::Outcome::Failed(c) => format!("FAILED ({c})"),
        };
        if ep.is_success() {
            successes += 1;
        }
        println!("seed {seed}: {outcome}, {} steps", ep.steps.len());
        manifest.output(episode_dir_name(*seed));
        rows.push(json!({"seed": seed, "success": ep.is_success(), "steps": ep.steps.len()}));
    }
    println!("{successes}/{n} episodes succeeded ({variant})");
    manifest.note("episodes", json!(rows));
    manifest.write(&args.out.join("collect.manifest.run.json"))?;
    Ok(if successes > 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn load_dataset(dir: &Path) -> anyhow::Result<Vec<Episode>> {
    let eps = dataset::load_all(dir)?;
    if eps.is_empty() {
        bail!("{}: no episodes found", dir.display());
    }
    Ok(eps)
}

fn loss_csv_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

fn train_autoencoder(cfg: &RunConfig, args: &TrainAeArgs) -> anyhow::Result<ExitCode> {
    let modality: Modality = args.modality.parse().map_err(|e: skl_core::Error| UsageError(e.to_string()))?;
    let eps = load_dataset(&args.data)?;
    let variant = eps[0].variant;
    let ae_cfg = cfg.autoencoder();
    let downscale = cfg.usize("autoencoder.downscale");
    let (model, report) = TrainedAutoencoder::train(&eps, variant, modality, downscale, &ae_cfg)?;
    model.save(&args.out)?;
    let csv = loss_csv_path(&args.out);
    write_loss_csv(&csv, &report.losses)?;
    println!(
        "{modality} autoencoder: {} frames, loss {:.6} -> {:.6} ({:.3} of initial)",
        report.frames,
        report.initial_loss,
        report.final_loss,
        report.final_loss / report.initial_loss
    );
    let mut m = RunManifest::new("train-autoencoder", cfg);
    m.input("dataset", &args.data)?;
    m.output(args.out.display().to_string());
    m.output(csv.display().to_string());
    m.note("modality", json!(modality.as_str()));
    m.note("initial_loss", json!(report.initial_loss));
    m.note("final_loss", json!(report.final_loss));
    m.write(&beside(&args.out))?;
    Ok(ExitCode::SUCCESS)
}

fn train(cfg: &RunConfig, args: &TrainArgs) -> anyhow::Result<ExitCode> {
    let eps = load_dataset(&args.data)?;
    let rgb = TrainedAutoencoder::load(&args.rgb)?;
    let disparity = TrainedAutoencoder::load(&args.disparity)?;
    let encoders = EncoderPair::from_parts(rgb, disparity)?;
    let (policy, report) = Policy::train(encoders, &eps, &cfg.predictor())?;
    policy.save(&args.out)?;
    let csv = loss_csv_path(&args.out);
    write_loss_csv(&csv, &report.losses)?;
    println!(
        "predictor ({}): {} epochs, final loss {:.6}",
        policy.variant(),
        report.losses.len(),
        report.final_loss
    );
    let mut m = RunManifest::new("train", cfg);
    m.input("dataset", &args.data)?;
    m.input("rgb_autoencoder", &args.rgb)?;
    m.input("disparity_autoencoder", &args.disparity)?;
    m.output(args.out.display().to_string());
    m.output(csv.display().to_string());
    m.note("final_loss", json!(report.final_loss));
    m.write(&beside(&args.out))?;
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(cfg: &RunConfig, args: &EvalArgs) -> anyhow::Result<ExitCode> {
    let policy = Policy::load(&args.policy)?;
    let (variant, scenarios) = match &args.data {
        Some(dir) => {
            let mut scenarios = Vec::new();
            let mut variant = None;
            for d in dataset::list_episode_dirs(dir)? {
                let info = dataset::read_info(&d)?;
                variant.get_or_insert(info.variant);
                let name = d.file_name().unwrap().to_string_lossy().to_string();
                scenarios.push(Scenario::new(name, info.scene));
            }
            let variant = variant.with_context(|| format!("{}: no episodes found", dir.display()))?;
            (variant, scenarios)
        }
        None => {
            let variant = cfg.variant()?;
            let seed0 = cfg.u64("collect.seed");
            let scenarios = (0..cfg.u64("collect.episodes"))
                .map(|i| Scenario::new(format!("{variant}-{:04}", seed0 + i), family_scene(cfg, variant, seed0 + i)))
                .collect();
            (variant, scenarios)
        }
    };
    let rc = cfg.rollout();
    let results = parallel_map(&scenarios, cfg.usize("jobs"), |s| match &args.dump_frames {
        None => eval::rollout(&policy, s, variant, &rc),
        Some(root) => {
            let dir = root.join(&s.name);
            std::fs::create_dir_all(&dir).map_err(|e| skl_core::Error::Io { path: dir.clone(), source: e })?;
            eval::rollout_observed(&policy, s, variant, &rc, &mut |tick, frame| {
                write_bytes(&dir.join(format!("rgb_{tick:04}.ppm")), &encode_ppm(frame.width, frame.height, &frame.rgb))
            })
        }
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let summary = eval::summarize(&rows);
    eval::write_csv(&args.out, &rows)?;
    print!("{}", eval::to_csv(&rows));
    println!(
        "touch rate {}/{} ({:.2}), grasped {}, mean ticks to touch {}, mean final distance {:.4} m",
        summary.touched,
        summary.episodes,
        summary.touch_rate,
        summary.grasped,
        summary.mean_ticks_to_touch.map(|t| format!("{t:.1}")).unwrap_or_else(|| "n/a".into()),
        summary.mean_final_tip_distance_m
    );
    let mut m = RunManifest::new("eval", cfg);
    m.input("policy", &args.policy)?;
    if let Some(d) = &args.data {
        m.input("dataset", d)?;
    }
    m.output(args.out.display().to_string());
    m.note("summary", serde_json::to_value(&summary)?);
    m.write(&beside(&args.out))?;
    Ok(ExitCode::SUCCESS)
}

fn inspect(path: &Path) -> anyhow::Result<ExitCode> {
    if path.is_file() {
        let f = ModelFile::load(path)?;
        println!("model file {}", path.display());
        println!("metadata: {}", serde_json::to_string_pretty(&f.metadata)?);
        println!("name,shape,count");
        let mut total = 0;
        for p in &f.params {
            let shape: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
            println!("{},{},{}", p.name, shape.join("x"), p.data.len());
            total += p.data.len();
        }
        println!("{} tensors, {total} parameters", f.params.len());
        return Ok(ExitCode::SUCCESS);
    }
    let dirs = if path.join(dataset::MANIFEST_FILE).is_file() {
        vec![path.to_path_buf()]
    } else {
        dataset::list_episode_dirs(path)?
    };
    if dirs.is_empty() {
        bail!("{}: no episodes found", path.display());
    }
    let eps: Vec<Episode> = dirs.iter().map(|d| dataset::load(d)).collect::<Result<_, _>>()?;
    println!("episode,variant,seed,outcome,steps");
    for (d, ep) in dirs.iter().zip(&eps) {
        let outcome = match &ep.outcome {
            skl_core::expert::Outcome::Done => "DONE".to_string(),
            skl_core::expert::Outcome::Failed(c) => format!("FAILED:{c}"),
        };
        println!(
            "{},{},{},{},{}",
            d.file_name().unwrap().to_string_lossy(),
            ep.variant,
            ep.seed,
            outcome,
            ep.steps.len()
        );
    }
    let ok: Vec<Episode> = eps.iter().filter(|e| e.is_success()).cloned().collect();
    let total: usize = eps.iter().map(|e| e.steps.len()).sum();
    println!("{} episodes ({} successful), {total} steps", eps.len(), ok.len());
    if ok.is_empty() {
        println!("no successful episodes; normalization stats unavailable");
        return Ok(ExitCode::SUCCESS);
    }
    let stats = dataset::compute_norm_stats(&ok)?;
    println!("normalization stats over successful episodes:");
    let names = ["torso", "q1", "q2", "q3", "gripper", "v", "omega"];
    println!("  dim      min        max        flagged");
    let lo: Vec<f64> = stats.state_min.iter().chain(&stats.cmd_min).copied().collect();
    let hi: Vec<f64> = stats.state_max.iter().chain(&stats.cmd_max).copied().collect();
    for k in 0..stats.dim() {
        println!("  {:<8} {:<10.5} {:<10.5} {}", names[k], lo[k], hi[k], stats.flagged[k]);
    }
    println!("  rgb mean {:.5?} std {:.5?}", stats.rgb_mean, stats.rgb_std);
    println!("  disparity mean {:.5} std {:.5}", stats.disparity_mean, stats.disparity_std);
    Ok(ExitCode::SUCCESS)
}

fn render(cfg: &RunConfig, args: &RenderArgs) -> anyhow::Result<ExitCode> {
    let scene = match &args.scene {
        Some(p) => load_scene(p)?,
        None => family_scene(cfg, cfg.variant()?, cfg.u64("collect.seed")),
    };
    let world = World::new(scene)?;
    let frame = world.render();
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_bytes(&args.out.join("rgb.ppm"), &encode_ppm(frame.width, frame.height, &frame.rgb))?;
    write_bytes(
        &args.out.join("disparity.pgm"),
        &encode_disparity_pgm(frame.width, frame.height, &frame.disparity),
    )?;
    frame.cloud.save(&args.out.join("cloud.pcld"))?;
    let truth = world.target_box().center();
    match locate_object(&frame, world.config().target_spec().color, &cfg.perception()) {
        Ok(p) => println!(
            "target located at ({:.4}, {:.4}, {:.4}), box center ({:.4}, {:.4}, {:.4})",
            p[0], p[1], p[2], truth[0], truth[1], truth[2]
        ),
        Err(e) => println!("target not located: {e}"),
    }
    println!("wrote rgb.ppm, disparity.pgm, cloud.pcld ({} points) to {}", frame.cloud.len(), args.out.display());
    let mut m = RunManifest::new("render", cfg);
    if let Some(p) = &args.scene {
        m.input("scene", p)?;
    }
    for o in ["rgb.ppm", "disparity.pgm", "cloud.pcld"] {
        m.output(o);
    }
    m.write(&args.out.join("render.manifest.run.json"))?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(args: &GradcheckArgs) -> anyhow::Result<ExitCode> {
    let reports = gradcheck::run(args.kind.as_deref(), args.seed).map_err(|e| UsageError(e.to_string()))?;
    println!("check,values,max_rel_error,result");
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{},{},{:.3e},{}",
            r.name,
            r.checked,
            r.max_rel_error,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    println!("tolerance {:.0e}: {}", gradcheck::TOLERANCE, if ok { "all passed" } else { "FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(&cli)?)?;
    for (k, e) in cfg.keys() {
        log::debug!("config {k} = {} ({})", e.value, e.source);
    }
    info!("{} {}", manifest::TOOL, manifest::VERSION);
    match &cli.command {
        Command::Collect(a) => collect(&cfg, a),
        Command::TrainAutoencoder(a) => train_autoencoder(&cfg, a),
        Command::Train(a) => train(&cfg, a),
        Command::Eval(a) => eval_cmd(&cfg, a),
        Command::Inspect(a) => inspect(&a.path),
        Command::Render(a) => render(&cfg, a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SKL_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
