//! The subcommands. Each takes an already-loaded [`RunConfig`] (command-line
//! overrides applied) and writes its artifacts under `cfg.output_dir`.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use mixedlane::bridge::transport::{serve_plant, UdpEndpoint};
use mixedlane::bridge::{ExternalVehicle, InProcessPlant, PlantServer, PlantThread, RemotePlant};
use mixedlane::config::{RunConfig, CODE_VERSION};
use mixedlane::env::{Env, EnvConfig, SeedStream};
use mixedlane::net::{load_checkpoint, save_checkpoint, Checkpoint, NetworkParams};
use mixedlane::train::{evaluate, run_adaptation, run_pretraining, sign_test, TrainOutcome};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::artifacts::{read_events, read_trace, write_eval, write_metrics, write_recording, EvalReport};
use crate::plot::{render_svg, space_time, SpaceTime};
use crate::CliError;

/// Where the agent's vehicle is integrated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlantMode {
    /// Pure simulation, no bridge.
    Sim,
    /// Plant in the same process, messages still encoded.
    InProcess,
    /// Plant on a thread behind a UDP socket on 127.0.0.1.
    Loopback,
    /// A plant process at `host:port`.
    Remote(String),
}

impl FromStr for PlantMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "none" | "sim" => PlantMode::Sim,
            "inprocess" => PlantMode::InProcess,
            "loopback" => PlantMode::Loopback,
            addr if addr.contains(':') => PlantMode::Remote(addr.to_string()),
            other => return Err(format!("expected none, inprocess, loopback or host:port, got `{other}`")),
        })
    }
}

/// Applies command-line overrides and validates.
pub fn load_config(path: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// An environment plus the plant thread it may talk to; the environment is
/// dropped first.
pub struct Session {
    pub env: Env<f64>,
    _plant: Option<PlantThread>,
}

pub fn open_env(cfg: &RunConfig, env_cfg: EnvConfig<f64>, mode: &PlantMode, seed: u64) -> Result<Session, CliError> {
    let env_cfg = Arc::new(env_cfg);
    let track = Arc::new(env_cfg.build_track()?);
    let (wb, lim, dt) = (env_cfg.geometry.wheel_base, env_cfg.speed_accel_limit_mps2, env_cfg.dt_s);
    let server = || PlantServer::new(cfg.plant, wb, lim, dt);
    let (pose_wait, ack_wait) = (Duration::from_millis(cfg.bridge.pose_wait_ms), Duration::from_millis(cfg.bridge.ack_wait_ms));
    let (link, plant): (Box<dyn ExternalVehicle<f64>>, _) = match mode {
        PlantMode::Sim => return Ok(Session { env: Env::new(env_cfg, track, seed)?, _plant: None }),
        PlantMode::InProcess => (Box::new(InProcessPlant::new(cfg.plant, wb, lim, dt)), None),
        PlantMode::Loopback => {
            let endpoint = UdpEndpoint::bind("127.0.0.1:0")?;
            let addr = endpoint.local_addr()?;
            let thread = PlantThread::spawn(endpoint, server());
            (Box::new(RemotePlant::udp(addr, dt, pose_wait, ack_wait)?), Some(thread))
        }
        PlantMode::Remote(addr) => (Box::new(RemotePlant::udp(addr.as_str(), dt, pose_wait, ack_wait)?), None),
    };
    Ok(Session { env: Env::with_external(env_cfg, track, seed, link)?, _plant: plant })
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    Ok(cfg.output_dir.clone())
}

fn stamp(ckpt: Checkpoint<f64>, cfg: &RunConfig, command: &str, outcome: &TrainOutcome<f64>) -> Checkpoint<f64> {
    ckpt.with_meta("version", CODE_VERSION)
        .with_meta("config_hash", cfg.hash())
        .with_meta("command", command)
        .with_meta("seed", cfg.seed)
        .with_meta("frames", outcome.metrics.len())
        .with_meta("updates", outcome.updates)
}

pub fn load_params(cfg: &RunConfig, path: &Path) -> Result<NetworkParams<f64>, CliError> {
    Ok(load_checkpoint(path, Some(cfg.train.network))?.params)
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub outcome: TrainOutcome<f64>,
}

/// Pre-training in simulation from `init` or from fresh random weights
/// drawn from the run seed.
pub fn cmd_pretrain(cfg: &RunConfig, init: Option<&Path>) -> Result<TrainArtifacts, CliError> {
    let out = prepare_out(cfg)?;
    let params = match init {
        Some(p) => load_params(cfg, p)?,
        None => NetworkParams::init(cfg.train.network, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
    };
    let env_cfg = Arc::new(cfg.env);
    let track = Arc::new(env_cfg.build_track()?);
    log::info!("pre-training for {} frames on {} worker(s)", cfg.train.total_frames, cfg.train.workers);
    let outcome = run_pretraining(env_cfg, track, &cfg.train, params, cfg.seed)?;
    let checkpoint = out.join("pretrained.ckpt");
    let metrics = out.join("pretrain_metrics.csv");
    save_checkpoint(&checkpoint, &stamp(Checkpoint::new(outcome.params.clone()), cfg, "pretrain", &outcome))?;
    write_metrics(&metrics, &cfg.provenance(), &outcome.metrics)?;
    Ok(TrainArtifacts { checkpoint, metrics, outcome })
}

/// Mixed-reality adaptation of `checkpoint` against the plant; also records
/// the trace and events of the run.
pub fn cmd_adapt(cfg: &RunConfig, checkpoint: &Path, mode: &PlantMode) -> Result<TrainArtifacts, CliError> {
    let out = prepare_out(cfg)?;
    let params = load_params(cfg, checkpoint)?;
    let mut session = open_env(cfg, cfg.env, mode, cfg.seed)?;
    session.env.set_recording(true);
    log::info!("adapting for {} frames against plant {mode:?}", cfg.train.adapt_frames);
    let outcome = run_adaptation(&mut session.env, &cfg.train, params, cfg.seed)?;
    let checkpoint = out.join("adapted.ckpt");
    let metrics = out.join("adapt_metrics.csv");
    save_checkpoint(&checkpoint, &stamp(Checkpoint::new(outcome.params.clone()), cfg, "adapt", &outcome))?;
    write_metrics(&metrics, &cfg.provenance(), &outcome.metrics)?;
    if let Some(rec) = session.env.take_recording() {
        let track = session.env.track();
        let lap = track.lanes()[track.reference_lane()].total_length();
        write_recording(&out.join("adapt_trace.csv"), &out.join("adapt_events.csv"), &cfg.provenance(), &rec, cfg.env.dt_s, lap)?;
    }
    Ok(TrainArtifacts { checkpoint, metrics, outcome })
}

/// Scenario seeds shared by both checkpoints.
pub fn eval_seeds(cfg: &RunConfig, scenarios: usize) -> Vec<u64> {
    let mut s = SeedStream::new(cfg.eval.seed);
    (0..scenarios).map(|_| s.next_seed()).collect()
}

/// Greedy fixed-length episodes of both checkpoints on common seeds.
pub fn cmd_eval(cfg: &RunConfig, before: &Path, after: &Path, mode: &PlantMode) -> Result<EvalReport, CliError> {
    let out = prepare_out(cfg)?;
    let seeds = eval_seeds(cfg, cfg.eval.scenarios);
    let run = |path: &Path| -> Result<_, CliError> {
        let params = load_params(cfg, path)?;
        if seeds.is_empty() {
            return Ok(Vec::new());
        }
        let mut session = open_env(cfg, cfg.eval_env(), mode, seeds[0])?;
        Ok(evaluate(&mut session.env, &params, &seeds, cfg.eval_ticks())?)
    };
    let (b, a) = (run(before)?, run(after)?);
    let fewer: Vec<f64> = b.iter().zip(&a).map(|(b, a)| b.collisions as f64 - a.collisions as f64).collect();
    let more: Vec<f64> = b.iter().zip(&a).map(|(b, a)| a.total_reward - b.total_reward).collect();
    let report = EvalReport { before: b, after: a, collisions: sign_test(&fewer), reward: sign_test(&more) };
    write_eval(&out.join("eval.csv"), &out.join("eval_summary.csv"), &cfg.provenance(), &report)?;
    Ok(report)
}

/// Renders one episode of a trace (the longest by default) to SVG.
pub fn cmd_plot(trace: &Path, events: Option<&Path>, episode: Option<usize>, output: &Path) -> Result<SpaceTime, CliError> {
    let t = read_trace(trace)?;
    let e = match events {
        Some(p) => read_events(p)?,
        None => Vec::new(),
    };
    let st = space_time(&t, &e, episode)?;
    let provenance = match &t.provenance {
        Some(p) => format!("{p}; plotted by mixedlane {CODE_VERSION}"),
        None => format!("plotted by mixedlane {CODE_VERSION}"),
    };
    std::fs::write(output, render_svg(&st, &provenance)).map_err(|e| CliError::Run(format!("cannot write {}: {e}", output.display())))?;
    Ok(st)
}

/// Serves the perturbed plant over UDP until the process is killed. The
/// bound address is printed on stdout first.
pub fn cmd_plant(cfg: &RunConfig, listen: Option<&str>) -> Result<(), CliError> {
    let mut endpoint = UdpEndpoint::bind(listen.unwrap_or(&cfg.bridge.address))?;
    println!("listening on {}", endpoint.local_addr()?);
    let mut server = PlantServer::new(cfg.plant, cfg.env.geometry.wheel_base, cfg.env.speed_accel_limit_mps2, cfg.env.dt_s);
    serve_plant(&mut endpoint, &mut server, &AtomicBool::new(false))?;
    Ok(())
}
