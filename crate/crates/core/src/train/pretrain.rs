//! Asynchronous pre-training: one updater owns the parameters; workers
//! collect trajectories under a snapshot, compute gradients locally and
//! exchange them for fresh parameters.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{mpsc, Arc};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{batch_gradient, collect, Trajectory};
use super::{record_frames, split_budget, worker_seeds, Learner, Losses, MetricsWindow, TrainConfig, TrainError, TrainOutcome};
use crate::env::{Env, EnvConfig, EnvError, SeedStream};
use crate::net::NetworkParams;
use crate::scalar::Real;
use crate::track::Track;

struct Job<T> {
    params: Arc<NetworkParams<T>>,
    budget: usize,
}

struct JobResult<T> {
    grad: Vec<T>,
    losses: Losses<T>,
    batch: Vec<Trajectory<T>>,
}

/// A worker's environments, scenario seed stream and sampling generator.
pub struct WorkerState<T: Real> {
    envs: Vec<Env<T>>,
    seeds: SeedStream,
    rng: ChaCha8Rng,
}

impl<T: Real> WorkerState<T> {
    pub fn new(env_cfg: &Arc<EnvConfig<T>>, track: &Arc<Track<T>>, cfg: &TrainConfig<T>, run_seed: u64, worker: usize) -> Result<Self, EnvError> {
        let (scenario_seed, action_seed) = worker_seeds(run_seed, worker);
        let mut seeds = SeedStream::new(scenario_seed);
        let envs = (0..cfg.envs_per_worker)
            .map(|_| Env::new(Arc::clone(env_cfg), Arc::clone(track), seeds.next_seed()))
            .collect::<Result<_, _>>()?;
        Ok(Self { envs, seeds, rng: ChaCha8Rng::seed_from_u64(action_seed) })
    }

    /// Collects `budget` frames spread over the environments (each in turn)
    /// and returns the trajectories.
    pub fn rollout(&mut self, params: &NetworkParams<T>, cfg: &TrainConfig<T>, budget: usize) -> Result<Vec<Trajectory<T>>, EnvError> {
        let split = split_budget(budget, self.envs.len());
        let mut batch = Vec::with_capacity(split.len());
        for (env, steps) in self.envs.iter_mut().zip(split) {
            if steps > 0 {
                batch.push(collect(env, &mut self.seeds, params, cfg.behaviour, steps, &mut self.rng)?);
            }
        }
        Ok(batch)
    }
}

fn worker_loop<T: Real>(
    id: usize,
    state: Result<WorkerState<T>, EnvError>,
    cfg: TrainConfig<T>,
    jobs: mpsc::Receiver<Job<T>>,
    results: mpsc::Sender<(usize, Result<JobResult<T>, String>)>,
) {
    let mut state = match state {
        Ok(s) => s,
        Err(e) => {
            let _ = results.send((id, Err(e.to_string())));
            return;
        }
    };
    while let Ok(job) = jobs.recv() {
        let run = catch_unwind(AssertUnwindSafe(|| {
            let batch = state.rollout(&job.params, &cfg, job.budget).map_err(|e| e.to_string())?;
            let (grad, losses) = batch_gradient(&job.params, &batch, &cfg);
            Ok(JobResult { grad, losses, batch })
        }));
        let result = run.unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("worker panicked: {}", msg.unwrap_or_default()))
        });
        let failed = result.is_err();
        if results.send((id, result)).is_err() || failed {
            return;
        }
    }
}

/// Runs asynchronous pre-training for `cfg.total_frames` frames starting
/// from `init`. With one worker the run is a deterministic function of
/// `seed`.
pub fn run_pretraining<T: Real>(
    env_cfg: Arc<EnvConfig<T>>,
    track: Arc<Track<T>>,
    cfg: &TrainConfig<T>,
    init: NetworkParams<T>,
    seed: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    env_cfg.validate()?;
    if init.shape() != cfg.network {
        return Err(TrainError::Config("initial parameters do not match the configured network shape".into()));
    }
    let mut learner = Learner::new(init, cfg);
    let mut window = MetricsWindow::new(cfg.metrics_window_frames, env_cfg.dt_s.as_f64());
    let mut metrics = Vec::with_capacity(cfg.total_frames);
    let mut losses = Vec::new();
    let mut failures = 0;
    let mut last_error = String::new();

    if cfg.total_frames > 0 {
        let per_job = cfg.horizon * cfg.envs_per_worker;
        let (result_tx, result_rx) = mpsc::channel();
        thread::scope(|scope| -> Result<(), TrainError> {
            let mut job_txs = Vec::with_capacity(cfg.workers);
            for w in 0..cfg.workers {
                let (tx, rx) = mpsc::channel();
                job_txs.push(Some(tx));
                let state = WorkerState::new(&env_cfg, &track, cfg, seed, w);
                let results = result_tx.clone();
                let wcfg = *cfg;
                thread::Builder::new()
                    .name(format!("worker-{w}"))
                    .spawn_scoped(scope, move || worker_loop(w, state, wcfg, rx, results))
                    .expect("spawn worker thread");
            }
            drop(result_tx);

            let mut remaining = cfg.total_frames;
            let mut assigned = vec![0usize; cfg.workers];
            let mut busy = vec![false; cfg.workers];
            let mut snapshot = Arc::new(learner.params.clone());
            let hand_out = |job_txs: &mut Vec<Option<mpsc::Sender<Job<T>>>>,
                            busy: &mut Vec<bool>,
                            assigned: &mut Vec<usize>,
                            remaining: &mut usize,
                            snapshot: &Arc<NetworkParams<T>>| {
                for w in 0..job_txs.len() {
                    if *remaining == 0 {
                        break;
                    }
                    let Some(tx) = job_txs[w].as_ref() else { continue };
                    if busy[w] {
                        continue;
                    }
                    let budget = per_job.min(*remaining);
                    if tx.send(Job { params: Arc::clone(snapshot), budget }).is_ok() {
                        *remaining -= budget;
                        assigned[w] = budget;
                        busy[w] = true;
                    } else {
                        job_txs[w] = None;
                    }
                }
            };
            hand_out(&mut job_txs, &mut busy, &mut assigned, &mut remaining, &snapshot);
            while busy.iter().any(|&b| b) {
                let Ok((w, result)) = result_rx.recv() else { break };
                busy[w] = false;
                match result {
                    Ok(r) => {
                        record_frames(&r.batch, &mut window, &mut metrics);
                        learner.apply(&r.grad);
                        losses.push(r.losses);
                        snapshot = Arc::new(learner.params.clone());
                        if learner.updates.is_multiple_of(50) {
                            log::info!("frame {} update {} loss {:.4}", metrics.len(), learner.updates, r.losses.total.as_f64());
                        }
                    }
                    Err(msg) => {
                        log::error!("worker {w} failed: {msg}");
                        failures += 1;
                        last_error = msg;
                        job_txs[w] = None;
                        remaining += std::mem::take(&mut assigned[w]);
                    }
                }
                hand_out(&mut job_txs, &mut busy, &mut assigned, &mut remaining, &snapshot);
            }
            drop(job_txs);
            if remaining > 0 {
                return Err(TrainError::AllWorkersFailed(last_error.clone()));
            }
            Ok(())
        })?;
    }

    Ok(TrainOutcome { updates: learner.updates, skipped: learner.skipped, params: learner.params, metrics, losses, worker_failures: failures })
}
