//! Losses, the optimiser, asynchronous pre-training, mixed-reality
//! adaptation and greedy evaluation.

pub mod adam;
pub mod adapt;
pub mod config;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod pretrain;
pub mod rollout;

use thiserror::Error;

use crate::env::{EnvError, SeedStream};
use crate::net::{NetError, NetworkParams};
use crate::scalar::Real;

pub use adam::{Adam, StepOutcome};
pub use adapt::run_adaptation;
pub use config::{Baseline, Behaviour, TrainConfig};
pub use eval::{evaluate, sign_test, EpisodeReport, SignTest};
pub use loss::{
    advantage_and_critic_loss, baseline_value, compute_returns, entropy, entropy_loss, ppo_clip_loss, ppo_clip_term, step_gradient,
    total_loss, trajectory_returns, Losses,
};
pub use metrics::{pearson, MetricsRow, MetricsWindow, METRICS_CSV_HEADER};
pub use pretrain::run_pretraining;
pub use rollout::{batch_gradient, collect, Step, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("all workers failed; last error: {0}")]
    AllWorkersFailed(String),
    #[error("bridge unavailable after {attempts} reconnect attempts: {last}")]
    BridgeTimeout { attempts: u32, last: String },
}

/// The single owner of the canonical parameters: applies gradients with
/// Adam, then moves the target copy toward the online actor.
#[derive(Debug, Clone)]
pub struct Learner<T> {
    pub params: NetworkParams<T>,
    adam: Adam<T>,
    tau: T,
    pub updates: u64,
    pub skipped: u64,
}

impl<T: Real> Learner<T> {
    pub fn new(params: NetworkParams<T>, cfg: &TrainConfig<T>) -> Self {
        let actor = params.layout().actor_len();
        let total = params.layout().total_len();
        let groups = vec![(0..actor, cfg.actor_lr), (actor..total, cfg.critic_lr)];
        let adam = Adam::new(total, groups, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.grad_clip_norm);
        Self { params, adam, tau: cfg.tau, updates: 0, skipped: 0 }
    }

    pub fn apply(&mut self, grad: &[T]) -> StepOutcome {
        let outcome = self.adam.step(&mut self.params.online, grad);
        match outcome {
            StepOutcome::Applied => {
                self.params.polyak_update(self.tau);
                self.updates += 1;
            }
            StepOutcome::Skipped => {
                log::warn!("non-finite gradient or update; step skipped");
                self.skipped += 1;
            }
        }
        outcome
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub metrics: Vec<MetricsRow>,
    /// Batch losses of every applied or skipped update, in order.
    pub losses: Vec<Losses<T>>,
    pub updates: u64,
    pub skipped: u64,
    pub worker_failures: usize,
}

/// Scenario and sampling seeds of worker `w`: the `2w`-th and `2w+1`-th
/// draws of the run's seed stream.
pub fn worker_seeds(run_seed: u64, worker: usize) -> (u64, u64) {
    let mut s = SeedStream::new(run_seed);
    for _ in 0..2 * worker {
        s.next_seed();
    }
    (s.next_seed(), s.next_seed())
}

/// Frames each of `envs` environments runs for a job of `budget` frames.
pub fn split_budget(budget: usize, envs: usize) -> Vec<usize> {
    (0..envs).map(|e| budget / envs + usize::from(e < budget % envs)).collect()
}

/// Appends the frames of `batch` to the metrics log.
pub(crate) fn record_frames<T: Real>(batch: &[Trajectory<T>], window: &mut MetricsWindow, rows: &mut Vec<MetricsRow>) {
    for step in batch.iter().flat_map(|t| &t.steps) {
        let reward = step.reward.as_f64();
        let (window_cpm, window_reward) = window.update(reward, step.collision);
        rows.push(MetricsRow { frame: rows.len() as u64 + 1, reward, collision: step.collision, window_cpm, window_reward });
    }
}
