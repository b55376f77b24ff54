//! Mixed-reality adaptation: one (usually bridged) environment, long
//! trajectories from fresh scenarios, a few per optimisation step.

use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{batch_gradient, collect};
use super::{record_frames, Learner, MetricsWindow, TrainConfig, TrainError, TrainOutcome};
use crate::env::{Env, EnvError, SeedStream};
use crate::net::NetworkParams;
use crate::scalar::Real;

const RECONNECT_BACKOFF: Duration = Duration::from_millis(100);

/// Adapts `init` on `env` for `cfg.adapt_frames` frames. Every update uses
/// `cfg.adapt_trajectories` trajectories of `cfg.adapt_horizon` frames,
/// each started from a newly randomised scenario.
///
/// A bridge failure pauses training: the partial trajectory is dropped, the
/// link is re-established (up to `cfg.reconnect_attempts` times in a row)
/// and the trajectory restarts from a fresh scenario.
pub fn run_adaptation<T: Real>(env: &mut Env<T>, cfg: &TrainConfig<T>, init: NetworkParams<T>, seed: u64) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if init.shape() != cfg.network {
        return Err(TrainError::Config("initial parameters do not match the configured network shape".into()));
    }
    let mut seeds = SeedStream::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.next_seed());
    let mut learner = Learner::new(init, cfg);
    let mut window = MetricsWindow::new(cfg.metrics_window_frames, env.config().dt_s.as_f64());
    let mut metrics = Vec::with_capacity(cfg.adapt_frames);
    let mut losses = Vec::new();
    let mut remaining = cfg.adapt_frames;

    while remaining > 0 {
        let mut batch = Vec::with_capacity(cfg.adapt_trajectories);
        for _ in 0..cfg.adapt_trajectories {
            let steps = cfg.adapt_horizon.min(remaining);
            if steps == 0 {
                break;
            }
            let mut failures = 0;
            let traj = loop {
                let attempt = env
                    .reset(seeds.next_seed())
                    .and_then(|_| collect(env, &mut seeds, &learner.params, cfg.behaviour, steps, &mut rng));
                match attempt {
                    Ok(t) => break t,
                    Err(EnvError::Bridge(e)) => {
                        failures += 1;
                        log::warn!("bridge failure ({e}); pausing, reconnect attempt {failures}");
                        if failures > cfg.reconnect_attempts {
                            return Err(TrainError::BridgeTimeout { attempts: cfg.reconnect_attempts, last: e.to_string() });
                        }
                        thread::sleep(RECONNECT_BACKOFF * failures);
                        if let Err(e) = env.reconnect() {
                            log::warn!("reconnect failed: {e}");
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            };
            remaining -= steps;
            batch.push(traj);
        }
        let (grad, l) = batch_gradient(&learner.params, &batch, cfg);
        record_frames(&batch, &mut window, &mut metrics);
        learner.apply(&grad);
        losses.push(l);
        log::info!("adaptation frame {} update {} loss {:.4}", metrics.len(), learner.updates, l.total.as_f64());
    }

    Ok(TrainOutcome { updates: learner.updates, skipped: learner.skipped, params: learner.params, metrics, losses, worker_failures: 0 })
}
