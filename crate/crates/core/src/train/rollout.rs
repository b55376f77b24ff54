//! Trajectory collection and the gradient of a batch of trajectories.

use rand::Rng;

use super::config::{Behaviour, TrainConfig};
use super::loss::{step_gradient, total_loss, trajectory_returns, Losses};
use crate::env::{ActionPair, Env, EnvError, Observation, SeedStream};
use crate::net::{forward, sample_action, values, NetworkParams};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Step<T> {
    pub observation: Observation<T>,
    pub action: ActionPair,
    /// Log-probability of `action` under the behaviour policy.
    pub behaviour_logp: T,
    pub reward: T,
    pub done: bool,
    pub collision: bool,
}

/// Consecutive steps of one environment. Terminal steps may occur anywhere;
/// the environment is reset after each and the trajectory continues.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub steps: Vec<Step<T>>,
    /// Observation after the last step (ignored if that step was terminal).
    pub bootstrap: Observation<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Runs `steps` frames of `env` under the behaviour policy, resetting with
/// the next seed of `seeds` after each terminal step.
pub fn collect<T: Real, R: Rng>(
    env: &mut Env<T>,
    seeds: &mut SeedStream,
    params: &NetworkParams<T>,
    behaviour: Behaviour,
    steps: usize,
    rng: &mut R,
) -> Result<Trajectory<T>, EnvError> {
    let mut out = Vec::with_capacity(steps);
    let mut obs = env.observe();
    for _ in 0..steps {
        let pi = match behaviour {
            Behaviour::Target => params.target_policy(&obs),
            Behaviour::Online => params.policy(&obs),
        };
        let (action, logp) = sample_action(&pi, rng);
        let r = env.step(action)?;
        out.push(Step {
            observation: obs,
            action,
            behaviour_logp: logp,
            reward: r.reward,
            done: r.done,
            collision: r.events.agent_collision_onset,
        });
        obs = if r.done { env.reset(seeds.next_seed())? } else { r.observation };
    }
    Ok(Trajectory { steps: out, bootstrap: obs })
}

/// Gradient of the weighted loss, averaged over every step of the batch,
/// with respect to the online parameters.
pub fn batch_gradient<T: Real>(params: &NetworkParams<T>, batch: &[Trajectory<T>], cfg: &TrainConfig<T>) -> (Vec<T>, Losses<T>) {
    let layout = params.layout();
    let theta = &params.online;
    let mut grad = vec![T::zero(); theta.len()];
    let n: usize = batch.iter().map(Trajectory::len).sum();
    if n == 0 {
        return (grad, Losses::default());
    }
    let mut sums = [T::zero(); 3];
    for traj in batch.iter().filter(|t| !t.is_empty()) {
        let last_done = traj.steps.last().is_some_and(|s| s.done);
        let bootstrap = if last_done {
            T::zero()
        } else {
            let (v1, v2) = values(layout, theta, &traj.bootstrap);
            (v1 + v2) / T::lit(2.0)
        };
        let rewards: Vec<T> = traj.steps.iter().map(|s| s.reward).collect();
        let done: Vec<bool> = traj.steps.iter().map(|s| s.done).collect();
        let returns = trajectory_returns(&rewards, &done, cfg.gamma, bootstrap);
        for (s, &ret) in traj.steps.iter().zip(&returns) {
            let f = forward(layout, theta, &s.observation);
            let (d, terms) = step_gradient(&f, s.action, s.behaviour_logp, ret, n, cfg);
            f.backward(layout, theta, &d, &mut grad);
            for k in 0..3 {
                sums[k] = sums[k] + terms[k];
            }
        }
    }
    let nt = T::lit(n as f64);
    let (ppo, critic, entropy) = (sums[0] / nt, sums[1] / nt, sums[2] / nt);
    (grad, Losses { ppo, critic, entropy, total: total_loss(ppo, critic, entropy, cfg) })
}
