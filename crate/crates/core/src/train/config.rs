//! Learning hyperparameters.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::net::NetworkShape;
use crate::scalar::Real;

/// Which critic value the actor's advantage is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The critic value closer to the return (ties go to the first critic).
    #[default]
    Closest,
    /// The smaller critic value.
    Min,
}

/// Network that samples actions during rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    /// The Polyak-averaged target policy.
    #[default]
    Target,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig<T> {
    pub network: NetworkShape,
    pub gamma: T,
    /// Polyak coefficient: weight kept on the old target.
    pub tau: T,
    pub clip_epsilon: T,
    /// Trajectory length k per environment.
    pub horizon: usize,
    pub actor_weight: T,
    pub critic_weight: T,
    pub entropy_weight: T,
    /// Learning rate of the trunk and actor.
    pub actor_lr: T,
    pub critic_lr: T,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_epsilon: T,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip_norm: T,
    pub baseline: Baseline,
    pub behaviour: Behaviour,
    pub workers: usize,
    pub envs_per_worker: usize,
    pub total_frames: usize,
    /// Trajectory length during mixed-reality adaptation.
    pub adapt_horizon: usize,
    /// Trajectories (each from a fresh scenario) per adaptation update.
    pub adapt_trajectories: usize,
    pub adapt_frames: usize,
    /// Attempts to re-establish a timed-out bridge before giving up.
    pub reconnect_attempts: u32,
    pub metrics_window_frames: usize,
}

impl<T: Real> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            network: NetworkShape::default(),
            gamma: T::lit(0.9),
            tau: T::lit(0.7),
            clip_epsilon: T::lit(0.1),
            horizon: 128,
            actor_weight: T::lit(10.0),
            critic_weight: T::lit(1.0),
            entropy_weight: T::lit(0.003),
            actor_lr: T::lit(2e-4),
            critic_lr: T::lit(2e-3),
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_epsilon: T::lit(1e-8),
            grad_clip_norm: T::zero(),
            baseline: Baseline::Closest,
            behaviour: Behaviour::Target,
            workers: 1,
            envs_per_worker: 1,
            total_frames: 50_000,
            adapt_horizon: 512,
            adapt_trajectories: 2,
            adapt_frames: 20_480,
            reconnect_attempts: 3,
            metrics_window_frames: 8000,
        }
    }
}

impl<T: Real> TrainConfig<T> {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        let unit_open = |v: T| v > T::zero() && v < T::one();
        if crate::net::Layout::new(self.network).is_err() {
            return bad("network: need hidden >= features >= 1");
        }
        if !unit_open(self.gamma) {
            return bad("gamma must lie in (0, 1)");
        }
        if !unit_open(self.tau) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.clip_epsilon > T::zero()) {
            return bad("clip_epsilon must be positive");
        }
        for (name, w) in [("actor_weight", self.actor_weight), ("critic_weight", self.critic_weight), ("entropy_weight", self.entropy_weight)] {
            if !(w >= T::zero() && w.is_finite()) {
                return bad(&format!("{name} must be finite and >= 0"));
            }
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("adam_epsilon", self.adam_epsilon)] {
            if !(lr > T::zero() && lr.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !(self.adam_beta1 >= T::zero() && self.adam_beta1 < T::one() && self.adam_beta2 >= T::zero() && self.adam_beta2 < T::one()) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.grad_clip_norm >= T::zero()) {
            return bad("grad_clip_norm must be >= 0");
        }
        if self.horizon == 0 || self.adapt_horizon == 0 {
            return bad("trajectory lengths must be >= 1");
        }
        if self.workers == 0 || self.envs_per_worker == 0 || self.adapt_trajectories == 0 {
            return bad("workers, envs_per_worker and adapt_trajectories must be >= 1");
        }
        if self.metrics_window_frames == 0 {
            return bad("metrics_window_frames must be >= 1");
        }
        Ok(())
    }
}
