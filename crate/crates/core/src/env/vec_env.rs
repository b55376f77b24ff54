//! Batches of independent environments stepped together.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionPair, Env, EnvConfig, EnvError, Observation, StepResult};
use crate::scalar::Real;
use crate::track::Track;

/// Deterministic stream of scenario seeds.
#[derive(Debug, Clone)]
pub struct SeedStream(ChaCha8Rng);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_seed(&mut self) -> u64 {
        self.0.next_u64()
    }
}

pub struct VecEnv<T: Real> {
    envs: Vec<Env<T>>,
    seeds: SeedStream,
    observations: Vec<Observation<T>>,
}

impl<T: Real> VecEnv<T> {
    /// `count` environments whose initial and reset seeds come from one stream.
    pub fn new(config: Arc<EnvConfig<T>>, track: Arc<Track<T>>, stream_seed: u64, count: usize) -> Result<Self, EnvError> {
        let mut seeds = SeedStream::new(stream_seed);
        let mut envs = Vec::with_capacity(count);
        for _ in 0..count {
            envs.push(Env::new(Arc::clone(&config), Arc::clone(&track), seeds.next_seed())?);
        }
        Ok(Self::from_envs(envs, seeds))
    }

    /// Wraps existing environments; resets draw from `seeds`.
    pub fn from_envs(envs: Vec<Env<T>>, seeds: SeedStream) -> Self {
        let observations = envs.iter().map(Env::observe).collect();
        Self { envs, seeds, observations }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[Env<T>] {
        &self.envs
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    /// Steps every environment with its action; terminal ones are reset
    /// with the next stream seed and report the fresh observation.
    pub fn step_many(&mut self, actions: &[ActionPair]) -> Result<Vec<StepResult<T>>, EnvError> {
        if actions.len() != self.envs.len() {
            return Err(EnvError::BatchSize { envs: self.envs.len(), actions: actions.len() });
        }
        let mut out = Vec::with_capacity(actions.len());
        for (i, (env, &a)) in self.envs.iter_mut().zip(actions).enumerate() {
            let mut r = env.step(a)?;
            if r.done {
                let seed = self.seeds.next_seed();
                r.observation = env.reset(seed)?;
                r.reset_seed = Some(seed);
            }
            self.observations[i] = r.observation;
            out.push(r);
        }
        Ok(out)
    }
}
