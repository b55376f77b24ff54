//! Greedy evaluation over fixed scenario seeds and a paired sign test.

use statrs::distribution::{Binomial, DiscreteCDF};

use crate::env::{Env, EnvError};
use crate::net::NetworkParams;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeReport {
    pub seed: u64,
    pub collisions: u32,
    pub total_reward: f64,
    pub frames: u64,
}

/// Runs one episode per seed for up to `ticks` frames with the most probable
/// action of the online policy. Collisions are counted by onset; the episode
/// stops early only if the environment reports a terminal step.
pub fn evaluate<T: Real>(env: &mut Env<T>, params: &NetworkParams<T>, seeds: &[u64], ticks: u64) -> Result<Vec<EpisodeReport>, EnvError> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut obs = env.reset(seed)?;
        let mut report = EpisodeReport { seed, collisions: 0, total_reward: 0.0, frames: 0 };
        for _ in 0..ticks {
            let r = env.step(params.policy(&obs).greedy())?;
            report.frames += 1;
            report.total_reward += r.reward.as_f64();
            report.collisions += u32::from(r.events.agent_collision_onset);
            if r.done {
                break;
            }
            obs = r.observation;
        }
        out.push(report);
    }
    Ok(out)
}

/// One-sided paired sign test of "after improves on before".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    pub improved: u64,
    pub worsened: u64,
    pub ties: u64,
    /// `P(X >= improved)` for `X ~ Binomial(improved + worsened, 1/2)`.
    pub p_value: f64,
}

/// `improvement[i] > 0` means pair `i` improved.
pub fn sign_test(improvement: &[f64]) -> SignTest {
    let improved = improvement.iter().filter(|&&d| d > 0.0).count() as u64;
    let worsened = improvement.iter().filter(|&&d| d < 0.0).count() as u64;
    let ties = improvement.len() as u64 - improved - worsened;
    let n = improved + worsened;
    let p_value = if improved == 0 {
        1.0
    } else {
        Binomial::new(0.5, n).expect("valid binomial").sf(improved - 1)
    };
    SignTest { improved, worsened, ties, p_value }
}
