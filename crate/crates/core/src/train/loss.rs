//! Returns, advantages and the three loss terms, each with the gradient it
//! contributes at the network outputs.

use super::config::{Baseline, TrainConfig};
use crate::env::ActionPair;
use crate::net::{Forward, OutputGrad, Policy, HEAD_OUTPUTS};
use crate::scalar::Real;

/// n-step returns of one trajectory segment:
/// `R_t = sum_{i<k-t} gamma^i r_{t+i} + gamma^(k-t) V`, with `V = 0` when
/// the segment ended in a terminal state.
pub fn compute_returns<T: Real>(rewards: &[T], gamma: T, bootstrap: T, terminal: bool) -> Vec<T> {
    let k = rewards.len();
    (0..k)
        .map(|t| {
            let mut acc = T::zero();
            let mut discount = T::one();
            for r in &rewards[t..] {
                acc = acc + discount * *r;
                discount = discount * gamma;
            }
            if terminal {
                acc
            } else {
                acc + discount * bootstrap
            }
        })
        .collect()
}

/// Returns of a trajectory that may contain terminal steps: each terminal
/// closes a segment with a zero bootstrap; the last open segment
/// bootstraps from `bootstrap`.
pub fn trajectory_returns<T: Real>(rewards: &[T], done: &[bool], gamma: T, bootstrap: T) -> Vec<T> {
    let mut out = Vec::with_capacity(rewards.len());
    let mut start = 0;
    for t in 0..rewards.len() {
        if done[t] {
            out.extend(compute_returns(&rewards[start..=t], gamma, T::zero(), true));
            start = t + 1;
        }
    }
    if start < rewards.len() {
        out.extend(compute_returns(&rewards[start..], gamma, bootstrap, false));
    }
    out
}

/// The critic value the actor's advantage is measured against.
pub fn baseline_value<T: Real>(ret: T, v1: T, v2: T, rule: Baseline) -> T {
    match rule {
        Baseline::Closest => {
            if (ret - v1).abs() <= (ret - v2).abs() {
                v1
            } else {
                v2
            }
        }
        Baseline::Min => {
            if v1 <= v2 {
                v1
            } else {
                v2
            }
        }
    }
}

/// Actor advantages and the mean twin-critic loss
/// `mean_t (R_t - V1)^2 + (R_t - V2)^2`.
pub fn advantage_and_critic_loss<T: Real>(returns: &[T], v1: &[T], v2: &[T], rule: Baseline) -> (Vec<T>, T) {
    let n = returns.len();
    let mut adv = Vec::with_capacity(n);
    let mut loss = T::zero();
    for t in 0..n {
        adv.push(returns[t] - baseline_value(returns[t], v1[t], v2[t], rule));
        loss = loss + critic_term(returns[t], v1[t], v2[t]);
    }
    (adv, if n == 0 { T::zero() } else { loss / T::lit(n as f64) })
}

fn critic_term<T: Real>(ret: T, v1: T, v2: T) -> T {
    (ret - v1) * (ret - v1) + (ret - v2) * (ret - v2)
}

/// Clipped surrogate of one step, `-min(rho A, clamp(rho, 1-eps, 1+eps) A)`,
/// and its derivative with respect to `log pi(a)` (the advantage is a
/// constant).
pub fn ppo_clip_term<T: Real>(ratio: T, advantage: T, eps: T) -> (T, T) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp_to(T::one() - eps, T::one() + eps) * advantage;
    if unclipped <= clipped {
        (-unclipped, -unclipped)
    } else {
        (-clipped, T::zero())
    }
}

/// Mean clipped surrogate over a batch.
pub fn ppo_clip_loss<T: Real>(ratios: &[T], advantages: &[T], eps: T) -> T {
    let n = ratios.len();
    if n == 0 {
        return T::zero();
    }
    let total = ratios.iter().zip(advantages).fold(T::zero(), |acc, (&r, &a)| acc + ppo_clip_term(r, a, eps).0);
    total / T::lit(n as f64)
}

/// Factorised entropy of the two heads.
pub fn entropy<T: Real>(lane: &[T; HEAD_OUTPUTS], accel: &[T; HEAD_OUTPUTS]) -> T {
    head_entropy(lane) + head_entropy(accel)
}

fn head_entropy<T: Real>(p: &[T; HEAD_OUTPUTS]) -> T {
    p.iter().filter(|&&x| x > T::zero()).fold(T::zero(), |acc, &x| acc - x * x.ln())
}

/// The entropy loss term `-H`.
pub fn entropy_loss<T: Real>(lane: &[T; HEAD_OUTPUTS], accel: &[T; HEAD_OUTPUTS]) -> T {
    -entropy(lane, accel)
}

pub fn total_loss<T: Real>(ppo: T, critic: T, entropy_term: T, cfg: &TrainConfig<T>) -> T {
    cfg.actor_weight * ppo + cfg.critic_weight * critic + cfg.entropy_weight * entropy_term
}

/// Batch means of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses<T> {
    pub ppo: T,
    pub critic: T,
    pub entropy: T,
    pub total: T,
}

/// One step's loss values (unscaled) and the output gradient of its share
/// `1/n` of the weighted batch loss.
pub fn step_gradient<T: Real>(
    f: &Forward<T>,
    action: ActionPair,
    behaviour_logp: T,
    ret: T,
    n: usize,
    cfg: &TrainConfig<T>,
) -> (OutputGrad<T>, [T; 3]) {
    let scale = T::one() / T::lit(n as f64);
    let pi: &Policy<T> = &f.policy;
    let adv = ret - baseline_value(ret, f.v1, f.v2, cfg.baseline);
    let ratio = (pi.log_prob(action) - behaviour_logp).exp();
    let (ppo, d_logp) = ppo_clip_term(ratio, adv, cfg.clip_epsilon);
    let critic = critic_term(ret, f.v1, f.v2);
    let h_lane = head_entropy(&pi.lane);
    let h_accel = head_entropy(&pi.accel);

    let wa = cfg.actor_weight * scale * d_logp;
    let we = cfg.entropy_weight * scale;
    let head = |p: &[T; HEAD_OUTPUTS], logp: &[T; HEAD_OUTPUTS], h: T, chosen: usize| {
        let mut g = [T::zero(); HEAD_OUTPUTS];
        for j in 0..HEAD_OUTPUTS {
            let onehot = if j == chosen { T::one() } else { T::zero() };
            // d(-H)/dz_j = p_j (log p_j + H)
            g[j] = wa * (onehot - p[j]) + we * (p[j] * (logp[j] + h));
        }
        g
    };
    let wc = cfg.critic_weight * scale;
    let grad = OutputGrad {
        lane_logits: head(&pi.lane, &pi.log_lane, h_lane, action.lane.index()),
        accel_logits: head(&pi.accel, &pi.log_accel, h_accel, action.accel.index()),
        v1: wc * (T::lit(-2.0) * (ret - f.v1)),
        v2: wc * (T::lit(-2.0) * (ret - f.v2)),
    };
    (grad, [ppo, critic, -(h_lane + h_accel)])
}
