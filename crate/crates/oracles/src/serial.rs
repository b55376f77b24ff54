//! A single-threaded trainer: collect, differentiate, step, repeat. No
//! channels, no snapshots. It shares the simulator and the network with the
//! real trainer but re-derives seeds, returns, loss gradients, Adam and the
//! target update, using the same floating-point expression order so that a
//! one-worker asynchronous run must agree bit for bit.

use std::collections::VecDeque;
use std::sync::Arc;

use mixedlane::env::{Env, EnvConfig, SeedStream};
use mixedlane::net::{forward, policy, sample_action, values, NetworkParams, OutputGrad};
use mixedlane::track::Track;
use mixedlane::train::{Baseline, Behaviour, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::returns::returns;

#[derive(Debug, Clone, PartialEq)]
pub struct SerialOutcome {
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    /// Per frame: reward, collision onset, windowed collisions per minute,
    /// windowed mean reward.
    pub frames: Vec<(f64, bool, f64, f64)>,
    pub updates: u64,
}

struct Frame {
    obs: mixedlane::env::Observation<f64>,
    action: mixedlane::env::ActionPair,
    logp: f64,
    reward: f64,
    done: bool,
    collision: bool,
}

fn head_grad(p: &[f64; 3], logp: &[f64; 3], chosen: usize, wa: f64, we: f64) -> [f64; 3] {
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    let mut g = [0.0; 3];
    for j in 0..3 {
        let onehot = if j == chosen { 1.0 } else { 0.0 };
        g[j] = wa * (onehot - p[j]) + we * (p[j] * (logp[j] + h));
    }
    g
}

pub fn serial_train(env_cfg: Arc<EnvConfig<f64>>, track: Arc<Track<f64>>, cfg: &TrainConfig<f64>, init: NetworkParams<f64>, seed: u64) -> SerialOutcome {
    let layout = init.layout().clone();
    let mut online = init.online.clone();
    let mut target = init.target.clone();
    let actor = layout.actor_len();

    let mut run = SeedStream::new(seed);
    let mut scenarios = SeedStream::new(run.next_seed());
    let mut rng = ChaCha8Rng::seed_from_u64(run.next_seed());
    let mut envs: Vec<Env<f64>> =
        (0..cfg.envs_per_worker).map(|_| Env::new(env_cfg.clone(), track.clone(), scenarios.next_seed()).unwrap()).collect();

    let mut m = vec![0.0; online.len()];
    let mut v = vec![0.0; online.len()];
    let mut t = 0;
    let mut window: VecDeque<(f64, bool)> = VecDeque::new();
    let mut frames = Vec::with_capacity(cfg.total_frames);
    let mut remaining = cfg.total_frames;

    while remaining > 0 {
        let budget = remaining.min(cfg.horizon * cfg.envs_per_worker);
        remaining -= budget;
        let e = envs.len();
        let mut batch: Vec<(Vec<Frame>, mixedlane::env::Observation<f64>)> = Vec::new();
        for (i, env) in envs.iter_mut().enumerate() {
            let steps = budget / e + usize::from(i < budget % e);
            if steps == 0 {
                continue;
            }
            let mut obs = env.observe();
            let mut traj = Vec::new();
            for _ in 0..steps {
                let theta = match cfg.behaviour {
                    Behaviour::Target => &target[..],
                    Behaviour::Online => &online[..],
                };
                let pi = policy(&layout, theta, &obs);
                let (action, logp) = sample_action(&pi, &mut rng);
                let r = env.step(action).unwrap();
                traj.push(Frame { obs, action, logp, reward: r.reward, done: r.done, collision: r.events.agent_collision_onset });
                obs = if r.done { env.reset(scenarios.next_seed()).unwrap() } else { r.observation };
            }
            batch.push((traj, obs));
        }

        let n: usize = batch.iter().map(|b| b.0.len()).sum();
        let mut grad = vec![0.0; online.len()];
        for (traj, last_obs) in &batch {
            let mut rets = Vec::new();
            let mut start = 0;
            for k in 0..traj.len() {
                if traj[k].done {
                    let r: Vec<f64> = traj[start..=k].iter().map(|f| f.reward).collect();
                    rets.extend(returns(&r, cfg.gamma, 0.0, true));
                    start = k + 1;
                }
            }
            if start < traj.len() {
                let (v1, v2) = values(&layout, &online, last_obs);
                let r: Vec<f64> = traj[start..].iter().map(|f| f.reward).collect();
                rets.extend(returns(&r, cfg.gamma, (v1 + v2) / 2.0, false));
            }
            for (f, &ret) in traj.iter().zip(&rets) {
                let out = forward(&layout, &online, &f.obs);
                let base = match cfg.baseline {
                    Baseline::Closest => {
                        if (ret - out.v1).abs() <= (ret - out.v2).abs() {
                            out.v1
                        } else {
                            out.v2
                        }
                    }
                    Baseline::Min => out.v1.min(out.v2),
                };
                let adv = ret - base;
                let pi = &out.policy;
                let ratio = (pi.log_prob(f.action) - f.logp).exp();
                let lo = 1.0 - cfg.clip_epsilon;
                let hi = 1.0 + cfg.clip_epsilon;
                let unclipped = ratio * adv;
                let clipped = ratio.max(lo).min(hi) * adv;
                let d_logp = if unclipped <= clipped { -unclipped } else { 0.0 };
                let scale = 1.0 / n as f64;
                let wa = cfg.actor_weight * scale * d_logp;
                let we = cfg.entropy_weight * scale;
                let wc = cfg.critic_weight * scale;
                let g = OutputGrad {
                    lane_logits: head_grad(&pi.lane, &pi.log_lane, f.action.lane.index(), wa, we),
                    accel_logits: head_grad(&pi.accel, &pi.log_accel, f.action.accel.index(), wa, we),
                    v1: wc * (-2.0 * (ret - out.v1)),
                    v2: wc * (-2.0 * (ret - out.v2)),
                };
                out.backward(&layout, &online, &g, &mut grad);
            }
        }

        // frames are logged before the parameters move
        for (traj, _) in &batch {
            for f in traj {
                window.push_back((f.reward, f.collision));
                if window.len() > cfg.metrics_window_frames {
                    window.pop_front();
                }
                let hits = window.iter().filter(|w| w.1).count() as f64;
                let cpm = 60.0 * hits / (window.len() as f64 * env_cfg.dt_s);
                let mean = window.iter().map(|w| w.0).sum::<f64>() / window.len() as f64;
                frames.push((f.reward, f.collision, cpm, mean));
            }
        }

        // Adam with two learning-rate groups, then the target moves toward the actor
        t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..online.len() {
            let lr = if i < actor { cfg.actor_lr } else { cfg.critic_lr };
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            online[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
        for i in 0..actor {
            target[i] = cfg.tau * target[i] + (1.0 - cfg.tau) * online[i];
        }
    }
    SerialOutcome { online, target, frames, updates: t as u64 }
}
