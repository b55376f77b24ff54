//! Policy and value network: a shared per-neighbour trunk max-pooled into a
//! feature vector, a two-headed soft-max actor and twin critics, with
//! hand-written reverse-mode gradients.
//!
//! All weights live in one flat vector. Layers are laid out in the order
//! trunk, actor body, lane head, accel head, critic 1, critic 2, so the
//! actor (everything needed to evaluate the policy) is a prefix. The
//! Polyak-averaged target copy stores just that prefix.

pub mod checkpoint;

use rand::Rng;
use thiserror::Error;

use crate::env::{AccelAction, ActionPair, LaneAction, Observation, NEIGHBOR_DIM, NEIGHBOR_SLOTS, SELF_DIM};
use crate::scalar::Real;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

pub const HEAD_OUTPUTS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network shape: hidden {hidden}, features {features} (need hidden >= features >= 1)")]
    Shape { hidden: usize, features: usize },
    #[error("parameter length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkShape {
    pub hidden: usize,
    pub features: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self { hidden: 64, features: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    offset: usize,
    inputs: usize,
    outputs: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let b = self.offset + self.inputs * self.outputs;
        b..b + self.outputs
    }

    fn len(&self) -> usize {
        (self.inputs + 1) * self.outputs
    }
}

/// A chain of affine layers with rectifiers between them.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Stack {
    layers: Vec<Layer>,
    /// Whether the last layer's output is rectified too (it feeds another
    /// affine layer outside the stack).
    rectify_last: bool,
}

/// Offsets of every layer in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    shape: NetworkShape,
    trunk: Stack,
    body: Stack,
    lane_head: Stack,
    accel_head: Stack,
    critics: [Stack; 2],
    actor_len: usize,
    total_len: usize,
}

impl Layout {
    pub fn new(shape: NetworkShape) -> Result<Self, NetError> {
        let NetworkShape { hidden: h, features: f } = shape;
        if f == 0 || h < f {
            return Err(NetError::Shape { hidden: h, features: f });
        }
        let mut offset = 0;
        let mut stack = |dims: &[usize], rectify_last: bool| {
            let layers = dims
                .windows(2)
                .map(|d| {
                    let l = Layer { offset, inputs: d[0], outputs: d[1] };
                    offset += l.len();
                    l
                })
                .collect();
            Stack { layers, rectify_last }
        };
        let joint = f + SELF_DIM;
        let trunk = stack(&[NEIGHBOR_DIM, h, h, h, f], true);
        let body = stack(&[joint, h, h, h], true);
        let lane_head = stack(&[h, h, HEAD_OUTPUTS], false);
        let accel_head = stack(&[h, h, HEAD_OUTPUTS], false);
        let actor_len = accel_head.layers.last().map(|l| l.offset + l.len()).unwrap_or(0);
        let c1 = stack(&[joint, h, h, h, 1], false);
        let c2 = stack(&[joint, h, h, h, 1], false);
        let total_len = offset;
        Ok(Self { shape, trunk, body, lane_head, accel_head, critics: [c1, c2], actor_len, total_len })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    /// Length of the trunk + actor prefix (also the target copy's length).
    pub fn actor_len(&self) -> usize {
        self.actor_len
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    fn all_layers(&self) -> impl Iterator<Item = &Layer> {
        [&self.trunk, &self.body, &self.lane_head, &self.accel_head, &self.critics[0], &self.critics[1]]
            .into_iter()
            .flat_map(|s| s.layers.iter())
    }
}

/// Online parameters and the Polyak-averaged target copy of the actor.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    layout: Layout,
    pub online: Vec<T>,
    pub target: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    /// Uniform fan-in initialisation `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`,
    /// zero biases; the target starts equal to the online actor.
    pub fn init<R: Rng + ?Sized>(shape: NetworkShape, rng: &mut R) -> Result<Self, NetError> {
        let layout = Layout::new(shape)?;
        let mut online = vec![T::zero(); layout.total_len];
        for l in layout.all_layers() {
            let bound = (1.0 / l.inputs as f64).sqrt();
            for w in &mut online[l.weights()] {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        let target = online[..layout.actor_len].to_vec();
        Ok(Self { layout, online, target })
    }

    pub fn zeros(shape: NetworkShape) -> Result<Self, NetError> {
        let layout = Layout::new(shape)?;
        Ok(Self { online: vec![T::zero(); layout.total_len], target: vec![T::zero(); layout.actor_len], layout })
    }

    pub fn from_parts(shape: NetworkShape, online: Vec<T>, target: Vec<T>) -> Result<Self, NetError> {
        let layout = Layout::new(shape)?;
        if online.len() != layout.total_len {
            return Err(NetError::Length { expected: layout.total_len, got: online.len() });
        }
        if target.len() != layout.actor_len {
            return Err(NetError::Length { expected: layout.actor_len, got: target.len() });
        }
        Ok(Self { layout, online, target })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn shape(&self) -> NetworkShape {
        self.layout.shape
    }

    pub fn is_finite(&self) -> bool {
        self.online.iter().chain(&self.target).all(|v| v.is_finite())
    }

    /// Policy under the online parameters.
    pub fn policy(&self, obs: &Observation<T>) -> Policy<T> {
        policy(&self.layout, &self.online, obs)
    }

    /// Policy under the target copy.
    pub fn target_policy(&self, obs: &Observation<T>) -> Policy<T> {
        policy(&self.layout, &self.target, obs)
    }

    /// Both critic values under the online parameters.
    pub fn values(&self, obs: &Observation<T>) -> (T, T) {
        values(&self.layout, &self.online, obs)
    }

    pub fn forward(&self, obs: &Observation<T>) -> Forward<T> {
        forward(&self.layout, &self.online, obs)
    }

    /// `target <- tau target + (1 - tau) online` over the actor prefix.
    pub fn polyak_update(&mut self, tau: T) {
        let n = self.layout.actor_len;
        polyak_update(&mut self.target, &self.online[..n], tau).expect("layout-consistent lengths");
    }
}

/// Elementwise `target <- tau target + (1 - tau) online`.
pub fn polyak_update<T: Real>(target: &mut [T], online: &[T], tau: T) -> Result<(), NetError> {
    if target.len() != online.len() {
        return Err(NetError::Length { expected: target.len(), got: online.len() });
    }
    let keep = T::one() - tau;
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * *t + keep * o;
    }
    Ok(())
}

/// Both action heads as probabilities and log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy<T> {
    pub lane: [T; HEAD_OUTPUTS],
    pub accel: [T; HEAD_OUTPUTS],
    pub log_lane: [T; HEAD_OUTPUTS],
    pub log_accel: [T; HEAD_OUTPUTS],
}

impl<T: Real> Policy<T> {
    pub fn log_prob(&self, a: ActionPair) -> T {
        self.log_lane[a.lane.index()] + self.log_accel[a.accel.index()]
    }

    /// Most probable action of each head (lowest index on ties).
    pub fn greedy(&self) -> ActionPair {
        let argmax = |p: &[T; HEAD_OUTPUTS]| (1..HEAD_OUTPUTS).fold(0, |best, i| if p[i] > p[best] { i } else { best });
        ActionPair::new(
            LaneAction::from_index(argmax(&self.lane)).expect("head index"),
            AccelAction::from_index(argmax(&self.accel)).expect("head index"),
        )
    }

    /// Factorised entropy `H(lane) + H(accel)`, with `0 log 0 = 0`.
    pub fn entropy(&self) -> T {
        entropy(&self.lane) + entropy(&self.accel)
    }
}

fn entropy<T: Real>(p: &[T]) -> T {
    p.iter().filter(|&&x| x > T::zero()).fold(T::zero(), |acc, &x| acc - x * x.ln())
}

/// Samples each head independently; returns the pair and its joint
/// log-probability.
pub fn sample_action<T: Real, R: Rng + ?Sized>(policy: &Policy<T>, rng: &mut R) -> (ActionPair, T) {
    let lane = sample_index(&policy.lane, rng);
    let accel = sample_index(&policy.accel, rng);
    let a = ActionPair::new(LaneAction::from_index(lane).expect("head index"), AccelAction::from_index(accel).expect("head index"));
    (a, policy.log_prob(a))
}

fn sample_index<T: Real, R: Rng + ?Sized>(p: &[T; HEAD_OUTPUTS], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        let pi = pi.as_f64();
        if pi <= 0.0 {
            continue;
        }
        cum += pi;
        last = i;
        if u < cum {
            return i;
        }
    }
    last
}

fn log_softmax<T: Real>(z: &[T]) -> ([T; HEAD_OUTPUTS], [T; HEAD_OUTPUTS]) {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    let mut logp = [T::zero(); HEAD_OUTPUTS];
    let mut p = [T::zero(); HEAD_OUTPUTS];
    for i in 0..HEAD_OUTPUTS {
        logp[i] = z[i] - lse;
        p[i] = logp[i].exp();
    }
    (p, logp)
}

/// Converts a gradient with respect to log-probabilities into one with
/// respect to the logits.
pub fn log_softmax_backward<T: Real>(p: &[T; HEAD_OUTPUTS], d_logp: &[T; HEAD_OUTPUTS]) -> [T; HEAD_OUTPUTS] {
    let total = d_logp.iter().copied().sum::<T>();
    let mut out = [T::zero(); HEAD_OUTPUTS];
    for i in 0..HEAD_OUTPUTS {
        out[i] = d_logp[i] - p[i] * total;
    }
    out
}

fn affine<T: Real>(params: &[T], l: &Layer, x: &[T], rectify: bool) -> Vec<T> {
    let w = &params[l.weights()];
    let b = &params[l.biases()];
    (0..l.outputs)
        .map(|o| {
            let row = &w[o * l.inputs..(o + 1) * l.inputs];
            let y = row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi);
            if rectify {
                y.max(T::zero())
            } else {
                y
            }
        })
        .collect()
}

/// Runs a stack; returns every activation, input first.
fn run_stack<T: Real>(params: &[T], s: &Stack, x: &[T]) -> Vec<Vec<T>> {
    let mut acts = Vec::with_capacity(s.layers.len() + 1);
    acts.push(x.to_vec());
    for (i, l) in s.layers.iter().enumerate() {
        let rectify = i + 1 < s.layers.len() || s.rectify_last;
        let y = affine(params, l, acts.last().expect("input pushed"), rectify);
        acts.push(y);
    }
    acts
}

/// Accumulates parameter gradients of a stack given the gradient at its
/// output; returns the gradient at its input.
fn back_stack<T: Real>(params: &[T], s: &Stack, acts: &[Vec<T>], d_out: &[T], grad: &mut [T]) -> Vec<T> {
    let mut dy = d_out.to_vec();
    for (i, l) in s.layers.iter().enumerate().rev() {
        let rectified = i + 1 < s.layers.len() || s.rectify_last;
        if rectified {
            for (d, &a) in dy.iter_mut().zip(&acts[i + 1]) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        let x = &acts[i];
        let w = &params[l.weights()];
        let mut dx = vec![T::zero(); l.inputs];
        let wo = l.weights().start;
        let bo = l.biases().start;
        for o in 0..l.outputs {
            let g = dy[o];
            if g == T::zero() {
                continue;
            }
            grad[bo + o] = grad[bo + o] + g;
            let row = o * l.inputs;
            for k in 0..l.inputs {
                grad[wo + row + k] = grad[wo + row + k] + g * x[k];
                dx[k] = dx[k] + g * w[row + k];
            }
        }
        dy = dx;
    }
    dy
}

struct Pooled<T> {
    trunk_acts: Vec<Vec<Vec<T>>>,
    argmax: Vec<usize>,
    joint: Vec<T>,
}

fn pool<T: Real>(layout: &Layout, params: &[T], obs: &Observation<T>) -> Pooled<T> {
    let f = layout.shape.features;
    let trunk_acts: Vec<Vec<Vec<T>>> = obs.neighbors.iter().map(|n| run_stack(params, &layout.trunk, n)).collect();
    let mut argmax = vec![0; f];
    let mut joint = Vec::with_capacity(f + SELF_DIM);
    for (j, slot) in argmax.iter_mut().enumerate() {
        let out = |k: usize| trunk_acts[k].last().expect("trunk output")[j];
        let mut best = 0;
        for k in 1..NEIGHBOR_SLOTS {
            if out(k) > out(best) {
                best = k;
            }
        }
        *slot = best;
        joint.push(out(best));
    }
    joint.extend_from_slice(&obs.self_obs);
    Pooled { trunk_acts, argmax, joint }
}

fn heads<T: Real>(layout: &Layout, params: &[T], body_out: &[T]) -> (Vec<Vec<T>>, Vec<Vec<T>>, Policy<T>) {
    let la = run_stack(params, &layout.lane_head, body_out);
    let aa = run_stack(params, &layout.accel_head, body_out);
    let (lane, log_lane) = log_softmax(la.last().expect("head output"));
    let (accel, log_accel) = log_softmax(aa.last().expect("head output"));
    (la, aa, Policy { lane, accel, log_lane, log_accel })
}

/// Evaluates the actor from a parameter slice holding at least the actor prefix.
pub fn policy<T: Real>(layout: &Layout, params: &[T], obs: &Observation<T>) -> Policy<T> {
    let pooled = pool(layout, params, obs);
    let body = run_stack(params, &layout.body, &pooled.joint);
    heads(layout, params, body.last().expect("body output")).2
}

/// Evaluates both critics from a full parameter vector.
pub fn values<T: Real>(layout: &Layout, params: &[T], obs: &Observation<T>) -> (T, T) {
    let pooled = pool(layout, params, obs);
    let v = |c: &Stack| run_stack(params, c, &pooled.joint).last().expect("critic output")[0];
    (v(&layout.critics[0]), v(&layout.critics[1]))
}

/// A full forward pass with the activations kept for [`Forward::backward`].
pub struct Forward<T> {
    pub policy: Policy<T>,
    pub v1: T,
    pub v2: T,
    pooled: Pooled<T>,
    body: Vec<Vec<T>>,
    lane_head: Vec<Vec<T>>,
    accel_head: Vec<Vec<T>>,
    critics: [Vec<Vec<T>>; 2],
}

/// Loss gradient at the network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad<T> {
    pub lane_logits: [T; HEAD_OUTPUTS],
    pub accel_logits: [T; HEAD_OUTPUTS],
    pub v1: T,
    pub v2: T,
}

pub fn forward<T: Real>(layout: &Layout, params: &[T], obs: &Observation<T>) -> Forward<T> {
    let pooled = pool(layout, params, obs);
    let body = run_stack(params, &layout.body, &pooled.joint);
    let (lane_head, accel_head, policy) = heads(layout, params, body.last().expect("body output"));
    let c1 = run_stack(params, &layout.critics[0], &pooled.joint);
    let c2 = run_stack(params, &layout.critics[1], &pooled.joint);
    let (v1, v2) = (c1.last().expect("critic output")[0], c2.last().expect("critic output")[0]);
    Forward { policy, v1, v2, pooled, body, lane_head, accel_head, critics: [c1, c2] }
}

impl<T: Real> Forward<T> {
    /// Adds the parameter gradient for output gradient `d` into `grad`
    /// (a vector of the full parameter length).
    pub fn backward(&self, layout: &Layout, params: &[T], d: &OutputGrad<T>, grad: &mut [T]) {
        let h = layout.shape.hidden;
        let mut d_body = vec![T::zero(); h];
        for (stack, acts, dz) in [(&layout.lane_head, &self.lane_head, &d.lane_logits), (&layout.accel_head, &self.accel_head, &d.accel_logits)] {
            let dx = back_stack(params, stack, acts, dz, grad);
            for (a, b) in d_body.iter_mut().zip(dx) {
                *a = *a + b;
            }
        }
        let mut d_joint = back_stack(params, &layout.body, &self.body, &d_body, grad);
        for (k, dv) in [d.v1, d.v2].into_iter().enumerate() {
            let dx = back_stack(params, &layout.critics[k], &self.critics[k], &[dv], grad);
            for (a, b) in d_joint.iter_mut().zip(dx) {
                *a = *a + b;
            }
        }
        for slot in 0..NEIGHBOR_SLOTS {
            let f = layout.shape.features;
            let mut d_feat = vec![T::zero(); f];
            let mut any = false;
            for j in 0..f {
                if self.pooled.argmax[j] == slot && d_joint[j] != T::zero() {
                    d_feat[j] = d_joint[j];
                    any = true;
                }
            }
            if any {
                back_stack(params, &layout.trunk, &self.pooled.trunk_acts[slot], &d_feat, grad);
            }
        }
    }
}
