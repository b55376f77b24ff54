//! Adam with per-group learning rates and an optional global-norm clip.

use std::ops::Range;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    steps: i32,
    beta1: T,
    beta2: T,
    eps: T,
    groups: Vec<(Range<usize>, T)>,
    clip_norm: T,
}

/// What an optimiser step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient (or the resulting update) was not finite; nothing changed.
    Skipped,
}

impl<T: Real> Adam<T> {
    /// `groups` assigns a learning rate to each parameter range; together
    /// they must cover `0..len`.
    pub fn new(len: usize, groups: Vec<(Range<usize>, T)>, beta1: T, beta2: T, eps: T, clip_norm: T) -> Self {
        debug_assert_eq!(groups.iter().map(|g| g.0.len()).sum::<usize>(), len);
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], steps: 0, beta1, beta2, eps, groups, clip_norm }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) -> StepOutcome {
        if grad.len() != params.len() || grad.iter().any(|g| !g.is_finite()) {
            return StepOutcome::Skipped;
        }
        let mut scale = T::one();
        if self.clip_norm > T::zero() {
            let norm = grad.iter().fold(T::zero(), |acc, &g| acc + g * g).sqrt();
            if norm > self.clip_norm {
                scale = self.clip_norm / norm;
            }
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.steps + 1;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut next = params.to_vec();
        for (range, lr) in &self.groups {
            for i in range.clone() {
                let g = grad[i] * scale;
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                next[i] = params[i] - *lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        if next.iter().any(|p| !p.is_finite()) {
            return StepOutcome::Skipped;
        }
        params.copy_from_slice(&next);
        self.m = m;
        self.v = v;
        self.steps = t;
        StepOutcome::Applied
    }
}
