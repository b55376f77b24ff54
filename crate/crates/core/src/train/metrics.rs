//! Sliding-window training metrics.

use std::collections::VecDeque;

use statrs::statistics::Statistics;

/// Ring buffer of per-frame `(reward, collision)` over a fixed window.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsWindow {
    window: usize,
    dt: f64,
    frames: VecDeque<(f64, bool)>,
    reward_sum: f64,
    collisions: usize,
}

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub frame: u64,
    pub reward: f64,
    pub collision: bool,
    pub window_cpm: f64,
    pub window_reward: f64,
}

pub const METRICS_CSV_HEADER: &str = "frame,reward,collision,window_cpm,window_reward";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.frame, self.reward, u8::from(self.collision), self.window_cpm, self.window_reward)
    }
}

impl MetricsWindow {
    pub fn new(window: usize, dt: f64) -> Self {
        assert!(window > 0 && dt > 0.0);
        Self { window, dt, frames: VecDeque::with_capacity(window), reward_sum: 0.0, collisions: 0 }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Adds a frame and returns `(collisions per minute, mean reward)`.
    pub fn update(&mut self, reward: f64, collision: bool) -> (f64, f64) {
        if self.frames.len() == self.window {
            let (r, c) = self.frames.pop_front().expect("full window");
            self.reward_sum -= r;
            self.collisions -= usize::from(c);
        }
        self.frames.push_back((reward, collision));
        self.reward_sum += reward;
        self.collisions += usize::from(collision);
        self.current()
    }

    pub fn current(&self) -> (f64, f64) {
        let n = self.frames.len();
        if n == 0 {
            return (0.0, 0.0);
        }
        let mean = self.reward_sum / n as f64;
        (60.0 * self.collisions as f64 / (n as f64 * self.dt), mean)
    }
}

/// Pearson correlation coefficient; `None` for fewer than two points or a
/// constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let cov = x.iter().copied().covariance(y.iter().copied());
    let (sx, sy) = (x.iter().std_dev(), y.iter().std_dev());
    (sx > 0.0 && sy > 0.0).then(|| cov / (sx * sy))
}
