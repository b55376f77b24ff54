//! Discounted n-step returns written as an explicit double loop.

/// `R_t = sum_{i=0}^{k-t-1} gamma^i r_{t+i} + gamma^{k-t} V`, with `V = 0`
/// when the trajectory ended in a terminal state.
pub fn returns(rewards: &[f64], gamma: f64, bootstrap: f64, terminal: bool) -> Vec<f64> {
    let k = rewards.len();
    let mut out = vec![0.0; k];
    for t in 0..k {
        let mut acc = 0.0;
        let mut discount = 1.0;
        for i in 0..(k - t) {
            acc += discount * rewards[t + i];
            discount *= gamma;
        }
        if !terminal {
            acc += discount * bootstrap;
        }
        out[t] = acc;
    }
    out
}
