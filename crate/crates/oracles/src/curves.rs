//! Cubic Bezier evaluation and dense arc-length quadrature.

pub type P = [f64; 2];

/// Bernstein-form point on a cubic.
pub fn point(c: &[P; 4], u: f64) -> P {
    let w = [(1.0 - u).powi(3), 3.0 * (1.0 - u).powi(2) * u, 3.0 * (1.0 - u) * u * u, u.powi(3)];
    let mut p = [0.0; 2];
    for k in 0..4 {
        p[0] += w[k] * c[k][0];
        p[1] += w[k] * c[k][1];
    }
    p
}

/// Speed |B'(u)| from the derivative's own Bernstein form.
fn speed(c: &[P; 4], u: f64) -> f64 {
    let d: Vec<P> = (0..3).map(|k| [3.0 * (c[k + 1][0] - c[k][0]), 3.0 * (c[k + 1][1] - c[k][1])]).collect();
    let w = [(1.0 - u).powi(2), 2.0 * (1.0 - u) * u, u * u];
    let x: f64 = (0..3).map(|k| w[k] * d[k][0]).sum();
    let y: f64 = (0..3).map(|k| w[k] * d[k][1]).sum();
    x.hypot(y)
}

/// Composite Simpson quadrature of the speed over `[0, 1]` with `n` panels.
pub fn arc_length(c: &[P; 4], n: usize) -> f64 {
    let n = n.max(2) & !1;
    let h = 1.0 / n as f64;
    let mut acc = speed(c, 0.0) + speed(c, 1.0);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * speed(c, i as f64 * h);
    }
    acc * h / 3.0
}

/// Sum of chord lengths over `n` equal parameter steps.
pub fn chord_length(c: &[P; 4], n: usize) -> f64 {
    let mut prev = point(c, 0.0);
    let mut total = 0.0;
    for i in 1..=n {
        let p = point(c, i as f64 / n as f64);
        total += (p[0] - prev[0]).hypot(p[1] - prev[1]);
        prev = p;
    }
    total
}
