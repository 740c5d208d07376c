//! One-dimensional Gauss–Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[m - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=m {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if m == 0 {
        return (1.0, 0.0);
    }
    let d = m as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_interval(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let h = 0.5 * (b - a);
    let c = 0.5 * (a + b);
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Composite rule: `panels` equal panels of `m` points each on [a, b].
pub fn composite(m: usize, panels: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(m * panels);
    let mut ws = Vec::with_capacity(m * panels);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (t, v) in x.iter().zip(&w) {
            xs.push(lo + 0.5 * h * (t + 1.0));
            ws.push(0.5 * h * v);
        }
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for m in [1, 2, 5, 16, 32, 64] {
            let (x, w) = gauss_legendre(m);
            for deg in 0..(2 * m) {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((s - exact).abs() < 1e-13, "m={m} deg={deg} s={s}");
            }
        }
    }

    #[test]
    fn composite_exp() {
        let (x, w) = composite(8, 4, 0.0, 2.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.exp()).sum();
        assert!((s - (2f64.exp() - 1.0)).abs() < 1e-13);
    }
}
