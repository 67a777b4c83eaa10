//! Gauss–Legendre rules and log-panel integration for integrands with
//! power-type behaviour at the origin.

use std::sync::OnceLock;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(mid + half * x)).sum::<f64>() * half
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 16-point rule.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Nodes `s` and weights of the 16-point rule in `u = ln s` on `[a, b]`.
pub fn log_rule(a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = gl16();
    let (la, lb) = (a.ln(), b.ln());
    let half = 0.5 * (lb - la);
    let mid = 0.5 * (lb + la);
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(x, w)| {
            let s = (mid + half * x).exp();
            (s, w * half * s)
        })
        .collect()
}

/// `∫_a^b f(s) ds` for `0 < a < b`, integrating in `u = ln s`.
pub fn integrate_log<F: FnMut(f64) -> f64>(a: f64, b: f64, mut f: F) -> f64 {
    gl16().integrate(a.ln(), b.ln(), |u| {
        let s = u.exp();
        f(s) * s
    })
}

/// Aitken Δ² extrapolation of the last three partial sums.
pub fn aitken(s0: f64, s1: f64, s2: f64) -> f64 {
    let d1 = s1 - s0;
    let d2 = s2 - s1;
    let denom = d2 - d1;
    if denom.abs() <= f64::EPSILON * s2.abs().max(1e-300) || !denom.is_finite() {
        s2
    } else {
        s2 - d2 * d2 / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let w: f64 = rule.weights.iter().sum();
        assert!((w - 2.0).abs() < 1e-14);
    }

    #[test]
    fn log_panel_power() {
        let v = integrate_log(0.5, 1.0, |s| s.powf(-0.5));
        assert!((v - (2.0 - 2.0 * 0.5f64.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn aitken_sums_geometric_series_exactly() {
        let r: f64 = 0.7;
        let s = |k: i32| (1.0 - r.powi(k)) / (1.0 - r);
        assert!((aitken(s(3), s(4), s(5)) - 1.0 / (1.0 - r)).abs() < 1e-12);
    }
}
