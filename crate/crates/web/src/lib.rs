//! WebAssembly bindings for the demo page in `www/`. Every export returns a
//! JSON string; the plain functions underneath are usable natively.

use std::sync::Arc;

use gslab_core::comparison::solve_xi;
use gslab_core::domain::{build_grid, build_laplacian, GridSpec};
use gslab_core::heat::{heat_kernel, large_time_asymptotics};
use gslab_core::perturbation::{kappa_constant, make_measure, DensitySpec, PerturbedForm};
use gslab_core::spectral::ground_state;
use gslab_core::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Dense heat kernels beyond this size are too slow for an interactive page.
pub const MAX_NODES: usize = 511;

#[derive(Debug, Clone, Serialize)]
pub struct Profile {
    pub n: usize,
    pub c: f64,
    pub kappa: f64,
    pub lambda0: f64,
    pub x: Vec<f64>,
    pub phi0: Vec<f64>,
    pub xi: Vec<f64>,
    /// `φ₀/ξ` at each node.
    pub ratio: Vec<f64>,
    pub ratio_min: f64,
    pub ratio_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KappaPoint {
    pub n: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Decay {
    pub lambda0: f64,
    pub gap: f64,
    pub decay_rate: f64,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
}

fn form(n: usize, c: f64) -> Result<PerturbedForm> {
    if !(1..=MAX_NODES).contains(&n) {
        return Err(Error::PreconditionViolation(format!("n must lie in 1..={MAX_NODES}, got {n}")));
    }
    let grid = build_grid(&GridSpec::interval(n))?;
    let base = Arc::new(build_laplacian(&grid));
    let mu = make_measure(&grid, &DensitySpec::InverseSquareBoundary { c })?;
    PerturbedForm::certified(base, mu)
}

/// Ground state, `ξ = H⁻¹1` and their ratio for `H − c/ρ²` on `[0, 1]`.
pub fn profile(n: usize, c: f64) -> Result<Profile> {
    let pf = form(n, c)?;
    let kappa = pf.kappa().unwrap_or(0.0);
    if kappa >= 1.0 {
        return Err(Error::SupercriticalMeasure { kappa });
    }
    let sd = ground_state(pf.operator())?;
    let xi = solve_xi(&pf, 16)?.xi;
    let grid = build_grid(&GridSpec::interval(n))?;
    let ratio: Vec<f64> = sd.phi0.iter().zip(&xi).map(|(p, x)| p / x).collect();
    Ok(Profile {
        n,
        c,
        kappa,
        lambda0: sd.lambda0,
        x: grid.coords().iter().map(|p| p[0]).collect(),
        ratio_min: ratio.iter().copied().fold(f64::INFINITY, f64::min),
        ratio_max: ratio.iter().copied().fold(0.0, f64::max),
        phi0: sd.phi0,
        xi,
        ratio,
    })
}

/// `κ` of `c/ρ²` for `n = 15, 31, 63, …` up to `max_n`.
pub fn kappa_sweep(c: f64, max_n: usize) -> Result<Vec<KappaPoint>> {
    let mut out = Vec::new();
    let mut n = 15;
    while n <= max_n.min(MAX_NODES) {
        let grid = build_grid(&GridSpec::interval(n))?;
        let base = build_laplacian(&grid);
        let mu = make_measure(&grid, &DensitySpec::InverseSquareBoundary { c })?;
        out.push(KappaPoint { n, kappa: kappa_constant(&base, &mu)?.kappa });
        n = 2 * n + 1;
    }
    Ok(out)
}

/// `R(t) = max_x Σ_{n≥1} e^{−(λ_n−λ₀)t}(φ_n(x)/φ₀(x))²` at `t = k/λ₀`, `k = 1..=20`.
pub fn decay(n: usize, c: f64) -> Result<Decay> {
    let pf = form(n, c)?;
    let xi = solve_xi(&pf, 16)?.xi;
    let hk = heat_kernel(pf.operator())?;
    let l0 = hk.spectrum().map(|s| s.values[0]).ok_or_else(|| Error::PreconditionViolation("dense path".into()))?;
    let times: Vec<f64> = (1..=20).map(|k| k as f64 / l0).collect();
    let table = large_time_asymptotics(&hk, &xi, &times)?;
    Ok(Decay {
        lambda0: table.lambda0,
        gap: table.lambda1 - table.lambda0,
        decay_rate: table.decay_rate,
        t: table.rows.iter().map(|r| r.t).collect(),
        r: table.rows.iter().map(|r| r.r).collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = groundStateProfile)]
pub fn ground_state_profile(n: usize, c: f64) -> std::result::Result<String, JsError> {
    to_js(profile(n, c))
}

#[wasm_bindgen(js_name = hardyKappaSweep)]
pub fn hardy_kappa_sweep(c: f64, max_n: usize) -> std::result::Result<String, JsError> {
    to_js(kappa_sweep(c, max_n))
}

#[wasm_bindgen(js_name = heatDecay)]
pub fn heat_decay(n: usize, c: f64) -> std::result::Result<String, JsError> {
    to_js(decay(n, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, SQRT_2};

    #[test]
    fn baseline_profile() {
        let p = profile(127, 0.0).unwrap();
        assert!((p.lambda0 - PI * PI).abs() < 1e-2);
        assert!((p.ratio_max - 8.0 * SQRT_2).abs() < 1e-6);
        assert!((p.ratio_min - 2.0 * SQRT_2 * PI).abs() / (2.0 * SQRT_2 * PI) < 0.02);
        assert_eq!(p.kappa, 0.0);
    }

    #[test]
    fn sweep_increases() {
        let s = kappa_sweep(1.0 / 16.0, 127).unwrap();
        assert_eq!(s.iter().map(|p| p.n).collect::<Vec<_>>(), [15, 31, 63, 127]);
        assert!(s.windows(2).all(|w| w[1].kappa > w[0].kappa && w[1].kappa < 0.25));
    }

    #[test]
    fn decay_matches_gap() {
        let d = decay(63, 0.0).unwrap();
        assert!((d.decay_rate - d.gap).abs() / d.gap < 0.05);
        assert!(d.r.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_oversized_and_supercritical() {
        assert!(profile(MAX_NODES + 2, 0.0).is_err());
        assert!(profile(63, 2.0).is_err());
    }
}
