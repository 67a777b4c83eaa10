//! Ground states, Green kernels and the resolvent identity for perturbed operators.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::FormOperator;
use crate::error::{Error, Result};
use crate::linalg::{
    max_abs, pcg, random_vector, scale, seeded_rng, weighted_dot, CgOptions, DiscreteOperator, DENSE_LIMIT,
};
use crate::perturbation::PerturbationMeasure;

const GROUND_TOL: f64 = 1e-11;
const GROUND_MAX_ITER: usize = 2000;
const SECOND_TOL: f64 = 1e-9;
const SECOND_MAX_ITER: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralData {
    pub lambda0: f64,
    /// Normalized in `L²(m)` with `∫φ₀ dm > 0`.
    pub phi0: Vec<f64>,
    /// `‖Hφ₀ − λ₀φ₀‖_{L²(m)} / λ₀`
    pub residual: f64,
    pub lambda1: Option<f64>,
    pub iterations: usize,
}

impl SpectralData {
    pub fn is_positive(&self) -> bool {
        self.phi0.iter().all(|&v| v > 0.0)
    }
}

fn normalize(op: &DiscreteOperator, f: &mut [f64]) -> f64 {
    let n = op.l2_norm(f);
    scale(f, 1.0 / n);
    n
}

fn rayleigh(op: &DiscreteOperator, f: &[f64]) -> f64 {
    op.energy(f) / op.inner(f, f)
}

/// `‖Hf − λf‖_{L²(m)}` for `‖f‖ = 1`.
fn abs_residual(op: &DiscreteOperator, lambda: f64, f: &[f64]) -> f64 {
    let hf = op.apply(f);
    let r: Vec<f64> = hf.iter().zip(f).map(|(a, b)| a - lambda * b).collect();
    op.l2_norm(&r)
}

/// Smallest eigenvalue and its positive normalized eigenfunction by
/// inverse iteration with CG solves. Once the residual is below `1e-4·λ`,
/// the shift `σ = λ − max(2r, λ/100)` keeps `A − σm` positive definite.
pub fn ground_state(op: &DiscreteOperator) -> Result<SpectralData> {
    ground_state_with(op, false)
}

pub fn ground_state_with(op: &DiscreteOperator, want_lambda1: bool) -> Result<SpectralData> {
    let n = op.dim();
    let mut f = vec![1.0; n];
    normalize(op, &mut f);
    let mut lambda = rayleigh(op, &f);
    let mut r = abs_residual(op, lambda, &f);
    let mut shift = 0.0;
    let mut iterations = 0;
    let opts = CgOptions { rtol: 1e-12, accept_rtol: 1e-8, max_iter: Some(50 * n + 500) };
    while r > GROUND_TOL * lambda.abs() {
        iterations += 1;
        if iterations > GROUND_MAX_ITER {
            return Err(Error::ConvergenceFailure {
                what: format!("ground-state iteration (residual {:e})", r / lambda),
                lower: lambda - r,
                upper: lambda,
            });
        }
        if r < 1e-4 * lambda.abs() {
            shift = (lambda - (2.0 * r).max(1e-2 * lambda)).max(0.0);
        }
        let a = op.stiffness().minus_diag(&op.mass().iter().map(|m| shift * m).collect::<Vec<_>>());
        let rhs: Vec<f64> = f.iter().zip(op.mass()).map(|(v, m)| v * m).collect();
        let sol = pcg(&a, &rhs, None, &opts).map_err(|e| match e {
            Error::NearSingular(s) => Error::NearSingular(s),
            Error::ConvergenceFailure { what, .. } => {
                Error::NearSingular(format!("inner solve of the ground-state iteration failed: {what}"))
            }
            other => other,
        })?;
        f = sol.x;
        normalize(op, &mut f);
        lambda = rayleigh(op, &f);
        if !(lambda > 0.0) {
            return Err(Error::NearSingular(format!("Rayleigh quotient {lambda} is not positive")));
        }
        r = abs_residual(op, lambda, &f);
    }
    if weighted_dot(&f, &vec![1.0; n], op.mass()) < 0.0 {
        scale(&mut f, -1.0);
    }
    let lambda1 = if want_lambda1 && n > 1 { Some(second_eigenvalue(op, &f, lambda)?) } else { None };
    Ok(SpectralData { lambda0: lambda, phi0: f, residual: r / lambda, lambda1, iterations })
}

/// Inverse iteration deflated against `φ₀` in `L²(m)`.
fn second_eigenvalue(op: &DiscreteOperator, phi0: &[f64], lambda0: f64) -> Result<f64> {
    let mut rng = seeded_rng(0x5eed);
    let mut f = random_vector(&mut rng, op.dim());
    let project = |f: &mut Vec<f64>| {
        let c = op.inner(f, phi0);
        f.iter_mut().zip(phi0).for_each(|(a, b)| *a -= c * b);
    };
    project(&mut f);
    normalize(op, &mut f);
    let mut lambda = rayleigh(op, &f);
    for _ in 0..SECOND_MAX_ITER {
        f = op.solve(&f)?;
        project(&mut f);
        normalize(op, &mut f);
        lambda = rayleigh(op, &f);
        if abs_residual(op, lambda, &f) <= SECOND_TOL * lambda {
            break;
        }
    }
    if lambda <= lambda0 {
        return Err(Error::InternalInconsistency(format!("second eigenvalue {lambda} not above {lambda0}")));
    }
    Ok(lambda)
}

/// Green columns `A⁻¹e_y` (so that `H G(·,y) = δ_y/m_y`), solved on demand
/// and cached.
#[derive(Debug)]
pub struct GreenData {
    op: DiscreteOperator,
    cache: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl GreenData {
    pub fn new(op: &DiscreteOperator) -> Self {
        Self { op: op.clone(), cache: Mutex::new(HashMap::new()) }
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn column(&self, y: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(c) = self.cache.lock().expect("green cache").get(&y) {
            return Ok(c.clone());
        }
        let mut e = vec![0.0; self.op.dim()];
        e[y] = 1.0;
        let opts = CgOptions { rtol: 1e-13, accept_rtol: 1e-10, max_iter: None };
        let col = Arc::new(pcg(self.op.stiffness(), &e, None, &opts)?.x);
        let mut cache = self.cache.lock().expect("green cache");
        Ok(cache.entry(y).or_insert(col).clone())
    }

    /// Solves the requested columns concurrently.
    pub fn columns(&self, ys: &[usize]) -> Result<Vec<Arc<Vec<f64>>>> {
        ys.par_iter().map(|&y| self.column(y)).collect()
    }

    pub fn value(&self, x: usize, y: usize) -> Result<f64> {
        Ok(self.column(y)?[x])
    }
}

pub fn green_column(op: &DiscreteOperator, y: usize) -> Result<Vec<f64>> {
    Ok(GreenData::new(op).column(y)?.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenLowerConstant {
    pub c_g: f64,
    pub argmin: (usize, usize),
    pub pairs: usize,
    pub exhaustive: bool,
    /// `e^{−λ₀T}/(2λ₀)` for the supplied `T`.
    pub constructive: Option<f64>,
    pub constructive_below_empirical: Option<bool>,
}

/// `min G(x,y)/(φ₀(x)φ₀(y))` over all pairs (grids up to 4096 nodes) or over
/// `sample` seeded random pairs plus the diagonal.
pub fn green_lower_constant(
    green: &GreenData,
    sd: &SpectralData,
    sample: usize,
    seed: u64,
    heat_t: Option<f64>,
) -> Result<GreenLowerConstant> {
    let n = green.op.dim();
    let phi = &sd.phi0;
    let (c_g, argmin, pairs, exhaustive) = if n <= 4096 {
        let inv = dense_green(&green.op)?;
        let mut best = (f64::INFINITY, (0, 0));
        for y in 0..n {
            for x in 0..=y {
                let r = inv[(x, y)] / (phi[x] * phi[y]);
                if r < best.0 {
                    best = (r, (x, y));
                }
            }
        }
        (best.0, best.1, n * (n + 1) / 2, true)
    } else {
        let mut rng = seeded_rng(seed);
        let ys: Vec<usize> = (0..sample).map(|_| rng.random_range(0..n)).collect();
        let xs: Vec<usize> = (0..sample).map(|_| rng.random_range(0..n)).collect();
        let cols = green.columns(&ys)?;
        let mut best = (f64::INFINITY, (0, 0));
        for ((x, y), col) in xs.iter().zip(&ys).zip(&cols) {
            let r = col[*x] / (phi[*x] * phi[*y]);
            if r < best.0 {
                best = (r, (*x, *y));
            }
        }
        (best.0, best.1, sample, false)
    };
    if !(c_g > 0.0) {
        return Err(Error::InternalInconsistency(format!("Green ratio {c_g} at {argmin:?} is not positive")));
    }
    let constructive = heat_t.map(|t| (-sd.lambda0 * t).exp() / (2.0 * sd.lambda0));
    Ok(GreenLowerConstant {
        c_g,
        argmin,
        pairs,
        exhaustive,
        constructive,
        constructive_below_empirical: constructive.map(|c| c <= c_g),
    })
}

/// Dense `A⁻¹` by Cholesky.
pub fn dense_green(op: &DiscreteOperator) -> Result<DMatrix<f64>> {
    let a = op.stiffness().to_dense();
    let chol = a.cholesky().ok_or_else(|| Error::NearSingular("stiffness matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenLowerBound {
    pub holds: bool,
    pub b: f64,
    /// `min_i (φ₀^(ν) − bψ₀)_i / ψ₀_i`
    pub worst_margin: f64,
}

/// `φ₀^(ν) ≥ (C_G λ₀^(ν) Σψ₀φ₀^(ν)m)·ψ₀` nodewise.
pub fn eigenfunction_lower_bound(sd: &SpectralData, base: &SpectralData, c_g: f64, mass: &[f64]) -> EigenLowerBound {
    let b = c_g * sd.lambda0 * weighted_dot(&base.phi0, &sd.phi0, mass);
    let worst_margin = sd.phi0.iter().zip(&base.phi0).map(|(p, q)| (p - b * q) / q).fold(f64::INFINITY, f64::min);
    EigenLowerBound { holds: worst_margin >= -1e-9, b, worst_margin }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventCheck {
    pub max_rel_discrepancy: f64,
    pub probes: usize,
    pub support: usize,
}

/// Compares `H_ν⁻¹f` (direct CG) with `Kf + K(ν/m ⊙ u)`, where `u` solves
/// `(1 − K^ν)u = (Kf)|_S` on the support `S` of `ν` and `K^ν_{xy} = G(x,y)ν_y`.
pub fn resolvent_formula_check(
    form: &FormOperator,
    mu: &PerturbationMeasure,
    kappa: f64,
    probes: usize,
    seed: u64,
) -> Result<ResolventCheck> {
    if kappa >= 1.0 {
        return Err(Error::PreconditionViolation(format!("resolvent identity needs κ < 1, got {kappa}")));
    }
    let op = form.operator();
    let nu = mu.weights();
    let perturbed = DiscreteOperator::new(op.stiffness().minus_diag(nu), op.mass().to_vec());
    let support: Vec<usize> = (0..nu.len()).filter(|&i| nu[i] > 0.0).collect();
    let green = GreenData::new(op);
    let cols = green.columns(&support)?;
    let s = support.len();
    let lu = if s > 0 {
        let mut mat = DMatrix::<f64>::identity(s, s);
        for (b, col) in cols.iter().enumerate() {
            for (a, &x) in support.iter().enumerate() {
                mat[(a, b)] -= col[x] * nu[support[b]];
            }
        }
        Some(mat.lu())
    } else {
        None
    };
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let f = random_vector(&mut rng, op.dim());
        let direct = perturbed.solve(&f)?;
        let kf = op.solve(&f)?;
        let mut rhs = kf.clone();
        if let Some(lu) = &lu {
            let b = DVector::from_iterator(s, support.iter().map(|&x| kf[x]));
            let u = lu.solve(&b).ok_or_else(|| Error::NearSingular("1 − K^ν is singular".into()))?;
            for (b, col) in cols.iter().enumerate() {
                let coef = nu[support[b]] * u[b];
                rhs.iter_mut().zip(col.iter()).for_each(|(r, g)| *r += coef * g);
            }
        }
        let diff: Vec<f64> = direct.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        worst = worst.max(max_abs(&diff) / max_abs(&direct));
    }
    Ok(ResolventCheck { max_rel_discrepancy: worst, probes, support: s })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiBound {
    /// `ξ ≤ K1/(1 − κ)` nodewise.
    pub holds: bool,
    /// `K1 ≤ 1` nodewise.
    pub k1_bounded: bool,
    pub max_k1: f64,
    /// `max ξ(1 − κ)/K1`; the bound holds iff this is ≤ 1.
    pub worst_ratio: f64,
    pub worst_node: usize,
}

pub fn xi_bound_check(form: &FormOperator, kappa: f64, xi: &[f64]) -> Result<XiBound> {
    let k1 = form.operator().solve(&vec![1.0; form.dim()])?;
    let mut worst = (f64::NEG_INFINITY, 0);
    for (i, (x, k)) in xi.iter().zip(&k1).enumerate() {
        let r = x * (1.0 - kappa) / k;
        if r > worst.0 {
            worst = (r, i);
        }
    }
    let max_k1 = k1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(XiBound {
        holds: worst.0 <= 1.0 + 1e-9,
        k1_bounded: max_k1 <= 1.0,
        max_k1,
        worst_ratio: worst.0,
        worst_node: worst.1,
    })
}

/// Checks `n ≤ DENSE_LIMIT` so dense oracles may be used.
pub fn dense_capable(op: &DiscreteOperator) -> bool {
    op.dim() <= DENSE_LIMIT
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_laplacian, GridSpec};
    use crate::perturbation::{make_measure, DensitySpec};
    use std::f64::consts::PI;

    fn interval(n: usize) -> (crate::domain::GridDomain, FormOperator) {
        let g = build_grid(&GridSpec::interval(n)).unwrap();
        let f = build_laplacian(&g);
        (g, f)
    }

    #[test]
    fn baseline_ground_state() {
        let (g, form) = interval(63);
        let sd = ground_state_with(form.operator(), true).unwrap();
        assert!((sd.lambda0 - PI * PI).abs() < 1e-2);
        assert!(sd.residual <= 1e-9);
        assert!(sd.is_positive());
        for (p, c) in sd.phi0.iter().zip(g.coords()) {
            assert!((p - 2f64.sqrt() * (PI * c[0]).sin()).abs() < 1e-3);
        }
        let l1 = sd.lambda1.unwrap();
        assert!((l1 - 4.0 * PI * PI).abs() < 0.1, "{l1}");
    }

    #[test]
    fn constant_shift_covariance() {
        let (g, form) = interval(63);
        let base = ground_state(form.operator()).unwrap();
        let c = 4.0;
        let mu = make_measure(&g, &DensitySpec::Constant { c }).unwrap();
        let op = DiscreteOperator::new(form.operator().stiffness().minus_diag(mu.weights()), form.mass().to_vec());
        let sd = ground_state(&op).unwrap();
        assert!((sd.lambda0 - (base.lambda0 - c)).abs() < 1e-9 * base.lambda0);
        for (a, b) in sd.phi0.iter().zip(&base.phi0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn hardy_ground_state_matches_dense() {
        let (g, form) = interval(127);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
        let op = DiscreteOperator::new(form.operator().stiffness().minus_diag(mu.weights()), form.mass().to_vec());
        let sd = ground_state(&op).unwrap();
        let dense = op.dense_spectrum().unwrap();
        assert!((sd.lambda0 - dense.values[0]).abs() <= 1e-8 * dense.values[0]);
        let err = sd.phi0.iter().zip(&dense.modes[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8 * max_abs(&dense.modes[0]), "{err}");
    }

    #[test]
    fn green_column_is_exact_in_1d() {
        let (g, form) = interval(63);
        let y = g.nearest([0.5, 0.0]);
        let col = green_column(form.operator(), y).unwrap();
        for (v, c) in col.iter().zip(g.coords()) {
            let (x, yy) = (c[0], 0.5);
            assert!((v - x.min(yy) * (1.0 - x.max(yy))).abs() < 1e-10);
        }
    }

    #[test]
    fn green_symmetry_and_sandwich() {
        let (g, form) = interval(63);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
        let op_mu = DiscreteOperator::new(form.operator().stiffness().minus_diag(mu.weights()), form.mass().to_vec());
        let base = GreenData::new(form.operator());
        let pert = GreenData::new(&op_mu);
        let mut rng = seeded_rng(1);
        for _ in 0..20 {
            let x = rng.random_range(0..g.len());
            let y = rng.random_range(0..g.len());
            assert!((base.value(x, y).unwrap() - base.value(y, x).unwrap()).abs() < 1e-10);
            let (gb, gp) = (base.value(x, y).unwrap(), pert.value(x, y).unwrap());
            assert!(gb <= gp && gp > 0.0);
        }
    }

    #[test]
    fn green_lower_constant_baseline() {
        let (g, form) = interval(63);
        let sd = ground_state(form.operator()).unwrap();
        let green = GreenData::new(form.operator());
        let c = green_lower_constant(&green, &sd, 0, 0, None).unwrap();
        assert!(c.c_g > 0.0 && c.exhaustive);
        let mid = g.nearest([0.5, 0.0]);
        let r = green.value(mid, mid).unwrap() / (sd.phi0[mid] * sd.phi0[mid]);
        assert!((r - 0.125).abs() < 1e-3);
        let doubled = SpectralData { phi0: sd.phi0.iter().map(|v| 2.0 * v).collect(), ..sd.clone() };
        let c2 = green_lower_constant(&green, &doubled, 0, 0, None).unwrap();
        assert!((c2.c_g - c.c_g / 4.0).abs() < 1e-14 * c.c_g);
    }

    #[test]
    fn resolvent_identity_single_node_matches_rank_one_update() {
        let (g, form) = interval(31);
        let mut values = vec![0.0; g.len()];
        values[10] = 40.0;
        let mu = make_measure(&g, &DensitySpec::Table { values }).unwrap();
        let y = 10;
        let nu = mu.weights()[y];
        let op = form.operator();
        let f: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let kf = op.solve(&f).unwrap();
        let gy = green_column(op, y).unwrap();
        let u = kf[y] / (1.0 - gy[y] * nu);
        let oracle: Vec<f64> = kf.iter().zip(&gy).map(|(a, g)| a + g * nu * u).collect();
        let pert = DiscreteOperator::new(op.stiffness().minus_diag(mu.weights()), op.mass().to_vec());
        let direct = pert.solve(&f).unwrap();
        for (a, b) in oracle.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9 * max_abs(&direct));
        }
        let chk = resolvent_formula_check(&form, &mu, 0.5, 5, 3).unwrap();
        assert_eq!(chk.support, 1);
        assert!(chk.max_rel_discrepancy < 1e-9);
    }

    #[test]
    fn resolvent_identity_hardy() {
        let (g, form) = interval(63);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
        let chk = resolvent_formula_check(&form, &mu, 0.15, 10, 9).unwrap();
        assert!(chk.max_rel_discrepancy <= 1e-7, "{chk:?}");
        let zero = make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap();
        assert_eq!(resolvent_formula_check(&form, &zero, 0.0, 3, 9).unwrap().max_rel_discrepancy, 0.0);
        assert!(resolvent_formula_check(&form, &mu, 1.0, 3, 9).is_err());
    }

    #[test]
    fn xi_bound_baseline_is_tight() {
        let (g, form) = interval(63);
        let xi = form.operator().solve(&vec![1.0; g.len()]).unwrap();
        for (v, c) in xi.iter().zip(g.coords()) {
            assert!((v - c[0] * (1.0 - c[0]) / 2.0).abs() < 1e-12);
        }
        let b = xi_bound_check(&form, 0.0, &xi).unwrap();
        assert!(b.holds && b.k1_bounded);
        assert!((b.max_k1 - 0.125).abs() < 1e-3);
    }

    #[test]
    fn xi_bound_with_form_constant_fails_for_inverse_square_weight() {
        // ξ_μ behaves like ρ^a with a < 1 near the boundary while K1 ~ ρ/2,
        // so no constant multiple of K1 dominates ξ_μ and the violation
        // grows under refinement.
        let mut ratios = Vec::new();
        for n in [63, 127] {
            let (g, form) = interval(n);
            let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
            let kappa = crate::perturbation::kappa_constant(&form, &mu).unwrap().kappa;
            let op = DiscreteOperator::new(form.operator().stiffness().minus_diag(mu.weights()), form.mass().to_vec());
            let xi = op.solve(&vec![1.0; g.len()]).unwrap();
            let b = xi_bound_check(&form, kappa, &xi).unwrap();
            assert!(!b.holds);
            ratios.push(b.worst_ratio);
        }
        assert!(ratios[1] > ratios[0]);
    }
}
