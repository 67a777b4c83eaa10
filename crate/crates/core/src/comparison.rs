//! Two-sided comparison of the perturbed ground state with `ξ = H_μ⁻¹1`:
//! Doob transforms, the constant chain, the ultracontractivity profile,
//! Moser iteration and the approximation ladder for critical measures.

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{build_grid, build_laplacian, FormOperator, GridDomain, GridSpec};
use crate::error::{Error, Result};
use crate::heat;
use crate::linalg::{
    max_abs, pcg, random_positive_vector, random_vector, seeded_rng, top_generalized_eigen, weighted_dot, CgOptions,
    DiscreteOperator,
};
use crate::orlicz::{luxemburg_norm, norm_one_psi, DerivedPhi1, NFunction, NFunctionSpec};
use crate::perturbation::{approximation_sequence, make_measure, DensitySpec, PerturbedForm, CRITICAL_TOL};
use crate::quadrature::integrate_log;
use crate::spectral::{
    green_lower_constant, ground_state, ground_state_with, GreenData, GreenLowerConstant, SpectralData,
};

pub const DEFAULT_SAFETY: f64 = 1.25;
pub const DEFAULT_PROBES: usize = 50;
const XI_OPTS: CgOptions = CgOptions { rtol: 1e-13, accept_rtol: 1e-10, max_iter: None };

/// How `H_μ⁻¹` is reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// Ladder when `κ ≥ 1 − tol` or the direct solve breaks down.
    #[default]
    Auto,
    Direct,
    Ladder,
}

#[derive(Debug, Clone, Serialize)]
pub struct XiSolution {
    pub xi: Vec<f64>,
    pub route: Route,
    /// Relative difference between the two- and three-term extrapolations.
    pub extrapolation_error: Option<f64>,
}

/// `ξ = H_μ⁻¹1` by CG; asserts `ξ > 0`.
pub fn solve_xi_direct(op: &DiscreteOperator) -> Result<Vec<f64>> {
    let xi = op.solve_with(&vec![1.0; op.dim()], &XI_OPTS)?.x;
    if let Some(i) = xi.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NoSolution(format!("ξ is not positive at node {i}")));
    }
    Ok(xi)
}

/// `ξ`, falling back to the `μ_k` ladder with Richardson extrapolation in
/// `1/k` when the direct solve is near-singular.
pub fn solve_xi(pf: &PerturbedForm, k_max: usize) -> Result<XiSolution> {
    match solve_xi_direct(pf.operator()) {
        Ok(xi) => Ok(XiSolution { xi, route: Route::Direct, extrapolation_error: None }),
        Err(Error::NearSingular(_)) | Err(Error::ConvergenceFailure { .. }) => {
            let rungs = ladder_rungs(k_max);
            let ladder = approximation_sequence(pf, k_max)?;
            let xs =
                rungs.par_iter().map(|&k| solve_xi_direct(ladder[k - 1].operator())).collect::<Result<Vec<_>>>()?;
            let (xi, err) = richardson_vec(&rungs, &xs);
            Ok(XiSolution { xi, route: Route::Ladder, extrapolation_error: Some(err) })
        }
        Err(e) => Err(e),
    }
}

/// `2, 4, 8, …` up to and including `k_max`.
pub fn ladder_rungs(k_max: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut k = 2;
    while k < k_max {
        ks.push(k);
        k *= 2;
    }
    ks.push(k_max.max(2));
    ks
}

/// Polynomial extrapolation to `1/k = 0` through the last `terms` samples.
fn extrapolate(ks: &[usize], vals: &[f64], terms: usize) -> f64 {
    let n = ks.len();
    let terms = terms.min(n);
    let hs: Vec<f64> = ks[n - terms..].iter().map(|&k| 1.0 / k as f64).collect();
    let vs = &vals[n - terms..];
    (0..terms)
        .map(|i| {
            let w: f64 = (0..terms).filter(|&j| j != i).map(|j| hs[j] / (hs[j] - hs[i])).product();
            w * vs[i]
        })
        .sum()
}

/// Richardson limit in `1/k` (two terms) with the two- versus three-term
/// difference as error estimate.
pub fn richardson(ks: &[usize], vals: &[f64]) -> (f64, f64) {
    if ks.len() < 2 {
        return (vals[vals.len() - 1], f64::INFINITY);
    }
    let two = extrapolate(ks, vals, 2);
    let err = if ks.len() >= 3 { (two - extrapolate(ks, vals, 3)).abs() } else { f64::INFINITY };
    (two, err)
}

fn richardson_vec(ks: &[usize], vs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = vs[0].len();
    let mut out = vec![0.0; n];
    let mut err: f64 = 0.0;
    for i in 0..n {
        let col: Vec<f64> = vs.iter().map(|v| v[i]).collect();
        let (v, e) = richardson(ks, &col);
        out[i] = v;
        err = err.max(e);
    }
    let scale = max_abs(&out).max(f64::MIN_POSITIVE);
    (out, err / scale)
}

/// `w > 0` solving `H_ν w = Vw + F`, with the quadratic forms it induces.
#[derive(Debug, Clone)]
pub struct DoobTransform {
    pf: PerturbedForm,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
    pub f: Vec<f64>,
    /// `‖(H_ν − V)w − F‖ / ‖(H_ν − V)w‖` in `L²(m)`.
    pub residual: f64,
    /// `w ≥ C_G ψ₀ (Σψ₀Vw m + Σψ₀F m)` nodewise, when checked.
    pub lower_bound: Option<bool>,
}

impl DoobTransform {
    pub fn form(&self) -> &PerturbedForm {
        &self.pf
    }

    pub fn v_sup(&self) -> f64 {
        max_abs(&self.v)
    }

    pub fn f_sup(&self) -> f64 {
        max_abs(&self.f)
    }

    /// Discrete `∫ w² dΓ[f]`.
    pub fn weighted_gamma(&self, f: &[f64]) -> f64 {
        self.pf.base().weighted_energy(&self.w, f)
    }

    /// `Q^w[f] = ∫w²dΓ[f] + Σ f²Fw m`
    pub fn q(&self, f: &[f64]) -> f64 {
        let m = self.pf.operator().mass();
        let tail: f64 = (0..f.len()).map(|i| f[i] * f[i] * self.f[i] * self.w[i] * m[i]).sum();
        self.weighted_gamma(f) + tail
    }

    /// `Σ V f² w² m`
    pub fn potential_term(&self, f: &[f64]) -> f64 {
        let m = self.pf.operator().mass();
        (0..f.len()).map(|i| self.v[i] * (f[i] * self.w[i]).powi(2) * m[i]).sum()
    }

    /// `E_ν[wf]`
    pub fn e_nu_w(&self, f: &[f64]) -> f64 {
        let wf: Vec<f64> = self.w.iter().zip(f).map(|(a, b)| a * b).collect();
        self.pf.energy(&wf)
    }

    /// Worst `|Q^w[f] + ΣVf²w²m − E_ν[wf]| / E_ν[wf]` over random probes.
    pub fn transform_defect(&self, probes: usize, seed: u64) -> f64 {
        let mut rng = seeded_rng(seed);
        (0..probes)
            .map(|_| {
                let f = random_vector(&mut rng, self.w.len());
                let e = self.e_nu_w(&f);
                (self.q(&f) + self.potential_term(&f) - e).abs() / e
            })
            .fold(0.0, f64::max)
    }
}

/// Solves `(H_ν − V)w = F`; with `F = 0` and `V ≡ λ₀^(ν)` returns `φ₀^(ν)`.
/// `base` = `(C_G, ψ₀)` enables the nodewise lower-bound check.
pub fn solve_doob(pf: &PerturbedForm, v: &[f64], f: &[f64], base: Option<(f64, &[f64])>) -> Result<DoobTransform> {
    let n = pf.operator().dim();
    if v.len() != n || f.len() != n {
        return Err(Error::PreconditionViolation("V and F must be node functions".into()));
    }
    if v.iter().chain(f).any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::PreconditionViolation("V and F must be nonnegative and bounded".into()));
    }
    let f_zero = f.iter().all(|&x| x == 0.0);
    if f_zero && v.iter().all(|&x| x == 0.0) {
        return Err(Error::PreconditionViolation("either V or F must be nonzero".into()));
    }
    let op = pf.operator();
    let shifted = op.minus_potential(v);
    let w = if f_zero {
        let sd = ground_state(op)?;
        if v.iter().any(|&x| (x - sd.lambda0).abs() > 1e-9 * sd.lambda0) {
            return Err(Error::NoSolution("F = 0 admits a positive solution only for V ≡ λ₀".into()));
        }
        sd.phi0
    } else {
        let rhs: Vec<f64> = f.iter().zip(op.mass()).map(|(a, m)| a * m).collect();
        pcg(shifted.stiffness(), &rhs, None, &XI_OPTS)
            .map_err(|e| Error::NoSolution(format!("H_ν − V is not positive definite: {e}")))?
            .x
    };
    if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::NoSolution(format!("transform weight is not positive at node {i}")));
    }
    let hw = shifted.apply(&w);
    let diff: Vec<f64> = hw.iter().zip(f).map(|(a, b)| a - b).collect();
    let residual = op.l2_norm(&diff) / op.l2_norm(&hw).max(f64::MIN_POSITIVE);
    let lower_bound = base.map(|(c_g, psi0)| {
        let m = op.mass();
        let s: f64 = (0..n).map(|i| psi0[i] * (v[i] * w[i] + f[i]) * m[i]).sum();
        w.iter().zip(psi0).all(|(w, p)| *w >= c_g * p * s * (1.0 - 1e-9))
    });
    Ok(DoobTransform { pf: pf.clone(), w, v: v.to_vec(), f: f.to_vec(), residual, lower_bound })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChEstimate {
    pub c_h: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Largest generalized eigenvalue of `diag(m/ψ₀²) f = C_H A f`.
pub fn c_h_estimate(form: &FormOperator, base: &SpectralData) -> Result<ChEstimate> {
    let d: Vec<f64> = form.mass().iter().zip(&base.phi0).map(|(m, p)| m / (p * p)).collect();
    let top = top_generalized_eigen(form.operator().stiffness(), &d, 1e-8, 20_000)?;
    Ok(ChEstimate { c_h: top.value, residual: top.residual, iterations: top.iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsEstimate {
    /// Largest ratio `‖f²‖_{L^Φ}/E_ν[f]` found.
    pub raw: f64,
    pub safety: f64,
    /// `raw · safety`, used by every downstream constant.
    pub inflated: f64,
    /// Final ratio per start.
    pub per_start: Vec<f64>,
    /// Ratio sequence of the best start.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// Ratio at the supplied lower witness (e.g. the ground state).
    pub witness: Option<f64>,
}

fn sobolev_ratio(op: &DiscreteOperator, phi: &NFunction, f: &[f64]) -> f64 {
    let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
    luxemburg_norm(phi, op.mass(), &f2) / op.energy(f)
}

/// Multi-start fixed point `f ← normalize(H_ν⁻¹(Φ'(f²/λ) f))`, `λ = ‖f²‖_Φ`.
pub fn c_s_estimate(
    op: &DiscreteOperator,
    phi: &NFunction,
    safety: f64,
    seed: u64,
    witness: Option<&[f64]>,
) -> Result<CsEstimate> {
    const STARTS: usize = 5;
    const MAX_ITER: usize = 500;
    let mut rng = seeded_rng(seed);
    let starts: Vec<Vec<f64>> = (0..STARTS).map(|_| random_positive_vector(&mut rng, op.dim())).collect();
    let runs = starts
        .into_par_iter()
        .map(|mut f| -> Result<(f64, Vec<f64>, bool)> {
            let mut trace = vec![sobolev_ratio(op, phi, &f)];
            let mut converged = false;
            for _ in 0..MAX_ITER {
                let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
                let lam = luxemburg_norm(phi, op.mass(), &f2);
                let g: Vec<f64> = f.iter().map(|v| phi.derivative(v * v / lam) * v).collect();
                f = op.solve(&g)?;
                let nf = op.l2_norm(&f);
                f.iter_mut().for_each(|v| *v /= nf);
                let r = sobolev_ratio(op, phi, &f);
                let prev = *trace.last().expect("nonempty");
                trace.push(r);
                if (r - prev).abs() <= 1e-10 * r {
                    converged = true;
                    break;
                }
            }
            Ok((*trace.last().expect("nonempty"), trace, converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_start: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let best = runs.iter().max_by(|a, b| a.0.total_cmp(&b.0)).expect("five starts");
    let witness = witness.map(|w| sobolev_ratio(op, phi, w));
    let raw = best.0.max(witness.unwrap_or(0.0));
    Ok(CsEstimate {
        raw,
        safety,
        inflated: raw * safety,
        per_start,
        trace: best.1.clone(),
        converged: runs.iter().all(|r| r.2),
        witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[allow(non_snake_case)]
pub struct ConstantsBundle {
    pub C_G: f64,
    pub C_H: f64,
    /// Inflated estimate.
    pub C_S: f64,
    pub C_S_raw: f64,
    pub kappa: f64,
    pub lambda0: f64,
    pub lambda0_nu: f64,
    pub Cprime: f64,
    pub C_H_Cprime: f64,
    pub C_H_Cprime_lambda0: f64,
    pub C: f64,
    pub Lambda1: f64,
    pub Lambda2: f64,
    pub norm_one_psi: f64,
    pub A: f64,
}

/// The constant chain, by the displayed formulas.
#[allow(clippy::too_many_arguments)]
pub fn constants(
    base: &SpectralData,
    c_g: f64,
    dt: &DoobTransform,
    cs: &CsEstimate,
    ch: &ChEstimate,
    kappa: f64,
    lambda0_nu: f64,
    norm_one: f64,
) -> Result<ConstantsBundle> {
    let m = dt.pf.operator().mass();
    let n = m.len();
    let s: f64 = (0..n).map(|i| base.phi0[i] * (dt.w[i] * dt.v[i] + dt.f[i]) * m[i]).sum();
    let c_prime = (c_g * s).powi(-2);
    let chc = ch.c_h * c_prime;
    let chcl = chc * base.lambda0;
    let c = chc.max(chcl);
    let a = (c + 2.0 * cs.inflated) * (1.0 + 2.0 * cs.inflated * norm_one);
    let bundle = ConstantsBundle {
        C_G: c_g,
        C_H: ch.c_h,
        C_S: cs.inflated,
        C_S_raw: cs.raw,
        kappa,
        lambda0: base.lambda0,
        lambda0_nu,
        Cprime: c_prime,
        C_H_Cprime: chc,
        C_H_Cprime_lambda0: chcl,
        C: c,
        Lambda1: 1.0 + chc / 2.0,
        Lambda2: dt.f_sup().powi(2) / 2.0 + chcl / 2.0,
        norm_one_psi: norm_one,
        A: a,
    };
    let all = [c_g, ch.c_h, cs.inflated, c_prime, c, bundle.Lambda1, bundle.Lambda2, norm_one, a];
    if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InternalInconsistency(format!("constants not positive and finite: {all:?}")));
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsVerification {
    /// Largest `lhs/rhs` per inequality over the probes.
    pub s2: f64,
    pub c1: f64,
    pub iso1: f64,
    pub transform_defect: f64,
    pub probes: usize,
}

/// Random-probe check of the L² estimate, the `Q^w` bound and ISO1.
pub fn verify_constants(
    bundle: &ConstantsBundle,
    dt: &DoobTransform,
    phi1: &NFunction,
    probes: usize,
    seed: u64,
) -> Result<ConstantsVerification> {
    let m = dt.pf.operator().mass().to_vec();
    let w2m: Vec<f64> = dt.w.iter().zip(&m).map(|(w, m)| w * w * m).collect();
    let mut rng = seeded_rng(seed);
    let fs: Vec<Vec<f64>> = (0..probes).map(|_| random_vector(&mut rng, m.len())).collect();
    let mut worst = [(0.0_f64, 0usize); 3];
    for (p, f) in fs.iter().enumerate() {
        let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
        let l2 = weighted_dot(&f2, &vec![1.0; m.len()], &m);
        let wg = dt.weighted_gamma(f);
        let w2f2 = weighted_dot(&f2, &vec![1.0; m.len()], &w2m);
        let q = dt.q(f);
        let checks = [
            (l2, bundle.C * wg + bundle.C * w2f2, "∫f²dm ≤ C∫w²dΓ[f] + C∫w²f²dm"),
            (q, bundle.Lambda1 * wg + bundle.Lambda2 * w2f2, "Q^w[f] ≤ Λ₁∫w²dΓ[f] + Λ₂∫w²f²dm"),
            (
                luxemburg_norm(phi1, &w2m, &f2),
                bundle.A * (q + dt.potential_term(f)),
                "‖f²‖_{L^φ₁(w²dm)} ≤ A(Q^w[f] + ∫Vf²w²dm)",
            ),
        ];
        for (k, (lhs, rhs, name)) in checks.iter().enumerate() {
            if lhs > rhs {
                return Err(Error::ConstantsInvalid { inequality: name.to_string(), lhs: *lhs, rhs: *rhs, probe: p });
            }
            let r = lhs / rhs;
            if r > worst[k].0 {
                worst[k] = (r, p);
            }
        }
    }
    Ok(ConstantsVerification {
        s2: worst[0].0,
        c1: worst[1].0,
        iso1: worst[2].0,
        transform_defect: dt.transform_defect(probes, seed ^ 0x7f),
        probes,
    })
}

/// `γ(t)` from `t = 8A∫₀^γ (sΛ(s))⁻¹ ds` with the `φ₁`-based `Λ`, and `β = 4/γ`.
#[derive(Debug)]
pub struct UCProfile {
    a: f64,
    phi1: DerivedPhi1,
    table: OnceLock<std::result::Result<ProfileTable, Error>>,
}

impl Clone for UCProfile {
    fn clone(&self) -> Self {
        Self { a: self.a, phi1: self.phi1.clone(), table: OnceLock::new() }
    }
}

/// Cumulative `∫₀^{s_i} φ₁⁻¹(1/s) ds` on dyadic knots `s_i = 2^i`.
#[derive(Debug, Clone)]
struct ProfileTable {
    first_exp: i32,
    cumulative: Vec<f64>,
    /// `I(s) ≈ I(s₀)(s/s₀)^α` below the first knot.
    low_alpha: f64,
    high_alpha: f64,
}

const TABLE_LOW: i32 = -1000;
const TABLE_HIGH: i32 = 64;

impl UCProfile {
    pub fn new(a: f64, phi1: DerivedPhi1) -> Result<Self> {
        if !phi1.admissibility.admissible {
            return Err(Error::DivergentProfile(format!(
                "∫₀(sΛ(s))⁻¹ds does not converge (partial value {} at δ = {:e})",
                phi1.admissibility.integral, phi1.admissibility.delta
            )));
        }
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::PreconditionViolation(format!("profile constant A = {a} must be positive")));
        }
        Ok(Self { a, phi1, table: OnceLock::new() })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn phi1(&self) -> &DerivedPhi1 {
        &self.phi1
    }

    /// Closed form for power-law `φ₁ = a t^{1+ε}`.
    fn gamma_closed(&self, t: f64) -> Option<f64> {
        self.phi1.as_power().map(|(a, e)| {
            let eps = e - 1.0;
            (t / (8.0 * self.a) * a.powf(1.0 / e) * eps / e).powf(e / eps)
        })
    }

    pub fn gamma(&self, t: f64) -> Result<f64> {
        match self.gamma_closed(t) {
            Some(g) => Ok(g),
            None => self.gamma_numeric(t),
        }
    }

    pub fn beta(&self, t: f64) -> Result<f64> {
        Ok(4.0 / self.gamma(t)?)
    }

    /// `ln β(t)` without overflow in `β`.
    pub fn ln_beta(&self, t: f64) -> Result<f64> {
        match self.phi1.as_power() {
            Some((a, e)) => {
                let eps = e - 1.0;
                Ok(4f64.ln() - (e / eps) * (t / (8.0 * self.a) * a.powf(1.0 / e) * eps / e).ln())
            }
            None => Ok(4f64.ln() - self.gamma_numeric(t)?.ln()),
        }
    }

    /// Quadrature path regardless of any closed form.
    pub fn beta_numeric(&self, t: f64) -> Result<f64> {
        Ok(4.0 / self.gamma_numeric(t)?)
    }

    fn integrand(&self, s: f64) -> f64 {
        self.phi1.inverse(1.0 / s).unwrap_or(f64::NAN)
    }

    fn table(&self) -> Result<&ProfileTable> {
        self.table
            .get_or_init(|| {
                let count = (TABLE_HIGH - TABLE_LOW) as usize;
                let panels: Vec<f64> = (0..count)
                    .into_par_iter()
                    .map(|i| {
                        let lo = 2f64.powi(TABLE_LOW + i as i32);
                        integrate_log(lo, 2.0 * lo, |s| self.integrand(s))
                    })
                    .collect();
                if panels.iter().any(|p| !p.is_finite()) {
                    return Err(Error::DivergentProfile("profile integrand is not finite".into()));
                }
                let q_low = panels[0] / panels[1];
                let q_high = panels[count - 1] / panels[count - 2];
                if !(q_low < 1.0) {
                    return Err(Error::DivergentProfile(format!("panel ratio {q_low} ≥ 1 at the origin")));
                }
                let mut cumulative = Vec::with_capacity(count + 1);
                let mut acc = panels[0] * q_low / (1.0 - q_low);
                cumulative.push(acc);
                for p in &panels {
                    acc += p;
                    cumulative.push(acc);
                }
                Ok(ProfileTable {
                    first_exp: TABLE_LOW,
                    cumulative,
                    low_alpha: -q_low.log2(),
                    high_alpha: q_high.log2(),
                })
            })
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// `∫₀^γ φ₁⁻¹(1/s) ds` by the dyadic table plus one partial panel.
    pub fn profile_integral(&self, gamma: f64) -> Result<f64> {
        let tab = self.table()?;
        let s0 = 2f64.powi(tab.first_exp);
        let last = tab.cumulative.len() - 1;
        let s_last = 2f64.powi(tab.first_exp + last as i32);
        if gamma <= s0 {
            return Ok(tab.cumulative[0] * (gamma / s0).powf(tab.low_alpha));
        }
        if gamma >= s_last {
            return Ok(tab.cumulative[last] * (gamma / s_last).powf(tab.high_alpha));
        }
        let i = (gamma.log2().floor() as i32 - tab.first_exp) as usize;
        let lo = 2f64.powi(tab.first_exp + i as i32);
        Ok(tab.cumulative[i] + integrate_log(lo, gamma, |s| self.integrand(s)))
    }

    pub fn gamma_numeric(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::PreconditionViolation(format!("time must be positive, got {t}")));
        }
        let target = t / (8.0 * self.a);
        let tab = self.table()?;
        let s0 = 2f64.powi(tab.first_exp);
        let last = tab.cumulative.len() - 1;
        if target <= tab.cumulative[0] {
            return Ok(s0 * (target / tab.cumulative[0]).powf(1.0 / tab.low_alpha));
        }
        if target >= tab.cumulative[last] {
            let s_last = 2f64.powi(tab.first_exp + last as i32);
            return Ok(s_last * (target / tab.cumulative[last]).powf(1.0 / tab.high_alpha));
        }
        let i = tab.cumulative.partition_point(|&c| c <= target) - 1;
        let lo_s = 2f64.powi(tab.first_exp + i as i32);
        let (mut lo, mut hi) = (lo_s.ln(), (2.0 * lo_s).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = tab.cumulative[i] + integrate_log(lo_s, mid.exp(), |s| self.integrand(s));
            if v < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }
}

pub fn beta(profile: &UCProfile, t: f64) -> Result<f64> {
    profile.beta(t)
}

/// `ln C(ν,t) = ln β(t/2) + tλ₀^(ν)`
fn ln_c_nu(profile: &UCProfile, lambda0_nu: f64, t: f64) -> Result<f64> {
    Ok(profile.ln_beta(t / 2.0)? + t * lambda0_nu)
}

/// Golden-section minimum of a unimodal function of `ln t` on `[lo, hi]`.
fn golden_min<F: Fn(f64) -> Result<f64>>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp())?, f(d.exp())?);
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp())?;
        }
    }
    let mid = (0.5 * (a + b)).exp();
    let ends = [(lo, f(lo)?), (hi, f(hi)?), (mid, f(mid)?)];
    Ok(ends.iter().min_by(|x, y| x.1.total_cmp(&y.1)).expect("three candidates").0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeProbe {
    pub t: f64,
    pub c_nu_t: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperComparison {
    pub t_star: f64,
    pub beta_half_t: f64,
    pub c_nu_t: f64,
    pub ln_c_nu_t: f64,
    /// `min/max φ₀^(ν)/ξ^(ν)`
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub verdict: bool,
    /// `C(ν,t) ≥ max φ₀/ξ` at 20 log-spaced times in the search bracket.
    pub all_times: Vec<TimeProbe>,
}

impl UpperComparison {
    pub fn ensure(&self) -> Result<()> {
        if self.verdict && self.all_times.iter().all(|p| p.holds) {
            Ok(())
        } else {
            Err(Error::TheoremViolation(format!(
                "φ₀ ≤ C(ν,t)ξ fails: max ratio {} vs C(ν,t*) = {}",
                self.max_ratio, self.c_nu_t
            )))
        }
    }
}

pub fn upper_comparison(sd_nu: &SpectralData, xi: &[f64], profile: &UCProfile) -> Result<UpperComparison> {
    let lam = sd_nu.lambda0;
    let (lo, hi) = (1e-4 / lam, 100.0 / lam);
    let t_star = golden_min(|t| ln_c_nu(profile, lam, t), lo, hi)?;
    let ln_c = ln_c_nu(profile, lam, t_star)?;
    let ratios: Vec<f64> = sd_nu.phi0.iter().zip(xi).map(|(p, x)| p / x).collect();
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let all_times = crate::orlicz::log_grid(lo, hi, 20)
        .into_iter()
        .map(|t| {
            let l = ln_c_nu(profile, lam, t)?;
            Ok(TimeProbe { t, c_nu_t: l.exp(), holds: l >= max_ratio.ln() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UpperComparison {
        t_star,
        beta_half_t: profile.ln_beta(t_star / 2.0)?.exp(),
        c_nu_t: ln_c.exp(),
        ln_c_nu_t: ln_c,
        min_ratio,
        max_ratio,
        verdict: ln_c >= max_ratio.ln(),
        all_times,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoserStep {
    pub k: usize,
    pub j_k: f64,
    pub theta_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerComparison {
    /// Proof constant `(A·C·C(ν,t)+1)(C(ν,t)+1)`.
    pub m_nu_t: f64,
    /// Displayed constant `(AC+1)(C(ν,t)+1)`.
    pub m_display: f64,
    pub t_star: f64,
    /// `max ξ/φ₀`
    pub max_ratio: f64,
    pub verdict: bool,
    pub moser: Vec<MoserStep>,
    pub moser_bounded: bool,
    pub moser_final_gap: f64,
    pub moser_converged: bool,
}

impl LowerComparison {
    pub fn ensure(&self) -> Result<()> {
        if self.verdict {
            Ok(())
        } else {
            Err(Error::TheoremViolation(format!(
                "ξ ≤ M(ν,t)φ₀ fails: max ratio {} vs M = {}",
                self.max_ratio, self.m_nu_t
            )))
        }
    }
}

/// `Θ_k = (Σρ^{j_k}φ₀²m)^{1/j_k}` with `j_k = 2(1+ε)^k` until `j_k > 10⁴`.
pub fn moser_trace(rho: &[f64], phi0: &[f64], mass: &[f64], epsilon: f64) -> Vec<MoserStep> {
    let ln_rho: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
    let ln_w: Vec<f64> = phi0.iter().zip(mass).map(|(p, m)| (p * p * m).ln()).collect();
    let mut out = Vec::new();
    let mut k = 0;
    loop {
        let j = 2.0 * (1.0 + epsilon).powi(k as i32);
        let terms: Vec<f64> = ln_rho.iter().zip(&ln_w).map(|(r, w)| j * r + w).collect();
        let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln();
        out.push(MoserStep { k, j_k: j, theta_k: (lse / j).exp() });
        if j > 1e4 {
            break;
        }
        k += 1;
    }
    out
}

pub fn lower_comparison(
    sd_nu: &SpectralData,
    xi: &[f64],
    mass: &[f64],
    ground: &ConstantsBundle,
    upper: &UpperComparison,
    epsilon: f64,
) -> LowerComparison {
    let c_nu = upper.c_nu_t;
    let m_nu_t = (ground.A * ground.C * c_nu + 1.0) * (c_nu + 1.0);
    let m_display = (ground.A * ground.C + 1.0) * (c_nu + 1.0);
    let rho: Vec<f64> = xi.iter().zip(&sd_nu.phi0).map(|(x, p)| x / p).collect();
    let max_ratio = rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let moser = moser_trace(&rho, &sd_nu.phi0, mass, epsilon);
    let last = moser.last().expect("at least one step");
    let gap = (last.theta_k - max_ratio).abs() / max_ratio;
    LowerComparison {
        m_nu_t,
        m_display,
        t_star: upper.t_star,
        max_ratio,
        verdict: max_ratio <= m_nu_t,
        moser_bounded: moser.iter().all(|s| s.theta_k <= m_nu_t),
        moser_final_gap: gap,
        moser_converged: gap <= 0.02,
        moser,
    }
}

/// Config form of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub grid: GridSpec,
    pub measure: DensitySpec,
    pub nfunction: NFunctionSpec,
    #[serde(default)]
    pub route: Route,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_safety")]
    pub c_s_safety: f64,
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// `κ ≥ 1 − critical_tol` routes through the ladder.
    #[serde(default = "default_critical_tol")]
    pub critical_tol: f64,
}

fn default_k_max() -> usize {
    16
}
fn default_safety() -> f64 {
    DEFAULT_SAFETY
}
fn default_probes() -> usize {
    DEFAULT_PROBES
}
fn default_critical_tol() -> f64 {
    CRITICAL_TOL
}

impl ScenarioSpec {
    /// Parameter checks that need no solve.
    pub fn validate(&self) -> Result<()> {
        self.measure.validate()?;
        build_grid(&self.grid)?;
        NFunction::from_spec(&self.nfunction)?;
        if self.k_max < 2 {
            return Err(Error::PreconditionViolation(format!("k_max must be at least 2, got {}", self.k_max)));
        }
        if !(self.c_s_safety >= 1.0) {
            return Err(Error::PreconditionViolation(format!("c_s_safety must be ≥ 1, got {}", self.c_s_safety)));
        }
        if self.probes == 0 {
            return Err(Error::PreconditionViolation("probes must be positive".into()));
        }
        if !(self.critical_tol >= 0.0 && self.critical_tol < 1.0) {
            return Err(Error::PreconditionViolation("critical_tol must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything about a scenario that does not depend on the ladder rung.
#[derive(Debug)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub grid: GridDomain,
    pub base: Arc<FormOperator>,
    pub form: PerturbedForm,
    pub phi: NFunction,
    pub phi1: DerivedPhi1,
    pub phi1_fn: NFunction,
    pub norm_one_psi: f64,
    pub base_spectral: SpectralData,
    pub base_green: GreenData,
    pub green_lower: GreenLowerConstant,
    pub intrinsic_time: f64,
    pub c_h: ChEstimate,
}

impl Scenario {
    pub fn build(spec: &ScenarioSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let grid = build_grid(&spec.grid)?;
        let base = Arc::new(build_laplacian(&grid));
        let mu = make_measure(&grid, &spec.measure)?;
        let form = PerturbedForm::certified(base.clone(), mu)?;
        if let Some(k) = form.kappa() {
            if k > 1.0 + CRITICAL_TOL {
                return Err(Error::SupercriticalMeasure { kappa: k });
            }
        }
        let phi = NFunction::from_spec(&spec.nfunction)?;
        let phi1 = DerivedPhi1::new(&phi)?;
        let phi1_fn = phi1.as_nfunction()?;
        let norm_one = norm_one_psi(phi1.complementary(), base.mass())?;
        let base_spectral = ground_state_with(base.operator(), true)?;
        let base_green = GreenData::new(base.operator());
        let intrinsic_time = heat::intrinsic_lower_time(base.operator(), &base_spectral)?;
        let green_lower = green_lower_constant(&base_green, &base_spectral, 20_000, seed, Some(intrinsic_time))?;
        let c_h = c_h_estimate(&base, &base_spectral)?;
        Ok(Self {
            spec: spec.clone(),
            seed,
            grid,
            base,
            form,
            phi,
            phi1,
            phi1_fn,
            norm_one_psi: norm_one,
            base_spectral,
            base_green,
            green_lower,
            intrinsic_time,
            c_h,
        })
    }

    pub fn kappa(&self) -> f64 {
        self.form.kappa().unwrap_or(0.0)
    }

    /// The route actually taken.
    pub fn route(&self) -> Route {
        match self.spec.route {
            Route::Auto if self.kappa() >= 1.0 - self.spec.critical_tol => Route::Ladder,
            Route::Auto => Route::Direct,
            r => r,
        }
    }
}

/// All comparison data for one subcritical `ν`.
#[derive(Debug, Clone)]
pub struct NuAnalysis {
    pub spectral: SpectralData,
    pub xi: Vec<f64>,
    pub doob_xi: DoobTransform,
    pub doob_ground: DoobTransform,
    pub c_s: CsEstimate,
    pub constants: ConstantsBundle,
    pub constants_ground: ConstantsBundle,
    pub verification: ConstantsVerification,
    pub verification_ground: ConstantsVerification,
    pub profile: UCProfile,
    pub upper: UpperComparison,
    pub lower: LowerComparison,
}

impl NuAnalysis {
    /// `Γ = max(C(ν,t*), M(ν,t*))`
    pub fn gamma(&self) -> f64 {
        self.upper.c_nu_t.max(self.lower.m_nu_t)
    }
}

pub fn analyze(sc: &Scenario, nu: &PerturbedForm) -> Result<NuAnalysis> {
    let op = nu.operator();
    let n = op.dim();
    let spectral = ground_state(op)?;
    let xi = solve_xi_direct(op)?;
    let base = (sc.green_lower.c_g, sc.base_spectral.phi0.as_slice());
    let doob_xi = solve_doob(nu, &vec![0.0; n], &vec![1.0; n], Some(base))?;
    let doob_ground = solve_doob(nu, &vec![spectral.lambda0; n], &vec![0.0; n], Some(base))?;
    let c_s = c_s_estimate(op, &sc.phi, sc.spec.c_s_safety, sc.seed, Some(&spectral.phi0))?;
    let kappa = nu.kappa().unwrap_or(0.0);
    let bundle = |dt: &DoobTransform| {
        constants(&sc.base_spectral, sc.green_lower.c_g, dt, &c_s, &sc.c_h, kappa, spectral.lambda0, sc.norm_one_psi)
    };
    let constants_xi = bundle(&doob_xi)?;
    let constants_ground = bundle(&doob_ground)?;
    let verification = verify_constants(&constants_xi, &doob_xi, &sc.phi1_fn, sc.spec.probes, sc.seed)?;
    let verification_ground =
        verify_constants(&constants_ground, &doob_ground, &sc.phi1_fn, sc.spec.probes, sc.seed ^ 0x9e37)?;
    let profile = UCProfile::new(constants_xi.A, sc.phi1.clone())?;
    let upper = upper_comparison(&spectral, &xi, &profile)?;
    let eps =
        sc.phi1.growth.ok_or_else(|| Error::PreconditionViolation("φ₁ has no growth certificate".into()))?.epsilon;
    let lower = lower_comparison(&spectral, &xi, op.mass(), &constants_ground, &upper, eps);
    Ok(NuAnalysis {
        spectral,
        xi,
        doob_xi,
        doob_ground,
        c_s,
        constants: constants_xi,
        constants_ground,
        verification,
        verification_ground,
        profile,
        upper,
        lower,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileReport {
    pub t_star: f64,
    pub beta_half_t: f64,
    #[serde(rename = "C_nu_t")]
    pub c_nu_t: f64,
    #[serde(rename = "M_nu_t")]
    pub m_nu_t: f64,
    #[serde(rename = "M_display")]
    pub m_display: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratios {
    pub min: f64,
    pub max: f64,
    /// `max ξ/φ₀`
    pub max_inverse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    pub upper: bool,
    pub lower: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderRow {
    pub k: usize,
    pub kappa_k: f64,
    pub lambda0: f64,
    pub max_ratio: f64,
    pub max_inverse_ratio: f64,
    #[serde(rename = "C_nu_t")]
    pub c_nu_t: f64,
    #[serde(rename = "M_nu_t")]
    pub m_nu_t: f64,
    pub gamma: f64,
    pub upper: bool,
    pub lower: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrapolated {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LadderLimit {
    pub lambda0: Extrapolated,
    pub gamma: Extrapolated,
    pub max_ratio: Extrapolated,
    pub max_inverse_ratio: Extrapolated,
    pub xi_sup: Extrapolated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub route: Route,
    pub constants: ConstantsBundle,
    pub constants_ground: ConstantsBundle,
    pub verification: ConstantsVerification,
    pub verification_ground: ConstantsVerification,
    pub profile: ProfileReport,
    pub ratios: Ratios,
    pub verdicts: Verdicts,
    pub moser: Vec<MoserStep>,
    pub moser_final_gap: f64,
    pub moser_bounded: bool,
    pub c_s_converged: bool,
    pub c_s_per_start: Vec<f64>,
    pub theorem_holds_all_t: bool,
    /// Richardson limits when the ladder is used (`Γ_k → Γ`).
    pub ladder: Vec<LadderRow>,
    pub ladder_limit: Option<LadderLimit>,
}

fn ladder_row(k: usize, nu: &PerturbedForm, a: &NuAnalysis) -> LadderRow {
    LadderRow {
        k,
        kappa_k: nu.kappa().unwrap_or(0.0),
        lambda0: a.spectral.lambda0,
        max_ratio: a.upper.max_ratio,
        max_inverse_ratio: a.lower.max_ratio,
        c_nu_t: a.upper.c_nu_t,
        m_nu_t: a.lower.m_nu_t,
        gamma: a.gamma(),
        upper: a.upper.verdict,
        lower: a.lower.verdict,
    }
}

fn report_from(name: &str, route: Route, a: &NuAnalysis) -> ComparisonReport {
    ComparisonReport {
        scenario: name.to_string(),
        route,
        constants: a.constants.clone(),
        constants_ground: a.constants_ground.clone(),
        verification: a.verification.clone(),
        verification_ground: a.verification_ground.clone(),
        profile: ProfileReport {
            t_star: a.upper.t_star,
            beta_half_t: a.upper.beta_half_t,
            c_nu_t: a.upper.c_nu_t,
            m_nu_t: a.lower.m_nu_t,
            m_display: a.lower.m_display,
        },
        ratios: Ratios { min: a.upper.min_ratio, max: a.upper.max_ratio, max_inverse: a.lower.max_ratio },
        verdicts: Verdicts { upper: a.upper.verdict, lower: a.lower.verdict },
        moser: a.lower.moser.clone(),
        moser_final_gap: a.lower.moser_final_gap,
        moser_bounded: a.lower.moser_bounded,
        c_s_converged: a.c_s.converged,
        c_s_per_start: a.c_s.per_start.clone(),
        theorem_holds_all_t: a.upper.all_times.iter().all(|p| p.holds),
        ladder: Vec::new(),
        ladder_limit: None,
    }
}

/// Full two-sided comparison for a scenario; critical measures go through
/// the ladder and report Richardson limits of `λ₀^(k)`, the ratios and `Γ_k`.
pub fn sharp_comparison(sc: &Scenario, name: &str) -> Result<(ComparisonReport, NuAnalysis)> {
    let route = sc.route();
    if route == Route::Direct {
        match analyze(sc, &sc.form) {
            Ok(a) => return Ok((report_from(name, Route::Direct, &a), a)),
            Err(Error::NearSingular(_)) if sc.spec.route == Route::Auto => {}
            Err(e) => return Err(e),
        }
    }
    let ks = ladder_rungs(sc.spec.k_max);
    let ladder = approximation_sequence(&sc.form, sc.spec.k_max)?;
    let analyses = ks.par_iter().map(|&k| analyze(sc, &ladder[k - 1])).collect::<Result<Vec<_>>>()?;
    let rows: Vec<LadderRow> = ks.iter().zip(&analyses).map(|(&k, a)| ladder_row(k, &ladder[k - 1], a)).collect();
    let ex = |f: &dyn Fn(&LadderRow) -> f64| {
        let vals: Vec<f64> = rows.iter().map(f).collect();
        let (value, error) = richardson(&ks, &vals);
        Extrapolated { value, error }
    };
    let xi_sups: Vec<f64> = analyses.iter().map(|a| max_abs(&a.xi)).collect();
    let (xv, xe) = richardson(&ks, &xi_sups);
    let limit = LadderLimit {
        lambda0: ex(&|r| r.lambda0),
        gamma: ex(&|r| r.gamma),
        max_ratio: ex(&|r| r.max_ratio),
        max_inverse_ratio: ex(&|r| r.max_inverse_ratio),
        xi_sup: Extrapolated { value: xv, error: xe },
    };
    let last = analyses.last().expect("at least one rung");
    let mut report = report_from(name, Route::Ladder, last);
    report.verdicts = Verdicts {
        upper: rows.iter().all(|r| r.upper) && limit.max_ratio.value <= limit.gamma.value,
        lower: rows.iter().all(|r| r.lower) && limit.max_inverse_ratio.value <= limit.gamma.value,
    };
    report.ladder = rows;
    report.ladder_limit = Some(limit);
    Ok((report, last.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GridSpec;
    use crate::perturbation::PerturbationMeasure;
    use std::f64::consts::PI;

    fn zero_form(n: usize) -> (GridDomain, PerturbedForm) {
        let g = build_grid(&GridSpec::interval(n)).unwrap();
        let base = Arc::new(build_laplacian(&g));
        let mu: PerturbationMeasure = make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap();
        (g, PerturbedForm::new(base, mu))
    }

    #[test]
    fn xi_is_exact_on_interval() {
        let (g, pf) = zero_form(63);
        let sol = solve_xi(&pf, 16).unwrap();
        assert_eq!(sol.route, Route::Direct);
        for (v, c) in sol.xi.iter().zip(g.coords()) {
            assert!((v - c[0] * (1.0 - c[0]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn richardson_recovers_affine_and_quadratic_limits() {
        let ks = [2, 4, 8, 16];
        let lin: Vec<f64> = ks.iter().map(|&k| 3.0 + 2.0 / k as f64).collect();
        let (v, _) = richardson(&ks, &lin);
        assert!((v - 3.0).abs() < 1e-13);
        let quad: Vec<f64> = ks.iter().map(|&k| 1.0 + 1.0 / k as f64 + 4.0 / (k * k) as f64).collect();
        assert!((extrapolate(&ks, &quad, 3) - 1.0).abs() < 1e-12);
        assert_eq!(ladder_rungs(16), vec![2, 4, 8, 16]);
        assert_eq!(ladder_rungs(10), vec![2, 4, 8, 10]);
    }

    #[test]
    fn doob_special_cases() {
        let (_, pf) = zero_form(31);
        let n = 31;
        let xi = solve_xi_direct(pf.operator()).unwrap();
        let dt = solve_doob(&pf, &vec![0.0; n], &vec![1.0; n], None).unwrap();
        for (a, b) in dt.w.iter().zip(&xi) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(dt.transform_defect(50, 1) < 1e-8);
        let sd = ground_state(pf.operator()).unwrap();
        let dg = solve_doob(&pf, &vec![sd.lambda0; n], &vec![0.0; n], None).unwrap();
        assert_eq!(dg.w, sd.phi0);
        assert!(dg.transform_defect(50, 2) < 1e-8);
        assert!(solve_doob(&pf, &vec![0.0; n], &vec![0.0; n], None).is_err());
        assert!(solve_doob(&pf, &vec![1.0; n], &vec![0.0; n], None).is_err());
    }

    #[test]
    fn c_h_uses_normalized_ground_state() {
        let (_, pf) = zero_form(31);
        let sd = ground_state(pf.operator()).unwrap();
        let ch = c_h_estimate(pf.base(), &sd).unwrap();
        let doubled = SpectralData { phi0: sd.phi0.iter().map(|v| 2.0 * v).collect(), ..sd.clone() };
        let ch2 = c_h_estimate(pf.base(), &doubled).unwrap();
        assert!((ch2.c_h - ch.c_h / 4.0).abs() < 1e-7 * ch.c_h);
    }

    #[test]
    fn c_s_homogeneity_and_witness() {
        let (_, pf) = zero_form(63);
        let phi = NFunction::power(3.0).unwrap();
        let sd = ground_state(pf.operator()).unwrap();
        let cs = c_s_estimate(pf.operator(), &phi, 1.25, 5, Some(&sd.phi0)).unwrap();
        assert!(cs.converged);
        assert!(cs.raw >= cs.witness.unwrap());
        let spread = cs.per_start.iter().fold(0.0_f64, |m, v| m.max((v - cs.raw).abs() / cs.raw));
        assert!(spread < 1e-4, "{:?}", cs.per_start);
        let scaled =
            DiscreteOperator::new(pf.operator().stiffness().minus_diag(&vec![0.0; 63]), pf.operator().mass().to_vec());
        let doubled_a = DiscreteOperator::new(
            crate::linalg::SymSparse::from_couplings(
                scaled.stiffness().diag().iter().map(|d| 2.0 * d).collect(),
                &(0..62).map(|i| (i, i + 1, 2.0 * -64.0)).collect::<Vec<_>>(),
            ),
            scaled.mass().to_vec(),
        );
        let cs2 = c_s_estimate(&doubled_a, &phi, 1.25, 5, None).unwrap();
        assert!((cs2.raw - cs.raw / 2.0).abs() < 1e-6 * cs.raw);
    }

    #[test]
    fn beta_closed_form_matches_quadrature() {
        let phi1 = DerivedPhi1::new(&NFunction::power(3.0).unwrap()).unwrap();
        let prof = UCProfile::new(17.0, phi1).unwrap();
        for t in crate::orlicz::log_grid(1e-3, 1e2, 20) {
            let (c, q) = (prof.beta(t).unwrap(), prof.beta_numeric(t).unwrap());
            assert!((c - q).abs() <= 1e-6 * c, "t={t}: {c} vs {q}");
            assert!(prof.beta(2.0 * t).unwrap() < c);
        }
        let b1 = prof.beta(1.0).unwrap();
        let b2 = prof.beta(2.0).unwrap();
        assert!((b1 / b2 - 2f64.powf(2.5)).abs() < 1e-9 * b1 / b2);
        let prof2 = UCProfile::new(34.0, prof.phi1().clone()).unwrap();
        assert!((prof2.gamma(2.0).unwrap() - prof.gamma(1.0).unwrap()).abs() < 1e-12 * prof.gamma(1.0).unwrap());
    }

    #[test]
    fn divergent_profile_is_rejected() {
        let phi = NFunction::from_fn("t log(1+t)", |t| t * t.ln_1p()).unwrap();
        let phi1 = DerivedPhi1::new(&phi).unwrap();
        if !phi1.admissibility.admissible {
            assert!(matches!(UCProfile::new(1.0, phi1), Err(Error::DivergentProfile(_))));
        }
    }

    #[test]
    fn moser_first_term_is_l2_norm_of_xi() {
        let (_, pf) = zero_form(63);
        let sd = ground_state(pf.operator()).unwrap();
        let xi = solve_xi_direct(pf.operator()).unwrap();
        let rho: Vec<f64> = xi.iter().zip(&sd.phi0).map(|(x, p)| x / p).collect();
        let trace = moser_trace(&rho, &sd.phi0, pf.operator().mass(), 2.0 / 3.0);
        let l2 = pf.operator().l2_norm(&xi);
        assert!((trace[0].theta_k - l2).abs() < 1e-13 * l2);
        assert!(trace.last().unwrap().j_k > 1e4);
        let max = rho.iter().copied().fold(0.0, f64::max);
        assert!((trace.last().unwrap().theta_k - max).abs() < 0.02 * max);
        assert!((max - 1.0 / (2.0 * 2f64.sqrt() * PI)).abs() < 2e-3);
    }

    #[test]
    fn baseline_sharp_comparison() {
        let spec = ScenarioSpec {
            grid: GridSpec::interval(63),
            measure: DensitySpec::Constant { c: 0.0 },
            nfunction: NFunctionSpec::Power { p: 3.0, coef: None },
            route: Route::Auto,
            k_max: 16,
            c_s_safety: 1.25,
            probes: 50,
            critical_tol: CRITICAL_TOL,
        };
        let sc = Scenario::build(&spec, 42).unwrap();
        let (rep, a) = sharp_comparison(&sc, "baseline").unwrap();
        assert!(rep.verdicts.upper && rep.verdicts.lower);
        assert!((rep.ratios.max - 8.0 * 2f64.sqrt()).abs() < 2e-2);
        assert!(rep.constants.C >= rep.constants.C_H_Cprime);
        assert!(
            (rep.constants.C - rep.constants.C_H_Cprime * sc.base_spectral.lambda0).abs() < 1e-12 * rep.constants.C
        );
        a.upper.ensure().unwrap();
        a.lower.ensure().unwrap();
        assert!(a.doob_xi.lower_bound.unwrap() && a.doob_ground.lower_bound.unwrap());
    }
}
