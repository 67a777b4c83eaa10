//! Perturbation measures, the perturbed forms `E_μ = E − ∫f²dμ`, Hardy and
//! supersolution certificates, and the approximation ladder `μ_k = (1 − 1/k)μ`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiscreteMeasure, FormOperator, GridDomain};
use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, top_generalized_eigen, DiscreteOperator};
use crate::spectral::{ground_state, SpectralData};

/// Tolerance for admitting a critical measure (`κ ≤ 1 + tol`).
pub const CRITICAL_TOL: f64 = 1e-6;
pub const KAPPA_TOL: f64 = 1e-8;
const KAPPA_MAX_ITER: usize = 20_000;

/// Config form of a perturbation density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Constant {
        c: f64,
    },
    /// `c·ρ(x)⁻²`
    InverseSquareBoundary {
        c: f64,
    },
    /// `c·|x − origin|⁻²`; the origin defaults to the lower corner of the box.
    InverseSquareOrigin {
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        origin: Option<Vec<f64>>,
    },
    /// One density value per interior node.
    Table {
        values: Vec<f64>,
    },
}

impl DensitySpec {
    /// Checks the parameters without touching a grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |c: f64| !(c >= 0.0) || !c.is_finite();
        match self {
            Self::Constant { c } | Self::InverseSquareBoundary { c } | Self::InverseSquareOrigin { c, .. }
                if bad(*c) =>
            {
                Err(Error::InvalidDensity { node: 0, value: *c })
            }
            Self::Table { values } => match values.iter().position(|v| bad(*v)) {
                Some(node) => Err(Error::InvalidDensity { node, value: values[node] }),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> MeasureTag {
        match self {
            Self::Constant { .. } | Self::Table { .. } => MeasureTag::BoundedPotential,
            Self::InverseSquareBoundary { .. } => MeasureTag::BoundaryDistance,
            Self::InverseSquareOrigin { .. } => MeasureTag::HardyInverseSquare,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureTag {
    BoundedPotential,
    HardyInverseSquare,
    BoundaryDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationMeasure {
    pub measure: DiscreteMeasure,
    pub tag: MeasureTag,
    pub spec: DensitySpec,
}

impl PerturbationMeasure {
    pub fn weights(&self) -> &[f64] {
        self.measure.weights()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { measure: self.measure.scaled(c), tag: self.tag, spec: self.spec.clone() }
    }
}

/// `μ_i = density(x_i)·h^d`
pub fn make_measure(grid: &GridDomain, spec: &DensitySpec) -> Result<PerturbationMeasure> {
    spec.validate()?;
    let vol = grid.h().powi(grid.dim() as i32);
    let density: Vec<f64> = match spec {
        DensitySpec::Constant { c } => vec![*c; grid.len()],
        DensitySpec::InverseSquareBoundary { c } => grid.rho().iter().map(|r| c / (r * r)).collect(),
        DensitySpec::InverseSquareOrigin { c, origin } => {
            let o = match origin {
                Some(o) if o.len() == grid.dim() => [o[0], o.get(1).copied().unwrap_or(0.0)],
                Some(o) => {
                    return Err(Error::PreconditionViolation(format!(
                        "origin has {} coordinates, grid has dimension {}",
                        o.len(),
                        grid.dim()
                    )))
                }
                None => [grid.extents()[0][0], grid.extents().get(1).map_or(0.0, |e| e[0])],
            };
            grid.coords()
                .iter()
                .map(|x| {
                    let r2 = (x[0] - o[0]).powi(2) + (x[1] - o[1]).powi(2);
                    if *c == 0.0 {
                        0.0
                    } else {
                        c / r2
                    }
                })
                .collect()
        }
        DensitySpec::Table { values } => {
            if values.len() != grid.len() {
                return Err(Error::PreconditionViolation(format!(
                    "density table has {} values for {} nodes",
                    values.len(),
                    grid.len()
                )));
            }
            values.clone()
        }
    };
    let weights: Vec<f64> = density.iter().map(|d| d * vol).collect();
    Ok(PerturbationMeasure { measure: DiscreteMeasure::new(weights)?, tag: spec.tag(), spec: spec.clone() })
}

/// `κ` with `∫f²dμ ≤ κ E[f]`, attained by `extremal`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardyCertificate {
    pub kappa: f64,
    pub extremal: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Largest generalized eigenvalue of `diag(μ) f = κ A f`.
pub fn kappa_constant(form: &FormOperator, mu: &PerturbationMeasure) -> Result<HardyCertificate> {
    if mu.measure.is_zero() {
        return Err(Error::PreconditionViolation("κ needs a nonzero measure".into()));
    }
    let top = top_generalized_eigen(form.operator().stiffness(), mu.weights(), KAPPA_TOL, KAPPA_MAX_ITER)?;
    Ok(HardyCertificate { kappa: top.value, extremal: top.vector, residual: top.residual, iterations: top.iterations })
}

/// `H_μ = H − μ/m` on top of a shared base form.
#[derive(Debug, Clone)]
pub struct PerturbedForm {
    base: Arc<FormOperator>,
    mu: PerturbationMeasure,
    op: DiscreteOperator,
    certificate: Option<HardyCertificate>,
}

impl PerturbedForm {
    pub fn new(base: Arc<FormOperator>, mu: PerturbationMeasure) -> Self {
        let op = DiscreteOperator::new(base.operator().stiffness().minus_diag(mu.weights()), base.mass().to_vec());
        Self { base, mu, op, certificate: None }
    }

    /// Builds the form and attaches its κ-certificate (none when `μ = 0`).
    pub fn certified(base: Arc<FormOperator>, mu: PerturbationMeasure) -> Result<Self> {
        let cert = if mu.measure.is_zero() { None } else { Some(kappa_constant(&base, &mu)?) };
        let mut pf = Self::new(base, mu);
        pf.certificate = cert;
        Ok(pf)
    }

    pub fn with_certificate(mut self, cert: HardyCertificate) -> Self {
        self.certificate = Some(cert);
        self
    }

    pub fn base(&self) -> &Arc<FormOperator> {
        &self.base
    }

    pub fn measure(&self) -> &PerturbationMeasure {
        &self.mu
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn certificate(&self) -> Option<&HardyCertificate> {
        self.certificate.as_ref()
    }

    /// `κ`, with `0` for the unperturbed form.
    pub fn kappa(&self) -> Option<f64> {
        if self.mu.measure.is_zero() {
            Some(0.0)
        } else {
            self.certificate.as_ref().map(|c| c.kappa)
        }
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.op.apply(f)
    }

    /// `E_μ[f] = E[f] − Σ f_i² μ_i`
    pub fn energy(&self, f: &[f64]) -> f64 {
        self.base.energy(f) - self.mu.weights().iter().zip(f).map(|(w, v)| w * v * v).sum::<f64>()
    }

    /// The form with measure `c·μ`; the certificate scales linearly.
    pub fn scaled(&self, c: f64) -> Self {
        let mut pf = Self::new(self.base.clone(), self.mu.scaled(c));
        pf.certificate = self.certificate.as_ref().map(|h| HardyCertificate { kappa: c * h.kappa, ..h.clone() });
        pf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupersolutionCertificate {
    pub candidate: Vec<f64>,
    /// `(A − diag μ) s`, the weak residual against the coordinate basis.
    pub residual: Vec<f64>,
    pub verdict: bool,
    pub min_residual: f64,
    /// `s ≥ C_G ψ₀ Σψ₀ s μ` when spectral data was supplied.
    pub lower_bound: Option<bool>,
}

/// Tests `E(s, f) − ∫sf dμ ≥ 0` on the nonnegative cone; optionally
/// `s ≥ C_G·ψ₀·Σψ₀ s μ` given `(C_G, ψ₀)` of the base form.
pub fn check_supersolution(
    pf: &PerturbedForm,
    s: &[f64],
    base: Option<(f64, &[f64])>,
) -> Result<SupersolutionCertificate> {
    if let Some(i) = s.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::PreconditionViolation(format!("supersolution candidate must be positive (node {i})")));
    }
    let residual = pf.operator().stiffness().apply(s);
    let scale = max_abs(&residual);
    let min_residual = residual.iter().copied().fold(f64::INFINITY, f64::min);
    let verdict = min_residual >= -1e-10 * scale;
    let lower_bound = base.map(|(c_g, psi0)| {
        let mass: f64 = psi0.iter().zip(s).zip(pf.measure().weights()).map(|((p, s), w)| p * s * w).sum();
        s.iter().zip(psi0).all(|(s, p)| *s >= c_g * p * mass * (1.0 - 1e-9))
    });
    Ok(SupersolutionCertificate { candidate: s.to_vec(), residual, verdict, min_residual, lower_bound })
}

/// Forms with measures `(1 − 1/k)μ`, `k = 1..=k_max`.
pub fn approximation_sequence(pf: &PerturbedForm, k_max: usize) -> Result<Vec<PerturbedForm>> {
    let kappa =
        pf.kappa().ok_or_else(|| Error::PreconditionViolation("approximation ladder needs a κ-certificate".into()))?;
    if kappa > 1.0 + CRITICAL_TOL {
        return Err(Error::SupercriticalMeasure { kappa });
    }
    Ok((1..=k_max).map(|k| pf.scaled(1.0 - 1.0 / k as f64)).collect())
}

/// `‖H_a⁻¹ − H_b⁻¹‖` on `L²(m)` by power iteration on the difference.
pub fn resolvent_gap(a: &PerturbedForm, b: &PerturbedForm) -> Result<f64> {
    let (oa, ob) = (a.operator(), b.operator());
    let mut v = vec![1.0; oa.dim()];
    let nv = oa.l2_norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut est = 0.0;
    for it in 0..5000 {
        let xa = oa.solve(&v)?;
        let xb = ob.solve(&v)?;
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| p - q).collect();
        let nd = oa.l2_norm(&d);
        if nd == 0.0 {
            return Ok(0.0);
        }
        let change = (nd - est).abs();
        est = nd;
        v = d.iter().map(|x| x / nd).collect();
        if it >= 3 && change <= 1e-9 * est {
            return Ok(est);
        }
    }
    Err(Error::ConvergenceFailure { what: "resolvent gap power iteration".into(), lower: 0.0, upper: est })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub k: usize,
    pub lambda0: f64,
    pub phi0_error: f64,
    pub xi_error: f64,
    pub resolvent_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub lambda0_limit: f64,
    pub rows: Vec<ConvergenceRow>,
    /// `k ↦ λ₀^(k)` nonincreasing.
    pub lambda_monotone: bool,
    /// `k ↦ |λ₀^(k) − λ₀^(μ)|` nonincreasing.
    pub lambda_gap_monotone: bool,
    /// `k ↦ ‖H_k⁻¹ − H_μ⁻¹‖` nonincreasing.
    pub resolvent_gap_monotone: bool,
}

/// Ladder rows against the direct solve of `H_μ`.
pub fn convergence_report(pf: &PerturbedForm, k_max: usize) -> Result<ConvergenceTable> {
    let ladder = approximation_sequence(pf, k_max)?;
    let limit = ground_state(pf.operator())?;
    let ones = vec![1.0; pf.operator().dim()];
    let xi = pf.operator().solve(&ones)?;
    let rows = ladder
        .par_iter()
        .enumerate()
        .map(|(i, form)| -> Result<ConvergenceRow> {
            let sd: SpectralData = ground_state(form.operator())?;
            let op = form.operator();
            let phi_diff: Vec<f64> = sd.phi0.iter().zip(&limit.phi0).map(|(a, b)| a - b).collect();
            let xk = op.solve(&ones)?;
            let xi_diff: Vec<f64> = xk.iter().zip(&xi).map(|(a, b)| a - b).collect();
            Ok(ConvergenceRow {
                k: i + 1,
                lambda0: sd.lambda0,
                phi0_error: op.l2_norm(&phi_diff),
                xi_error: op.l2_norm(&xi_diff),
                resolvent_gap: resolvent_gap(form, pf)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let nonincreasing = |f: &dyn Fn(&ConvergenceRow) -> f64| rows.windows(2).all(|w| f(&w[1]) <= f(&w[0]));
    Ok(ConvergenceTable {
        lambda0_limit: limit.lambda0,
        lambda_monotone: nonincreasing(&|r| r.lambda0),
        lambda_gap_monotone: nonincreasing(&|r| (r.lambda0 - limit.lambda0).abs()),
        resolvent_gap_monotone: nonincreasing(&|r| r.resolvent_gap),
        rows,
    })
}

/// Strict supersolution `s = (H − δ·μ/m)⁻¹1` for `δμ`, `δ ∈ (0, 1)`.
pub fn reciprocal_supersolution(pf: &PerturbedForm, delta: f64) -> Result<SupersolutionCertificate> {
    let scaled = pf.scaled(delta);
    let s = scaled.operator().solve(&vec![1.0; pf.operator().dim()])?;
    check_supersolution(&scaled, &s, None)
}

/// `Σ f_i² μ_i ≤ κ E[f]` along with `E_μ[f] ≥ (1 − κ)E[f]`, for one probe.
pub fn hardy_holds(pf: &PerturbedForm, f: &[f64]) -> bool {
    let Some(kappa) = pf.kappa() else { return false };
    let e = pf.base().energy(f);
    let mass: f64 = f.iter().zip(pf.measure().weights()).map(|(v, w)| v * v * w).sum();
    mass <= kappa * e * (1.0 + 1e-9) + 1e-300 && pf.energy(f) >= (1.0 - kappa) * e - 1e-9 * e
}

/// `f ↦ fᵀ A⁻¹ f`-type quadratic `⟨f, H⁻¹f⟩_m`.
pub fn inverse_quadratic(op: &DiscreteOperator, f: &[f64]) -> Result<f64> {
    let x = op.solve(f)?;
    Ok(dot(&x, &f.iter().zip(op.mass()).map(|(a, m)| a * m).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, build_laplacian, GridSpec};

    fn interval(n: usize) -> (GridDomain, Arc<FormOperator>) {
        let g = build_grid(&GridSpec::interval(n)).unwrap();
        let f = Arc::new(build_laplacian(&g));
        (g, f)
    }

    #[test]
    fn make_measure_examples() {
        let (g, _) = interval(3);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 0.25 }).unwrap();
        assert_eq!(mu.weights()[0], 0.25 * 0.25f64.powi(-2) * 0.25);
        assert!(make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap().measure.is_zero());
        let (g, _) = interval(63);
        let mu = make_measure(&g, &DensitySpec::Constant { c: 2.0 }).unwrap();
        assert!((mu.measure.total() - 2.0 * 63.0 / 64.0).abs() < 1e-15);
        assert!(make_measure(&g, &DensitySpec::Constant { c: -1.0 }).is_err());
        assert!(make_measure(&g, &DensitySpec::InverseSquareOrigin { c: 1.0, origin: Some(vec![0.5]) }).is_err());
    }

    #[test]
    fn kappa_of_constant_density() {
        let (g, form) = interval(31);
        let mu = make_measure(&g, &DensitySpec::Constant { c: 3.0 }).unwrap();
        let cert = kappa_constant(&form, &mu).unwrap();
        let lam0 = form.operator().dense_spectrum().unwrap().values[0];
        assert!((cert.kappa - 3.0 / lam0).abs() < 1e-8 * cert.kappa);
        assert!(kappa_constant(&form, &make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap()).is_err());
    }

    #[test]
    fn kappa_extremal_attains() {
        let (g, form) = interval(63);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
        let cert = kappa_constant(&form, &mu).unwrap();
        let f = &cert.extremal;
        let lhs: f64 = f.iter().zip(mu.weights()).map(|(v, w)| v * v * w).sum();
        assert!((lhs - cert.kappa * form.energy(f)).abs() <= 1e-7 * lhs);
    }

    #[test]
    fn supersolutions() {
        let (g, form) = interval(63);
        let zero = PerturbedForm::new(form.clone(), make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap());
        let xi = form.operator().solve(&vec![1.0; g.len()]).unwrap();
        let cert = check_supersolution(&zero, &xi, None).unwrap();
        assert!(cert.verdict);
        for (r, m) in cert.residual.iter().zip(form.mass()) {
            assert!((r - m).abs() < 1e-9 * m);
        }
        assert!(check_supersolution(&zero, &vec![0.0; g.len()], None).is_err());
    }

    #[test]
    fn ladder_weights() {
        let (g, form) = interval(15);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 / 16.0 }).unwrap();
        let pf = PerturbedForm::certified(form, mu.clone()).unwrap();
        let ladder = approximation_sequence(&pf, 4).unwrap();
        assert!(ladder[0].measure().measure.is_zero());
        for (a, b) in ladder[1].measure().weights().iter().zip(mu.weights()) {
            assert_eq!(*a, 0.5 * b);
        }
        let k = pf.kappa().unwrap();
        for (i, f) in ladder.iter().enumerate() {
            assert_eq!(f.kappa().unwrap(), (1.0 - 1.0 / (i + 1) as f64) * k);
        }
    }

    #[test]
    fn supercritical_is_rejected() {
        let (g, form) = interval(31);
        let mu = make_measure(&g, &DensitySpec::InverseSquareBoundary { c: 1.0 }).unwrap();
        let pf = PerturbedForm::certified(form, mu).unwrap();
        assert!(pf.kappa().unwrap() > 1.0);
        assert!(matches!(approximation_sequence(&pf, 3), Err(Error::SupercriticalMeasure { .. })));
    }

    #[test]
    fn resolvent_gap_constant_shift() {
        let (g, form) = interval(31);
        let zero = PerturbedForm::new(form.clone(), make_measure(&g, &DensitySpec::Constant { c: 0.0 }).unwrap());
        assert_eq!(resolvent_gap(&zero, &zero).unwrap(), 0.0);
        let c = 0.5;
        let shifted = PerturbedForm::new(form.clone(), make_measure(&g, &DensitySpec::Constant { c }).unwrap());
        let lam0 = form.operator().dense_spectrum().unwrap().values[0];
        let expected = c / (lam0 * (lam0 - c));
        let gap = resolvent_gap(&zero, &shifted).unwrap();
        assert!((gap - expected).abs() < 1e-6 * expected, "{gap} vs {expected}");
    }

    #[test]
    fn constant_shift_ladder_is_exact() {
        let (g, form) = interval(31);
        let c = 1.5;
        let pf =
            PerturbedForm::certified(form.clone(), make_measure(&g, &DensitySpec::Constant { c }).unwrap()).unwrap();
        let table = convergence_report(&pf, 4).unwrap();
        let lam0 = form.operator().dense_spectrum().unwrap().values[0];
        for row in &table.rows {
            let expected = lam0 - (1.0 - 1.0 / row.k as f64) * c;
            assert!((row.lambda0 - expected).abs() < 1e-9 * lam0);
            assert!(row.phi0_error < 1e-7);
        }
        assert!(table.lambda_monotone && table.lambda_gap_monotone && table.resolvent_gap_monotone);
    }
}
