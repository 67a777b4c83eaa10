//! N-functions and Orlicz norms on finite weighted spaces.
//!
//! An [`NFunction`] is either a power law `c·t^p`, a tabulated function
//! (natural cubic spline in log–log coordinates, so power laws are
//! reproduced exactly), or an arbitrary convex evaluator. Power laws carry
//! closed forms for everything derived from them; the other kinds go
//! through bisection, golden-section maximization and quadrature.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{aitken, integrate_log};

pub const INVERT_RTOL: f64 = 1e-10;
pub const INVERT_MAX_ITER: usize = 200;
pub const PROBE_COUNT: usize = 64;
pub const PROBE_MIN: f64 = 1e-6;
pub const PROBE_MAX: f64 = 1e6;

/// 64 log-spaced points in `[1e-6, 1e6]`.
pub fn probe_grid() -> Vec<f64> {
    log_grid(PROBE_MIN, PROBE_MAX, PROBE_COUNT)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Solves `F(t) = y` for a strictly increasing `F` with `F(0) = 0` by
/// bisection in `ln t`.
pub fn invert<F: Fn(f64) -> f64>(f: F, y: f64) -> Result<f64> {
    invert_with(f, y, INVERT_RTOL, f64::MIN_POSITIVE)
}

pub fn invert_with<F: Fn(f64) -> f64>(f: F, y: f64, rtol: f64, atol: f64) -> Result<f64> {
    if y <= 0.0 {
        return Ok(0.0);
    }
    let target = rtol * y.max(atol);
    let mut hi = 1.0_f64;
    while f(hi) < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::UnboundedInverse { target: y, last_probe: f64::MAX });
        }
    }
    let mut lo = hi;
    while f(lo) > y {
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok(lo);
        }
    }
    if (f(lo) - y).abs() <= target {
        return Ok(lo);
    }
    if (f(hi) - y).abs() <= target {
        return Ok(hi);
    }
    for _ in 0..INVERT_MAX_ITER {
        let mid = (lo * hi).sqrt();
        let v = f(mid);
        if (v - y).abs() <= target || hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(mid);
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Config form of an N-function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NFunctionSpec {
    /// `coef·t^p`; `coef` defaults to `1/p`.
    Power {
        p: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        coef: Option<f64>,
    },
    Table {
        points: Vec<[f64; 2]>,
    },
}

/// Natural cubic spline through `(ln t_i, ln Φ(t_i))`, extended linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLogSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl LogLogSpline {
    fn new(points: &[[f64; 2]]) -> Result<Self> {
        let pts: Vec<[f64; 2]> = points.iter().copied().filter(|p| p[0] > 0.0).collect();
        if pts.len() < 2 {
            return Err(Error::InvalidNFunction("table needs at least two points with t > 0".into()));
        }
        for (i, p) in pts.iter().enumerate() {
            if !(p[1] > 0.0) || !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::InvalidNFunction(format!("table value at t = {} must be positive", p[0])));
            }
            if i > 0 && p[0] <= pts[i - 1][0] {
                return Err(Error::InvalidNFunction("table abscissae must increase".into()));
            }
        }
        let x: Vec<f64> = pts.iter().map(|p| p[0].ln()).collect();
        let y: Vec<f64> = pts.iter().map(|p| p[1].ln()).collect();
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // tridiagonal system for interior second derivatives (natural ends)
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut upper = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i - 1] = 2.0 * (h0 + h1);
                upper[i - 1] = h1;
                rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 1..k {
                let w = (x[i + 1] - x[i]) / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Ok(Self { x, y, m })
    }

    /// Returns `(ln Φ, d ln Φ / d ln t)` at `u = ln t`.
    fn eval_log(&self, u: f64) -> (f64, f64) {
        let n = self.x.len();
        if u <= self.x[0] {
            let s = self.slope_at(0);
            return (self.y[0] + s * (u - self.x[0]), s);
        }
        if u >= self.x[n - 1] {
            let s = self.slope_at(n - 1);
            return (self.y[n - 1] + s * (u - self.x[n - 1]), s);
        }
        let i = match self.x.binary_search_by(|v| v.total_cmp(&u)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        };
        self.segment(i, u)
    }

    fn segment(&self, i: usize, u: f64) -> (f64, f64) {
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - u) / h;
        let b = (u - self.x[i]) / h;
        let v = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h
            + (-(3.0 * a * a - 1.0) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0;
        (v, d)
    }

    fn slope_at(&self, i: usize) -> f64 {
        let n = self.x.len();
        if i == 0 {
            self.segment(0, self.x[0]).1
        } else {
            self.segment(n - 2, self.x[n - 1]).1
        }
    }
}

pub type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum NFunctionKind {
    Power { p: f64, coef: f64 },
    Table(LogLogSpline),
    Custom { label: String, eval: Evaluator },
}

impl fmt::Debug for NFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power { p, coef } => write!(f, "Power {{ p: {p}, coef: {coef} }}"),
            Self::Table(s) => write!(f, "Table({} knots)", s.x.len()),
            Self::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NFunction {
    kind: NFunctionKind,
}

impl NFunction {
    /// `t^p / p`
    pub fn power(p: f64) -> Result<Self> {
        Self::power_with_coef(p, 1.0 / p)
    }

    /// `coef·t^p`
    pub fn power_with_coef(p: f64, coef: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() || !(coef > 0.0) || !coef.is_finite() {
            return Err(Error::InvalidNFunction(format!(
                "power law needs p > 1 and coef > 0, got p = {p}, coef = {coef}"
            )));
        }
        Ok(Self { kind: NFunctionKind::Power { p, coef } })
    }

    pub fn table(points: &[[f64; 2]]) -> Result<Self> {
        let f = Self { kind: NFunctionKind::Table(LogLogSpline::new(points)?) };
        f.validate()?;
        Ok(f)
    }

    pub fn from_fn<F>(label: &str, eval: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let f = Self { kind: NFunctionKind::Custom { label: label.to_string(), eval: Arc::new(eval) } };
        f.validate()?;
        Ok(f)
    }

    pub fn from_spec(spec: &NFunctionSpec) -> Result<Self> {
        match spec {
            NFunctionSpec::Power { p, coef } => Self::power_with_coef(*p, coef.unwrap_or(1.0 / p)),
            NFunctionSpec::Table { points } => Self::table(points),
        }
    }

    pub fn kind(&self) -> &NFunctionKind {
        &self.kind
    }

    /// `Some((p, coef))` for power laws.
    pub fn as_power(&self) -> Option<(f64, f64)> {
        match self.kind {
            NFunctionKind::Power { p, coef } => Some((p, coef)),
            _ => None,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            NFunctionKind::Power { p, coef } => coef * t.powf(*p),
            NFunctionKind::Table(s) => s.eval_log(t.ln()).0.exp(),
            NFunctionKind::Custom { eval, .. } => eval(t),
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.kind {
            NFunctionKind::Power { p, coef } => coef * p * t.powf(p - 1.0),
            NFunctionKind::Table(s) => {
                let (v, d) = s.eval_log(t.ln());
                v.exp() * d / t
            }
            NFunctionKind::Custom { eval, .. } => {
                let h = 1e-6 * t;
                (eval(t + h) - eval(t - h)) / (2.0 * h)
            }
        }
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        match self.kind {
            NFunctionKind::Power { p, coef } => Ok(if y <= 0.0 { 0.0 } else { (y / coef).powf(1.0 / p) }),
            _ => invert(|t| self.eval(t), y),
        }
    }

    /// `Λ(s) = 1 / (s Φ⁻¹(1/s))`
    pub fn lambda(&self, s: f64) -> Result<f64> {
        Ok(1.0 / (s * self.inverse(1.0 / s)?))
    }

    /// Checks the N-function axioms on the probe grid: `Φ(0) = 0`, positivity,
    /// strict monotonicity, convexity and strictly increasing `Φ(t)/t`.
    pub fn validate(&self) -> Result<()> {
        if self.eval(0.0) != 0.0 {
            return Err(Error::InvalidNFunction("Φ(0) must vanish".into()));
        }
        let grid = probe_grid();
        let vals: Vec<f64> = grid.iter().map(|&t| self.eval(t)).collect();
        for (i, (&t, &v)) in grid.iter().zip(&vals).enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidNFunction(format!("Φ({t}) = {v} is not positive and finite")));
            }
            if i > 0 {
                if v <= vals[i - 1] {
                    return Err(Error::InvalidNFunction(format!("Φ not strictly increasing at t = {t}")));
                }
                if v / t <= vals[i - 1] / grid[i - 1] {
                    return Err(Error::InvalidNFunction(format!("Φ(t)/t not increasing at t = {t}")));
                }
            }
            if i > 1 {
                let s0 = (vals[i - 1] - vals[i - 2]) / (grid[i - 1] - grid[i - 2]);
                let s1 = (v - vals[i - 1]) / (t - grid[i - 1]);
                if s1 < s0 * (1.0 - 1e-9) {
                    return Err(Error::InvalidNFunction(format!("Φ not convex near t = {t}")));
                }
            }
        }
        Ok(())
    }
}

/// `sup_{t ≥ 0} (t r − Φ(t))` by golden-section search in `ln t`; returns
/// `(value, maximizer)`.
fn legendre_numeric(phi: &NFunction, r: f64) -> Result<(f64, f64)> {
    if r <= 0.0 {
        return Ok((0.0, 0.0));
    }
    // Φ(t)/t ≥ r implies Φ'(t) ≥ r, so the maximizer lies below t.
    let mut hi = 1.0_f64;
    loop {
        let v = phi.eval(hi);
        if !v.is_finite() || !hi.is_finite() {
            return Ok((f64::INFINITY, f64::INFINITY));
        }
        if v / hi >= r {
            break;
        }
        hi *= 2.0;
    }
    // Φ(2t)/t < r implies Φ'(t) < r, so the maximizer lies above t.
    let mut lo = hi;
    while phi.eval(2.0 * lo) / lo >= r {
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok((0.0, 0.0));
        }
    }
    let h = |u: f64| {
        let t = u.exp();
        t * r - phi.eval(t)
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (h(c), h(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = h(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = h(d);
        }
    }
    let u = 0.5 * (a + b);
    let best = h(u);
    let (ha, hb) = (h(lo.ln()), h(hi.ln()));
    if best < ha.max(hb) - 1e-12 * best.abs().max(1e-300) {
        return Err(Error::InvalidNFunction(format!("maximization of t·{r} − Φ(t) is not unimodal; Φ is not convex")));
    }
    Ok((best.max(0.0), u.exp()))
}

/// The complementary (Legendre-conjugate) function `Ψ` of an N-function.
#[derive(Debug, Clone)]
pub struct ComplementaryFunction {
    phi: NFunction,
    closed: Option<(f64, f64)>,
}

impl ComplementaryFunction {
    /// `Ψ(r) = sup_t (t r − Φ(t))`; closed form `coef'·r^q` for power laws.
    /// Young's inequality is verified on a 20×20 probe grid.
    pub fn new(phi: &NFunction) -> Result<Self> {
        let closed = phi.as_power().map(|(p, coef)| {
            let q = p / (p - 1.0);
            (q, (1.0 - 1.0 / p) * (coef * p).powf(-1.0 / (p - 1.0)))
        });
        let psi = Self { phi: phi.clone(), closed };
        let probes = log_grid(1e-3, 1e3, 20);
        for &t in &probes {
            for &r in &probes {
                let rhs = phi.eval(t) + psi.try_eval(r)?;
                if t * r > rhs * (1.0 + 1e-9) {
                    return Err(Error::InvalidNFunction(format!("Young's inequality fails at t = {t}, r = {r}")));
                }
            }
        }
        Ok(psi)
    }

    pub fn phi(&self) -> &NFunction {
        &self.phi
    }

    /// `Some((q, coef))` when `Ψ(r) = coef·r^q` in closed form.
    pub fn as_power(&self) -> Option<(f64, f64)> {
        self.closed
    }

    pub fn try_eval(&self, r: f64) -> Result<f64> {
        match self.closed {
            Some((q, c)) => Ok(if r <= 0.0 { 0.0 } else { c * r.powf(q) }),
            None => legendre_numeric(&self.phi, r).map(|(v, _)| v),
        }
    }

    /// Numeric path never fails on a validated Φ; a failure evaluates to NaN.
    pub fn eval(&self, r: f64) -> f64 {
        self.try_eval(r).unwrap_or(f64::NAN)
    }

    /// Legendre transform by golden-section search, ignoring any closed form.
    pub fn eval_numeric(&self, r: f64) -> Result<f64> {
        legendre_numeric(&self.phi, r).map(|(v, _)| v)
    }

    pub fn inverse(&self, u: f64) -> Result<f64> {
        match self.closed {
            Some((q, c)) => Ok(if u <= 0.0 { 0.0 } else { (u / c).powf(1.0 / q) }),
            None => invert(|r| self.eval(r), u),
        }
    }

    pub fn as_nfunction(&self) -> Result<NFunction> {
        match self.closed {
            Some((q, c)) => NFunction::power_with_coef(q, c),
            None => {
                let psi = self.clone();
                Ok(NFunction {
                    kind: NFunctionKind::Custom { label: "complementary".into(), eval: Arc::new(move |r| psi.eval(r)) },
                })
            }
        }
    }
}

/// Growth witness `φ₁(t) ≥ a·t^{1+ε}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthCertificate {
    pub a: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityCertificate {
    pub admissible: bool,
    /// Extrapolated value of `∫₀^α (sΛ(s))⁻¹ ds` (last partial sum when divergent).
    pub integral: f64,
    /// Smallest truncation point reached.
    pub delta: f64,
    pub halvings: usize,
    /// Last change of the extrapolated value.
    pub last_change: f64,
}

const ADMISSIBILITY_RTOL: f64 = 1e-9;
const ADMISSIBILITY_MAX_HALVINGS: usize = 1000;

/// Convergence test for `∫₀^α base⁻¹(1/s) ds`, where `base⁻¹` is the inverse
/// of the base function of `Λ` (note `(sΛ(s))⁻¹ = base⁻¹(1/s)`).
///
/// The integral is truncated at `δ = α·2^{-k}`, one panel per halving, and
/// the partial sums are Aitken-extrapolated in `k`.
pub fn admissibility_from_inverse<F>(inverse: F, alpha: f64) -> Result<AdmissibilityCertificate>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut partial = Vec::with_capacity(64);
    let mut extrap: Vec<f64> = Vec::new();
    let mut sum = 0.0;
    let mut hi = alpha;
    let mut err = None;
    for k in 0..ADMISSIBILITY_MAX_HALVINGS {
        let lo = hi * 0.5;
        let panel = integrate_log(lo, hi, |s| match inverse(1.0 / s) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                f64::NAN
            }
        });
        if let Some(e) = err.take() {
            return Err(e);
        }
        sum += panel;
        partial.push(sum);
        hi = lo;
        if k >= 2 {
            let n = partial.len();
            extrap.push(aitken(partial[n - 3], partial[n - 2], partial[n - 1]));
        }
        let ne = extrap.len();
        if ne >= 4 {
            let e = extrap[ne - 1];
            let c1 = (e - extrap[ne - 2]).abs();
            let c2 = (extrap[ne - 2] - extrap[ne - 3]).abs();
            let n = partial.len();
            let shrinking = partial[n - 1] - partial[n - 2] < partial[n - 2] - partial[n - 3];
            if shrinking && c1 <= ADMISSIBILITY_RTOL * e.abs() && c2 <= ADMISSIBILITY_RTOL * e.abs() {
                return Ok(AdmissibilityCertificate {
                    admissible: true,
                    integral: e,
                    delta: hi,
                    halvings: k + 1,
                    last_change: c1,
                });
            }
        }
    }
    let ne = extrap.len();
    Ok(AdmissibilityCertificate {
        admissible: false,
        integral: sum,
        delta: hi,
        halvings: ADMISSIBILITY_MAX_HALVINGS,
        last_change: (extrap[ne - 1] - extrap[ne - 2]).abs(),
    })
}

/// Integrability of `(sΛ(s))⁻¹` near zero with the Φ-based `Λ`.
pub fn is_admissible(phi: &NFunction) -> Result<AdmissibilityCertificate> {
    admissibility_from_inverse(|u| phi.inverse(u), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nabla2Certificate {
    pub holds: bool,
    pub l: Option<f64>,
    pub t0: Option<f64>,
}

/// Searches `l ∈ {2, 4, 8, 16}` and `t0` on the probe grid for
/// `Φ(t) ≤ Φ(l t)/(2l)` at every probe `t ≥ t0`.
pub fn is_nabla2(phi: &NFunction) -> Nabla2Certificate {
    let grid = probe_grid();
    for l in [2.0, 4.0, 8.0, 16.0] {
        let ok: Vec<bool> = grid.iter().map(|&t| phi.eval(t) <= phi.eval(l * t) / (2.0 * l) * (1.0 + 1e-12)).collect();
        for start in 0..grid.len() {
            if ok[start..].iter().all(|&b| b) {
                return Nabla2Certificate { holds: true, l: Some(l), t0: Some(grid[start]) };
            }
        }
    }
    Nabla2Certificate { holds: false, l: None, t0: None }
}

/// `φ₁(t) = t Ψ⁻¹(t)` together with its growth and admissibility data.
#[derive(Debug, Clone)]
pub struct DerivedPhi1 {
    psi: ComplementaryFunction,
    closed: Option<(f64, f64)>,
    pub growth: Option<GrowthCertificate>,
    pub admissibility: AdmissibilityCertificate,
}

impl DerivedPhi1 {
    pub fn new(phi: &NFunction) -> Result<Self> {
        let psi = ComplementaryFunction::new(phi)?;
        Self::from_complementary(psi)
    }

    pub fn from_complementary(psi: ComplementaryFunction) -> Result<Self> {
        // Ψ = c r^q  ⇒  Ψ⁻¹(t) = (t/c)^{1/q}  ⇒  φ₁(t) = c^{-1/q} t^{1+1/q}
        let closed = psi.as_power().map(|(q, c)| (c.powf(-1.0 / q), 1.0 + 1.0 / q));
        let mut out = Self {
            psi,
            closed,
            growth: None,
            admissibility: AdmissibilityCertificate {
                admissible: false,
                integral: f64::NAN,
                delta: f64::NAN,
                halvings: 0,
                last_change: f64::NAN,
            },
        };
        out.growth = match closed {
            Some((a, e)) => Some(GrowthCertificate { a, epsilon: e - 1.0 }),
            None => out.probe_growth(),
        };
        out.admissibility = admissibility_from_inverse(|u| out.inverse(u), 1.0)?;
        Ok(out)
    }

    pub fn complementary(&self) -> &ComplementaryFunction {
        &self.psi
    }

    /// `Some((a, exponent))` when `φ₁(t) = a·t^exponent` in closed form.
    pub fn as_power(&self) -> Option<(f64, f64)> {
        self.closed
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.closed {
            Some((a, e)) => a * t.powf(e),
            None => t * self.psi.inverse(t).unwrap_or(f64::NAN),
        }
    }

    /// `φ₁⁻¹(u)`: with `r Ψ(r) = u` one has `φ₁(Ψ(r)) = u`.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        match self.closed {
            Some((a, e)) => Ok((u / a).powf(1.0 / e)),
            None => {
                let r = invert(|r| r * self.psi.eval(r), u)?;
                self.psi.try_eval(r)
            }
        }
    }

    /// `Λ(s) = 1 / (s φ₁⁻¹(1/s))`
    pub fn lambda(&self, s: f64) -> Result<f64> {
        Ok(1.0 / (s * self.inverse(1.0 / s)?))
    }

    pub fn as_nfunction(&self) -> Result<NFunction> {
        match self.closed {
            Some((a, e)) => NFunction::power_with_coef(e, a),
            None => {
                let me = self.clone();
                Ok(NFunction {
                    kind: NFunctionKind::Custom { label: "phi1".into(), eval: Arc::new(move |t| me.eval(t)) },
                })
            }
        }
    }

    fn probe_growth(&self) -> Option<GrowthCertificate> {
        let grid = probe_grid();
        let vals: Vec<f64> = grid.iter().map(|&t| self.eval(t)).collect();
        let eps = grid
            .windows(2)
            .zip(vals.windows(2))
            .map(|(t, v)| (v[1] / v[0]).ln() / (t[1] / t[0]).ln() - 1.0)
            .fold(f64::INFINITY, f64::min);
        if !(eps > 0.0) {
            return None;
        }
        let a = grid.iter().zip(&vals).map(|(t, v)| v / t.powf(1.0 + eps)).fold(f64::INFINITY, f64::min);
        (a > 0.0 && a.is_finite()).then_some(GrowthCertificate { a, epsilon: eps })
    }
}

/// `inf{λ > 0 : Σ w_i Φ(|f_i|/λ) ≤ 1}` by bisection in `ln λ`.
pub fn luxemburg_norm(phi: &NFunction, weights: &[f64], f: &[f64]) -> f64 {
    let support: Vec<(f64, f64)> =
        weights.iter().zip(f).filter(|(w, v)| **w > 0.0 && **v != 0.0).map(|(w, v)| (*w, v.abs())).collect();
    if support.is_empty() {
        return 0.0;
    }
    let modular = |lam: f64| support.iter().map(|(w, v)| w * phi.eval(v / lam)).sum::<f64>();
    let mut hi = support.iter().fold(0.0_f64, |m, (_, v)| m.max(*v));
    while modular(hi) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = hi;
    while modular(lo) <= 1.0 {
        lo *= 0.5;
    }
    for _ in 0..INVERT_MAX_ITER {
        if hi - lo <= INVERT_RTOL * hi * 1e-2 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if modular(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// `‖1‖_{L^Ψ} = 1 / Ψ⁻¹(1/m(X))`.
pub fn norm_one_psi(psi: &ComplementaryFunction, weights: &[f64]) -> Result<f64> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::PreconditionViolation("total weight must be positive".into()));
    }
    Ok(1.0 / psi.inverse(1.0 / total)?)
}

/// Embedding constant for `‖f‖_{L^{φ₁}} ≤ c ‖f‖_{L^Φ}` on a space of total
/// mass `total`: with `T` beyond which `φ₁ ≤ 2Φ` on the probe grid,
/// `c = max(1, 2 + φ₁(T)·total)`.
pub fn embedding_constant(phi: &NFunction, phi1: &DerivedPhi1, total: f64) -> (f64, f64) {
    let grid = probe_grid();
    let mut threshold = 0.0;
    for &t in grid.iter().rev() {
        if phi1.eval(t) > 2.0 * phi.eval(t) {
            threshold = t;
            break;
        }
    }
    let c = (2.0 + phi1.eval(threshold) * total).max(1.0);
    (threshold, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cubic() -> NFunction {
        NFunction::power(3.0).unwrap()
    }

    fn cubic_table() -> NFunction {
        let pts: Vec<[f64; 2]> = log_grid(1e-3, 1e3, 25).into_iter().map(|t| [t, t.powi(3) / 3.0]).collect();
        NFunction::table(&pts).unwrap()
    }

    fn t_log() -> NFunction {
        NFunction::from_fn("t log(1+t)", |t| t * t.ln_1p()).unwrap()
    }

    #[test]
    fn invert_closed_form_and_zero() {
        assert!((cubic().inverse(9.0).unwrap() - 3.0).abs() < 1e-14);
        let sq = NFunction::power_with_coef(2.0, 1.0).unwrap();
        assert_eq!(sq.inverse(0.0).unwrap(), 0.0);
    }

    #[test]
    fn invert_tabulated_cubic_by_bisection() {
        let t = cubic_table().inverse(9.0).unwrap();
        assert!((t - 3.0).abs() < 1e-8, "{t}");
    }

    #[test]
    fn invert_reports_bounded_evaluator() {
        let err = invert(|t: f64| 1.0 - (-t).exp(), 2.0).unwrap_err();
        assert!(matches!(err, Error::UnboundedInverse { .. }));
    }

    #[test]
    fn invert_eval_is_identity_on_probes() {
        for phi in [cubic(), cubic_table(), t_log()] {
            for t in log_grid(1e-4, 1e4, 40) {
                let back = phi.inverse(phi.eval(t)).unwrap();
                assert!((back - t).abs() <= 1e-8 * t, "{phi:?} t={t} back={back}");
            }
        }
    }

    #[test]
    fn complementary_of_powers() {
        let psi = ComplementaryFunction::new(&cubic()).unwrap();
        let (q, c) = psi.as_power().unwrap();
        assert!((q - 1.5).abs() < 1e-15);
        assert!((c - 1.0 / 1.5).abs() < 1e-15);
        let half_sq = NFunction::power(2.0).unwrap();
        let psi2 = ComplementaryFunction::new(&half_sq).unwrap();
        for r in [0.1, 1.0, 7.0] {
            assert!((psi2.eval(r) - r * r / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn complementary_numeric_matches_closed_form() {
        let psi = ComplementaryFunction::new(&cubic_table()).unwrap();
        assert!(psi.as_power().is_none());
        let expected = 2f64.powf(1.5) * 2.0 / 3.0;
        assert!((psi.eval(2.0) - expected).abs() < 1e-6);
        let exact = ComplementaryFunction::new(&cubic()).unwrap();
        assert!((exact.eval_numeric(2.0).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn conjugate_pair_inequality() {
        for phi in [cubic(), NFunction::power(1.3).unwrap(), t_log()] {
            let psi = ComplementaryFunction::new(&phi).unwrap();
            for t in log_grid(1e-3, 1e3, 30) {
                let prod = phi.inverse(t).unwrap() * psi.inverse(t).unwrap();
                assert!(prod >= t * (1.0 - 1e-8) && prod <= 2.0 * t * (1.0 + 1e-8), "{phi:?} t={t}");
            }
        }
    }

    #[test]
    fn admissibility_verdicts() {
        let sq = NFunction::power_with_coef(2.0, 1.0).unwrap();
        let c = is_admissible(&sq).unwrap();
        assert!(c.admissible);
        // ∫₀¹ s^{-1/2} ds = 2
        assert!((c.integral - 2.0).abs() < 1e-8, "{c:?}");
        assert!(is_admissible(&cubic()).unwrap().admissible);
        let tl = is_admissible(&t_log()).unwrap();
        assert!(!tl.admissible, "{tl:?}");
    }

    #[test]
    fn nabla2_verdicts() {
        let c = is_nabla2(&cubic());
        assert!(c.holds);
        assert_eq!(c.l, Some(2.0));
        let s = is_nabla2(&NFunction::power(2.0).unwrap());
        assert!(s.holds && s.l == Some(2.0));
        assert!(!is_nabla2(&t_log()).holds);
    }

    #[test]
    fn phi1_closed_forms() {
        let p3 = DerivedPhi1::new(&cubic()).unwrap();
        let (a, e) = p3.as_power().unwrap();
        assert!((a - 1.5f64.powf(2.0 / 3.0)).abs() < 1e-14);
        assert!((e - 5.0 / 3.0).abs() < 1e-14);
        let g = p3.growth.unwrap();
        assert!((g.epsilon - 2.0 / 3.0).abs() < 1e-14);
        assert!(p3.admissibility.admissible);
        let p2 = DerivedPhi1::new(&NFunction::power(2.0).unwrap()).unwrap();
        let (a2, e2) = p2.as_power().unwrap();
        assert!((a2 - 2f64.sqrt()).abs() < 1e-14 && (e2 - 1.5).abs() < 1e-14);
    }

    #[test]
    fn phi1_numeric_matches_closed_form() {
        let numeric = DerivedPhi1::new(&cubic_table()).unwrap();
        assert!(numeric.as_power().is_none());
        let expected = 1.5f64.powf(2.0 / 3.0) * 2f64.powf(5.0 / 3.0);
        assert!((numeric.eval(2.0) - expected).abs() < 1e-6);
        assert!(numeric.admissibility.admissible);
        let g = numeric.growth.unwrap();
        assert!((g.epsilon - 2.0 / 3.0).abs() < 1e-6);
        let u = numeric.eval(3.0);
        assert!((numeric.inverse(u).unwrap() - 3.0).abs() < 1e-8);
    }

    #[test]
    fn phi1_increasing_from_zero() {
        let p = DerivedPhi1::new(&t_log()).unwrap();
        assert_eq!(p.eval(0.0), 0.0);
        let grid = log_grid(1e-3, 1e3, 20);
        for w in grid.windows(2) {
            assert!(p.eval(w[1]) > p.eval(w[0]));
        }
    }

    #[test]
    fn luxemburg_norm_basics() {
        let w = vec![1.0 / 16.0; 16];
        assert_eq!(luxemburg_norm(&cubic(), &w, &[0.0; 16]), 0.0);
        // Σw Φ(1/λ) = 1  ⇒  λ = (Σw/3)^{1/3}
        let w16 = vec![1.0; 16];
        let lam = luxemburg_norm(&cubic(), &w16, &[1.0; 16]);
        assert!((lam - (16.0f64 / 3.0).powf(1.0 / 3.0)).abs() < 1e-9);
        // plain power: weighted p-norm
        let plain = NFunction::power_with_coef(3.0, 1.0).unwrap();
        let f: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 3.0).collect();
        let pnorm = f.iter().zip(&w).map(|(v, w)| w * v.abs().powi(3)).sum::<f64>().cbrt();
        assert!((luxemburg_norm(&plain, &w, &f) - pnorm).abs() < 1e-9 * pnorm);
    }

    #[test]
    fn norm_one_psi_values() {
        let psi = ComplementaryFunction::new(&NFunction::power(2.0).unwrap()).unwrap();
        assert!((norm_one_psi(&psi, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((norm_one_psi(&psi, &[0.5, 0.5]).unwrap() - 0.5f64.sqrt()).abs() < 1e-14);
        // Ψ = t^{3/2}/(3/2), m(X)=1: 1/Ψ⁻¹(1) = (2/3)^{2/3}... via bisection on the numeric path
        let psi3 = ComplementaryFunction::new(&cubic()).unwrap();
        let closed = norm_one_psi(&psi3, &[1.0]).unwrap();
        assert!((closed - (2.0f64 / 3.0).powf(2.0 / 3.0)).abs() < 1e-14);
        let numeric = 1.0 / invert(|r| psi3.eval(r), 1.0).unwrap();
        assert!((numeric - closed).abs() < 1e-9);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(NFunction::power(1.0).is_err());
        assert!(NFunction::table(&[[1.0, 1.0]]).is_err());
        // linear growth: Φ(t)/t constant
        assert!(NFunction::from_fn("linear", |t| 2.0 * t).is_err());
        // concave
        assert!(NFunction::from_fn("sqrt", |t| t.sqrt()).is_err());
    }
}
