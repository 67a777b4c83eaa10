//! Heat kernels of `e^{−tH}`, ultracontractivity bounds for Doob-transformed
//! semigroups and large-time asymptotics.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::comparison::{DoobTransform, UCProfile};
use crate::error::{Error, Result};
use crate::linalg::{dot, max_abs, seeded_rng, DenseSpectrum, DiscreteOperator, DENSE_LIMIT};
use crate::quadrature::log_rule;
use crate::spectral::{GreenData, SpectralData};
use rand::Rng;

const KRYLOV_MAX_DIM: usize = 300;
const KRYLOV_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatMethod {
    Dense,
    Krylov,
}

/// `p_t(x,y)`, the kernel of `e^{−tH}` with respect to `m`.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    op: DiscreteOperator,
    spectrum: Option<DenseSpectrum>,
}

/// Dense eigendecomposition up to the dense limit, Krylov action beyond it.
pub fn heat_kernel(op: &DiscreteOperator) -> Result<HeatKernel> {
    if op.dim() <= DENSE_LIMIT {
        Ok(HeatKernel { op: op.clone(), spectrum: Some(op.dense_spectrum()?) })
    } else {
        Ok(HeatKernel::krylov(op))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::PreconditionViolation(format!("time must be positive and finite, got {t}")))
    }
}

impl HeatKernel {
    pub fn krylov(op: &DiscreteOperator) -> Self {
        Self { op: op.clone(), spectrum: None }
    }

    pub fn method(&self) -> HeatMethod {
        if self.spectrum.is_some() {
            HeatMethod::Dense
        } else {
            HeatMethod::Krylov
        }
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn spectrum(&self) -> Option<&DenseSpectrum> {
        self.spectrum.as_ref()
    }

    fn dense(&self) -> Result<&DenseSpectrum> {
        self.spectrum
            .as_ref()
            .ok_or_else(|| Error::PreconditionViolation("operation needs the dense spectral path".into()))
    }

    /// `e^{σt}p_t(·,y)`; the shift keeps large times representable.
    pub fn column_shifted(&self, t: f64, y: usize, shift: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let n = self.op.dim();
        match &self.spectrum {
            Some(sp) => {
                let mut out = vec![0.0; n];
                for (lam, mode) in sp.values.iter().zip(&sp.modes) {
                    let c = (-(lam - shift) * t).exp();
                    if c == 0.0 {
                        continue;
                    }
                    out.iter_mut().zip(mode).for_each(|(o, v)| *o += c * (v * mode[y]));
                }
                Ok(out)
            }
            None => {
                let mut e = vec![0.0; n];
                e[y] = 1.0 / self.op.mass()[y];
                let mut out = self.krylov_apply(t, &e)?;
                let s = (shift * t).exp();
                out.iter_mut().for_each(|v| *v *= s);
                Ok(out)
            }
        }
    }

    pub fn column(&self, t: f64, y: usize) -> Result<Vec<f64>> {
        self.column_shifted(t, y, 0.0)
    }

    pub fn value(&self, t: f64, x: usize, y: usize) -> Result<f64> {
        check_time(t)?;
        match &self.spectrum {
            Some(sp) => Ok(sp.values.iter().zip(&sp.modes).map(|(lam, m)| (-lam * t).exp() * (m[x] * m[y])).sum()),
            None => Ok(self.column(t, y)?[x]),
        }
    }

    /// `k_t(x,y) = φ₀(x)φ₀(y)p_t(x,y)`
    pub fn transformed(&self, t: f64, x: usize, y: usize, phi0: &[f64]) -> Result<f64> {
        Ok(phi0[x] * phi0[y] * self.value(t, x, y)?)
    }

    /// `e^{−tH} f`
    pub fn apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        check_time(t)?;
        match &self.spectrum {
            Some(sp) => {
                let mut out = vec![0.0; f.len()];
                for (lam, mode) in sp.values.iter().zip(&sp.modes) {
                    let c = (-lam * t).exp() * self.op.inner(mode, f);
                    out.iter_mut().zip(mode).for_each(|(o, v)| *o += c * v);
                }
                Ok(out)
            }
            None => self.krylov_apply(t, f),
        }
    }

    /// `Σ_x p_t(x,x) m_x`
    pub fn trace(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        match &self.spectrum {
            Some(sp) => Ok(sp.values.iter().map(|l| (-l * t).exp()).sum()),
            None => (0..self.op.dim()).into_par_iter().map(|y| Ok(self.column(t, y)?[y] * self.op.mass()[y])).sum(),
        }
    }

    /// `ln p_t(x,x)` per node, computed with the shift `λ₀`.
    pub fn ln_diagonal(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let sp = self.dense()?;
        let l0 = sp.values[0];
        Ok((0..self.op.dim())
            .map(|x| {
                let s: f64 = sp.values.iter().zip(&sp.modes).map(|(l, m)| (-(l - l0) * t).exp() * m[x] * m[x]).sum();
                s.ln() - l0 * t
            })
            .collect())
    }

    /// `e^{−tH}v` by Lanczos in `L²(m)` with full reorthogonalization.
    fn krylov_apply(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.op.dim();
        let sq: Vec<f64> = self.op.mass().iter().map(|m| m.sqrt()).collect();
        let u0: Vec<f64> = v.iter().zip(&sq).map(|(a, s)| a * s).collect();
        let beta0 = dot(&u0, &u0).sqrt();
        if beta0 == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let b_apply = |x: &[f64]| -> Vec<f64> {
            let y: Vec<f64> = x.iter().zip(&sq).map(|(a, s)| a / s).collect();
            self.op.stiffness().apply(&y).iter().zip(&sq).map(|(a, s)| a / s).collect()
        };
        let mut basis: Vec<Vec<f64>> = vec![u0.iter().map(|a| a / beta0).collect()];
        let (mut alpha, mut beta) = (Vec::new(), Vec::new());
        let max_dim = KRYLOV_MAX_DIM.min(n);
        for j in 0..max_dim {
            let mut w = b_apply(&basis[j]);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
            let b = dot(&w, &w).sqrt();
            let coeffs = tridiagonal_exp(&alpha, &beta, t);
            let done = b <= 1e-14 * a.abs().max(1.0) || j + 1 == max_dim;
            let size = max_abs(&coeffs);
            let conv = j >= 2 && size > 0.0 && b * coeffs[j].abs() <= KRYLOV_TOL * size;
            if done || conv {
                let mut out = vec![0.0; n];
                for (c, q) in coeffs.iter().zip(&basis) {
                    out.iter_mut().zip(q).for_each(|(o, qi)| *o += beta0 * c * qi);
                }
                return Ok(out.iter().zip(&sq).map(|(a, s)| a / s).collect());
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
        unreachable!("loop returns at max_dim")
    }
}

/// `e^{−tT}e₁` for the Lanczos tridiagonal `T`.
fn tridiagonal_exp(alpha: &[f64], beta: &[f64], t: f64) -> Vec<f64> {
    let k = alpha.len();
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        m[(i, i)] = alpha[i];
        if i + 1 < k {
            m[(i, i + 1)] = beta[i];
            m[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(m);
    (0..k)
        .map(|i| {
            (0..k).map(|j| eig.eigenvectors[(i, j)] * (-eig.eigenvalues[j] * t).exp() * eig.eigenvectors[(0, j)]).sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelInvariants {
    pub t: f64,
    pub symmetry_defect: f64,
    /// `|p_t − p_{t/2} * p_{t/2}|` relative to `√(p_t(x,x) p_t(y,y))`
    pub semigroup_defect: f64,
    /// Smallest probed kernel value relative to the column peak.
    pub min_value: f64,
    /// `max_x Σ_y p_t(x,y) m_y`
    pub max_row_mass: f64,
    pub holds: bool,
}

/// Symmetry, semigroup law, positivity and sub-Markov mass on seeded probes.
/// With `markov` set the row mass must stay below one; that holds only when
/// the operator carries no negative potential.
pub fn kernel_invariants(hk: &HeatKernel, t: f64, probes: usize, seed: u64, markov: bool) -> Result<KernelInvariants> {
    check_time(t)?;
    let n = hk.op.dim();
    let m = hk.op.mass();
    let mut rng = seeded_rng(seed);
    let triples: Vec<(usize, usize)> = (0..probes).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    let s = 0.5 * t;
    let rows = triples
        .par_iter()
        .map(|&(x, y)| -> Result<(f64, f64, f64, f64)> {
            let cx = hk.column(t, x)?;
            let cy = hk.column(t, y)?;
            let sym = (cx[y] - cy[x]).abs() / cx[y].abs().max(cy[x].abs()).max(f64::MIN_POSITIVE);
            let hx = hk.column(s, x)?;
            let hy = hk.column(s, y)?;
            let conv: f64 = (0..n).map(|z| hx[z] * hy[z] * m[z]).sum();
            let scale = (cx[x] * cy[y]).sqrt().max(f64::MIN_POSITIVE);
            let semi = (conv - cy[x]).abs() / scale;
            let peak = cx.iter().chain(&cy).copied().fold(f64::MIN_POSITIVE, f64::max);
            let min = cx.iter().chain(&cy).copied().fold(f64::INFINITY, f64::min) / peak;
            let mass = cx.iter().zip(m).map(|(p, w)| p * w).sum::<f64>();
            Ok((sym, semi, min, mass))
        })
        .collect::<Result<Vec<_>>>()?;
    let symmetry_defect = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let semigroup_defect = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let min_value = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let max_row_mass = rows.iter().map(|r| r.3).fold(0.0, f64::max);
    Ok(KernelInvariants {
        t,
        symmetry_defect,
        semigroup_defect,
        min_value,
        max_row_mass,
        holds: symmetry_defect <= 1e-9
            && semigroup_defect <= 1e-8
            && min_value > -1e-12
            && (!markov || max_row_mass <= 1.0 + 1e-12),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UcVerdict {
    pub t: f64,
    /// `ln max k̃_t`, the `L¹(w²dm) → L^∞` norm of `T_t^w`.
    pub ln_norm: f64,
    /// `ln β(t/2) + ‖V‖∞ t`
    pub ln_bound: f64,
    pub holds: bool,
}

/// True `L¹(w²dm) → L^∞` norm of `T_t^w = w⁻¹e^{−t(H_ν−V)}w` against the
/// profile bound. Its kernel is positive semidefinite, so the sup sits on the
/// diagonal.
pub fn uc_bound_check(dt: &DoobTransform, profile: &UCProfile, times: &[f64]) -> Result<Vec<UcVerdict>> {
    let op = dt.form().operator().minus_potential(&dt.v);
    if op.dim() > DENSE_LIMIT {
        return Err(Error::PreconditionViolation("transformed kernel needs the dense spectral path".into()));
    }
    let sp = op.dense_spectrum()?;
    let l0 = sp.values[0];
    let v_sup = dt.v_sup();
    times
        .iter()
        .map(|&t| {
            check_time(t)?;
            let ln_norm = (0..op.dim())
                .map(|x| {
                    let s: f64 =
                        sp.values.iter().zip(&sp.modes).map(|(l, m)| (-(l - l0) * t).exp() * m[x] * m[x]).sum();
                    s.ln() - l0 * t - 2.0 * dt.w[x].ln()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let ln_bound = profile.ln_beta(t / 2.0)? + v_sup * t;
            Ok(UcVerdict { t, ln_norm, ln_bound, holds: ln_norm <= ln_bound })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsRow {
    pub t: f64,
    /// `max_{x,y} |p_t(x,y)/(e^{−λ₀t}φ₀(x)φ₀(y)) − 1|`
    pub r: f64,
    /// `(1/t) ln(p_t(x,x)/ξ(x)²)` at the maximizer of `ξ`.
    pub log_ratio_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticsTable {
    pub lambda0: f64,
    pub lambda1: f64,
    pub rows: Vec<AsymptoticsRow>,
    /// `c` in `R(t) ≤ c e^{−(λ₁−λ₀)t}`, fitted at the smallest time.
    pub fitted_c: f64,
    pub envelope_holds: bool,
    /// Least-squares slope of `−ln R` over the later half of the times.
    pub decay_rate: f64,
    pub decay_rel_error: f64,
    pub strictly_decreasing: bool,
    pub estimate_rel_error: f64,
    pub estimate_node: usize,
}

impl AsymptoticsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,R(t),log_ratio_estimate\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e}\n", r.t, r.r, r.log_ratio_estimate));
        }
        s
    }
}

/// `R(t)` from the spectral sum `Σ_{n≥1} e^{−(λ_n−λ₀)t}(φ_n/φ₀)²` on the
/// diagonal, which dominates the off-diagonal values.
fn ratio_deviation(sp: &DenseSpectrum, t: f64) -> (f64, Vec<f64>) {
    let l0 = sp.values[0];
    let phi0 = &sp.modes[0];
    let n = sp.dim();
    let mut diag = vec![0.0; n];
    for (l, mode) in sp.values.iter().zip(&sp.modes).skip(1) {
        let c = (-(l - l0) * t).exp();
        if c == 0.0 {
            break;
        }
        for x in 0..n {
            diag[x] += c * (mode[x] / phi0[x]).powi(2);
        }
    }
    (diag.iter().copied().fold(0.0, f64::max), diag)
}

pub fn large_time_asymptotics(hk: &HeatKernel, xi: &[f64], times: &[f64]) -> Result<AsymptoticsTable> {
    let sp = hk.dense()?;
    if sp.dim() < 2 {
        return Err(Error::PreconditionViolation("need at least two eigenvalues".into()));
    }
    let (l0, l1) = (sp.values[0], sp.values[1]);
    let gap = l1 - l0;
    let phi0 = &sp.modes[0];
    let node = (0..xi.len()).max_by(|&a, &b| xi[a].total_cmp(&xi[b])).expect("nonempty");
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        check_time(t)?;
        let (r, diag) = ratio_deviation(sp, t);
        let ln_p = -l0 * t + 2.0 * phi0[node].ln() + diag[node].ln_1p();
        rows.push(AsymptoticsRow { t, r, log_ratio_estimate: (ln_p - 2.0 * xi[node].ln()) / t });
    }
    let fitted_c = rows[0].r * (gap * rows[0].t).exp();
    let envelope_holds = rows.iter().all(|r| r.r <= fitted_c * (-gap * r.t).exp() * (1.0 + 1e-9));
    let tail = &rows[rows.len() / 2..];
    let pts: Vec<(f64, f64)> = tail.iter().filter(|r| r.r > 0.0).map(|r| (r.t, r.r.ln())).collect();
    let decay_rate = if pts.len() >= 2 {
        let k = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        -num / den
    } else {
        f64::NAN
    };
    let last = rows.last().expect("nonempty times");
    Ok(AsymptoticsTable {
        lambda0: l0,
        lambda1: l1,
        fitted_c,
        envelope_holds,
        decay_rate,
        decay_rel_error: (decay_rate - gap).abs() / gap,
        strictly_decreasing: rows.windows(2).all(|w| w[1].r < w[0].r),
        estimate_rel_error: (last.log_ratio_estimate + l0).abs() / l0,
        estimate_node: node,
        rows,
    })
}

/// Smallest `T = 2^k/λ₀` with `½e^{−λ₀t}φ₀(x)φ₀(y) ≤ p_t(x,y)` for all
/// `t ≥ T` and all pairs, certified by `R(T) ≤ ½` and monotonicity of `R`.
pub fn intrinsic_lower_time(op: &DiscreteOperator, sd: &SpectralData) -> Result<f64> {
    if op.dim() > DENSE_LIMIT {
        return Err(Error::PreconditionViolation("time search needs the dense spectral path".into()));
    }
    let sp = op.dense_spectrum()?;
    let l0 = sp.values[0];
    if (l0 - sd.lambda0).abs() > 1e-8 * l0 {
        return Err(Error::InternalInconsistency(format!("λ₀ mismatch: dense {l0} vs {}", sd.lambda0)));
    }
    let mut t = 1.0 / l0;
    for _ in 0..200 {
        if ratio_deviation(&sp, t).0 <= 0.5 {
            return Ok(t);
        }
        t *= 2.0;
    }
    Err(Error::ConvergenceFailure { what: "intrinsic lower time".into(), lower: 1.0 / l0, upper: t })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenConsistency {
    pub columns: Vec<usize>,
    pub max_rel_discrepancy: f64,
    pub holds: bool,
}

/// `∫₀^∞ p_t(·,y)dt` by quadrature on `(0, 40/λ₀]` plus the `e^{−λ₀t}/λ₀`
/// tail, against Green columns.
pub fn green_consistency(hk: &HeatKernel, green: &GreenData, columns: &[usize]) -> Result<GreenConsistency> {
    let sp = hk.dense()?;
    let l0 = sp.values[0];
    let top = 40.0 / l0;
    let lmax = sp.values[sp.dim() - 1];
    let bottom = 1e-6 / lmax;
    let mut knots = vec![top];
    while *knots.last().expect("nonempty") > bottom {
        let next = knots.last().expect("nonempty") / 2.0;
        knots.push(next);
    }
    knots.reverse();
    let worst = columns
        .par_iter()
        .map(|&y| -> Result<f64> {
            let n = hk.op.dim();
            let mut acc: Vec<f64> = hk.column(knots[0], y)?.iter().map(|p| p * knots[0]).collect();
            for w in knots.windows(2) {
                for (t, wt) in log_rule(w[0], w[1]) {
                    let col = hk.column(t, y)?;
                    acc.iter_mut().zip(&col).for_each(|(a, p)| *a += wt * p);
                }
            }
            let g = green.column(y)?;
            let phi0 = &sp.modes[0];
            Ok((0..n)
                .map(|x| {
                    let tail = (-l0 * top).exp() * phi0[x] * phi0[y] / l0;
                    (acc[x] + tail - g[x]).abs() / g[x].abs()
                })
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(GreenConsistency { columns: columns.to_vec(), max_rel_discrepancy: worst, holds: worst <= 1e-4 })
}
