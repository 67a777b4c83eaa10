//! Sparse symmetric matrices, preconditioned conjugate gradients, dense
//! symmetric spectra and the weighted inner-product space every operator in
//! this crate lives in.
//!
//! Operators are stored as a pencil `(A, m)`: a symmetric stiffness matrix
//! `A` and a diagonal lumped mass `m > 0`. The operator itself is
//! `H f = A f / m`, self-adjoint in `L²(m)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Largest problem size for which dense eigendecompositions are formed.
pub const DENSE_LIMIT: usize = 2048;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), m)| x * y * m).sum()
}

pub fn weighted_norm(a: &[f64], w: &[f64]) -> f64 {
    weighted_dot(a, a, w).sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn scale(a: &mut [f64], s: f64) {
    a.iter_mut().for_each(|x| *x *= s);
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Symmetric sparse matrix: explicit diagonal plus off-diagonal entries in
/// CSR layout (both triangles stored).
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparse {
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymSparse {
    /// Assembles from a diagonal and a list of off-diagonal couplings
    /// `(i, j, a_ij)` with `i != j`; each pair is listed once.
    pub fn from_couplings(diag: Vec<f64>, couplings: &[(usize, usize, f64)]) -> Self {
        let n = diag.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in couplings {
            debug_assert!(i != j);
            rows[i].push((j, v));
            rows[j].push((i, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (j, v) in row {
                cols.push(j);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { diag, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.dim() {
            let mut acc = self.diag[i] * x[i];
            for (j, v) in self.row(i) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn quadratic(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    /// `A − diag(shift)`
    pub fn minus_diag(&self, shift: &[f64]) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().zip(shift).for_each(|(d, s)| *d -= s);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Target relative residual `‖b − Ax‖/‖b‖`.
    pub rtol: f64,
    /// Residual still accepted when the iteration stagnates before `rtol`.
    pub accept_rtol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { rtol: 1e-13, accept_rtol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`, `A` SPD.
///
/// A nonpositive curvature `pᵀAp ≤ 0` means `A` is not positive definite and
/// is reported as [`Error::NearSingular`].
pub fn pcg(a: &SymSparse, b: &[f64], x0: Option<&[f64]>, opts: &CgOptions) -> Result<CgOutcome> {
    let n = a.dim();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgOutcome { x: vec![0.0; n], iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a.diag().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let mut r = b.to_vec();
    if x0.is_some() {
        let ax = a.apply(&x);
        r.iter_mut().zip(&ax).for_each(|(ri, v)| *ri -= v);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, d)| ri * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let max_iter = opts.max_iter.unwrap_or(20 * n + 200);
    let mut best = (norm(&r) / bnorm, x.clone());
    let mut iterations = 0;
    while iterations < max_iter {
        if best.0 <= opts.rtol {
            break;
        }
        a.apply_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::NearSingular(format!(
                "conjugate gradients met curvature {curvature:e} at iteration {iterations}"
            )));
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        iterations += 1;
        // refresh the recursive residual now and then to stop drift
        if iterations % 50 == 0 {
            let ax = a.apply(&x);
            r.iter_mut().zip(b.iter().zip(&ax)).for_each(|(ri, (bi, v))| *ri = bi - v);
        }
        let rel = norm(&r) / bnorm;
        if rel < best.0 {
            best = (rel, x.clone());
        }
        z.iter_mut().zip(r.iter().zip(&inv_diag)).for_each(|(zi, (ri, d))| *zi = ri * d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    let (_, xb) = best;
    let ax = a.apply(&xb);
    let true_rel = norm(&sub(b, &ax)) / bnorm;
    if true_rel <= opts.accept_rtol.max(opts.rtol) {
        Ok(CgOutcome { x: xb, iterations, rel_residual: true_rel })
    } else {
        Err(Error::ConvergenceFailure {
            what: format!("conjugate gradients after {iterations} iterations"),
            lower: 0.0,
            upper: true_rel,
        })
    }
}

/// A pencil `(A, m)` defining `H = m⁻¹A` on `L²(m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    stiffness: SymSparse,
    mass: Vec<f64>,
}

impl DiscreteOperator {
    pub fn new(stiffness: SymSparse, mass: Vec<f64>) -> Self {
        assert_eq!(stiffness.dim(), mass.len());
        Self { stiffness, mass }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn stiffness(&self) -> &SymSparse {
        &self.stiffness
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `(Hf)_i = (A f)_i / m_i`
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.apply(f);
        y.iter_mut().zip(&self.mass).for_each(|(v, m)| *v /= m);
        y
    }

    /// Quadratic form `fᵀ A f`.
    pub fn energy(&self, f: &[f64]) -> f64 {
        self.stiffness.quadratic(f)
    }

    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        dot(f, &self.stiffness.apply(g))
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        weighted_dot(f, g, &self.mass)
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        weighted_norm(f, &self.mass)
    }

    /// Solves `H x = b`, i.e. `A x = m ⊙ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_with(b, &CgOptions::default()).map(|o| o.x)
    }

    pub fn solve_with(&self, b: &[f64], opts: &CgOptions) -> Result<CgOutcome> {
        let rhs: Vec<f64> = b.iter().zip(&self.mass).map(|(v, m)| v * m).collect();
        pcg(&self.stiffness, &rhs, None, opts)
    }

    /// `H − diag(v)` as a new pencil, i.e. stiffness `A − diag(v ⊙ m)`.
    pub fn minus_potential(&self, v: &[f64]) -> Self {
        let shift: Vec<f64> = v.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
        Self::new(self.stiffness.minus_diag(&shift), self.mass.clone())
    }

    /// Relative residual `‖Hf − λf‖/(|λ|‖f‖)` in `L²(m)`.
    pub fn eigen_residual(&self, lambda: f64, f: &[f64]) -> f64 {
        let hf = self.apply(f);
        let r: Vec<f64> = hf.iter().zip(f).map(|(a, b)| a - lambda * b).collect();
        self.l2_norm(&r) / (lambda.abs() * self.l2_norm(f)).max(f64::MIN_POSITIVE)
    }

    pub fn dense_spectrum(&self) -> Result<DenseSpectrum> {
        DenseSpectrum::new(self)
    }
}

/// Full eigendecomposition of a pencil: eigenvalues ascending, modes
/// orthonormal in `L²(m)`, each mode signed so that `∫φ dm ≥ 0`.
#[derive(Debug, Clone)]
pub struct DenseSpectrum {
    pub values: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
}

impl DenseSpectrum {
    pub fn new(op: &DiscreteOperator) -> Result<Self> {
        let n = op.dim();
        if n > DENSE_LIMIT {
            return Err(Error::PreconditionViolation(format!(
                "dense eigendecomposition limited to {DENSE_LIMIT} nodes, got {n}"
            )));
        }
        let sq: Vec<f64> = op.mass().iter().map(|m| m.sqrt()).collect();
        let mut b = op.stiffness().to_dense();
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] /= sq[i] * sq[j];
            }
        }
        let eig = SymmetricEigen::new(b);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let mut values = Vec::with_capacity(n);
        let mut modes = Vec::with_capacity(n);
        for k in order {
            values.push(eig.eigenvalues[k]);
            let mut phi: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, k)] / sq[i]).collect();
            if weighted_dot(&phi, &vec![1.0; n], op.mass()) < 0.0 {
                scale(&mut phi, -1.0);
            }
            modes.push(phi);
        }
        Ok(Self { values, modes, mass: op.mass().to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Largest generalized eigenvalue of `diag(d) f = κ A f` (A SPD, d ≥ 0)
/// by power iteration on `A⁻¹ diag(d)` with CG inner solves.
#[derive(Debug, Clone)]
pub struct TopGeneralized {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

pub fn top_generalized_eigen(a: &SymSparse, d: &[f64], tol: f64, max_iter: usize) -> Result<TopGeneralized> {
    if d.iter().all(|&x| x == 0.0) {
        return Err(Error::PreconditionViolation("weight vanishes identically".into()));
    }
    let mut f: Vec<f64> = d.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.5 }).collect();
    let mut value = 0.0;
    let mut residual = f64::INFINITY;
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut x0: Option<Vec<f64>> = None;
    for it in 1..=max_iter {
        let df: Vec<f64> = f.iter().zip(d).map(|(a, b)| a * b).collect();
        let af = a.apply(&f);
        let denom = dot(&f, &af);
        value = dot(&f, &df) / denom;
        lo = lo.max(value);
        let r: Vec<f64> = df.iter().zip(&af).map(|(x, y)| x - value * y).collect();
        residual = norm(&r) / norm(&df).max(f64::MIN_POSITIVE);
        if residual <= tol {
            return Ok(TopGeneralized { value, vector: f, residual, iterations: it });
        }
        let sol = pcg(a, &df, x0.as_deref(), &CgOptions::default())?;
        let g = sol.x;
        // Collatz-Wielandt upper bound: A is an M-matrix, so A⁻¹diag(d) is nonnegative
        if f.iter().all(|&x| x > 0.0) {
            let cw = g.iter().zip(&f).map(|(a, b)| a / b).fold(f64::MIN, f64::max);
            hi = hi.min(cw);
        }
        let gn = norm(&g);
        f = g.iter().map(|x| x / gn).collect();
        x0 = Some(f.iter().map(|x| x * value).collect());
    }
    Err(Error::ConvergenceFailure {
        what: format!("generalized power iteration (residual {residual:e}, estimate {value})"),
        lower: lo,
        upper: hi,
    })
}

/// Deterministic generator used for every probe vector in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform random vector on `[-1, 1]^n`.
pub fn random_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Uniform random vector on `(0, 1]^n`.
pub fn random_positive_vector<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| 1.0 - rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize) -> SymSparse {
        let couplings: Vec<_> = (0..n - 1).map(|i| (i, i + 1, -1.0)).collect();
        SymSparse::from_couplings(vec![2.0; n], &couplings)
    }

    #[test]
    fn pcg_solves_tridiagonal_system() {
        let a = tridiag(50);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.apply(&x_true);
        let out = pcg(&a, &b, None, &CgOptions::default()).unwrap();
        assert!(out.rel_residual < 1e-12);
        for (x, y) in out.x.iter().zip(&x_true) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pcg_reports_indefinite_matrix() {
        let a = tridiag(10).minus_diag(&[3.0; 10]);
        let b = vec![1.0; 10];
        assert!(matches!(pcg(&a, &b, None, &CgOptions::default()), Err(Error::NearSingular(_))));
    }

    #[test]
    fn dense_spectrum_of_path_laplacian() {
        let n = 20;
        let op = DiscreteOperator::new(tridiag(n), vec![1.0; n]);
        let s = op.dense_spectrum().unwrap();
        for (k, v) in s.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-12);
        }
        assert!(s.modes[0].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn top_generalized_matches_dense() {
        let n = 30;
        let a = tridiag(n);
        let d: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 / 7.0).cos()).collect();
        let top = top_generalized_eigen(&a, &d, 1e-10, 5000).unwrap();
        // dense oracle: largest eigenvalue of A^{-1/2} D A^{-1/2} == largest of D^{1/2} A^{-1} D^{1/2}
        let ainv = a.to_dense().try_inverse().unwrap();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = d[i].sqrt() * ainv[(i, j)] * d[j].sqrt();
            }
        }
        let ev = SymmetricEigen::new(m).eigenvalues;
        let max = ev.iter().cloned().fold(f64::MIN, f64::max);
        assert!((top.value - max).abs() < 1e-9 * max);
    }
}
