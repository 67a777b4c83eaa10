//! Grid domains, the lumped volume measure and the finite-difference
//! Dirichlet form with its carré du champ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DiscreteOperator, SymSparse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mask {
    #[default]
    Box,
    /// The box minus its closed upper-right quadrant.
    Lshape,
}

/// Config form of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dimension: usize,
    pub extents: Vec<[f64; 2]>,
    pub n: usize,
    #[serde(default)]
    pub mask: Mask,
}

impl GridSpec {
    pub fn interval(n: usize) -> Self {
        Self { dimension: 1, extents: vec![[0.0, 1.0]], n, mask: Mask::Box }
    }

    pub fn unit_square(n: usize, mask: Mask) -> Self {
        Self { dimension: 2, extents: vec![[0.0, 1.0], [0.0, 1.0]], n, mask }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    dim: usize,
    extents: Vec<[f64; 2]>,
    n: usize,
    h: f64,
    mask: Mask,
    coords: Vec<[f64; 2]>,
    lattice: Vec<[usize; 2]>,
    rho: Vec<f64>,
    /// lattice position → node index, row-major over `[1, n]^d`
    lookup: Vec<Option<usize>>,
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[[f64; 2]] {
        &self.extents
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mask(&self) -> Mask {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Node coordinates; the second entry is 0 when `d = 1`.
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn volume(&self) -> f64 {
        let full: f64 = self.extents.iter().map(|e| e[1] - e[0]).product();
        match self.mask {
            Mask::Box => full,
            Mask::Lshape => 0.75 * full,
        }
    }

    /// Lumped mass `m_i = h^d`.
    pub fn volume_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(vec![self.h.powi(self.dim as i32); self.len()]).expect("positive mass")
    }

    /// Index of the node nearest to `x` (ties broken by node order).
    pub fn nearest(&self, x: [f64; 2]) -> usize {
        let d2 = |c: &[f64; 2]| (c[0] - x[0]).powi(2) + (c[1] - x[1]).powi(2);
        let mut best = 0;
        for (i, c) in self.coords.iter().enumerate() {
            if d2(c) < d2(&self.coords[best]) {
                best = i;
            }
        }
        best
    }

    fn node_at(&self, i: isize, j: isize) -> Option<usize> {
        let n = self.n as isize;
        if i < 1 || i > n {
            return None;
        }
        if self.dim == 1 {
            return if j == 0 { self.lookup[(i - 1) as usize] } else { None };
        }
        if j < 1 || j > n {
            return None;
        }
        self.lookup[((i - 1) * n + (j - 1)) as usize]
    }

    /// Lattice neighbours of node `k`: `Some(j)` for interior, `None` for
    /// boundary (Dirichlet) neighbours. Always `2d` entries.
    pub fn neighbours(&self, k: usize) -> Vec<Option<usize>> {
        let [i, j] = self.lattice[k];
        let (i, j) = (i as isize, j as isize);
        if self.dim == 1 {
            vec![self.node_at(i - 1, 0), self.node_at(i + 1, 0)]
        } else {
            vec![self.node_at(i - 1, j), self.node_at(i + 1, j), self.node_at(i, j - 1), self.node_at(i, j + 1)]
        }
    }
}

fn masked(mask: Mask, x: [f64; 2], mid: [f64; 2]) -> bool {
    match mask {
        Mask::Box => false,
        Mask::Lshape => x[0] >= mid[0] && x[1] >= mid[1],
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let s = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    ((p[0] - a[0] - s * dx).powi(2) + (p[1] - a[1] - s * dy).powi(2)).sqrt()
}

/// Interior lattice nodes of a box (minus the masked region) at spacing
/// `h = side/(n+1)`, ordered lexicographically by coordinates.
pub fn build_grid(spec: &GridSpec) -> Result<GridDomain> {
    let d = spec.dimension;
    if d != 1 && d != 2 {
        return Err(Error::InvalidGrid(format!("dimension must be 1 or 2, got {d}")));
    }
    if spec.extents.len() != d {
        return Err(Error::InvalidGrid(format!("expected {d} extents, got {}", spec.extents.len())));
    }
    if spec.n < 3 {
        return Err(Error::InvalidGrid(format!("n must be at least 3, got {}", spec.n)));
    }
    if d == 1 && spec.mask != Mask::Box {
        return Err(Error::InvalidGrid("masks other than box need d = 2".into()));
    }
    let side = spec.extents[0][1] - spec.extents[0][0];
    for e in &spec.extents {
        let s = e[1] - e[0];
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::InvalidGrid(format!("extent [{}, {}] is empty", e[0], e[1])));
        }
        if (s - side).abs() > 1e-12 * side {
            return Err(Error::InvalidGrid("all sides must have equal length".into()));
        }
    }
    let n = spec.n;
    let h = side / (n + 1) as f64;
    let lo = [spec.extents[0][0], if d == 2 { spec.extents[1][0] } else { 0.0 }];
    let hi = [spec.extents[0][1], if d == 2 { spec.extents[1][1] } else { 0.0 }];
    let mid = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let outline = [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], mid[1]], [mid[0], mid[1]], [mid[0], hi[1]], [lo[0], hi[1]]];

    let mut coords = Vec::new();
    let mut lattice = Vec::new();
    let mut rho = Vec::new();
    let mut lookup = vec![None; n.pow(d as u32)];
    let jrange = if d == 1 { 0..1 } else { 1..n + 1 };
    for i in 1..=n {
        for j in jrange.clone() {
            let x = [lo[0] + i as f64 * h, if d == 2 { lo[1] + j as f64 * h } else { 0.0 }];
            if masked(spec.mask, x, mid) {
                continue;
            }
            let r = match spec.mask {
                Mask::Box => {
                    let mut r = (x[0] - lo[0]).min(hi[0] - x[0]);
                    if d == 2 {
                        r = r.min(x[1] - lo[1]).min(hi[1] - x[1]);
                    }
                    r
                }
                Mask::Lshape => {
                    (0..6).map(|k| segment_distance(x, outline[k], outline[(k + 1) % 6])).fold(f64::INFINITY, f64::min)
                }
            };
            let slot = if d == 1 { i - 1 } else { (i - 1) * n + (j - 1) };
            lookup[slot] = Some(coords.len());
            coords.push(x);
            lattice.push([i, j]);
            rho.push(r);
        }
    }
    if coords.is_empty() {
        return Err(Error::EmptyDomain);
    }
    Ok(GridDomain { dim: d, extents: spec.extents.clone(), n, h, mask: spec.mask, coords, lattice, rho, lookup })
}

/// Nonnegative finite node weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        for (node, &value) in weights.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidDensity { node, value });
            }
        }
        Ok(Self { weights })
    }

    pub fn zeros(n: usize) -> Self {
        Self { weights: vec![0.0; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { weights: self.weights.iter().map(|w| w * c).collect() }
    }

    /// `∫ f dμ`
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }
}

/// The discrete Dirichlet form: graph edges with weight `h^{d−2}`, killing
/// weights toward the boundary, and lumped mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FormOperator {
    edges: Vec<(usize, usize, f64)>,
    boundary: Vec<f64>,
    op: DiscreteOperator,
}

impl FormOperator {
    /// Assembles a form from explicit edges, boundary weights and masses.
    pub fn from_parts(n: usize, edges: Vec<(usize, usize, f64)>, boundary: Vec<f64>, mass: Vec<f64>) -> Self {
        let mut diag = boundary.clone();
        for &(i, j, c) in &edges {
            diag[i] += c;
            diag[j] += c;
        }
        let couplings: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j, c)| (i, j, -c)).collect();
        assert_eq!(diag.len(), n);
        let op = DiscreteOperator::new(SymSparse::from_couplings(diag, &couplings), mass);
        Self { edges, boundary, op }
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn boundary(&self) -> &[f64] {
        &self.boundary
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn mass(&self) -> &[f64] {
        self.op.mass()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.op.apply(f)
    }

    pub fn energy(&self, f: &[f64]) -> f64 {
        self.op.energy(f)
    }

    /// `E[f]` summed edge by edge (no matrix product).
    pub fn energy_by_edges(&self, f: &[f64]) -> f64 {
        let inner: f64 = self.edges.iter().map(|&(i, j, c)| c * (f[i] - f[j]).powi(2)).sum();
        let outer: f64 = self.boundary.iter().zip(f).map(|(b, v)| b * v * v).sum();
        inner + outer
    }

    pub fn bilinear(&self, f: &[f64], g: &[f64]) -> f64 {
        self.op.bilinear(f, g)
    }

    /// `Σ_edges c·w_i·w_j·(f_i − f_j)²`: the discrete counterpart of
    /// `∫ w² dΓ[f]`, satisfying `E[wf] = weighted_energy(w, f) + Σ_i f_i² w_i (A w)_i`
    /// (the killing part of the form is carried by `A w`).
    pub fn weighted_energy(&self, w: &[f64], f: &[f64]) -> f64 {
        self.edges.iter().map(|&(i, j, c)| c * w[i] * w[j] * (f[i] - f[j]).powi(2)).sum()
    }

    /// Connected components of the edge graph.
    pub fn is_connected(&self) -> bool {
        let n = self.dim();
        if n == 0 {
            return false;
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == n
    }
}

/// Standard `(2d+1)`-point stencil with Dirichlet rows closed against the boundary.
pub fn build_laplacian(grid: &GridDomain) -> FormOperator {
    let n = grid.len();
    let c = grid.h().powi(grid.dim() as i32 - 2);
    let mut edges = Vec::new();
    let mut boundary = vec![0.0; n];
    for (k, b) in boundary.iter_mut().enumerate() {
        for nb in grid.neighbours(k) {
            match nb {
                Some(j) if j > k => edges.push((k, j, c)),
                Some(_) => {}
                None => *b += c,
            }
        }
    }
    FormOperator::from_parts(n, edges, boundary, grid.volume_measure().weights().to_vec())
}

/// `Γ[f]_i = ½Σ_{j∼i} c_ij (f_i − f_j)² + b_i f_i²`, so that `ΣΓ[f] = E[f]`.
pub fn carre_du_champ(form: &FormOperator, f: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = form.boundary().iter().zip(f).map(|(b, v)| b * v * v).collect();
    for &(i, j, c) in form.edges() {
        let e = 0.5 * c * (f[i] - f[j]).powi(2);
        g[i] += e;
        g[j] += e;
    }
    g
}

/// `Γ(f, g) = ¼(Γ[f+g] − Γ[f−g])`
pub fn mutual_energy(form: &FormOperator, f: &[f64], g: &[f64]) -> Vec<f64> {
    let plus: Vec<f64> = f.iter().zip(g).map(|(a, b)| a + b).collect();
    let minus: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
    carre_du_champ(form, &plus).into_iter().zip(carre_du_champ(form, &minus)).map(|(p, m)| 0.25 * (p - m)).collect()
}
