//! Hermite eigenbasis of `H = -Δ + |x|^2` on `R^d`, `d <= 3`.
//!
//! Modes are the multi-indices with total degree `|n| <= N`, enumerated by
//! degree and then lexicographically (largest leading component first).
//! Eigenvalues follow the convention `λ_n^2 = 2|n| + d`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::quadrature::{hermite_functions_into, GaussHermite};
use crate::spectral_ops::SpectralField;

pub const MAX_DIM: usize = 3;
/// Default cap on the number of enumerated modes.
pub const DEFAULT_COEFF_BUDGET: usize = 250_000;
/// Cap on `modes × nodes` for the stored evaluation table.
pub const TABLE_BUDGET: usize = 40_000_000;
pub const EIGENVALUE_CONVENTION: &str = "lambda_n^2 = 2|n| + d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex {
    comps: [u32; MAX_DIM],
    dim: u8,
}

impl MultiIndex {
    pub fn new(components: &[u32]) -> Result<Self> {
        if components.is_empty() || components.len() > MAX_DIM {
            return Err(LabError::invalid("dim", "must be between 1 and 3"));
        }
        let mut comps = [0; MAX_DIM];
        comps[..components.len()].copy_from_slice(components);
        Ok(Self {
            comps,
            dim: components.len() as u8,
        })
    }

    pub fn scalar(n: u32) -> Self {
        Self {
            comps: [n, 0, 0],
            dim: 1,
        }
    }

    pub fn components(&self) -> &[u32] {
        &self.comps[..self.dim as usize]
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    /// Total degree `|n|`.
    pub fn degree(&self) -> u32 {
        self.components().iter().sum()
    }

    /// Component-wise shift along `axis`; `None` when it would go negative.
    pub fn shifted(&self, axis: usize, delta: i32) -> Option<Self> {
        let v = self.comps[axis] as i64 + delta as i64;
        if v < 0 {
            return None;
        }
        let mut out = *self;
        out.comps[axis] = v as u32;
        Some(out)
    }
}

/// `λ_n^2 = 2|n| + d`.
pub fn eigenvalue(n: &MultiIndex, dim: usize) -> f64 {
    (2 * n.degree() as usize + dim) as f64
}

/// Number of multi-indices with `|n| <= max_degree` in dimension `dim`.
pub fn mode_count(dim: usize, max_degree: usize) -> usize {
    // binomial(N + d, d)
    let mut c: u128 = 1;
    for k in 1..=dim as u128 {
        c = c * (max_degree as u128 + k) / k;
    }
    c.min(usize::MAX as u128) as usize
}

pub fn enumerate_modes(dim: usize, max_degree: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(mode_count(dim, max_degree));
    let mut buf = [0u32; MAX_DIM];
    for deg in 0..=max_degree as u32 {
        push_compositions(dim, deg, 0, &mut buf, &mut out);
    }
    out
}

fn push_compositions(dim: usize, rest: u32, axis: usize, buf: &mut [u32; MAX_DIM], out: &mut Vec<MultiIndex>) {
    if axis + 1 == dim {
        buf[axis] = rest;
        out.push(MultiIndex {
            comps: *buf,
            dim: dim as u8,
        });
        return;
    }
    for first in (0..=rest).rev() {
        buf[axis] = first;
        push_compositions(dim, rest - first, axis + 1, buf, out);
    }
    buf[axis] = 0;
}

/// Hermite basis with a tensor Gauss–Hermite grid.
///
/// A grid built with `scale != 1` places nodes at `scale · y_j`; it integrates
/// `P(x) e^{-x^2/scale^2}` exactly and is used for de-aliased products.
#[derive(Debug)]
pub struct BasisGrid {
    dim: usize,
    max_degree: usize,
    quad_per_axis: usize,
    scale: f64,
    modes: Vec<MultiIndex>,
    lookup: HashMap<MultiIndex, usize>,
    axis_nodes: Vec<f64>,
    axis_weights: Vec<f64>,
    /// `(N + 1) × q`, row `k` holds `h_k` at the axis nodes.
    axis_table: Vec<f64>,
    weights: Vec<f64>,
    /// `modes × q^d`.
    eval_table: Vec<f64>,
}

impl PartialEq for BasisGrid {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

/// Cache key of a basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisKey {
    pub dim: usize,
    pub max_degree: usize,
    pub quad_per_axis: usize,
    pub scale_bits: u64,
}

pub fn build_basis(dim: usize, max_degree: usize, quad_per_axis: usize) -> Result<Arc<BasisGrid>> {
    BasisGrid::new(dim, max_degree, quad_per_axis, DEFAULT_COEFF_BUDGET).map(Arc::new)
}

impl BasisGrid {
    pub fn new(dim: usize, max_degree: usize, quad_per_axis: usize, budget: usize) -> Result<Self> {
        let required = 2 * (max_degree + 1);
        if quad_per_axis < required {
            return Err(LabError::QuadratureTooSmall {
                required,
                got: quad_per_axis,
            });
        }
        Self::with_scale(dim, max_degree, quad_per_axis, 1.0, budget)
    }

    /// Grid exact for projecting `|u|^{p-1} u` of an in-span `u` back onto the modes.
    pub fn dealiased(dim: usize, max_degree: usize, p: usize) -> Result<Self> {
        let q = ((p + 1) * max_degree + 1).div_ceil(2).max(1);
        let scale = (2.0 / (p as f64 + 1.0)).sqrt();
        Self::with_scale(dim, max_degree, q, scale, DEFAULT_COEFF_BUDGET)
    }

    pub fn with_scale(dim: usize, max_degree: usize, quad_per_axis: usize, scale: f64, budget: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(LabError::invalid("dim", "must be between 1 and 3"));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(LabError::invalid("scale", "must be positive"));
        }
        let count = mode_count(dim, max_degree);
        if count > budget {
            return Err(LabError::BudgetExceeded { modes: count, budget });
        }
        let nodes_total = quad_per_axis.checked_pow(dim as u32).unwrap_or(usize::MAX);
        if count.saturating_mul(nodes_total) > TABLE_BUDGET {
            return Err(LabError::BudgetExceeded {
                modes: count.saturating_mul(nodes_total),
                budget: TABLE_BUDGET,
            });
        }
        let gh = GaussHermite::new(quad_per_axis)?;
        let axis_nodes: Vec<f64> = gh.nodes.iter().map(|&y| scale * y).collect();
        let axis_weights: Vec<f64> = gh.weights.iter().map(|&w| scale * w).collect();
        let mut axis_table = vec![0.0; (max_degree + 1) * quad_per_axis];
        let mut buf = vec![0.0; max_degree + 1];
        for (j, &x) in axis_nodes.iter().enumerate() {
            hermite_functions_into(x, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                axis_table[k * quad_per_axis + j] = *v;
            }
        }
        Ok(Self::assemble(dim, max_degree, quad_per_axis, scale, axis_nodes, axis_weights, axis_table))
    }

    fn assemble(
        dim: usize,
        max_degree: usize,
        q: usize,
        scale: f64,
        axis_nodes: Vec<f64>,
        axis_weights: Vec<f64>,
        axis_table: Vec<f64>,
    ) -> Self {
        let modes = enumerate_modes(dim, max_degree);
        let lookup = modes.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let total = q.pow(dim as u32);
        let mut weights = vec![1.0; total];
        let mut eval_table = vec![1.0; modes.len() * total];
        for j in 0..total {
            let idx = split_index(j, q, dim);
            for a in 0..dim {
                weights[j] *= axis_weights[idx[a]];
            }
            for (i, m) in modes.iter().enumerate() {
                let mut v = 1.0;
                for a in 0..dim {
                    v *= axis_table[m.comps[a] as usize * q + idx[a]];
                }
                eval_table[i * total + j] = v;
            }
        }
        Self {
            dim,
            max_degree,
            quad_per_axis: q,
            scale,
            modes,
            lookup,
            axis_nodes,
            axis_weights,
            axis_table,
            weights,
            eval_table,
        }
    }

    pub fn key(&self) -> BasisKey {
        BasisKey {
            dim: self.dim,
            max_degree: self.max_degree,
            quad_per_axis: self.quad_per_axis,
            scale_bits: self.scale.to_bits(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn quad_per_axis(&self) -> usize {
        self.quad_per_axis
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Number of modes.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[MultiIndex] {
        &self.modes
    }

    pub fn index_of(&self, n: &MultiIndex) -> Option<usize> {
        self.lookup.get(n).copied()
    }

    /// `λ_n^2` of the `i`-th mode.
    pub fn eigenvalue_sq(&self, i: usize) -> f64 {
        eigenvalue(&self.modes[i], self.dim)
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.axis_nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    /// `h_k` at the axis nodes, row-major `(N + 1) × q`.
    pub fn axis_table(&self) -> &[f64] {
        &self.axis_table
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Tensor weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coordinates of node `j` (unused trailing entries are zero).
    pub fn node(&self, j: usize) -> [f64; MAX_DIM] {
        let idx = split_index(j, self.quad_per_axis, self.dim);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.axis_nodes[idx[a]];
        }
        x
    }

    /// Row of `Φ` for mode `i`.
    pub fn eval_row(&self, i: usize) -> &[f64] {
        let n = self.node_count();
        &self.eval_table[i * n..(i + 1) * n]
    }

    pub fn eval_table(&self) -> &[f64] {
        &self.eval_table
    }

    /// `max |G - I|` for the Gram matrix of the eval table under the weights.
    pub fn gram_deviation(&self) -> f64 {
        let m = self.len();
        let w = &self.weights;
        let mut worst: f64 = 0.0;
        for a in 0..m {
            let ra = self.eval_row(a);
            for b in a..m {
                let rb = self.eval_row(b);
                let g: f64 = ra.iter().zip(rb).zip(w).map(|((x, y), w)| w * x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    pub fn audit_grid(&self) -> AuditGrid {
        AuditGrid::for_degree(self.dim, self.max_degree)
    }
}

fn split_index(mut j: usize, q: usize, dim: usize) -> [usize; MAX_DIM] {
    let mut idx = [0; MAX_DIM];
    for a in (0..dim).rev() {
        idx[a] = j % q;
        j /= q;
    }
    idx
}

/// `values[j] = Σ_n c_n Φ[n][j]` on the field's quadrature nodes.
pub fn synthesize(field: &SpectralField) -> Vec<Complex64> {
    synthesize_on(field.basis(), field.coeffs())
}

/// Synthesis of raw coefficients on the nodes of `grid` (modes matched by position).
pub fn synthesize_on(grid: &BasisGrid, coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = grid.node_count();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (i, c) in coeffs.iter().enumerate() {
        if *c == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, &phi) in out.iter_mut().zip(grid.eval_row(i)) {
            *o += c * phi;
        }
    }
    out
}

/// `c_n = Σ_j w_j Φ[n][j] values[j]`.
pub fn analyze(values: &[Complex64], basis: &Arc<BasisGrid>) -> Result<SpectralField> {
    let coeffs = analyze_on(basis, values)?;
    SpectralField::new(basis.clone(), coeffs)
}

pub fn analyze_on(grid: &BasisGrid, values: &[Complex64]) -> Result<Vec<Complex64>> {
    if values.len() != grid.node_count() {
        return Err(LabError::LengthMismatch {
            expected: grid.node_count(),
            got: values.len(),
        });
    }
    let weighted: Vec<Complex64> = values.iter().zip(grid.weights()).map(|(v, w)| v * *w).collect();
    Ok((0..grid.len())
        .map(|i| {
            grid.eval_row(i)
                .iter()
                .zip(&weighted)
                .map(|(phi, v)| v * *phi)
                .sum()
        })
        .collect())
}

/// Analysis together with the out-of-span energy `Σ w |f|^2 - ‖c‖^2`.
pub fn analyze_with_residual(values: &[Complex64], basis: &Arc<BasisGrid>) -> Result<(SpectralField, f64)> {
    let field = analyze(values, basis)?;
    let total: f64 = values.iter().zip(basis.weights()).map(|(v, w)| w * v.norm_sqr()).sum();
    let kept: f64 = field.coeffs().iter().map(|c| c.norm_sqr()).sum();
    Ok((field, (total - kept).max(0.0)))
}

/// Partial derivatives `∂_a u` for each axis, in a basis of degree `N + 1`.
pub fn derivative_coefficients(field: &SpectralField) -> Result<Vec<SpectralField>> {
    let basis = field.basis();
    let n1 = basis.max_degree() + 1;
    let target = build_basis(basis.dim(), n1, basis.quad_per_axis().max(2 * (n1 + 1)))?;
    let mut out = Vec::with_capacity(basis.dim());
    for axis in 0..basis.dim() {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); target.len()];
        for (i, c) in field.coeffs().iter().enumerate() {
            let m = basis.modes()[i];
            let k = m.components()[axis] as f64;
            if let Some(lo) = m.shifted(axis, -1) {
                let j = target.index_of(&lo).expect("lower mode in span");
                coeffs[j] += c * (k / 2.0).sqrt();
            }
            let hi = m.shifted(axis, 1).expect("shift up");
            let j = target.index_of(&hi).expect("upper mode in span");
            coeffs[j] -= c * ((k + 1.0) / 2.0).sqrt();
        }
        out.push(SpectralField::new(target.clone(), coeffs)?);
    }
    Ok(out)
}

/// Uniform grid on `[-L, L]^d` used for sup-norms and frame dumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditGrid {
    pub dim: usize,
    pub half_width: f64,
    pub axis: Vec<f64>,
    pub spacing: f64,
}

/// Points per unit length of the audit grid for dimension `d`.
pub fn default_audit_density(dim: usize) -> f64 {
    match dim {
        1 | 2 => 16.0,
        _ => 4.0,
    }
}

impl AuditGrid {
    /// `L = sqrt(2N + d) + 4`.
    pub fn for_degree(dim: usize, max_degree: usize) -> Self {
        let l = ((2 * max_degree + dim) as f64).sqrt() + 4.0;
        Self::with_density(dim, l, default_audit_density(dim))
    }

    pub fn with_density(dim: usize, half_width: f64, per_unit: f64) -> Self {
        // even interval count keeps x = 0 on the grid
        let intervals = (half_width * per_unit).ceil().max(1.0) as usize * 2;
        let spacing = 2.0 * half_width / intervals as f64;
        let axis = (0..=intervals).map(|i| -half_width + i as f64 * spacing).collect();
        Self {
            dim,
            half_width,
            axis,
            spacing,
        }
    }

    /// Same point count, coordinates stretched by `factor`.
    pub fn stretched(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            half_width: self.half_width * factor,
            axis: self.axis.iter().map(|x| x * factor).collect(),
            spacing: self.spacing * factor,
        }
    }

    pub fn len(&self) -> usize {
        self.axis.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Volume element of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn point(&self, j: usize) -> [f64; MAX_DIM] {
        let idx = split_index(j, self.axis.len(), self.dim);
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = self.axis[idx[a]];
        }
        x
    }
}

/// Row-major `(N + 1) × P` table of `h_k(points[i] * arg_scale)`.
pub fn axis_table_at(max_degree: usize, points: &[f64], arg_scale: f64) -> Vec<f64> {
    let p = points.len();
    let mut table = vec![0.0; (max_degree + 1) * p];
    let mut buf = vec![0.0; max_degree + 1];
    for (i, &x) in points.iter().enumerate() {
        hermite_functions_into(x * arg_scale, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            table[k * p + i] = *v;
        }
    }
    table
}

/// Evaluates `Σ c_n h_n(x * arg_scale)` on the tensor grid `axis^d`.
pub fn evaluate_tensor(modes: &[MultiIndex], coeffs: &[Complex64], axis: &[f64], arg_scale: f64) -> Vec<Complex64> {
    let Some(first) = modes.first() else {
        return Vec::new();
    };
    let max_degree = modes.iter().map(|m| m.degree() as usize).max().unwrap_or(0);
    TensorEvaluator::new(first.dim(), max_degree, axis, arg_scale).evaluate(modes, coeffs)
}

/// Precomputed Hermite table on a tensor grid; synthesis by sum factorization.
#[derive(Clone, Debug)]
pub struct TensorEvaluator {
    dim: usize,
    max_degree: usize,
    points: usize,
    table: Vec<f64>,
}

impl TensorEvaluator {
    pub fn new(dim: usize, max_degree: usize, axis: &[f64], arg_scale: f64) -> Self {
        Self {
            dim,
            max_degree,
            points: axis.len(),
            table: axis_table_at(max_degree, axis, arg_scale),
        }
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    fn row(&self, k: u32) -> &[f64] {
        let p = self.points;
        &self.table[k as usize * p..(k as usize + 1) * p]
    }

    pub fn evaluate(&self, modes: &[MultiIndex], coeffs: &[Complex64]) -> Vec<Complex64> {
        let zero = Complex64::new(0.0, 0.0);
        let p = self.points;
        let nd = self.max_degree + 1;
        match self.dim {
            1 => {
                let mut out = vec![zero; p];
                for (m, c) in modes.iter().zip(coeffs) {
                    if *c == zero {
                        continue;
                    }
                    for (o, h) in out.iter_mut().zip(self.row(m.comps[0])) {
                        *o += c * h;
                    }
                }
                out
            }
            2 => {
                let mut partial = vec![vec![zero; p]; nd];
                for (m, c) in modes.iter().zip(coeffs) {
                    if *c == zero {
                        continue;
                    }
                    let r = &mut partial[m.comps[0] as usize];
                    for (o, h) in r.iter_mut().zip(self.row(m.comps[1])) {
                        *o += c * h;
                    }
                }
                let mut out = vec![zero; p * p];
                for (k, r) in partial.iter().enumerate() {
                    if r.iter().all(|v| *v == zero) {
                        continue;
                    }
                    let hk = self.row(k as u32);
                    for i in 0..p {
                        let a = hk[i];
                        for (o, v) in out[i * p..(i + 1) * p].iter_mut().zip(r) {
                            *o += v * a;
                        }
                    }
                }
                out
            }
            _ => {
                // partial sums over the last axis, keyed by (n0, n1)
                let mut last = vec![vec![zero; p]; nd * nd];
                for (m, c) in modes.iter().zip(coeffs) {
                    if *c == zero {
                        continue;
                    }
                    let r = &mut last[m.comps[0] as usize * nd + m.comps[1] as usize];
                    for (o, h) in r.iter_mut().zip(self.row(m.comps[2])) {
                        *o += c * h;
                    }
                }
                let mut mid = vec![vec![zero; p * p]; nd];
                for n0 in 0..nd {
                    for n1 in 0..nd - n0 {
                        let r = &last[n0 * nd + n1];
                        if r.iter().all(|v| *v == zero) {
                            continue;
                        }
                        let h1 = self.row(n1 as u32);
                        let dst = &mut mid[n0];
                        for i in 0..p {
                            let a = h1[i];
                            for (o, v) in dst[i * p..(i + 1) * p].iter_mut().zip(r) {
                                *o += v * a;
                            }
                        }
                    }
                }
                let mut out = vec![zero; p * p * p];
                for (n0, r) in mid.iter().enumerate() {
                    if r.iter().all(|v| *v == zero) {
                        continue;
                    }
                    let h0 = self.row(n0 as u32);
                    for i in 0..p {
                        let a = h0[i];
                        for (o, v) in out[i * p * p..(i + 1) * p * p].iter_mut().zip(r) {
                            *o += v * a;
                        }
                    }
                }
                out
            }
        }
    }
}

const CACHE_MAGIC: &[u8; 8] = b"HLBASIS\0";
const CACHE_VERSION: u32 = 1;

/// Writes nodes, weights and the 1-D table in little-endian binary.
pub fn write_basis_cache(basis: &BasisGrid, mut w: impl Write) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    for v in [basis.dim, basis.max_degree, basis.quad_per_axis] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&basis.scale.to_bits().to_le_bytes())?;
    for arr in [&basis.axis_nodes, &basis.axis_weights, &basis.axis_table] {
        for v in arr.iter() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_basis_cache(mut r: impl Read) -> Result<BasisGrid> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(LabError::Checkpoint("not a basis cache file".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != CACHE_VERSION {
        return Err(LabError::Checkpoint(format!("unsupported basis cache version {version}")));
    }
    let read_u64 = |r: &mut dyn Read| -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let dim = read_u64(&mut r)? as usize;
    let max_degree = read_u64(&mut r)? as usize;
    let q = read_u64(&mut r)? as usize;
    let scale = f64::from_bits(read_u64(&mut r)?);
    if dim == 0 || dim > MAX_DIM || q == 0 {
        return Err(LabError::Checkpoint("corrupt basis cache header".into()));
    }
    let mut read_arr = |len: usize| -> Result<Vec<f64>> {
        (0..len).map(|_| read_u64(&mut r).map(f64::from_bits)).collect()
    };
    let nodes = read_arr(q)?;
    let weights = read_arr(q)?;
    let table = read_arr((max_degree + 1) * q)?;
    Ok(BasisGrid::assemble(dim, max_degree, q, scale, nodes, weights, table))
}

/// Cache file name for a key.
pub fn cache_file_name(dim: usize, max_degree: usize, quad_per_axis: usize) -> String {
    format!("basis_d{dim}_n{max_degree}_q{quad_per_axis}.bin")
}

/// Loads a basis from `dir` or builds and stores it.
pub fn load_or_build(dir: &Path, dim: usize, max_degree: usize, quad_per_axis: usize) -> Result<Arc<BasisGrid>> {
    let path = dir.join(cache_file_name(dim, max_degree, quad_per_axis));
    if path.exists() {
        let f = std::fs::File::open(&path)?;
        let basis = read_basis_cache(std::io::BufReader::new(f))?;
        if basis.dim == dim && basis.max_degree == max_degree && basis.quad_per_axis == quad_per_axis {
            return Ok(Arc::new(basis));
        }
    }
    let basis = build_basis(dim, max_degree, quad_per_axis)?;
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(&path)?;
    let mut w = std::io::BufWriter::new(f);
    write_basis_cache(&basis, &mut w)?;
    w.flush()?;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn ground_state_value_at_origin() {
        let b = build_basis(1, 0, 8).unwrap();
        assert_eq!(b.len(), 1);
        let h = crate::quadrature::hermite_functions(0, 0.0);
        assert!((h[0] - 0.751_125_544_464_942_5).abs() < 1e-15);
        assert!((PI.powf(-0.25) - h[0]).abs() < 1e-16);
    }

    #[test]
    fn gram_is_identity() {
        let b = build_basis(1, 32, 128).unwrap();
        assert!(b.gram_deviation() <= 1e-10);
        let b2 = build_basis(2, 6, 14).unwrap();
        assert!(b2.gram_deviation() <= 1e-10);
    }

    #[test]
    fn enumeration_sizes_and_order() {
        let b = build_basis(2, 3, 16).unwrap();
        assert_eq!(b.len(), 10);
        let comps: Vec<Vec<u32>> = b.modes().iter().map(|m| m.components().to_vec()).collect();
        assert_eq!(comps[0], vec![0, 0]);
        assert_eq!(comps[1], vec![1, 0]);
        assert_eq!(comps[2], vec![0, 1]);
        assert_eq!(comps[3], vec![2, 0]);
        assert_eq!(mode_count(3, 4), 35);
        assert_eq!(enumerate_modes(3, 4).len(), 35);
        for (i, m) in b.modes().iter().enumerate() {
            assert_eq!(b.index_of(m), Some(i));
        }
    }

    #[test]
    fn rejects_small_quadrature_and_budget() {
        assert!(matches!(build_basis(1, 10, 20), Err(LabError::QuadratureTooSmall { .. })));
        assert!(matches!(
            BasisGrid::new(3, 40, 82, 1000),
            Err(LabError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn eigenvalue_convention() {
        assert_eq!(eigenvalue(&MultiIndex::scalar(0), 1), 1.0);
        assert_eq!(eigenvalue(&MultiIndex::new(&[0, 0, 0]).unwrap(), 3), 3.0);
        assert_eq!(eigenvalue(&MultiIndex::scalar(5), 1), 11.0);
    }

    #[test]
    fn synthesize_and_analyze() {
        let b = build_basis(1, 8, 18).unwrap();
        let unit = SpectralField::unit(b.clone(), 0);
        let vals = synthesize(&unit);
        for (v, x) in vals.iter().zip(b.axis_nodes()) {
            assert!((v.re - PI.powf(-0.25) * (-x * x / 2.0).exp()).abs() < 1e-15);
        }
        let zero = SpectralField::zeros(b.clone());
        assert!(synthesize(&zero).iter().all(|v| v.norm() == 0.0));
        // x h_0 = h_1 / sqrt 2
        let xs: Vec<Complex64> = b
            .axis_nodes()
            .iter()
            .map(|&x| c(x * PI.powf(-0.25) * (-x * x / 2.0).exp()))
            .collect();
        let f = analyze(&xs, &b).unwrap();
        assert!((f.coeffs()[1].re - 0.5f64.sqrt()).abs() < 1e-13);
        assert!(analyze(&xs[1..], &b).is_err());
    }

    #[test]
    fn out_of_span_energy_is_flagged() {
        let b = build_basis(1, 8, 18).unwrap();
        let vals: Vec<Complex64> = b
            .axis_nodes()
            .iter()
            .map(|&x| c(crate::quadrature::hermite_functions(9, x)[9]))
            .collect();
        let (f, energy) = analyze_with_residual(&vals, &b).unwrap();
        assert!(f.l2_norm() < 1e-10);
        assert!((energy - 1.0).abs() < 1e-10);
    }

    #[test]
    fn derivative_of_ground_state() {
        let b = build_basis(1, 4, 10).unwrap();
        let d = derivative_coefficients(&SpectralField::unit(b, 0)).unwrap();
        assert_eq!(d[0].basis().max_degree(), 5);
        assert!((d[0].coeffs()[1].re + 0.5f64.sqrt()).abs() < 1e-15);
        assert!(d[0].coeffs()[0].norm() == 0.0);
    }

    #[test]
    fn derivative_norms() {
        let b = build_basis(1, 40, 82).unwrap();
        for n in 0..=40 {
            let d = derivative_coefficients(&SpectralField::unit(b.clone(), n)).unwrap();
            let e = d[0].l2_norm().powi(2);
            assert!((e - (2.0 * n as f64 + 1.0) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn audit_grid_size() {
        let g = AuditGrid::for_degree(1, 64);
        let l = (129f64).sqrt() + 4.0;
        assert!((g.half_width - l).abs() < 1e-15);
        assert!(g.spacing <= 1.0 / 16.0 + 1e-15);
        assert!((g.axis[0] + l).abs() < 1e-12 && (g.axis.last().unwrap() - l).abs() < 1e-12);
    }

    #[test]
    fn tensor_evaluation_matches_direct_sum() {
        for dim in 1..=3 {
            let modes = enumerate_modes(dim, 3);
            let coeffs: Vec<Complex64> = (0..modes.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
                .collect();
            let axis = vec![-1.3, -0.2, 0.4, 2.0];
            let vals = evaluate_tensor(&modes, &coeffs, &axis, 0.9);
            let p = axis.len();
            for (j, v) in vals.iter().enumerate() {
                let idx = split_index(j, p, dim);
                let mut direct = Complex64::new(0.0, 0.0);
                for (m, c) in modes.iter().zip(&coeffs) {
                    let mut prod = 1.0;
                    for a in 0..dim {
                        prod *= crate::quadrature::hermite_functions(3, axis[idx[a]] * 0.9)[m.comps[a] as usize];
                    }
                    direct += c * prod;
                }
                assert!((v - direct).norm() < 1e-14, "dim {dim}");
            }
        }
    }

    #[test]
    fn cache_round_trip_is_bit_identical() {
        let b = build_basis(2, 5, 12).unwrap();
        let mut bytes = Vec::new();
        write_basis_cache(&b, &mut bytes).unwrap();
        let r = read_basis_cache(bytes.as_slice()).unwrap();
        assert_eq!(r.key(), b.key());
        let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same(r.eval_table(), b.eval_table()));
        assert!(same(r.weights(), b.weights()));
        assert!(same(r.axis_nodes(), b.axis_nodes()));
    }
}
