//! Fields on a Hermite basis, their norms, propagators and the smoothing functional.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid_cache;
use crate::hermite_basis::{AuditGrid, BasisGrid, MultiIndex, TensorEvaluator};
use crate::quadrature::hermite_functions_into;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `u = Σ c_n h_n` on a shared basis.
#[derive(Clone, Debug)]
pub struct SpectralField {
    basis: Arc<BasisGrid>,
    coeffs: Vec<Complex64>,
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.same_basis(other) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn new(basis: Arc<BasisGrid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(LabError::LengthMismatch {
                expected: basis.len(),
                got: coeffs.len(),
            });
        }
        if let Some(index) = coeffs.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(LabError::NonFinite { index });
        }
        Ok(Self { basis, coeffs })
    }

    pub(crate) fn from_parts_unchecked(basis: Arc<BasisGrid>, coeffs: Vec<Complex64>) -> Self {
        debug_assert_eq!(basis.len(), coeffs.len());
        Self { basis, coeffs }
    }

    pub fn zeros(basis: Arc<BasisGrid>) -> Self {
        let n = basis.len();
        Self {
            basis,
            coeffs: vec![ZERO; n],
        }
    }

    /// Unit coefficient on mode `index`.
    pub fn unit(basis: Arc<BasisGrid>, index: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[index] = Complex64::new(1.0, 0.0);
        f
    }

    pub fn from_real(basis: Arc<BasisGrid>, coeffs: &[f64]) -> Result<Self> {
        Self::new(basis, coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    pub fn basis(&self) -> &Arc<BasisGrid> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn same_basis(&self, other: &SpectralField) -> bool {
        Arc::ptr_eq(&self.basis, &other.basis) || self.basis.key() == other.basis.key()
    }

    /// `‖c‖_{ℓ²}`, equal to `‖u‖_{L²}`.
    pub fn l2_norm(&self) -> f64 {
        l2(&self.coeffs)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == ZERO)
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|_, c| c * a)
    }

    pub fn scaled_by(&self, a: Complex64) -> Self {
        self.map(|_, c| c * a)
    }

    /// Coefficient-wise map with the mode index.
    pub fn map(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().enumerate().map(|(i, &c)| f(i, c)).collect(),
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &SpectralField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if !self.same_basis(other) {
            return Err(LabError::BasisMismatch);
        }
        Ok(Self {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// `⟨self, other⟩`, conjugate-linear in `self`.
    pub fn inner(&self, other: &SpectralField) -> Result<Complex64> {
        if !self.same_basis(other) {
            return Err(LabError::BasisMismatch);
        }
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum())
    }

    /// Copies the coefficients into `target` mode by mode; modes missing from
    /// `target` are dropped.
    pub fn embed(&self, target: &Arc<BasisGrid>) -> Result<Self> {
        if target.dim() != self.dim() {
            return Err(LabError::BasisMismatch);
        }
        let mut out = Self::zeros(target.clone());
        for (m, c) in self.basis.modes().iter().zip(&self.coeffs) {
            if let Some(j) = target.index_of(m) {
                out.coeffs[j] = *c;
            }
        }
        Ok(out)
    }

    /// `H^{s/2} u`, i.e. `c_n ↦ λ_n^s c_n`.
    pub fn harmonic_power(&self, s: f64) -> Self {
        let b = self.basis.clone();
        self.map(|i, c| c * b.eigenvalue_sq(i).powf(s / 2.0))
    }
}

pub(crate) fn l2(c: &[Complex64]) -> f64 {
    c.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

/// `|z|` as `sqrt(re² + im²)`; exact under power-of-two scaling.
#[inline]
pub(crate) fn modulus(z: Complex64) -> f64 {
    z.norm_sqr().sqrt()
}

/// `√(Σ λ_n^{2s} |c_n|²)`.
pub fn harmonic_sobolev_norm(u: &SpectralField, s: f64) -> f64 {
    if s == 0.0 {
        return u.l2_norm();
    }
    let b = u.basis();
    u.coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| b.eigenvalue_sq(i).powf(s) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `e^{-itH} u`.
pub fn propagate_linear(u: &SpectralField, t: f64) -> SpectralField {
    let b = u.basis().clone();
    u.map(|i, c| c * phase(-t * b.eigenvalue_sq(i)))
}

/// `e^{iθ}`.
#[inline]
pub fn phase(theta: f64) -> Complex64 {
    let (s, c) = theta.sin_cos();
    Complex64::new(c, s)
}

/// `(-i)^k`, exact.
#[inline]
pub fn minus_i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

/// Unitary Fourier transform: `c_n ↦ (-i)^{|n|} c_n`.
pub fn fourier_transform(u: &SpectralField) -> SpectralField {
    let b = u.basis().clone();
    u.map(|i, c| times_unit(c, minus_i_pow(b.modes()[i].degree())))
}

/// Inverse transform: `c_n ↦ i^{|n|} c_n`.
pub fn inverse_fourier_transform(u: &SpectralField) -> SpectralField {
    let b = u.basis().clone();
    u.map(|i, c| times_unit(c, minus_i_pow(b.modes()[i].degree()).conj()))
}

/// Multiplication by one of `±1, ±i` without rounding.
#[inline]
fn times_unit(c: Complex64, unit: Complex64) -> Complex64 {
    match (unit.re as i32, unit.im as i32) {
        (1, 0) => c,
        (-1, 0) => -c,
        (0, 1) => Complex64::new(-c.im, c.re),
        _ => Complex64::new(c.im, -c.re),
    }
}

/// Extra Gauss–Hermite nodes for non-polynomial weights such as `⟨x⟩^a`.
///
/// Branch points at `±i` limit the rule to `O(e^{-2√(2q)})` accuracy.
pub(crate) fn weight_padding(dim: usize) -> usize {
    if dim == 1 {
        128
    } else {
        24
    }
}

fn weighted_grid(basis: &BasisGrid) -> Result<Arc<BasisGrid>> {
    let n = basis.max_degree();
    grid_cache::basis(basis.dim(), n, 2 * (n + 1) + weight_padding(basis.dim()))
}

/// `‖⟨x⟩^s u‖_{L²}` with `⟨x⟩ = √(1 + |x|²)`, by Gauss–Hermite quadrature.
pub fn weighted_x_l2_norm(u: &SpectralField, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(u.l2_norm());
    }
    let grid = weighted_grid(u.basis())?;
    let vals = crate::hermite_basis::synthesize_on(&grid, u.coeffs());
    let d = grid.dim();
    let total: f64 = (0..grid.node_count())
        .map(|j| {
            let x = grid.node(j);
            let r2: f64 = x[..d].iter().map(|v| v * v).sum();
            grid.weights()[j] * (1.0 + r2).powf(s) * vals[j].norm_sqr()
        })
        .sum();
    Ok(total.sqrt())
}

/// `‖|ξ|^s û‖_{L²}`.
///
/// In one dimension the integral is exact: with `u = ξ²` it becomes a
/// generalized Gauss–Laguerre integral of index `s - 1/2`.
pub fn fractional_laplacian_l2_norm(u: &SpectralField, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(LabError::invalid("s", "must be >= 0"));
    }
    if s == 0.0 {
        return Ok(u.l2_norm());
    }
    let hat = fourier_transform(u);
    if u.dim() == 1 {
        let n = u.basis().max_degree();
        let k = n / 2 + 2;
        let gl = grid_cache::laguerre(k, s - 0.5)?;
        let mut buf = vec![0.0; n + 1];
        let mut total = 0.0;
        for (&uk, &wk) in gl.nodes.iter().zip(&gl.weights) {
            hermite_functions_into(uk.sqrt(), &mut buf);
            let (mut even, mut odd) = (ZERO, ZERO);
            for (i, c) in hat.coeffs().iter().enumerate() {
                if i % 2 == 0 {
                    even += c * buf[i];
                } else {
                    odd += c * buf[i];
                }
            }
            total += wk * uk.powf(s - 0.5) * (even.norm_sqr() + odd.norm_sqr());
        }
        return Ok(total.sqrt());
    }
    let grid = weighted_grid(u.basis())?;
    let vals = crate::hermite_basis::synthesize_on(&grid, hat.coeffs());
    let d = grid.dim();
    let total: f64 = (0..grid.node_count())
        .map(|j| {
            let x = grid.node(j);
            let r2: f64 = x[..d].iter().map(|v| v * v).sum();
            grid.weights()[j] * r2.powf(s) * vals[j].norm_sqr()
        })
        .sum();
    Ok(total.sqrt())
}

/// `‖u‖_{H^s}`: the L² norm at `s = 0`, otherwise `√(‖u‖² + ‖|∇|^s u‖²)`.
pub fn classical_sobolev_norm(u: &SpectralField, s: f64) -> Result<f64> {
    if s == 0.0 {
        return Ok(u.l2_norm());
    }
    let a = u.l2_norm();
    let b = fractional_laplacian_l2_norm(u, s)?;
    Ok((a * a + b * b).sqrt())
}

/// [`classical_sobolev_norm`] with the one-dimensional Laguerre tables built
/// once, for repeated evaluation on one basis.
#[derive(Clone, Debug)]
pub struct ClassicalSobolevEvaluator {
    basis: Arc<BasisGrid>,
    s: f64,
    /// `(weight, h_0..h_N at √u_k)` per Laguerre node (d = 1, s > 0 only).
    rows: Vec<(f64, Vec<f64>)>,
}

impl ClassicalSobolevEvaluator {
    pub fn new(basis: &Arc<BasisGrid>, s: f64) -> Result<Self> {
        if !(s >= 0.0) {
            return Err(LabError::invalid("s", "must be >= 0"));
        }
        let mut rows = Vec::new();
        if basis.dim() == 1 && s > 0.0 {
            let n = basis.max_degree();
            let gl = grid_cache::laguerre(n / 2 + 2, s - 0.5)?;
            for (&uk, &wk) in gl.nodes.iter().zip(&gl.weights) {
                let mut buf = vec![0.0; n + 1];
                hermite_functions_into(uk.sqrt(), &mut buf);
                rows.push((wk * uk.powf(s - 0.5), buf));
            }
        }
        Ok(Self {
            basis: basis.clone(),
            s,
            rows,
        })
    }

    pub fn eval(&self, u: &SpectralField) -> Result<f64> {
        if self.basis.key() != u.basis().key() {
            return Err(LabError::BasisMismatch);
        }
        if self.s == 0.0 || self.basis.dim() != 1 {
            return classical_sobolev_norm(u, self.s);
        }
        let hat = fourier_transform(u);
        let a = u.l2_norm();
        let mut total = 0.0;
        for (w, row) in &self.rows {
            let (mut even, mut odd) = (ZERO, ZERO);
            for (i, c) in hat.coeffs().iter().enumerate() {
                if i % 2 == 0 {
                    even += c * row[i];
                } else {
                    odd += c * row[i];
                }
            }
            total += w * (even.norm_sqr() + odd.norm_sqr());
        }
        Ok((a * a + total).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    HarmonicSobolev,
    ClassicalSobolev,
    WeightedX,
    FractionalLaplacianL2,
    LebesgueLr,
    SupNorm,
    /// `‖H^{s/2} u‖_{L^r}` on the audit grid (`r = ∞` by default).
    HarmonicSobolevSup,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::HarmonicSobolev => "harmonic_sobolev",
            NormKind::ClassicalSobolev => "classical_sobolev",
            NormKind::WeightedX => "weighted_x",
            NormKind::FractionalLaplacianL2 => "fractional_laplacian_L2",
            NormKind::LebesgueLr => "lebesgue_Lr",
            NormKind::SupNorm => "sup_norm",
            NormKind::HarmonicSobolevSup => "harmonic_sobolev_sup",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    #[serde(default)]
    pub s: f64,
    #[serde(default = "infinity")]
    pub r: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl NormSpec {
    pub fn new(kind: NormKind, s: f64, r: f64) -> Result<Self> {
        let spec = Self { kind, s, r };
        spec.validate()?;
        Ok(spec)
    }

    pub fn l2() -> Self {
        Self {
            kind: NormKind::HarmonicSobolev,
            s: 0.0,
            r: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.0) {
            return Err(LabError::invalid("s", "must be >= 0"));
        }
        if !(self.r >= 2.0) {
            return Err(LabError::invalid("r", "must be >= 2"));
        }
        Ok(())
    }

    fn uses_audit_grid(&self) -> bool {
        matches!(
            self.kind,
            NormKind::LebesgueLr | NormKind::SupNorm | NormKind::HarmonicSobolevSup
        )
    }
}

/// L^r norm (Riemann sum) of grid values, `r = ∞` giving the max.
pub(crate) fn grid_lr_norm(values: &[Complex64], cell_volume: f64, r: f64) -> f64 {
    let m = values.iter().map(|v| modulus(*v)).fold(0.0, f64::max);
    if m == 0.0 || r.is_infinite() {
        return m;
    }
    let sum: f64 = values.iter().map(|v| (modulus(*v) / m).powf(r)).sum();
    m * (sum * cell_volume).powf(1.0 / r)
}

/// Spatial norm evaluator with precomputed audit tables.
#[derive(Clone, Debug)]
pub struct NormEvaluator {
    spec: NormSpec,
    basis: Arc<BasisGrid>,
    audit: Option<(AuditGrid, TensorEvaluator)>,
}

impl NormEvaluator {
    pub fn new(basis: &Arc<BasisGrid>, spec: NormSpec) -> Result<Self> {
        spec.validate()?;
        let audit = if spec.uses_audit_grid() {
            let grid = basis.audit_grid();
            let eval = TensorEvaluator::new(basis.dim(), basis.max_degree(), &grid.axis, 1.0);
            Some((grid, eval))
        } else {
            None
        };
        Ok(Self {
            spec,
            basis: basis.clone(),
            audit,
        })
    }

    pub fn spec(&self) -> NormSpec {
        self.spec
    }

    pub fn audit_grid(&self) -> Option<&AuditGrid> {
        self.audit.as_ref().map(|(g, _)| g)
    }

    pub fn eval(&self, u: &SpectralField) -> Result<f64> {
        if !Arc::ptr_eq(&self.basis, u.basis()) && self.basis.key() != u.basis().key() {
            return Err(LabError::BasisMismatch);
        }
        let s = self.spec.s;
        match self.spec.kind {
            NormKind::HarmonicSobolev => Ok(harmonic_sobolev_norm(u, s)),
            NormKind::ClassicalSobolev => classical_sobolev_norm(u, s),
            NormKind::WeightedX => weighted_x_l2_norm(u, s),
            NormKind::FractionalLaplacianL2 => fractional_laplacian_l2_norm(u, s),
            NormKind::LebesgueLr | NormKind::SupNorm | NormKind::HarmonicSobolevSup => {
                let (grid, eval) = self.audit.as_ref().expect("audit tables");
                let (field, r) = match self.spec.kind {
                    NormKind::LebesgueLr => (None, self.spec.r),
                    NormKind::SupNorm => (None, f64::INFINITY),
                    _ => (Some(u.harmonic_power(s)), self.spec.r),
                };
                let coeffs = field.as_ref().map(|f| f.coeffs()).unwrap_or(u.coeffs());
                let vals = eval.evaluate(self.basis.modes(), coeffs);
                Ok(grid_lr_norm(&vals, grid.cell_volume(), r))
            }
        }
    }
}

pub fn spatial_norm(u: &SpectralField, spec: &NormSpec) -> Result<f64> {
    NormEvaluator::new(u.basis(), *spec)?.eval(u)
}

/// `‖u‖_{L^r}` on the audit grid.
pub fn lebesgue_norm(u: &SpectralField, r: f64) -> Result<f64> {
    spatial_norm(u, &NormSpec::new(NormKind::LebesgueLr, 0.0, r)?)
}

/// `sup |u|` on the audit grid.
pub fn sup_norm(u: &SpectralField) -> Result<f64> {
    spatial_norm(u, &NormSpec::new(NormKind::SupNorm, 0.0, f64::INFINITY)?)
}

/// Uniform nodes `t_k` on `[-T, T]` with trapezoid weights.
pub fn trapezoid_nodes(t_max: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * t_max / (nodes - 1) as f64;
    let t = (0..nodes).map(|k| -t_max + k as f64 * h).collect();
    let w = (0..nodes)
        .map(|k| if k == 0 || k + 1 == nodes { 0.5 * h } else { h })
        .collect();
    (t, w)
}

/// `L^q_t` norm of sampled values with trapezoid weights; homogeneous of degree one.
pub(crate) fn time_lq(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let m = values.iter().copied().fold(0.0, f64::max);
    if m == 0.0 || q.is_infinite() {
        return m;
    }
    let sum: f64 = values.iter().zip(weights).map(|(v, w)| w * (v / m).powf(q)).sum();
    m * sum.powf(1.0 / q)
}

/// `‖e^{-itH} u0‖_{L^q([-T, T], X)}` with `X` given by `norm`.
pub fn spacetime_norm(u0: &SpectralField, q: f64, norm: &NormSpec, t_max: f64, time_nodes: usize) -> Result<f64> {
    let eval = NormEvaluator::new(u0.basis(), *norm)?;
    spacetime_norm_with(&eval, u0, q, t_max, time_nodes)
}

pub fn spacetime_norm_with(
    eval: &NormEvaluator,
    u0: &SpectralField,
    q: f64,
    t_max: f64,
    time_nodes: usize,
) -> Result<f64> {
    if time_nodes < 16 {
        return Err(LabError::invalid("time_nodes", "must be >= 16"));
    }
    if !(q >= 1.0) {
        return Err(LabError::invalid("q", "must be in [1, ∞]"));
    }
    if !(t_max > 0.0) {
        return Err(LabError::invalid("T", "must be positive"));
    }
    let (ts, ws) = trapezoid_nodes(t_max, time_nodes);
    let vals = ts
        .iter()
        .map(|&t| eval.eval(&propagate_linear(u0, t)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(time_lq(&vals, &ws, q))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingVariant {
    /// `⟨x⟩^{-(1/2-ε)} H^{1/4-ε}`, normalized by `‖u0‖_{L²}`.
    #[serde(rename = "sqrtH")]
    SqrtH,
    /// `⟨x⟩^{-(1/2-ε)} |∇|^{d/2-2ε}`, normalized by `‖u0‖_{H̄^{(d-1)/2}}`.
    FractionalGrad,
}

/// Largest extension degree used to expand `|∇|^σ h_n`.
pub const MAX_EXTENSION_DEGREE: usize = 1024;

/// Per-basis tables for the smoothing functional
/// `‖⟨x⟩^{-(1/2-ε)} A e^{itH} u0‖_{L²([-2π, 2π] × R^d)} / ‖u0‖_X`.
///
/// `A h_n` is stored on a quadrature grid as a real function (the Fourier
/// phases `i^{m-n}` are real for `m ≡ n mod 2`).
#[derive(Clone, Debug)]
pub struct SmoothingOperator {
    variant: SmoothingVariant,
    eps: f64,
    basis: Arc<BasisGrid>,
    /// weight × quadrature weight at each grid node
    node_weights: Vec<f64>,
    /// `modes × nodes`
    images: Vec<f64>,
    extension_degree: usize,
}

impl SmoothingOperator {
    pub fn new(basis: &Arc<BasisGrid>, eps: f64, variant: SmoothingVariant) -> Result<Self> {
        let ext = match basis.dim() {
            1 => (4 * basis.max_degree()).clamp(16, MAX_EXTENSION_DEGREE),
            _ => (2 * basis.max_degree()).max(8),
        };
        Self::with_extension(basis, eps, variant, ext)
    }

    pub fn with_extension(basis: &Arc<BasisGrid>, eps: f64, variant: SmoothingVariant, extension_degree: usize) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return Err(LabError::invalid("eps", "must lie in (0, 1/2)"));
        }
        let d = basis.dim();
        let n = basis.max_degree();
        // ⟨x⟩^{-2(1/2-ε)} = (1 + |x|²)^{-(1/2-ε)}
        let exponent = -(0.5 - eps);
        match variant {
            SmoothingVariant::SqrtH => {
                let grid = grid_cache::basis(d, n, 2 * (n + 1) + weight_padding(d))?;
                let node_weights = weight_on_grid(&grid, exponent);
                let mut images = Vec::with_capacity(basis.len() * grid.node_count());
                for i in 0..basis.len() {
                    let a = basis.eigenvalue_sq(i).powf(0.25 - eps);
                    images.extend(grid.eval_row(i).iter().map(|h| a * h));
                }
                Ok(Self {
                    variant,
                    eps,
                    basis: basis.clone(),
                    node_weights,
                    images,
                    extension_degree: n,
                })
            }
            SmoothingVariant::FractionalGrad => {
                let m = extension_degree.max(n);
                let sigma = d as f64 / 2.0 - 2.0 * eps;
                let ext_grid = grid_cache::basis(d, m, 2 * (m + 1) + weight_padding(d))?;
                let s = fractional_matrix(basis, m, sigma)?;
                let node_weights = weight_on_grid(&ext_grid, exponent);
                let nodes = ext_grid.node_count();
                let ext_modes = ext_grid.len();
                let mut images = vec![0.0; basis.len() * nodes];
                for i in 0..basis.len() {
                    let dst = &mut images[i * nodes..(i + 1) * nodes];
                    for e in 0..ext_modes {
                        let v = s[i * ext_modes + e];
                        if v == 0.0 {
                            continue;
                        }
                        for (o, h) in dst.iter_mut().zip(ext_grid.eval_row(e)) {
                            *o += v * h;
                        }
                    }
                }
                Ok(Self {
                    variant,
                    eps,
                    basis: basis.clone(),
                    node_weights,
                    images,
                    extension_degree: m,
                })
            }
        }
    }

    pub fn variant(&self) -> SmoothingVariant {
        self.variant
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn extension_degree(&self) -> usize {
        self.extension_degree
    }

    fn nodes(&self) -> usize {
        self.node_weights.len()
    }

    fn denominator(&self, u0: &SpectralField) -> f64 {
        match self.variant {
            SmoothingVariant::SqrtH => u0.l2_norm(),
            SmoothingVariant::FractionalGrad => harmonic_sobolev_norm(u0, (u0.dim() as f64 - 1.0) / 2.0),
        }
    }

    fn check(&self, u0: &SpectralField) -> Result<f64> {
        if self.basis.key() != u0.basis().key() {
            return Err(LabError::BasisMismatch);
        }
        let den = self.denominator(u0);
        if den == 0.0 {
            return Err(LabError::ZeroField);
        }
        Ok(den)
    }

    /// `∫ w |Σ_n a_n A h_n|²` for the given complex weights.
    fn weighted_energy(&self, a: &[(usize, Complex64)]) -> f64 {
        let nodes = self.nodes();
        let mut acc = vec![ZERO; nodes];
        for &(i, c) in a {
            for (o, v) in acc.iter_mut().zip(&self.images[i * nodes..(i + 1) * nodes]) {
                *o += c * v;
            }
        }
        acc.iter().zip(&self.node_weights).map(|(v, w)| w * v.norm_sqr()).sum()
    }

    /// Time integral over `[-2π, 2π]` done exactly by energy shells.
    pub fn ratio(&self, u0: &SpectralField) -> Result<f64> {
        let den = self.check(u0)?;
        let mut shells: Vec<Vec<(usize, Complex64)>> = vec![Vec::new(); self.basis.max_degree() + 1];
        for (i, c) in u0.coeffs().iter().enumerate() {
            if *c != ZERO {
                shells[self.basis.modes()[i].degree() as usize].push((i, *c));
            }
        }
        let total: f64 = shells.iter().filter(|s| !s.is_empty()).map(|s| self.weighted_energy(s)).sum();
        Ok((4.0 * PI * total).sqrt() / den)
    }

    /// Same functional with the composite trapezoid rule in time.
    pub fn ratio_trapezoid(&self, u0: &SpectralField, time_nodes: usize) -> Result<f64> {
        if time_nodes < 16 {
            return Err(LabError::invalid("time_nodes", "must be >= 16"));
        }
        let den = self.check(u0)?;
        let (ts, ws) = trapezoid_nodes(2.0 * PI, time_nodes);
        let mut total = 0.0;
        for (t, w) in ts.iter().zip(&ws) {
            let a: Vec<(usize, Complex64)> = u0
                .coeffs()
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != ZERO)
                .map(|(i, c)| (i, c * phase(t * self.basis.eigenvalue_sq(i))))
                .collect();
            total += w * self.weighted_energy(&a);
        }
        Ok(total.sqrt() / den)
    }

    /// Per-mode values `‖⟨x⟩^{-(1/2-ε)} A h_n‖²`.
    pub fn mode_energies(&self) -> Vec<f64> {
        (0..self.basis.len())
            .map(|i| self.weighted_energy(&[(i, Complex64::new(1.0, 0.0))]))
            .collect()
    }
}

fn weight_on_grid(grid: &BasisGrid, exponent: f64) -> Vec<f64> {
    let d = grid.dim();
    (0..grid.node_count())
        .map(|j| {
            let x = grid.node(j);
            let r2: f64 = x[..d].iter().map(|v| v * v).sum();
            grid.weights()[j] * (1.0 + r2).powf(exponent)
        })
        .collect()
}

/// Rows `i` over the basis modes, columns over the extended modes of degree `m`:
/// `⟨h_e, |∇|^σ h_i⟩`.
fn fractional_matrix(basis: &Arc<BasisGrid>, m: usize, sigma: f64) -> Result<Vec<f64>> {
    let d = basis.dim();
    let ext = grid_cache::basis(d, m, 2 * (m + 1))?;
    let rows = basis.len();
    let cols = ext.len();
    let mut out = vec![0.0; rows * cols];
    if d == 1 {
        let n = basis.max_degree();
        let k = (m + n) / 2 + 2;
        let gl = grid_cache::laguerre(k, (sigma - 1.0) / 2.0)?;
        let mut buf = vec![0.0; m + 1];
        for (&uk, &wk) in gl.nodes.iter().zip(&gl.weights) {
            hermite_functions_into(uk.sqrt(), &mut buf);
            let f = wk * uk.powf((sigma - 1.0) / 2.0);
            for i in 0..rows {
                let hi = f * buf[i];
                let row = &mut out[i * cols..(i + 1) * cols];
                let mut e = i % 2;
                while e <= m {
                    row[e] += hi * buf[e];
                    e += 2;
                }
            }
        }
        for i in 0..rows {
            for e in (i % 2..=m).step_by(2) {
                // i^{e - i} for e ≡ i mod 2
                if ((e as i64 - i as i64) / 2).rem_euclid(2) == 1 {
                    out[i * cols + e] = -out[i * cols + e];
                }
            }
        }
        return Ok(out);
    }
    // tensor quadrature on a doubled grid; the |ξ|^σ kink makes this approximate
    let grid = grid_cache::basis(d, m, 4 * (m + 1))?;
    let wts: Vec<f64> = (0..grid.node_count())
        .map(|j| {
            let x = grid.node(j);
            let r2: f64 = x[..d].iter().map(|v| v * v).sum();
            grid.weights()[j] * r2.powf(sigma / 2.0)
        })
        .collect();
    for i in 0..rows {
        let mi = basis.modes()[i];
        let gi = grid.index_of(&mi).expect("basis mode inside extension");
        let ri = grid.eval_row(gi);
        for (e, me) in ext.modes().iter().enumerate() {
            if (me.degree() + mi.degree()) % 2 == 1 || !same_parity(me, &mi) {
                continue;
            }
            let re = grid.eval_row(e);
            let v: f64 = ri.iter().zip(re).zip(&wts).map(|((a, b), w)| a * b * w).sum();
            let shift = (me.degree() as i64 - mi.degree() as i64) / 2;
            out[i * cols + e] = if shift.rem_euclid(2) == 1 { -v } else { v };
        }
    }
    Ok(out)
}

fn same_parity(a: &MultiIndex, b: &MultiIndex) -> bool {
    a.components().iter().zip(b.components()).all(|(x, y)| (x + y) % 2 == 0)
}

/// Trapezoid evaluation of the smoothing functional.
pub fn smoothing_functional(u0: &SpectralField, eps: f64, variant: SmoothingVariant, time_nodes: usize) -> Result<f64> {
    SmoothingOperator::new(u0.basis(), eps, variant)?.ratio_trapezoid(u0, time_nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_cache::default_basis;

    #[test]
    fn harmonic_sobolev_examples() {
        let b = default_basis(1, 8).unwrap();
        assert_eq!(harmonic_sobolev_norm(&SpectralField::unit(b.clone(), 0), 2.0), 1.0);
        let v = harmonic_sobolev_norm(&SpectralField::unit(b.clone(), 5), 1.0);
        assert!((v - 11f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn propagation_is_periodic() {
        let b = default_basis(1, 10).unwrap();
        let u = SpectralField::from_real(b, &(0..11).map(|k| 1.0 / (1.0 + k as f64)).collect::<Vec<_>>()).unwrap();
        let v = propagate_linear(&u, 2.0 * PI);
        let d = v.sub(&u).unwrap().l2_norm();
        assert!(d < 1e-13);
        assert_eq!(propagate_linear(&u, 0.0), u);
    }

    #[test]
    fn fourier_examples() {
        let b = default_basis(1, 4).unwrap();
        assert_eq!(fourier_transform(&SpectralField::unit(b.clone(), 0)), SpectralField::unit(b.clone(), 0));
        assert_eq!(fourier_transform(&SpectralField::unit(b.clone(), 1)).coeffs()[1], Complex64::new(0.0, -1.0));
    }

    #[test]
    fn weighted_examples() {
        let b = default_basis(1, 6).unwrap();
        let h0 = SpectralField::unit(b.clone(), 0);
        assert_eq!(weighted_x_l2_norm(&h0, 0.0).unwrap(), 1.0);
        assert!((weighted_x_l2_norm(&h0, 1.0).unwrap() - 1.5f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn fractional_examples() {
        let b = default_basis(1, 12).unwrap();
        for n in 0..=12 {
            let v = fractional_laplacian_l2_norm(&SpectralField::unit(b.clone(), n), 1.0).unwrap();
            assert!((v - ((2 * n + 1) as f64 / 2.0).sqrt()).abs() < 1e-12, "n={n}");
        }
        let v = fractional_laplacian_l2_norm(&SpectralField::unit(b.clone(), 0), 2.0).unwrap();
        assert!((v - 3f64.sqrt() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn fractional_in_two_dimensions() {
        // ‖∇(h_a ⊗ h_b)‖² = (2a + 1)/2 + (2b + 1)/2
        let b = default_basis(2, 4).unwrap();
        let idx = b.index_of(&MultiIndex::new(&[2, 1]).unwrap()).unwrap();
        let v = fractional_laplacian_l2_norm(&SpectralField::unit(b, idx), 1.0).unwrap();
        assert!((v * v - 4.0).abs() < 1e-10);
    }

    #[test]
    fn classical_examples() {
        let b = default_basis(1, 4).unwrap();
        let h0 = SpectralField::unit(b, 0);
        assert_eq!(classical_sobolev_norm(&h0, 0.0).unwrap(), 1.0);
        let two = classical_sobolev_norm(&h0.scaled(2.0), 0.7).unwrap();
        assert_eq!(two, 2.0 * classical_sobolev_norm(&h0, 0.7).unwrap());
    }

    #[test]
    fn spacetime_examples() {
        let b = default_basis(1, 6).unwrap();
        let h0 = SpectralField::unit(b, 0);
        let v = spacetime_norm(&h0, 2.0, &NormSpec::l2(), 1.0, 33).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-14);
        let v = spacetime_norm(&h0, f64::INFINITY, &NormSpec::l2(), 3.0, 17).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!(spacetime_norm(&h0, 2.0, &NormSpec::l2(), 1.0, 8).is_err());
    }

    #[test]
    fn sup_norm_of_ground_state() {
        let b = default_basis(1, 4).unwrap();
        let v = sup_norm(&SpectralField::unit(b, 0)).unwrap();
        assert!((v - PI.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn smoothing_ground_state() {
        let b = default_basis(1, 8).unwrap();
        let h0 = SpectralField::unit(b.clone(), 0);
        let op = SmoothingOperator::new(&b, 0.25, SmoothingVariant::SqrtH).unwrap();
        let r = op.ratio(&h0).unwrap();
        let w = weighted_x_l2_norm(&h0, -(0.5 - 0.25)).unwrap();
        assert!((r - (4.0 * PI).sqrt() * w).abs() < 1e-12, "{r} {}", (4.0 * PI).sqrt() * w);
        let rt = op.ratio_trapezoid(&h0, 64).unwrap();
        assert!((rt - r).abs() < 1e-12);
        assert_eq!(op.ratio(&h0.scaled(2.0)).unwrap(), r);
    }

    #[test]
    fn shell_route_matches_trapezoid() {
        let b = default_basis(1, 10).unwrap();
        let u = SpectralField::new(
            b.clone(),
            (0..11).map(|k| Complex64::new((k as f64).cos(), 0.3 * k as f64)).collect(),
        )
        .unwrap();
        for variant in [SmoothingVariant::SqrtH, SmoothingVariant::FractionalGrad] {
            let op = SmoothingOperator::new(&b, 0.3, variant).unwrap();
            let a = op.ratio(&u).unwrap();
            let t = op.ratio_trapezoid(&u, 4 * 10 + 3).unwrap();
            assert!((a - t).abs() < 1e-11 * a, "{variant:?}: {a} vs {t}");
        }
    }

    #[test]
    fn fractional_operator_at_integer_order_is_exact() {
        // d=1, ε=1/4: σ = 0 and A is the identity
        let b = default_basis(1, 6).unwrap();
        let op = SmoothingOperator::new(&b, 0.25, SmoothingVariant::FractionalGrad).unwrap();
        let sq = SmoothingOperator::new(&b, 0.25, SmoothingVariant::SqrtH).unwrap();
        let e_frac = op.mode_energies();
        for (i, e) in e_frac.iter().enumerate() {
            let h = SpectralField::unit(b.clone(), i);
            let w = weighted_x_l2_norm(&h, -0.25).unwrap().powi(2);
            assert!((e - w).abs() < 1e-10 * w, "{i}: {e} vs {w}");
        }
        assert!(sq.mode_energies()[0] > 0.0);
    }
}
