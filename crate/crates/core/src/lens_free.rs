//! Lens transform between the harmonic flow and the free Schrödinger flow,
//! and an independent Fourier-multiplier free propagator.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::hermite_basis::{axis_table_at, AuditGrid, BasisGrid, MultiIndex, TensorEvaluator};
use crate::quadrature::GaussHermite;
use crate::spectral_ops::{self, modulus, phase, propagate_linear, SpectralField};

/// `s = ½ arctan(2t)`.
pub fn lens_time(t: f64) -> f64 {
    0.5 * (2.0 * t).atan()
}

/// `t = ½ tan(2s)`, defined for `|s| < π/4`.
pub fn inverse_lens_time(s: f64) -> Result<f64> {
    if !(s.abs() < FRAC_PI_4) {
        return Err(LabError::OutOfWindow {
            t: f64::INFINITY,
            s,
            window: FRAC_PI_4,
        });
    }
    Ok(0.5 * (2.0 * s).tan())
}

/// `√(1 + 4t²)`.
pub fn lens_stretch(t: f64) -> f64 {
    (1.0 + 4.0 * t * t).sqrt()
}

/// Anything that can report the harmonic-side state at internal time `s`.
pub trait HarmonicFlow {
    fn basis(&self) -> &Arc<BasisGrid>;
    /// Largest `|s|` the flow is known on.
    fn window(&self) -> f64;
    fn state_at(&self, s: f64) -> Result<SpectralField>;
}

/// `s ↦ e^{-isH} u0`.
#[derive(Clone, Debug)]
pub struct LinearFlow {
    pub u0: SpectralField,
}

impl LinearFlow {
    pub fn new(u0: SpectralField) -> Self {
        Self { u0 }
    }
}

impl HarmonicFlow for LinearFlow {
    fn basis(&self) -> &Arc<BasisGrid> {
        self.u0.basis()
    }

    fn window(&self) -> f64 {
        FRAC_PI_4
    }

    fn state_at(&self, s: f64) -> Result<SpectralField> {
        Ok(propagate_linear(&self.u0, s))
    }
}

/// Complex values on a (stretched) audit grid at physical time `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalFrame {
    pub grid: AuditGrid,
    pub values: Vec<Complex64>,
    pub time: f64,
}

impl PhysicalFrame {
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| modulus(*v)).fold(0.0, f64::max)
    }

    fn check_grid(&self, other: &PhysicalFrame) -> Result<()> {
        if self.values.len() != other.values.len()
            || self.grid.dim != other.grid.dim
            || (self.grid.half_width - other.grid.half_width).abs() > 1e-12 * self.grid.half_width.max(1.0)
        {
            return Err(LabError::DegenerateGrid("frames live on different grids".into()));
        }
        Ok(())
    }

    pub fn l2_distance(&self, other: &PhysicalFrame) -> Result<f64> {
        self.check_grid(other)?;
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum();
        Ok((s * self.grid.cell_volume()).sqrt())
    }

    pub fn sup_distance(&self, other: &PhysicalFrame) -> Result<f64> {
        self.check_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| modulus(a - b))
            .fold(0.0, f64::max))
    }

    /// CSV with one coordinate column per axis, then `re,im`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let names = ["x", "y", "z"];
        let header: Vec<&str> = names[..self.grid.dim].to_vec();
        writeln!(w, "{},re,im", header.join(","))?;
        for (j, v) in self.values.iter().enumerate() {
            let x = self.grid.point(j);
            for xa in &x[..self.grid.dim] {
                write!(w, "{xa:.12e},")?;
            }
            writeln!(w, "{:.15e},{:.15e}", v.re, v.im)?;
        }
        Ok(())
    }
}

/// Evaluates lens images of harmonic states; the Hermite table on the
/// reference audit grid is built once.
#[derive(Clone, Debug)]
pub struct LensMap {
    basis: Arc<BasisGrid>,
    grid: AuditGrid,
    evaluator: TensorEvaluator,
}

impl LensMap {
    pub fn new(basis: &Arc<BasisGrid>) -> Self {
        Self::with_grid(basis, basis.audit_grid())
    }

    pub fn with_grid(basis: &Arc<BasisGrid>, grid: AuditGrid) -> Self {
        let evaluator = TensorEvaluator::new(basis.dim(), basis.max_degree(), &grid.axis, 1.0);
        Self {
            basis: basis.clone(),
            grid,
            evaluator,
        }
    }

    pub fn reference_grid(&self) -> &AuditGrid {
        &self.grid
    }

    /// Frame grid at physical time `t`.
    pub fn frame_grid(&self, t: f64) -> AuditGrid {
        self.grid.stretched(lens_stretch(t))
    }

    /// `ũ(t, x) = (1+4t²)^{-d/4} u(s, x/√(1+4t²)) e^{i|x|²t/(1+4t²)}` with `u` given at `s`.
    pub fn frame(&self, u_at_s: &SpectralField, t: f64) -> Result<PhysicalFrame> {
        if !Arc::ptr_eq(u_at_s.basis(), &self.basis) && u_at_s.basis().key() != self.basis.key() {
            return Err(LabError::BasisMismatch);
        }
        let d = self.basis.dim();
        let stretch2 = 1.0 + 4.0 * t * t;
        let amp = stretch2.powf(-(d as f64) / 4.0);
        let chirp = t / stretch2;
        let grid = self.frame_grid(t);
        let raw = self.evaluator.evaluate(self.basis.modes(), u_at_s.coeffs());
        let values = raw
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                let x = grid.point(j);
                let r2: f64 = x[..d].iter().map(|a| a * a).sum();
                if t == 0.0 {
                    v
                } else {
                    v * amp * phase(r2 * chirp)
                }
            })
            .collect();
        Ok(PhysicalFrame { grid, values, time: t })
    }
}

/// Lens image at physical time `t` of a harmonic flow.
pub fn lens_forward(flow: &dyn HarmonicFlow, t: f64) -> Result<PhysicalFrame> {
    LensMap::new(flow.basis()).frame_of(flow, t)
}

impl LensMap {
    pub fn frame_of(&self, flow: &dyn HarmonicFlow, t: f64) -> Result<PhysicalFrame> {
        let s = lens_time(t);
        let window = flow.window();
        if s.abs() > window * (1.0 + 1e-14) {
            return Err(LabError::OutOfWindow { t, s, window });
        }
        self.frame(&flow.state_at(s)?, t)
    }
}

/// Largest extended degree the free propagator will use.
pub const FREE_DEGREE_CAP: usize = 2048;
/// Relative energy allowed in the top band of the extended expansion.
pub const FREE_TAIL_TOLERANCE: f64 = 1e-16;

/// A-priori extended degree for spreading a degree-`N` field to time `t`.
pub fn a_priori_degree(max_degree: usize, dim: usize, t: f64) -> usize {
    let spread = ((max_degree as f64 + dim as f64 / 2.0) * (1.0 + 4.0 * t * t)).ceil() as usize + 32;
    spread.max(2 * max_degree + 8)
}

/// Largest `|t|` whose a-priori extended degree fits under the cap.
pub fn t_max(max_degree: usize, dim: usize) -> f64 {
    let ratio = (FREE_DEGREE_CAP as f64 - 32.0) / (max_degree as f64 + dim as f64 / 2.0) - 1.0;
    if ratio <= 0.0 {
        0.0
    } else {
        0.5 * ratio.sqrt()
    }
}

/// One-dimensional free evolutions `e^{itΔ} h_n`, `n ≤ N`, sampled on an axis.
#[derive(Clone, Debug)]
pub struct FreeAxisTable {
    pub extended_degree: usize,
    /// Relative energy in the top band, per input degree.
    pub tail_energy: Vec<f64>,
    /// Row-major `(N + 1) × P`.
    pub values: Vec<Complex64>,
    pub points: usize,
}

fn chirp_degree(t: f64) -> usize {
    let r = t.abs() / (1.0 + t * t).sqrt();
    if r < 1e-3 {
        return 16;
    }
    2 * (40.0 / -r.ln()).ceil() as usize
}

/// `a[m][n] = ⟨h_m, e^{-itξ²} h_n⟩` for `m ≤ M`, `n ≤ N` (zero unless `m ≡ n mod 2`).
fn chirp_matrix(max_degree: usize, extended: usize, t: f64) -> Result<Vec<Complex64>> {
    let q = (extended + max_degree + chirp_degree(t)) / 2 + 64;
    let gh = GaussHermite::new(q)?;
    let table = axis_table_at(extended, &gh.nodes, 1.0);
    let chirped: Vec<Complex64> = gh
        .nodes
        .iter()
        .zip(&gh.weights)
        .map(|(x, w)| phase(-t * x * x) * *w)
        .collect();
    let nq = gh.nodes.len();
    let mut a = vec![Complex64::new(0.0, 0.0); (extended + 1) * (max_degree + 1)];
    for n in 0..=max_degree {
        let hn = &table[n * nq..(n + 1) * nq];
        let wn: Vec<Complex64> = hn.iter().zip(&chirped).map(|(h, c)| c * h).collect();
        for m in (n % 2..=extended).step_by(2) {
            let hm = &table[m * nq..(m + 1) * nq];
            a[m * (max_degree + 1) + n] = hm.iter().zip(&wn).map(|(h, w)| w * h).sum();
        }
    }
    Ok(a)
}

impl FreeAxisTable {
    /// Builds the table for degrees `≤ N`; the extended degree starts at
    /// the a-priori estimate and grows by half until the top-band energy is
    /// below tolerance.
    pub fn build(max_degree: usize, dim: usize, t: f64, axis: &[f64]) -> Result<Self> {
        let mut m = a_priori_degree(max_degree, dim, t);
        let nn = max_degree + 1;
        loop {
            if m > FREE_DEGREE_CAP {
                return Err(LabError::AliasingGuard {
                    t,
                    t_max: t_max(max_degree, dim),
                    required: m,
                    cap: FREE_DEGREE_CAP,
                });
            }
            let a = chirp_matrix(max_degree, m, t)?;
            let band = (m / 8).max(8);
            let tail: Vec<f64> = (0..nn)
                .map(|n| ((m + 1 - band)..=m).map(|k| a[k * nn + n].norm_sqr()).sum())
                .collect();
            if tail.iter().all(|e| *e <= FREE_TAIL_TOLERANCE) {
                let p = axis.len();
                let h = axis_table_at(m, axis, 1.0);
                let mut values = vec![Complex64::new(0.0, 0.0); nn * p];
                for k in 0..=m {
                    // i^k from the inverse transform, (-i)^n from the forward one
                    let hk = &h[k * p..(k + 1) * p];
                    for n in (k % 2..nn).step_by(2) {
                        let c = a[k * nn + n]
                            * spectral_ops::minus_i_pow(k as u32).conj()
                            * spectral_ops::minus_i_pow(n as u32);
                        if c == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for (o, hv) in values[n * p..(n + 1) * p].iter_mut().zip(hk) {
                            *o += c * hv;
                        }
                    }
                }
                return Ok(Self {
                    extended_degree: m,
                    tail_energy: tail,
                    values,
                    points: p,
                });
            }
            m += m / 2;
        }
    }

    fn row(&self, n: u32) -> &[Complex64] {
        &self.values[n as usize * self.points..(n as usize + 1) * self.points]
    }
}

/// `Σ c_n Π_j row_{n_j}(x_j)` on the tensor grid.
fn tensor_eval_complex(dim: usize, modes: &[MultiIndex], coeffs: &[Complex64], table: &FreeAxisTable) -> Vec<Complex64> {
    let p = table.points;
    let zero = Complex64::new(0.0, 0.0);
    let mut out = vec![zero; p.pow(dim as u32)];
    for (m, c) in modes.iter().zip(coeffs) {
        if *c == zero {
            continue;
        }
        match dim {
            1 => {
                for (o, v) in out.iter_mut().zip(table.row(m.components()[0])) {
                    *o += c * v;
                }
            }
            2 => {
                let (r0, r1) = (table.row(m.components()[0]), table.row(m.components()[1]));
                for i in 0..p {
                    let a = c * r0[i];
                    for (o, v) in out[i * p..(i + 1) * p].iter_mut().zip(r1) {
                        *o += a * v;
                    }
                }
            }
            _ => {
                let (r0, r1, r2) = (table.row(m.components()[0]), table.row(m.components()[1]), table.row(m.components()[2]));
                for i in 0..p {
                    let a = c * r0[i];
                    for j in 0..p {
                        let b = a * r1[j];
                        let base = (i * p + j) * p;
                        for (o, v) in out[base..base + p].iter_mut().zip(r2) {
                            *o += b * v;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Result of a free propagation with its guard diagnostics.
#[derive(Clone, Debug)]
pub struct FreeEvolution {
    pub frame: PhysicalFrame,
    pub extended_degree: usize,
    pub max_tail_energy: f64,
}

/// `e^{itΔ} u0` through Fourier transform, the multiplier `e^{-it|ξ|²}` on an
/// extended Hermite expansion, and the inverse transform. The frame grid is
/// the same as the one [`lens_forward`] uses at time `t`.
pub fn free_propagate(u0: &SpectralField, t: f64) -> Result<PhysicalFrame> {
    free_propagate_detailed(u0, t).map(|e| e.frame)
}

pub fn free_propagate_detailed(u0: &SpectralField, t: f64) -> Result<FreeEvolution> {
    if !t.is_finite() {
        return Err(LabError::invalid("t", "must be finite"));
    }
    let basis = u0.basis();
    let (dim, n) = (basis.dim(), basis.max_degree());
    let grid = basis.audit_grid().stretched(lens_stretch(t));
    if t == 0.0 {
        let frame = LensMap::new(basis).frame(u0, 0.0)?;
        return Ok(FreeEvolution {
            frame,
            extended_degree: n,
            max_tail_energy: 0.0,
        });
    }
    let table = FreeAxisTable::build(n, dim, t, &grid.axis)?;
    let values = tensor_eval_complex(dim, basis.modes(), u0.coeffs(), &table);
    let max_tail = table.tail_energy.iter().cloned().fold(0.0, f64::max);
    Ok(FreeEvolution {
        frame: PhysicalFrame { grid, values, time: t },
        extended_degree: table.extended_degree,
        max_tail_energy: max_tail,
    })
}

/// Ratio `‖ũ‖_{L⁴_t L^∞_x} / ‖u‖_{L⁴_s L^∞_x}` over `|t| ≤ t_phys`, both sides
/// with the audit-grid sup as the `L^∞` proxy and the trapezoid rule in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormComparison {
    pub physical: f64,
    pub harmonic: f64,
    pub ratio: f64,
}

pub fn lens_norm_comparison(flow: &dyn HarmonicFlow, t_phys: f64, time_nodes: usize, density: f64) -> Result<NormComparison> {
    if time_nodes < 3 || !(t_phys > 0.0) {
        return Err(LabError::invalid("time_nodes", "need ≥ 3 nodes and t > 0"));
    }
    let basis = flow.basis();
    let reference = basis.audit_grid();
    let grid = AuditGrid::with_density(basis.dim(), reference.half_width, density);
    let lens = LensMap::with_grid(basis, grid);
    let (tn, tw) = spectral_ops::trapezoid_nodes(t_phys, time_nodes);
    let mut lhs = 0.0;
    for (t, w) in tn.iter().zip(&tw) {
        lhs += w * lens.frame_of(flow, *t)?.sup_norm().powi(4);
    }
    let (sn, sw) = spectral_ops::trapezoid_nodes(lens_time(t_phys), time_nodes);
    let mut rhs = 0.0;
    for (s, w) in sn.iter().zip(&sw) {
        rhs += w * lens.frame(&flow.state_at(*s)?, 0.0)?.sup_norm().powi(4);
    }
    let (physical, harmonic) = (lhs.powf(0.25), rhs.powf(0.25));
    Ok(NormComparison {
        physical,
        harmonic,
        ratio: physical / harmonic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_cache;

    fn sample_field(n: usize, seed: u64) -> SpectralField {
        let basis = grid_cache::default_basis(1, n).unwrap();
        let coeffs = (0..=n)
            .map(|k| {
                let a = ((k as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0 - 0.5;
                let b = ((k as u64 * 40503 + 7 * seed) % 997) as f64 / 997.0 - 0.5;
                Complex64::new(a, b) / (1.0 + k as f64 * 0.1)
            })
            .collect();
        SpectralField::new(basis, coeffs).unwrap()
    }

    #[test]
    fn lens_time_maps() {
        assert_eq!(lens_time(0.0), 0.0);
        assert!((inverse_lens_time(std::f64::consts::PI / 8.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(lens_time(1e12) < FRAC_PI_4 && lens_time(1e12) > FRAC_PI_4 - 1e-11);
        assert!(lens_time(2.0) > lens_time(1.0));
        for t in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            assert!((inverse_lens_time(lens_time(t)).unwrap() - t).abs() < 1e-12 * (1.0 + t * t));
        }
        assert!(inverse_lens_time(FRAC_PI_4).is_err());
    }

    #[test]
    fn lens_identity_at_zero() {
        let u = sample_field(16, 1);
        let map = LensMap::new(u.basis());
        let f = lens_forward(&LinearFlow::new(u.clone()), 0.0).unwrap();
        let direct = map.frame(&u, 0.0).unwrap();
        assert_eq!(f.values, direct.values);
        let syn = crate::hermite_basis::evaluate_tensor(u.basis().modes(), u.coeffs(), &map.reference_grid().axis, 1.0);
        assert_eq!(f.values, syn);
    }

    #[test]
    fn lens_is_isometry() {
        let u = sample_field(24, 3);
        let flow = LinearFlow::new(u.clone());
        for t in [0.1, 0.5, 2.0, 10.0] {
            let f = lens_forward(&flow, t).unwrap();
            assert!((f.l2_norm() - u.l2_norm()).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn free_unitary_and_identity() {
        let basis = grid_cache::default_basis(1, 8).unwrap();
        let h3 = SpectralField::unit(basis.clone(), 3);
        let f = free_propagate(&h3, 0.3).unwrap();
        assert!((f.l2_norm() - 1.0).abs() < 1e-8);
        let id = free_propagate(&h3, 0.0).unwrap();
        let direct = LensMap::new(&basis).frame(&h3, 0.0).unwrap();
        assert_eq!(id.values, direct.values);
    }

    #[test]
    fn gaussian_spreading() {
        let basis = grid_cache::default_basis(1, 4).unwrap();
        let h0 = SpectralField::unit(basis, 0);
        let t: f64 = 0.5;
        let f = free_propagate(&h0, t).unwrap();
        let expect = std::f64::consts::PI.powf(-0.25) * (1.0 + 4.0 * t * t).powf(-0.25);
        assert!((f.sup_norm() - expect).abs() < 1e-10, "{} vs {expect}", f.sup_norm());
    }

    #[test]
    fn conjugation_linear_flow() {
        let u = sample_field(64, 5);
        let flow = LinearFlow::new(u.clone());
        for t in [0.25, 0.5, 1.0] {
            let a = lens_forward(&flow, t).unwrap();
            let b = free_propagate(&u, t).unwrap();
            let d = a.l2_distance(&b).unwrap();
            let m = free_propagate_detailed(&u, t).unwrap().extended_degree;
            eprintln!("t={t} distance={d:e} extended_degree={m}");
            assert!(d <= 1e-6, "t={t}: {d}");
        }
    }

    #[test]
    fn guard_refuses_large_t() {
        let u = sample_field(64, 5);
        let tm = t_max(64, 1);
        assert!(tm > 1.0);
        match free_propagate(&u, tm * 1.5) {
            Err(LabError::AliasingGuard { cap, .. }) => assert_eq!(cap, FREE_DEGREE_CAP),
            other => panic!("expected guard, got {:?}", other.map(|f| f.time)),
        }
    }

    #[test]
    fn out_of_window() {
        struct Short(LinearFlow);
        impl HarmonicFlow for Short {
            fn basis(&self) -> &Arc<BasisGrid> {
                self.0.basis()
            }
            fn window(&self) -> f64 {
                0.1
            }
            fn state_at(&self, s: f64) -> Result<SpectralField> {
                self.0.state_at(s)
            }
        }
        let flow = Short(LinearFlow::new(sample_field(4, 1)));
        assert!(matches!(lens_forward(&flow, 1.0), Err(LabError::OutOfWindow { .. })));
        assert!(lens_forward(&flow, 0.05).is_ok());
    }

    #[test]
    fn norm_comparison_stable() {
        let u = sample_field(16, 2);
        let flow = LinearFlow::new(u);
        let a = lens_norm_comparison(&flow, 2.0, 65, 16.0).unwrap();
        let b = lens_norm_comparison(&flow, 2.0, 129, 32.0).unwrap();
        assert!((a.ratio / b.ratio - 1.0).abs() < 0.1, "{a:?} {b:?}");
    }

    #[test]
    fn frame_csv() {
        let u = sample_field(2, 1);
        let f = lens_forward(&LinearFlow::new(u), 0.3).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,re,im\n"));
        assert_eq!(text.lines().count(), f.values.len() + 1);
    }
}
