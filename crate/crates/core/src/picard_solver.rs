//! Picard iteration for the weighted harmonic NLS
//!
//! `i ∂_t u - H u = K cos(2t)^e |u|^{p-1} u`, `e = d(p-1)/2 - 2`,
//!
//! on `[-T, T]` with `T ≤ π/4`, written in Duhamel form
//! `u(t) = e^{-itH}(u0 - i I(t))`, `I(t) = ∫_0^t e^{isH} F(u(s)) ds`.
//! The nonlinearity is evaluated on the de-aliased quadrature grid and the
//! time integral by cumulative Simpson from `t = 0` outward.

use std::f64::consts::FRAC_PI_4;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid_cache;
use crate::hermite_basis::{analyze_on, synthesize_on, AuditGrid, BasisGrid, TensorEvaluator};
use crate::lens_free::{lens_forward, lens_time, HarmonicFlow, PhysicalFrame};
use crate::report::Report;
use crate::spectral_ops::{classical_sobolev_norm, l2, modulus, phase, trapezoid_nodes, SpectralField};
use crate::stats;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Field norms above this multiple of the initial norm count as blow-up.
pub const BLOWUP_FACTOR: f64 = 1e6;

fn minus_i(c: Complex64) -> Complex64 {
    Complex64::new(c.im, -c.re)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dim: usize,
    pub nonlinearity_p: u32,
    #[serde(rename = "K")]
    pub k_sign: i32,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub max_degree: usize,
    pub time_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Reporting regularity; the midpoint of the admissible window when unset.
    pub s: Option<f64>,
    /// Drop the nonlinearity (pure harmonic flow).
    pub linear_only: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            nonlinearity_p: 5,
            k_sign: 1,
            t_final: FRAC_PI_4,
            max_degree: 32,
            time_nodes: 65,
            tol: 1e-12,
            max_iter: 50,
            s: None,
            linear_only: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(LabError::invalid("dim", "must be 1, 2 or 3"));
        }
        let p = self.nonlinearity_p;
        if p < 5 || p % 2 == 0 {
            return Err(LabError::invalid("nonlinearity_p", "must be odd ≥ 5"));
        }
        if self.k_sign != 1 && self.k_sign != -1 {
            return Err(LabError::invalid("K", "must be +1 or -1"));
        }
        if !(self.t_final > 0.0 && self.t_final <= FRAC_PI_4 * (1.0 + 1e-15)) {
            return Err(LabError::invalid("T", "must lie in (0, π/4]"));
        }
        if self.time_nodes < 33 || self.time_nodes % 2 == 0 {
            return Err(LabError::invalid("time_nodes", "must be odd ≥ 33"));
        }
        if !(self.tol > 0.0) {
            return Err(LabError::invalid("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(LabError::invalid("max_iter", "must be ≥ 1"));
        }
        if (self.dim * (p as usize - 1)) % 2 != 0 {
            return Err(LabError::invalid("nonlinearity_p", "gives a non-integer cosine exponent"));
        }
        if let Some(s) = self.s {
            let (lo, hi) = self.sobolev_window();
            if !(s > lo && s < hi) {
                return Err(LabError::invalid("s", format!("must lie in ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Exponent of `cos(2t)` in the weight.
    pub fn cos_exponent(&self) -> u32 {
        (self.dim * (self.nonlinearity_p as usize - 1) / 2 - 2) as u32
    }

    /// `]d/2 - 2/(p-1), d/2[`.
    pub fn sobolev_window(&self) -> (f64, f64) {
        let d = self.dim as f64;
        (d / 2.0 - 2.0 / (self.nonlinearity_p as f64 - 1.0), d / 2.0)
    }

    pub fn sobolev_s(&self) -> f64 {
        self.s.unwrap_or_else(|| {
            let (lo, hi) = self.sobolev_window();
            0.5 * (lo + hi)
        })
    }

    pub fn step(&self) -> f64 {
        2.0 * self.t_final / (self.time_nodes - 1) as f64
    }

    pub fn times(&self) -> Vec<f64> {
        let c = (self.time_nodes / 2) as f64;
        let h = self.step();
        (0..self.time_nodes).map(|k| (k as f64 - c) * h).collect()
    }
}

/// Cumulative integrals `∫_0^{t_k} g` on a uniform grid centred at `t = 0`.
///
/// Even step counts use composite Simpson; odd counts end with the 3/8 rule,
/// and the first step uses the four-point cubic rule (the centred one, with
/// a node behind the origin, when fewer than three steps are available).
pub fn cumulative_from_center(g: &[Vec<Complex64>], h: f64) -> Vec<Vec<Complex64>> {
    let m = g.len();
    let c = m / 2;
    let len = g.first().map_or(0, |v| v.len());
    let mut out = vec![vec![ZERO; len]; m];
    for dir in [1isize, -1] {
        let hs = dir as f64 * h;
        let f = |j: usize| &g[(c as isize + dir * j as isize) as usize];
        if c == 1 || c == 2 {
            let behind = &g[(c as isize - dir) as usize];
            let (wb, w) = if c == 1 {
                (-1.0 / 12.0, [8.0 / 12.0, 5.0 / 12.0, 0.0])
            } else {
                (-1.0 / 24.0, [13.0 / 24.0, 13.0 / 24.0, -1.0 / 24.0])
            };
            let dst = &mut out[(c as isize + dir) as usize];
            for (k, o) in dst.iter_mut().enumerate() {
                *o = hs * (wb * behind[k] + w[0] * f(0)[k] + w[1] * f(1)[k]);
                if c == 2 {
                    *o += hs * w[2] * f(2)[k];
                }
            }
        }
        for j in 1..=c {
            if j == 1 && c < 3 {
                continue;
            }
            let mut w = vec![0.0; (j + 1).max(4)];
            if j == 1 {
                for (i, a) in [9.0, 19.0, -5.0, 1.0].iter().enumerate() {
                    w[i] = a / 24.0;
                }
            } else {
                let simpson_end = if j % 2 == 0 { j } else { j - 3 };
                for i in (0..simpson_end).step_by(2) {
                    w[i] += 1.0 / 3.0;
                    w[i + 1] += 4.0 / 3.0;
                    w[i + 2] += 1.0 / 3.0;
                }
                if j % 2 == 1 {
                    for (i, a) in [1.0, 3.0, 3.0, 1.0].iter().enumerate() {
                        w[j - 3 + i] += 3.0 * a / 8.0;
                    }
                }
            }
            let dst = &mut out[(c as isize + dir * j as isize) as usize];
            for (i, wi) in w.iter().enumerate() {
                if *wi == 0.0 {
                    continue;
                }
                for (o, v) in dst.iter_mut().zip(f(i)) {
                    *o += v * (wi * hs);
                }
            }
        }
    }
    out
}

/// Precomputed grids and phases for one configuration.
struct Engine {
    cfg: SolverConfig,
    basis: Arc<BasisGrid>,
    dealias: Arc<BasisGrid>,
    times: Vec<f64>,
    weight: Vec<f64>,
    lam2: Vec<f64>,
    stop_eval: TensorEvaluator,
    stop_weights: Vec<f64>,
}

impl Engine {
    fn new(cfg: &SolverConfig, basis: &Arc<BasisGrid>) -> Result<Self> {
        cfg.validate()?;
        if basis.dim() != cfg.dim || basis.max_degree() != cfg.max_degree {
            return Err(LabError::BasisMismatch);
        }
        let dealias = grid_cache::dealiased(cfg.dim, cfg.max_degree, cfg.nonlinearity_p as usize)?;
        let times = cfg.times();
        let e = cfg.cos_exponent() as i32;
        let weight = times
            .iter()
            .map(|t| if cfg.linear_only { 0.0 } else { cfg.k_sign as f64 * (2.0 * t).cos().powi(e) })
            .collect();
        let lam2 = (0..basis.len()).map(|i| basis.eigenvalue_sq(i)).collect();
        let reference = basis.audit_grid();
        let density = if cfg.dim == 1 { 16.0 } else { 4.0 };
        let stop_grid = AuditGrid::with_density(cfg.dim, reference.half_width, density);
        let stop_eval = TensorEvaluator::new(cfg.dim, cfg.max_degree, &stop_grid.axis, 1.0);
        let (_, stop_weights) = trapezoid_nodes(cfg.t_final, cfg.time_nodes);
        Ok(Self {
            cfg: cfg.clone(),
            basis: basis.clone(),
            dealias,
            times,
            weight,
            lam2,
            stop_eval,
            stop_weights,
        })
    }

    /// `e^{-itH} c`.
    fn evolve(&self, c: &[Complex64], t: f64) -> Vec<Complex64> {
        c.iter().zip(&self.lam2).map(|(a, l)| a * phase(-t * l)).collect()
    }

    /// Projected `K cos(2t)^e |u|^{p-1} u` at node `k`.
    fn nonlinearity(&self, u: &[Complex64], k: usize) -> Result<Vec<Complex64>> {
        let w = self.weight[k];
        if w == 0.0 {
            return Ok(vec![ZERO; u.len()]);
        }
        let half = (self.cfg.nonlinearity_p - 1) / 2;
        let mut vals = synthesize_on(&self.dealias, u);
        for v in vals.iter_mut() {
            *v *= w * v.norm_sqr().powi(half as i32);
        }
        analyze_on(&self.dealias, &vals)
    }

    /// One application of the Duhamel map. Returns `(v_new, integrand, integrals)`.
    #[allow(clippy::type_complexity)]
    fn apply(
        &self,
        u0: &[Complex64],
        v: &[Vec<Complex64>],
        iteration: usize,
        guard: f64,
        history: &[f64],
    ) -> Result<(Vec<Vec<Complex64>>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>)> {
        let mut g = Vec::with_capacity(self.times.len());
        for (k, &t) in self.times.iter().enumerate() {
            let lin = self.evolve(u0, t);
            let u: Vec<Complex64> = lin.iter().zip(&v[k]).map(|(a, b)| a + b).collect();
            let norm = l2(&u);
            if !norm.is_finite() || (guard > 0.0 && norm > BLOWUP_FACTOR * guard) {
                return Err(LabError::Divergence {
                    iteration,
                    time_node: k,
                    norm,
                    history: history.to_vec(),
                });
            }
            let f = self.nonlinearity(&u, k)?;
            g.push(self.evolve(&f, -t));
        }
        let integrals = cumulative_from_center(&g, self.cfg.step());
        let v_new = integrals
            .iter()
            .zip(&self.times)
            .map(|(i, &t)| self.evolve(i, t).into_iter().map(minus_i).collect())
            .collect();
        Ok((v_new, g, integrals))
    }

    /// Stopping norm: `max(L^∞_t H̄^s, L²_t W̄^{s,∞})`, the latter on an audit grid.
    fn update_norm(&self, a: &[Vec<Complex64>], b: &[Vec<Complex64>]) -> f64 {
        let s = self.cfg.sobolev_s();
        let scale: Vec<f64> = self.lam2.iter().map(|l| l.powf(s / 2.0)).collect();
        let mut sup_h = 0.0f64;
        let mut l2_w = 0.0;
        for (k, (x, y)) in a.iter().zip(b).enumerate() {
            let d: Vec<Complex64> = x.iter().zip(y).zip(&scale).map(|((p, q), w)| (p - q) * w).collect();
            sup_h = sup_h.max(l2(&d));
            let vals = self.stop_eval.evaluate(self.basis.modes(), &d);
            let sup = vals.iter().map(|z| modulus(*z)).fold(0.0, f64::max);
            l2_w += self.stop_weights[k] * sup * sup;
        }
        sup_h.max(l2_w.sqrt())
    }
}

/// Iteration state; serializable for checkpoint/resume.
#[derive(Clone, Debug)]
pub struct PicardState {
    pub config: SolverConfig,
    pub u0: SpectralField,
    v: Vec<Vec<Complex64>>,
    integrand: Vec<Vec<Complex64>>,
    integrals: Vec<Vec<Complex64>>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
    guard: f64,
}

impl PicardState {
    pub fn new(u0: &SpectralField, cfg: &SolverConfig) -> Result<Self> {
        Self::from_initial(u0, cfg, None)
    }

    /// Starts from `v ≡ v_init` at every node.
    pub fn from_initial(u0: &SpectralField, cfg: &SolverConfig, v_init: Option<&SpectralField>) -> Result<Self> {
        cfg.validate()?;
        if u0.dim() != cfg.dim || u0.basis().max_degree() != cfg.max_degree {
            return Err(LabError::BasisMismatch);
        }
        let len = u0.len();
        let v0 = match v_init {
            Some(p) if p.len() != len => return Err(LabError::BasisMismatch),
            Some(p) => p.coeffs().to_vec(),
            None => vec![ZERO; len],
        };
        let guard = u0.l2_norm().max(l2(&v0));
        Ok(Self {
            config: cfg.clone(),
            u0: u0.clone(),
            v: vec![v0; cfg.time_nodes],
            integrand: vec![vec![ZERO; len]; cfg.time_nodes],
            integrals: vec![vec![ZERO; len]; cfg.time_nodes],
            iterations: 0,
            history: Vec::new(),
            converged: false,
            guard,
        })
    }

    fn engine(&self) -> Result<Engine> {
        Engine::new(&self.config, self.u0.basis())
    }

    fn step_with(&mut self, engine: &Engine) -> Result<f64> {
        let (v_new, g, integrals) = engine.apply(self.u0.coeffs(), &self.v, self.iterations + 1, self.guard, &self.history)?;
        let delta = engine.update_norm(&v_new, &self.v);
        self.v = v_new;
        self.integrand = g;
        self.integrals = integrals;
        self.iterations += 1;
        self.history.push(delta);
        if delta <= self.config.tol {
            self.converged = true;
        }
        Ok(delta)
    }

    /// One Picard step; returns the update norm.
    pub fn step(&mut self) -> Result<f64> {
        let engine = self.engine()?;
        self.step_with(&engine)
    }

    /// Iterates until convergence or `max_iter`; `after_step` sees every state.
    pub fn run(&mut self, mut after_step: impl FnMut(&PicardState) -> Result<()>) -> Result<()> {
        let engine = self.engine()?;
        while !self.converged {
            if self.iterations >= self.config.max_iter {
                return Err(LabError::MaxIterations {
                    iterations: self.iterations,
                    last_update: self.history.last().copied().unwrap_or(f64::NAN),
                    history: self.history.clone(),
                });
            }
            self.step_with(&engine)?;
            after_step(self)?;
        }
        Ok(())
    }

    pub fn into_trajectory(self) -> Result<Trajectory> {
        if !self.converged {
            return Err(LabError::NoConvergence);
        }
        let engine = self.engine()?;
        let basis = self.u0.basis().clone();
        let fields = self
            .integrals
            .iter()
            .zip(&engine.times)
            .map(|(i, &t)| {
                let w: Vec<Complex64> = self.u0.coeffs().iter().zip(i).map(|(a, b)| a + minus_i(*b)).collect();
                SpectralField::from_parts_unchecked(basis.clone(), engine.evolve(&w, t))
            })
            .collect();
        Ok(Trajectory {
            times: engine.times.clone(),
            lam2: engine.lam2.clone(),
            config: self.config,
            u0: self.u0,
            fields,
            iterations: self.iterations,
            contraction_history: self.history,
            integrals: self.integrals,
            integrand: self.integrand,
        })
    }
}

/// Converged solution on the time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub config: SolverConfig,
    pub u0: SpectralField,
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
    pub iterations: usize,
    pub contraction_history: Vec<f64>,
    integrals: Vec<Vec<Complex64>>,
    integrand: Vec<Vec<Complex64>>,
    lam2: Vec<f64>,
}

pub fn picard_solve(u0: &SpectralField, cfg: &SolverConfig) -> Result<Trajectory> {
    picard_solve_from(u0, cfg, None)
}

pub fn picard_solve_from(u0: &SpectralField, cfg: &SolverConfig, v_init: Option<&SpectralField>) -> Result<Trajectory> {
    let mut st = PicardState::from_initial(u0, cfg, v_init)?;
    st.run(|_| Ok(()))?;
    st.into_trajectory()
}

/// One application of the Duhamel map to `v` (one field per time node).
pub fn duhamel_apply(v: &[SpectralField], u0: &SpectralField, cfg: &SolverConfig) -> Result<Vec<SpectralField>> {
    let engine = Engine::new(cfg, u0.basis())?;
    if v.len() != cfg.time_nodes {
        return Err(LabError::LengthMismatch {
            expected: cfg.time_nodes,
            got: v.len(),
        });
    }
    let vc: Vec<Vec<Complex64>> = v.iter().map(|f| f.coeffs().to_vec()).collect();
    let guard = u0.l2_norm().max(vc.iter().map(|c| l2(c)).fold(0.0, f64::max));
    let (v_new, _, _) = engine.apply(u0.coeffs(), &vc, 1, guard, &[])?;
    v_new
        .into_iter()
        .map(|c| SpectralField::new(u0.basis().clone(), c))
        .collect()
}

impl Trajectory {
    pub fn center(&self) -> usize {
        self.times.len() / 2
    }

    pub fn step(&self) -> f64 {
        self.config.step()
    }

    /// Median of successive update ratios.
    pub fn contraction_factor(&self) -> f64 {
        let r: Vec<f64> = self
            .contraction_history
            .windows(2)
            .filter(|w| w[0] > 0.0 && w[1] > 0.0)
            .map(|w| w[1] / w[0])
            .collect();
        if r.is_empty() {
            0.0
        } else {
            stats::median(&r)
        }
    }

    /// R² of `ln δ_k` against `k` (geometric decay of updates).
    pub fn geometric_fit_r2(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .contraction_history
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0.0)
            .map(|(k, d)| (k as f64, d.ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        stats::linear_fit(&x, &y).ok().map(|f| f.r2)
    }

    pub fn final_update(&self) -> f64 {
        self.contraction_history.last().copied().unwrap_or(0.0)
    }

    /// Interaction-picture integral `I(s)` at an arbitrary `|s| ≤ T`,
    /// integrating the cubic interpolant of the integrand from the nearest
    /// node below.
    pub fn interaction_integral(&self, s: f64) -> Result<Vec<Complex64>> {
        let t = self.config.t_final;
        if s.abs() > t * (1.0 + 1e-14) {
            return Err(LabError::OutOfWindow { t: f64::NAN, s, window: t });
        }
        let h = self.step();
        let m = self.times.len();
        let pos = ((s + t) / h).clamp(0.0, (m - 1) as f64);
        let j = (pos.floor() as usize).min(m - 2);
        if s == self.times[j] {
            return Ok(self.integrals[j].clone());
        }
        let first = j.saturating_sub(1).min(m - 4);
        let nodes: Vec<f64> = (first..first + 4).map(|i| self.times[i]).collect();
        let lagrange = |x: f64, i: usize| -> f64 {
            (0..4)
                .filter(|&k| k != i)
                .map(|k| (x - nodes[k]) / (nodes[i] - nodes[k]))
                .product()
        };
        let (a, b) = (self.times[j], s);
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        let off = half / 3f64.sqrt();
        let mut out = self.integrals[j].clone();
        for x in [mid - off, mid + off] {
            for i in 0..4 {
                let w = half * lagrange(x, i);
                for (o, g) in out.iter_mut().zip(&self.integrand[first + i]) {
                    *o += g * w;
                }
            }
        }
        Ok(out)
    }

    /// `‖u(t_k)‖_{L²}` per node, from the unitary interaction picture.
    pub fn mass_curve(&self) -> Vec<f64> {
        self.integrals
            .iter()
            .map(|i| {
                let w: Vec<Complex64> = self.u0.coeffs().iter().zip(i).map(|(a, b)| a + minus_i(*b)).collect();
                l2(&w)
            })
            .collect()
    }

    pub fn mass_drift(&self) -> f64 {
        let m = self.mass_curve();
        let hi = m.iter().cloned().fold(f64::MIN, f64::max);
        let lo = m.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    }

    /// Max over interior nodes of `‖i ∂_t u - H u - F(u)‖_{L²}` with a
    /// fourth-order central difference in time.
    pub fn residual(&self) -> Result<f64> {
        let engine = Engine::new(&self.config, self.u0.basis())?;
        let h = self.step();
        let m = self.fields.len();
        let mut worst = 0.0f64;
        for k in 2..m - 2 {
            let c = |i: usize| self.fields[i].coeffs();
            let f = engine.nonlinearity(c(k), k)?;
            let r: Vec<Complex64> = (0..c(k).len())
                .map(|n| {
                    let dt = (-c(k + 2)[n] + 8.0 * c(k + 1)[n] - 8.0 * c(k - 1)[n] + c(k - 2)[n]) / (12.0 * h);
                    Complex64::i() * dt - c(k)[n] * self.lam2[n] - f[n]
                })
                .collect();
            worst = worst.max(l2(&r));
        }
        Ok(worst)
    }

    /// Summary report for the CLI and acceptance checks.
    pub fn report(&self) -> Result<Report> {
        let mut r = Report::new("solve_nlsh");
        let c = &self.config;
        r.resolution("N", c.max_degree)
            .resolution("time_nodes", c.time_nodes)
            .resolution("dim", c.dim)
            .resolution("nonlinearity_p", c.nonlinearity_p)
            .resolution("K", c.k_sign)
            .resolution("T", c.t_final)
            .resolution("linear_only", c.linear_only);
        r.stat("iterations", self.iterations as f64)
            .stat("contraction_factor", self.contraction_factor())
            .stat("final_update", self.final_update())
            .stat("residual", self.residual()?)
            .stat("mass_drift", self.mass_drift())
            .stat("sobolev_s", c.sobolev_s());
        if let Some(r2) = self.geometric_fit_r2() {
            r.stat("geometric_fit_r2", r2);
        }
        r.curve(
            "contraction_history",
            &["iteration", "update"],
            self.contraction_history
                .iter()
                .enumerate()
                .map(|(k, d)| vec![(k + 1) as f64, *d])
                .collect(),
        );
        r.curve(
            "mass",
            &["t", "mass"],
            self.times.iter().zip(self.mass_curve()).map(|(t, m)| vec![*t, m]).collect(),
        );
        r.note("stopping norm is the surrogate max(L^inf_t Hbar^s, L^2_t audit-sup of H^{s/2})");
        Ok(r)
    }
}

impl HarmonicFlow for Trajectory {
    fn basis(&self) -> &Arc<BasisGrid> {
        self.u0.basis()
    }

    fn window(&self) -> f64 {
        self.config.t_final
    }

    fn state_at(&self, s: f64) -> Result<SpectralField> {
        let i = self.interaction_integral(s)?;
        let w: Vec<Complex64> = self
            .u0
            .coeffs()
            .iter()
            .zip(&i)
            .zip(&self.lam2)
            .map(|((a, b), l)| (a + minus_i(*b)) * phase(-s * l))
            .collect();
        SpectralField::new(self.u0.basis().clone(), w)
    }
}

/// Solution of the free-space NLS at time `t` through the lens transform.
pub fn global_nls_solution(traj: &Trajectory, t: f64) -> Result<PhysicalFrame> {
    lens_forward(traj, t)
}

/// Asymptotic states and the scattering residual.
#[derive(Clone, Debug)]
pub struct ScatteringPair {
    pub l_plus: SpectralField,
    pub l_minus: SpectralField,
    /// `(t, ‖ũ(t) - e^{itΔ}u0 - e^{itΔ}L^±‖_{H^s})`.
    pub residual_curve: Vec<(f64, f64)>,
}

pub const DEFAULT_SCATTERING_TIMES: [f64; 3] = [1.0, 5.0, 20.0];

/// `L^± = -i I(±T)`. Since the lens image of `e^{-isH}φ` is `e^{itΔ}φ` and
/// `e^{itΔ}` is an `H^s` isometry, the residual equals `‖I(s(t)) - I(±T)‖_{H^s}`.
pub fn scattering_extract(traj: &Trajectory, u0: &SpectralField, times: &[f64]) -> Result<ScatteringPair> {
    if u0 != &traj.u0 {
        return Err(LabError::invalid("u0", "does not match the trajectory's initial datum"));
    }
    let basis = u0.basis().clone();
    let last = traj.integrals.len() - 1;
    let to_field = |c: Vec<Complex64>| SpectralField::new(basis.clone(), c);
    let l_plus = to_field(traj.integrals[last].iter().map(|c| minus_i(*c)).collect())?;
    let l_minus = to_field(traj.integrals[0].iter().map(|c| minus_i(*c)).collect())?;
    let s_reg = traj.config.sobolev_s();
    let mut curve = Vec::with_capacity(times.len());
    for &t in times {
        let s = lens_time(t);
        let end = if t >= 0.0 { &traj.integrals[last] } else { &traj.integrals[0] };
        let i = traj.interaction_integral(s).map_err(|_| LabError::OutOfWindow {
            t,
            s,
            window: traj.config.t_final,
        })?;
        let diff = to_field(i.iter().zip(end).map(|(a, b)| a - b).collect())?;
        curve.push((t, classical_sobolev_norm(&diff, s_reg)?));
    }
    Ok(ScatteringPair {
        l_plus,
        l_minus,
        residual_curve: curve,
    })
}

fn max_difference(a: &Trajectory, b: &Trajectory) -> f64 {
    a.fields
        .iter()
        .zip(&b.fields)
        .map(|(x, y)| {
            let d: Vec<Complex64> = x.coeffs().iter().zip(y.coeffs()).map(|(p, q)| p - q).collect();
            l2(&d)
        })
        .fold(0.0, f64::max)
}

fn trajectory_sup(tr: &Trajectory) -> f64 {
    let grid = tr.u0.basis().audit_grid();
    let ev = TensorEvaluator::new(tr.config.dim, tr.config.max_degree, &grid.axis, 1.0);
    tr.fields
        .iter()
        .map(|f| ev.evaluate(f.basis().modes(), f.coeffs()).iter().map(|z| modulus(*z)).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

/// Solves from `v = 0` and from `v = perturbation` and compares; also reports
/// the Gronwall observable on the companion pair `u0`, `u0 + 1e-3·perturbation`.
pub fn uniqueness_probe(u0: &SpectralField, cfg: &SolverConfig, perturbation: &SpectralField) -> Result<Report> {
    let a = picard_solve(u0, cfg)?;
    let mut r = Report::new("uniqueness_probe");
    r.resolution("N", cfg.max_degree).resolution("time_nodes", cfg.time_nodes);
    r.stat("perturbation_norm", perturbation.l2_norm());
    match picard_solve_from(u0, cfg, Some(perturbation)) {
        Ok(b) => {
            let diff = max_difference(&a, &b);
            let identical = a
                .fields
                .iter()
                .zip(&b.fields)
                .all(|(x, y)| x.coeffs().iter().zip(y.coeffs()).all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits()));
            r.stat("max_difference", diff).stat("tol", cfg.tol);
            r.stat("bitwise_identical", if identical { 1.0 } else { 0.0 });
            r.verdict(
                "fixed_point_agreement",
                diff <= 10.0 * cfg.tol,
                format!("max_t ‖u_A - u_B‖ = {diff:e} vs 10·tol = {:e}", 10.0 * cfg.tol),
            );
        }
        Err(e @ (LabError::Divergence { .. } | LabError::MaxIterations { .. })) => {
            r.verdict("fixed_point_agreement", true, format!("second initialization reported failure: {e}"));
            r.note(format!("second initialization: {e}"));
        }
        Err(e) => return Err(e),
    }
    if !perturbation.is_zero() {
        let c = picard_solve(&u0.add(&perturbation.scaled(1e-3))?, cfg)?;
        let h = a.step();
        let n2: Vec<f64> = a
            .fields
            .iter()
            .zip(&c.fields)
            .map(|(x, y)| {
                let d: Vec<Complex64> = x.coeffs().iter().zip(y.coeffs()).map(|(p, q)| p - q).collect();
                l2(&d).powi(2)
            })
            .collect();
        let mut obs = 0.0f64;
        for k in 2..n2.len() - 2 {
            let d = (-n2[k + 2] + 8.0 * n2[k + 1] - 8.0 * n2[k - 1] + n2[k - 2]) / (12.0 * h);
            if n2[k] > 0.0 {
                obs = obs.max(d.abs() / n2[k]);
            }
        }
        let pm1 = (cfg.nonlinearity_p - 1) as i32;
        let bound = 2.0 * (pm1 as f64) * (trajectory_sup(&a).powi(pm1) + trajectory_sup(&c).powi(pm1));
        r.stat("gronwall_observable", obs).stat("gronwall_bound", bound);
        r.verdict(
            "gronwall_bound",
            obs <= bound,
            format!("max |d/dt ‖D‖²| / ‖D‖² = {obs:e} vs {bound:e}"),
        );
    }
    Ok(r)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HLCHKPT\0";
const CHECKPOINT_VERSION: u32 = 1;

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn put_complex(w: &mut impl Write, v: &[Complex64]) -> Result<()> {
    put_u64(w, v.len() as u64)?;
    for c in v {
        w.write_all(&c.re.to_le_bytes())?;
        w.write_all(&c.im.to_le_bytes())?;
    }
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(get_u64(r)?))
}

fn get_len(r: &mut impl Read, limit: usize) -> Result<usize> {
    let n = get_u64(r)? as usize;
    if n > limit {
        return Err(LabError::Checkpoint(format!("length {n} exceeds limit {limit}")));
    }
    Ok(n)
}

fn get_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = get_len(r, 1 << 24)?;
    (0..n).map(|_| get_f64(r)).collect()
}

fn get_complex(r: &mut impl Read, expected: usize) -> Result<Vec<Complex64>> {
    let n = get_len(r, 1 << 24)?;
    if n != expected {
        return Err(LabError::Checkpoint(format!("expected {expected} coefficients, found {n}")));
    }
    (0..n).map(|_| Ok(Complex64::new(get_f64(r)?, get_f64(r)?))).collect()
}

impl PicardState {
    /// Little-endian binary: magic, version, JSON config, then the raw arrays.
    pub fn save(&self, mut w: impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let cfg = serde_json::to_vec(&self.config).map_err(|e| LabError::Checkpoint(e.to_string()))?;
        put_u64(&mut w, cfg.len() as u64)?;
        w.write_all(&cfg)?;
        put_u64(&mut w, self.u0.basis().quad_per_axis() as u64)?;
        put_complex(&mut w, self.u0.coeffs())?;
        put_u64(&mut w, self.iterations as u64)?;
        w.write_all(&[self.converged as u8])?;
        w.write_all(&self.guard.to_le_bytes())?;
        put_f64s(&mut w, &self.history)?;
        for block in [&self.v, &self.integrand, &self.integrals] {
            for c in block.iter() {
                put_complex(&mut w, c)?;
            }
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(LabError::Checkpoint("bad magic".into()));
        }
        let mut ver = [0u8; 4];
        r.read_exact(&mut ver)?;
        if u32::from_le_bytes(ver) != CHECKPOINT_VERSION {
            return Err(LabError::Checkpoint("unsupported version".into()));
        }
        let n = get_len(&mut r, 1 << 20)?;
        let mut cfg = vec![0u8; n];
        r.read_exact(&mut cfg)?;
        let config: SolverConfig = serde_json::from_slice(&cfg).map_err(|e| LabError::Checkpoint(e.to_string()))?;
        config.validate()?;
        let q = get_u64(&mut r)? as usize;
        let basis = grid_cache::basis(config.dim, config.max_degree, q)?;
        let len = basis.len();
        let u0 = SpectralField::new(basis, get_complex(&mut r, len)?)?;
        let iterations = get_u64(&mut r)? as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let guard = get_f64(&mut r)?;
        let history = get_f64s(&mut r)?;
        let mut blocks = Vec::with_capacity(3);
        for _ in 0..3 {
            let b: Result<Vec<Vec<Complex64>>> = (0..config.time_nodes).map(|_| get_complex(&mut r, len)).collect();
            blocks.push(b?);
        }
        let integrals = blocks.pop().unwrap_or_default();
        let integrand = blocks.pop().unwrap_or_default();
        let v = blocks.pop().unwrap_or_default();
        Ok(Self {
            config,
            u0,
            v,
            integrand,
            integrals,
            iterations,
            history,
            converged: flag[0] != 0,
            guard,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(k: i32, amp: f64) -> (SpectralField, SolverConfig) {
        let cfg = SolverConfig {
            k_sign: k,
            ..SolverConfig::default()
        };
        let basis = grid_cache::default_basis(1, cfg.max_degree).unwrap();
        (SpectralField::unit(basis, 0).scaled(amp), cfg)
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.cos_exponent(), 0);
        c.nonlinearity_p = 4;
        assert_eq!(c.validate().unwrap_err().to_string(), "nonlinearity_p must be odd ≥ 5");
        c.nonlinearity_p = 3;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            time_nodes: 64,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            t_final: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            k_sign: 2,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            dim: 2,
            nonlinearity_p: 7,
            ..Default::default()
        };
        assert_eq!(c.cos_exponent(), 4);
        assert!((SolverConfig::default().sobolev_s() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cumulative_simpson_exact_for_cubics() {
        let h = 0.1;
        let m = 41;
        let c = m / 2;
        let g: Vec<Vec<Complex64>> = (0..m)
            .map(|k| {
                let t = (k as f64 - c as f64) * h;
                vec![Complex64::new(1.0 + t - 2.0 * t * t + 0.5 * t * t * t, t)]
            })
            .collect();
        let out = cumulative_from_center(&g, h);
        for k in 0..m {
            let t = (k as f64 - c as f64) * h;
            let exact = t + t * t / 2.0 - 2.0 * t.powi(3) / 3.0 + t.powi(4) / 8.0;
            assert!((out[k][0].re - exact).abs() < 1e-13, "k={k}");
            assert!((out[k][0].im - t * t / 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_data() {
        let (u0, cfg) = reference(1, 0.0);
        let tr = picard_solve(&u0, &cfg).unwrap();
        assert_eq!(tr.iterations, 1);
        assert!(tr.fields.iter().all(|f| f.is_zero()));
        let sc = scattering_extract(&tr, &u0, &DEFAULT_SCATTERING_TIMES).unwrap();
        assert!(sc.l_plus.is_zero() && sc.l_minus.is_zero());
    }

    #[test]
    fn first_iterate_is_quintic() {
        let (_, cfg) = reference(1, 0.0);
        let basis = grid_cache::default_basis(1, cfg.max_degree).unwrap();
        let zeros = vec![SpectralField::zeros(basis.clone()); cfg.time_nodes];
        let ratio = |eps: f64| {
            let u0 = SpectralField::unit(basis.clone(), 0).scaled(eps);
            let l = duhamel_apply(&zeros, &u0, &cfg).unwrap();
            l.iter().map(|f| f.l2_norm()).fold(0.0, f64::max) / eps.powi(5)
        };
        let (a, b) = (ratio(1e-2), ratio(5e-3));
        assert!((a / b - 1.0).abs() < 0.05, "{a} {b}");
    }

    #[test]
    fn reference_run() {
        for k in [1, -1] {
            let (u0, cfg) = reference(k, 0.1);
            let tr = picard_solve(&u0, &cfg).unwrap();
            assert!(tr.iterations <= 20);
            assert!(tr.contraction_factor() < 0.5);
            assert!(tr.final_update() <= 1e-10);
            assert!(tr.residual().unwrap() <= 1e-6);
            assert!(tr.mass_drift() <= 1e-8, "drift {}", tr.mass_drift());
        }
        let (u0, cfg) = reference(1, 0.1);
        let a = picard_solve(&u0, &cfg).unwrap();
        let b = picard_solve(&u0, &SolverConfig { k_sign: -1, ..cfg }).unwrap();
        assert!(max_difference(&a, &b) > 0.0);
    }

    #[test]
    fn linear_run() {
        let (u0, mut cfg) = reference(1, 0.1);
        cfg.linear_only = true;
        cfg.time_nodes = 129;
        let tr = picard_solve(&u0, &cfg).unwrap();
        assert_eq!(tr.mass_drift(), 0.0);
        assert!(tr.residual().unwrap() <= 1e-8);
    }

    #[test]
    fn off_grid_state_matches_nodes() {
        let (u0, cfg) = reference(1, 0.3);
        let tr = picard_solve(&u0, &cfg).unwrap();
        let k = 40;
        let s = tr.times[k];
        let at = tr.state_at(s).unwrap();
        assert_eq!(at.coeffs(), tr.fields[k].coeffs());
        // halfway between nodes, compare to the average of a finer solve
        let fine = picard_solve(&u0, &SolverConfig { time_nodes: 129, ..cfg.clone() }).unwrap();
        let mid = 0.5 * (tr.times[k] + tr.times[k + 1]);
        let a = tr.state_at(mid).unwrap();
        let b = &fine.fields[2 * k + 1];
        assert!((fine.times[2 * k + 1] - mid).abs() < 1e-14);
        let d = a.sub(b).unwrap().l2_norm();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn checkpoint_round_trip_and_resume() {
        let (u0, cfg) = reference(1, 0.2);
        let mut st = PicardState::new(&u0, &cfg).unwrap();
        st.step().unwrap();
        let mut buf = Vec::new();
        st.save(&mut buf).unwrap();
        let mut resumed = PicardState::load(buf.as_slice()).unwrap();
        resumed.run(|_| Ok(())).unwrap();
        let a = resumed.into_trajectory().unwrap();
        let b = picard_solve(&u0, &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.fields.iter().zip(&b.fields) {
            assert_eq!(x.coeffs(), y.coeffs());
        }
        assert!(PicardState::load(&b"garbage!"[..]).is_err());
    }

    #[test]
    fn residual_is_fourth_order_in_time() {
        let (u0, _) = reference(1, 0.1);
        let res: Vec<f64> = [65, 129, 257]
            .iter()
            .map(|&m| {
                let cfg = SolverConfig { time_nodes: m, ..Default::default() };
                picard_solve(&u0, &cfg).unwrap().residual().unwrap()
            })
            .collect();
        for w in res.windows(2) {
            assert!((w[0] / w[1]).log2() >= 3.5, "{res:?}");
        }
    }

    #[test]
    fn scattering_small_data() {
        let (u0, cfg) = reference(1, 0.1);
        let tr = picard_solve(&u0, &cfg).unwrap();
        let sc = scattering_extract(&tr, &u0, &DEFAULT_SCATTERING_TIMES).unwrap();
        let r: Vec<f64> = sc.residual_curve.iter().map(|p| p.1).collect();
        assert!(r[0] > r[1] && r[1] > r[2] && r[2] <= 1e-3, "{r:?}");
        let (u_half, _) = reference(1, 0.05);
        let half = picard_solve(&u_half, &cfg).unwrap();
        let lp = scattering_extract(&half, &u_half, &[]).unwrap().l_plus.l2_norm();
        let slope = (sc.l_plus.l2_norm() / lp).ln() / 2f64.ln();
        assert!((slope - 5.0).abs() < 0.3, "{slope}");
        assert!(scattering_extract(&tr, &u_half, &[]).is_err());
    }

    #[test]
    fn uniqueness_from_two_starts() {
        let (u0, cfg) = reference(1, 0.1);
        let pert = SpectralField::unit(u0.basis().clone(), 2).scaled(0.05);
        let r = uniqueness_probe(&u0, &cfg, &pert).unwrap();
        assert!(r.passed(), "{}", r.to_json());
        assert!(r.value("max_difference").unwrap() <= 1e-11);
    }

    #[test]
    fn large_start_reports_divergence() {
        let (u0, cfg) = reference(1, 0.1);
        let pert = SpectralField::unit(u0.basis().clone(), 0).scaled(10.0);
        match picard_solve_from(&u0, &cfg, Some(&pert)) {
            Err(LabError::Divergence { .. }) | Err(LabError::MaxIterations { .. }) => {}
            other => panic!("expected failure, got {:?}", other.map(|t| t.iterations)),
        }
    }

    #[test]
    fn linear_solution_matches_free_propagator() {
        let basis = grid_cache::default_basis(1, 64).unwrap();
        let u0 = SpectralField::unit(basis.clone(), 0)
            .add(&SpectralField::unit(basis, 3).scaled(0.5))
            .unwrap();
        let cfg = SolverConfig {
            max_degree: 64,
            linear_only: true,
            ..Default::default()
        };
        let tr = picard_solve(&u0, &cfg).unwrap();
        for t in [0.25, 0.5] {
            let a = global_nls_solution(&tr, t).unwrap();
            let b = crate::lens_free::free_propagate(&u0, t).unwrap();
            assert!(a.l2_distance(&b).unwrap() < 1e-6);
        }
    }
}
