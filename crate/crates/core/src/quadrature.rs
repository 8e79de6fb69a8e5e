//! Gauss rules built from the Jacobi matrix of the weight.
//!
//! Weights are returned in "adjusted" form: the classical weight function is
//! folded back in, so `Σ W_j f(x_j)` approximates `∫ f` directly for integrands
//! that carry their own Gaussian (or Laguerre) decay.

use crate::error::{LabError, Result};
use statrs::function::gamma::ln_gamma;

const RESCALE: f64 = 1e100;
const LN_RESCALE: f64 = 230.258_509_299_404_56;

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with shifts.
///
/// `diag` is overwritten with the eigenvalues (unsorted). `off[i]` couples rows
/// `i` and `i + 1`; the last entry is ignored.
pub fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if off.len() != n {
        return Err(LabError::LengthMismatch {
            expected: n,
            got: off.len(),
        });
    }
    if n == 0 {
        return Ok(());
    }
    off[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 100 {
                return Err(LabError::NoConvergence);
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Hermite functions `h_0(x), ..., h_nmax(x)` written into `out`.
///
/// The recurrence runs on rescaled values with a separate log-scale, so the
/// Gaussian factor never underflows before the polynomial part grows.
pub fn hermite_functions_into(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let mut log_scale = -0.5 * x * x - 0.25 * std::f64::consts::PI.ln();
    let mut prev = 0.0;
    let mut cur = 1.0;
    out[0] = log_scale.exp();
    for n in 0..out.len() - 1 {
        let nf = n as f64;
        let next = x * (2.0 / (nf + 1.0)).sqrt() * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += LN_RESCALE;
        }
        out[n + 1] = scaled_value(cur, log_scale);
    }
}

/// Hermite functions up to degree `nmax` at `x`.
pub fn hermite_functions(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    hermite_functions_into(x, &mut out);
    out
}

fn scaled_value(v: f64, log_scale: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        (v.abs().ln() + log_scale).exp().copysign(v)
    }
}

/// Ratio `h_q(x) / h_q'(x)` for Newton polishing; scale-free.
fn hermite_newton_step(q: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for n in 0..q {
        let nf = n as f64;
        let next = x * (2.0 / (nf + 1.0)).sqrt() * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
        }
    }
    // h_q' = sqrt(2q) h_{q-1} - x h_q
    let deriv = (2.0 * q as f64).sqrt() * prev - x * cur;
    cur / deriv
}

/// Gauss–Hermite rule with `q` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussHermite {
    /// Nodes in increasing order, symmetric about 0.
    pub nodes: Vec<f64>,
    /// Adjusted weights `w_j e^{x_j^2}`.
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(LabError::invalid("quadrature size", "must be positive"));
        }
        let mut diag = vec![0.0; q];
        let mut off: Vec<f64> = (1..=q).map(|k| (k as f64 / 2.0).sqrt()).collect();
        tridiagonal_eigenvalues(&mut diag, &mut off)?;
        diag.sort_by(|a, b| a.total_cmp(b));
        for x in diag.iter_mut() {
            for _ in 0..3 {
                let step = hermite_newton_step(q, *x);
                if !step.is_finite() {
                    break;
                }
                *x -= step;
                if step.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
        }
        for j in 0..q / 2 {
            let a = 0.5 * (diag[q - 1 - j] - diag[j]);
            diag[j] = -a;
            diag[q - 1 - j] = a;
        }
        if q % 2 == 1 {
            diag[q / 2] = 0.0;
        }
        let mut buf = vec![0.0; q];
        let mut weights: Vec<f64> = diag
            .iter()
            .map(|&x| {
                hermite_functions_into(x, &mut buf);
                let h = buf[q - 1];
                1.0 / (q as f64 * h * h)
            })
            .collect();
        for j in 0..q / 2 {
            let w = 0.5 * (weights[j] + weights[q - 1 - j]);
            weights[j] = w;
            weights[q - 1 - j] = w;
        }
        Ok(Self {
            nodes: diag,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ W_j f(x_j)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Generalized Gauss–Laguerre rule for the weight `u^alpha e^{-u}` on `[0, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussLaguerre {
    pub alpha: f64,
    pub nodes: Vec<f64>,
    /// Adjusted weights `w_k u_k^{-alpha} e^{u_k}`.
    pub weights: Vec<f64>,
}

impl GaussLaguerre {
    pub fn new(k: usize, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(LabError::invalid("quadrature size", "must be positive"));
        }
        if !(alpha > -1.0) || !alpha.is_finite() {
            return Err(LabError::invalid("alpha", "must be finite and > -1"));
        }
        let mut diag: Vec<f64> = (0..k).map(|j| 2.0 * j as f64 + alpha + 1.0).collect();
        let mut off: Vec<f64> = (1..=k)
            .map(|j| {
                let j = j as f64;
                (j * (j + alpha)).sqrt()
            })
            .collect();
        tridiagonal_eigenvalues(&mut diag, &mut off)?;
        diag.sort_by(|a, b| a.total_cmp(b));
        for u in diag.iter_mut() {
            for _ in 0..3 {
                let step = laguerre_newton_step(k, alpha, *u);
                if !step.is_finite() {
                    break;
                }
                let next = *u - step;
                if next <= 0.0 {
                    break;
                }
                *u = next;
                if step.abs() <= 1e-16 * u.abs() {
                    break;
                }
            }
        }
        let lg = ln_gamma(alpha + 1.0);
        let weights = diag
            .iter()
            .map(|&u| 1.0 / laguerre_function_square_sum(k, alpha, lg, u))
            .collect();
        Ok(Self {
            alpha,
            nodes: diag,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ W_k F(u_k)`; exact when `F = u^alpha e^{-u} P(u)` with `deg P < 2k`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(u))
            .sum()
    }
}

fn laguerre_newton_step(k: usize, alpha: f64, u: f64) -> f64 {
    let mut prev = 1.0;
    let mut cur = 1.0 + alpha - u;
    if k == 1 {
        return cur / -1.0;
    }
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + alpha - u) * cur - (jf + alpha) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
        }
    }
    // u L_k' = k L_k - (k + alpha) L_{k-1}
    let kf = k as f64;
    let deriv = (kf * cur - (kf + alpha) * prev) / u;
    cur / deriv
}

/// `Σ_{j<k} φ_j(u)^2` for the orthonormal Laguerre functions of index `alpha`.
fn laguerre_function_square_sum(k: usize, alpha: f64, ln_gamma_a1: f64, u: f64) -> f64 {
    let mut log_scale = 0.5 * alpha * u.ln() - 0.5 * u - 0.5 * ln_gamma_a1;
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum = (2.0 * log_scale).exp();
    for j in 0..k - 1 {
        let jf = j as f64;
        let a = 2.0 * jf + alpha + 1.0;
        let b = (jf * (jf + alpha)).max(0.0).sqrt();
        let b1 = ((jf + 1.0) * (jf + 1.0 + alpha)).sqrt();
        let next = ((u - a) * cur - b * prev) / b1;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE {
            cur /= RESCALE;
            prev /= RESCALE;
            log_scale += LN_RESCALE;
        }
        let v = scaled_value(cur, log_scale);
        sum += v * v;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn tridiagonal_two_by_two() {
        let mut d = vec![2.0, 2.0];
        let mut e = vec![1.0, 0.0];
        tridiagonal_eigenvalues(&mut d, &mut e).unwrap();
        d.sort_by(|a, b| a.total_cmp(b));
        assert!((d[0] - 1.0).abs() < 1e-14 && (d[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_three_point_rule() {
        // roots of H_3 are 0, ±sqrt(3/2); classical weights 2√π/3, √π/6
        let gh = GaussHermite::new(3).unwrap();
        let r = (1.5f64).sqrt();
        assert!((gh.nodes[2] - r).abs() < 1e-15);
        assert_eq!(gh.nodes[1], 0.0);
        let w_mid = 2.0 * PI.sqrt() / 3.0;
        let w_out = PI.sqrt() / 6.0 * (1.5f64).exp();
        assert!((gh.weights[1] - w_mid).abs() < 1e-14);
        assert!((gh.weights[0] - w_out).abs() < 1e-14);
    }

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let gh = GaussHermite::new(40).unwrap();
        // ∫ x^4 e^{-x^2} = 3√π/4
        let v = gh.integrate(|x| x.powi(4) * (-x * x).exp());
        assert!((v - 0.75 * PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn large_hermite_rule_has_finite_weights() {
        let gh = GaussHermite::new(512).unwrap();
        assert!(gh.weights.iter().all(|w| w.is_finite() && *w > 0.0));
        assert!(gh.nodes.windows(2).all(|p| p[0] < p[1]));
        // ∫ e^{-x^2} = √π
        let v = gh.integrate(|x| (-x * x).exp());
        assert!((v - PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hermite_functions_match_closed_forms() {
        let x = 0.7;
        let h = hermite_functions(2, x);
        let g = PI.powf(-0.25) * (-x * x / 2.0).exp();
        assert!((h[0] - g).abs() < 1e-15);
        assert!((h[1] - 2f64.sqrt() * x * g).abs() < 1e-15);
        assert!((h[2] - (2.0 * x * x - 1.0) / 2f64.sqrt() * g).abs() < 1e-15);
    }

    #[test]
    fn hermite_functions_far_out_do_not_underflow_early() {
        // turning point of h_1000 is about 44.7; the value there is O(n^{-1/12})
        let h = hermite_functions(1000, 44.0);
        assert!(h[1000].abs() > 1e-3);
        assert!(h[0] == 0.0 || h[0] < 1e-300);
    }

    #[test]
    fn laguerre_rule_integrates_moments() {
        // ∫ u^{alpha + 3} e^{-u} = Γ(alpha + 4)
        for &alpha in &[-0.7, -0.25, 0.0, 0.5, 1.5] {
            let gl = GaussLaguerre::new(12, alpha).unwrap();
            let v = gl.integrate(|u| u.powf(alpha + 3.0) * (-u).exp());
            let exact = statrs::function::gamma::gamma(alpha + 4.0);
            assert!((v - exact).abs() < 1e-12 * exact, "alpha {alpha}: {v} vs {exact}");
        }
    }

    #[test]
    fn laguerre_rule_large_size() {
        let gl = GaussLaguerre::new(400, 0.3).unwrap();
        assert!(gl.weights.iter().all(|w| w.is_finite() && *w > 0.0));
        let v = gl.integrate(|u| u.powf(0.3) * (-u).exp());
        let exact = statrs::function::gamma::gamma(1.3);
        assert!((v - exact).abs() < 1e-11);
    }
}
