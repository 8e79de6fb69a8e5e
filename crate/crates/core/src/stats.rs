//! Small statistics toolbox: estimates with standard errors, fits, ranks.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

pub fn mean_and_se(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    if values.is_empty() {
        return Estimate {
            mean: f64::NAN,
            std_error: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Estimate { mean, std_error: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

/// Binomial proportion with its standard error.
pub fn proportion(successes: usize, n: usize) -> Estimate {
    let p = successes as f64 / n as f64;
    Estimate {
        mean: p,
        std_error: (p * (1.0 - p) / n as f64).sqrt(),
    }
}

/// Wilson score interval at `z` standard deviations.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let den = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / den;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / den;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    weighted_linear_fit(x, y, &vec![1.0; x.len()])
}

pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(LabError::LengthMismatch {
            expected: x.len(),
            got: y.len().min(w.len()),
        });
    }
    if x.len() < 2 {
        return Err(LabError::EmptyFitWindow("fewer than two points".into()));
    }
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, w)| w * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, b), w)| w * (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().zip(w).map(|(b, w)| w * (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::DegenerateGrid("constant abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept, r2 })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks on ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Fit of `log S(ρ) ≈ a - b ln ρ - c ρ^γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub weighted_rss: f64,
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        a[i][..3].copy_from_slice(&m[i]);
        a[i][3] = r[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    Some([a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]])
}

fn tail_fit_at(gamma: f64, rho: &[f64], logs: &[f64], w: &[f64]) -> Option<TailFit> {
    // basis functions 1, -ln ρ, -ρ^γ
    let f = |r: f64| [1.0, -r.ln(), -r.powf(gamma)];
    let mut m = [[0.0; 3]; 3];
    let mut v = [0.0; 3];
    for ((&r, &y), &wi) in rho.iter().zip(logs).zip(w) {
        let b = f(r);
        for i in 0..3 {
            v[i] += wi * b[i] * y;
            for j in 0..3 {
                m[i][j] += wi * b[i] * b[j];
            }
        }
    }
    let p = solve3(m, v)?;
    let rss = rho
        .iter()
        .zip(logs)
        .zip(w)
        .map(|((&r, &y), &wi)| {
            let b = f(r);
            wi * (y - p[0] * b[0] - p[1] * b[1] - p[2] * b[2]).powi(2)
        })
        .sum();
    Some(TailFit {
        gamma,
        a: p[0],
        b: p[1],
        c: p[2],
        weighted_rss: rss,
    })
}

/// Profile least-squares fit of the tail exponent.
///
/// The linear parameters are solved exactly for each `γ`; `γ` itself is found
/// by a grid scan on `[0.1, 6]` followed by golden-section refinement.
/// `weights` are inverse variances of `log S`.
pub fn fit_tail_exponent(rho: &[f64], survival: &[f64], weights: &[f64]) -> Result<TailFit> {
    if rho.len() < 4 {
        return Err(LabError::EmptyFitWindow("need at least four survival points".into()));
    }
    if rho.iter().any(|r| !(*r > 0.0)) || survival.iter().any(|s| !(*s > 0.0)) {
        return Err(LabError::DegenerateGrid("rho and survival must be positive".into()));
    }
    let logs: Vec<f64> = survival.iter().map(|s| s.ln()).collect();
    let eval = |g: f64| tail_fit_at(g, rho, &logs, weights).map(|f| f.weighted_rss).unwrap_or(f64::INFINITY);
    let mut best = (f64::INFINITY, 1.0);
    let mut g = 0.1;
    while g <= 6.0 + 1e-12 {
        let r = eval(g);
        if r < best.0 {
            best = (r, g);
        }
        g += 0.02;
    }
    let gamma = golden_min(eval, (best.1 - 0.02).max(0.05), best.1 + 0.02);
    tail_fit_at(gamma, rho, &logs, weights).ok_or_else(|| LabError::DegenerateGrid("singular tail fit".into()))
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r2 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-14);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn wilson_contains_p() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi && lo > 0.0);
        let (lo, _) = wilson_interval(0, 100, 1.96);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn tail_fit_recovers_exponent() {
        let rho: Vec<f64> = (0..=60).map(|k| 1.0 + 0.05 * k as f64).collect();
        for gamma in [1.0, 1.5, 2.0] {
            let s: Vec<f64> = rho.iter().map(|r| 0.7 * r.powf(-0.3) * (-0.8 * r.powf(gamma)).exp()).collect();
            let f = fit_tail_exponent(&rho, &s, &vec![1.0; rho.len()]).unwrap();
            assert!((f.gamma - gamma).abs() < 1e-6, "{gamma}: {f:?}");
            assert!((f.c - 0.8).abs() < 1e-5);
        }
    }

    #[test]
    fn tail_fit_gaussian_survival() {
        // 2Φ̄(ρ) on [1, 4]
        let rho: Vec<f64> = (0..=60).map(|k| 1.0 + 0.05 * k as f64).collect();
        let s: Vec<f64> = rho.iter().map(|&r| statrs::function::erf::erfc(r / 2f64.sqrt())).collect();
        let f = fit_tail_exponent(&rho, &s, &vec![1.0; rho.len()]).unwrap();
        assert!((f.gamma - 2.0).abs() < 0.15, "{f:?}");
    }
}
