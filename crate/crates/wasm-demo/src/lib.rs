//! Browser bindings: Hermite eigenfunctions, lens spreading of the linear
//! flow and moment growth of random series.
//!
//! Every export wraps a plain function of the same name with a `_values`
//! suffix, so the numerics are testable off the browser.

use hermite_lab::grid_cache::default_basis;
use hermite_lab::lens_free::{lens_forward, LinearFlow};
use hermite_lab::proba_lab::{flat_coeffs, khinchin_growth};
use hermite_lab::quadrature::hermite_functions;
use hermite_lab::random_ensembles::{EnsembleSpec, Family};
use hermite_lab::SpectralField;
use wasm_bindgen::prelude::*;

const MAX_DEGREE: usize = 200;
const MAX_POINTS: usize = 4096;

/// `[x_0, h_n(x_0), x_1, h_n(x_1), ...]` on `points` equispaced nodes of `[-L, L]`.
pub fn eigenfunction_values(n: usize, half_width: f64, points: usize) -> Result<Vec<f64>, String> {
    if n > MAX_DEGREE {
        return Err(format!("degree must be at most {MAX_DEGREE}"));
    }
    if !(half_width > 0.0) || !(2..=MAX_POINTS).contains(&points) {
        return Err(format!("need half_width > 0 and 2..={MAX_POINTS} points"));
    }
    let step = 2.0 * half_width / (points - 1) as f64;
    Ok((0..points)
        .flat_map(|i| {
            let x = -half_width + step * i as f64;
            [x, hermite_functions(n, x)[n]]
        })
        .collect())
}

/// `[x_0, |u(t, x_0)|, ...]` for the free Schrödinger flow of `Σ c_k h_k`,
/// computed through the lens transform of the harmonic flow.
pub fn lens_profile_values(coeffs: &[f64], t: f64) -> Result<Vec<f64>, String> {
    if coeffs.is_empty() || coeffs.len() > 65 {
        return Err("between 1 and 65 coefficients".into());
    }
    let basis = default_basis(1, coeffs.len() - 1).map_err(|e| e.to_string())?;
    let u0 = SpectralField::from_real(basis, coeffs).map_err(|e| e.to_string())?;
    let frame = lens_forward(&LinearFlow::new(u0), t).map_err(|e| e.to_string())?;
    Ok(frame
        .values
        .iter()
        .enumerate()
        .flat_map(|(j, v)| [frame.grid.point(j)[0], v.norm()])
        .collect())
}

/// `[q, ‖S‖_q, ...]` for `S = Σ_{k<modes} g_k / √modes`, then the fitted slope last.
pub fn moment_growth_values(family: &str, gamma: f64, modes: usize, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    let family: Family = family.parse().map_err(|e: hermite_lab::LabError| e.to_string())?;
    let gamma = (family == Family::SymmetricWeibull).then_some(gamma);
    let spec = EnsembleSpec::new(family, gamma, seed).map_err(|e| e.to_string())?;
    if modes == 0 || modes > 256 {
        return Err("modes must lie in 1..=256".into());
    }
    let q_grid = [2, 4, 6, 8];
    let r = khinchin_growth(&spec, &flat_coeffs(modes), &q_grid, samples).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(2 * q_grid.len() + 1);
    for q in q_grid {
        out.push(q as f64);
        out.push(r.value(&format!("norm_q{q}")).unwrap_or(f64::NAN));
    }
    out.push(r.value("beta_hat").unwrap_or(f64::NAN));
    Ok(out)
}

#[wasm_bindgen]
pub fn eigenfunction(n: usize, half_width: f64, points: usize) -> Result<Vec<f64>, JsError> {
    eigenfunction_values(n, half_width, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn lens_profile(coeffs: Vec<f64>, t: f64) -> Result<Vec<f64>, JsError> {
    lens_profile_values(&coeffs, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn moment_growth(family: &str, gamma: f64, modes: usize, samples: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    moment_growth_values(family, gamma, modes, samples, seed).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_state_peak() {
        let v = eigenfunction_values(0, 2.0, 5).unwrap();
        assert_eq!(v[4], 0.0);
        assert!((v[5] - std::f64::consts::PI.powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_spreads() {
        // |e^{itΔ} h_0|(0) = π^{-1/4} (1 + 4t²)^{-1/4}
        for t in [0.0, 0.5, 1.0] {
            let v = lens_profile_values(&[1.0], t).unwrap();
            let mid = v.len() / 4;
            assert_eq!(v[2 * mid], 0.0);
            let want = std::f64::consts::PI.powf(-0.25) * (1.0 + 4.0 * t * t).powf(-0.25);
            assert!((v[2 * mid + 1] - want).abs() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn rademacher_single_mode_is_flat() {
        let v = moment_growth_values("rademacher", 0.0, 1, 2000, 3).unwrap();
        assert!(v[..8].chunks(2).all(|p| (p[1] - 1.0).abs() < 1e-12));
        assert!(v[8].abs() < 1e-12);
    }

    #[test]
    fn bad_inputs_are_reported() {
        assert!(eigenfunction_values(500, 1.0, 10).is_err());
        assert!(lens_profile_values(&[], 0.1).is_err());
        assert!(moment_growth_values("cauchy", 1.0, 4, 2000, 0).is_err());
    }
}
