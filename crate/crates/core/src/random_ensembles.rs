//! Random coefficient laws and randomized initial data `Σ c_n g_n(ω) h_n`.
//!
//! Every draw is a pure function of `(seed, sample_index, coeff_index)`: the
//! ChaCha stream number is the sample index and the coefficient index selects
//! a disjoint window of the keystream. Parallel and serial runs therefore see
//! the same numbers.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{LabError, Result};
use crate::parallel::map_indexed;
use crate::report::Report;
use crate::spectral_ops::SpectralField;
use crate::stats::{self, Estimate};

/// Keystream words reserved for one coefficient.
const WORDS_PER_COEFF_SHIFT: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gaussian,
    Rademacher,
    UniformSymmetric,
    SymmetricWeibull,
    CenteredTwoPoint,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Gaussian,
        Family::Rademacher,
        Family::UniformSymmetric,
        Family::SymmetricWeibull,
        Family::CenteredTwoPoint,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Rademacher => "rademacher",
            Family::UniformSymmetric => "uniform_symmetric",
            Family::SymmetricWeibull => "symmetric_weibull",
            Family::CenteredTwoPoint => "centered_two_point",
        }
    }

    /// Sup of `|X|` for the bounded families.
    pub fn support_bound(&self) -> Option<f64> {
        match self {
            Family::Rademacher => Some(1.0),
            Family::UniformSymmetric => Some(3f64.sqrt()),
            Family::CenteredTwoPoint => Some(2.0),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| LabError::invalid("family", format!("unknown family `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisFlags {
    /// All odd moments vanish.
    pub satisfies_he1: bool,
    /// Mean zero.
    pub satisfies_he2: bool,
    /// `P(|g| < ρ) > 0` for every `ρ > 0`.
    pub satisfies_h01: bool,
    /// Second moment bounded below.
    pub satisfies_h02: bool,
}

/// Config-file shape of an ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub family: Family,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleConfig")]
pub struct EnsembleSpec {
    pub family: Family,
    pub gamma: f64,
    pub flags: HypothesisFlags,
    pub seed: u64,
}

impl TryFrom<EnsembleConfig> for EnsembleSpec {
    type Error = LabError;

    fn try_from(c: EnsembleConfig) -> Result<Self> {
        EnsembleSpec::new(c.family, c.gamma, c.seed)
    }
}

impl EnsembleSpec {
    /// `gamma` is only read for `symmetric_weibull`, where it must lie in `(0, 2]`.
    pub fn new(family: Family, gamma: Option<f64>, seed: u64) -> Result<Self> {
        let gamma = match family {
            Family::SymmetricWeibull => {
                let g = gamma.ok_or_else(|| LabError::invalid("gamma", "is required for symmetric_weibull"))?;
                if !(g > 0.0 && g <= 2.0) {
                    return Err(LabError::invalid("gamma", format!("must lie in (0, 2], got {g}")));
                }
                g
            }
            _ => 2.0,
        };
        let flags = match family {
            Family::Gaussian | Family::UniformSymmetric | Family::SymmetricWeibull => HypothesisFlags {
                satisfies_he1: true,
                satisfies_he2: true,
                satisfies_h01: true,
                satisfies_h02: true,
            },
            Family::Rademacher => HypothesisFlags {
                satisfies_he1: true,
                satisfies_he2: true,
                satisfies_h01: false,
                satisfies_h02: true,
            },
            Family::CenteredTwoPoint => HypothesisFlags {
                satisfies_he1: false,
                satisfies_he2: true,
                satisfies_h01: false,
                satisfies_h02: true,
            },
        };
        let spec = Self {
            family,
            gamma,
            flags,
            seed,
        };
        spec.certify()?;
        Ok(spec)
    }

    pub fn gaussian(seed: u64) -> Self {
        Self::new(Family::Gaussian, None, seed).expect("gaussian spec")
    }

    pub fn rademacher(seed: u64) -> Self {
        Self::new(Family::Rademacher, None, seed).expect("rademacher spec")
    }

    pub fn uniform(seed: u64) -> Self {
        Self::new(Family::UniformSymmetric, None, seed).expect("uniform spec")
    }

    pub fn weibull(gamma: f64, seed: u64) -> Result<Self> {
        Self::new(Family::SymmetricWeibull, Some(gamma), seed)
    }

    pub fn two_point(seed: u64) -> Self {
        Self::new(Family::CenteredTwoPoint, None, seed).expect("two-point spec")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    // Analytic certificate that the flags match the law.
    fn certify(&self) -> Result<()> {
        let f = &self.flags;
        if f.satisfies_he1 && !f.satisfies_he2 {
            return Err(LabError::invalid("flags", "HE1 without HE2"));
        }
        let odd_null = [1, 3, 5, 7].iter().all(|&k| self.exact_moment(k).abs() < 1e-12);
        if odd_null != f.satisfies_he1 {
            return Err(LabError::invalid("flags", format!("HE1 certificate failed for {}", self.family)));
        }
        if (self.exact_moment(1).abs() < 1e-12) != f.satisfies_he2 {
            return Err(LabError::invalid("flags", format!("HE2 certificate failed for {}", self.family)));
        }
        let has_small_mass = match self.family.support_bound() {
            None => true,
            Some(_) => self.family == Family::UniformSymmetric,
        };
        if has_small_mass != f.satisfies_h01 {
            return Err(LabError::invalid("flags", format!("H01 certificate failed for {}", self.family)));
        }
        if self.exact_moment(2) <= 0.0 {
            return Err(LabError::invalid("flags", "H02 certificate failed"));
        }
        Ok(())
    }

    /// Exact raw moment `E X^k`.
    pub fn exact_moment(&self, k: u32) -> f64 {
        if k == 0 {
            return 1.0;
        }
        if self.family == Family::CenteredTwoPoint {
            return 0.2 * 2f64.powi(k as i32) + 0.8 * (-0.5f64).powi(k as i32);
        }
        if k % 2 == 1 {
            return 0.0;
        }
        self.exact_abs_moment(k as f64)
    }

    /// Exact `E|X|^r`, `r > -1`.
    pub fn exact_abs_moment(&self, r: f64) -> f64 {
        match self.family {
            Family::Gaussian => 2f64.powf(r / 2.0) * gamma_fn((r + 1.0) / 2.0) / std::f64::consts::PI.sqrt(),
            Family::Rademacher => 1.0,
            Family::UniformSymmetric => 3f64.powf(r / 2.0) / (r + 1.0),
            Family::SymmetricWeibull => gamma_fn(1.0 + r / self.gamma),
            Family::CenteredTwoPoint => 0.2 * 2f64.powf(r) + 0.8 * 0.5f64.powf(r),
        }
    }

    pub fn variance(&self) -> f64 {
        self.exact_moment(2) - self.exact_moment(1).powi(2)
    }

    pub fn has_unit_variance(&self) -> bool {
        (self.variance() - 1.0).abs() < 1e-12
    }

    pub fn sampler(&self) -> Sampler {
        Sampler::new(*self)
    }
}

/// Reusable keyed generator for one spec.
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: EnsembleSpec,
    base: ChaCha8Rng,
}

impl Sampler {
    pub fn new(spec: EnsembleSpec) -> Self {
        Self {
            spec,
            base: ChaCha8Rng::seed_from_u64(spec.seed),
        }
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    fn stream(&self, sample_index: u64, coeff_index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_stream(sample_index);
        rng.set_word_pos((coeff_index as u128) << WORDS_PER_COEFF_SHIFT);
        rng
    }

    pub fn draw(&self, sample_index: u64, coeff_index: u64) -> f64 {
        let mut rng = self.stream(sample_index, coeff_index);
        match self.spec.family {
            Family::Gaussian => rng.sample(StandardNormal),
            Family::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Family::UniformSymmetric => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            Family::SymmetricWeibull => {
                // u ∈ (0, 1]
                let u = 1.0 - rng.random::<f64>();
                let r = (-u.ln()).powf(1.0 / self.spec.gamma);
                if rng.random::<bool>() {
                    r
                } else {
                    -r
                }
            }
            Family::CenteredTwoPoint => {
                if rng.random::<f64>() < 0.2 {
                    2.0
                } else {
                    -0.5
                }
            }
        }
    }

    /// Draws for coefficients `0..count` of one sample.
    pub fn draw_vector(&self, sample_index: u64, count: usize) -> Vec<f64> {
        (0..count as u64).map(|k| self.draw(sample_index, k)).collect()
    }
}

pub fn sample(spec: &EnsembleSpec, sample_index: u64, coeff_index: u64) -> f64 {
    Sampler::new(*spec).draw(sample_index, coeff_index)
}

/// Randomized initial datum next to its deterministic base.
#[derive(Clone, Debug)]
pub struct RandomFieldDraw {
    pub base: SpectralField,
    pub draw: SpectralField,
    pub omega_id: u64,
}

pub fn randomize(base: &SpectralField, spec: &EnsembleSpec, omega_id: u64) -> Result<RandomFieldDraw> {
    randomize_with(base, &spec.sampler(), omega_id)
}

pub fn randomize_with(base: &SpectralField, sampler: &Sampler, omega_id: u64) -> Result<RandomFieldDraw> {
    if base.is_zero() {
        return Err(LabError::ZeroField);
    }
    let draw = base.map(|k, c| c * sampler.draw(omega_id, k as u64));
    Ok(RandomFieldDraw {
        base: base.clone(),
        draw,
        omega_id,
    })
}

/// Monte Carlo `E|X|^order` on coefficient stream 0.
pub fn empirical_moment(spec: &EnsembleSpec, order: f64, n_samples: usize) -> Result<Estimate> {
    if !(order >= 1.0) {
        return Err(LabError::invalid("order", "must be ≥ 1"));
    }
    if n_samples < 2 {
        return Err(LabError::invalid("n_samples", "must be ≥ 2"));
    }
    let sampler = spec.sampler();
    let vals = map_indexed(n_samples, |i| sampler.draw(i as u64, 0).abs().powf(order));
    Ok(stats::mean_and_se(&vals))
}

/// Monte Carlo signed moment `E X^k` on coefficient stream 0.
pub fn empirical_raw_moment(spec: &EnsembleSpec, k: u32, n_samples: usize) -> Estimate {
    let sampler = spec.sampler();
    let vals = map_indexed(n_samples, |i| sampler.draw(i as u64, 0).powi(k as i32));
    stats::mean_and_se(&vals)
}

/// Minimum sample size accepted by [`verify_tail`].
pub const MIN_TAIL_SAMPLES: usize = 100_000;
/// Survival counts below this are excluded from the fit.
const MIN_TAIL_COUNT: usize = 10;

/// Empirical survival of `|X|` fitted by `log S = a - b ln ρ - c ρ^γ`.
pub fn verify_tail(spec: &EnsembleSpec, n_samples: usize, rho_grid: &[f64]) -> Result<Report> {
    if n_samples < MIN_TAIL_SAMPLES {
        return Err(LabError::invalid("n_samples", format!("must be ≥ {MIN_TAIL_SAMPLES}")));
    }
    if rho_grid.len() < 4
        || rho_grid.iter().any(|r| !(r.is_finite() && *r > 0.0))
        || rho_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(LabError::DegenerateGrid(
            "rho grid needs at least four positive increasing points".into(),
        ));
    }
    let sampler = spec.sampler();
    let mut abs = map_indexed(n_samples, |i| sampler.draw(i as u64, 0).abs());
    abs.sort_by(|a, b| a.total_cmp(b));
    let n = n_samples as f64;
    let counts: Vec<usize> = rho_grid
        .iter()
        .map(|&r| n_samples - abs.partition_point(|&x| x <= r))
        .collect();

    let mut report = Report::new("verify_tail").with_ensemble(spec);
    report.resolution("n_samples", n_samples);
    report.resolution("rho_points", rho_grid.len());
    report.stat("max_abs_sample", *abs.last().unwrap_or(&0.0));

    let used: Vec<usize> = (0..rho_grid.len()).filter(|&i| counts[i] >= MIN_TAIL_COUNT).collect();
    let mut rows = Vec::new();
    let fit = if used.len() >= 4 {
        let rho: Vec<f64> = used.iter().map(|&i| rho_grid[i]).collect();
        let surv: Vec<f64> = used.iter().map(|&i| counts[i] as f64 / n).collect();
        let w: Vec<f64> = surv.iter().map(|s| n * s / (1.0 - s).max(1.0 / n)).collect();
        Some(stats::fit_tail_exponent(&rho, &surv, &w)?)
    } else {
        None
    };
    for (i, &r) in rho_grid.iter().enumerate() {
        let model = fit.map(|f| (f.a - f.b * r.ln() - f.c * r.powf(f.gamma)).exp()).unwrap_or(f64::NAN);
        rows.push(vec![r, counts[i] as f64 / n, model]);
    }
    report.curve("survival", &["rho", "survival", "fit"], rows);
    report.stat("points_used", used.len() as f64);

    match (fit, spec.family.support_bound()) {
        (_, Some(bound)) => {
            if let Some(f) = fit {
                report.stat("gamma_hat", f.gamma);
            }
            let beyond = rho_grid
                .iter()
                .zip(&counts)
                .filter(|(r, _)| **r >= bound)
                .all(|(_, c)| *c == 0);
            report.stat("support_bound", bound);
            report.verdict(
                "tail_exponent",
                beyond,
                format!("bounded support |X| ≤ {bound}; survival vanishes beyond it, so every γ holds"),
            );
        }
        (Some(f), None) => {
            report.stat("gamma_hat", f.gamma);
            report.stat("c_hat", f.c);
            report.stat("C_hat", f.a.exp());
            report.stat("prefactor_power", f.b);
            let ok = f.gamma >= spec.gamma - 0.15;
            report.verdict(
                "tail_exponent",
                ok,
                format!("gamma_hat = {:.4} vs required ≥ {:.4}", f.gamma, spec.gamma - 0.15),
            );
        }
        (None, None) => {
            return Err(LabError::DegenerateGrid(format!(
                "only {} grid points have at least {MIN_TAIL_COUNT} exceedances",
                used.len()
            )));
        }
    }
    Ok(report)
}

/// Pearson correlation between coefficient streams `a` and `b`.
pub fn stream_correlation(spec: &EnsembleSpec, a: u64, b: u64, n_samples: usize) -> f64 {
    let sampler = spec.sampler();
    let pairs = map_indexed(n_samples, |i| (sampler.draw(i as u64, a), sampler.draw(i as u64, b)));
    let n = n_samples as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (ma, mb) = (ma / n, mb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Coefficients of a random draw as complex numbers (convenience for callers
/// that do not hold a [`SpectralField`]).
pub fn randomized_coeffs(base: &[Complex64], sampler: &Sampler, omega_id: u64) -> Vec<Complex64> {
    base.iter()
        .enumerate()
        .map(|(k, c)| c * sampler.draw(omega_id, k as u64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_cache;
    use crate::spectral_ops::harmonic_sobolev_norm;

    #[test]
    fn gaussian_second_moment() {
        let e = empirical_moment(&EnsembleSpec::gaussian(1), 2.0, 1_000_000).unwrap();
        assert!((e.mean - 1.0).abs() < 0.01, "{e:?}");
    }

    #[test]
    fn gaussian_fourth_moment_and_jensen() {
        let s = EnsembleSpec::gaussian(2);
        let m4 = empirical_moment(&s, 4.0, 400_000).unwrap();
        let m2 = empirical_moment(&s, 2.0, 400_000).unwrap();
        assert!((m4.mean - 3.0).abs() < 0.05, "{m4:?}");
        assert!(m2.mean * m2.mean <= m4.mean);
    }

    #[test]
    fn two_point_moments() {
        let s = EnsembleSpec::two_point(3);
        assert!((s.exact_moment(3) - 1.5).abs() < 1e-15);
        let m1 = empirical_raw_moment(&s, 1, 1_000_000);
        let m3 = empirical_raw_moment(&s, 3, 1_000_000);
        assert!(m1.mean.abs() < 0.005, "{m1:?}");
        assert!((m3.mean - 1.5).abs() < 0.05, "{m3:?}");
    }

    #[test]
    fn rademacher_values_and_moments() {
        let s = EnsembleSpec::rademacher(4);
        let smp = s.sampler();
        for i in 0..1000 {
            let x = smp.draw(i, i % 7);
            assert!(x == 1.0 || x == -1.0);
        }
        for order in [1.0, 2.0, 3.5, 7.0] {
            let e = empirical_moment(&s, order, 1000).unwrap();
            assert_eq!(e.mean, 1.0);
        }
    }

    #[test]
    fn flags_match_families() {
        let r = EnsembleSpec::rademacher(0);
        assert!(r.flags.satisfies_he1 && !r.flags.satisfies_h01);
        let t = EnsembleSpec::two_point(0);
        assert!(!t.flags.satisfies_he1 && t.flags.satisfies_he2);
        for f in Family::ALL {
            let s = EnsembleSpec::new(f, Some(1.0), 0).unwrap();
            assert!(!s.flags.satisfies_he1 || s.flags.satisfies_he2);
        }
        assert!(EnsembleSpec::weibull(2.5, 0).is_err());
        assert!(EnsembleSpec::new(Family::SymmetricWeibull, None, 0).is_err());
        assert!("laplace".parse::<Family>().is_err());
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = EnsembleSpec::weibull(1.5, 99).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        let back: EnsembleSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        let cfg: EnsembleSpec = serde_json::from_str(r#"{"family":"gaussian","seed":5}"#).unwrap();
        assert_eq!(cfg.gamma, 2.0);
        assert!(serde_json::from_str::<EnsembleSpec>(r#"{"family":"symmetric_weibull","gamma":3.0}"#).is_err());
    }

    #[test]
    fn weibull_law() {
        let s = EnsembleSpec::weibull(1.0, 8).unwrap();
        let e = empirical_moment(&s, 2.0, 400_000).unwrap();
        assert!((e.mean - 2.0).abs() < 4.0 * e.std_error + 1e-3, "{e:?}");
    }

    #[test]
    fn draws_are_keyed() {
        let s = EnsembleSpec::gaussian(11);
        let a = s.sampler();
        let b = s.sampler();
        assert_eq!(a.draw(5, 17).to_bits(), b.draw(5, 17).to_bits());
        let forward: Vec<u64> = (0..20).map(|k| a.draw(3, k).to_bits()).collect();
        let backward: Vec<u64> = (0..20).rev().map(|k| a.draw(3, k).to_bits()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a.draw(0, 0), s.with_seed(12).sampler().draw(0, 0));
    }

    #[test]
    fn streams_uncorrelated() {
        let n = 100_000;
        for f in Family::ALL {
            let s = EnsembleSpec::new(f, Some(1.0), 21).unwrap();
            let r = stream_correlation(&s, 0, 1, n);
            assert!(r.abs() <= 3.0 / (n as f64).sqrt(), "{f}: {r}");
        }
    }

    #[test]
    fn tail_fits() {
        let rho: Vec<f64> = (0..=30).map(|k| 1.0 + 0.1 * k as f64).collect();
        let g = verify_tail(&EnsembleSpec::gaussian(5), 1_000_000, &rho).unwrap();
        let gh = g.value("gamma_hat").unwrap();
        assert!((gh - 2.0).abs() <= 0.15, "gaussian gamma_hat {gh}");
        assert!(g.passed());

        let w = verify_tail(&EnsembleSpec::weibull(1.0, 5).unwrap(), 1_000_000, &rho).unwrap();
        let wh = w.value("gamma_hat").unwrap();
        assert!((wh - 1.0).abs() <= 0.15, "weibull gamma_hat {wh}");

        let r = verify_tail(&EnsembleSpec::rademacher(5), 100_000, &rho).unwrap();
        assert!(r.passed());
        assert!(r.curves["survival"].rows.iter().all(|row| row[1] == 0.0));
        assert!(verify_tail(&EnsembleSpec::gaussian(5), 10, &rho).is_err());
        assert!(verify_tail(&EnsembleSpec::gaussian(5), 100_000, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn randomize_properties() {
        let basis = grid_cache::default_basis(1, 15).unwrap();
        let coeffs: Vec<f64> = (0..16).map(|n| 1.0 / (1.0 + n as f64)).collect();
        let base = SpectralField::from_real(basis, &coeffs).unwrap();
        let rd = randomize(&base, &EnsembleSpec::rademacher(1), 9).unwrap();
        for s in [0.0, 0.5, 1.0] {
            assert_eq!(harmonic_sobolev_norm(&rd.draw, s), harmonic_sobolev_norm(&base, s));
        }
        let g = EnsembleSpec::gaussian(1);
        let d1 = randomize(&base, &g, 4).unwrap();
        let d2 = randomize(&base, &g, 4).unwrap();
        assert_eq!(d1.draw.coeffs(), d2.draw.coeffs());
        for (a, b) in d1.draw.coeffs().iter().zip(base.coeffs()) {
            assert_eq!((a / b).im, 0.0);
        }
        let smp = g.sampler();
        let b2 = base.l2_norm().powi(2);
        let ratios: Vec<f64> = (0..10_000)
            .map(|w| randomize_with(&base, &smp, w).unwrap().draw.l2_norm().powi(2) / b2)
            .collect();
        let m = stats::mean_and_se(&ratios).mean;
        assert!((m - 1.0).abs() < 0.05, "{m}");
        assert!(randomize(&SpectralField::zeros(base.basis().clone()), &g, 0).is_err());
    }
}
