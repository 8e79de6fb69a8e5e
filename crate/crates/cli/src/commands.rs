use std::io::Write;
use std::sync::Arc;

use anyhow::{bail, Result};
use hermite_lab::acceptance::{self, decaying_draw, Tier};
use hermite_lab::hermite_basis::{load_or_build, BasisGrid};
use hermite_lab::lens_free::{free_propagate, lens_forward, LinearFlow};
use hermite_lab::picard_solver::{
    global_nls_solution, scattering_extract, PicardState, Trajectory, DEFAULT_SCATTERING_TIMES,
};
use hermite_lab::proba_lab::{
    b2p_report, chernoff_tail, eigenfunction_lp_decay, enumerate_b2p, flat_coeffs, khinchin_growth, norm_tail,
    omega_t_probability, paley_zygmund_experiments, TailExperiment,
};
use hermite_lab::random_ensembles::verify_tail;
use hermite_lab::report::Report;
use hermite_lab::spectral_ops::{
    classical_sobolev_norm, fractional_laplacian_l2_norm, harmonic_sobolev_norm, lebesgue_norm, sup_norm,
    weighted_x_l2_norm, SmoothingOperator, SmoothingVariant,
};
use hermite_lab::{grid_cache, SpectralField};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::Artifacts;
use crate::{Command, Outcome};

pub fn run(cmd: &Command, cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let reports = match cmd {
        Command::BasisCheck(_) => basis_check(cfg)?,
        Command::Norms(_) => norms(cfg)?,
        Command::Smoothing(_) => smoothing(cfg)?,
        Command::LensCheck(_) => lens_check(cfg, art)?,
        Command::SolveNlsh(a) => vec![solve(cfg, a.resume.as_deref(), art)?.report()?],
        Command::SolveNls(a) => solve_nls(cfg, a.resume.as_deref(), art)?,
        Command::Scattering(a) => scattering(cfg, a.resume.as_deref(), art)?,
        Command::Khinchin(_) => khinchin(cfg)?,
        Command::B2p(_) => b2p(cfg)?,
        Command::Tails(_) => tails(cfg)?,
        Command::Omega(_) => omega(cfg)?,
        Command::PaleyZygmund(_) => paley_zygmund_experiments(cfg.seed, cfg.samples(20_000))?,
        Command::EigenLp(_) => vec![eigenfunction_lp_decay(
            cfg.experiment.p_exp.unwrap_or(f64::INFINITY),
            cfg.experiment.n_max.unwrap_or(400),
        )?],
        Command::Chernoff(_) => chernoff(cfg)?,
        Command::Acceptance(_) => return run_acceptance(cfg, art),
    };
    let mut passed = true;
    for r in &reports {
        summarize(r);
        passed &= r.passed();
        art.report(r)?;
    }
    Ok(Outcome { passed })
}

fn summarize(r: &Report) {
    println!("{}", r.name);
    for (k, s) in &r.statistics {
        match s.std_error {
            Some(se) => println!("  {k} = {:.6e} ± {:.2e}", s.value, se),
            None => println!("  {k} = {:.6e}", s.value),
        }
    }
    for v in &r.verdicts {
        println!("  [{}] {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
}

fn basis_for(cfg: &RunConfig, dim: usize, n: usize, quad: usize) -> Result<Arc<BasisGrid>> {
    Ok(match &cfg.cache_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            load_or_build(dir, dim, n, quad)?
        }
        None => grid_cache::basis(dim, n, quad)?,
    })
}

/// Coefficients of the configured field, or `default` when unset.
fn coeffs(cfg: &RunConfig, default: &[f64]) -> Vec<f64> {
    let mut c = match (&cfg.field.coeffs, cfg.field.flat_modes) {
        (Some(c), _) => c.clone(),
        (None, Some(k)) => flat_coeffs(k),
        (None, None) => default.to_vec(),
    };
    if let Some(a) = cfg.field.amplitude {
        c.iter_mut().for_each(|v| *v *= a);
    }
    c
}

fn field_on(basis: Arc<BasisGrid>, c: &[f64]) -> Result<SpectralField> {
    if c.len() > basis.len() {
        bail!("field.coeffs has {} entries but the basis has {} modes", c.len(), basis.len());
    }
    let mut full = vec![0.0; basis.len()];
    full[..c.len()].copy_from_slice(c);
    Ok(SpectralField::from_real(basis, &full)?)
}

/// Field on the standard basis, degree from `basis.max_degree` or the coefficient count.
fn field(cfg: &RunConfig, default: &[f64], default_degree: usize) -> Result<SpectralField> {
    let c = coeffs(cfg, default);
    let d = cfg.basis.dim;
    let n = cfg.basis.max_degree.unwrap_or(default_degree.max(c.len().saturating_sub(1)));
    let q = cfg.basis.quad_per_axis.unwrap_or(2 * (n + 1));
    field_on(basis_for(cfg, d, n, q)?, &c)
}

fn basis_check(cfg: &RunConfig) -> Result<Vec<Report>> {
    let n = cfg.basis.max_degree.unwrap_or(64);
    let q = cfg.basis.quad_per_axis.unwrap_or(match cfg.tier {
        Tier::Smoke => 2 * (n + 1),
        Tier::Reference => 4 * n,
        Tier::Extended => 8 * n,
    });
    let basis = basis_for(cfg, cfg.basis.dim, n, q)?;
    let g = basis.gram_deviation();
    let mut r = Report::new("basis_check");
    r.resolution("dim", cfg.basis.dim).resolution("N", n).resolution("quad_per_axis", q);
    r.stat("gram_deviation", g).stat("modes", basis.len() as f64);
    r.verdict("gram_deviation", g <= acceptance::GRAM_TOL, format!("{g:.3e} vs {:.0e}", acceptance::GRAM_TOL));
    Ok(vec![r])
}

fn norms(cfg: &RunConfig) -> Result<Vec<Report>> {
    let u = field(cfg, &[1.0, 0.5, 0.25], 8)?;
    let s_values = cfg.experiment.s_values.clone().unwrap_or(vec![0.0, 0.5, 1.0, 1.5]);
    let mut r = Report::new("norms");
    r.resolution("N", u.basis().max_degree()).resolution("dim", u.dim());
    let mut rows = Vec::new();
    for &s in &s_values {
        let row = vec![
            s,
            harmonic_sobolev_norm(&u, s),
            classical_sobolev_norm(&u, s)?,
            fractional_laplacian_l2_norm(&u, s)?,
            weighted_x_l2_norm(&u, s)?,
        ];
        rows.push(row);
    }
    r.curve("sobolev", &["s", "harmonic", "classical", "fractional", "weighted_x"], rows);
    r.stat("l2", u.l2_norm())
        .stat("lebesgue_4", lebesgue_norm(&u, 4.0)?)
        .stat("sup", sup_norm(&u)?);
    Ok(vec![r])
}

fn smoothing(cfg: &RunConfig) -> Result<Vec<Report>> {
    let n = cfg.basis.max_degree.unwrap_or(128);
    let basis = basis_for(cfg, cfg.basis.dim, n, cfg.basis.quad_per_axis.unwrap_or(2 * (n + 1)))?;
    let eps_list = cfg.experiment.eps.clone().unwrap_or(vec![0.05, 0.25, 0.45]);
    let draws = cfg.experiment.draws.unwrap_or(cfg.samples(100)) as u64;
    let u = field_on(basis.clone(), &coeffs(cfg, &[1.0]))?;
    let mut r = Report::new("smoothing").with_seed(cfg.seed);
    r.resolution("N", n).resolution("draws", draws);
    let mut rows = Vec::new();
    for variant in [SmoothingVariant::SqrtH, SmoothingVariant::FractionalGrad] {
        for &eps in &eps_list {
            let op = SmoothingOperator::new(&basis, eps, variant)?;
            let mut sup: f64 = 0.0;
            for d in 0..draws {
                sup = sup.max(op.ratio(&decaying_draw(&basis, cfg.seed, d)?)?);
            }
            let fixed = op.ratio(&u)?;
            let trap = op.ratio_trapezoid(&u, 4 * n + 16)?;
            let fg = (variant == SmoothingVariant::FractionalGrad) as u8 as f64;
            rows.push(vec![fg, eps, fixed, trap, sup]);
            r.verdict(
                &format!("{variant:?}.eps_{eps}.trapezoid_agrees"),
                (fixed - trap).abs() <= 1e-10 * fixed,
                format!("shells {fixed:.12} vs trapezoid {trap:.12}"),
            );
        }
    }
    r.curve("ratio", &["fractional_grad", "eps", "field", "field_trapezoid", "sup_draws"], rows);
    Ok(vec![r])
}

fn lens_check(cfg: &RunConfig, art: &mut Artifacts) -> Result<Vec<Report>> {
    let u0 = field(cfg, &[1.0, 0.0, 0.0, 0.5], 64)?;
    let flow = LinearFlow::new(u0.clone());
    let times = cfg.experiment.times.clone().unwrap_or(vec![0.25, 0.5, 1.0]);
    let mut r = Report::new("lens_check");
    r.resolution("N", u0.basis().max_degree());
    let mut rows = Vec::new();
    for &t in &times {
        let lens = lens_forward(&flow, t)?;
        let free = free_propagate(&u0, t)?;
        let d = lens.l2_distance(&free)?;
        let iso = (lens.l2_norm() - u0.l2_norm()).abs();
        r.verdict(&format!("conjugation.t_{t}"), d <= acceptance::LENS_L2_TOL, format!("{d:.3e}"));
        r.verdict(&format!("isometry.t_{t}"), iso <= acceptance::LENS_ISOMETRY_TOL, format!("{iso:.3e}"));
        rows.push(vec![t, d, iso, lens.sup_norm()]);
        lens.write_csv(art.writer(&format!("frame_t{t}.csv"))?)?;
    }
    r.curve("lens", &["t", "l2_distance", "isometry_defect", "sup"], rows);
    Ok(vec![r])
}

/// Runs (or resumes) the Picard iteration, checkpointing after each sweep.
fn solve(cfg: &RunConfig, resume: Option<&std::path::Path>, art: &mut Artifacts) -> Result<Trajectory> {
    let mut state = match resume {
        Some(p) => {
            let st = PicardState::load(std::io::BufReader::new(std::fs::File::open(p)?))?;
            if st.config != cfg.solver {
                eprintln!("note: resuming with the solver config stored in {}", p.display());
            }
            st
        }
        None => {
            cfg.solver.validate()?;
            let n = cfg.solver.max_degree;
            let basis = basis_for(cfg, cfg.solver.dim, n, 2 * (n + 1))?;
            let u0 = field_on(basis, &coeffs(cfg, &[0.1]))?;
            PicardState::new(&u0, &cfg.solver)?
        }
    };
    let ckpt = art.path("checkpoint.bin");
    state.run(|st| {
        let tmp = ckpt.with_extension("tmp");
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        st.save(&mut w)?;
        w.flush()?;
        drop(w);
        std::fs::rename(&tmp, &ckpt)?;
        eprintln!("iteration {}: update {:.3e}", st.iterations, st.history.last().copied().unwrap_or(0.0));
        Ok(())
    })?;
    Ok(state.into_trajectory()?)
}

fn solve_nls(cfg: &RunConfig, resume: Option<&std::path::Path>, art: &mut Artifacts) -> Result<Vec<Report>> {
    let tr = solve(cfg, resume, art)?;
    let times = cfg.experiment.times.clone().unwrap_or(vec![0.5, 1.0, 2.0]);
    let mut r = Report::new("solve_nls");
    let mut rows = Vec::new();
    for &t in &times {
        let frame = global_nls_solution(&tr, t)?;
        rows.push(vec![t, frame.l2_norm(), frame.sup_norm()]);
        frame.write_csv(art.writer(&format!("frame_t{t}.csv"))?)?;
    }
    r.curve("frames", &["t", "l2", "sup"], rows);
    Ok(vec![tr.report()?, r])
}

#[derive(Serialize)]
struct Coefficients {
    re: Vec<f64>,
    im: Vec<f64>,
}

fn scattering(cfg: &RunConfig, resume: Option<&std::path::Path>, art: &mut Artifacts) -> Result<Vec<Report>> {
    let tr = solve(cfg, resume, art)?;
    let times = cfg.experiment.times.clone().unwrap_or(DEFAULT_SCATTERING_TIMES.to_vec());
    let u0 = tr.u0.clone();
    let sc = scattering_extract(&tr, &u0, &times)?;
    let mut r = Report::new("scattering");
    r.stat("l_plus_norm", sc.l_plus.l2_norm()).stat("l_minus_norm", sc.l_minus.l2_norm());
    r.curve("residual", &["t", "residual"], sc.residual_curve.iter().map(|&(t, v)| vec![t, v]).collect());
    let decreasing = sc.residual_curve.windows(2).all(|w| w[1].1 < w[0].1);
    r.verdict("residual_decreasing", decreasing, "scattering residual decreases in t");
    for (name, f) in [("l_plus", &sc.l_plus), ("l_minus", &sc.l_minus)] {
        let c = Coefficients {
            re: f.coeffs().iter().map(|z| z.re).collect(),
            im: f.coeffs().iter().map(|z| z.im).collect(),
        };
        art.json(&format!("{name}.json"), &c)?;
    }
    Ok(vec![tr.report()?, r])
}

fn khinchin(cfg: &RunConfig) -> Result<Vec<Report>> {
    let spec = cfg.ensemble_spec()?;
    let c = coeffs(cfg, &flat_coeffs(32));
    let q = cfg.experiment.q_grid.clone().unwrap_or(cfg.tier.q_grid().to_vec());
    Ok(vec![khinchin_growth(&spec, &c, &q, cfg.samples(1_000_000))?])
}

fn b2p(cfg: &RunConfig) -> Result<Vec<Report>> {
    if let Some(p) = cfg.experiment.p {
        let c = enumerate_b2p(p)?;
        let agree = match c.agrees() {
            Some(true) => "brute force agrees",
            Some(false) => "brute force DISAGREES",
            None => "brute force not run",
        };
        println!("B_{} = {} ({agree})", 2 * p, c.closed_form);
    }
    let p_max = cfg.experiment.p_max.unwrap_or(cfg.experiment.p.unwrap_or(0).max(10));
    Ok(vec![b2p_report(p_max)?])
}

fn default_t_grid() -> Vec<f64> {
    (0..=120).map(|k| 0.5 + 0.0125 * k as f64).collect()
}

fn tails(cfg: &RunConfig) -> Result<Vec<Report>> {
    let spec = cfg.ensemble_spec()?;
    let base = field(cfg, &flat_coeffs(32), 31)?;
    let t_grid = cfg.experiment.t_grid.clone().unwrap_or_else(default_t_grid);
    let rho = cfg
        .experiment
        .rho_grid
        .clone()
        .unwrap_or_else(|| (4..=16).map(|k| 0.25 * k as f64).collect());
    Ok(vec![
        norm_tail(&base, &spec, &t_grid, cfg.samples(100_000))?,
        verify_tail(&spec, cfg.samples(1_000_000).max(1_000_000), &rho)?,
    ])
}

fn omega(cfg: &RunConfig) -> Result<Vec<Report>> {
    let exp = TailExperiment {
        base: field(cfg, &[1.0, 0.5, 0.3, 0.2, 0.1], 8)?,
        ensemble: cfg.ensemble_spec()?,
        thresholds: cfg.experiment.thresholds.clone().unwrap_or(vec![2.0, 2.5, 3.0, 4.0, 6.0]),
        n_samples: cfg.samples(10_000),
        time_nodes: cfg.experiment.time_nodes,
    };
    Ok(vec![omega_t_probability(&exp, cfg.experiment.nonlinearity_p.unwrap_or(5))?])
}

fn chernoff(cfg: &RunConfig) -> Result<Vec<Report>> {
    let spec = cfg.ensemble_spec()?;
    let c = coeffs(cfg, &flat_coeffs(16));
    let rho = cfg
        .experiment
        .rho_grid
        .clone()
        .unwrap_or_else(|| (1..=60).map(|k| 0.1 * k as f64).collect());
    Ok(vec![chernoff_tail(&spec, &c, &rho, cfg.samples(1_000_000).max(1_000_000))?])
}

#[derive(Serialize)]
struct Summary {
    tier: Tier,
    seed: u64,
    passed: bool,
    criteria: Vec<CriterionSummary>,
}

#[derive(Serialize)]
struct CriterionSummary {
    id: usize,
    name: String,
    passed: bool,
    checks: Vec<acceptance::Check>,
}

fn run_acceptance(cfg: &RunConfig, art: &mut Artifacts) -> Result<Outcome> {
    let ids = cfg
        .experiment
        .criteria
        .clone()
        .unwrap_or_else(|| (1..=acceptance::CRITERIA.len()).collect());
    let mut criteria = Vec::new();
    for id in ids {
        let res = acceptance::run_criterion(id, cfg.tier, cfg.seed)?;
        println!("{}", res.line());
        for c in res.checks.iter().filter(|c| !c.passed) {
            println!("    {}: {}", c.name, c.detail);
        }
        for r in &res.reports {
            art.report(r)?;
        }
        criteria.push(CriterionSummary {
            id: res.id,
            name: res.name.clone(),
            passed: res.passed(),
            checks: res.checks,
        });
    }
    let passed = criteria.iter().all(|c| c.passed);
    art.json(
        "acceptance.json",
        &Summary {
            tier: cfg.tier,
            seed: cfg.seed,
            passed,
            criteria,
        },
    )?;
    Ok(Outcome { passed })
}
