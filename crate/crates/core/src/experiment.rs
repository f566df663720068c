//! Runs the suites named in an [`ExperimentConfig`] and writes artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    build_report, check_a5, check_a6, check_harnack, check_lemma31, check_lemma_ll, fmt_vec,
    harnack_report, rho_upper_bound, rows_to_csv, BoundCheckReport, Report, ResultRow, TwoGrid,
    Verdict, BAND,
};
use crate::config::{Check, ExperimentConfig, Format};
use crate::error::Result;
use crate::estimators::{
    default_fd_eps, estimate_gradient_bismut_many, estimate_gradient_fd_many, LqIntegrand, McParams,
    LQ_INTEGRAND_CATALOGUE,
};
use crate::exec::ExecPolicy;
use crate::model::{
    builtin_test_function, Direction, ModelSpec, TestFunction, BUILTIN_MODELS, BUILTIN_TEST_FUNCTIONS,
};
use crate::paths::{simulate, simulate_basic, simulate_extended, simulate_extended_traced, TimeGrid};
use crate::rng::RngStream;
use crate::weights::{bismut_weight, extended_weight, weight_for};

/// Observables used by the square-field and L^p gradient checks.
pub const BOUNDED_SUITE: [&str; 3] = ["sin_y", "cos_xy", "gauss_bump"];
/// Nonnegative observable for the Harnack check.
pub const HARNACK_FUNCTION: &str = "one_plus_tanh_y";
/// Harnack point pairs `(z, z')` for `m = d = 1`.
pub const HARNACK_PAIRS: [([f64; 2], [f64; 2]); 5] = [
    ([1.0, 0.0], [1.0, 0.5]),
    ([1.0, 0.0], [1.5, 0.0]),
    ([0.5, 0.0], [0.5, 0.5]),
    ([1.0, 0.0], [0.5, 1.0]),
    ([2.0, 0.0], [1.0, -1.0]),
];
/// Pathwise tolerance of the extended-to-basic reduction.
pub const REDUCTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckStatus {
    pub check: String,
    pub passed: bool,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    /// Estimator rows followed by one row per bound-check grid point.
    pub rows: Vec<ResultRow>,
    pub statuses: Vec<CheckStatus>,
    #[serde(skip)]
    pub report: Report,
}

impl ExperimentOutcome {
    pub fn success(&self) -> bool {
        self.statuses.iter().all(|s| s.passed)
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            statuses: &'a [CheckStatus],
            rows: &'a [ResultRow],
            checks: &'a [BoundCheckReport],
        }
        Ok(serde_json::to_string_pretty(&Doc {
            statuses: &self.statuses,
            rows: &self.rows,
            checks: &self.report.checks,
        })?)
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::from("# Experiment summary\n\n| check | status | summary |\n|---|---|---|\n");
        for s in &self.statuses {
            let status = if s.passed { "pass" } else { "**FAIL**" };
            md.push_str(&format!("| {} | {} | {} |\n", s.check, status, s.summary));
        }
        md.push('\n');
        md.push_str(&self.report.markdown);
        md
    }
}

fn status(check: Check, passed: bool, summary: impl Into<String>) -> CheckStatus {
    CheckStatus {
        check: check.as_str().to_string(),
        passed,
        summary: summary.into(),
    }
}

fn verdict_status(check: Check, r: &BoundCheckReport) -> CheckStatus {
    status(
        check,
        r.verdict != Verdict::Violated,
        format!(
            "{} (fitted constant {:.4}, max ratio {:.4}, {} points)",
            r.verdict.as_str(),
            r.fitted_constant,
            r.max_ratio,
            r.grid.len()
        ),
    )
}

fn test_functions(names: &[&str], model: &ModelSpec) -> Result<Vec<TestFunction>> {
    names.iter().map(|n| builtin_test_function(n, model)).collect()
}

/// Calibration `T ∈ {0.25, 1, 4}`, `x₁ ∈ {0, 1, 2}`; holdout `T ∈ {0.5, 2}`,
/// `x₁ ∈ {0.5, 1.5}`; all other coordinates zero.
pub fn standard_grid(model: &ModelSpec) -> TwoGrid {
    let point = |x: f64| {
        let mut z = vec![0.0; model.m + model.d];
        z[0] = x;
        z
    };
    let prod = |ts: &[f64], xs: &[f64]| {
        ts.iter()
            .flat_map(|&t| xs.iter().map(move |&x| (t, point(x))))
            .collect::<Vec<_>>()
    };
    TwoGrid {
        calibration: prod(&[0.25, 1.0, 4.0], &[0.0, 1.0, 2.0]),
        holdout: prod(&[0.5, 2.0], &[0.5, 1.5]),
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    model: ModelSpec,
    mc: McParams,
    rows: Vec<ResultRow>,
    statuses: Vec<CheckStatus>,
    reports: Vec<BoundCheckReport>,
    a6_constant: Option<f64>,
}

impl Runner<'_> {
    fn bismut_vs_fd(&mut self) -> Result<()> {
        let run = &self.cfg.run;
        let names: Vec<&str> = run.functions.iter().map(String::as_str).collect();
        let fs = test_functions(&names, &self.model)?;
        let refs: Vec<&TestFunction> = fs.iter().collect();
        let (m, d) = (self.model.m, self.model.d);
        let (mut agree, mut total, mut invalid) = (0usize, 0usize, 0usize);
        for &horizon in &run.horizons {
            for z0 in &run.z0 {
                let eps = run.eps.unwrap_or_else(|| default_fd_eps(z0));
                for vf in &run.v {
                    let v = Direction::from_flat(m, d, vf)?;
                    let bis = estimate_gradient_bismut_many(&self.model, &refs, z0, &v, horizon, &self.mc)?;
                    let fd = estimate_gradient_fd_many(&self.model, &refs, z0, &v, horizon, &self.mc, eps)?;
                    for ((f, b), e) in fs.iter().zip(&bis).zip(&fd) {
                        let row = |q: String, est| {
                            ResultRow::from_estimate("bismut-vs-fd", &q, est, horizon, z0, vf, self.mc.n_steps)
                        };
                        self.rows.push(row(format!("bismut:{}", f.name), b));
                        self.rows.push(row(format!("fd:{}", f.name), e));
                        if let Some(g) = f.closed_form_grad(horizon, &z0[..m], &z0[m..]) {
                            let exact: f64 = g.iter().zip(vf).map(|(a, b)| a * b).sum();
                            let mut r = row(format!("closed_form:{}", f.name), b);
                            r.mean = exact;
                            r.stderr = 0.0;
                            r.n_valid = 0;
                            r.n_invalid = 0;
                            self.rows.push(r);
                        }
                        let band = BAND * (b.stderr.powi(2) + e.stderr.powi(2)).sqrt();
                        let bias = eps * eps * (1.0 + e.mean.abs());
                        total += 1;
                        invalid += b.n_invalid + e.n_invalid;
                        if (b.mean - e.mean).abs() <= band + bias {
                            agree += 1;
                        } else {
                            log::warn!(
                                "bismut-vs-fd: {} at T={horizon}, z0={}, v={}: {} vs {}",
                                f.name,
                                fmt_vec(z0),
                                fmt_vec(vf),
                                b.mean,
                                e.mean
                            );
                        }
                    }
                }
            }
        }
        self.statuses.push(status(
            Check::BismutVsFd,
            agree == total && invalid == 0,
            format!("{agree}/{total} gradient pairs agree within 4 combined stderr; {invalid} invalid paths"),
        ));
        Ok(())
    }

    fn power_law_ready(&mut self, check: Check) -> bool {
        if self.model.power_params.is_none() || self.model.is_extended() {
            self.statuses.push(status(
                check,
                true,
                format!("skipped: needs a basic power-law model, got {}", self.model.name),
            ));
            return false;
        }
        true
    }

    fn a5(&mut self) -> Result<()> {
        if !self.power_law_ready(Check::A5) {
            return Ok(());
        }
        let fs = test_functions(&BOUNDED_SUITE, &self.model)?;
        let refs: Vec<&TestFunction> = fs.iter().collect();
        let r = check_a5(&self.model, self.cfg.suite.p, &standard_grid(&self.model), &refs, &self.mc)?;
        self.statuses.push(verdict_status(Check::A5, &r));
        self.reports.push(r);
        Ok(())
    }

    fn a6_report(&self) -> Result<BoundCheckReport> {
        let fs = test_functions(&BOUNDED_SUITE, &self.model)?;
        let refs: Vec<&TestFunction> = fs.iter().collect();
        check_a6(&self.model, &standard_grid(&self.model), &refs, &self.mc)
    }

    fn a6(&mut self) -> Result<()> {
        if self.model.is_extended() {
            self.statuses.push(status(Check::A6, true, "skipped: needs a basic model"));
            return Ok(());
        }
        let r = self.a6_report()?;
        self.statuses.push(verdict_status(Check::A6, &r));
        if r.verdict == Verdict::BoundedConstantFound {
            self.a6_constant = Some(r.fitted_constant);
        }
        self.reports.push(r);
        Ok(())
    }

    fn lemma31(&mut self) -> Result<()> {
        let grid = |ts: &[f64], xs: &[f64]| {
            ts.iter()
                .flat_map(|&t| xs.iter().map(move |&x| (t, vec![x])))
                .collect::<Vec<_>>()
        };
        let r = check_lemma31(
            &grid(&[0.25, 1.0, 4.0], &[0.0, 1.0, 2.0]),
            &grid(&[0.5, 2.0], &[0.5, 1.5]),
            1.0,
            1.0,
            &self.mc,
        )?;
        self.statuses.push(verdict_status(Check::Lemma31, &r));
        self.reports.push(r);
        Ok(())
    }

    fn lemma_ll(&mut self) -> Result<()> {
        let d = self.model.d;
        let l = self.model.power_params.map(|p| p.l).unwrap_or(1.0);
        let x = self.cfg.run.z0[0][0];
        let integrands = [
            LqIntegrand::ConstantUnit { d },
            LqIntegrand::Zero { d },
            LqIntegrand::BrownianSign { d },
            LqIntegrand::PowerLawRow { x, l },
        ];
        let r = check_lemma_ll(&integrands, &[2.0, 4.0], &self.cfg.run.horizons, &self.mc)?;
        self.statuses.push(verdict_status(Check::LemmaLl, &r));
        self.reports.push(r);
        Ok(())
    }

    fn harnack(&mut self) -> Result<()> {
        let model = &self.model;
        if model.is_extended() || model.m != 1 || model.d != 1 {
            self.statuses.push(status(
                Check::Harnack,
                true,
                "skipped: needs a basic model with m = d = 1",
            ));
            return Ok(());
        }
        let identity = model.name == "constant_identity";
        let c_fit = if identity {
            None
        } else {
            match self.a6_constant {
                Some(c) => Some(c),
                None => {
                    let r = self.a6_report()?;
                    if r.verdict != Verdict::BoundedConstantFound {
                        self.statuses.push(status(
                            Check::Harnack,
                            r.verdict != Verdict::Violated,
                            format!("no square-field constant available ({})", r.verdict.as_str()),
                        ));
                        return Ok(());
                    }
                    Some(r.fitted_constant)
                }
            }
        };
        let f = builtin_test_function(HARNACK_FUNCTION, model)?;
        let mut records = Vec::new();
        for &horizon in &self.cfg.run.horizons {
            let c = match c_fit {
                Some(fit) => (fit / horizon).sqrt(),
                None => 1.0 / horizon.sqrt(),
            };
            for (z, zp) in HARNACK_PAIRS {
                let rho = rho_upper_bound(model, &z, &zp)?.bound;
                records.push(check_harnack(model, &f, &z, &zp, horizon, c, rho, &self.mc)?);
            }
        }
        let r = harnack_report(&records);
        self.statuses.push(verdict_status(Check::Harnack, &r));
        self.reports.push(r);
        Ok(())
    }

    fn reduction(&mut self) -> Result<()> {
        if self.model.is_extended() {
            self.statuses.push(status(Check::Reduction, true, "skipped: needs a basic model"));
            return Ok(());
        }
        let ext = self.model.as_extended_reduction()?;
        let run = &self.cfg.run;
        let (m, d) = (self.model.m, self.model.d);
        let horizon = run.horizons[0];
        let z0 = &run.z0[0];
        let grid = TimeGrid::new(horizon, run.n_steps)?;
        let n = run.n_paths.min(10_000);
        let mut worst = 0.0f64;
        let mut xi_exact = true;
        let mut invalid = 0usize;
        for vf in &run.v {
            let v = Direction::from_flat(m, d, vf)?;
            let per_path = self.mc.policy.map_indexed(n, |i| {
                let rng = RngStream::new(self.mc.seed, i as u64);
                let pb = simulate_basic(&self.model, &z0[..m], &z0[m..], &v, &grid, rng).ok()?;
                let (pe, xi) = simulate_extended_traced(&ext, &z0[..m], &z0[m..], &v, &grid, rng).ok()?;
                let wb = bismut_weight(&pb, &v, horizon).ok()?;
                let we = extended_weight(&pe, &v, horizon).ok()?;
                let telescopes = xi.iter().enumerate().all(|(k, row)| {
                    row.iter()
                        .zip(&v.v1)
                        .all(|(a, b)| *a == grid.remaining_fraction(k) * b)
                });
                Some(((wb.m_t - we.m_t).abs(), telescopes))
            });
            for p in &per_path {
                match p {
                    Some((diff, ok)) => {
                        worst = worst.max(*diff);
                        xi_exact &= ok;
                    }
                    None => invalid += 1,
                }
            }
            self.rows.push(ResultRow {
                experiment_id: "reduction".into(),
                quantity: "max_abs_weight_difference".into(),
                mean: worst,
                stderr: 0.0,
                n_valid: n - invalid,
                n_invalid: invalid,
                seed: self.mc.seed,
                horizon,
                z0: fmt_vec(z0),
                v: fmt_vec(vf),
                n_steps: run.n_steps,
            });
        }
        self.statuses.push(status(
            Check::Reduction,
            worst <= REDUCTION_TOL && xi_exact && invalid == 0,
            format!(
                "max |extended - basic| weight difference {worst:e} over {n} paths per direction; \
                 direction process telescopes exactly: {xi_exact}"
            ),
        ));
        Ok(())
    }
}

/// Runs every suite named in the config, in the order
/// bismut-vs-fd, a5, a6, lemma31, lemmaLL, harnack, reduction.
pub fn run_experiment(cfg: &ExperimentConfig, policy: ExecPolicy) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let run = &cfg.run;
    let mut runner = Runner {
        cfg,
        model: cfg.model.build()?,
        mc: McParams::new(run.n_paths, run.n_steps, cfg.master_seed()).with_policy(policy),
        rows: Vec::new(),
        statuses: Vec::new(),
        reports: Vec::new(),
        a6_constant: None,
    };
    for check in Check::ALL {
        if !cfg.suite.checks.contains(&check) {
            continue;
        }
        log::info!("running {check}");
        match check {
            Check::BismutVsFd => runner.bismut_vs_fd()?,
            Check::A5 => runner.a5()?,
            Check::A6 => runner.a6()?,
            Check::Lemma31 => runner.lemma31()?,
            Check::LemmaLl => runner.lemma_ll()?,
            Check::Harnack => runner.harnack()?,
            Check::Reduction => runner.reduction()?,
        }
    }
    let report = build_report(&runner.reports);
    let mut rows = runner.rows;
    rows.extend(report.rows.iter().cloned());
    Ok(ExperimentOutcome {
        rows,
        statuses: runner.statuses,
        report,
    })
}

/// Writes `results.csv`, `results.json`, and `report.md` (as selected) into
/// `dir`, creating it if needed.
pub fn write_artifacts(outcome: &ExperimentOutcome, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for format in formats {
        let (name, body) = match format {
            Format::Csv => ("results.csv", outcome.to_csv()?),
            Format::Json => ("results.json", outcome.to_json()?),
            Format::Markdown => ("report.md", outcome.to_markdown()),
        };
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct PathRow {
    path_index: usize,
    b_t: String,
    x_t: String,
    y_t: String,
    min_eig_qt: f64,
    status: &'static str,
    term_drift: Option<f64>,
    term_trace: Option<f64>,
    term_inner: Option<f64>,
    m_t: Option<f64>,
}

/// Per-path audit CSV for the first `(T, z0, v)` of the config.
pub fn dump_paths(cfg: &ExperimentConfig, policy: ExecPolicy) -> Result<String> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let run = &cfg.run;
    let (m, d) = (model.m, model.d);
    let horizon = run.horizons[0];
    let z0 = &run.z0[0];
    let v = Direction::from_flat(m, d, &run.v[0])?;
    let grid = TimeGrid::new(horizon, run.n_steps)?;
    let seed = cfg.master_seed();
    let extended = model.is_extended();
    let rows = policy.map_indexed(run.n_paths, |i| -> Result<PathRow> {
        let rng = RngStream::new(seed, i as u64);
        let pf = if extended {
            simulate_extended(&model, &z0[..m], &z0[m..], &v, &grid, rng)
        } else {
            simulate(&model, &z0[..m], &z0[m..], &v, &grid, rng)
        }?;
        let w = if pf.is_valid() {
            weight_for(extended, &pf, &v, horizon).ok()
        } else {
            None
        };
        Ok(PathRow {
            path_index: i,
            b_t: fmt_vec(&pf.b_t),
            x_t: fmt_vec(&pf.x_t),
            y_t: fmt_vec(&pf.y_t),
            min_eig_qt: pf.min_eig_qt,
            status: if pf.is_valid() && w.is_none() {
                "singular_qt"
            } else {
                pf.status.as_str()
            },
            term_drift: w.map(|w| w.term_drift),
            term_trace: w.map(|w| w.term_trace),
            term_inner: w.map(|w| w.term_inner),
            m_t: w.map(|w| w.m_t),
        })
    });
    let mut out = csv::Writer::from_writer(Vec::new());
    for row in rows {
        out.serialize(row?)?;
    }
    let bytes = out.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Catalogue of built-in models, observables, and stochastic-integral
/// integrands.
pub fn list_builtins() -> String {
    let mut s = String::from("Models:\n");
    for (name, desc) in BUILTIN_MODELS {
        s.push_str(&format!("  {name:<18} {desc}\n"));
    }
    s.push_str("\nTest functions:\n");
    for (name, desc) in BUILTIN_TEST_FUNCTIONS {
        s.push_str(&format!("  {name:<18} {desc}\n"));
    }
    s.push_str("\nStochastic-integral integrands (rho_t):\n");
    for (name, desc) in LQ_INTEGRAND_CATALOGUE {
        s.push_str(&format!("  {name:<18} {desc}\n"));
    }
    s.push_str("\nChecks: ");
    let names: Vec<&str> = Check::ALL.iter().map(Check::as_str).collect();
    s.push_str(&names.join(", "));
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalogue_lists_models_functions_and_integrands() {
        let text = list_builtins();
        for needle in [
            "power_law",
            "constant_identity",
            "extended_demo",
            "y^2 + x^2 T + T^2/2",
            "constant_unit",
            "brownian_sign",
        ] {
            assert!(text.contains(needle), "missing {needle}");
        }
    }

    #[test]
    fn standard_grid_is_disjoint() {
        let model = crate::model::make_power_law_model(1, 1, 1.0).unwrap();
        let g = standard_grid(&model);
        assert_eq!(g.calibration.len(), 9);
        assert_eq!(g.holdout.len(), 4);
        assert!(g.holdout.iter().all(|h| !g.calibration.contains(h)));
    }
}
