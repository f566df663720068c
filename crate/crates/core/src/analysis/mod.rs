//! Verdicts on the gradient, Harnack, and moment inequalities.
//!
//! Constants in these inequalities are existential, so every check is
//! two-grid: a constant is fitted as the largest ratio on a calibration grid
//! and must not be exceeded by more than 20% plus four standard errors on a
//! disjoint holdout grid.

mod bounds;
mod harnack;
mod report;
mod rho;

pub use bounds::{
    a5_point, a6_point, check_a5, check_a6, check_lemma31, check_lemma_ll, lq_rhs, A5Point, A6Point,
    TwoGrid,
};
pub use harnack::{check_harnack, harnack_report, HarnackRecord, HarnackVerdict};
pub use report::{build_report, rows_to_csv, Report, ResultRow};
pub use rho::{rho_upper_bound, CurveDescriptor, RhoUpperBound};

use serde::Serialize;

/// Slack allowed on the holdout grid relative to the fitted constant.
pub const HOLDOUT_SLACK: f64 = 1.2;
/// Width of statistical bands, in standard errors.
pub const BAND: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InequalityId {
    A5,
    A6,
    Lemma31,
    LemmaLL,
    A8,
}

impl InequalityId {
    pub fn as_str(&self) -> &'static str {
        match self {
            InequalityId::A5 => "A5",
            InequalityId::A6 => "A6",
            InequalityId::Lemma31 => "Lemma31",
            InequalityId::LemmaLL => "LemmaLL",
            InequalityId::A8 => "A8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    BoundedConstantFound,
    Violated,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::BoundedConstantFound => "BoundedConstantFound",
            Verdict::Violated => "Violated",
            Verdict::Inconclusive => "Inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GridRole {
    Calibration,
    Holdout,
}

/// One evaluated grid point of a check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckPoint {
    /// Observable or integrand name plus direction, e.g. `sin_y/v=(0,1)`.
    pub label: String,
    pub role: GridRole,
    pub horizon: f64,
    pub z0: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Option<f64>,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub seed: u64,
    pub n_steps: usize,
    /// Whether the point satisfies the check's acceptance rule.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheckReport {
    pub inequality_id: InequalityId,
    pub grid: Vec<CheckPoint>,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    pub verdict: Verdict,
    pub fitted_constant: f64,
    /// Skipped points and other remarks.
    pub notes: Vec<String>,
}

impl BoundCheckReport {
    /// Fits the constant on the calibration points and verifies the holdout
    /// points against `HOLDOUT_SLACK·C + BAND·stderr`.
    pub(crate) fn two_grid(id: InequalityId, mut grid: Vec<CheckPoint>, notes: Vec<String>) -> Self {
        let calib: Vec<f64> = grid
            .iter()
            .filter(|p| p.role == GridRole::Calibration)
            .map(|p| p.ratio)
            .collect();
        let n_holdout = grid.iter().filter(|p| p.role == GridRole::Holdout).count();
        let fitted = calib.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut verdict = Verdict::BoundedConstantFound;
        if calib.is_empty() || n_holdout == 0 || !fitted.is_finite() {
            verdict = Verdict::Inconclusive;
        }
        for p in &mut grid {
            p.ok = match p.role {
                GridRole::Calibration => p.ratio.is_finite(),
                GridRole::Holdout => p.ratio <= HOLDOUT_SLACK * fitted + BAND * p.ratio_stderr,
            };
            if !p.ok && verdict == Verdict::BoundedConstantFound {
                verdict = Verdict::Violated;
            }
        }
        Self::assemble(id, grid, verdict, fitted, notes)
    }

    pub(crate) fn assemble(
        id: InequalityId,
        grid: Vec<CheckPoint>,
        verdict: Verdict,
        fitted_constant: f64,
        notes: Vec<String>,
    ) -> Self {
        let ratios: Vec<f64> = grid.iter().map(|p| p.ratio).collect();
        let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for n in &notes {
            log::info!("{}: {n}", id.as_str());
        }
        Self {
            inequality_id: id,
            grid,
            ratios,
            max_ratio,
            verdict,
            fitted_constant,
            notes,
        }
    }
}

pub(crate) fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", parts.join(","))
}
