use serde::Serialize;

use super::{fmt_vec, BoundCheckReport, CheckPoint, GridRole, InequalityId, Verdict, BAND};
use crate::error::{Error, Result};
use crate::estimators::{terminal_states, McParams};
use crate::model::{ModelSpec, TestFunction};
use crate::numerics::mean_stderr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HarnackVerdict {
    Holds,
    Violated,
    Inconclusive,
}

impl HarnackVerdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            HarnackVerdict::Holds => "Holds",
            HarnackVerdict::Violated => "Violated",
            HarnackVerdict::Inconclusive => "Inconclusive",
        }
    }
}

/// Both sides of `Pf(z') ≤ Pf(z) + C·ρ·√(Pf²(z'))` for `P = P_T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackRecord {
    pub f: String,
    pub horizon: f64,
    pub z: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub c: f64,
    pub rho: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs` and its delta-method standard error.
    pub excess: f64,
    pub excess_stderr: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub seed: u64,
    pub n_steps: usize,
    pub verdict: HarnackVerdict,
}

/// Evaluates the Harnack-type inequality with paths from `z` and `z'`
/// sharing increments. Holds when `lhs − rhs ≤ 4·stderr`.
#[allow(clippy::too_many_arguments)]
pub fn check_harnack(
    model: &ModelSpec,
    f: &TestFunction,
    z: &[f64],
    z_prime: &[f64],
    horizon: f64,
    c: f64,
    rho: f64,
    mc: &McParams,
) -> Result<HarnackRecord> {
    if !(c >= 0.0 && rho >= 0.0) {
        return Err(Error::param("C, rho", "must be nonnegative"));
    }
    let from_z = terminal_states(model, z, horizon, mc)?;
    let from_zp = terminal_states(model, z_prime, horizon, mc)?;
    let mut diff = Vec::with_capacity(mc.n_paths);
    let mut fzp_sq = Vec::with_capacity(mc.n_paths);
    let mut fz = Vec::with_capacity(mc.n_paths);
    for (a, b) in from_z.iter().zip(&from_zp) {
        let (Some(a), Some(b)) = (a, b) else { continue };
        let (fa, fb) = (f.eval(a), f.eval(b));
        if fa < 0.0 || fb < 0.0 {
            return Err(Error::param(
                "f",
                format!("{} takes the negative value {} on a sampled path", f.name, fa.min(fb)),
            ));
        }
        diff.push(fb - fa);
        fzp_sq.push(fb * fb);
        fz.push(fa);
    }
    let n_valid = diff.len();
    let n_invalid = mc.n_paths - n_valid;
    let mut record = HarnackRecord {
        f: f.name.clone(),
        horizon,
        z: z.to_vec(),
        z_prime: z_prime.to_vec(),
        c,
        rho,
        lhs: f64::NAN,
        rhs: f64::NAN,
        excess: f64::NAN,
        excess_stderr: f64::NAN,
        n_valid,
        n_invalid,
        seed: mc.seed,
        n_steps: mc.n_steps,
        verdict: HarnackVerdict::Inconclusive,
    };
    if n_valid < 2 {
        return Ok(record);
    }
    let (d_mean, _) = mean_stderr(&diff);
    let (s_mean, _) = mean_stderr(&fzp_sq);
    let (fz_mean, _) = mean_stderr(&fz);
    let root = s_mean.sqrt();
    let excess = d_mean - c * rho * root;
    let excess_stderr = if root > 0.0 {
        let slope = c * rho / (2.0 * root);
        let linear: Vec<f64> = diff.iter().zip(&fzp_sq).map(|(d, s)| d - slope * s).collect();
        mean_stderr(&linear).1
    } else {
        mean_stderr(&diff).1
    };
    record.lhs = fz_mean + d_mean;
    record.rhs = fz_mean + c * rho * root;
    record.excess = excess;
    record.excess_stderr = excess_stderr;
    record.verdict = if !excess.is_finite() {
        HarnackVerdict::Inconclusive
    } else if excess <= BAND * excess_stderr {
        HarnackVerdict::Holds
    } else {
        HarnackVerdict::Violated
    };
    Ok(record)
}

/// Packs Harnack records into a report: ratios are `lhs/rhs` and the
/// fitted constant is the `C` used.
pub fn harnack_report(records: &[HarnackRecord]) -> BoundCheckReport {
    let mut verdict = if records.is_empty() {
        Verdict::Inconclusive
    } else {
        Verdict::BoundedConstantFound
    };
    let mut notes = Vec::new();
    let grid = records
        .iter()
        .map(|r| {
            match r.verdict {
                HarnackVerdict::Violated => verdict = Verdict::Violated,
                HarnackVerdict::Inconclusive => {
                    notes.push(format!(
                        "inconclusive: {} from {} to {}",
                        r.f,
                        fmt_vec(&r.z),
                        fmt_vec(&r.z_prime)
                    ));
                    if verdict == Verdict::BoundedConstantFound {
                        verdict = Verdict::Inconclusive;
                    }
                }
                HarnackVerdict::Holds => {}
            }
            let (ratio, ratio_stderr) = if r.rhs > 0.0 {
                (r.lhs / r.rhs, r.excess_stderr / r.rhs)
            } else {
                (0.0, 0.0)
            };
            CheckPoint {
                label: format!("{}/z'={}", r.f, fmt_vec(&r.z_prime)),
                role: GridRole::Holdout,
                horizon: r.horizon,
                z0: r.z.clone(),
                v: r.z_prime.iter().zip(&r.z).map(|(a, b)| a - b).collect(),
                p: None,
                ratio,
                ratio_stderr,
                n_valid: r.n_valid,
                n_invalid: r.n_invalid,
                seed: r.seed,
                n_steps: r.n_steps,
                ok: r.verdict == HarnackVerdict::Holds,
            }
        })
        .collect();
    let c = records.iter().map(|r| r.c).fold(0.0, f64::max);
    BoundCheckReport::assemble(InequalityId::A8, grid, verdict, c, notes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_test_function, make_power_law_model};

    #[test]
    fn coincident_points_hold_with_equality() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("one_plus_tanh_y", &model).unwrap();
        let mc = McParams::new(300, 20, 4);
        let r = check_harnack(&model, &f, &[1.0, 0.0], &[1.0, 0.0], 1.0, 2.0, 0.0, &mc).unwrap();
        assert_eq!(r.excess, 0.0);
        assert_eq!(r.lhs, r.rhs);
        assert_eq!(r.verdict, HarnackVerdict::Holds);
    }

    #[test]
    fn constant_observable_always_holds() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("one", &model).unwrap();
        let mc = McParams::new(100, 10, 4);
        let r = check_harnack(&model, &f, &[1.0, 0.0], &[0.0, 2.0], 1.0, 0.5, 3.0, &mc).unwrap();
        assert_eq!(r.lhs, 1.0);
        assert_eq!(r.rhs, 2.5);
        assert_eq!(r.verdict, HarnackVerdict::Holds);
    }

    #[test]
    fn negative_observable_is_rejected() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("sin_y", &model).unwrap();
        let mc = McParams::new(100, 10, 4);
        assert!(check_harnack(&model, &f, &[1.0, 0.0], &[1.0, 0.5], 1.0, 1.0, 1.0, &mc).is_err());
    }

    #[test]
    fn a_too_small_constant_is_detected() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("one_plus_tanh_y", &model).unwrap();
        let mc = McParams::new(4000, 20, 4);
        let r = check_harnack(&model, &f, &[1.0, 0.0], &[1.0, 1.0], 1.0, 0.0, 1.0, &mc).unwrap();
        assert_eq!(r.verdict, HarnackVerdict::Violated);
        assert_eq!(harnack_report(&[r]).verdict, Verdict::Violated);
    }
}
