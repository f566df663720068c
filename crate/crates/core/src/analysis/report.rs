use serde::Serialize;

use super::{fmt_vec, BoundCheckReport, GridRole, Verdict};
use crate::error::Result;
use crate::estimators::MCEstimate;

/// One CSV/JSON row:
/// `experiment_id, quantity, mean, stderr, n_valid, n_invalid, seed, T, z0, v, n_steps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub experiment_id: String,
    pub quantity: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub z0: String,
    pub v: String,
    pub n_steps: usize,
}

impl ResultRow {
    #[allow(clippy::too_many_arguments)]
    pub fn from_estimate(
        experiment_id: &str,
        quantity: &str,
        e: &MCEstimate,
        horizon: f64,
        z0: &[f64],
        v: &[f64],
        n_steps: usize,
    ) -> Self {
        Self {
            experiment_id: experiment_id.to_string(),
            quantity: quantity.to_string(),
            mean: e.mean,
            stderr: e.stderr,
            n_valid: e.n_valid,
            n_invalid: e.n_invalid,
            seed: e.master_seed,
            horizon,
            z0: fmt_vec(z0),
            v: fmt_vec(v),
            n_steps,
        }
    }
}

pub fn rows_to_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record([
            "experiment_id",
            "quantity",
            "mean",
            "stderr",
            "n_valid",
            "n_invalid",
            "seed",
            "T",
            "z0",
            "v",
            "n_steps",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub checks: Vec<BoundCheckReport>,
    pub rows: Vec<ResultRow>,
    pub violated: bool,
    #[serde(skip)]
    pub markdown: String,
}

impl Report {
    /// `true` unless some check was violated.
    pub fn success(&self) -> bool {
        !self.violated
    }

    pub fn exit_code(&self) -> i32 {
        if self.violated {
            1
        } else {
            0
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn role_str(role: GridRole) -> &'static str {
    match role {
        GridRole::Calibration => "calibration",
        GridRole::Holdout => "holdout",
    }
}

/// Aggregates check reports into one row per (inequality, grid point) and
/// a Markdown summary. Violated checks and failing points are highlighted.
pub fn build_report(checks: &[BoundCheckReport]) -> Report {
    let mut rows = Vec::new();
    let mut md = String::from("# Bound checks\n\n");
    if checks.is_empty() {
        md.push_str("No checks were run.\n");
    } else {
        md.push_str("| check | verdict | fitted constant | max ratio | points |\n");
        md.push_str("|---|---|---|---|---|\n");
        for c in checks {
            let verdict = match c.verdict {
                Verdict::Violated => format!("**{}**", c.verdict.as_str()),
                v => v.as_str().to_string(),
            };
            md.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} | {} |\n",
                c.inequality_id.as_str(),
                verdict,
                c.fitted_constant,
                c.max_ratio,
                c.grid.len()
            ));
        }
    }
    for c in checks {
        let id = c.inequality_id.as_str();
        md.push_str(&format!("\n## {id}\n\n"));
        md.push_str("| label | role | T | z0 | ratio | stderr | ok |\n|---|---|---|---|---|---|---|\n");
        for p in &c.grid {
            let ok = if p.ok { "yes" } else { "**NO**" };
            md.push_str(&format!(
                "| {} | {} | {} | {} | {:.6} | {:.2e} | {} |\n",
                p.label,
                role_str(p.role),
                p.horizon,
                fmt_vec(&p.z0),
                p.ratio,
                p.ratio_stderr,
                ok
            ));
            let mut quantity = format!("{}:{}:ratio", p.label, role_str(p.role));
            if let Some(q) = p.p {
                quantity = format!("{}:p={q}:{}:ratio", p.label, role_str(p.role));
            }
            rows.push(ResultRow {
                experiment_id: id.to_string(),
                quantity,
                mean: p.ratio,
                stderr: p.ratio_stderr,
                n_valid: p.n_valid,
                n_invalid: p.n_invalid,
                seed: p.seed,
                horizon: p.horizon,
                z0: fmt_vec(&p.z0),
                v: fmt_vec(&p.v),
                n_steps: p.n_steps,
            });
        }
        for n in &c.notes {
            md.push_str(&format!("\n- {n}"));
        }
        if !c.notes.is_empty() {
            md.push('\n');
        }
    }
    Report {
        checks: checks.to_vec(),
        rows,
        violated: checks.iter().any(|c| c.verdict == Verdict::Violated),
        markdown: md,
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CheckPoint, InequalityId};
    use super::*;

    fn point(ratio: f64, role: GridRole) -> CheckPoint {
        CheckPoint {
            label: "f".into(),
            role,
            horizon: 1.0,
            z0: vec![0.0, 0.0],
            v: vec![1.0, 0.0],
            p: None,
            ratio,
            ratio_stderr: 0.01,
            n_valid: 10,
            n_invalid: 0,
            seed: 1,
            n_steps: 10,
            ok: true,
        }
    }

    #[test]
    fn empty_report_succeeds() {
        let r = build_report(&[]);
        assert!(r.success());
        assert!(r.rows.is_empty());
        assert!(r.to_csv().unwrap().starts_with("experiment_id,quantity,mean"));
    }

    #[test]
    fn violated_entry_fails_and_is_highlighted() {
        let c = BoundCheckReport::two_grid(
            InequalityId::A5,
            vec![point(1.0, GridRole::Calibration), point(2.0, GridRole::Holdout)],
            vec![],
        );
        assert_eq!(c.verdict, Verdict::Violated);
        assert_eq!(c.fitted_constant, 1.0);
        assert_eq!(c.max_ratio, 2.0);
        let r = build_report(&[c]);
        assert!(!r.success());
        assert_eq!(r.exit_code(), 1);
        assert!(r.markdown.contains("**Violated**"));
        assert!(r.markdown.contains("**NO**"));
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn holdout_within_slack_is_bounded() {
        let c = BoundCheckReport::two_grid(
            InequalityId::A6,
            vec![point(1.0, GridRole::Calibration), point(1.15, GridRole::Holdout)],
            vec![],
        );
        assert_eq!(c.verdict, Verdict::BoundedConstantFound);
        let csv = build_report(&[c]).to_csv().unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().next().unwrap().ends_with("T,z0,v,n_steps"));
    }
}
