//! TOML experiment configuration.
//!
//! ```toml
//! [model]
//! builtin = "power_law"
//! m = 1
//! d = 1
//! l = 1.0
//!
//! [run]
//! T = [1.0]
//! z0 = [[1.0, 1.0]]
//! v = [[1.0, 0.0], [0.0, 1.0]]
//! functions = ["y_squared"]
//! n_paths = 20000
//! n_steps = 100
//! master_seed = 7
//!
//! [suite]
//! checks = ["bismut-vs-fd"]
//!
//! [output]
//! directory = "out"
//! formats = ["csv", "json", "markdown"]
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{builtin_model, builtin_test_function, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub builtin: String,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        builtin_model(&self.builtin, self.m, self.d, self.l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub horizons: Vec<f64>,
    pub z0: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Observables for the gradient comparison.
    #[serde(default = "default_functions")]
    pub functions: Vec<String>,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Mandatory; kept optional here only so that a missing seed is reported
    /// by name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Finite-difference step; `1e-3·(1 + |z0|)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
}

fn default_functions() -> Vec<String> {
    vec!["y_squared".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    BismutVsFd,
    A5,
    A6,
    Lemma31,
    #[serde(rename = "lemmaLL")]
    LemmaLl,
    Harnack,
    Reduction,
}

impl Check {
    pub const ALL: [Check; 7] = [
        Check::BismutVsFd,
        Check::A5,
        Check::A6,
        Check::Lemma31,
        Check::LemmaLl,
        Check::Harnack,
        Check::Reduction,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Check::BismutVsFd => "bismut-vs-fd",
            Check::A5 => "a5",
            Check::A6 => "a6",
            Check::Lemma31 => "lemma31",
            Check::LemmaLl => "lemmaLL",
            Check::Harnack => "harnack",
            Check::Reduction => "reduction",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub checks: Vec<Check>,
    /// Exponent for the L^p gradient bound.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Markdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> String {
    "out".into()
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json, Format::Markdown]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
    pub suite: SuiteConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    /// Parses and validates.
    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::config("toml", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn master_seed(&self) -> u64 {
        self.run.master_seed.expect("validated config has a seed")
    }

    pub fn validate(&self) -> Result<()> {
        let run = &self.run;
        if run.master_seed.is_none() {
            return Err(Error::config(
                "master_seed",
                "missing; every run needs an explicit seed in [run]",
            ));
        }
        let model = self.model.build()?;
        let n = model.m + model.d;
        if run.horizons.is_empty() {
            return Err(Error::config("T", "list must be nonempty"));
        }
        if let Some(t) = run.horizons.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::config("T", format!("horizons must be positive, got {t}")));
        }
        for (field, list) in [("z0", &run.z0), ("v", &run.v)] {
            if list.is_empty() {
                return Err(Error::config(field, "list must be nonempty"));
            }
            if let Some(bad) = list.iter().find(|p| p.len() != n) {
                return Err(Error::config(
                    field,
                    format!("entries need m + d = {n} coordinates, got {}", bad.len()),
                ));
            }
            if list.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::config(field, "entries must be finite"));
            }
        }
        if run.functions.is_empty() {
            return Err(Error::config("functions", "list must be nonempty"));
        }
        for f in &run.functions {
            builtin_test_function(f, &model)
                .map_err(|e| Error::config("functions", e.to_string()))?;
        }
        if run.n_paths < 100 {
            return Err(Error::config("n_paths", format!("must be >= 100, got {}", run.n_paths)));
        }
        if run.n_steps < 2 {
            return Err(Error::config("n_steps", format!("must be >= 2, got {}", run.n_steps)));
        }
        if let Some(eps) = run.eps {
            if !(eps.is_finite() && eps > 0.0) {
                return Err(Error::config("eps", format!("must be positive, got {eps}")));
            }
        }
        if self.suite.checks.is_empty() {
            return Err(Error::config("checks", "list must be nonempty"));
        }
        if !(self.suite.p > 1.0) {
            return Err(Error::config("p", format!("must be > 1, got {}", self.suite.p)));
        }
        if self.output.formats.is_empty() {
            return Err(Error::config("formats", "list must be nonempty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
builtin = "power_law"
l = 1.0

[run]
T = [1.0]
z0 = [[1.0, 1.0]]
v = [[1.0, 0.0]]
n_paths = 1000
n_steps = 50
master_seed = 3

[suite]
checks = ["bismut-vs-fd", "lemmaLL"]
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: ExperimentConfig = MINIMAL.parse().unwrap();
        assert_eq!(cfg.model.m, 1);
        assert_eq!(cfg.run.functions, vec!["y_squared".to_string()]);
        assert_eq!(cfg.suite.checks, vec![Check::BismutVsFd, Check::LemmaLl]);
        assert_eq!(cfg.output.formats.len(), 3);
        assert_eq!(cfg.master_seed(), 3);
    }

    #[test]
    fn round_trip_is_identity() {
        let cfg: ExperimentConfig = MINIMAL.parse().unwrap();
        let again: ExperimentConfig = cfg.to_toml().parse().unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_seed_is_named() {
        let text = MINIMAL.replace("master_seed = 3\n", "");
        let err = text.parse::<ExperimentConfig>().unwrap_err();
        assert!(err.to_string().contains("master_seed"), "{err}");
    }

    #[test]
    fn offending_fields_are_named() {
        for (from, to, field) in [
            ("n_paths = 1000", "n_paths = 10", "n_paths"),
            ("n_steps = 50", "n_steps = 1", "n_steps"),
            ("z0 = [[1.0, 1.0]]", "z0 = [[1.0]]", "z0"),
            ("v = [[1.0, 0.0]]", "v = []", "v"),
            ("T = [1.0]", "T = [-1.0]", "T"),
            ("builtin = \"power_law\"", "builtin = \"nope\"", "model.builtin"),
        ] {
            let err = MINIMAL.replace(from, to).parse::<ExperimentConfig>().unwrap_err();
            assert!(err.to_string().contains(field), "{field}: {err}");
        }
    }

    #[test]
    fn unknown_keys_and_checks_are_rejected() {
        assert!(MINIMAL.replace("l = 1.0", "l = 1.0\nfoo = 2").parse::<ExperimentConfig>().is_err());
        assert!(MINIMAL.replace("\"lemmaLL\"", "\"nope\"").parse::<ExperimentConfig>().is_err());
    }
}
