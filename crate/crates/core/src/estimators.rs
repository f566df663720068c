//! Monte Carlo estimators: `P_T f`, `∇_v P_T f` through the Bismut weight,
//! a common-random-numbers finite-difference reference gradient, and the
//! moment quantities of the stochastic-integral and negative-moment lemmas.
//!
//! Paths are simulated under an [`ExecPolicy`] and reduced in path-index
//! order with a pairwise tree, so results are bitwise independent of the
//! number of workers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::linalg;
use crate::model::{Direction, ModelKind, ModelSpec, TestFunction};
use crate::numerics::{mean_stderr, Kahan};
use crate::paths::{simulate, simulate_extended_traced, PathFunctionals, TimeGrid};
use crate::rng::RngStream;
use crate::weights::{weight_for, WeightBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub master_seed: u64,
}

impl MCEstimate {
    /// Builds an estimate from index-ordered per-path samples, `None` marking
    /// an invalid path.
    pub fn from_samples(samples: &[Option<f64>], master_seed: u64) -> Result<Self> {
        let valid: Vec<f64> = samples.iter().flatten().copied().collect();
        let n_invalid = samples.len() - valid.len();
        if valid.is_empty() {
            return Err(Error::Estimation(format!(
                "all {} paths invalid",
                samples.len()
            )));
        }
        let (mean, stderr) = mean_stderr(&valid);
        Ok(Self {
            mean,
            stderr,
            n_valid: valid.len(),
            n_invalid,
            master_seed,
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_valid + self.n_invalid
    }

    pub fn invalid_fraction(&self) -> f64 {
        self.n_invalid as f64 / self.n_total() as f64
    }

    /// `|mean − target| ≤ k·stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McParams {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub policy: ExecPolicy,
}

impl McParams {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            policy: ExecPolicy::Parallel,
        }
    }

    pub fn with_policy(mut self, policy: ExecPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_paths(mut self, n_paths: usize) -> Self {
        self.n_paths = n_paths;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::param("n_paths", format!("must be >= 2, got {}", self.n_paths)));
        }
        Ok(())
    }

    fn grid(&self, horizon: f64) -> Result<TimeGrid> {
        TimeGrid::new(horizon, self.n_steps)
    }
}

fn split_z0<'a>(model: &ModelSpec, z0: &'a [f64]) -> Result<(&'a [f64], &'a [f64])> {
    if z0.len() != model.m + model.d {
        return Err(Error::Dimension {
            what: "z0".into(),
            expected: model.m + model.d,
            got: z0.len(),
        });
    }
    Ok(z0.split_at(model.m))
}

fn terminal(pf: &PathFunctionals) -> Vec<f64> {
    pf.x_t.iter().chain(&pf.y_t).copied().collect()
}

/// Terminal state and weight of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    pub z_t: Vec<f64>,
    pub weight: WeightBreakdown,
}

/// Simulates `n_paths` paths and returns the terminal state and weight of
/// each, `None` for invalid paths (non-finite state or singular `Q_T`).
pub fn weighted_paths(
    model: &ModelSpec,
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
) -> Result<Vec<Option<WeightedPath>>> {
    params.validate()?;
    let (x0, y0) = split_z0(model, z0)?;
    let grid = params.grid(horizon)?;
    // surface dimension errors once rather than per path
    simulate(model, x0, y0, v, &grid, RngStream::new(params.seed, 0))?;
    let extended = model.is_extended();
    let out = params.policy.map_indexed(params.n_paths, |i| {
        let pf = simulate(model, x0, y0, v, &grid, RngStream::new(params.seed, i as u64)).ok()?;
        if !pf.is_valid() {
            return None;
        }
        let weight = weight_for(extended, &pf, v, horizon).ok()?;
        Some(WeightedPath {
            z_t: terminal(&pf),
            weight,
        })
    });
    Ok(out)
}

pub(crate) fn terminal_states(
    model: &ModelSpec,
    z0: &[f64],
    horizon: f64,
    params: &McParams,
) -> Result<Vec<Option<Vec<f64>>>> {
    params.validate()?;
    let (x0, y0) = split_z0(model, z0)?;
    let grid = params.grid(horizon)?;
    let v = Direction::zero(model.m, model.d);
    simulate(model, x0, y0, &v, &grid, RngStream::new(params.seed, 0))?;
    Ok(params.policy.map_indexed(params.n_paths, |i| {
        let pf = simulate(model, x0, y0, &v, &grid, RngStream::new(params.seed, i as u64)).ok()?;
        pf.is_valid().then(|| terminal(&pf))
    }))
}

/// `P_T f(z0)` for several observables on shared paths.
pub fn estimate_pt_many(
    model: &ModelSpec,
    fs: &[&TestFunction],
    z0: &[f64],
    horizon: f64,
    params: &McParams,
) -> Result<Vec<MCEstimate>> {
    let states = terminal_states(model, z0, horizon, params)?;
    fs.iter()
        .map(|f| {
            let samples: Vec<Option<f64>> = states
                .iter()
                .map(|s| s.as_ref().map(|z| f.eval(z)))
                .collect();
            MCEstimate::from_samples(&samples, params.seed)
        })
        .collect()
}

pub fn estimate_pt(
    model: &ModelSpec,
    f: &TestFunction,
    z0: &[f64],
    horizon: f64,
    params: &McParams,
) -> Result<MCEstimate> {
    Ok(estimate_pt_many(model, &[f], z0, horizon, params)?.remove(0))
}

/// Bismut estimates of `∇_v P_T f(z0)` for several observables on shared
/// paths: the sample mean of `f(X_T, Y_T)·M_T`.
pub fn estimate_gradient_bismut_many(
    model: &ModelSpec,
    fs: &[&TestFunction],
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
) -> Result<Vec<MCEstimate>> {
    let paths = weighted_paths(model, z0, v, horizon, params)?;
    fs.iter()
        .map(|f| {
            let samples: Vec<Option<f64>> = paths
                .iter()
                .map(|p| p.as_ref().map(|p| f.eval(&p.z_t) * p.weight.m_t))
                .collect();
            MCEstimate::from_samples(&samples, params.seed)
        })
        .collect()
}

pub fn estimate_gradient_bismut(
    model: &ModelSpec,
    f: &TestFunction,
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
) -> Result<MCEstimate> {
    Ok(estimate_gradient_bismut_many(model, &[f], z0, v, horizon, params)?.remove(0))
}

/// Sample mean of the weight itself (`f ≡ 1`); centred at zero.
pub fn estimate_weight_mean(
    model: &ModelSpec,
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
) -> Result<MCEstimate> {
    let paths = weighted_paths(model, z0, v, horizon, params)?;
    let samples: Vec<Option<f64>> = paths
        .iter()
        .map(|p| p.as_ref().map(|p| p.weight.m_t))
        .collect();
    MCEstimate::from_samples(&samples, params.seed)
}

/// Default finite-difference step `1e-3·(1 + |z0|)`.
pub fn default_fd_eps(z0: &[f64]) -> f64 {
    1e-3 * (1.0 + linalg::norm(z0))
}

/// Central differences `[P̂f(z0+εv) − P̂f(z0−εv)]/(2ε)` where both sides of
/// path `i` reuse the increments of path `i` (common random numbers). The
/// standard error comes from the per-path differences.
pub fn estimate_gradient_fd_many(
    model: &ModelSpec,
    fs: &[&TestFunction],
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
    eps: f64,
) -> Result<Vec<MCEstimate>> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::param("eps", format!("must be positive, got {eps}")));
    }
    params.validate()?;
    split_z0(model, z0)?;
    let flat = v.flat();
    if flat.len() != z0.len() {
        return Err(Error::Dimension {
            what: "v".into(),
            expected: z0.len(),
            got: flat.len(),
        });
    }
    let plus: Vec<f64> = z0.iter().zip(&flat).map(|(z, c)| z + eps * c).collect();
    let minus: Vec<f64> = z0.iter().zip(&flat).map(|(z, c)| z - eps * c).collect();
    let up = terminal_states(model, &plus, horizon, params)?;
    let down = terminal_states(model, &minus, horizon, params)?;
    fs.iter()
        .map(|f| {
            let samples: Vec<Option<f64>> = up
                .iter()
                .zip(&down)
                .map(|(a, b)| match (a, b) {
                    (Some(a), Some(b)) => Some((f.eval(a) - f.eval(b)) / (2.0 * eps)),
                    _ => None,
                })
                .collect();
            MCEstimate::from_samples(&samples, params.seed)
        })
        .collect()
}

pub fn estimate_gradient_fd(
    model: &ModelSpec,
    f: &TestFunction,
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
    eps: f64,
) -> Result<MCEstimate> {
    Ok(estimate_gradient_fd_many(model, &[f], z0, v, horizon, params, eps)?.remove(0))
}

/// `E(∫₀ᵀ|x + B_t|^{2n}dt)^{−α}` with a left-endpoint time integral.
pub fn estimate_negative_moment(
    x: &[f64],
    horizon: f64,
    n_exp: f64,
    alpha: f64,
    params: &McParams,
) -> Result<MCEstimate> {
    if x.is_empty() {
        return Err(Error::param("x", "must be nonempty"));
    }
    if !(n_exp >= 1.0) {
        return Err(Error::param("n", format!("must be >= 1, got {n_exp}")));
    }
    if !(alpha > 0.0) {
        return Err(Error::param("alpha", format!("must be > 0, got {alpha}")));
    }
    params.validate()?;
    let grid = params.grid(horizon)?;
    let m = x.len();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let samples = params.policy.map_indexed(params.n_paths, |i| {
        let mut inc = RngStream::new(params.seed, i as u64).increments();
        let mut db = vec![0.0; m];
        let mut b = vec![0.0; m];
        let mut xt = x.to_vec();
        let mut integral = Kahan::new();
        for _ in 0..grid.n_steps() {
            integral.add(linalg::norm(&xt).powf(2.0 * n_exp) * dt);
            inc.fill(sqrt_dt, &mut db);
            for ((bi, di), (xi, x0)) in b.iter_mut().zip(&db).zip(xt.iter_mut().zip(x)) {
                *bi += di;
                *xi = x0 + *bi;
            }
        }
        let val = integral.value();
        (val > 0.0 && val.is_finite()).then(|| val.powf(-alpha))
    });
    MCEstimate::from_samples(&samples, params.seed)
}

/// Built-in predictable integrands `ρ_t` for the stochastic-integral moment
/// inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LqIntegrand {
    /// `ρ_t = e₁ ∈ Rᵈ`.
    ConstantUnit { d: usize },
    /// `ρ_t = 0`.
    Zero { d: usize },
    /// `ρ_t = sign(B̃¹_t)·e₁` (sign 0 = +1); bounded and B̃-adapted, `|ρ_t| = 1`.
    BrownianSign { d: usize },
    /// `ρ_t = σ(x + B_t)ᵀe₁` for the one-dimensional power law
    /// `σ(x) = xˡ`: `|ρ_t| = |x + B_t|ˡ`.
    PowerLawRow { x: f64, l: f64 },
}

impl LqIntegrand {
    pub fn name(&self) -> &'static str {
        match self {
            LqIntegrand::ConstantUnit { .. } => "constant_unit",
            LqIntegrand::Zero { .. } => "zero",
            LqIntegrand::BrownianSign { .. } => "brownian_sign",
            LqIntegrand::PowerLawRow { .. } => "power_law_row",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            LqIntegrand::ConstantUnit { d } | LqIntegrand::Zero { d } | LqIntegrand::BrownianSign { d } => d,
            LqIntegrand::PowerLawRow { .. } => 1,
        }
    }
}

pub const LQ_INTEGRAND_CATALOGUE: &[(&str, &str)] = &[
    ("constant_unit", "rho_t = e1; E|int rho dB~|^q = E|N(0,T)|^q, RHS = {q(q-1)/2}^{q/2} T^{q/2}"),
    ("zero", "rho_t = 0; LHS = RHS = 0"),
    ("brownian_sign", "rho_t = sign(B~1_t) e1; |rho_t| = 1, RHS as constant_unit"),
    (
        "power_law_row",
        "rho_t = sigma(x + B_t)^T e1 with sigma(x) = x^l; RHS by quadrature of E|x + B_t|^{lq}",
    ),
];

/// `E|∫₀ᵀ⟨ρ_t, dB̃_t⟩|^q` with left-endpoint (predictable) sums.
pub fn estimate_lq_moment(
    integrand: &LqIntegrand,
    q: f64,
    horizon: f64,
    params: &McParams,
) -> Result<MCEstimate> {
    if !(q >= 2.0) {
        return Err(Error::param("q", format!("must be >= 2, got {q}")));
    }
    if integrand.dim() == 0 {
        return Err(Error::param("d", "must be positive"));
    }
    params.validate()?;
    let grid = params.grid(horizon)?;
    let d = integrand.dim();
    let sqrt_dt = grid.dt().sqrt();
    let samples = params.policy.map_indexed(params.n_paths, |i| {
        let mut inc = RngStream::new(params.seed, i as u64).increments();
        let mut db = [0.0];
        let mut dbt = vec![0.0; d];
        let mut b = 0.0;
        let mut bt1 = 0.0;
        let mut integral = Kahan::new();
        for _ in 0..grid.n_steps() {
            inc.fill(sqrt_dt, &mut db);
            inc.fill(sqrt_dt, &mut dbt);
            let rho1 = match *integrand {
                LqIntegrand::ConstantUnit { .. } => 1.0,
                LqIntegrand::Zero { .. } => 0.0,
                LqIntegrand::BrownianSign { .. } => {
                    if bt1 >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                LqIntegrand::PowerLawRow { x, l } => power_law_scalar(x + b, l),
            };
            integral.add(rho1 * dbt[0]);
            b += db[0];
            bt1 += dbt[0];
        }
        let v = integral.value().abs().powf(q);
        v.is_finite().then_some(v)
    });
    MCEstimate::from_samples(&samples, params.seed)
}

/// `xˡ` for integer `l`, `|x|ˡ` otherwise (matches the 1-d power-law model).
pub fn power_law_scalar(x: f64, l: f64) -> f64 {
    if l.fract() == 0.0 {
        x.powi(l as i32)
    } else {
        x.abs().powf(l)
    }
}

/// Sample means of `|ξ_{t_k}|²` at every grid node `k = 0..=n` for an
/// extended model.
pub fn estimate_xi_second_moments(
    model: &ModelSpec,
    z0: &[f64],
    v: &Direction,
    horizon: f64,
    params: &McParams,
) -> Result<Vec<MCEstimate>> {
    if !matches!(model.kind, ModelKind::Extended(_)) {
        return Err(Error::ModelKind("xi moments need an extended model".into()));
    }
    params.validate()?;
    let (x0, y0) = split_z0(model, z0)?;
    let grid = params.grid(horizon)?;
    simulate_extended_traced(model, x0, y0, v, &grid, RngStream::new(params.seed, 0))?;
    let traces = params.policy.map_indexed(params.n_paths, |i| {
        let (pf, xi) =
            simulate_extended_traced(model, x0, y0, v, &grid, RngStream::new(params.seed, i as u64))
                .ok()?;
        pf.is_valid()
            .then(|| xi.iter().map(|row| linalg::dot(row, row)).collect::<Vec<f64>>())
    });
    (0..=grid.n_steps())
        .map(|k| {
            let samples: Vec<Option<f64>> =
                traces.iter().map(|t| t.as_ref().map(|t| t[k])).collect();
            MCEstimate::from_samples(&samples, params.seed)
        })
        .collect()
}

/// Diagnostic for the integrability condition: `E‖Q_T⁻¹‖²` with a Hill
/// estimate of the tail index of `‖Q_T⁻¹‖²` from the top 5% of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InverseCovarianceDiagnostic {
    pub estimate: MCEstimate,
    pub hill_tail_index: f64,
    /// Tail index below 2 means the sample variance is not trustworthy.
    pub heavy_tail_warning: bool,
}

pub fn estimate_qt_inverse_sq_norm(
    model: &ModelSpec,
    z0: &[f64],
    horizon: f64,
    params: &McParams,
) -> Result<InverseCovarianceDiagnostic> {
    params.validate()?;
    let (x0, y0) = split_z0(model, z0)?;
    let grid = params.grid(horizon)?;
    let v = Direction::zero(model.m, model.d);
    let samples = params.policy.map_indexed(params.n_paths, |i| {
        let pf = simulate(model, x0, y0, &v, &grid, RngStream::new(params.seed, i as u64)).ok()?;
        (pf.is_valid() && pf.min_eig_qt > 0.0).then(|| pf.min_eig_qt.powi(-2))
    });
    let estimate = MCEstimate::from_samples(&samples, params.seed)?;
    let mut sorted: Vec<f64> = samples.iter().flatten().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (sorted.len() / 20).max(2).min(sorted.len() - 1);
    let threshold = sorted[k];
    let hill = if threshold > 0.0 {
        let s: f64 = sorted[..k].iter().map(|v| (v / threshold).ln()).sum();
        if s > 0.0 {
            k as f64 / s
        } else {
            f64::INFINITY
        }
    } else {
        f64::NAN
    };
    Ok(InverseCovarianceDiagnostic {
        estimate,
        hill_tail_index: hill,
        heavy_tail_warning: !(hill >= 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_test_function, constant_identity_model, make_power_law_model};

    fn params(n: usize) -> McParams {
        McParams::new(n, 50, 2024)
    }

    #[test]
    fn constant_observable_is_exact() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let one = builtin_test_function("one", &model).unwrap();
        let e = estimate_pt(&model, &one, &[0.5, 0.0], 1.0, &params(200)).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.n_valid + e.n_invalid, 200);
    }

    #[test]
    fn n_paths_must_be_at_least_two() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let one = builtin_test_function("one", &model).unwrap();
        assert!(estimate_pt(&model, &one, &[0.5, 0.0], 1.0, &params(1)).is_err());
        assert!(estimate_pt(&model, &one, &[0.5], 1.0, &params(10)).is_err());
    }

    #[test]
    fn fd_is_noise_free_for_linear_f_and_identity_sigma() {
        let model = constant_identity_model(1, 1).unwrap();
        let f = builtin_test_function("x_plus_y", &model).unwrap();
        let v = Direction::new(vec![1.0], vec![1.0]).unwrap();
        let e = estimate_gradient_fd(&model, &f, &[0.3, -0.2], &v, 1.0, &params(500), 1e-3).unwrap();
        assert!((e.mean - 2.0).abs() < 1e-9);
        assert!(e.stderr < 1e-12);
    }

    #[test]
    fn fd_rejects_nonpositive_eps() {
        let model = constant_identity_model(1, 1).unwrap();
        let f = builtin_test_function("x_plus_y", &model).unwrap();
        let v = Direction::unit(1, 1, 0);
        assert!(estimate_gradient_fd(&model, &f, &[0.0, 0.0], &v, 1.0, &params(10), 0.0).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("y_squared", &model).unwrap();
        let v = Direction::unit(1, 1, 0);
        let p = params(3000);
        let a = estimate_gradient_bismut(&model, &f, &[1.0, 1.0], &v, 1.0, &p.with_policy(ExecPolicy::Sequential))
            .unwrap();
        let b = estimate_gradient_bismut(&model, &f, &[1.0, 1.0], &v, 1.0, &p.with_policy(ExecPolicy::Parallel))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_moment_alpha_to_zero() {
        let e = estimate_negative_moment(&[1.0], 1.0, 1.0, 1e-8, &params(500)).unwrap();
        assert!((e.mean - 1.0).abs() < 1e-6);
    }

    #[test]
    fn negative_moment_large_x_regime() {
        // ∫|X|²dt ≈ x²T + T²/2 concentrates for x = 10, T = 0.1
        let e = estimate_negative_moment(&[10.0], 0.1, 1.0, 1.0, &McParams::new(4000, 100, 5)).unwrap();
        let limit = 1.0 / (100.0 * 0.1 + 0.005);
        assert!((e.mean / limit - 1.0).abs() < 0.1, "{e:?}");
    }

    #[test]
    fn negative_moment_rejects_bad_exponents() {
        assert!(estimate_negative_moment(&[1.0], 1.0, 0.5, 1.0, &params(10)).is_err());
        assert!(estimate_negative_moment(&[1.0], 1.0, 1.0, 0.0, &params(10)).is_err());
    }

    #[test]
    fn lq_zero_integrand_is_zero() {
        let e = estimate_lq_moment(&LqIntegrand::Zero { d: 2 }, 3.0, 1.0, &params(100)).unwrap();
        assert_eq!(e.mean, 0.0);
        assert!(estimate_lq_moment(&LqIntegrand::Zero { d: 1 }, 1.5, 1.0, &params(100)).is_err());
    }

    #[test]
    fn lq_constant_unit_q2_is_isometry() {
        let t = 0.8;
        let e = estimate_lq_moment(&LqIntegrand::ConstantUnit { d: 1 }, 2.0, t, &McParams::new(40_000, 20, 1))
            .unwrap();
        assert!(e.within(t, 4.0), "{e:?}");
    }

    #[test]
    fn xi_moments_need_extended_model() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let v = Direction::unit(1, 1, 0);
        assert!(estimate_xi_second_moments(&model, &[0.0, 0.0], &v, 1.0, &params(10)).is_err());
    }
}
