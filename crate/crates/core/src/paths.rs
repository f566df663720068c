//! Euler–Maruyama simulation of the basic and extended SDEs, accumulating in
//! one pass every path functional the Bismut weight consumes.
//!
//! Both simulators carry a direction process `ξ` and accumulate the
//! v-dependent integrals against `∇_{ξ_t}`:
//!
//! * basic: `ξ_t = v₁(T−t)/T` in closed form, so `∇_{ξ_t}σ = ((T−t)/T)∇_{v₁}σ`;
//! * extended: `ξ_t = ((T−t)/T)·η_t`, where the integrating factor absorbs the
//!   `−ξ/(T−t)` drift exactly and `η` carries the remaining coefficients.
//!
//! With `σ₁ = I, b₁ = 0, b₂ = 0` the extended recursion leaves `η ≡ v₁` and
//! performs the same floating-point operations as the basic one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SmallLu};
use crate::model::{Direction, ModelKind, ModelSpec};
use crate::numerics::{Kahan, KahanBuf};
use crate::rng::RngStream;

/// σ₁ condition estimate beyond which a step counts as singular.
pub const SIGMA1_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("T", format!("must be positive, got {horizon}")));
        }
        if n_steps < 2 {
            return Err(Error::param("n_steps", format!("must be >= 2, got {n_steps}")));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt() * k as f64
    }

    /// `(T − t_k)/T`, exact in the step counts.
    #[inline]
    pub fn remaining_fraction(&self, k: usize) -> f64 {
        (self.n_steps - k) as f64 / self.n_steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PathStatus {
    Valid,
    NonFinite,
    SingularSigma1,
}

impl PathStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PathStatus::Valid => "valid",
            PathStatus::NonFinite => "non_finite",
            PathStatus::SingularSigma1 => "singular_sigma1",
        }
    }
}

/// Everything one simulated path contributes to the weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFunctionals {
    /// Terminal value of the x-driving Brownian motion.
    pub b_t: Vec<f64>,
    /// Terminal value of the y-driving Brownian motion.
    pub b_tilde_t: Vec<f64>,
    pub x_t: Vec<f64>,
    pub y_t: Vec<f64>,
    /// `∫σσᵀ(X_t)dt`, `d × d` row-major.
    pub q_t: Vec<f64>,
    /// `∫(∇_{ξ_t}σ)σᵀ(X_t)dt`, `d × d` row-major.
    pub trace_integral: Vec<f64>,
    /// `∫(∇_{ξ_t}σ)(X_t)dB̃_t`.
    pub weighted_stoch_integral: Vec<f64>,
    /// `∫σ(X_t)dB̃_t`.
    pub sigma_stoch_integral: Vec<f64>,
    /// `∫(∇_{ξ_t}b₂)(X_t)dt`; zero for basic models.
    pub drift_grad_integral: Vec<f64>,
    /// `∫⟨σ₁(X_t)⁻¹ξ_t/(T−t), dB_t⟩`; zero for basic models.
    pub xi_drift_weight: f64,
    pub min_eig_qt: f64,
    /// `a²∫|X_t|^{2l}dt` when the model declares power-law constants.
    pub degeneracy_scalar: Option<f64>,
    pub status: PathStatus,
}

impl PathFunctionals {
    pub fn is_valid(&self) -> bool {
        self.status == PathStatus::Valid
    }

    pub fn trace_qt(&self) -> f64 {
        linalg::trace(&self.q_t, self.y_t.len())
    }
}

fn check_inputs(model: &ModelSpec, x0: &[f64], y0: &[f64], v: &Direction) -> Result<()> {
    let dim = |what: &str, expected: usize, got: usize| {
        if expected != got {
            Err(Error::Dimension {
                what: what.into(),
                expected,
                got,
            })
        } else {
            Ok(())
        }
    };
    dim("x0", model.m, x0.len())?;
    dim("y0", model.d, y0.len())?;
    dim("v1", model.m, v.v1.len())?;
    dim("v2", model.d, v.v2.len())?;
    if x0.iter().chain(y0).any(|c| !c.is_finite()) {
        return Err(Error::param("z0", "entries must be finite"));
    }
    Ok(())
}

/// Per-step buffers shared by both simulators.
struct Scratch {
    db: Vec<f64>,
    dbt: Vec<f64>,
    sig: Vec<f64>,
    gsig: Vec<f64>,
    mat: Vec<f64>,
    vec_d: Vec<f64>,
    xi: Vec<f64>,
    x: Vec<f64>,
}

impl Scratch {
    fn new(m: usize, d: usize, x0: &[f64]) -> Self {
        Self {
            db: vec![0.0; m],
            dbt: vec![0.0; d],
            sig: vec![0.0; d * d],
            gsig: vec![0.0; d * d],
            mat: vec![0.0; d * d],
            vec_d: vec![0.0; d],
            xi: vec![0.0; m],
            x: x0.to_vec(),
        }
    }
}

/// Accumulators common to both simulators.
struct Accumulators {
    b: KahanBuf,
    bt: KahanBuf,
    x_incr: KahanBuf,
    q: KahanBuf,
    trace: KahanBuf,
    wstoch: KahanBuf,
    sstoch: KahanBuf,
    drift_grad: KahanBuf,
    drift_y: KahanBuf,
    xi_weight: Kahan,
    degeneracy: Kahan,
}

impl Accumulators {
    fn new(m: usize, d: usize) -> Self {
        Self {
            b: KahanBuf::zeros(m),
            bt: KahanBuf::zeros(d),
            x_incr: KahanBuf::zeros(m),
            q: KahanBuf::zeros(d * d),
            trace: KahanBuf::zeros(d * d),
            wstoch: KahanBuf::zeros(d),
            sstoch: KahanBuf::zeros(d),
            drift_grad: KahanBuf::zeros(d),
            drift_y: KahanBuf::zeros(d),
            xi_weight: Kahan::new(),
            degeneracy: Kahan::new(),
        }
    }

    /// The σ-dependent updates at one left endpoint, given `ξ` in scratch.
    #[inline]
    fn accumulate_sigma_terms(&mut self, model: &ModelSpec, s: &mut Scratch, dt: f64) {
        let d = model.d;
        model.sigma.eval(&s.x, &mut s.sig);
        model.sigma.directional(&s.x, &s.xi, &mut s.gsig);

        linalg::gram(&s.sig, d, &mut s.mat);
        self.q.add_scaled(&s.mat, dt);

        linalg::mat_mul_bt(&s.gsig, &s.sig, d, &mut s.mat);
        self.trace.add_scaled(&s.mat, dt);

        linalg::mat_vec(&s.gsig, d, d, &s.dbt, &mut s.vec_d);
        self.wstoch.add(&s.vec_d);

        linalg::mat_vec(&s.sig, d, d, &s.dbt, &mut s.vec_d);
        self.sstoch.add(&s.vec_d);

        if let Some(p) = model.power_params {
            self.degeneracy.add(linalg::norm(&s.x).powf(2.0 * p.l) * dt);
        }
    }

    fn finish(
        self,
        model: &ModelSpec,
        x: Vec<f64>,
        y0: &[f64],
        status: PathStatus,
    ) -> PathFunctionals {
        let d = model.d;
        let sstoch = self.sstoch.into_values();
        let drift_y = self.drift_y.into_values();
        let y_t: Vec<f64> = y0
            .iter()
            .zip(&sstoch)
            .zip(&drift_y)
            .map(|((y, s), b)| (y + s) + b)
            .collect();
        let q_t = self.q.into_values();
        let mut status = status;
        let all_finite = x.iter().chain(&y_t).chain(&q_t).all(|c| c.is_finite());
        if status == PathStatus::Valid && !all_finite {
            status = PathStatus::NonFinite;
        }
        let min_eig_qt = if all_finite {
            linalg::min_eigenvalue_sym(&q_t, d)
        } else {
            f64::NAN
        };
        let degeneracy_scalar = model
            .power_params
            .map(|p| p.a * p.a * self.degeneracy.value());
        let pf = PathFunctionals {
            b_t: self.b.into_values(),
            b_tilde_t: self.bt.into_values(),
            x_t: x,
            y_t,
            q_t,
            trace_integral: self.trace.into_values(),
            weighted_stoch_integral: self.wstoch.into_values(),
            sigma_stoch_integral: sstoch,
            drift_grad_integral: self.drift_grad.into_values(),
            xi_drift_weight: self.xi_weight.value(),
            min_eig_qt,
            degeneracy_scalar,
            status,
        };
        if pf.status == PathStatus::Valid && !functionals_finite(&pf) {
            return PathFunctionals {
                status: PathStatus::NonFinite,
                ..pf
            };
        }
        pf
    }
}

fn functionals_finite(pf: &PathFunctionals) -> bool {
    pf.trace_integral
        .iter()
        .chain(&pf.weighted_stoch_integral)
        .chain(&pf.drift_grad_integral)
        .chain(&pf.b_t)
        .chain(&pf.b_tilde_t)
        .all(|c| c.is_finite())
        && pf.xi_drift_weight.is_finite()
}

#[inline]
fn set_x(x: &mut [f64], x0: &[f64], incr: &KahanBuf) {
    for ((xi, a), b) in x.iter_mut().zip(x0).zip(incr.values()) {
        *xi = a + b;
    }
}

/// Simulates `dX = dB, dY = σ(X)dB̃` from `(x0, y0)`.
///
/// `X_t = x0 + B_t` is carried exactly (no scheme error); every integral is a
/// left-endpoint sum with Kahan compensation.
pub fn simulate_basic(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    v: &Direction,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<PathFunctionals> {
    if model.is_extended() {
        return Err(Error::ModelKind("simulate_basic requires a basic model".into()));
    }
    check_inputs(model, x0, y0, v)?;
    let (m, d) = (model.m, model.d);
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut inc = rng.increments();
    let mut s = Scratch::new(m, d, x0);
    let mut acc = Accumulators::new(m, d);

    for k in 0..n {
        inc.fill(sqrt_dt, &mut s.db);
        inc.fill(sqrt_dt, &mut s.dbt);
        let w = grid.remaining_fraction(k);
        for (xi, v1) in s.xi.iter_mut().zip(&v.v1) {
            *xi = w * v1;
        }
        acc.accumulate_sigma_terms(model, &mut s, dt);

        acc.b.add(&s.db);
        acc.bt.add(&s.dbt);
        acc.x_incr.add(&s.db);
        set_x(&mut s.x, x0, &acc.x_incr);
    }
    let x = s.x;
    Ok(acc.finish(model, x, y0, PathStatus::Valid))
}

/// Simulates the extended system
/// `dX = σ₁(X)dB + b₁(X)dt, dY = σ₂(X)dB̃ + b₂(X)dt`
/// jointly with the direction process `ξ`.
pub fn simulate_extended(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    v: &Direction,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<PathFunctionals> {
    extended_impl(model, x0, y0, v, grid, rng, None)
}

/// As [`simulate_extended`], also returning `ξ` at every grid node
/// `t_0, …, t_n` (row `k` is `ξ_{t_k}`).
pub fn simulate_extended_traced(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    v: &Direction,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<(PathFunctionals, Vec<Vec<f64>>)> {
    let mut trace = Vec::with_capacity(grid.n_steps() + 1);
    let pf = extended_impl(model, x0, y0, v, grid, rng, Some(&mut trace))?;
    Ok((pf, trace))
}

fn extended_impl(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    v: &Direction,
    grid: &TimeGrid,
    rng: RngStream,
    mut trace: Option<&mut Vec<Vec<f64>>>,
) -> Result<PathFunctionals> {
    let ModelKind::Extended(ext) = &model.kind else {
        return Err(Error::ModelKind("simulate_extended requires an extended model".into()));
    };
    check_inputs(model, x0, y0, v)?;
    let (m, d) = (model.m, model.d);
    let n = grid.n_steps();
    let dt = grid.dt();
    let horizon = grid.horizon();
    let sqrt_dt = dt.sqrt();
    let mut inc = rng.increments();
    let mut s = Scratch::new(m, d, x0);
    let mut acc = Accumulators::new(m, d);

    let mut eta = v.v1.clone();
    let mut sig1 = vec![0.0; m * m];
    let mut gsig1 = vec![0.0; m * m];
    let mut b1 = vec![0.0; m];
    let mut gb1 = vec![0.0; m];
    let mut b2 = vec![0.0; d];
    let mut gb2 = vec![0.0; d];
    let mut vm = vec![0.0; m];
    let mut incr = vec![0.0; m];
    let mut solved = vec![0.0; m];
    let mut lu = SmallLu::new(m);
    let mut status = PathStatus::Valid;

    for k in 0..n {
        inc.fill(sqrt_dt, &mut s.db);
        inc.fill(sqrt_dt, &mut s.dbt);
        let w = grid.remaining_fraction(k);
        for (xi, e) in s.xi.iter_mut().zip(&eta) {
            *xi = w * e;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(s.xi.clone());
        }
        acc.accumulate_sigma_terms(model, &mut s, dt);

        ext.b2.eval(&s.x, &mut b2);
        ext.b2.directional(&s.x, &s.xi, &mut gb2);
        acc.drift_grad.add_scaled(&gb2, dt);
        acc.drift_y.add_scaled(&b2, dt);

        ext.sigma1.eval(&s.x, &mut sig1);
        if status == PathStatus::Valid {
            if !lu.factor(&sig1) || lu.condition_1(&sig1) > SIGMA1_CONDITION_LIMIT {
                status = PathStatus::SingularSigma1;
            } else {
                // ⟨σ₁⁻¹ξ/(T−t), ΔB⟩
                lu.solve(&s.xi, &mut solved);
                let rem = horizon * w;
                acc.xi_weight.add(linalg::dot(&solved, &s.db) / rem);
            }
        }

        // η_{k+1} = η_k + (T/(T−t_k))·[(∇_ξσ₁)ΔB + (∇_ξb₁)dt]
        ext.sigma1.directional(&s.x, &s.xi, &mut gsig1);
        ext.b1.directional(&s.x, &s.xi, &mut gb1);
        linalg::mat_vec(&gsig1, m, m, &s.db, &mut vm);
        for ((e, a), b) in eta.iter_mut().zip(&vm).zip(&gb1) {
            *e += (a + b * dt) / w;
        }

        ext.b1.eval(&s.x, &mut b1);
        linalg::mat_vec(&sig1, m, m, &s.db, &mut incr);
        for (c, b) in incr.iter_mut().zip(&b1) {
            *c += b * dt;
        }
        acc.b.add(&s.db);
        acc.bt.add(&s.dbt);
        acc.x_incr.add(&incr);
        set_x(&mut s.x, x0, &acc.x_incr);
    }
    if let Some(tr) = trace {
        // (T − t_n)/T = 0
        let w = grid.remaining_fraction(n);
        tr.push(eta.iter().map(|e| w * e).collect());
    }
    let x = s.x;
    Ok(acc.finish(model, x, y0, status))
}

/// Dispatches on the model kind.
pub fn simulate(
    model: &ModelSpec,
    x0: &[f64],
    y0: &[f64],
    v: &Direction,
    grid: &TimeGrid,
    rng: RngStream,
) -> Result<PathFunctionals> {
    match model.kind {
        ModelKind::Basic => simulate_basic(model, x0, y0, v, grid, rng),
        ModelKind::Extended(_) => simulate_extended(model, x0, y0, v, grid, rng),
    }
}
