use serde::Serialize;

use super::{fmt_vec, BoundCheckReport, CheckPoint, GridRole, InequalityId, Verdict, BAND};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_gradient_bismut_many, estimate_lq_moment, estimate_negative_moment, estimate_pt_many,
    power_law_scalar, LqIntegrand, MCEstimate, McParams,
};
use crate::linalg;
use crate::model::{Direction, ModelSpec, TestFunction};

/// Calibration and holdout points `(T, z0)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoGrid {
    pub calibration: Vec<(f64, Vec<f64>)>,
    pub holdout: Vec<(f64, Vec<f64>)>,
}

impl TwoGrid {
    /// Product grids `T × x` with a common `y` for `m = d = 1`.
    pub fn product(cal_t: &[f64], cal_x: &[f64], hold_t: &[f64], hold_x: &[f64], y: f64) -> Self {
        let prod = |ts: &[f64], xs: &[f64]| {
            ts.iter()
                .flat_map(|&t| xs.iter().map(move |&x| (t, vec![x, y])))
                .collect::<Vec<_>>()
        };
        Self {
            calibration: prod(cal_t, cal_x),
            holdout: prod(hold_t, hold_x),
        }
    }

    fn points(&self) -> impl Iterator<Item = (GridRole, f64, &Vec<f64>)> {
        self.calibration
            .iter()
            .map(|(t, z)| (GridRole::Calibration, *t, z))
            .chain(self.holdout.iter().map(|(t, z)| (GridRole::Holdout, *t, z)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A5Point {
    pub gradient: MCEstimate,
    /// `P̂_T|f|^p`
    pub p_norm: MCEstimate,
    pub rate: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `P̂_T|f|^p` indistinguishable from zero; the ratio is meaningless.
    pub degenerate: bool,
}

fn power_l(model: &ModelSpec) -> Result<f64> {
    model
        .power_params
        .map(|p| p.l)
        .ok_or_else(|| Error::param("model", format!("{} has no power-law parameters", model.name)))
}

/// `|v₁|/√T + |v₂|/√(T(|x|²+T)ˡ)`.
fn a5_rate(l: f64, x: &[f64], v: &Direction, horizon: f64) -> f64 {
    let x2 = linalg::dot(x, x);
    linalg::norm(&v.v1) / horizon.sqrt()
        + linalg::norm(&v.v2) / (horizon * (x2 + horizon).powf(l)).sqrt()
}

/// Per-direction, per-observable A5 ratios at one point, on shared paths.
fn a5_batch(
    model: &ModelSpec,
    fs: &[&TestFunction],
    p: f64,
    z0: &[f64],
    horizon: f64,
    dirs: &[Direction],
    mc: &McParams,
) -> Result<Vec<Vec<A5Point>>> {
    let l = power_l(model)?;
    let pows: Vec<TestFunction> = fs.iter().map(|f| f.abs_pow(p)).collect();
    let pow_refs: Vec<&TestFunction> = pows.iter().collect();
    let norms = estimate_pt_many(model, &pow_refs, z0, horizon, mc)?;
    dirs.iter()
        .map(|v| {
            let grads = estimate_gradient_bismut_many(model, fs, z0, v, horizon, mc)?;
            let rate = a5_rate(l, &z0[..model.m], v, horizon);
            Ok(grads
                .into_iter()
                .zip(&norms)
                .map(|(g, pn)| {
                    let degenerate = pn.mean <= BAND * pn.stderr || pn.mean <= 0.0;
                    let denom = pn.mean.max(0.0).powf(1.0 / p) * rate;
                    A5Point {
                        gradient: g,
                        p_norm: *pn,
                        rate,
                        ratio: g.mean.abs() / denom,
                        ratio_stderr: g.stderr / denom,
                        degenerate,
                    }
                })
                .collect())
        })
        .collect()
}

/// A5 ratio `|∇_v P̂_T f| / ((P̂_T|f|^p)^{1/p}·rate)` at a single point.
pub fn a5_point(
    model: &ModelSpec,
    f: &TestFunction,
    p: f64,
    z0: &[f64],
    horizon: f64,
    v: &Direction,
    mc: &McParams,
) -> Result<A5Point> {
    if !(p > 1.0) {
        return Err(Error::param("p", format!("must be > 1, got {p}")));
    }
    Ok(a5_batch(model, &[f], p, z0, horizon, std::slice::from_ref(v), mc)?
        .remove(0)
        .remove(0))
}

/// Two-grid check of the L^p gradient bound, separately for the unit
/// directions along `x₁` and `y₁`.
pub fn check_a5(
    model: &ModelSpec,
    p: f64,
    grid: &TwoGrid,
    fs: &[&TestFunction],
    mc: &McParams,
) -> Result<BoundCheckReport> {
    if !(p > 1.0) {
        return Err(Error::param("p", format!("must be > 1, got {p}")));
    }
    power_l(model)?;
    let (m, d) = (model.m, model.d);
    let dirs = [Direction::unit(m, d, 0), Direction::unit(m, d, m)];
    let mut points = Vec::new();
    let mut notes = Vec::new();
    for (role, horizon, z0) in grid.points() {
        let batch = a5_batch(model, fs, p, z0, horizon, &dirs, mc)?;
        for (v, row) in dirs.iter().zip(batch) {
            for (f, pt) in fs.iter().zip(row) {
                let label = format!("{}/v={}", f.name, fmt_vec(&v.flat()));
                if pt.degenerate {
                    notes.push(format!(
                        "skipped {label} at T={horizon}, z0={}: P_T|f|^p not distinguishable from 0",
                        fmt_vec(z0)
                    ));
                    continue;
                }
                points.push(CheckPoint {
                    label,
                    role,
                    horizon,
                    z0: z0.clone(),
                    v: v.flat(),
                    p: Some(p),
                    ratio: pt.ratio,
                    ratio_stderr: pt.ratio_stderr,
                    n_valid: pt.gradient.n_valid,
                    n_invalid: pt.gradient.n_invalid,
                    seed: mc.seed,
                    n_steps: mc.n_steps,
                    ok: true,
                });
            }
        }
    }
    Ok(BoundCheckReport::two_grid(InequalityId::A5, points, notes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A6Point {
    /// Bismut estimates of `∂_{z_i} P_T f`, `i = 0..m+d`.
    pub gradient: Vec<MCEstimate>,
    /// Plug-in `Γ̂₁(P_T f)(z0)`.
    pub gamma: f64,
    pub gamma_stderr: f64,
    /// `P̂_T f²`
    pub pf2: MCEstimate,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub degenerate: bool,
}

fn a6_batch(
    model: &ModelSpec,
    fs: &[&TestFunction],
    z0: &[f64],
    horizon: f64,
    mc: &McParams,
) -> Result<Vec<A6Point>> {
    let (m, d) = (model.m, model.d);
    let squares: Vec<TestFunction> = fs.iter().map(|f| f.abs_pow(2.0)).collect();
    let sq_refs: Vec<&TestFunction> = squares.iter().collect();
    let pf2 = estimate_pt_many(model, &sq_refs, z0, horizon, mc)?;
    // grads[i][j]: direction i, observable j
    let grads = (0..m + d)
        .map(|i| estimate_gradient_bismut_many(model, fs, z0, &Direction::unit(m, d, i), horizon, mc))
        .collect::<Result<Vec<_>>>()?;
    let mut sigma = vec![0.0; d * d];
    model.sigma.eval(&z0[..m], &mut sigma);
    Ok((0..fs.len())
        .map(|j| {
            let gradient: Vec<MCEstimate> = grads.iter().map(|g| g[j]).collect();
            let g: Vec<f64> = gradient.iter().map(|e| e.mean).collect();
            let se: Vec<f64> = gradient.iter().map(|e| e.stderr).collect();
            let gamma = crate::model::gamma1_from_gradient(model, &z0[..m], &g);
            // ∂Γ/∂g_x = 2g_x, ∂Γ/∂g_y = 2σσᵀg_y; component errors treated as independent
            let mut var = 0.0;
            for i in 0..m {
                var += (2.0 * g[i] * se[i]).powi(2);
            }
            let gy = &g[m..];
            let st_gy: Vec<f64> = (0..d)
                .map(|c| (0..d).map(|r| sigma[r * d + c] * gy[r]).sum())
                .collect();
            for r in 0..d {
                let partial: f64 = 2.0 * (0..d).map(|c| sigma[r * d + c] * st_gy[c]).sum::<f64>();
                var += (partial * se[m + r]).powi(2);
            }
            let gamma_stderr = var.sqrt();
            let p = pf2[j];
            let degenerate = p.mean <= BAND * p.stderr || p.mean <= 0.0;
            let ratio = gamma * horizon / p.mean;
            let rel = (gamma_stderr / gamma).powi(2) + (p.stderr / p.mean).powi(2);
            let ratio_stderr = if gamma > 0.0 {
                ratio * rel.sqrt()
            } else {
                gamma_stderr * horizon / p.mean
            };
            A6Point {
                gradient,
                gamma,
                gamma_stderr,
                pf2: p,
                ratio,
                ratio_stderr,
                degenerate,
            }
        })
        .collect())
}

/// A6 ratio `Γ̂₁(P_T f)·T / P̂_T f²` at a single point.
pub fn a6_point(
    model: &ModelSpec,
    f: &TestFunction,
    z0: &[f64],
    horizon: f64,
    mc: &McParams,
) -> Result<A6Point> {
    Ok(a6_batch(model, &[f], z0, horizon, mc)?.remove(0))
}

/// Two-grid check of `Γ₁(P_T f) ≤ C·P_T f²/T`.
pub fn check_a6(
    model: &ModelSpec,
    grid: &TwoGrid,
    fs: &[&TestFunction],
    mc: &McParams,
) -> Result<BoundCheckReport> {
    if model.is_extended() {
        return Err(Error::ModelKind("the square-field check needs a basic model".into()));
    }
    let mut points = Vec::new();
    let mut notes = Vec::new();
    for (role, horizon, z0) in grid.points() {
        if z0.len() != model.m + model.d {
            return Err(Error::Dimension {
                what: "z0".into(),
                expected: model.m + model.d,
                got: z0.len(),
            });
        }
        for (f, pt) in fs.iter().zip(a6_batch(model, fs, z0, horizon, mc)?) {
            if pt.degenerate {
                notes.push(format!(
                    "skipped {} at T={horizon}, z0={}: P_T f^2 not distinguishable from 0",
                    f.name,
                    fmt_vec(z0)
                ));
                continue;
            }
            let n_invalid = pt.gradient.iter().map(|g| g.n_invalid).max().unwrap_or(0);
            points.push(CheckPoint {
                label: f.name.clone(),
                role,
                horizon,
                z0: z0.clone(),
                v: Vec::new(),
                p: None,
                ratio: pt.ratio,
                ratio_stderr: pt.ratio_stderr,
                n_valid: pt.pf2.n_total() - n_invalid,
                n_invalid,
                seed: mc.seed,
                n_steps: mc.n_steps,
                ok: true,
            });
        }
    }
    Ok(BoundCheckReport::two_grid(InequalityId::A6, points, notes))
}

/// Two-grid check of the negative-moment bound: the normalized product
/// `E(∫|x+B_t|^{2n}dt)^{−α} · T^α(|x|²+T)^{αn}` must stay bounded. Grid
/// points are `(T, x)`.
pub fn check_lemma31(
    calibration: &[(f64, Vec<f64>)],
    holdout: &[(f64, Vec<f64>)],
    n_exp: f64,
    alpha: f64,
    mc: &McParams,
) -> Result<BoundCheckReport> {
    let mut points = Vec::new();
    let roles = calibration
        .iter()
        .map(|p| (GridRole::Calibration, p))
        .chain(holdout.iter().map(|p| (GridRole::Holdout, p)));
    for (role, (horizon, x)) in roles {
        let e = estimate_negative_moment(x, *horizon, n_exp, alpha, mc)?;
        let norm = horizon.powf(alpha) * (linalg::dot(x, x) + horizon).powf(alpha * n_exp);
        points.push(CheckPoint {
            label: format!("n={n_exp},alpha={alpha}"),
            role,
            horizon: *horizon,
            z0: x.clone(),
            v: Vec::new(),
            p: None,
            ratio: e.mean * norm,
            ratio_stderr: e.stderr * norm,
            n_valid: e.n_valid,
            n_invalid: e.n_invalid,
            seed: mc.seed,
            n_steps: mc.n_steps,
            ok: true,
        });
    }
    Ok(BoundCheckReport::two_grid(InequalityId::Lemma31, points, Vec::new()))
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `E|x + √t Z|^p` for standard normal `Z`.
fn gaussian_abs_moment(x: f64, t: f64, p: f64) -> f64 {
    if t == 0.0 {
        return x.abs().powf(p);
    }
    let s = t.sqrt();
    let density = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    simpson(|z| (x + s * z).abs().powf(p) * density(z), -12.0, 12.0, 4800)
}

/// Right-hand side `{q(q−1)/2}^{q/2}(∫₀ᵀ(E|ρ_t|^q)^{2/q}dt)^{q/2}` of the
/// stochastic-integral moment inequality.
pub fn lq_rhs(integrand: &LqIntegrand, q: f64, horizon: f64) -> Result<f64> {
    if !(q >= 2.0) {
        return Err(Error::param("q", format!("must be >= 2, got {q}")));
    }
    let k = (q * (q - 1.0) / 2.0).powf(q / 2.0);
    let time_integral = match *integrand {
        LqIntegrand::Zero { .. } => 0.0,
        LqIntegrand::ConstantUnit { .. } | LqIntegrand::BrownianSign { .. } => horizon,
        LqIntegrand::PowerLawRow { x, l } => {
            debug_assert!(power_law_scalar(x, l).is_finite());
            simpson(
                |t| gaussian_abs_moment(x, t, l * q).powf(2.0 / q),
                0.0,
                horizon,
                200,
            )
        }
    };
    Ok(k * time_integral.powf(q / 2.0))
}

/// Checks `LHS ≤ RHS` for every integrand, exponent, and horizon. The
/// reported ratios are `LHS/RHS` (0 when both vanish); the inequality has
/// the known constant 1, so there is no calibration step.
pub fn check_lemma_ll(
    integrands: &[LqIntegrand],
    qs: &[f64],
    horizons: &[f64],
    mc: &McParams,
) -> Result<BoundCheckReport> {
    let mut points = Vec::new();
    let mut verdict = Verdict::BoundedConstantFound;
    for integrand in integrands {
        for &q in qs {
            for &horizon in horizons {
                let lhs = estimate_lq_moment(integrand, q, horizon, mc)?;
                let rhs = lq_rhs(integrand, q, horizon)?;
                let ok = lhs.mean - rhs <= BAND * lhs.stderr;
                if !ok {
                    verdict = Verdict::Violated;
                }
                let (ratio, ratio_stderr) = if rhs > 0.0 {
                    (lhs.mean / rhs, lhs.stderr / rhs)
                } else if lhs.mean == 0.0 {
                    (0.0, 0.0)
                } else {
                    (f64::INFINITY, f64::INFINITY)
                };
                let z0 = match *integrand {
                    LqIntegrand::PowerLawRow { x, .. } => vec![x],
                    _ => Vec::new(),
                };
                points.push(CheckPoint {
                    label: integrand.name().to_string(),
                    role: GridRole::Holdout,
                    horizon,
                    z0,
                    v: Vec::new(),
                    p: Some(q),
                    ratio,
                    ratio_stderr,
                    n_valid: lhs.n_valid,
                    n_invalid: lhs.n_invalid,
                    seed: mc.seed,
                    n_steps: mc.n_steps,
                    ok,
                });
            }
        }
    }
    if points.is_empty() {
        verdict = Verdict::Inconclusive;
    }
    Ok(BoundCheckReport::assemble(InequalityId::LemmaLL, points, verdict, 1.0, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_test_function, constant_identity_model, make_power_law_model};

    #[test]
    fn gaussian_moments_by_quadrature() {
        assert!((gaussian_abs_moment(0.0, 2.0, 2.0) - 2.0).abs() < 1e-10);
        assert!((gaussian_abs_moment(0.0, 1.0, 4.0) - 3.0).abs() < 1e-10);
        assert!((gaussian_abs_moment(1.5, 0.5, 2.0) - 2.75).abs() < 1e-10);
    }

    #[test]
    fn lq_rhs_closed_forms() {
        let c = LqIntegrand::ConstantUnit { d: 1 };
        assert!((lq_rhs(&c, 2.0, 0.7).unwrap() - 0.7).abs() < 1e-14);
        assert!((lq_rhs(&c, 4.0, 2.0).unwrap() - 36.0 * 4.0).abs() < 1e-10);
        assert_eq!(lq_rhs(&LqIntegrand::Zero { d: 3 }, 3.0, 1.0).unwrap(), 0.0);
        // l = 1, q = 2: ∫(x² + t)dt
        let r = lq_rhs(&LqIntegrand::PowerLawRow { x: 1.0, l: 1.0 }, 2.0, 2.0).unwrap();
        assert!((r - 4.0).abs() < 1e-9, "{r}");
        assert!(lq_rhs(&c, 1.0, 1.0).is_err());
    }

    #[test]
    fn a5_ratio_invariant_under_scaling_v2() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let f = builtin_test_function("sin_y", &model).unwrap();
        let mc = McParams::new(2000, 40, 3);
        let v = Direction::new(vec![0.0], vec![1.0]).unwrap();
        let a = a5_point(&model, &f, 2.0, &[1.0, 0.3], 1.0, &v, &mc).unwrap();
        let b = a5_point(&model, &f, 2.0, &[1.0, 0.3], 1.0, &v.scaled(2.0), &mc).unwrap();
        assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio.abs());
        assert!((b.gradient.mean - 2.0 * a.gradient.mean).abs() <= 1e-12 * a.gradient.mean.abs());
    }

    #[test]
    fn constant_observable_has_zero_ratios() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let one = builtin_test_function("one", &model).unwrap();
        let grid = TwoGrid::product(&[1.0], &[1.0], &[0.5], &[0.5], 0.0);
        let mc = McParams::new(500, 20, 1);
        let r = check_a5(&model, 2.0, &grid, &[&one], &mc).unwrap();
        assert!(r.max_ratio < 0.5, "{:?}", r.ratios);
        let r = check_a6(&model, &grid, &[&one], &mc).unwrap();
        assert!(r.max_ratio < 0.1, "{:?}", r.ratios);
    }

    #[test]
    fn a5_needs_power_params() {
        let mut model = constant_identity_model(1, 1).unwrap();
        model.power_params = None;
        let one = builtin_test_function("one", &model).unwrap();
        let grid = TwoGrid::product(&[1.0], &[1.0], &[0.5], &[0.5], 0.0);
        assert!(check_a5(&model, 2.0, &grid, &[&one], &McParams::new(10, 4, 1)).is_err());
    }

    #[test]
    fn lemma_ll_zero_integrand_holds_with_equality() {
        let r = check_lemma_ll(&[LqIntegrand::Zero { d: 1 }], &[2.0, 3.0], &[1.0], &McParams::new(50, 10, 1))
            .unwrap();
        assert_eq!(r.verdict, Verdict::BoundedConstantFound);
        assert_eq!(r.max_ratio, 0.0);
    }
}
