//! Coefficient fields of the Gruschin-type operator, its drifted extension,
//! the square field Γ₁, and the built-in observables.
//!
//! State vectors are split as `z = (x, y)` with `x ∈ Rᵐ` driven by the first
//! Brownian motion and `y ∈ Rᵈ` driven through `σ(x)` by the second. All
//! matrices are row-major slices.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub type ValueFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type DirectionalFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A `rows × cols` matrix (or vector when `cols == 1`) valued function of
/// `x ∈ Rᵐ` together with its directional derivative `∇_v F(x)`.
#[derive(Clone)]
pub struct CoefficientField {
    pub rows: usize,
    pub cols: usize,
    value: ValueFn,
    directional: DirectionalFn,
}

impl CoefficientField {
    pub fn new(rows: usize, cols: usize, value: ValueFn, directional: DirectionalFn) -> Self {
        Self {
            rows,
            cols,
            value,
            directional,
        }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self::new(
            rows,
            cols,
            Arc::new(|_, out: &mut [f64]| out.fill(0.0)),
            Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::new(
            n,
            n,
            Arc::new(move |_, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..n {
                    out[i * n + i] = 1.0;
                }
            }),
            Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
        )
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        (self.value)(x, out)
    }

    #[inline]
    pub fn directional(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        (self.directional)(x, v, out)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoefficientField({}x{})", self.rows, self.cols)
    }
}

/// Constants `(a, b, l)` with `a|x|ˡ ≤ ‖σ(x)‖` and
/// `‖σ(x)‖ + ‖∇σ(x)‖·|x| ≤ b|x|ˡ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerParams {
    pub a: f64,
    pub b: f64,
    pub l: f64,
}

/// Declared bounds for the x-equation of the extended model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedBounds {
    /// sup ‖∇σ₁‖
    pub sigma1_grad: f64,
    /// sup ‖∇b₁‖
    pub b1_grad: f64,
    /// sup ‖σ₁⁻¹‖
    pub sigma1_inv: f64,
}

impl ExtendedBounds {
    /// Growth constant for `E|ξ_t|²`, from the Itô expansion of `|ξ_t|²/(T−t)`.
    pub fn xi_growth_constant(&self) -> f64 {
        self.sigma1_grad * self.sigma1_grad + 2.0 * self.b1_grad
    }
}

#[derive(Debug, Clone)]
pub struct ExtendedCoefficients {
    pub sigma1: CoefficientField,
    pub b1: CoefficientField,
    pub b2: CoefficientField,
    pub bounds: Option<ExtendedBounds>,
}

#[derive(Debug, Clone)]
pub enum ModelKind {
    Basic,
    Extended(ExtendedCoefficients),
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub m: usize,
    pub d: usize,
    pub kind: ModelKind,
    /// σ for the basic SDE, σ₂ for the extended one.
    pub sigma: CoefficientField,
    pub power_params: Option<PowerParams>,
    /// σ(x) is a scalar multiple of the identity; spectral norms are exact.
    pub scalar_identity: bool,
}

impl ModelSpec {
    pub fn basic(name: &str, m: usize, d: usize, sigma: CoefficientField) -> Result<Self> {
        check_dims(m, d)?;
        if sigma.rows != d || sigma.cols != d {
            return Err(Error::Dimension {
                what: "sigma".into(),
                expected: d * d,
                got: sigma.len(),
            });
        }
        Ok(Self {
            name: name.to_string(),
            m,
            d,
            kind: ModelKind::Basic,
            sigma,
            power_params: None,
            scalar_identity: false,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn extended(
        name: &str,
        m: usize,
        d: usize,
        sigma1: CoefficientField,
        b1: CoefficientField,
        sigma2: CoefficientField,
        b2: CoefficientField,
        bounds: Option<ExtendedBounds>,
    ) -> Result<Self> {
        check_dims(m, d)?;
        let expect = |what: &str, f: &CoefficientField, rows: usize, cols: usize| {
            if f.rows != rows || f.cols != cols {
                Err(Error::Dimension {
                    what: what.into(),
                    expected: rows * cols,
                    got: f.len(),
                })
            } else {
                Ok(())
            }
        };
        expect("sigma1", &sigma1, m, m)?;
        expect("b1", &b1, m, 1)?;
        expect("sigma2", &sigma2, d, d)?;
        expect("b2", &b2, d, 1)?;
        Ok(Self {
            name: name.to_string(),
            m,
            d,
            kind: ModelKind::Extended(ExtendedCoefficients {
                sigma1,
                b1,
                b2,
                bounds,
            }),
            sigma: sigma2,
            power_params: None,
            scalar_identity: false,
        })
    }

    pub fn is_extended(&self) -> bool {
        matches!(self.kind, ModelKind::Extended(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::Basic => "basic",
            ModelKind::Extended(_) => "extended",
        }
    }

    pub fn with_power_params(mut self, p: PowerParams) -> Self {
        self.power_params = Some(p);
        self
    }

    /// Re-expresses a basic model in extended form with σ₁ = I, b₁ = 0,
    /// b₂ = 0 and σ₂ = σ.
    pub fn as_extended_reduction(&self) -> Result<Self> {
        if self.is_extended() {
            return Err(Error::ModelKind("model is already extended".into()));
        }
        let mut ext = Self::extended(
            &format!("{}_as_extended", self.name),
            self.m,
            self.d,
            CoefficientField::identity(self.m),
            CoefficientField::zero(self.m, 1),
            self.sigma.clone(),
            CoefficientField::zero(self.d, 1),
            Some(ExtendedBounds {
                sigma1_grad: 0.0,
                b1_grad: 0.0,
                sigma1_inv: 1.0,
            }),
        )?;
        ext.power_params = self.power_params;
        ext.scalar_identity = self.scalar_identity;
        Ok(ext)
    }

    /// Operator norm ‖σ(x)‖.
    pub fn sigma_norm(&self, x: &[f64]) -> f64 {
        let d = self.d;
        let mut s = vec![0.0; d * d];
        self.sigma.eval(x, &mut s);
        if self.scalar_identity {
            return s[0].abs();
        }
        linalg::spectral_norm(&s, d, d)
    }

    /// Operator norm of `v ↦ ∇_vσ(x)` from `Rᵐ` to `d × d` matrices with the
    /// spectral norm. Exact for scalar·identity models, alternating power
    /// iteration otherwise.
    pub fn grad_sigma_norm(&self, x: &[f64]) -> f64 {
        let (m, d) = (self.m, self.d);
        let mut parts = vec![vec![0.0; d * d]; m];
        let mut e = vec![0.0; m];
        for (i, part) in parts.iter_mut().enumerate() {
            e.fill(0.0);
            e[i] = 1.0;
            self.sigma.directional(x, &e, part);
        }
        if self.scalar_identity {
            return parts.iter().map(|p| p[0] * p[0]).sum::<f64>().sqrt();
        }
        let mut v: Vec<f64> = parts
            .iter()
            .map(|p| linalg::spectral_norm(p, d, d))
            .collect();
        let nv = linalg::norm(&v);
        if nv == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|c| *c /= nv);
        let mut best = 0.0;
        let mut mix = vec![0.0; d * d];
        for _ in 0..100 {
            mix.fill(0.0);
            for (vi, p) in v.iter().zip(&parts) {
                for (mk, pk) in mix.iter_mut().zip(p) {
                    *mk += vi * pk;
                }
            }
            let (val, u, w) = top_singular_pair(&mix, d);
            for (vi, p) in v.iter_mut().zip(&parts) {
                let mut pu = vec![0.0; d];
                linalg::mat_vec(p, d, d, &u, &mut pu);
                *vi = linalg::dot(&w, &pu);
            }
            let nv = linalg::norm(&v);
            if nv == 0.0 {
                break;
            }
            v.iter_mut().for_each(|c| *c /= nv);
            if (val - best).abs() <= 1e-13 * val.max(1e-300) {
                best = val;
                break;
            }
            best = val;
        }
        best
    }

    /// Evaluates the comparability constants on a grid of x points. Returns
    /// the first violating point, if any.
    pub fn check_power_law_grid(&self, grid: &[Vec<f64>], tol: f64) -> Result<Option<Vec<f64>>> {
        let p = self
            .power_params
            .ok_or_else(|| Error::Unsupported(format!("model `{}` has no power_params", self.name)))?;
        for x in grid {
            let r = linalg::norm(x);
            let rl = r.powf(p.l);
            let s = self.sigma_norm(x);
            let g = self.grad_sigma_norm(x);
            let lower_ok = s >= p.a * rl - tol * (1.0 + rl);
            let upper_ok = s + g * r <= p.b * rl + tol * (1.0 + rl);
            if !(lower_ok && upper_ok) {
                return Ok(Some(x.clone()));
            }
        }
        Ok(None)
    }
}

fn top_singular_pair(a: &[f64], d: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let sigma = linalg::spectral_norm(a, d, d);
    // recover vectors by a few power steps on aᵀa
    let mut u = vec![1.0 / (d as f64).sqrt(); d];
    let mut au = vec![0.0; d];
    for _ in 0..100 {
        linalg::mat_vec(a, d, d, &u, &mut au);
        let mut atau = vec![0.0; d];
        for (j, o) in atau.iter_mut().enumerate() {
            *o = (0..d).map(|i| a[i * d + j] * au[i]).sum();
        }
        let n = linalg::norm(&atau);
        if n == 0.0 {
            break;
        }
        u = atau.into_iter().map(|c| c / n).collect();
    }
    linalg::mat_vec(a, d, d, &u, &mut au);
    let n = linalg::norm(&au);
    let w = if n == 0.0 {
        vec![0.0; d]
    } else {
        au.iter().map(|c| c / n).collect()
    };
    (sigma, u, w)
}

fn check_dims(m: usize, d: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::param("m", "must be positive"));
    }
    if d == 0 {
        return Err(Error::param("d", "must be positive"));
    }
    Ok(())
}

/// `σ(x) = xˡ·I` for `m = 1` and integer `l` (signed, smooth); otherwise
/// `σ(x) = |x|ˡ·I` with `∇σ(0) := 0`.
pub fn make_power_law_model(m: usize, d: usize, l: f64) -> Result<ModelSpec> {
    check_dims(m, d)?;
    if !(l.is_finite() && l >= 1.0) {
        return Err(Error::param("l", format!("must be >= 1, got {l}")));
    }
    let signed = m == 1 && l.fract() == 0.0;
    if m == 1 && !signed {
        log::warn!("power law l={l} is not an integer; using |x|^l (not smooth at the origin)");
    }
    let set_scalar = move |out: &mut [f64], s: f64| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = s;
        }
    };
    let (value, directional): (ValueFn, DirectionalFn) = if signed {
        let li = l as i32;
        (
            Arc::new(move |x: &[f64], out: &mut [f64]| set_scalar(out, x[0].powi(li))),
            Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| {
                set_scalar(out, l * x[0].powi(li - 1) * v[0])
            }),
        )
    } else {
        (
            Arc::new(move |x: &[f64], out: &mut [f64]| set_scalar(out, linalg::norm(x).powf(l))),
            Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| {
                let r = linalg::norm(x);
                let s = if r == 0.0 {
                    0.0
                } else {
                    l * r.powf(l - 2.0) * linalg::dot(x, v)
                };
                set_scalar(out, s)
            }),
        )
    };
    let sigma = CoefficientField::new(d, d, value, directional);
    let mut model = ModelSpec::basic("power_law", m, d, sigma)?.with_power_params(PowerParams {
        a: 1.0,
        b: 1.0 + l,
        l,
    });
    model.scalar_identity = true;
    Ok(model)
}

/// `σ ≡ I`: the elliptic case, where `(X, Y)` is a standard Brownian motion.
pub fn constant_identity_model(m: usize, d: usize) -> Result<ModelSpec> {
    let mut model = ModelSpec::basic("constant_identity", m, d, CoefficientField::identity(d))?;
    model.scalar_identity = true;
    Ok(model)
}

/// One-dimensional extended model with nontrivial σ₁, b₁, b₂ and a
/// linearly degenerate σ₂:
///
/// σ₁ = 1.5 + 0.5 sin x, b₁ = 0.5 cos x, σ₂ = x, b₂ = sin x.
pub fn extended_demo_model() -> Result<ModelSpec> {
    let scalar = |f: fn(f64) -> f64, df: fn(f64) -> f64| {
        CoefficientField::new(
            1,
            1,
            Arc::new(move |x: &[f64], out: &mut [f64]| out[0] = f(x[0])),
            Arc::new(move |x: &[f64], v: &[f64], out: &mut [f64]| out[0] = df(x[0]) * v[0]),
        )
    };
    let sigma1 = scalar(|x| 1.5 + 0.5 * x.sin(), |x| 0.5 * x.cos());
    let b1 = scalar(|x| 0.5 * x.cos(), |x| -0.5 * x.sin());
    let sigma2 = scalar(|x| x, |_| 1.0);
    let b2 = scalar(|x| x.sin(), |x| x.cos());
    let mut model = ModelSpec::extended(
        "extended_demo",
        1,
        1,
        sigma1,
        b1,
        sigma2,
        b2,
        Some(ExtendedBounds {
            sigma1_grad: 0.5,
            b1_grad: 0.5,
            sigma1_inv: 1.0,
        }),
    )?
    .with_power_params(PowerParams {
        a: 1.0,
        b: 2.0,
        l: 1.0,
    });
    model.scalar_identity = true;
    Ok(model)
}

/// Named built-in model: `power_law` (needs `l`), `constant_identity`,
/// `extended_demo`.
pub fn builtin_model(name: &str, m: usize, d: usize, l: Option<f64>) -> Result<ModelSpec> {
    match name {
        "power_law" => {
            let l = l.ok_or_else(|| Error::config("model.l", "power_law requires `l`"))?;
            make_power_law_model(m, d, l)
        }
        "constant_identity" => constant_identity_model(m, d),
        "extended_demo" => {
            if m != 1 || d != 1 {
                return Err(Error::config("model", "extended_demo is defined for m = d = 1"));
            }
            extended_demo_model()
        }
        other => Err(Error::config(
            "model.builtin",
            format!("unknown builtin `{other}` (expected power_law, constant_identity, extended_demo)"),
        )),
    }
}

pub const BUILTIN_MODELS: &[(&str, &str)] = &[
    ("power_law", "sigma(x) = x^l I (m = 1, integer l) or |x|^l I; (a, b, l) = (1, 1 + l, l)"),
    ("constant_identity", "sigma(x) = I; (X, Y) is a standard Brownian motion"),
    (
        "extended_demo",
        "m = d = 1: sigma1 = 1.5 + 0.5 sin x, b1 = 0.5 cos x, sigma2 = x, b2 = sin x",
    ),
];

/// Direction `v = (v₁, v₂) ∈ Rᵐ × Rᵈ`. The zero direction is legal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
}

impl Direction {
    pub fn new(v1: Vec<f64>, v2: Vec<f64>) -> Result<Self> {
        if v1.iter().chain(&v2).any(|c| !c.is_finite()) {
            return Err(Error::param("v", "entries must be finite"));
        }
        Ok(Self { v1, v2 })
    }

    pub fn zero(m: usize, d: usize) -> Self {
        Self {
            v1: vec![0.0; m],
            v2: vec![0.0; d],
        }
    }

    /// Unit vector along coordinate `i` of `z = (x, y)`.
    pub fn unit(m: usize, d: usize, i: usize) -> Self {
        let mut v = Self::zero(m, d);
        if i < m {
            v.v1[i] = 1.0;
        } else {
            v.v2[i - m] = 1.0;
        }
        v
    }

    pub fn from_flat(m: usize, d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != m + d {
            return Err(Error::Dimension {
                what: "v".into(),
                expected: m + d,
                got: flat.len(),
            });
        }
        Self::new(flat[..m].to_vec(), flat[m..].to_vec())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.v1.iter().chain(&self.v2).copied().collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            v1: self.v1.iter().map(|c| c * s).collect(),
            v2: self.v2.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            v1: self.v1.iter().zip(&other.v1).map(|(a, b)| a + b).collect(),
            v2: self.v2.iter().zip(&other.v2).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.v1.iter().chain(&self.v2).all(|&c| c == 0.0)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.v1.len(), self.v2.len())
    }
}

pub type ObservableFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ClosedFormFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type ClosedFormGradFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

/// Scalar observable on `R^{m+d}` (argument is the concatenated `(x, y)`).
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    eval: ObservableFn,
    pub grad: Option<GradientFn>,
    pub closed_form_pt: Option<ClosedFormFn>,
    pub closed_form_grad_pt: Option<ClosedFormGradFn>,
    pub bounded: bool,
    pub nonnegative: bool,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("grad", &self.grad.is_some())
            .field("closed_form_pt", &self.closed_form_pt.is_some())
            .field("bounded", &self.bounded)
            .finish()
    }
}

impl TestFunction {
    pub fn new(name: &str, eval: ObservableFn) -> Self {
        Self {
            name: name.to_string(),
            eval,
            grad: None,
            closed_form_pt: None,
            closed_form_grad_pt: None,
            bounded: false,
            nonnegative: false,
        }
    }

    pub fn with_grad(mut self, grad: GradientFn) -> Self {
        self.grad = Some(grad);
        self
    }

    pub fn bounded(mut self, bounded: bool) -> Self {
        self.bounded = bounded;
        self
    }

    pub fn nonnegative(mut self, nonneg: bool) -> Self {
        self.nonnegative = nonneg;
        self
    }

    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        (self.eval)(z)
    }

    pub fn eval_xy(&self, x: &[f64], y: &[f64]) -> f64 {
        let z: Vec<f64> = x.iter().chain(y).copied().collect();
        self.eval(&z)
    }

    /// The observable `|f|^p`.
    pub fn abs_pow(&self, p: f64) -> TestFunction {
        let inner = self.eval.clone();
        TestFunction::new(
            &format!("|{}|^{}", self.name, p),
            Arc::new(move |z| inner(z).abs().powf(p)),
        )
        .bounded(self.bounded)
        .nonnegative(true)
    }

    pub fn closed_form(&self, t: f64, x: &[f64], y: &[f64]) -> Option<f64> {
        self.closed_form_pt.as_ref().map(|c| c(t, x, y))
    }

    pub fn closed_form_grad(&self, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        self.closed_form_grad_pt.as_ref().map(|c| c(t, x, y))
    }
}

/// Γ₁(f)(x, y) = |∇ₓf|² + |σ(x)ᵀ∇_y f|².
pub fn gamma1(model: &ModelSpec, f: &TestFunction, z: &[f64]) -> Result<f64> {
    let (m, d) = (model.m, model.d);
    if z.len() != m + d {
        return Err(Error::Dimension {
            what: "z".into(),
            expected: m + d,
            got: z.len(),
        });
    }
    let grad = f
        .grad
        .as_ref()
        .ok_or_else(|| Error::MissingGradient(f.name.clone()))?;
    let mut g = vec![0.0; m + d];
    grad(z, &mut g);
    Ok(gamma1_from_gradient(model, &z[..m], &g))
}

/// Γ₁ assembled from a gradient vector `(∇ₓ, ∇_y)` at base point `x`.
pub fn gamma1_from_gradient(model: &ModelSpec, x: &[f64], g: &[f64]) -> f64 {
    let (m, d) = (model.m, model.d);
    let gx: f64 = g[..m].iter().map(|c| c * c).sum();
    let mut s = vec![0.0; d * d];
    model.sigma.eval(x, &mut s);
    let gy = &g[m..];
    let mut st_gy = 0.0;
    for j in 0..d {
        // (σᵀ g_y)_j = Σ_i σ_ij g_i
        let c: f64 = (0..d).map(|i| s[i * d + j] * gy[i]).sum();
        st_gy += c * c;
    }
    gx + st_gy
}

pub const BUILTIN_TEST_FUNCTIONS: &[(&str, &str)] = &[
    ("one", "f = 1; P_T f = 1"),
    ("sin_x", "f = sin(x1); P_T f = exp(-T/2) sin(x1) for every basic model"),
    ("cos_x", "f = cos(x1); P_T f = exp(-T/2) cos(x1) for every basic model"),
    ("x_plus_y", "f = x1 + y1; P_T f = x1 + y1 for every basic model"),
    (
        "y_squared",
        "f = y1^2; P_T f = y^2 + x^2 T + T^2/2 (power_law l = 1, m = d = 1); y1^2 + T (constant_identity)",
    ),
    ("sin_y", "f = sin(y1); P_T f = exp(-T/2) sin(y1) (constant_identity)"),
    ("cos_xy", "f = cos(x1 + y1); P_T f = exp(-T) cos(x1 + y1) (constant_identity)"),
    ("tanh_xy", "f = tanh(x1 + y1)"),
    ("gauss_bump", "f = exp(-(x1^2 + y1^2)/2)"),
    ("one_plus_tanh_y", "f = 1 + tanh(y1) >= 0"),
];

/// Built-in observable, with closed forms attached where they are known for
/// the given model. Observables use the first x and first y coordinates.
pub fn builtin_test_function(name: &str, model: &ModelSpec) -> Result<TestFunction> {
    let (m, d) = (model.m, model.d);
    let basic = !model.is_extended();
    let identity = basic && model.name == "constant_identity";
    let power_l1 = basic
        && model.name == "power_law"
        && model.power_params.map(|p| p.l == 1.0).unwrap_or(false);
    let yi = m; // index of y1 in z
    let unit_grad = move |ix: usize, val: f64| {
        let mut g = vec![0.0; m + d];
        g[ix] = val;
        g
    };

    let f = match name {
        "one" => {
            let mut f = TestFunction::new("one", Arc::new(|_| 1.0))
                .with_grad(Arc::new(|_, g: &mut [f64]| g.fill(0.0)))
                .bounded(true)
                .nonnegative(true);
            f.closed_form_pt = Some(Arc::new(|_, _, _| 1.0));
            f.closed_form_grad_pt = Some(Arc::new(move |_, _, _| vec![0.0; m + d]));
            f
        }
        "sin_x" | "cos_x" => {
            let is_sin = name == "sin_x";
            let mut f = TestFunction::new(
                name,
                Arc::new(move |z: &[f64]| if is_sin { z[0].sin() } else { z[0].cos() }),
            )
            .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                g[0] = if is_sin { z[0].cos() } else { -z[0].sin() };
            }))
            .bounded(true);
            if basic {
                f.closed_form_pt = Some(Arc::new(move |t, x, _| {
                    let s = (-t / 2.0).exp();
                    if is_sin {
                        s * x[0].sin()
                    } else {
                        s * x[0].cos()
                    }
                }));
                f.closed_form_grad_pt = Some(Arc::new(move |t, x, _| {
                    let s = (-t / 2.0).exp();
                    unit_grad(0, if is_sin { s * x[0].cos() } else { -s * x[0].sin() })
                }));
            }
            f
        }
        "x_plus_y" => {
            let mut f = TestFunction::new("x_plus_y", Arc::new(move |z: &[f64]| z[0] + z[yi]))
                .with_grad(Arc::new(move |_, g: &mut [f64]| {
                    g.fill(0.0);
                    g[0] = 1.0;
                    g[yi] = 1.0;
                }));
            if basic {
                f.closed_form_pt = Some(Arc::new(|_, x, y| x[0] + y[0]));
                f.closed_form_grad_pt = Some(Arc::new(move |_, _, _| {
                    let mut g = vec![0.0; m + d];
                    g[0] = 1.0;
                    g[m] = 1.0;
                    g
                }));
            }
            f
        }
        "y_squared" => {
            let mut f = TestFunction::new("y_squared", Arc::new(move |z: &[f64]| z[yi] * z[yi]))
                .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
                    g.fill(0.0);
                    g[yi] = 2.0 * z[yi];
                }))
                .nonnegative(true);
            if identity {
                f.closed_form_pt = Some(Arc::new(|t, _, y| y[0] * y[0] + t));
                f.closed_form_grad_pt = Some(Arc::new(move |_, _, y| unit_grad(m, 2.0 * y[0])));
            } else if power_l1 {
                // E(∫|x+B_t| dB̃)² = ∫ E|x+B_t|² dt = |x|²T + m T²/2
                let mf = m as f64;
                f.closed_form_pt = Some(Arc::new(move |t, x, y| {
                    y[0] * y[0] + linalg::dot(x, x) * t + mf * t * t / 2.0
                }));
                f.closed_form_grad_pt = Some(Arc::new(move |t, x, y| {
                    let mut g = vec![0.0; m + d];
                    for i in 0..m {
                        g[i] = 2.0 * x[i] * t;
                    }
                    g[m] = 2.0 * y[0];
                    g
                }));
            }
            f
        }
        "sin_y" => {
            let mut f = TestFunction::new("sin_y", Arc::new(move |z: &[f64]| z[yi].sin()))
                .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
                    g.fill(0.0);
                    g[yi] = z[yi].cos();
                }))
                .bounded(true);
            if identity {
                f.closed_form_pt = Some(Arc::new(|t, _, y| (-t / 2.0).exp() * y[0].sin()));
                f.closed_form_grad_pt =
                    Some(Arc::new(move |t, _, y| unit_grad(m, (-t / 2.0).exp() * y[0].cos())));
            }
            f
        }
        "cos_xy" => {
            let mut f = TestFunction::new("cos_xy", Arc::new(move |z: &[f64]| (z[0] + z[yi]).cos()))
                .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
                    g.fill(0.0);
                    let s = -(z[0] + z[yi]).sin();
                    g[0] = s;
                    g[yi] = s;
                }))
                .bounded(true);
            if identity {
                f.closed_form_pt = Some(Arc::new(|t, x, y| (-t).exp() * (x[0] + y[0]).cos()));
                f.closed_form_grad_pt = Some(Arc::new(move |t, x, y| {
                    let s = -(-t).exp() * (x[0] + y[0]).sin();
                    let mut g = vec![0.0; m + d];
                    g[0] = s;
                    g[m] = s;
                    g
                }));
            }
            f
        }
        "tanh_xy" => TestFunction::new("tanh_xy", Arc::new(move |z: &[f64]| (z[0] + z[yi]).tanh()))
            .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                let c = (z[0] + z[yi]).cosh();
                let s = 1.0 / (c * c);
                g[0] = s;
                g[yi] = s;
            }))
            .bounded(true),
        "gauss_bump" => TestFunction::new(
            "gauss_bump",
            Arc::new(move |z: &[f64]| (-(z[0] * z[0] + z[yi] * z[yi]) / 2.0).exp()),
        )
        .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            let e = (-(z[0] * z[0] + z[yi] * z[yi]) / 2.0).exp();
            g[0] = -z[0] * e;
            g[yi] = -z[yi] * e;
        }))
        .bounded(true)
        .nonnegative(true),
        "one_plus_tanh_y" => TestFunction::new(
            "one_plus_tanh_y",
            Arc::new(move |z: &[f64]| 1.0 + z[yi].tanh()),
        )
        .with_grad(Arc::new(move |z: &[f64], g: &mut [f64]| {
            g.fill(0.0);
            let c = z[yi].cosh();
            g[yi] = 1.0 / (c * c);
        }))
        .bounded(true)
        .nonnegative(true),
        other => {
            return Err(Error::param(
                "test function",
                format!("unknown builtin `{other}`"),
            ))
        }
    };
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(model: &ModelSpec, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; model.d * model.d];
        model.sigma.eval(x, &mut s);
        s
    }

    fn dsig(model: &ModelSpec, x: &[f64], v: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; model.d * model.d];
        model.sigma.directional(x, v, &mut s);
        s
    }

    #[test]
    fn power_law_l1_at_two() {
        let m = make_power_law_model(1, 1, 1.0).unwrap();
        assert_eq!(sig(&m, &[2.0]), vec![2.0]);
        assert_eq!(m.power_params.unwrap().b, 2.0);
    }

    #[test]
    fn power_law_origin_is_degenerate() {
        let m = make_power_law_model(2, 1, 2.0).unwrap();
        assert_eq!(sig(&m, &[0.0, 0.0]), vec![0.0]);
        assert_eq!(dsig(&m, &[0.0, 0.0], &[1.0, -3.0]), vec![0.0]);
    }

    #[test]
    fn power_law_l3_derivative_matches_central_difference() {
        let m = make_power_law_model(1, 1, 3.0).unwrap();
        let g = dsig(&m, &[1.5], &[1.0])[0];
        assert!((g - 6.75).abs() < 1e-14);
        let h = 1e-5;
        let fd = (sig(&m, &[1.5 + h])[0] - sig(&m, &[1.5 - h])[0]) / (2.0 * h);
        assert!((fd - g).abs() < 1e-6);
    }

    #[test]
    fn power_law_rejects_small_l() {
        assert!(make_power_law_model(1, 1, 0.5).is_err());
        assert!(make_power_law_model(1, 1, f64::NAN).is_err());
        // non-integer l with m = 1 falls back to |x|^l
        let m = make_power_law_model(1, 1, 1.5).unwrap();
        assert!((sig(&m, &[-4.0])[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_comparability_holds_on_grid() {
        for &(mm, l) in &[(1usize, 1.0), (1, 2.0), (2, 1.0), (3, 2.5)] {
            let model = make_power_law_model(mm, 2, l).unwrap();
            let mut grid = Vec::new();
            for k in 0..25 {
                let r = -3.0 + 0.25 * k as f64;
                let mut x = vec![0.0; mm];
                x[0] = r;
                if mm > 1 {
                    x[1] = 0.3 * r - 0.1;
                }
                grid.push(x);
            }
            assert_eq!(model.check_power_law_grid(&grid, 1e-12).unwrap(), None);
        }
    }

    #[test]
    fn generic_norms_agree_with_exact_path() {
        let exact = make_power_law_model(2, 2, 2.0).unwrap();
        let mut generic = exact.clone();
        generic.scalar_identity = false;
        for x in [[0.5, -1.0], [2.0, 0.1], [-0.3, 0.4]] {
            assert!((exact.sigma_norm(&x) - generic.sigma_norm(&x)).abs() < 1e-10);
            assert!((exact.grad_sigma_norm(&x) - generic.grad_sigma_norm(&x)).abs() < 1e-8);
        }
    }

    #[test]
    fn gamma1_examples() {
        let id = constant_identity_model(1, 1).unwrap();
        let f = builtin_test_function("x_plus_y", &id).unwrap();
        assert_eq!(gamma1(&id, &f, &[0.3, -2.0]).unwrap(), 2.0);

        let pl1 = make_power_law_model(1, 1, 1.0).unwrap();
        let fy = TestFunction::new("y", Arc::new(|z: &[f64]| z[1])).with_grad(Arc::new(
            |_, g: &mut [f64]| {
                g[0] = 0.0;
                g[1] = 1.0;
            },
        ));
        assert_eq!(gamma1(&pl1, &fy, &[1.7, 5.0]).unwrap(), 1.7 * 1.7);

        let pl2 = make_power_law_model(1, 1, 2.0).unwrap();
        let fq = TestFunction::new("x2y2", Arc::new(|z: &[f64]| z[0] * z[0] + z[1] * z[1]))
            .with_grad(Arc::new(|z: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * z[0];
                g[1] = 2.0 * z[1];
            }));
        assert_eq!(gamma1(&pl2, &fq, &[1.0, 1.0]).unwrap(), 8.0);
    }

    #[test]
    fn gamma1_requires_gradient() {
        let id = constant_identity_model(1, 1).unwrap();
        let f = TestFunction::new("nograd", Arc::new(|z: &[f64]| z[0]));
        assert!(matches!(
            gamma1(&id, &f, &[0.0, 0.0]),
            Err(Error::MissingGradient(_))
        ));
    }

    #[test]
    fn builtin_gradients_match_finite_differences() {
        let model = make_power_law_model(1, 1, 1.0).unwrap();
        let h = 1e-5;
        for (name, _) in BUILTIN_TEST_FUNCTIONS {
            let f = builtin_test_function(name, &model).unwrap();
            let grad = f.grad.as_ref().unwrap();
            for z in [[0.3, -0.7], [1.2, 0.4], [-0.8, 1.9]] {
                let mut g = [0.0; 2];
                grad(&z, &mut g);
                for i in 0..2 {
                    let mut zp = z;
                    let mut zm = z;
                    zp[i] += h;
                    zm[i] -= h;
                    let fd = (f.eval(&zp) - f.eval(&zm)) / (2.0 * h);
                    let tol = 1e-5 * (1.0 + g[i].abs());
                    assert!((fd - g[i]).abs() < tol, "{name} coord {i}: fd {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn extended_demo_has_invertible_sigma1() {
        let model = extended_demo_model().unwrap();
        let ModelKind::Extended(ext) = &model.kind else {
            panic!("demo must be extended");
        };
        let c = ext.bounds.unwrap().sigma1_inv;
        let mut s = [0.0];
        for k in 0..200 {
            let x = -10.0 + 0.1 * k as f64;
            ext.sigma1.eval(&[x], &mut s);
            assert!(1.0 / s[0].abs() <= c);
        }
    }

    #[test]
    fn unknown_builtins_are_rejected() {
        assert!(builtin_model("heisenberg", 1, 1, None).is_err());
        assert!(builtin_model("power_law", 1, 1, None).is_err());
        let m = builtin_model("power_law", 1, 1, Some(1.0)).unwrap();
        assert!(builtin_test_function("nope", &m).is_err());
    }
}
