//! Assembly of the Bismut weight `M_T` from path functionals.
//!
//! ```text
//! M_T = drift − Tr(Q_T⁻¹ A_T) + ⟨Q_T⁻¹{v₂ + R_T}, S_T⟩
//! ```
//!
//! with `A_T = ∫(∇_{ξ_t}σ)σᵀdt`, `R_T = ∫(∇_{ξ_t}σ)dB̃ + ∫(∇_{ξ_t}b₂)dt`,
//! `S_T = ∫σdB̃`, and `drift = ⟨v₁, B_T⟩/T` (basic) or
//! `∫⟨σ₁⁻¹ξ_t/(T−t), dB_t⟩` (extended). `Q_T⁻¹` is only ever applied
//! through a Cholesky factorization.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::model::Direction;
use crate::paths::PathFunctionals;

/// Relative invertibility threshold: `min_eig(Q_T) > 1e-12 · tr(Q_T)`.
pub const INVERTIBILITY_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightBreakdown {
    pub term_drift: f64,
    pub term_trace: f64,
    pub term_inner: f64,
    pub m_t: f64,
}

impl WeightBreakdown {
    fn new(term_drift: f64, term_trace: f64, term_inner: f64) -> Self {
        Self {
            term_drift,
            term_trace,
            term_inner,
            m_t: term_drift + term_trace + term_inner,
        }
    }
}

fn check_dims(pf: &PathFunctionals, v: &Direction) -> Result<()> {
    let (m, d) = v.dims();
    if pf.b_t.len() != m {
        return Err(Error::Dimension {
            what: "v1".into(),
            expected: pf.b_t.len(),
            got: m,
        });
    }
    if pf.y_t.len() != d {
        return Err(Error::Dimension {
            what: "v2".into(),
            expected: pf.y_t.len(),
            got: d,
        });
    }
    Ok(())
}

fn factor_qt(pf: &PathFunctionals) -> Result<SpdFactor> {
    let d = pf.y_t.len();
    let trace = pf.trace_qt();
    let invalid = Error::InvalidPath {
        min_eig: pf.min_eig_qt,
        trace,
    };
    if !(pf.min_eig_qt.is_finite() && trace > 0.0 && pf.min_eig_qt > INVERTIBILITY_REL * trace) {
        return Err(invalid);
    }
    SpdFactor::new(&pf.q_t, d).ok_or(invalid)
}

fn trace_and_inner(pf: &PathFunctionals, v2: &[f64], with_drift: bool) -> Result<(f64, f64)> {
    let chol = factor_qt(pf)?;
    let rhs: Vec<f64> = v2
        .iter()
        .zip(&pf.weighted_stoch_integral)
        .zip(&pf.drift_grad_integral)
        .map(|((a, b), c)| if with_drift { a + b + c } else { a + b })
        .collect();
    let u = chol.solve(&rhs);
    let term_inner = linalg::dot(&u, &pf.sigma_stoch_integral);
    let term_trace = -chol.trace_solve(&pf.trace_integral);
    Ok((term_trace, term_inner))
}

/// Weight for the basic model; `pf` must come from `simulate_basic` with the
/// same direction `v`.
pub fn bismut_weight(pf: &PathFunctionals, v: &Direction, horizon: f64) -> Result<WeightBreakdown> {
    check_dims(pf, v)?;
    if !(horizon > 0.0) {
        return Err(Error::param("T", "must be positive"));
    }
    let term_drift = linalg::dot(&v.v1, &pf.b_t) / horizon;
    let (term_trace, term_inner) = trace_and_inner(pf, &v.v2, false)?;
    Ok(WeightBreakdown::new(term_drift, term_trace, term_inner))
}

/// Weight for the extended model; `pf` must come from `simulate_extended`
/// with the same direction `v`.
pub fn extended_weight(pf: &PathFunctionals, v: &Direction, horizon: f64) -> Result<WeightBreakdown> {
    check_dims(pf, v)?;
    if !(horizon > 0.0) {
        return Err(Error::param("T", "must be positive"));
    }
    let (term_trace, term_inner) = trace_and_inner(pf, &v.v2, true)?;
    Ok(WeightBreakdown::new(pf.xi_drift_weight, term_trace, term_inner))
}

/// Picks the weight variant matching how `pf` was produced.
pub fn weight_for(
    extended: bool,
    pf: &PathFunctionals,
    v: &Direction,
    horizon: f64,
) -> Result<WeightBreakdown> {
    if extended {
        extended_weight(pf, v, horizon)
    } else {
        bismut_weight(pf, v, horizon)
    }
}
