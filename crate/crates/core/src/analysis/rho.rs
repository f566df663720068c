use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelSpec;

/// The curve realizing a [`RhoUpperBound`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CurveDescriptor {
    /// Straight segment; exact for constant `σ = I`, and for power-law
    /// models when `y = y'`.
    Straight,
    /// `x → x*`, then `y → y'` at fixed `x*`, then `x* → x'`.
    ThreeSegment {
        waypoint: f64,
        horizontal_cost: f64,
        vertical_cost: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RhoUpperBound {
    pub z: Vec<f64>,
    pub z_prime: Vec<f64>,
    pub bound: f64,
    pub curve: CurveDescriptor,
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

fn golden_min(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()) {
            break;
        }
        if gc <= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - GOLDEN * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + GOLDEN * (b - a);
            gd = g(d);
        }
    }
    if gc <= gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Upper bound on the intrinsic distance between `z` and `z'`.
///
/// For the one-dimensional power-law model `|σ(x)| = |x|ˡ`, a vertical move
/// at height `x*` is subunit with speed `|x*|ˡ`, so the three-segment curve
/// costs `|x − x*| + |y − y'|/|x*|ˡ + |x* − x'|`. This cost is convex in
/// `x*` on each half-line and is minimized by golden-section search on both.
/// For `constant_identity` the distance is Euclidean.
pub fn rho_upper_bound(model: &ModelSpec, z: &[f64], z_prime: &[f64]) -> Result<RhoUpperBound> {
    let n = model.m + model.d;
    for (what, p) in [("z", z), ("z_prime", z_prime)] {
        if p.len() != n {
            return Err(Error::Dimension {
                what: what.into(),
                expected: n,
                got: p.len(),
            });
        }
    }
    let make = |bound, curve| RhoUpperBound {
        z: z.to_vec(),
        z_prime: z_prime.to_vec(),
        bound,
        curve,
    };
    if model.name == "constant_identity" && !model.is_extended() {
        let diff: Vec<f64> = z.iter().zip(z_prime).map(|(a, b)| a - b).collect();
        return Ok(make(linalg::norm(&diff), CurveDescriptor::Straight));
    }
    let l = match model.power_params {
        Some(p) if model.name == "power_law" && model.m == 1 && model.d == 1 => p.l,
        _ => {
            return Err(Error::Unsupported(format!(
                "distance bound needs the m = d = 1 power_law or constant_identity model, got {}",
                model.name
            )))
        }
    };
    let (x, y, xp, yp) = (z[0], z[1], z_prime[0], z_prime[1]);
    let dy = (y - yp).abs();
    if dy == 0.0 {
        return Ok(make((x - xp).abs(), CurveDescriptor::Straight));
    }
    let cost = |s: f64| (x - s).abs() + dy / s.abs().powf(l) + (s - xp).abs();
    // the minimizer satisfies |s|^{l+1} ≤ l·dy/2 or lies between x and x'
    let upper = x.abs().max(xp.abs()) + (l * dy / 2.0).powf(1.0 / (l + 1.0)) + 1.0;
    let lower = upper * 1e-12;
    let (s_pos, c_pos) = golden_min(cost, lower, upper);
    let (s_neg, c_neg) = golden_min(cost, -upper, -lower);
    let (s, c) = if c_pos <= c_neg { (s_pos, c_pos) } else { (s_neg, c_neg) };
    Ok(make(
        c,
        CurveDescriptor::ThreeSegment {
            waypoint: s,
            horizontal_cost: (x - s).abs() + (s - xp).abs(),
            vertical_cost: dy / s.abs().powf(l),
        },
    ))
}
