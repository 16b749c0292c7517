//! Reflecting boundary functions b(t, x), strictly increasing in x inside a
//! bi-Lipschitz band [c, C], and the bracketing root finder used to turn them
//! into obstacle curves.

use crate::error::{Error, Result};
use crate::stats;
use crate::timefn::TimeFn;

/// Two-sided slope band [c, C] of a boundary in its x argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
}

impl Band {
    pub fn new(lower: f64, upper: f64) -> Self {
        assert!(lower > 0.0 && upper >= lower, "band must satisfy 0 < c <= C");
        Band { lower, upper }
    }

    /// Combined band of two boundaries (worst constants).
    pub fn join(self, other: Band) -> Band {
        Band {
            lower: self.lower.min(other.lower),
            upper: self.upper.max(other.upper),
        }
    }
}

/// Monotone warp applied to the x argument: identity or x + alpha·tanh(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Warp {
    Identity,
    Tanh { alpha: f64 },
}

impl Warp {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Warp::Identity => x,
            Warp::Tanh { alpha } => x + alpha * x.tanh(),
        }
    }

    /// Slope band of the warp; requires |alpha| < 1 so the band stays positive.
    pub fn band(self) -> Band {
        match self {
            Warp::Identity => Band::new(1.0, 1.0),
            Warp::Tanh { alpha } => {
                if alpha >= 0.0 {
                    Band::new(1.0, 1.0 + alpha)
                } else {
                    Band::new(1.0 + alpha, 1.0)
                }
            }
        }
    }

    pub fn is_identity(self) -> bool {
        matches!(self, Warp::Identity)
    }
}

/// Per-grid-time data of a boundary induced by averaging a loss over an
/// ensemble slice. For identity warps the centered sample collapses to its
/// mean; otherwise the centered values are kept and averaged per query.
#[derive(Debug, Clone)]
pub enum InducedData {
    AffineInY { centered_mean: Vec<f64> },
    General { centered: Vec<Vec<f64>> },
}

#[derive(Debug, Clone)]
pub struct InducedBoundary {
    pub warp: Warp,
    pub obstacle: TimeFn,
    pub data: InducedData,
    /// Mean of the additive path-feature shift per grid time (zero without one).
    pub shift_mean: Vec<f64>,
    /// First grid time covered by the cached rows (nonzero for windowed solves).
    pub t0: f64,
    pub dt: f64,
    pub band: Band,
}

impl InducedBoundary {
    fn index_of(&self, t: f64) -> usize {
        let len = match &self.data {
            InducedData::AffineInY { centered_mean } => centered_mean.len(),
            InducedData::General { centered } => centered.len(),
        };
        let k = ((t - self.t0) / self.dt).round() as isize;
        k.clamp(0, len as isize - 1) as usize
    }

    fn eval(&self, t: f64, x: f64) -> f64 {
        let k = self.index_of(t);
        let warped_mean = match &self.data {
            InducedData::AffineInY { centered_mean } => x + centered_mean[k],
            InducedData::General { centered } => {
                stats::mean_map(&centered[k], |c| self.warp.apply(x + c))
            }
        };
        warped_mean - self.obstacle.eval(t) + self.shift_mean[k]
    }
}

/// A reflecting boundary. Analytic entries come from the scenario catalog;
/// induced entries average a loss over an ensemble slice.
#[derive(Debug, Clone)]
pub enum Boundary {
    Analytic { warp: Warp, obstacle: TimeFn },
    Induced(InducedBoundary),
}

/// Obstacle level of the one-sided sentinel boundary (x ∓ 1e9); the
/// degenerate side is never active at desk scale.
pub const SENTINEL_LEVEL: f64 = 1e9;

impl Boundary {
    pub fn affine(obstacle: TimeFn) -> Self {
        Boundary::Analytic {
            warp: Warp::Identity,
            obstacle,
        }
    }

    pub fn tanh_warp(alpha: f64, obstacle: TimeFn) -> Self {
        Boundary::Analytic {
            warp: Warp::Tanh { alpha },
            obstacle,
        }
    }

    /// Sentinel upper boundary: root at +1e9, never pushes down.
    pub fn sentinel_upper() -> Self {
        Boundary::affine(TimeFn::constant(SENTINEL_LEVEL))
    }

    /// Sentinel lower boundary: root at −1e9, never pushes up.
    pub fn sentinel_lower() -> Self {
        Boundary::affine(TimeFn::constant(-SENTINEL_LEVEL))
    }

    pub fn eval(&self, t: f64, x: f64) -> f64 {
        match self {
            Boundary::Analytic { warp, obstacle } => warp.apply(x) - obstacle.eval(t),
            Boundary::Induced(ind) => ind.eval(t, x),
        }
    }

    pub fn band(&self) -> Band {
        match self {
            Boundary::Analytic { warp, .. } => warp.band(),
            Boundary::Induced(ind) => ind.band,
        }
    }

    /// Root tolerance default: tighter for analytic entries, looser for
    /// ensemble-induced ones whose evaluation already carries O(M) rounding.
    pub fn default_root_tol(&self) -> f64 {
        match self {
            Boundary::Analytic { .. } => 1e-10,
            Boundary::Induced(_) => 1e-8,
        }
    }
}

const MAX_BISECTIONS: usize = 200;

/// Solve b(t, x*) = 0 in x to within `eps` in boundary value.
///
/// The band gives the bracket directly: from any x0 the root lies in
/// [x0 − |b(t,x0)|/c, x0 + |b(t,x0)|/c]; bisection does the rest.
pub fn boundary_root(b: &Boundary, t: f64, hint: f64, eps: f64) -> Result<f64> {
    let c = b.band().lower;
    let f0 = b.eval(t, hint);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!(
            "boundary evaluated to {f0} at (t={t}, x={hint})"
        )));
    }
    if f0.abs() <= eps {
        return Ok(hint);
    }
    let band = b.band();
    if band.lower == band.upper {
        // Constant slope: one Newton step is exact (affine boundaries hit
        // their root to the last bit). Verified before returning.
        let candidate = hint - f0 / band.lower;
        let f_c = b.eval(t, candidate);
        if f_c.is_finite() && f_c.abs() <= eps {
            return Ok(candidate);
        }
    }
    let half_width = f0.abs() / c;
    let mut lo = hint - half_width;
    let mut hi = hint + half_width;
    let f_lo = b.eval(t, lo);
    let f_hi = b.eval(t, hi);
    if !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(Error::Numeric(format!(
            "boundary evaluated to a non-finite value while bracketing at t={t}"
        )));
    }
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::InvariantViolation(format!(
            "boundary band [c={c}] violated while bracketing at t={t}: \
             b({lo}) = {f_lo}, b({hi}) = {f_hi}"
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let f_mid = b.eval(t, mid);
        if !f_mid.is_finite() {
            return Err(Error::Numeric(format!(
                "boundary evaluated to a non-finite value at (t={t}, x={mid})"
            )));
        }
        if f_mid.abs() <= eps {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Numeric(format!(
        "root finding failed to reach tolerance {eps} at t={t}"
    )))
}
