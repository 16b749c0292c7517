//! Deterministic functions of time used for obstacles and driver coefficients.

use serde::{Deserialize, Serialize};

/// Catalog of deterministic time functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeFn {
    Const { value: f64 },
    /// Breakpoints (t, v), linearly interpolated, clamped outside the range.
    PiecewiseLinear { points: Vec<(f64, f64)> },
    /// Polynomial in t, low order first.
    Poly { coeffs: Vec<f64> },
}

impl TimeFn {
    pub fn constant(value: f64) -> Self {
        TimeFn::Const { value }
    }

    pub fn piecewise(points: Vec<(f64, f64)>) -> Self {
        TimeFn::PiecewiseLinear { points }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFn::Const { value } => *value,
            TimeFn::Poly { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * t + c;
                }
                acc
            }
            TimeFn::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return 0.0;
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                let last = points.len() - 1;
                if t >= points[last].0 {
                    return points[last].1;
                }
                for w in points.windows(2) {
                    let (t0, v0) = w[0];
                    let (t1, v1) = w[1];
                    if t <= t1 {
                        let frac = (t - t0) / (t1 - t0);
                        return v0 + frac * (v1 - v0);
                    }
                }
                points[last].1
            }
        }
    }

    /// Structural checks; returns a list of problems (empty when valid).
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self {
            TimeFn::Const { value } => {
                if !value.is_finite() {
                    problems.push("const value must be finite".into());
                }
            }
            TimeFn::Poly { coeffs } => {
                if coeffs.is_empty() {
                    problems.push("poly needs at least one coefficient".into());
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    problems.push("poly coefficients must be finite".into());
                }
            }
            TimeFn::PiecewiseLinear { points } => {
                if points.is_empty() {
                    problems.push("piecewise_linear needs at least one breakpoint".into());
                }
                if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                    problems.push("piecewise_linear breakpoints must be finite".into());
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        problems.push(format!(
                            "piecewise_linear breakpoints must be strictly increasing in t \
                             (got {} then {})",
                            w[0].0, w[1].0
                        ));
                        break;
                    }
                }
            }
        }
        problems
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_interpolates_and_clamps() {
        let f = TimeFn::piecewise(vec![(0.0, 1.0), (0.5, 0.0), (1.0, 2.0)]);
        assert_eq!(f.eval(0.0), 1.0);
        assert_eq!(f.eval(0.25), 0.5);
        assert_eq!(f.eval(0.75), 1.0);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(2.0), 2.0);
    }

    #[test]
    fn poly_horner() {
        let f = TimeFn::Poly {
            coeffs: vec![1.0, -2.0, 3.0],
        };
        assert!((f.eval(0.5) - (1.0 - 1.0 + 0.75)).abs() < 1e-15);
    }

    #[test]
    fn validation_catches_unsorted_breakpoints() {
        let f = TimeFn::piecewise(vec![(0.5, 1.0), (0.2, 0.0)]);
        assert!(!f.validate().is_empty());
    }
}
