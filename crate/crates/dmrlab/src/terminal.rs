//! Terminal condition catalog: xi = phi(B_T) for a small family of phi.

use serde::{Deserialize, Serialize};

use crate::paths::PathEnsemble;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TerminalSpec {
    /// intercept + slope · B_T
    Affine { intercept: f64, slope: f64 },
    /// Polynomial in B_T, low order first.
    Poly { coeffs: Vec<f64> },
    /// (B_T - strike)^+
    Call { strike: f64 },
    /// amplitude · sin(frequency · B_T)
    Sin { amplitude: f64, frequency: f64 },
}

impl TerminalSpec {
    pub fn brownian() -> Self {
        TerminalSpec::Affine {
            intercept: 0.0,
            slope: 1.0,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match self {
            TerminalSpec::Affine { intercept, slope } => intercept + slope * x,
            TerminalSpec::Poly { coeffs } => {
                let mut acc = 0.0;
                for &c in coeffs.iter().rev() {
                    acc = acc * x + c;
                }
                acc
            }
            TerminalSpec::Call { strike } => (x - strike).max(0.0),
            TerminalSpec::Sin {
                amplitude,
                frequency,
            } => amplitude * (frequency * x).sin(),
        }
    }

    /// xi per path: phi evaluated at the Brownian endpoint.
    pub fn eval_paths(&self, ensemble: &PathEnsemble) -> Vec<f64> {
        ensemble.terminal().iter().map(|&w| self.phi(w)).collect()
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match self {
            TerminalSpec::Affine { intercept, slope } => {
                if !intercept.is_finite() || !slope.is_finite() {
                    problems.push("xi affine parameters must be finite".into());
                }
            }
            TerminalSpec::Poly { coeffs } => {
                if coeffs.is_empty() {
                    problems.push("xi poly needs at least one coefficient".into());
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    problems.push("xi poly coefficients must be finite".into());
                }
            }
            TerminalSpec::Call { strike } => {
                if !strike.is_finite() {
                    problems.push("xi call strike must be finite".into());
                }
            }
            TerminalSpec::Sin {
                amplitude,
                frequency,
            } => {
                if !amplitude.is_finite() || !frequency.is_finite() {
                    problems.push("xi sin parameters must be finite".into());
                }
            }
        }
        problems
    }
}
