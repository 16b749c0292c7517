//! Driver catalog f(t, y, z) with declared Lipschitz constants.

use crate::timefn::TimeFn;

#[derive(Debug, Clone)]
pub enum Driver {
    Zero,
    /// a(t)·y + b(t)·z + c(t)
    Affine {
        a: TimeFn,
        b: TimeFn,
        c: TimeFn,
        lambda: f64,
    },
    /// ly·sin(y) + lz·cos(z) + c(t)
    SinCos {
        ly: f64,
        lz: f64,
        c: TimeFn,
        lambda: f64,
    },
}

impl Driver {
    pub fn eval(&self, t: f64, y: f64, z: f64) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Affine { a, b, c, .. } => a.eval(t) * y + b.eval(t) * z + c.eval(t),
            Driver::SinCos { ly, lz, c, .. } => ly * y.sin() + lz * z.cos() + c.eval(t),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Driver::Zero => 0.0,
            Driver::Affine { lambda, .. } | Driver::SinCos { lambda, .. } => *lambda,
        }
    }

    /// Whether f actually reads (y, z); when it does not, one
    /// constant-coefficient pass solves the equation exactly.
    pub fn depends_on_solution(&self) -> bool {
        match self {
            Driver::Zero => false,
            Driver::SinCos { ly, lz, .. } => *ly != 0.0 || *lz != 0.0,
            Driver::Affine { a, b, .. } => {
                !matches!(a, TimeFn::Const { value } if *value == 0.0)
                    || !matches!(b, TimeFn::Const { value } if *value == 0.0)
            }
        }
    }

    /// Whether f has the form a_t·y + h(t, z) with deterministic a, the shape
    /// required by the sandwich comparison.
    pub fn affine_in_y(&self) -> bool {
        matches!(self, Driver::Zero | Driver::Affine { .. })
    }

    /// Check the declared Lipschitz constant against the catalog's true one
    /// sampled over a time grid; returns violations as messages.
    pub fn validate(&self, times: &[f64]) -> Vec<String> {
        let mut problems = Vec::new();
        match self {
            Driver::Zero => {}
            Driver::Affine { a, b, c, lambda } => {
                problems.extend(a.validate());
                problems.extend(b.validate());
                problems.extend(c.validate());
                let need = times
                    .iter()
                    .map(|&t| a.eval(t).abs().max(b.eval(t).abs()))
                    .fold(0.0, f64::max);
                if *lambda < need {
                    problems.push(format!(
                        "declared driver lipschitz {lambda} below sampled coefficient bound {need}"
                    ));
                }
            }
            Driver::SinCos { ly, lz, c, lambda } => {
                problems.extend(c.validate());
                let need = ly.abs().max(lz.abs());
                if *lambda < need {
                    problems.push(format!(
                        "declared driver lipschitz {lambda} below coefficient bound {need}"
                    ));
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
    fn lipschitz_holds_on_samples() {
        let f = Driver::SinCos {
            ly: 0.3,
            lz: 0.2,
            c: TimeFn::constant(0.1),
            lambda: 0.3,
        };
        // |f(t,y,z) - f(t,y',z')| <= lambda (|y-y'| + |z-z'|) on a sample box
        let pts: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.37).collect();
        for &y in &pts {
            for &z in &pts {
                let base = f.eval(0.5, y, z);
                for (dy, dz) in [(0.1, 0.0), (0.0, -0.2), (0.3, 0.4)] {
                    let other = f.eval(0.5, y + dy, z + dz);
                    assert!(
                        (other - base).abs() <= 0.3 * (dy.abs() + dz.abs()) + 1e-12,
                        "lipschitz violated at y={y} z={z}"
                    );
                }
            }
        }
        assert!(f.validate(&[0.0, 1.0]).is_empty());
    }

    #[test]
    fn declared_constant_must_cover_coefficients() {
        let f = Driver::Affine {
            a: TimeFn::constant(-1.0),
            b: TimeFn::constant(0.5),
            c: TimeFn::constant(0.0),
            lambda: 0.4,
        };
        assert!(!f.validate(&[0.0, 0.5, 1.0]).is_empty());
    }

    #[test]
    fn solution_dependence_detection() {
        assert!(!Driver::Zero.depends_on_solution());
        let const_only = Driver::Affine {
            a: TimeFn::constant(0.0),
            b: TimeFn::constant(0.0),
            c: TimeFn::piecewise(vec![(0.0, 1.0), (1.0, 2.0)]),
            lambda: 0.0,
        };
        assert!(!const_only.depends_on_solution());
        assert!(const_only.affine_in_y());
        let sin = Driver::SinCos {
            ly: 0.3,
            lz: 0.0,
            c: TimeFn::constant(0.0),
            lambda: 0.3,
        };
        assert!(sin.depends_on_solution());
        assert!(!sin.affine_in_y());
    }
}
