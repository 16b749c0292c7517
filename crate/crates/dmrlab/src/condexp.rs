//! Conditional expectations on the path ensemble.
//!
//! `regress_condexp` realizes E_t[·] as a least-squares projection onto a
//! polynomial basis in the Brownian state, `extract_martingale_z` builds the
//! martingale part of a terminal payoff and reads Z off the increment
//! regression, and `quadrature_condexp_oracle` provides an independent
//! Gauss-Hermite answer for catalog terminal conditions.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::paths::PathEnsemble;
use crate::stats;
use crate::terminal::TerminalSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionSpec {
    /// Polynomial degree in B_t; the basis always contains the constant.
    pub degree: usize,
    /// Ridge weight on the non-constant (centered) columns.
    pub ridge: f64,
    /// Center and scale the state before building powers.
    pub standardize: bool,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        RegressionSpec {
            degree: 4,
            ridge: 1e-10,
            standardize: true,
        }
    }
}

/// Least-squares projection of `target` onto polynomials of W at time index k.
///
/// At k = 0 the state is degenerate and the projection is the plain mean; at
/// k = N the target is measurable and returned as is. The constant column is
/// kept exactly orthogonal to the centered power columns, so the fitted values
/// preserve the target mean to float precision.
pub fn regress_condexp(
    ensemble: &PathEnsemble,
    target: &[f64],
    k: usize,
    spec: &RegressionSpec,
) -> Result<Vec<f64>> {
    let n = ensemble.grid().steps();
    let m = ensemble.paths();
    if target.len() != m {
        return Err(Error::Config(format!(
            "regression target has {} entries, ensemble has {m} paths",
            target.len()
        )));
    }
    if k > n {
        return Err(Error::Config(format!(
            "time index {k} out of range 0..={n}"
        )));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("regression target contains non-finite values".into()));
    }
    // Constant targets project onto themselves.
    if target.iter().all(|&v| v == target[0]) {
        return Ok(vec![target[0]; m]);
    }
    if k == 0 {
        return Ok(vec![stats::mean(target); m]);
    }
    if k == n {
        return Ok(target.to_vec());
    }

    let w = ensemble.w_at(k);
    let degree = spec.degree.max(0);
    let (mu, scale) = if spec.standardize {
        let mu = stats::mean(w);
        let sd = stats::variance(w).sqrt();
        (mu, if sd > 0.0 { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };

    // Power columns, centered so they are orthogonal to the constant.
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(degree);
    let mut z = vec![0.0; m];
    for (zi, &wi) in z.iter_mut().zip(w) {
        *zi = (wi - mu) / scale;
    }
    let mut pow = vec![1.0; m];
    for _ in 0..degree {
        for (p, &zi) in pow.iter_mut().zip(&z) {
            *p *= zi;
        }
        let col_mean = stats::mean(&pow);
        columns.push(pow.iter().map(|&p| p - col_mean).collect());
    }

    let d = columns.len();
    // Normal equations on the centered columns only; the constant decouples.
    let mut gram = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    let ridge = spec.ridge * m as f64;
    let mut buf = vec![0.0; m];
    for i in 0..d {
        for j in i..d {
            for ((b, &a), &c) in buf.iter_mut().zip(&columns[i]).zip(&columns[j]) {
                *b = a * c;
            }
            let g = stats::pairwise_sum(&buf);
            gram[i][j] = g;
            gram[j][i] = g;
        }
        gram[i][i] += ridge;
        for ((b, &a), &y) in buf.iter_mut().zip(&columns[i]).zip(target) {
            *b = a * y;
        }
        rhs[i] = stats::pairwise_sum(&buf);
    }
    let beta = solve_symmetric(&mut gram, &mut rhs)?;

    let intercept = stats::mean(target);
    let mut fitted = vec![intercept; m];
    for (j, col) in columns.iter().enumerate() {
        let b = beta[j];
        for (f, &c) in fitted.iter_mut().zip(col) {
            *f += b * c;
        }
    }
    Ok(fitted)
}

/// Gaussian elimination with partial pivoting for the small normal-equation
/// system. Rank deficiency beyond the ridge rescue is a regression error.
fn solve_symmetric(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let d = b.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    let scale = a
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0f64, |acc, &v| acc.max(v.abs()));
    for col in 0..d {
        let mut pivot_row = col;
        for row in col + 1..d {
            if a[row][col].abs() > a[pivot_row][col].abs() {
                pivot_row = row;
            }
        }
        if a[pivot_row][col].abs() <= 1e-14 * scale {
            return Err(Error::Regression(format!(
                "normal equations rank-deficient at column {col} (pivot {:e})",
                a[pivot_row][col]
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..d {
            let factor = a[row][col] / a[col][col];
            for j in col..d {
                a[row][j] -= factor * a[col][j];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for col in (0..d).rev() {
        let mut acc = b[col];
        for j in col + 1..d {
            acc -= a[col][j] * x[j];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Martingale part and Z of a terminal payoff H:
/// M_k = E_k[H] - E[H], Z_k = E_k[(M_{k+1} - M_k) dW_k] / dt, Z_N = Z_{N-1}.
pub fn extract_martingale_z(
    ensemble: &PathEnsemble,
    h: &[f64],
    spec: &RegressionSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = ensemble.grid().steps();
    let m = ensemble.paths();
    let dt = ensemble.grid().dt();
    let mean_h = stats::mean(h);

    let mut mart = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let fitted = regress_condexp(ensemble, h, k, spec)?;
        mart.push(fitted.iter().map(|&f| f - mean_h).collect::<Vec<f64>>());
    }

    let mut z = Vec::with_capacity(n + 1);
    let mut target = vec![0.0; m];
    for k in 0..n {
        let dw = ensemble.dw_at(k);
        for i in 0..m {
            target[i] = (mart[k + 1][i] - mart[k][i]) * dw[i];
        }
        let fitted = regress_condexp(ensemble, &target, k, spec)?;
        z.push(fitted.iter().map(|&f| f / dt).collect::<Vec<f64>>());
    }
    z.push(z[n - 1].clone());
    Ok((mart, z))
}

const GH_NODES: usize = 64;

/// Orthonormal Hermite value (weight e^{-x^2}) of order `order` at x.
fn hermite_orthonormal(order: usize, x: f64) -> f64 {
    let mut prev = std::f64::consts::PI.powf(-0.25);
    if order == 0 {
        return prev;
    }
    let mut cur = std::f64::consts::SQRT_2 * x * prev;
    for k in 1..order {
        let next =
            x * (2.0 / (k as f64 + 1.0)).sqrt() * cur - (k as f64 / (k as f64 + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Gauss-Hermite nodes and weights for weight e^{-x^2}, built by walking the
/// interlacing root brackets up the recurrence and bisecting each one.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut roots: Vec<f64> = vec![];
    for order in 1..=n {
        let upper = (2.0 * order as f64 + 1.0).sqrt() + 1.0;
        let mut brackets = Vec::with_capacity(order + 1);
        let mut lo = -upper;
        for &r in &roots {
            brackets.push((lo, r));
            lo = r;
        }
        brackets.push((lo, upper));
        let mut new_roots = Vec::with_capacity(order);
        for (mut a, mut b) in brackets {
            let fa = hermite_orthonormal(order, a);
            for _ in 0..110 {
                let mid = 0.5 * (a + b);
                let fm = hermite_orthonormal(order, mid);
                if (fm > 0.0) == (fa > 0.0) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            new_roots.push(0.5 * (a + b));
        }
        roots = new_roots;
    }
    // Christoffel weights: 1 / sum_{j<n} p_j(x)^2.
    let weights: Vec<f64> = roots
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            for j in 0..n {
                let p = hermite_orthonormal(j, x);
                acc += p * p;
            }
            1.0 / acc
        })
        .collect();
    (roots, weights)
}

fn gh64() -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    TABLE.get_or_init(|| gauss_hermite(GH_NODES))
}

/// E[f(G)] for standard normal G, by 64-node Gauss-Hermite quadrature.
pub fn gauss_expectation<F: Fn(f64) -> f64>(f: F) -> f64 {
    let (nodes, weights) = gh64();
    let mut terms = Vec::with_capacity(nodes.len());
    for (&x, &w) in nodes.iter().zip(weights) {
        terms.push(w * f(std::f64::consts::SQRT_2 * x));
    }
    stats::pairwise_sum(&terms) / std::f64::consts::PI.sqrt()
}

/// E[phi(b + sqrt(T-t)·G)] for a catalog terminal condition, independent of
/// the regression path. Smooth entries use 64-node Gauss-Hermite quadrature;
/// the call payoff has a kink, so it uses the exact Gaussian integral of the
/// linear piece instead.
pub fn quadrature_condexp_oracle(
    xi: &TerminalSpec,
    horizon: f64,
    t: f64,
    state: f64,
) -> Result<f64> {
    if t > horizon || t < 0.0 {
        return Err(Error::Config(format!(
            "oracle time {t} outside [0, {horizon}]"
        )));
    }
    let sigma = (horizon - t).sqrt();
    if sigma == 0.0 {
        return Ok(xi.phi(state));
    }
    match xi {
        TerminalSpec::Poly { coeffs } if coeffs.len() > 127 => Err(Error::OracleUnavailable(
            format!(
                "poly degree {} exceeds the 64-node quadrature's exactness range",
                coeffs.len() - 1
            ),
        )),
        TerminalSpec::Call { strike } => {
            // E[(theta + sigma G)^+] = theta·Phi(theta/sigma) + sigma·pdf(theta/sigma)
            let theta = state - strike;
            let d = theta / sigma;
            Ok(theta * stats::normal_cdf(d) + sigma * stats::normal_pdf(d))
        }
        _ => {
            let (nodes, weights) = gh64();
            let scale = sigma * std::f64::consts::SQRT_2;
            let mut terms = Vec::with_capacity(nodes.len());
            for (&x, &w) in nodes.iter().zip(weights) {
                terms.push(w * xi.phi(state + scale * x));
            }
            Ok(stats::pairwise_sum(&terms) / std::f64::consts::PI.sqrt())
        }
    }
}
