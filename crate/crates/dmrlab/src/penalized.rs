//! Penalized mean-field scheme for linear obstacles on the mean.
//!
//! The constraint l_t <= E[Y_t] <= r_t is replaced by drift terms
//! n (E[Y]-l)^- and n (E[Y]-r)^+; a backward Euler sweep applies the penalty
//! to the ensemble mean through a closed-form implicit step, so the scheme is
//! stable for any n dt. Convergence in n is measured, not presumed.

use crate::condexp::{regress_condexp, RegressionSpec};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::paths::PathEnsemble;
use crate::stats;
use crate::timefn::TimeFn;

/// Deterministic obstacles on the mean. Under the integral-form hypothesis
/// both obstacles start at 0; `relax_origin` admits l_0 < 0 < r_0 instead
/// (an extension beyond that hypothesis, labeled as such in outputs).
#[derive(Debug, Clone)]
pub struct LinearObstacles {
    pub lower: TimeFn,
    pub upper: TimeFn,
    pub relax_origin: bool,
}

impl LinearObstacles {
    /// Structural checks against a grid: ordering, origin condition.
    pub fn validate(&self, times: &[f64]) -> Vec<String> {
        let mut problems = Vec::new();
        problems.extend(self.lower.validate());
        problems.extend(self.upper.validate());
        for &t in times {
            if self.lower.eval(t) > self.upper.eval(t) + 1e-12 {
                problems.push(format!(
                    "obstacles cross at t = {t}: lower {} > upper {}",
                    self.lower.eval(t),
                    self.upper.eval(t)
                ));
                break;
            }
        }
        let l0 = self.lower.eval(times[0]);
        let r0 = self.upper.eval(times[0]);
        if self.relax_origin {
            if !(l0 <= 0.0 && 0.0 <= r0) {
                problems.push(format!(
                    "relaxed origin still needs l_0 <= 0 <= r_0, got l_0 = {l0}, r_0 = {r0}"
                ));
            }
        } else if l0 != 0.0 || r0 != 0.0 {
            problems.push(format!(
                "integral-form obstacles must start at 0 (got l_0 = {l0}, r_0 = {r0}); \
                 set relax_origin to lift this"
            ));
        }
        problems
    }
}

/// Output of one penalized solve.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    /// K^{n,l}[k] = sum_{j<k} n (y_j - l_j)^- dt — up-pushes, deterministic.
    pub k_l: Vec<f64>,
    /// K^{n,r}[k] = sum_{j<k} n (y_j - r_j)^+ dt — down-pushes.
    pub k_r: Vec<f64>,
    pub mean_y: Vec<f64>,
    pub n_penalty: f64,
    /// (int |(y-l)^-|^2 dt, int |(y-r)^+|^2 dt), left Riemann.
    pub penetration: (f64, f64),
}

/// Unique y solving y = ytilde + ndt (y-l)^- - ndt (y-r)^+, in closed form.
/// Monotone in ytilde, lands in [min(ytilde, l), max(ytilde, r)], and stable
/// for every ndt >= 0.
pub fn implicit_penalty_step(ytilde: f64, l: f64, r: f64, ndt: f64) -> f64 {
    debug_assert!(ndt >= 0.0);
    debug_assert!(l <= r);
    if ytilde < l {
        (ytilde + ndt * l) / (1.0 + ndt)
    } else if ytilde > r {
        (ytilde + ndt * r) / (1.0 + ndt)
    } else {
        ytilde
    }
}

/// Backward Euler with the implicit penalty applied to the ensemble mean.
/// The penalty is deterministic: every path is shifted by the same amount.
pub fn penalized_solve(
    ensemble: &PathEnsemble,
    driver: &Driver,
    xi: &[f64],
    obstacles: &LinearObstacles,
    n_penalty: f64,
    spec: &RegressionSpec,
) -> Result<PenalizedSolution> {
    let n = ensemble.grid().steps();
    let m = ensemble.paths();
    let dt = ensemble.grid().dt();
    let times = ensemble.grid().times();
    if xi.len() != m {
        return Err(Error::Config(format!(
            "terminal values have {} entries, ensemble has {m} paths",
            xi.len()
        )));
    }
    if n_penalty < 0.0 || !n_penalty.is_finite() {
        return Err(Error::Config(format!(
            "penalty parameter must be finite and nonnegative, got {n_penalty}"
        )));
    }
    let problems = obstacles.validate(times);
    if !problems.is_empty() {
        return Err(Error::Scenario(problems));
    }
    // Terminal admissibility l_T <= E[xi] <= r_T within 3 SE.
    let mean_xi = stats::mean(xi);
    let tol = 3.0 * stats::standard_error(xi).max(1e-14);
    let l_t = obstacles.lower.eval(times[n]);
    let r_t = obstacles.upper.eval(times[n]);
    if mean_xi < l_t - tol || mean_xi > r_t + tol {
        return Err(Error::TerminalCondition(format!(
            "l_T <= E[xi] <= r_T fails: {l_t} <= {mean_xi} <= {r_t} (tolerance {tol})"
        )));
    }

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut mean_y = vec![0.0; n + 1];
    let mut inc_l = vec![0.0; n];
    let mut inc_r = vec![0.0; n];
    let mut pen_l = 0.0;
    let mut pen_r = 0.0;
    y[n] = xi.to_vec();
    mean_y[n] = mean_xi;

    let ndt = n_penalty * dt;
    let mut target = vec![0.0; m];
    for k in (0..n).rev() {
        let t = times[k];
        let dw = ensemble.dw_at(k);
        for i in 0..m {
            target[i] = y[k + 1][i] * dw[i];
        }
        let z_fit = regress_condexp(ensemble, &target, k, spec)?;
        let z_row: Vec<f64> = z_fit.iter().map(|&f| f / dt).collect();
        let ey = regress_condexp(ensemble, &y[k + 1], k, spec)?;
        let mut row = ey.clone();
        for _ in 0..2 {
            for i in 0..m {
                row[i] = ey[i] + driver.eval(t, row[i], z_row[i]) * dt;
            }
        }
        let ytilde = stats::mean(&row);
        if !ytilde.is_finite() {
            return Err(Error::Numeric(format!(
                "penalized sweep produced a non-finite mean at step {k}"
            )));
        }
        let l_k = obstacles.lower.eval(t);
        let r_k = obstacles.upper.eval(t);
        let y_k = implicit_penalty_step(ytilde, l_k, r_k, ndt);
        let shift = y_k - ytilde;
        if shift != 0.0 {
            for v in row.iter_mut() {
                *v += shift;
            }
        }
        let below = (y_k - l_k).min(0.0).abs();
        let above = (y_k - r_k).max(0.0);
        inc_l[k] = n_penalty * below * dt;
        inc_r[k] = n_penalty * above * dt;
        pen_l += below * below * dt;
        pen_r += above * above * dt;
        mean_y[k] = y_k;
        y[k] = row;
        z[k] = z_row;
    }
    z[n] = z[n - 1].clone();

    let mut k_l = vec![0.0; n + 1];
    let mut k_r = vec![0.0; n + 1];
    for k in 0..n {
        k_l[k + 1] = k_l[k] + inc_l[k];
        k_r[k + 1] = k_r[k] + inc_r[k];
    }

    Ok(PenalizedSolution {
        y,
        z,
        k_l,
        k_r,
        mean_y,
        n_penalty,
        penetration: (pen_l, pen_r),
    })
}

/// One row of a penalty sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_penalty: f64,
    pub pen_l: f64,
    pub pen_r: f64,
    /// sup_k |meanY^n_k - reference_k| when a reference is supplied.
    pub dist_to_ref: Option<f64>,
    pub sup_mean_y_sq: f64,
    pub int_mean_z_sq: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// log-log slope of pen_r against n; None when some penetration is 0.
    pub slope_pen_r: Option<f64>,
    /// sup_k E|Y^{n_{j+1}} - Y^{n_j}|^2 between consecutive sweep entries.
    pub successive_diffs: Vec<f64>,
}

/// Run the scheme across an increasing penalty ladder and fit the decay rate
/// of the upper-obstacle penetration.
pub fn convergence_sweep(
    ensemble: &PathEnsemble,
    driver: &Driver,
    xi: &[f64],
    obstacles: &LinearObstacles,
    n_list: &[f64],
    spec: &RegressionSpec,
    reference_mean: Option<&[f64]>,
) -> Result<SweepResult> {
    if n_list.len() < 2 {
        return Err(Error::Config(format!(
            "penalty sweep needs at least 2 entries, got {}",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "penalty sweep entries must be strictly increasing".into(),
        ));
    }
    let n = ensemble.grid().steps();
    let dt = ensemble.grid().dt();
    let mut rows = Vec::with_capacity(n_list.len());
    let mut successive_diffs = Vec::new();
    let mut previous_y: Option<Vec<Vec<f64>>> = None;
    for &np in n_list {
        let sol = penalized_solve(ensemble, driver, xi, obstacles, np, spec)?;
        let sup_mean_y_sq = (0..=n)
            .map(|k| stats::mean_map(&sol.y[k], |v| v * v))
            .fold(0.0, f64::max);
        let int_mean_z_sq = (0..n)
            .map(|k| stats::mean_map(&sol.z[k], |v| v * v) * dt)
            .sum();
        let dist_to_ref = reference_mean.map(|r| {
            sol.mean_y
                .iter()
                .zip(r)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        });
        if let Some(prev) = &previous_y {
            let d = (0..=n)
                .map(|k| {
                    stats::mean(
                        &sol.y[k]
                            .iter()
                            .zip(&prev[k])
                            .map(|(a, b)| (a - b) * (a - b))
                            .collect::<Vec<f64>>(),
                    )
                })
                .fold(0.0, f64::max);
            successive_diffs.push(d);
        }
        rows.push(SweepRow {
            n_penalty: np,
            pen_l: sol.penetration.0,
            pen_r: sol.penetration.1,
            dist_to_ref,
            sup_mean_y_sq,
            int_mean_z_sq,
        });
        previous_y = Some(sol.y);
    }
    let slope_pen_r = if rows.iter().all(|r| r.pen_r > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.n_penalty.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.pen_r.ln()).collect();
        Some(stats::slope(&xs, &ys))
    } else {
        None
    };
    Ok(SweepResult {
        rows,
        slope_pen_r,
        successive_diffs,
    })
}
