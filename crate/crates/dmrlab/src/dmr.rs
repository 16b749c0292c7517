//! BSDE solver with double mean reflections.
//!
//! The constant-coefficient construction turns the equation into a backward
//! Skorokhod problem: strip the martingale part of the terminal payoff plus
//! driver integral, induce deterministic boundaries from the centered
//! residual, reflect the mean path, and add the compensator tail back onto
//! every path. General drivers are handled by Picard iteration around that
//! construction, optionally over a subdivision of [0, T].

use rayon::prelude::*;

use crate::condexp::{regress_condexp, RegressionSpec};
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::loss::{induced_boundary_window, LossPair};
use crate::paths::PathEnsemble;
use crate::skorokhod::{solve_backward_sp, BackwardSolution};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Stop when sup_k E|dY|^2 + sum_k E|dZ|^2 dt falls below this.
    pub tol: f64,
    /// Number of equal subintervals solved backward in sequence.
    pub subintervals: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            max_iter: 30,
            tol: 1e-8,
            subintervals: 1,
        }
    }
}

/// Solution of the doubly mean-reflected equation on the full grid.
///
/// The compensator arrays are deterministic (one value per grid time, shared
/// by every path): `k_r` pushes the mean up, `k_l` pushes it down, both
/// nondecreasing from 0, k = k_r - k_l.
#[derive(Debug, Clone)]
pub struct DmrSolution {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub k: Vec<f64>,
    pub k_r: Vec<f64>,
    pub k_l: Vec<f64>,
    /// K_T - K_t, the tail actually added to the paths.
    pub k_tail: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Root curves of the induced boundaries: the mean must stay between
    /// root_lower (from the R loss) and root_upper (from the L loss).
    pub root_upper: Vec<f64>,
    pub root_lower: Vec<f64>,
    /// Constant-coefficient solves performed.
    pub iterations: usize,
    /// Picard decrements in solve order.
    pub delta_trace: Vec<f64>,
    /// Flat-off residuals (L side via k_l, R side via k_r).
    pub flatoff_l: f64,
    pub flatoff_r: f64,
    /// Worst relative deviation of mean(Y_k) from the reflected mean path.
    pub mean_identity_error: f64,
}

/// 3 standard errors of the sample mean: the Monte Carlo tolerance used for
/// terminal admissibility.
fn three_se(values: &[f64]) -> f64 {
    3.0 * stats::standard_error(values).max(1e-14)
}

/// Check E[L(t_hi, xi)] <= tol and E[R(t_hi, xi)] >= -tol with tol = 3 SE.
fn check_terminal_admissibility(
    ensemble: &PathEnsemble,
    hi: usize,
    xi: &[f64],
    losses: &LossPair,
) -> Result<()> {
    let t = ensemble.grid().time(hi);
    let upper_vals = per_path_loss(ensemble, hi, xi, losses, true);
    let lower_vals = per_path_loss(ensemble, hi, xi, losses, false);
    let mean_upper = stats::mean(&upper_vals);
    let mean_lower = stats::mean(&lower_vals);
    let tol_upper = three_se(&upper_vals);
    let tol_lower = three_se(&lower_vals);
    if mean_upper > tol_upper {
        return Err(Error::TerminalCondition(format!(
            "E[L(t, xi)] <= 0 fails at t = {t}: mean {mean_upper} > tolerance {tol_upper}"
        )));
    }
    if mean_lower < -tol_lower {
        return Err(Error::TerminalCondition(format!(
            "E[R(t, xi)] >= 0 fails at t = {t}: mean {mean_lower} < -{tol_lower}"
        )));
    }
    Ok(())
}

fn per_path_loss(
    ensemble: &PathEnsemble,
    k: usize,
    y: &[f64],
    losses: &LossPair,
    upper: bool,
) -> Vec<f64> {
    let t = ensemble.grid().time(k);
    let loss = if upper { &losses.upper } else { &losses.lower };
    let w = ensemble.w_at(k);
    y.iter()
        .zip(w)
        .map(|(&yi, &wi)| {
            let feature = match &loss.shift {
                Some(s) => s.feature.extract(wi),
                None => 0.0,
            };
            loss.eval(feature, t, yi)
        })
        .collect()
}

struct WindowSolution {
    /// Rows lo..=hi of Y and Z.
    y: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    bsp: BackwardSolution,
    mean_y: Vec<f64>,
    mean_identity_error: f64,
}

/// Constant-coefficient construction on [t_lo, t_hi] with driver values
/// `c_paths` (time-major, rows lo..hi-1 are read) and terminal values `xi`.
///
/// X~_k realizes E_k[xi + int_{t_k}^{t_hi} C ds] by regressing the *tail*
/// payoff xi + sum_{j>=k} C_j dt at each k. Under a true conditional
/// expectation this equals stripping the global martingale part from
/// xi + int_0^T C (the realized prefix cancels); under a regression on W_k it
/// is the form that keeps Y a function of the current state instead of
/// inheriting the projection residual of the realized prefix.
fn solve_cc_window(
    ensemble: &PathEnsemble,
    lo: usize,
    hi: usize,
    c_paths: &[Vec<f64>],
    xi: &[f64],
    losses: &LossPair,
    spec: &RegressionSpec,
) -> Result<WindowSolution> {
    let m = ensemble.paths();
    let dt = ensemble.grid().dt();
    let width = hi - lo;

    check_terminal_admissibility(ensemble, hi, xi, losses)?;

    // Tail payoffs H_k = xi + sum_{j=k}^{hi-1} C_j dt (left Riemann).
    let mut tails: Vec<Vec<f64>> = vec![Vec::new(); width + 1];
    tails[width] = xi.to_vec();
    for j in (0..width).rev() {
        let mut row = tails[j + 1].clone();
        let c_row = &c_paths[lo + j];
        for (hm, &c) in row.iter_mut().zip(c_row) {
            *hm += c * dt;
        }
        tails[j] = row;
    }
    if tails[0].iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("driver integral produced non-finite values".into()));
    }

    // X~ rows: the terminal row is xi itself, interior rows are fitted.
    let mut xtilde: Vec<Vec<f64>> = (lo..hi)
        .into_par_iter()
        .map(|k| regress_condexp(ensemble, &tails[k - lo], k, spec))
        .collect::<Result<_>>()?;
    xtilde.push(xi.to_vec());

    // Z from the martingale increments M_{k+1} - M_k = X~_{k+1} - X~_k + C_k dt.
    let mut z_rows: Vec<Vec<f64>> = (lo..hi)
        .into_par_iter()
        .map(|k| {
            let j = k - lo;
            let dw = ensemble.dw_at(k);
            let c_row = &c_paths[k];
            let mut target = vec![0.0; m];
            for i in 0..m {
                target[i] = (xtilde[j + 1][i] - xtilde[j][i] + c_row[i] * dt) * dw[i];
            }
            regress_condexp(ensemble, &target, k, spec)
                .map(|fitted| fitted.iter().map(|&f| f / dt).collect())
        })
        .collect::<Result<_>>()?;
    z_rows.push(z_rows[width - 1].clone());

    // Deterministic input path s_j = E[int_{t_lo}^{t_{lo+j}} C dt] and anchor.
    let mut s = Vec::with_capacity(width + 1);
    s.push(0.0);
    let mut prefix = vec![0.0; m];
    for j in 0..width {
        let c_row = &c_paths[lo + j];
        for (p, &c) in prefix.iter_mut().zip(c_row) {
            *p += c * dt;
        }
        s.push(stats::mean(&prefix));
    }
    let anchor = stats::mean(xi);

    // Boundaries induced from the centered residual: L gives the upper, R the
    // lower.
    let upper = induced_boundary_window(&xtilde, &losses.upper, ensemble, lo)?;
    let lower = induced_boundary_window(&xtilde, &losses.lower, ensemble, lo)?;

    let times = &ensemble.grid().times()[lo..=hi];
    let bsp = solve_backward_sp(times, &s, anchor, &upper, &lower)?;

    // Y = X~ + (K_T - K_t); the tail is deterministic, shared by all paths.
    let mut y_rows: Vec<Vec<f64>> = Vec::with_capacity(width + 1);
    for (j, xrow) in xtilde.iter().enumerate() {
        let tail = bsp.k_tail[j];
        y_rows.push(xrow.iter().map(|&x| x + tail).collect());
    }

    let mean_y: Vec<f64> = y_rows.iter().map(|row| stats::mean(row)).collect();
    let mean_identity_error = mean_y
        .iter()
        .zip(&bsp.x)
        .map(|(m, x)| (m - x).abs() / (1.0 + x.abs()))
        .fold(0.0, f64::max);

    Ok(WindowSolution {
        y: y_rows,
        z: z_rows,
        bsp,
        mean_y,
        mean_identity_error,
    })
}

/// Solve the equation with solution-independent driver values `c_paths`.
pub fn solve_constant_coeff(
    ensemble: &PathEnsemble,
    c_paths: &[Vec<f64>],
    xi: &[f64],
    losses: &LossPair,
    spec: &RegressionSpec,
) -> Result<DmrSolution> {
    let n = ensemble.grid().steps();
    if xi.len() != ensemble.paths() {
        return Err(Error::Config(format!(
            "terminal values have {} entries, ensemble has {} paths",
            xi.len(),
            ensemble.paths()
        )));
    }
    if c_paths.len() < n {
        return Err(Error::Config(format!(
            "driver values need at least {n} time rows, got {}",
            c_paths.len()
        )));
    }
    let w = solve_cc_window(ensemble, 0, n, c_paths, xi, losses, spec)?;
    Ok(window_to_solution(w, 1, Vec::new()))
}

fn window_to_solution(w: WindowSolution, iterations: usize, trace: Vec<f64>) -> DmrSolution {
    DmrSolution {
        y: w.y,
        z: w.z,
        k: w.bsp.k.clone(),
        k_r: w.bsp.k_up.clone(),
        k_l: w.bsp.k_down.clone(),
        k_tail: w.bsp.k_tail.clone(),
        mean_y: w.mean_y,
        root_upper: w.bsp.root_upper.clone(),
        root_lower: w.bsp.root_lower.clone(),
        iterations,
        delta_trace: trace,
        flatoff_l: w.bsp.flatoff_upper,
        flatoff_r: w.bsp.flatoff_lower,
        mean_identity_error: w.mean_identity_error,
    }
}

/// Backward-Euler regression solve of the unreflected equation, used as the
/// Picard starting point. The y-implicitness is resolved by two fixed-point
/// passes.
pub fn solve_unreflected(
    ensemble: &PathEnsemble,
    driver: &Driver,
    xi: &[f64],
    spec: &RegressionSpec,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let n = ensemble.grid().steps();
    let m = ensemble.paths();
    let dt = ensemble.grid().dt();
    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    y[n] = xi.to_vec();
    for k in (0..n).rev() {
        let t = ensemble.grid().time(k);
        let dw = ensemble.dw_at(k);
        let mut target = vec![0.0; m];
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
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "unreflected solve produced non-finite values at step {k}"
            )));
        }
        y[k] = row;
        z[k] = z_row;
    }
    z[n] = z[n - 1].clone();
    Ok((y, z))
}

/// Picard iteration around the constant-coefficient construction, optionally
/// over a backward sequence of equal subintervals.
pub fn picard_solve(
    ensemble: &PathEnsemble,
    driver: &Driver,
    xi: &[f64],
    losses: &LossPair,
    picard: &PicardConfig,
    spec: &RegressionSpec,
) -> Result<DmrSolution> {
    let n = ensemble.grid().steps();
    let m = ensemble.paths();
    let dt = ensemble.grid().dt();
    if xi.len() != m {
        return Err(Error::Config(format!(
            "terminal values have {} entries, ensemble has {m} paths",
            xi.len()
        )));
    }
    let n_sub = picard.subintervals.max(1);
    if n % n_sub != 0 {
        return Err(Error::Config(format!(
            "subintervals {n_sub} must divide the step count {n}"
        )));
    }

    // A solution-independent driver is a fixed point after one pass.
    if !driver.depends_on_solution() {
        let times = ensemble.grid().times();
        let c_paths: Vec<Vec<f64>> = (0..n)
            .map(|k| vec![driver.eval(times[k], 0.0, 0.0); m])
            .collect();
        return solve_constant_coeff(ensemble, &c_paths, xi, losses, spec);
    }

    let (mut u, mut v) = solve_unreflected(ensemble, driver, xi, spec)?;
    let mut c_paths: Vec<Vec<f64>> = vec![vec![0.0; m]; n];
    let mut trace: Vec<f64> = Vec::new();
    let mut solves = 0usize;

    let sub_width = n / n_sub;
    let mut windows: Vec<(usize, usize, WindowSolution)> = Vec::with_capacity(n_sub);
    // Subintervals run backward; each hands its first row to the previous one
    // as terminal data.
    let mut xi_window: Vec<f64> = xi.to_vec();
    for i in (0..n_sub).rev() {
        let lo = i * sub_width;
        let hi = lo + sub_width;
        let mut last: Option<WindowSolution> = None;
        let mut converged = false;
        for _ in 0..picard.max_iter {
            for j in lo..hi {
                let t = ensemble.grid().time(j);
                let c_row = &mut c_paths[j];
                let u_row = &u[j];
                let v_row = &v[j];
                for i2 in 0..m {
                    c_row[i2] = driver.eval(t, u_row[i2], v_row[i2]);
                }
            }
            let sol = solve_cc_window(ensemble, lo, hi, &c_paths, &xi_window, losses, spec)?;
            solves += 1;
            // delta = sup_k E|dY|^2 + sum_k E|dZ|^2 dt over the window
            let mut dy_sup = 0.0f64;
            for (j, row) in sol.y.iter().enumerate() {
                let prev = &u[lo + j];
                let msq = stats::mean(
                    &row.iter()
                        .zip(prev)
                        .map(|(a, b)| (a - b) * (a - b))
                        .collect::<Vec<f64>>(),
                );
                dy_sup = dy_sup.max(msq);
            }
            let mut dz_int = 0.0f64;
            for j in 0..(hi - lo) {
                let row = &sol.z[j];
                let prev = &v[lo + j];
                let msq = stats::mean(
                    &row.iter()
                        .zip(prev)
                        .map(|(a, b)| (a - b) * (a - b))
                        .collect::<Vec<f64>>(),
                );
                dz_int += msq * dt;
            }
            let delta = dy_sup + dz_int;
            trace.push(delta);
            for (j, row) in sol.y.iter().enumerate() {
                u[lo + j] = row.clone();
            }
            for (j, row) in sol.z.iter().enumerate() {
                v[lo + j] = row.clone();
            }
            last = Some(sol);
            if delta <= picard.tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Convergence(format!(
                "Picard loop on [{}, {}] did not reach tol {} in {} iterations; trace: {:?}",
                ensemble.grid().time(lo),
                ensemble.grid().time(hi),
                picard.tol,
                picard.max_iter,
                trace
            )));
        }
        let sol = last.expect("window converged without a solution");
        xi_window = sol.y[0].clone();
        windows.push((lo, hi, sol));
    }

    Ok(stitch_windows(n, windows, solves, trace))
}

/// Assemble windowed solutions (given right-to-left) into a full-grid one.
/// Window compensators start at 0 at their left edge; the global arrays add
/// the accumulated offsets, matching K_t = K^i_t + K_{T_{i-1}}. Shared
/// boundary rows agree by construction (each window's terminal data is the
/// next window's first Y row).
fn stitch_windows(
    n: usize,
    mut windows: Vec<(usize, usize, WindowSolution)>,
    iterations: usize,
    trace: Vec<f64>,
) -> DmrSolution {
    windows.sort_by_key(|(lo, _, _)| *lo);
    let mut y = vec![Vec::new(); n + 1];
    let mut z = vec![Vec::new(); n + 1];
    let mut k = vec![0.0; n + 1];
    let mut k_r = vec![0.0; n + 1];
    let mut k_l = vec![0.0; n + 1];
    let mut mean_y = vec![0.0; n + 1];
    let mut root_upper = vec![0.0; n + 1];
    let mut root_lower = vec![0.0; n + 1];
    let mut flatoff_l = 0.0;
    let mut flatoff_r = 0.0;
    let mut mean_identity_error = 0.0f64;
    let (mut off_k, mut off_r, mut off_l) = (0.0, 0.0, 0.0);
    for (lo, hi, sol) in windows {
        let width = hi - lo;
        for (j, row) in sol.y.into_iter().enumerate() {
            y[lo + j] = row;
        }
        for (j, row) in sol.z.into_iter().enumerate() {
            z[lo + j] = row;
        }
        for j in 0..=width {
            k[lo + j] = sol.bsp.k[j] + off_k;
            k_r[lo + j] = sol.bsp.k_up[j] + off_r;
            k_l[lo + j] = sol.bsp.k_down[j] + off_l;
            mean_y[lo + j] = sol.mean_y[j];
            root_upper[lo + j] = sol.bsp.root_upper[j];
            root_lower[lo + j] = sol.bsp.root_lower[j];
        }
        off_k += sol.bsp.k[width];
        off_r += sol.bsp.k_up[width];
        off_l += sol.bsp.k_down[width];
        flatoff_l += sol.bsp.flatoff_upper;
        flatoff_r += sol.bsp.flatoff_lower;
        mean_identity_error = mean_identity_error.max(sol.mean_identity_error);
    }
    let k_last = k[n];
    let k_tail: Vec<f64> = k.iter().map(|&v| k_last - v).collect();
    DmrSolution {
        y,
        z,
        k,
        k_r,
        k_l,
        k_tail,
        mean_y,
        root_upper,
        root_lower,
        iterations,
        delta_trace: trace,
        flatoff_l,
        flatoff_r,
        mean_identity_error,
    }
}
