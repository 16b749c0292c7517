//! Loss functions acting on the law of the solution, and the deterministic
//! boundaries they induce once averaged over an ensemble slice.
//!
//! A loss is warp(y) - obstacle(t) plus an optional additive path feature
//! kappa·eta_t; averaging it over centered ensemble values x + S_t - E[S_t]
//! yields a deterministic boundary in (t, x) that inherits the per-path slope
//! band, which is what lets the backward Skorokhod machinery act on mean
//! constraints.

use serde::{Deserialize, Serialize};

use crate::boundary::{Band, Boundary, InducedBoundary, InducedData, Warp};
use crate::error::{Error, Result};
use crate::paths::PathEnsemble;
use crate::stats;
use crate::timefn::TimeFn;

/// Per-path process feeding the additive shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFeature {
    Brownian,
    AbsBrownian,
}

impl PathFeature {
    pub fn extract(self, w: f64) -> f64 {
        match self {
            PathFeature::Brownian => w,
            PathFeature::AbsBrownian => w.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shift {
    pub feature: PathFeature,
    pub kappa: f64,
}

/// A loss function from the catalog: warp(y) - obstacle(t) + kappa·eta_t(omega).
#[derive(Debug, Clone)]
pub struct LossFn {
    pub warp: Warp,
    pub obstacle: TimeFn,
    pub shift: Option<Shift>,
}

impl LossFn {
    pub fn affine(obstacle: TimeFn) -> Self {
        LossFn {
            warp: Warp::Identity,
            obstacle,
            shift: None,
        }
    }

    pub fn tanh_warp(alpha: f64, obstacle: TimeFn) -> Self {
        assert!(alpha.abs() < 1.0, "tanh warp needs |alpha| < 1");
        LossFn {
            warp: Warp::Tanh { alpha },
            obstacle,
            shift: None,
        }
    }

    pub fn with_shift(mut self, feature: PathFeature, kappa: f64) -> Self {
        self.shift = Some(Shift { feature, kappa });
        self
    }

    /// Slope band in y, inherited from the warp.
    pub fn band(&self) -> Band {
        self.warp.band()
    }

    /// Evaluate the loss given the path-feature value.
    pub fn eval(&self, feature_value: f64, t: f64, y: f64) -> f64 {
        let shift = match &self.shift {
            Some(s) => s.kappa * feature_value,
            None => 0.0,
        };
        self.warp.apply(y) - self.obstacle.eval(t) + shift
    }

    /// Feature values at grid index k, one per path (empty shift reads as 0).
    fn feature_values(&self, ensemble: &PathEnsemble, k: usize) -> Vec<f64> {
        match &self.shift {
            Some(s) => ensemble.w_at(k).iter().map(|&w| s.feature.extract(w)).collect(),
            None => vec![0.0; ensemble.paths()],
        }
    }

    /// Mean of the loss over the ensemble at grid index k, evaluated at the
    /// per-path values y.
    pub fn mean_at(&self, ensemble: &PathEnsemble, k: usize, y: &[f64]) -> f64 {
        let t = ensemble.grid().time(k);
        let features = self.feature_values(ensemble, k);
        let vals: Vec<f64> = y
            .iter()
            .zip(&features)
            .map(|(&yi, &fi)| self.eval(fi, t, yi))
            .collect();
        stats::mean(&vals)
    }
}

/// The pair (L, R): `upper` is L (mean must satisfy E[L] <= 0), `lower` is R
/// (E[R] >= 0). `gap` is the declared separation inf(R - L).
#[derive(Debug, Clone)]
pub struct LossPair {
    pub upper: LossFn,
    pub lower: LossFn,
    pub gap: f64,
}

impl LossPair {
    pub fn new(upper: LossFn, lower: LossFn, gap: f64) -> Self {
        LossPair { upper, lower, gap }
    }
}

/// Build the deterministic boundary induced by averaging `loss` over the
/// centered ensemble slice: b(t_k, x) = E[loss(t_k, x + S_k - E[S_k])].
///
/// `s` is time-major, one row of per-path values per grid time. Centered rows
/// are cached; identity warps collapse them to their (roundoff-size) mean.
pub fn induced_boundary(
    s: &[Vec<f64>],
    loss: &LossFn,
    ensemble: &PathEnsemble,
) -> Result<Boundary> {
    let n = ensemble.grid().steps();
    if s.len() != n + 1 {
        return Err(Error::Config(format!(
            "induced boundary needs {} time rows, got {}",
            n + 1,
            s.len()
        )));
    }
    induced_boundary_window(s, loss, ensemble, 0)
}

/// Window variant: row j of `s` sits at grid index `lo + j`. Used by the
/// subdivided Picard solver, whose backward problems live on sub-grids.
pub fn induced_boundary_window(
    s: &[Vec<f64>],
    loss: &LossFn,
    ensemble: &PathEnsemble,
    lo: usize,
) -> Result<Boundary> {
    let n = ensemble.grid().steps();
    if lo + s.len() > n + 2 || s.is_empty() {
        return Err(Error::Config(format!(
            "induced boundary window [{lo}, {}) exceeds the grid",
            lo + s.len()
        )));
    }
    let m = ensemble.paths();
    let mut shift_mean = Vec::with_capacity(s.len());
    let mut centered_rows: Vec<Vec<f64>> = Vec::with_capacity(s.len());
    let mut centered_means = Vec::with_capacity(s.len());
    for (j, row) in s.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Config(format!(
                "induced boundary row {j} has {} entries, ensemble has {m} paths",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "induced boundary input contains non-finite values at window row {j}"
            )));
        }
        let row_mean = stats::mean(row);
        let centered: Vec<f64> = row.iter().map(|&v| v - row_mean).collect();
        centered_means.push(stats::mean(&centered));
        sm_push(&mut shift_mean, loss, ensemble, lo + j);
        centered_rows.push(centered);
    }
    let data = if loss.warp.is_identity() {
        InducedData::AffineInY {
            centered_mean: centered_means,
        }
    } else {
        InducedData::General {
            centered: centered_rows,
        }
    };
    Ok(Boundary::Induced(InducedBoundary {
        warp: loss.warp,
        obstacle: loss.obstacle.clone(),
        data,
        shift_mean,
        t0: ensemble.grid().time(lo),
        dt: ensemble.grid().dt(),
        band: loss.band(),
    }))
}

fn sm_push(out: &mut Vec<f64>, loss: &LossFn, ensemble: &PathEnsemble, k: usize) {
    match &loss.shift {
        Some(shift) => {
            let vals: Vec<f64> = ensemble
                .w_at(k)
                .iter()
                .map(|&w| shift.feature.extract(w))
                .collect();
            out.push(shift.kappa * stats::mean(&vals));
        }
        None => out.push(0.0),
    }
}

/// Sampling plan for [`verify_band`].
#[derive(Debug, Clone)]
pub struct BandSampleSpec {
    pub times: Vec<f64>,
    pub x_lo: f64,
    pub x_hi: f64,
    pub points: usize,
    /// Numeric slack on the band inequalities (ensemble means carry O(M)
    /// rounding).
    pub slack: f64,
}

impl BandSampleSpec {
    pub fn over(times: Vec<f64>) -> Self {
        BandSampleSpec {
            times,
            x_lo: -4.0,
            x_hi: 4.0,
            points: 41,
            slack: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandReport {
    /// Smallest observed difference quotient.
    pub worst_lower_slope: f64,
    /// Largest observed difference quotient.
    pub worst_upper_slope: f64,
}

/// Sample (t, x, y) triples and check c(y-x) <= b(t,y) - b(t,x) <= C(y-x).
/// Returns the worst observed slopes; a violation carries the witness triple.
pub fn verify_band(b: &Boundary, spec: &BandSampleSpec) -> Result<BandReport> {
    let band = b.band();
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper = f64::NEG_INFINITY;
    let dx = (spec.x_hi - spec.x_lo) / (spec.points - 1) as f64;
    for &t in &spec.times {
        let mut prev_x = spec.x_lo;
        let mut prev_v = b.eval(t, prev_x);
        for i in 1..spec.points {
            let x = spec.x_lo + i as f64 * dx;
            let v = b.eval(t, x);
            let q = (v - prev_v) / (x - prev_x);
            if q < band.lower - spec.slack || q > band.upper + spec.slack {
                return Err(Error::InvariantViolation(format!(
                    "band [{}, {}] violated at (t={t}, x={prev_x}, y={x}): slope {q}",
                    band.lower, band.upper
                )));
            }
            worst_lower = worst_lower.min(q);
            worst_upper = worst_upper.max(q);
            prev_x = x;
            prev_v = v;
        }
    }
    Ok(BandReport {
        worst_lower_slope: worst_lower,
        worst_upper_slope: worst_upper,
    })
}

/// Minimum sampled separation between the induced lower and upper boundaries
/// of a pair; must stay at or above the declared gap.
pub fn verify_separation(
    upper: &Boundary,
    lower: &Boundary,
    pair_gap: f64,
    spec: &BandSampleSpec,
) -> Result<f64> {
    let mut min_sep = f64::INFINITY;
    let dx = (spec.x_hi - spec.x_lo) / (spec.points - 1) as f64;
    for &t in &spec.times {
        for i in 0..spec.points {
            let x = spec.x_lo + i as f64 * dx;
            let sep = lower.eval(t, x) - upper.eval(t, x);
            min_sep = min_sep.min(sep);
        }
    }
    if min_sep < pair_gap - spec.slack {
        return Err(Error::InvariantViolation(format!(
            "induced separation {min_sep} below declared gap {pair_gap}"
        )));
    }
    Ok(min_sep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condexp::gauss_expectation;
    use crate::paths::{sample_ensemble, TimeGrid};

    fn test_ensemble() -> PathEnsemble {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        sample_ensemble(&grid, 4000, 21, false).unwrap()
    }

    #[test]
    fn identity_loss_is_identity() {
        let loss = LossFn::affine(TimeFn::constant(0.0));
        for y in [-2.0, 0.0, 1.5] {
            assert_eq!(loss.eval(0.0, 0.3, y), y);
        }
    }

    #[test]
    fn tanh_band_is_one_to_one_plus_alpha() {
        let loss = LossFn::tanh_warp(0.5, TimeFn::constant(0.0));
        let band = loss.band();
        assert_eq!(band.lower, 1.0);
        assert_eq!(band.upper, 1.5);
    }

    #[test]
    fn additive_shift_moves_values_by_feature_difference() {
        let loss = LossFn::affine(TimeFn::constant(0.0)).with_shift(PathFeature::Brownian, 1.0);
        let d = 0.73;
        let v1 = loss.eval(0.2, 0.5, 1.0);
        let v2 = loss.eval(0.2 + d, 0.5, 1.0);
        assert!((v2 - v1 - d).abs() < 1e-15);
    }

    #[test]
    fn affine_loss_induces_obstacle_boundary_independent_of_s() {
        let ens = test_ensemble();
        let obstacle = TimeFn::piecewise(vec![(0.0, 0.4), (1.0, -0.6)]);
        let loss = LossFn::affine(obstacle.clone());
        // S = arbitrary per-path junk; centering must cancel it.
        let s: Vec<Vec<f64>> = (0..=10)
            .map(|k| {
                ens.w_at(k)
                    .iter()
                    .map(|&w| w * w + 3.0 * (k as f64))
                    .collect()
            })
            .collect();
        let b = induced_boundary(&s, &loss, &ens).unwrap();
        for k in 0..=10 {
            let t = ens.grid().time(k);
            for x in [-1.0, 0.0, 2.0] {
                let want = x - obstacle.eval(t);
                assert!(
                    (b.eval(t, x) - want).abs() < 1e-13,
                    "induced affine at (t={t}, x={x})"
                );
            }
        }
    }

    #[test]
    fn constant_s_gives_plain_expectation() {
        let ens = test_ensemble();
        let loss = LossFn::tanh_warp(0.4, TimeFn::constant(0.2));
        let s: Vec<Vec<f64>> = (0..=10).map(|_| vec![5.0; ens.paths()]).collect();
        let b = induced_boundary(&s, &loss, &ens).unwrap();
        for (t, x) in [(0.0, 0.3), (0.5, -1.0)] {
            let want = loss.eval(0.0, t, x);
            assert!((b.eval(t, x) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn induced_tanh_matches_quadrature_oracle() {
        // S_t = B_t: the centered slice is approximately N(0, t); compare the
        // ensemble mean against Gauss-Hermite within a CLT band.
        let ens = test_ensemble();
        let loss = LossFn::tanh_warp(0.5, TimeFn::constant(0.0));
        let s: Vec<Vec<f64>> = (0..=10).map(|k| ens.w_at(k).to_vec()).collect();
        let b = induced_boundary(&s, &loss, &ens).unwrap();
        let m = ens.paths() as f64;
        for (k, x) in [(10usize, 0.0), (10, 0.8), (5, -0.5)] {
            let t = ens.grid().time(k);
            let mc = b.eval(t, x);
            // Quadrature against the exact centered law N(0, t) without the
            // sample-mean correction; the difference is an O(1/sqrt(M))
            // effect covered by the tolerance.
            let quad = gauss_expectation(|u| loss.warp.apply(x + t.sqrt() * u))
                - loss.obstacle.eval(t);
            let spread = ens.w_at(k).iter().map(|&w| w * w).sum::<f64>() / m;
            let tol = 5.0 * (1.0 + loss.band().upper) * (spread / m).sqrt().max(1e-3);
            assert!(
                (mc - quad).abs() <= tol,
                "t={t} x={x}: mc {mc} vs quad {quad}, tol {tol}"
            );
        }
    }

    #[test]
    fn verify_band_affine_margins_are_exact() {
        let b = Boundary::affine(TimeFn::constant(0.0));
        let report = verify_band(&b, &BandSampleSpec::over(vec![0.0, 0.5, 1.0])).unwrap();
        assert_eq!(report.worst_lower_slope, 1.0);
        assert_eq!(report.worst_upper_slope, 1.0);
    }

    #[test]
    fn verify_band_tanh_within_declared_band() {
        let b = Boundary::tanh_warp(0.5, TimeFn::constant(0.3));
        let report = verify_band(&b, &BandSampleSpec::over(vec![0.0, 1.0])).unwrap();
        assert!(report.worst_lower_slope >= 1.0 - 1e-12);
        assert!(report.worst_upper_slope <= 1.5 + 1e-12);
        // the warp actually attains slopes near both ends on a wide range
        assert!(report.worst_lower_slope < 1.05);
        assert!(report.worst_upper_slope > 1.4);
    }

    #[test]
    fn band_violation_carries_witness() {
        // A boundary whose declared band lies: the true slope near 0 is 1.9.
        let lying = Boundary::Induced(crate::boundary::InducedBoundary {
            warp: Warp::Tanh { alpha: 0.9 },
            obstacle: TimeFn::constant(0.0),
            data: InducedData::General {
                centered: vec![vec![0.0; 8]; 11],
            },
            shift_mean: vec![0.0; 11],
            t0: 0.0,
            dt: 0.1,
            band: Band::new(1.0, 1.2),
        });
        assert!(matches!(
            verify_band(&lying, &BandSampleSpec::over(vec![0.0])),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn separation_of_parallel_obstacles() {
        // Same warp, obstacles 0.5 apart: separation exactly 0.5.
        let ens = test_ensemble();
        let upper = LossFn::tanh_warp(0.3, TimeFn::constant(0.5));
        let lower = LossFn::tanh_warp(0.3, TimeFn::constant(0.0));
        let s: Vec<Vec<f64>> = (0..=10).map(|k| ens.w_at(k).to_vec()).collect();
        let bu = induced_boundary(&s, &upper, &ens).unwrap();
        let bl = induced_boundary(&s, &lower, &ens).unwrap();
        let sep = verify_separation(&bu, &bl, 0.5, &BandSampleSpec::over(vec![0.0, 0.5, 1.0]))
            .unwrap();
        assert!((sep - 0.5).abs() < 1e-12);
    }
}
