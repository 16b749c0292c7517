//! Time grids and seeded Brownian path ensembles.
//!
//! The ensemble is the probability substrate for every solver: a fixed set of
//! `M` Brownian paths on a uniform grid. Paths are generated from one ChaCha
//! stream per path (or per antithetic pair), so path `m`, step `k` is
//! reproducible no matter in which order — or on how many threads — the paths
//! are filled in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Uniform grid t_k = k·T/N on [0, T].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    times: Vec<f64>,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!(
                "grid horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps < 2 {
            return Err(Error::Config(format!(
                "grid needs at least 2 steps, got {steps}"
            )));
        }
        let dt = horizon / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        // Pin the endpoint so times[N] == T exactly.
        times[steps] = horizon;
        Ok(TimeGrid {
            horizon,
            steps,
            times,
            dt,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Nearest grid index for a grid-aligned time.
    pub fn index_of(&self, t: f64) -> usize {
        let k = (t / self.dt).round() as isize;
        k.clamp(0, self.steps as isize) as usize
    }
}

/// `M` Brownian paths on a grid, stored time-major: `w[k][m]` is path `m`
/// at time `t_k`. Increments satisfy `w[k+1][m] - w[k][m] == dw[k][m]`
/// exactly, since `w` is built by summing `dw`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    grid: TimeGrid,
    paths: usize,
    w: Vec<Vec<f64>>,
    dw: Vec<Vec<f64>>,
    seed: u64,
    antithetic: bool,
}

impl PathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn antithetic(&self) -> bool {
        self.antithetic
    }

    /// Brownian values at time index `k`, one entry per path.
    pub fn w_at(&self, k: usize) -> &[f64] {
        &self.w[k]
    }

    /// Increments over (t_k, t_{k+1}], one entry per path.
    pub fn dw_at(&self, k: usize) -> &[f64] {
        &self.dw[k]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.w[self.grid.steps()]
    }
}

/// Draw a seeded ensemble. Calls with equal `(grid, paths, seed, antithetic)`
/// produce bit-identical arrays.
pub fn sample_ensemble(
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathEnsemble> {
    if paths < 2 {
        return Err(Error::Config(format!(
            "ensemble needs at least 2 paths, got {paths}"
        )));
    }
    if antithetic && paths % 2 != 0 {
        return Err(Error::Config(format!(
            "antithetic pairing needs an even path count, got {paths}"
        )));
    }
    let n = grid.steps();
    let sqrt_dt = grid.dt().sqrt();

    // One RNG stream per independent path.
    let independent = if antithetic { paths / 2 } else { paths };
    let draws: Vec<Vec<f64>> = (0..independent)
        .into_par_iter()
        .map(|stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * sqrt_dt
                })
                .collect()
        })
        .collect();

    let mut dw = vec![vec![0.0; paths]; n];
    for (stream, path_draws) in draws.iter().enumerate() {
        for (k, &d) in path_draws.iter().enumerate() {
            if antithetic {
                dw[k][2 * stream] = d;
                dw[k][2 * stream + 1] = -d;
            } else {
                dw[k][stream] = d;
            }
        }
    }

    let mut w = vec![vec![0.0; paths]; n + 1];
    for k in 0..n {
        for m in 0..paths {
            w[k + 1][m] = w[k][m] + dw[k][m];
        }
    }
    // Store the increments as realized differences of w so that
    // w[k+1] - w[k] == dw[k] holds exactly, not just up to rounding.
    for k in 0..n {
        for m in 0..paths {
            dw[k][m] = w[k + 1][m] - w[k][m];
        }
    }

    Ok(PathEnsemble {
        grid: grid.clone(),
        paths,
        w,
        dw,
        seed,
        antithetic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn grid_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::new(2.0, 2).unwrap();
        assert_eq!(g.dt(), 1.0);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
    }

    #[test]
    fn ensemble_is_deterministic_bitwise() {
        let g = TimeGrid::new(1.0, 16).unwrap();
        let a = sample_ensemble(&g, 64, 99, false).unwrap();
        let b = sample_ensemble(&g, 64, 99, false).unwrap();
        for k in 0..=16 {
            for m in 0..64 {
                assert_eq!(a.w_at(k)[m].to_bits(), b.w_at(k)[m].to_bits());
            }
        }
        let c = sample_ensemble(&g, 64, 100, false).unwrap();
        assert!(a.w_at(16).iter().zip(c.w_at(16)).any(|(x, y)| x != y));
    }

    #[test]
    fn increments_telescope_exactly() {
        let g = TimeGrid::new(2.0, 32).unwrap();
        let ens = sample_ensemble(&g, 50, 7, false).unwrap();
        for m in 0..50 {
            for k in 0..32 {
                assert_eq!(
                    ens.w_at(k + 1)[m] - ens.w_at(k)[m],
                    ens.dw_at(k)[m],
                    "drift at path {m} step {k}"
                );
            }
        }
        assert!(ens.w_at(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn terminal_mean_within_gaussian_tail_bound() {
        // |mean W_T| <= 5 sqrt(T/M) fails with probability ~ 6e-7.
        let g = TimeGrid::new(1.0, 200).unwrap();
        let ens = sample_ensemble(&g, 20_000, 7, false).unwrap();
        let m = stats::mean(ens.terminal());
        assert!(
            m.abs() <= 5.0 * (1.0 / 20_000.0f64).sqrt(),
            "terminal mean {m} outside tail bound"
        );
    }

    #[test]
    fn increment_variance_within_chi_square_band() {
        let g = TimeGrid::new(1.0, 200).unwrap();
        let ens = sample_ensemble(&g, 20_000, 7, false).unwrap();
        let dt = g.dt();
        let band = 5.0 * (2.0 / 20_000.0f64).sqrt();
        for k in [0, 57, 199] {
            let v = stats::variance(ens.dw_at(k));
            assert!(
                v >= dt * (1.0 - band) && v <= dt * (1.0 + band),
                "column {k} variance {v} outside [{}, {}]",
                dt * (1.0 - band),
                dt * (1.0 + band)
            );
        }
    }

    #[test]
    fn antithetic_pairs_mirror_exactly() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let ens = sample_ensemble(&g, 40, 3, true).unwrap();
        for k in 0..=8 {
            for j in 0..20 {
                assert_eq!(ens.w_at(k)[2 * j], -ens.w_at(k)[2 * j + 1]);
            }
        }
        assert!(sample_ensemble(&g, 41, 3, true).is_err());
    }

    #[test]
    fn path_count_precondition() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(sample_ensemble(&g, 1, 0, false).is_err());
    }
}
