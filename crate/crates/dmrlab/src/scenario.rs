//! Scenario files: one TOML document drives every subcommand.
//!
//! Parsing is strict (unknown keys are rejected) and validation reports every
//! violation at once, not just the first. The resolved configuration is
//! hashed into all outputs so result files can be matched to the scenario
//! that produced them.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{Boundary, Warp};
use crate::condexp::RegressionSpec;
use crate::diagnostics::StabilityConfig;
use crate::dmr::PicardConfig;
use crate::driver::Driver;
use crate::error::{Error, Result};
use crate::loss::{LossFn, LossPair, Shift};
use crate::paths::TimeGrid;
use crate::penalized::LinearObstacles;
use crate::terminal::TerminalSpec;
use crate::timefn::TimeFn;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGrid {
    pub horizon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawEnsemble {
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawDriver {
    Zero,
    Affine {
        a: TimeFn,
        b: TimeFn,
        c: TimeFn,
        lambda: f64,
    },
    SinCos {
        ly: f64,
        lz: f64,
        c: TimeFn,
        lambda: f64,
    },
}

impl Default for RawDriver {
    fn default() -> Self {
        RawDriver::Zero
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawLoss {
    Affine {
        obstacle: TimeFn,
        #[serde(skip_serializing_if = "Option::is_none")]
        shift: Option<Shift>,
    },
    TanhWarp {
        alpha: f64,
        obstacle: TimeFn,
        #[serde(skip_serializing_if = "Option::is_none")]
        shift: Option<Shift>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObstacles {
    pub lower: TimeFn,
    pub upper: TimeFn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Nonlinear,
    Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawLosses {
    pub mode: LossMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<RawLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<RawLoss>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<RawObstacles>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRegression {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_degree() -> usize {
    4
}
fn default_ridge() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}

impl Default for RawRegression {
    fn default() -> Self {
        RawRegression {
            degree: 4,
            ridge: 1e-10,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPicard {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_picard_tol")]
    pub tol: f64,
    #[serde(default = "default_one")]
    pub subintervals: usize,
}

fn default_max_iter() -> usize {
    30
}
fn default_picard_tol() -> f64 {
    1e-8
}
fn default_one() -> usize {
    1
}

impl Default for RawPicard {
    fn default() -> Self {
        RawPicard {
            max_iter: 30,
            tol: 1e-8,
            subintervals: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPenalization {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<f64>,
    /// Penalty used by the single-run `penalize` subcommand; defaults to the
    /// last ladder entry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<f64>,
    #[serde(default)]
    pub relax_origin: bool,
}

fn default_n_list() -> Vec<f64> {
    vec![4.0, 16.0, 64.0, 256.0]
}

impl Default for RawPenalization {
    fn default() -> Self {
        RawPenalization {
            n_list: default_n_list(),
            n: None,
            relax_origin: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for RawOutput {
    fn default() -> Self {
        RawOutput {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkorokhodDirection {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSkorokhod {
    pub direction: SkorokhodDirection,
    pub input: TimeFn,
    pub upper: RawLoss,
    pub lower: RawLoss,
    #[serde(default)]
    pub anchor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDynkin {
    /// Evaluation times; snapped to grid indices.
    pub times: Vec<f64>,
}

impl Default for RawDynkin {
    fn default() -> Self {
        RawDynkin {
            times: vec![0.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawStability {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_stab_steps")]
    pub steps: usize,
    #[serde(default = "default_stab_seed")]
    pub seed: u64,
    #[serde(default = "default_da")]
    pub da_max: f64,
    #[serde(default = "default_ds")]
    pub ds_max: f64,
    #[serde(default = "default_db")]
    pub db_max: f64,
}

fn default_trials() -> usize {
    200
}
fn default_stab_steps() -> usize {
    64
}
fn default_stab_seed() -> u64 {
    2024
}
fn default_da() -> f64 {
    0.1
}
fn default_ds() -> f64 {
    0.15
}
fn default_db() -> f64 {
    0.1
}

impl Default for RawStability {
    fn default() -> Self {
        RawStability {
            trials: 200,
            steps: 64,
            seed: 2024,
            da_max: 0.1,
            ds_max: 0.15,
            db_max: 0.1,
        }
    }
}

/// The full scenario document as written by the user, with defaults applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub grid: RawGrid,
    pub ensemble: RawEnsemble,
    pub xi: TerminalSpec,
    #[serde(default)]
    pub driver: RawDriver,
    pub losses: RawLosses,
    #[serde(default)]
    pub regression: RawRegression,
    #[serde(default)]
    pub picard: RawPicard,
    #[serde(default)]
    pub penalization: RawPenalization,
    #[serde(default)]
    pub output: RawOutput,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skorokhod: Option<RawSkorokhod>,
    #[serde(default)]
    pub dynkin: RawDynkin,
    #[serde(default)]
    pub stability: RawStability,
}

/// Validated, domain-typed scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub raw: RawConfig,
    pub grid: TimeGrid,
    pub xi: TerminalSpec,
    pub driver: Driver,
    pub losses: Losses,
    pub regression: RegressionSpec,
    pub picard: PicardConfig,
    pub stability: StabilityConfig,
    pub config_hash: String,
}

#[derive(Debug, Clone)]
pub enum Losses {
    Nonlinear(LossPair),
    Linear(LinearObstacles),
}

impl Scenario {
    /// Loss pair for the reflected solver. Linear obstacles convert to affine
    /// losses (L = y - upper, R = y - lower).
    pub fn loss_pair(&self, times: &[f64]) -> Result<LossPair> {
        match &self.losses {
            Losses::Nonlinear(pair) => Ok(pair.clone()),
            Losses::Linear(obs) => {
                let gap = times
                    .iter()
                    .map(|&t| obs.upper.eval(t) - obs.lower.eval(t))
                    .fold(f64::INFINITY, f64::min);
                Ok(LossPair::new(
                    LossFn::affine(obs.upper.clone()),
                    LossFn::affine(obs.lower.clone()),
                    gap.max(0.0),
                ))
            }
        }
    }

    /// Linear obstacles for the penalized solver. Nonlinear losses must be
    /// affine without shifts; the L obstacle becomes the upper bound on the
    /// mean, the R obstacle the lower one.
    pub fn linear_obstacles(&self) -> Result<LinearObstacles> {
        match &self.losses {
            Losses::Linear(obs) => Ok(obs.clone()),
            Losses::Nonlinear(pair) => {
                let ok = |l: &LossFn| l.warp == Warp::Identity && l.shift.is_none();
                if !(ok(&pair.upper) && ok(&pair.lower)) {
                    return Err(Error::Config(
                        "penalization needs linear obstacles: nonlinear losses must be \
                         affine without shifts to convert"
                            .into(),
                    ));
                }
                Ok(LinearObstacles {
                    lower: pair.lower.obstacle.clone(),
                    upper: pair.upper.obstacle.clone(),
                    relax_origin: self.raw.penalization.relax_origin,
                })
            }
        }
    }

    pub fn penalty_for_single_run(&self) -> f64 {
        self.raw
            .penalization
            .n
            .unwrap_or_else(|| *self.raw.penalization.n_list.last().unwrap_or(&256.0))
    }

    /// Grid indices for the configured game times.
    pub fn dynkin_indices(&self) -> Vec<usize> {
        self.raw
            .dynkin
            .times
            .iter()
            .map(|&t| self.grid.index_of(t))
            .collect()
    }

    /// Analytic boundary for a standalone Skorokhod run.
    pub fn skorokhod_boundary(raw: &RawLoss) -> Boundary {
        match raw {
            RawLoss::Affine { obstacle, .. } => Boundary::affine(obstacle.clone()),
            RawLoss::TanhWarp { alpha, obstacle, .. } => {
                Boundary::tanh_warp(*alpha, obstacle.clone())
            }
        }
    }
}

fn build_loss(raw: &RawLoss, problems: &mut Vec<String>, side: &str) -> LossFn {
    match raw {
        RawLoss::Affine { obstacle, shift } => {
            problems.extend(
                obstacle
                    .validate()
                    .into_iter()
                    .map(|p| format!("losses.{side}.obstacle: {p}")),
            );
            let mut loss = LossFn::affine(obstacle.clone());
            loss.shift = *shift;
            loss
        }
        RawLoss::TanhWarp {
            alpha,
            obstacle,
            shift,
        } => {
            if alpha.abs() >= 1.0 {
                problems.push(format!(
                    "losses.{side}: tanh_warp needs |alpha| < 1, got {alpha}"
                ));
            }
            problems.extend(
                obstacle
                    .validate()
                    .into_iter()
                    .map(|p| format!("losses.{side}.obstacle: {p}")),
            );
            let clamped = alpha.clamp(-0.99, 0.99);
            let mut loss = LossFn::tanh_warp(clamped, obstacle.clone());
            loss.shift = *shift;
            loss
        }
    }
}

/// Parse and validate a scenario file. All violations are reported together.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario parse error: {e}")))?;
    resolve(raw)
}

/// Apply overrides, validate, and build domain objects.
pub fn resolve(mut raw: RawConfig) -> Result<Scenario> {
    let mut problems: Vec<String> = Vec::new();

    let grid = match TimeGrid::new(raw.grid.horizon, raw.grid.steps) {
        Ok(g) => Some(g),
        Err(e) => {
            problems.push(format!("grid: {e}"));
            None
        }
    };

    if raw.ensemble.paths < 2 {
        problems.push(format!(
            "ensemble: needs at least 2 paths, got {}",
            raw.ensemble.paths
        ));
    }
    if raw.ensemble.antithetic && raw.ensemble.paths % 2 != 0 {
        problems.push(format!(
            "ensemble: antithetic pairing needs an even path count, got {}",
            raw.ensemble.paths
        ));
    }

    problems.extend(raw.xi.validate().into_iter().map(|p| format!("xi: {p}")));

    let driver = match &raw.driver {
        RawDriver::Zero => Driver::Zero,
        RawDriver::Affine { a, b, c, lambda } => Driver::Affine {
            a: a.clone(),
            b: b.clone(),
            c: c.clone(),
            lambda: *lambda,
        },
        RawDriver::SinCos { ly, lz, c, lambda } => Driver::SinCos {
            ly: *ly,
            lz: *lz,
            c: c.clone(),
            lambda: *lambda,
        },
    };
    if let Some(g) = &grid {
        problems.extend(
            driver
                .validate(g.times())
                .into_iter()
                .map(|p| format!("driver: {p}")),
        );
    }

    let losses = match raw.losses.mode {
        LossMode::Nonlinear => {
            let mut pair = None;
            match (&raw.losses.upper, &raw.losses.lower) {
                (Some(u), Some(l)) => {
                    let upper = build_loss(u, &mut problems, "upper");
                    let lower = build_loss(l, &mut problems, "lower");
                    let gap = raw.losses.gap.unwrap_or(0.0);
                    if !(gap > 0.0) {
                        problems.push(
                            "losses: nonlinear mode needs a declared separation gap > 0".into(),
                        );
                    }
                    if let Some(g) = &grid {
                        // Sampled separation must not contradict the declared
                        // gap (exact for matching warps, spot check otherwise).
                        let min_sep = g
                            .times()
                            .iter()
                            .flat_map(|&t| {
                                [-2.0, 0.0, 2.0].into_iter().map(move |x| (t, x))
                            })
                            .map(|(t, x)| lower.eval(0.0, t, x) - upper.eval(0.0, t, x))
                            .fold(f64::INFINITY, f64::min);
                        if min_sep < gap - 1e-9 {
                            problems.push(format!(
                                "losses: sampled separation {min_sep} below declared gap {gap}"
                            ));
                        }
                    }
                    pair = Some(LossPair::new(upper, lower, gap));
                }
                _ => problems.push(
                    "losses: nonlinear mode needs both [losses.upper] and [losses.lower]".into(),
                ),
            }
            if raw.losses.obstacles.is_some() {
                problems.push("losses: [losses.obstacles] is for linear mode only".into());
            }
            pair.map(Losses::Nonlinear)
        }
        LossMode::Linear => {
            let mut obs = None;
            match &raw.losses.obstacles {
                Some(o) => {
                    let obstacles = LinearObstacles {
                        lower: o.lower.clone(),
                        upper: o.upper.clone(),
                        relax_origin: raw.penalization.relax_origin,
                    };
                    if let Some(g) = &grid {
                        problems.extend(
                            obstacles
                                .validate(g.times())
                                .into_iter()
                                .map(|p| format!("losses.obstacles: {p}")),
                        );
                    }
                    obs = Some(obstacles);
                }
                None => {
                    problems.push("losses: linear mode needs [losses.obstacles]".into());
                }
            }
            if raw.losses.upper.is_some() || raw.losses.lower.is_some() {
                problems.push("losses: upper/lower loss entries are for nonlinear mode".into());
            }
            obs.map(Losses::Linear)
        }
    };

    if raw.regression.degree > 16 {
        problems.push(format!(
            "regression: degree {} is beyond the supported range (max 16)",
            raw.regression.degree
        ));
    }
    if raw.regression.ridge < 0.0 {
        problems.push("regression: ridge must be nonnegative".into());
    }
    if raw.picard.max_iter == 0 {
        problems.push("picard: max_iter must be at least 1".into());
    }
    if !(raw.picard.tol > 0.0) {
        problems.push("picard: tol must be positive".into());
    }
    if raw.picard.subintervals == 0 {
        problems.push("picard: subintervals must be at least 1".into());
    } else if raw.grid.steps % raw.picard.subintervals.max(1) != 0 {
        problems.push(format!(
            "picard: subintervals {} must divide steps {}",
            raw.picard.subintervals, raw.grid.steps
        ));
    }
    if raw.penalization.n_list.is_empty() {
        problems.push("penalization: n_list must not be empty".into());
    }
    if raw.penalization.n_list.windows(2).any(|w| w[1] <= w[0]) {
        problems.push("penalization: n_list must be strictly increasing".into());
    }
    for f in &raw.output.formats {
        if f != "csv" && f != "json" {
            problems.push(format!(
                "output: unknown format {f:?} (available: csv, json)"
            ));
        }
    }
    if let Some(sk) = &raw.skorokhod {
        problems.extend(
            sk.input
                .validate()
                .into_iter()
                .map(|p| format!("skorokhod.input: {p}")),
        );
        let mut side_problems = Vec::new();
        build_loss(&sk.upper, &mut side_problems, "skorokhod.upper");
        build_loss(&sk.lower, &mut side_problems, "skorokhod.lower");
        problems.extend(side_problems);
    }
    if let Some(g) = &grid {
        for &t in &raw.dynkin.times {
            if !(0.0..=g.horizon()).contains(&t) {
                problems.push(format!("dynkin: time {t} outside [0, {}]", g.horizon()));
            }
        }
    }
    if raw.stability.trials == 0 {
        problems.push("stability: trials must be at least 1".into());
    }

    if !problems.is_empty() {
        return Err(Error::Scenario(problems));
    }
    let grid = grid.expect("grid validated");
    let losses = losses.expect("losses validated");

    // Canonical hash over the resolved configuration.
    raw.output.dir = raw.output.dir.clone();
    let canonical =
        serde_json::to_string(&raw).map_err(|e| Error::Config(format!("hashing failed: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    let config_hash = hex_string(&hasher.finalize());

    Ok(Scenario {
        xi: raw.xi.clone(),
        driver,
        losses,
        regression: RegressionSpec {
            degree: raw.regression.degree,
            ridge: raw.regression.ridge,
            standardize: raw.regression.standardize,
        },
        picard: PicardConfig {
            max_iter: raw.picard.max_iter,
            tol: raw.picard.tol,
            subintervals: raw.picard.subintervals,
        },
        stability: StabilityConfig {
            trials: raw.stability.trials,
            steps: raw.stability.steps,
            seed: raw.stability.seed,
            da_max: raw.stability.da_max,
            ds_max: raw.stability.ds_max,
            db_max: raw.stability.db_max,
        },
        grid,
        raw,
        config_hash,
    })
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
horizon = 1.0
steps = 20

[ensemble]
paths = 100
seed = 7

[xi]
kind = "affine"
intercept = 0.0
slope = 1.0

[losses]
mode = "nonlinear"
gap = 1.0

[losses.upper]
kind = "affine"
[losses.upper.obstacle]
kind = "const"
value = 2.0

[losses.lower]
kind = "affine"
[losses.lower.obstacle]
kind = "const"
value = -2.0
"#;

    #[test]
    fn minimal_scenario_fills_defaults() {
        let sc = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(sc.regression.degree, 4);
        assert_eq!(sc.picard.max_iter, 30);
        assert_eq!(sc.raw.penalization.n_list, vec![4.0, 16.0, 64.0, 256.0]);
        assert_eq!(sc.raw.output.dir, "out");
        assert!(matches!(sc.driver, Driver::Zero));
        assert_eq!(sc.config_hash.len(), 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{MINIMAL}\nnonsense = 3\n");
        let err = parse_scenario_str(&bad).unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn all_violations_reported_together() {
        let bad = r#"
[grid]
horizon = -1.0
steps = 1

[ensemble]
paths = 1
seed = 7

[xi]
kind = "affine"
intercept = 0.0
slope = 1.0

[losses]
mode = "nonlinear"
"#;
        match parse_scenario_str(bad) {
            Err(Error::Scenario(problems)) => {
                assert!(problems.len() >= 3, "problems: {problems:?}");
                assert!(problems.iter().any(|p| p.starts_with("grid:")));
                assert!(problems.iter().any(|p| p.starts_with("ensemble:")));
                assert!(problems.iter().any(|p| p.starts_with("losses:")));
            }
            other => panic!("expected scenario error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_loss_kind_lists_catalog() {
        let bad = MINIMAL.replace("kind = \"affine\"\n[losses.upper.obstacle]",
            "kind = \"cubic\"\n[losses.upper.obstacle]");
        let err = parse_scenario_str(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("affine") && msg.contains("tanh_warp"),
            "error should name available kinds: {msg}"
        );
    }

    #[test]
    fn linear_mode_round_trip() {
        let text = r#"
[grid]
horizon = 1.0
steps = 10

[ensemble]
paths = 50
seed = 3

[xi]
kind = "affine"
intercept = 0.0
slope = 1.0

[losses]
mode = "linear"

[losses.obstacles.lower]
kind = "piecewise_linear"
points = [[0.0, 0.0], [1.0, -4.0]]

[losses.obstacles.upper]
kind = "piecewise_linear"
points = [[0.0, 0.0], [0.5, -0.6], [1.0, 0.1]]
"#;
        let sc = parse_scenario_str(text).unwrap();
        let obs = sc.linear_obstacles().unwrap();
        assert_eq!(obs.lower.eval(1.0), -4.0);
        // And the derived loss pair for cross-method runs:
        let pair = sc.loss_pair(sc.grid.times()).unwrap();
        assert_eq!(pair.upper.obstacle.eval(0.25), -0.3);
    }

    #[test]
    fn hashes_differ_across_seeds() {
        let a = parse_scenario_str(MINIMAL).unwrap();
        let b_text = MINIMAL.replace("seed = 7", "seed = 8");
        let b = parse_scenario_str(&b_text).unwrap();
        assert_ne!(a.config_hash, b.config_hash);
    }
}
