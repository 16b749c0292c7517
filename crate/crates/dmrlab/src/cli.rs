//! Command-line front end: one scenario file drives every subcommand.
//!
//! Exit codes: 0 success, 1 configuration or I/O problems, 2 convergence
//! failure, 3 invariant violations (including failed validation).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::diagnostics::{
    constraint_violation, dynkin_value, flatoff_residual, sandwich_check, stability_check,
    DiagnosticsReport,
};
use crate::dmr::{picard_solve, DmrSolution};
use crate::error::{Error, Result};
use crate::loss::LossPair;
use crate::output::{read_summary, render_csv, write_csv, write_text, RunSummary};
use crate::paths::{sample_ensemble, PathEnsemble};
use crate::penalized::{convergence_sweep, penalized_solve};
use crate::scenario::{resolve, RawConfig, Scenario, SkorokhodDirection};
use crate::skorokhod::{solve_backward_sp, solve_forward_sp};

#[derive(Parser, Debug)]
#[command(
    name = "dmrlab",
    about = "Numerical laboratory for BSDEs with double mean reflections",
    version
)]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Ensemble seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread count; must not change any output byte.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq)]
pub enum Command {
    /// Solve the standalone Skorokhod problem from the [skorokhod] section.
    Skorokhod,
    /// Solve the doubly mean-reflected equation by Picard iteration.
    Solve,
    /// Run the penalized scheme at a single penalty level.
    Penalize,
    /// Sweep the penalty ladder and fit the penetration decay.
    Sweep,
    /// Evaluate the deterministic-time game value against the solved mean.
    Dynkin,
    /// Re-run the solve pipeline and check stored outputs byte for byte.
    Validate,
    /// Solve with both methods on one ensemble and table the discrepancy.
    Compare,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Skorokhod => "skorokhod",
            Command::Solve => "solve",
            Command::Penalize => "penalize",
            Command::Sweep => "sweep",
            Command::Dynkin => "dynkin",
            Command::Validate => "validate",
            Command::Compare => "compare",
        }
    }
}

/// Entry point used by `main`.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return 1;
        }
        Err(e) => {
            // help / version output
            print!("{e}");
            return 0;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut raw: RawConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("scenario parse error: {e}")))?;
    if let Some(seed) = cli.seed {
        raw.ensemble.seed = seed;
    }
    if let Some(out) = &cli.out {
        raw.output.dir = out.display().to_string();
    }
    let scenario = resolve(raw)?;
    let out_dir = PathBuf::from(&scenario.raw.output.dir);

    match cli.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run_command(&scenario, cli.command, &out_dir))
        }
        None => run_command(&scenario, cli.command, &out_dir),
    }
}

/// Dispatch a subcommand against a resolved scenario.
pub fn run_command(sc: &Scenario, command: Command, out: &Path) -> Result<()> {
    match command {
        Command::Skorokhod => cmd_skorokhod(sc, out),
        Command::Solve => cmd_solve(sc, out),
        Command::Penalize => cmd_penalize(sc, out),
        Command::Sweep => cmd_sweep(sc, out),
        Command::Dynkin => cmd_dynkin(sc, out),
        Command::Validate => cmd_validate(sc, out),
        Command::Compare => cmd_compare(sc, out),
    }
}

fn build_ensemble(sc: &Scenario) -> Result<PathEnsemble> {
    sample_ensemble(
        &sc.grid,
        sc.raw.ensemble.paths,
        sc.raw.ensemble.seed,
        sc.raw.ensemble.antithetic,
    )
}

fn wants(sc: &Scenario, format: &str) -> bool {
    sc.raw.output.formats.iter().any(|f| f == format)
}

fn base_summary(sc: &Scenario, command: Command) -> RunSummary {
    RunSummary::new(
        command.name(),
        &sc.config_hash,
        sc.raw.ensemble.seed,
        sc.grid.horizon(),
        sc.grid.steps(),
        sc.raw.ensemble.paths,
    )
}

fn cmd_skorokhod(sc: &Scenario, out: &Path) -> Result<()> {
    let section = sc.raw.skorokhod.as_ref().ok_or_else(|| {
        Error::Config("the skorokhod subcommand needs a [skorokhod] section".into())
    })?;
    let times = sc.grid.times();
    let s: Vec<f64> = times.iter().map(|&t| section.input.eval(t)).collect();
    let upper = Scenario::skorokhod_boundary(&section.upper);
    let lower = Scenario::skorokhod_boundary(&section.lower);
    let n = sc.grid.steps();

    let (x, k, k_up, k_down, phi, psi, flatoff) = match section.direction {
        SkorokhodDirection::Forward => {
            let sol = solve_forward_sp(times, &s, &upper, &lower)?;
            (
                sol.x,
                sol.k,
                sol.k_up,
                sol.k_down,
                sol.phi,
                sol.psi,
                (sol.flatoff_upper, sol.flatoff_lower),
            )
        }
        SkorokhodDirection::Backward => {
            let sol = solve_backward_sp(times, &s, section.anchor, &upper, &lower)?;
            // Offsets relative to the un-compensated backward baseline.
            let phi: Vec<f64> = (0..=n)
                .map(|j| sol.root_upper[j] - (section.anchor + (s[n] - s[j])))
                .collect();
            let psi: Vec<f64> = (0..=n)
                .map(|j| sol.root_lower[j] - (section.anchor + (s[n] - s[j])))
                .collect();
            (
                sol.x,
                sol.k,
                sol.k_up,
                sol.k_down,
                phi,
                psi,
                (sol.flatoff_upper, sol.flatoff_lower),
            )
        }
    };

    if wants(sc, "csv") {
        write_csv(
            &out.join("skorokhod.csv"),
            &["t", "s", "x", "k", "k_up", "k_down", "phi", "psi"],
            &[times, &s, &x, &k, &k_up, &k_down, &phi, &psi],
        )?;
        println!("wrote {}", out.join("skorokhod.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Skorokhod);
        summary.flatoff = Some(flatoff);
        summary.compensator_total_variation =
            Some(k_up[n] + k_down[n] + k[0].abs());
        summary.write(&out.join("summary_skorokhod.json"))?;
        println!("wrote {}", out.join("summary_skorokhod.json").display());
    }
    Ok(())
}

struct SolveProducts {
    ensemble: PathEnsemble,
    losses: LossPair,
    solution: DmrSolution,
}

fn solve_pipeline(sc: &Scenario) -> Result<SolveProducts> {
    let ensemble = build_ensemble(sc)?;
    let losses = sc.loss_pair(sc.grid.times())?;
    let xi = sc.xi.eval_paths(&ensemble);
    let solution = picard_solve(
        &ensemble,
        &sc.driver,
        &xi,
        &losses,
        &sc.picard,
        &sc.regression,
    )?;
    Ok(SolveProducts {
        ensemble,
        losses,
        solution,
    })
}

fn solution_columns(p: &SolveProducts) -> (Vec<f64>, Vec<f64>) {
    let n = p.ensemble.grid().steps();
    let mut el = Vec::with_capacity(n + 1);
    let mut er = Vec::with_capacity(n + 1);
    for k in 0..=n {
        el.push(p.losses.upper.mean_at(&p.ensemble, k, &p.solution.y[k]));
        er.push(p.losses.lower.mean_at(&p.ensemble, k, &p.solution.y[k]));
    }
    (el, er)
}

fn solution_csv(sc: &Scenario, p: &SolveProducts) -> String {
    let times = sc.grid.times();
    let (el, er) = solution_columns(p);
    render_csv(
        &["t", "meanY", "K", "K_R", "K_L", "EL", "ER"],
        &[
            times,
            &p.solution.mean_y,
            &p.solution.k,
            &p.solution.k_r,
            &p.solution.k_l,
            &el,
            &er,
        ],
    )
}

fn solve_diagnostics(p: &SolveProducts) -> DiagnosticsReport {
    let (fr, fl) = flatoff_residual(&p.solution, &p.losses, &p.ensemble);
    DiagnosticsReport {
        flatoff_r: fr,
        flatoff_l: fl,
        violation_sup: constraint_violation(&p.solution, &p.losses, &p.ensemble),
        mean_identity_error: p.solution.mean_identity_error,
        games: None,
        sandwich: None,
        stability_margin: None,
    }
}

fn cmd_solve(sc: &Scenario, out: &Path) -> Result<()> {
    let p = solve_pipeline(sc)?;
    if wants(sc, "csv") {
        write_text(&out.join("solution.csv"), &solution_csv(sc, &p))?;
        println!("wrote {}", out.join("solution.csv").display());
        // Plot data: mean path between its root curves, with compensators.
        write_csv(
            &out.join("plot_mean.csv"),
            &["t", "meanY", "lower_root", "upper_root", "K", "K_R", "K_L"],
            &[
                sc.grid.times(),
                &p.solution.mean_y,
                &p.solution.root_lower,
                &p.solution.root_upper,
                &p.solution.k,
                &p.solution.k_r,
                &p.solution.k_l,
            ],
        )?;
        println!("wrote {}", out.join("plot_mean.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Solve);
        summary.iterations = Some(p.solution.iterations);
        summary.delta_trace = Some(p.solution.delta_trace.clone());
        summary.picard_tol = Some(sc.picard.tol);
        summary.diagnostics = Some(solve_diagnostics(&p));
        summary.compensator_total_variation =
            Some(p.solution.k_r[sc.grid.steps()] + p.solution.k_l[sc.grid.steps()]);
        summary.write(&out.join("summary.json"))?;
        println!("wrote {}", out.join("summary.json").display());
    }
    Ok(())
}

fn cmd_penalize(sc: &Scenario, out: &Path) -> Result<()> {
    let ensemble = build_ensemble(sc)?;
    let obstacles = sc.linear_obstacles()?;
    let xi = sc.xi.eval_paths(&ensemble);
    let n_penalty = sc.penalty_for_single_run();
    let sol = penalized_solve(
        &ensemble,
        &sc.driver,
        &xi,
        &obstacles,
        n_penalty,
        &sc.regression,
    )?;
    let times = sc.grid.times();
    if wants(sc, "csv") {
        let lower: Vec<f64> = times.iter().map(|&t| obstacles.lower.eval(t)).collect();
        let upper: Vec<f64> = times.iter().map(|&t| obstacles.upper.eval(t)).collect();
        write_csv(
            &out.join("penalized.csv"),
            &["t", "meanY", "K_l", "K_r", "lower", "upper"],
            &[times, &sol.mean_y, &sol.k_l, &sol.k_r, &lower, &upper],
        )?;
        println!("wrote {}", out.join("penalized.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Penalize);
        summary.n_penalty = Some(n_penalty);
        summary.penetration = Some(sol.penetration);
        if obstacles.relax_origin {
            summary.relaxed_origin = Some(true);
            summary.notes = Some(vec![
                "obstacles do not start at the origin; results extend beyond the \
                 integral-form hypothesis"
                    .into(),
            ]);
        }
        summary.write(&out.join("summary_penalize.json"))?;
        println!("wrote {}", out.join("summary_penalize.json").display());
    }
    Ok(())
}

fn cmd_sweep(sc: &Scenario, out: &Path) -> Result<()> {
    let ensemble = build_ensemble(sc)?;
    let obstacles = sc.linear_obstacles()?;
    let xi = sc.xi.eval_paths(&ensemble);
    // Reference: the reflected solve with the equivalent affine losses on the
    // same ensemble, so Monte Carlo noise cancels in the comparison.
    let losses = sc.loss_pair(sc.grid.times())?;
    let reference = picard_solve(
        &ensemble,
        &sc.driver,
        &xi,
        &losses,
        &sc.picard,
        &sc.regression,
    )
    .map(|sol| sol.mean_y)
    .ok();
    let sweep = convergence_sweep(
        &ensemble,
        &sc.driver,
        &xi,
        &obstacles,
        &sc.raw.penalization.n_list,
        &sc.regression,
        reference.as_deref(),
    )?;
    if wants(sc, "csv") {
        let n_col: Vec<f64> = sweep.rows.iter().map(|r| r.n_penalty).collect();
        let pen_l: Vec<f64> = sweep.rows.iter().map(|r| r.pen_l).collect();
        let pen_r: Vec<f64> = sweep.rows.iter().map(|r| r.pen_r).collect();
        let dist: Vec<f64> = sweep
            .rows
            .iter()
            .map(|r| r.dist_to_ref.unwrap_or(f64::NAN))
            .collect();
        let sup_y2: Vec<f64> = sweep.rows.iter().map(|r| r.sup_mean_y_sq).collect();
        let int_z2: Vec<f64> = sweep.rows.iter().map(|r| r.int_mean_z_sq).collect();
        write_csv(
            &out.join("sweep.csv"),
            &["n", "pen_l", "pen_r", "dist_to_ref", "supY2", "intZ2"],
            &[&n_col, &pen_l, &pen_r, &dist, &sup_y2, &int_z2],
        )?;
        println!("wrote {}", out.join("sweep.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Sweep);
        summary.slope_pen_r = sweep.slope_pen_r;
        summary.successive_diffs = Some(sweep.successive_diffs.clone());
        if reference.is_none() {
            summary.notes = Some(vec![
                "reference solve unavailable; dist_to_ref omitted".into()
            ]);
        }
        summary.write(&out.join("summary_sweep.json"))?;
        println!("wrote {}", out.join("summary_sweep.json").display());
    }
    Ok(())
}

fn cmd_dynkin(sc: &Scenario, out: &Path) -> Result<()> {
    let p = solve_pipeline(sc)?;
    let xi = sc.xi.eval_paths(&p.ensemble);
    let mut games = Vec::new();
    for t_index in sc.dynkin_indices() {
        games.push(dynkin_value(
            &p.solution,
            &sc.driver,
            &xi,
            &p.losses,
            &p.ensemble,
            t_index,
            &sc.regression,
        )?);
    }
    if wants(sc, "csv") {
        let t: Vec<f64> = games.iter().map(|g| g.t).collect();
        let supinf: Vec<f64> = games.iter().map(|g| g.supinf).collect();
        let infsup: Vec<f64> = games.iter().map(|g| g.infsup).collect();
        let mean_y: Vec<f64> = games.iter().map(|g| g.mean_y).collect();
        let tol: Vec<f64> = games.iter().map(|g| g.tol_game).collect();
        let ordering: Vec<f64> = games.iter().map(|g| g.ordering_excess).collect();
        write_csv(
            &out.join("dynkin.csv"),
            &["t", "supinf", "infsup", "meanY", "tol_game", "ordering_excess"],
            &[&t, &supinf, &infsup, &mean_y, &tol, &ordering],
        )?;
        println!("wrote {}", out.join("dynkin.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Dynkin);
        let mut diagnostics = solve_diagnostics(&p);
        diagnostics.games = Some(games);
        summary.diagnostics = Some(diagnostics);
        summary.write(&out.join("summary_dynkin.json"))?;
        println!("wrote {}", out.join("summary_dynkin.json").display());
    }
    Ok(())
}

fn cmd_validate(sc: &Scenario, out: &Path) -> Result<()> {
    // Stored artifacts.
    let stored_summary = read_summary(&out.join("summary.json"))?;
    let stored_csv = std::fs::read_to_string(out.join("solution.csv"))
        .map_err(|e| Error::Config(format!("cannot read stored solution.csv: {e}")))?;

    if stored_summary.config_hash != sc.config_hash {
        return Err(Error::InvariantViolation(format!(
            "config hash mismatch: stored {} vs scenario {}",
            stored_summary.config_hash, sc.config_hash
        )));
    }
    println!("validate: config hash matches");

    // Recompute and compare byte for byte.
    let p = solve_pipeline(sc)?;
    let fresh_csv = solution_csv(sc, &p);
    if fresh_csv != stored_csv {
        let mismatch = fresh_csv
            .lines()
            .zip(stored_csv.lines())
            .position(|(a, b)| a != b)
            .map(|i| i + 1)
            .unwrap_or(0);
        return Err(Error::InvariantViolation(format!(
            "stored solution.csv deviates from recomputation (first mismatch at line {mismatch})"
        )));
    }
    println!("validate: solution.csv reproduced byte-identically");

    // Structural invariants of the stored arrays.
    let n = sc.grid.steps();
    for k in 0..n {
        if p.solution.k_r[k + 1] < p.solution.k_r[k] || p.solution.k_l[k + 1] < p.solution.k_l[k] {
            return Err(Error::InvariantViolation(format!(
                "compensator parts not monotone at step {k}"
            )));
        }
    }
    let diag = solve_diagnostics(&p);
    let tv = p.solution.k_r[n] + p.solution.k_l[n];
    let eps_flat = 10.0 * 1e-8 * tv.max(1.0);
    if diag.flatoff_r > eps_flat || diag.flatoff_l > eps_flat {
        return Err(Error::InvariantViolation(format!(
            "flat-off residuals ({}, {}) above {eps_flat}",
            diag.flatoff_r, diag.flatoff_l
        )));
    }
    println!("validate: flat-off residuals within tolerance");
    let band = p.losses.upper.band().join(p.losses.lower.band());
    let se = 3.0 / (p.ensemble.paths() as f64).sqrt();
    let tol = 1e-8 * (1.0 + band.upper / band.lower) + se * band.upper;
    if diag.violation_sup > tol {
        return Err(Error::InvariantViolation(format!(
            "constraint violation {} above tolerance {tol}",
            diag.violation_sup
        )));
    }
    println!("validate: constraints hold within tolerance");
    println!("validate: PASS");
    Ok(())
}

fn cmd_compare(sc: &Scenario, out: &Path) -> Result<()> {
    let ensemble = build_ensemble(sc)?;
    let losses = sc.loss_pair(sc.grid.times())?;
    let obstacles = sc.linear_obstacles()?;
    let xi = sc.xi.eval_paths(&ensemble);
    let reflected = picard_solve(
        &ensemble,
        &sc.driver,
        &xi,
        &losses,
        &sc.picard,
        &sc.regression,
    )?;
    let mut discrepancies = Vec::new();
    for &np in &sc.raw.penalization.n_list {
        let pen = penalized_solve(
            &ensemble,
            &sc.driver,
            &xi,
            &obstacles,
            np,
            &sc.regression,
        )?;
        let sup = pen
            .mean_y
            .iter()
            .zip(&reflected.mean_y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        discrepancies.push((np, sup));
    }
    if wants(sc, "csv") {
        let n_col: Vec<f64> = discrepancies.iter().map(|d| d.0).collect();
        let sup: Vec<f64> = discrepancies.iter().map(|d| d.1).collect();
        write_csv(
            &out.join("compare.csv"),
            &["n", "sup_mean_diff"],
            &[&n_col, &sup],
        )?;
        println!("wrote {}", out.join("compare.csv").display());
    }
    if wants(sc, "json") {
        let mut summary = base_summary(sc, Command::Compare);
        summary.discrepancies = Some(discrepancies);
        summary.iterations = Some(reflected.iterations);
        summary.write(&out.join("summary_compare.json"))?;
        println!("wrote {}", out.join("summary_compare.json").display());
    }
    Ok(())
}

/// Standalone stability run, reusable by callers that want the report only.
pub fn run_stability(sc: &Scenario) -> Result<crate::diagnostics::StabilityReport> {
    stability_check(&sc.stability)
}

/// Sandwich run for scenarios with an admissible driver form.
pub fn run_sandwich(
    sc: &Scenario,
) -> Result<(crate::diagnostics::SandwichOutcome, DmrSolution)> {
    let ensemble = build_ensemble(sc)?;
    let losses = sc.loss_pair(sc.grid.times())?;
    let xi = sc.xi.eval_paths(&ensemble);
    sandwich_check(
        &ensemble,
        &sc.driver,
        &xi,
        &losses,
        &sc.picard,
        &sc.regression,
    )
}
