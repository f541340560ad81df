use serde::Serialize;
use turnpike_core::{
    check_a0, check_a1, check_a2, check_complementary, fit_envelope, scan_scalar_feedback,
    solve_evolutionary, solve_kkt_oracle, solve_stationary, stationary_coercivity, sweep_horizons,
    turnpike::envelope, turnpike_distances, verify_average_decay, CheckReport, DecayCheck,
    Ensemble, Error as CoreError, EvolutionaryProblem, EvolutionarySolution, Method, Scheme,
    StationarySolution, TimeGrid,
};

use crate::config::{CheckConfig, ExperimentConfig, VectorField};
use crate::error::CliError;
use crate::output::{indexed, nums, Cell, Csv, OutputDir};
use crate::plot::{gnuplot_script, Chart, Series};

/// Coercivity constants at or below this count as failed.
const COERCIVITY_FLOOR: f64 = 1e-10;

#[derive(Serialize)]
struct Metadata {
    command: &'static str,
    seed: Option<u64>,
    sample_count: usize,
    n: usize,
    m: usize,
    p: usize,
}

impl Metadata {
    fn new(command: &'static str, cfg: &ExperimentConfig, ens: &Ensemble) -> Self {
        Self {
            command,
            seed: cfg.seed(),
            sample_count: ens.len(),
            n: ens.n(),
            m: ens.m(),
            p: ens.p(),
        }
    }
}

#[derive(Serialize)]
struct Summary {
    metadata: Metadata,
    #[serde(rename = "T")]
    horizon: f64,
    n_steps: usize,
    scheme: Scheme,
    method: Method,
    cost: f64,
    grad_norm: f64,
    initial_grad_norm: f64,
    iterations: usize,
    converged: bool,
    cost_history: Vec<f64>,
}

struct Setup {
    ens: Ensemble,
    z: Vec<f64>,
    out: OutputDir,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let ens = cfg.build_ensemble()?;
    let z = cfg.target(&ens)?;
    cfg.check_samples(&ens)?;
    let dir = cfg
        .output
        .dir
        .clone()
        .unwrap_or_else(|| "turnpike-out".into());
    let out = OutputDir::create(dir)?;
    Ok(Setup { ens, z, out })
}

fn needs_stationary(cfg: &ExperimentConfig) -> bool {
    cfg.problem.x0 == VectorField::Stationary || cfg.problem.phi_terminal == VectorField::Stationary
}

fn build_problem(
    cfg: &ExperimentConfig,
    s: &Setup,
    stat: Option<&StationarySolution>,
) -> Result<EvolutionaryProblem, CliError> {
    let grid = TimeGrid::new(cfg.problem.horizon, cfg.problem.n_steps)?;
    let x0 = cfg.vectors(&cfg.problem.x0, "problem.x0", &s.ens, stat.map(|st| st.x.as_slice()))?;
    let phi = cfg.vectors(
        &cfg.problem.phi_terminal,
        "problem.phi_T",
        &s.ens,
        stat.map(|st| st.phi.as_slice()),
    )?;
    Ok(EvolutionaryProblem::new(s.ens.clone(), grid, x0, s.z.clone(), phi)?
        .with_scheme(cfg.problem.scheme))
}

/// Solves and returns the best iterate even when the solver gives up; the
/// second element carries the non-convergence error.
fn solve(
    cfg: &ExperimentConfig,
    problem: &EvolutionaryProblem,
) -> Result<(EvolutionarySolution, Option<CliError>), CliError> {
    let result = match cfg.solver.method {
        Method::BbArmijo => solve_evolutionary(problem, &cfg.solver),
        Method::Cg => solve_kkt_oracle(problem, &cfg.solver),
    };
    match result {
        Ok(sol) => Ok((sol, None)),
        Err(CoreError::MaxItersExceeded { best }) => {
            let msg = format!(
                "no convergence in {} iterations (gradient norm {:e})",
                best.iterations, best.grad_norm
            );
            Ok((*best, Some(CliError::NonConvergence(msg))))
        }
        Err(e) => Err(e.into()),
    }
}

fn mean_states(ens: &Ensemble, sol: &EvolutionarySolution) -> Result<Vec<Vec<f64>>, CliError> {
    (0..sol.x.n_nodes())
        .map(|k| ens.expect(&sol.x.node_values(k)).map_err(CliError::from))
        .collect()
}

fn write_solution(
    cfg: &ExperimentConfig,
    s: &Setup,
    command: &'static str,
    problem: &EvolutionaryProblem,
    sol: &EvolutionarySolution,
    stat: Option<&StationarySolution>,
) -> Result<(), CliError> {
    let (n, m) = (s.ens.n(), s.ens.m());
    let times = problem.grid.nodes();

    let mut header = vec!["t".to_string()];
    header.extend(indexed("u", m));
    for &i in &cfg.output.samples {
        header.extend(indexed(&format!("x{i}"), n));
    }
    let mut csv = Csv::new(&header);
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![Cell::Num(t)];
        row.extend(nums(sol.u.node(k)));
        for &i in &cfg.output.samples {
            row.extend(nums(sol.x.at(i, k)));
        }
        csv.row(&row);
    }
    s.out.write_csv("solution.csv", &csv)?;

    let mut header = vec!["t".to_string(), "sample_index".to_string()];
    header.extend(indexed("x", n));
    let mut csv = Csv::new(&header);
    for i in 0..s.ens.len() {
        for (k, &t) in times.iter().enumerate() {
            let mut row = vec![Cell::Num(t), Cell::Int(i)];
            row.extend(nums(sol.x.at(i, k)));
            csv.row(&row);
        }
    }
    s.out.write_csv("trajectory.csv", &csv)?;

    s.out.write_json(
        "summary.json",
        &Summary {
            metadata: Metadata::new(command, cfg, &s.ens),
            horizon: problem.grid.horizon(),
            n_steps: problem.grid.n_steps(),
            scheme: problem.scheme,
            method: cfg.solver.method,
            cost: sol.cost,
            grad_norm: sol.grad_norm,
            initial_grad_norm: sol.initial_grad_norm,
            iterations: sol.iterations,
            converged: sol.converged,
            cost_history: sol.cost_history.clone(),
        },
    )?;

    if cfg.output.plots {
        let mean = mean_states(&s.ens, sol)?;
        let mut series = Vec::new();
        for j in 0..n {
            let ys: Vec<f64> = mean.iter().map(|v| v[j]).collect();
            series.push(Series::line(format!("E[x_{}]", j + 1), &times, &ys, false));
        }
        if let Some(st) = stat {
            for j in 0..n {
                series.push(Series::level(format!("E[x_{}] steady", j + 1), &times, st.mean_state[j]).with_color(j));
            }
        }
        s.out.write_text(
            "state.svg",
            &Chart {
                title: "Mean state".into(),
                x_label: "t".into(),
                y_label: "state".into(),
                log_y: false,
                series,
            }
            .to_svg(),
        )?;
        let nodes = sol.u.to_nodes();
        let mut series = Vec::new();
        for j in 0..m {
            let ys: Vec<f64> = nodes.iter().map(|v| v[j]).collect();
            series.push(Series::line(format!("u_{}", j + 1), &times, &ys, false));
        }
        if let Some(st) = stat {
            for j in 0..m {
                series.push(Series::level(format!("u_{} steady", j + 1), &times, st.u[j]).with_color(j));
            }
        }
        s.out.write_text(
            "control.svg",
            &Chart {
                title: "Control".into(),
                x_label: "t".into(),
                y_label: "control".into(),
                log_y: false,
                series,
            }
            .to_svg(),
        )?;
    }
    if cfg.output.gnuplot {
        let cols: Vec<(usize, String)> = (0..m).map(|j| (j + 2, format!("u_{}", j + 1))).collect();
        let cols: Vec<(usize, &str)> = cols.iter().map(|(c, s)| (*c, s.as_str())).collect();
        s.out.write_text(
            "control.gp",
            &gnuplot_script("solution.csv", "control_gnuplot.svg", "Control", &cols, false),
        )?;
    }
    Ok(())
}

fn report_solve(sol: &EvolutionarySolution) {
    println!(
        "cost {:.10e}  grad_norm {:.3e}  iterations {}  converged {}",
        sol.cost, sol.grad_norm, sol.iterations, sol.converged
    );
}

pub fn solve_evolutionary_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let stat = match solve_stationary(&s.ens, &s.z) {
        Ok(st) => Some(st),
        Err(e) if needs_stationary(cfg) => return Err(e.into()),
        Err(_) => None,
    };
    let problem = build_problem(cfg, &s, stat.as_ref())?;
    let (sol, failure) = solve(cfg, &problem)?;
    write_solution(cfg, &s, "solve-evolutionary", &problem, &sol, stat.as_ref())?;
    report_solve(&sol);
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct StationaryOut<'a> {
    metadata: Metadata,
    z: &'a [f64],
    #[serde(flatten)]
    solution: &'a StationarySolution,
}

pub fn solve_stationary_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let stat = solve_stationary(&s.ens, &s.z)?;
    s.out.write_json(
        "stationary.json",
        &StationaryOut {
            metadata: Metadata::new("solve-stationary", cfg, &s.ens),
            z: &s.z,
            solution: &stat,
        },
    )?;
    println!(
        "u_s {:?}  cost {:.10e}  consistency_residual {:.3e}",
        stat.u, stat.cost, stat.consistency_residual
    );
    Ok(())
}

#[derive(Serialize)]
struct FitOut {
    #[serde(rename = "K")]
    k: f64,
    delta: f64,
    max_residual: f64,
    window: [f64; 2],
    usable_nodes: usize,
    degenerate: bool,
}

pub fn turnpike_report_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let s = setup(cfg)?;
    let stat = solve_stationary(&s.ens, &s.z)?;
    let problem = build_problem(cfg, &s, Some(&stat))?;
    let (sol, failure) = solve(cfg, &problem)?;
    write_solution(cfg, &s, "turnpike-report", &problem, &sol, Some(&stat))?;
    s.out.write_json(
        "stationary.json",
        &StationaryOut {
            metadata: Metadata::new("turnpike-report", cfg, &s.ens),
            z: &s.z,
            solution: &stat,
        },
    )?;
    let rep = turnpike_distances(&sol, &stat, &s.ens, &problem.grid)?;
    let horizon = problem.grid.horizon();
    let fit = fit_envelope(&rep.times, &rep.d_total, horizon, cfg.fit)?;
    let env: Vec<f64> = rep
        .times
        .iter()
        .map(|&t| envelope(fit.k, fit.delta, t, horizon))
        .collect();

    let mut csv = Csv::new(&["t", "d_state", "d_adjoint", "d_control", "d_total", "envelope"]);
    for k in 0..rep.len() {
        csv.row(&[
            Cell::Num(rep.times[k]),
            Cell::Num(rep.d_state[k]),
            Cell::Num(rep.d_adjoint[k]),
            Cell::Num(rep.d_control[k]),
            Cell::Num(rep.d_total[k]),
            Cell::Num(env[k]),
        ]);
    }
    s.out.write_csv("turnpike.csv", &csv)?;
    s.out.write_json(
        "fit.json",
        &FitOut {
            k: fit.k,
            delta: fit.delta,
            max_residual: fit.max_residual,
            window: fit.window,
            usable_nodes: fit.usable_nodes,
            degenerate: fit.degenerate,
        },
    )?;
    if cfg.output.plots {
        s.out.write_text(
            "turnpike.svg",
            &Chart {
                title: "Distance to the steady optimum".into(),
                x_label: "t".into(),
                y_label: "distance".into(),
                log_y: true,
                series: vec![
                    Series::line("state", &rep.times, &rep.d_state, false),
                    Series::line("adjoint", &rep.times, &rep.d_adjoint, false),
                    Series::line("control", &rep.times, &rep.d_control, false),
                    Series::line("total", &rep.times, &rep.d_total, false),
                    Series::line("envelope", &rep.times, &env, true),
                ],
            }
            .to_svg(),
        )?;
    }
    if cfg.output.gnuplot {
        let cols = [(2, "state"), (3, "adjoint"), (4, "control"), (5, "total"), (6, "envelope")];
        s.out.write_text(
            "turnpike.gp",
            &gnuplot_script("turnpike.csv", "turnpike_gnuplot.svg", "Distance to the steady optimum", &cols, true),
        )?;
    }
    report_solve(&sol);
    println!(
        "fit K {:.6}  delta {:.6}  max_residual {:.3e}{}",
        fit.k,
        fit.delta,
        fit.max_residual,
        if fit.degenerate { "  (degenerate)" } else { "" }
    );
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct SweepOut<'a> {
    metadata: Metadata,
    steps_per_unit: f64,
    rows: &'a [turnpike_core::SweepRow],
}

pub fn sweep_horizons_cmd(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Validation("sweep: required by sweep-horizons".into()))?;
    let s = setup(cfg)?;
    let stat = if needs_stationary(cfg) {
        Some(solve_stationary(&s.ens, &s.z)?)
    } else {
        None
    };
    let problem = build_problem(cfg, &s, stat.as_ref())?;
    let result = sweep_horizons(&problem, &sweep.horizons, sweep.steps_per_unit, &cfg.solver)?;
    let mut csv = Csv::new(&["T", "avg_state_err", "avg_control_err"]);
    for r in &result.rows {
        csv.row(&[Cell::Num(r.horizon), Cell::Num(r.avg_state_err), Cell::Num(r.avg_control_err)]);
    }
    s.out.write_csv("sweep.csv", &csv)?;
    s.out.write_json(
        "sweep.json",
        &SweepOut {
            metadata: Metadata::new("sweep-horizons", cfg, &s.ens),
            steps_per_unit: sweep.steps_per_unit,
            rows: &result.rows,
        },
    )?;
    if cfg.output.plots {
        let ts: Vec<f64> = result.rows.iter().map(|r| r.horizon).collect();
        let st: Vec<f64> = result.rows.iter().map(|r| r.avg_state_err).collect();
        let ct: Vec<f64> = result.rows.iter().map(|r| r.avg_control_err).collect();
        s.out.write_text(
            "sweep.svg",
            &Chart {
                title: "Time-averaged error against the horizon".into(),
                x_label: "T".into(),
                y_label: "error".into(),
                log_y: true,
                series: vec![
                    Series::line("state", &ts, &st, false),
                    Series::line("control", &ts, &ct, false),
                ],
            }
            .to_svg(),
        )?;
    }
    if cfg.output.gnuplot {
        s.out.write_text(
            "sweep.gp",
            &gnuplot_script("sweep.csv", "sweep_gnuplot.svg", "Time-averaged error", &[(2, "state"), (3, "control")], true),
        )?;
    }
    for r in &result.rows {
        println!(
            "T {:>8}  steps {:>6}  state {:.6e}  control {:.6e}  iterations {}",
            r.horizon, r.n_steps, r.avg_state_err, r.avg_control_err, r.iterations
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckOut {
    kind: String,
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coercivity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<DecayCheck>,
}

impl CheckOut {
    fn from_report(report: CheckReport) -> Self {
        Self {
            kind: report.variant.clone(),
            passed: report.passed,
            report: Some(report),
            coercivity: None,
            decay: None,
        }
    }
}

#[derive(Serialize)]
struct ChecksFile {
    metadata: Metadata,
    all_passed: bool,
    checks: Vec<CheckOut>,
}

fn run_check(cfg: &ExperimentConfig, ens: &Ensemble, check: &CheckConfig, idx: usize) -> Result<CheckOut, CliError> {
    let at = |e: CoreError| match CliError::from(e) {
        CliError::Validation(m) => CliError::Validation(format!("checks[{idx}]: {m}")),
        other => other,
    };
    Ok(match check {
        CheckConfig::A1 { gain } => CheckOut::from_report(check_a1(ens, gain).map_err(at)?),
        CheckConfig::A2 { gain, variant } => CheckOut::from_report(check_a2(ens, gain, *variant).map_err(at)?),
        CheckConfig::A0 { gain } => CheckOut::from_report(check_a0(ens, gain).map_err(at)?),
        CheckConfig::Scan { which, entries } => {
            CheckOut::from_report(scan_scalar_feedback(ens, *which, entries).map_err(at)?)
        }
        CheckConfig::Coercivity { side } => {
            let alpha = stationary_coercivity(ens, *side).map_err(at)?;
            CheckOut {
                kind: format!("stationary-coercivity-{side:?}"),
                passed: alpha > COERCIVITY_FLOOR,
                report: None,
                coercivity: Some(alpha),
                decay: None,
            }
        }
        CheckConfig::Complementary { gain, side, decay } => {
            let report = check_complementary(ens, gain, *side).map_err(at)?;
            let decay = match decay {
                Some(d) if report.passed => {
                    let grid = TimeGrid::new(d.horizon, d.n_steps).map_err(at)?;
                    let x0 = cfg.vectors(&d.x0, &format!("checks[{idx}].decay.x0"), ens, None)?;
                    Some(verify_average_decay(ens, gain, &grid, &x0, report.alpha).map_err(at)?)
                }
                _ => None,
            };
            CheckOut {
                kind: report.variant.clone(),
                passed: report.passed && decay.as_ref().is_none_or(|d| d.holds),
                report: Some(report),
                coercivity: None,
                decay,
            }
        }
    })
}

pub fn check_assumptions_cmd(cfg: &ExperimentConfig, require_pass: bool) -> Result<(), CliError> {
    if cfg.checks.is_empty() {
        return Err(CliError::Validation("checks: no checks configured".into()));
    }
    let s = setup(cfg)?;
    let checks = cfg
        .checks
        .iter()
        .enumerate()
        .map(|(i, c)| run_check(cfg, &s.ens, c, i))
        .collect::<Result<Vec<_>, _>>()?;
    let all_passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        let value = c
            .report
            .as_ref()
            .map(|r| r.alpha)
            .or(c.coercivity)
            .unwrap_or(f64::NAN);
        let mut line = format!("{:<28} {}  alpha {value:.6}", c.kind, if c.passed { "pass" } else { "FAIL" });
        if let Some(d) = &c.decay {
            line.push_str(&format!("  decay holds {} (min slack {:.3e})", d.holds, d.min_slack));
        }
        println!("{line}");
    }
    s.out.write_json(
        "checks.json",
        &ChecksFile {
            metadata: Metadata::new("check-assumptions", cfg, &s.ens),
            all_passed,
            checks,
        },
    )?;
    if require_pass && !all_passed {
        return Err(CliError::CheckFailed("at least one assumption check failed".into()));
    }
    Ok(())
}
