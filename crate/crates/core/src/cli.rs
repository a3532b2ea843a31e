//! The `logdet-lmi` command line: `eval`, `lift`, `solve` and `verify`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::convexity::{
    convexity_sweep, derive_seed, hessian_psd_check, random_spd, zstar_injectivity_probe, SampleConfig, Verdict,
    VIOLATION_TOL,
};
use crate::error::{Error, Result};
use crate::fmt::{matrix, num};
use crate::linalg::SymmetricMatrix;
use crate::lmi::{lift_objective, AffineExpr, Assignment, OBJECTIVE_VAR, X_VAR};
use crate::problem::{cone_tolerance_from_env, load_problem, Problem, FORMAT_VERSION};
use crate::solver::{solve_constrained_objective, solve_lifted_objective, Solution, Status, TraceRecord};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_CONE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_MAX_ITER: i32 = 4;
pub const EXIT_VIOLATION: i32 = 5;

pub const HESSIAN_DIRECTIONS: usize = 20;
pub const HESSIAN_STEP: f64 = 1e-4;
pub const HESSIAN_TOL: f64 = -1e-4;

#[derive(Debug, Parser)]
#[command(name = "logdet-lmi", version, about = "Log-det functions, LMI liftings and MaxDet solves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the function, its slack minimizer Z*, and the lifting at (X, Z*).
    Eval(Args),
    /// Print the lifted LMI with K^1/2 substituted.
    Lift(Args),
    /// Solve the constrained problem, or the lifted program at a frozen X.
    Solve(Args),
    /// Run the seeded convexity, Z* injectivity and Hessian probes.
    Verify(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Problem file (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Stream one line per Newton step.
    #[arg(long)]
    trace: bool,
    /// Also write the report as JSON to this path.
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ConeViolation { .. } => EXIT_CONE,
        Error::Solver {
            status: Status::Infeasible,
        } => EXIT_INFEASIBLE,
        Error::Solver { .. } | Error::NoConvergence(_) => EXIT_MAX_ITER,
        Error::Shape(_) | Error::UnboundVariable(_) | Error::InvalidProblem(_) | Error::Parse(_) | Error::Io(_) => {
            EXIT_PARSE
        }
    }
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_PARSE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<i32> {
    let (name, args) = match &command {
        Command::Eval(a) => ("eval", a),
        Command::Lift(a) => ("lift", a),
        Command::Solve(a) => ("solve", a),
        Command::Verify(a) => ("verify", a),
    };
    let tol = cone_tolerance_from_env()?;
    let problem = load_problem(&args.input, tol)?;
    let mut report = json!({
        "format_version": FORMAT_VERSION,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "kind": problem.kind(),
        "n": problem.dim(),
    });
    let code = match command {
        Command::Eval(_) => cmd_eval(&problem, out, &mut report)?,
        Command::Lift(_) => cmd_lift(&problem, out, &mut report)?,
        Command::Solve(ref a) => cmd_solve(&problem, a.trace, out, &mut report)?,
        Command::Verify(ref a) => cmd_verify(&problem, a.trials, a.seed, out, &mut report)?,
    };
    if let Some(path) = &args.json {
        let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
    }
    Ok(code)
}

fn set(report: &mut Value, key: &str, value: Value) {
    report[key] = value;
}

fn required_x(problem: &Problem, command: &str) -> Result<SymmetricMatrix> {
    problem
        .x()
        .cloned()
        .ok_or_else(|| Error::InvalidProblem(format!("`{command}` needs a problem file with X")))
}

fn cmd_eval(problem: &Problem, out: &mut dyn Write, report: &mut Value) -> Result<i32> {
    let obj = &problem.objective;
    let x = required_x(problem, "eval")?;
    let value = obj.eval(&x)?;
    let z = obj.z_star(&x)?;
    let lifting = lift_objective(obj, AffineExpr::sym(&x))?;
    let margin = lifting
        .constraint
        .feasibility_margin(&Assignment::new().with(OBJECTIVE_VAR, z.clone()))?;
    let (lhs, rhs) = obj.sylvester_pair(&x)?;

    writeln!(out, "eval: kind {} (n = {})", problem.kind(), problem.dim())?;
    writeln!(out, "value: {}", num(value))?;
    writeln!(out, "Z*: {}", matrix(z.as_matrix()))?;
    writeln!(out, "lift margin at (X, Z*): {}", num(margin))?;
    writeln!(out, "sylvester: log det(I+KX⁻¹) = {}, log det(I+K½X⁻¹K½) = {}", num(lhs), num(rhs))?;
    writeln!(out, "format {FORMAT_VERSION}, cone tolerance {}", num(problem.cone_tol))?;

    set(report, "value", json!(value));
    set(report, "z_star", json!(z));
    set(report, "lift_margin", json!(margin));
    set(report, "sylvester", json!({ "lhs": lhs, "rhs": rhs }));
    set(report, "tolerances", json!({ "cone": problem.cone_tol }));
    Ok(EXIT_OK)
}

fn cmd_lift(problem: &Problem, out: &mut dyn Write, report: &mut Value) -> Result<i32> {
    let obj = &problem.objective;
    let n = problem.dim();
    let lifting = lift_objective(obj, AffineExpr::var(X_VAR, n))?;
    writeln!(out, "lift: kind {} (n = {})", problem.kind(), n)?;
    writeln!(out, "minimize −log det {OBJECTIVE_VAR} subject to")?;
    writeln!(out, "  {}", lifting.constraint)?;
    if let Some(h) = &problem.constraint {
        writeln!(out, "  {h}")?;
    }
    writeln!(out, "K½ = {}", matrix(lifting.k_sqrt.as_matrix()))?;
    writeln!(out, "format {FORMAT_VERSION}, cone tolerance {}", num(problem.cone_tol))?;

    set(report, "objective_var", json!(OBJECTIVE_VAR));
    set(report, "variables", json!({ X_VAR: n, OBJECTIVE_VAR: n }));
    set(report, "k_sqrt", json!(lifting.k_sqrt));
    set(report, "display", json!(lifting.constraint.to_string()));
    set(report, "constraint", json!(lifting.constraint.to_spec()));
    if let Some(h) = &problem.constraint {
        set(report, "H", json!(h.to_spec()));
    }
    set(report, "tolerances", json!({ "cone": problem.cone_tol }));
    Ok(EXIT_OK)
}

fn cmd_solve(problem: &Problem, trace: bool, out: &mut dyn Write, report: &mut Value) -> Result<i32> {
    let obj = &problem.objective;
    let opts = &problem.file.options;
    let mut sink = |r: &TraceRecord| {
        let _ = writeln!(out, "{r}");
    };
    let sink_ref: Option<&mut dyn FnMut(&TraceRecord)> = if trace { Some(&mut sink) } else { None };
    let (mode, sol) = match (&problem.constraint, problem.x()) {
        (Some(h), _) => (
            "constrained",
            solve_constrained_objective(obj, h, problem.file.structure, opts, sink_ref)?,
        ),
        (None, Some(x)) => ("frozen_x", solve_lifted_objective(obj, x, opts, sink_ref)?),
        (None, None) => {
            return Err(Error::InvalidProblem("`solve` needs a constraint H or a frozen X".into()));
        }
    };
    print_solution(out, problem, mode, &sol)?;

    set(report, "mode", json!(mode));
    set(report, "status", json!(sol.status));
    set(report, "objective", json!(finite_or_null(sol.objective)));
    set(report, "assignment", json!(sol.assignment));
    set(
        report,
        "margins",
        json!(sol.margins.iter().map(|(n, m)| json!({ "name": n, "margin": m })).collect::<Vec<_>>()),
    );
    set(report, "outer_iterations", json!(sol.outer_iterations));
    set(report, "newton_steps", json!(sol.newton_steps));
    set(report, "diagnostics", json!(sol.diagnostics));
    set(report, "options", json!(opts));
    set(
        report,
        "tolerances",
        json!({
            "cone": problem.cone_tol,
            "duality_gap": opts.duality_gap_tol,
            "newton": opts.newton_tol,
            "feasibility_shift": opts.feasibility_shift,
        }),
    );
    Ok(match sol.status {
        Status::Optimal => EXIT_OK,
        Status::Infeasible => EXIT_INFEASIBLE,
        Status::MaxIter => EXIT_MAX_ITER,
    })
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn print_solution(out: &mut dyn Write, problem: &Problem, mode: &str, sol: &Solution) -> Result<()> {
    writeln!(out, "solve: kind {} (n = {}), {mode}", problem.kind(), problem.dim())?;
    writeln!(out, "status: {}", sol.status)?;
    if sol.status == Status::MaxIter {
        writeln!(out, "iteration cap reached, reporting the best iterate")?;
    }
    for (name, value) in sol.assignment.iter() {
        let label = if name == X_VAR { "X*" } else { name.as_str() };
        writeln!(out, "{label}: {}", matrix(value.as_matrix()))?;
    }
    writeln!(out, "objective: {}", num(sol.objective))?;
    for (name, m) in &sol.margins {
        writeln!(out, "margin {name}: {}", num(*m))?;
    }
    writeln!(
        out,
        "iterations: {} outer, {} Newton",
        sol.outer_iterations, sol.newton_steps
    )?;
    let d = &sol.diagnostics;
    writeln!(out, "gap bound: {} (t = {})", num(d.gap_bound), num(d.final_t))?;
    if let Some(s) = d.phase1_s {
        writeln!(out, "phase 1 shift: {}", num(s))?;
    }
    if d.diverging {
        writeln!(out, "warning: iterates diverging (max |coordinate| = {})", num(d.max_abs_coordinate))?;
    }
    if d.nonunique_x == Some(true) {
        writeln!(
            out,
            "note: objective is flat in X at the solution (curvature {}), X* may not be unique",
            num(d.x_min_curvature.unwrap_or(0.0))
        )?;
    }
    writeln!(
        out,
        "format {FORMAT_VERSION}, cone tolerance {}, gap tolerance {}",
        num(problem.cone_tol),
        num(problem.file.options.duality_gap_tol)
    )?;
    Ok(())
}

fn cmd_verify(problem: &Problem, trials: usize, seed: u64, out: &mut dyn Write, report: &mut Value) -> Result<i32> {
    let obj = &problem.objective;
    let n = problem.dim();
    let k = obj.k();
    let cfg = SampleConfig::new(n, trials, seed);
    let sweep = convexity_sweep(problem.kind(), k, &cfg)?;
    let injectivity = zstar_injectivity_probe(k, trials, seed)?;
    let x = match problem.x() {
        Some(x) => x.clone(),
        None => random_spd(n, derive_seed(seed, 600, 0), cfg.condition_cap),
    };
    let hessian = hessian_psd_check(problem.kind(), k, &x, HESSIAN_DIRECTIONS, HESSIAN_STEP, seed)?;
    let hessian_ok = hessian.min_quadratic_form >= HESSIAN_TOL;
    let verdict = if hessian_ok { sweep.verdict } else { Verdict::Violation };

    writeln!(out, "verify: kind {} (n = {}), seed {seed}, {trials} trials", problem.kind(), n)?;
    writeln!(
        out,
        "convexity: {} over {} pairs ({} evaluations), worst violation {}, min slack {}",
        sweep.verdict,
        sweep.trials,
        sweep.evaluations,
        num(sweep.worst_violation),
        num(sweep.min_slack)
    )?;
    match sweep.strictness_floor {
        Some(c) => writeln!(out, "strictness floor c = {} (pilot min ratio {})", num(c), num(sweep.pilot_min_ratio.unwrap_or(c)))?,
        None if sweep.strictness_expected => writeln!(out, "strictness floor: not calibrated")?,
        None => writeln!(out, "strictness: not expected (K singular)")?,
    }
    writeln!(out, "strictness witnesses: {}", sweep.witness_count)?;
    for w in sweep.strictness_witnesses.iter().take(3) {
        writeln!(
            out,
            "  X = {}, Y = {}, λ = {}, slack = {}",
            matrix(w.x.as_matrix()),
            matrix(w.y.as_matrix()),
            num(w.lambda),
            num(w.slack)
        )?;
    }
    writeln!(
        out,
        "Z* of f injectivity: {} (K {}), min random separation {}, collisions {}",
        if injectivity.injective { "injective" } else { "not injective" },
        if injectivity.k_is_pd { "PD" } else { "singular" },
        num(injectivity.min_random_separation),
        injectivity.collisions.len()
    )?;
    writeln!(
        out,
        "hessian: min quadratic form {} over {} directions (h = {}), {} skipped",
        num(hessian.min_quadratic_form),
        hessian.evaluated,
        num(HESSIAN_STEP),
        hessian.skipped.len()
    )?;
    for s in &hessian.skipped {
        writeln!(out, "  skipped {s}")?;
    }
    writeln!(
        out,
        "tolerances: violation {}·(1+|h(X)|+|h(Y)|), hessian {}, cone {}",
        num(VIOLATION_TOL),
        num(HESSIAN_TOL),
        num(problem.cone_tol)
    )?;
    writeln!(out, "verdict: {verdict}")?;

    set(report, "seed", json!(seed));
    set(report, "trials", json!(trials));
    set(report, "verdict", json!(verdict));
    set(report, "convexity", json!(sweep));
    set(report, "zstar_injectivity", json!(injectivity));
    set(report, "hessian", json!(hessian));
    set(
        report,
        "tolerances",
        json!({
            "violation": VIOLATION_TOL,
            "hessian": HESSIAN_TOL,
            "cone": problem.cone_tol,
        }),
    );
    Ok(if verdict == Verdict::Violation { EXIT_VIOLATION } else { EXIT_OK })
}
