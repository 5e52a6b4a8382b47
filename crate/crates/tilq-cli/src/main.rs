//! Command-line front end: load problem files, run the solvers and
//! verifiers, reproduce the bundled examples, and emit reports.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use tilq::error::Error;
use tilq::feedback::solve_feedback;
use tilq::fixtures;
use tilq::linalg::{Tolerances, Vector};
use tilq::open_loop::{demonstrate_inconsistency, solve_open_loop, solve_standard_for_anchor};
use tilq::problem::{InitialPair, Mode, ProblemData};
use tilq::report;
use tilq::simulation::{self, NoiseModel, PolicySpec};
use tilq::verify::{verify_feedback, verify_open_loop, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "tilq",
    version,
    about = "Solvers and verifiers for time-inconsistent discrete-time stochastic LQ control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Args)]
struct CommonArgs {
    /// Problem file (JSON).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Initial time.
    #[arg(long, default_value_t = 0)]
    t: usize,
    /// Initial state as comma-separated floats, e.g. "1,0".
    #[arg(long)]
    x: Option<String>,
    /// Seed for Monte Carlo sampling and probe directions.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra random deviation directions per verified time point.
    #[arg(long, default_value_t = 16)]
    probes: usize,
    /// Relative singular-value cutoff for pseudoinverses.
    #[arg(long)]
    rcond: Option<f64>,
    #[arg(long)]
    residual_tol: Option<f64>,
    #[arg(long)]
    psd_margin: Option<f64>,
    /// Report measured wall time instead of the deterministic 0.0.
    #[arg(long, default_value_t = false)]
    timings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled Riccati/linear difference equation sets for the
    /// open-loop equilibrium control.
    SolveOpenLoop(CommonArgs),
    /// Solve the symmetric Riccati set for the linear feedback equilibrium
    /// strategy.
    SolveFeedback(CommonArgs),
    /// Solve the standard pre-commitment recursion anchored at --t.
    SolveStandard(CommonArgs),
    /// Solve and independently certify the equilibrium properties from the
    /// initial pair (--t, --x) by exact path enumeration.
    Verify(CommonArgs),
    /// Simulate one noise path under a solved policy and dump the trajectory.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Which solved policy drives the controls.
        #[arg(long, value_enum, default_value = "open-loop")]
        policy: PolicyChoice,
    },
    /// Compare pre-commitment solves anchored at --t and --t1.
    DemoInconsistency {
        #[command(flatten)]
        common: CommonArgs,
        /// Later anchor; defaults to --t + 1.
        #[arg(long)]
        t1: Option<usize>,
    },
    /// Run the bundled worked examples end to end and print a result table.
    Examples(CommonArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PolicyChoice {
    OpenLoop,
    Feedback,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Infeasible(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn tolerances(args: &CommonArgs) -> Result<Tolerances, Error> {
    let mut tol = Tolerances::default();
    if args.rcond.is_some() {
        tol.pinv_rcond = args.rcond;
    }
    if let Some(v) = args.residual_tol {
        tol.residual_tol = v;
    }
    if let Some(v) = args.psd_margin {
        tol.psd_margin = v;
    }
    tol.validate()?;
    Ok(tol)
}

fn load_input(args: &CommonArgs) -> Result<ProblemData, Error> {
    let path = args
        .input
        .as_ref()
        .ok_or_else(|| Error::invalid("--input is required for this command"))?;
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    tilq::problem::load_problem(&text)
}

fn initial_pair(args: &CommonArgs, p: &ProblemData) -> Result<InitialPair, Error> {
    if args.t >= p.horizon {
        return Err(Error::invalid(format!(
            "--t {} is outside the horizon {}",
            args.t, p.horizon
        )));
    }
    let x = match &args.x {
        None => Vector::from_element(p.state_dim, 1.0),
        Some(text) => {
            let parts: Result<Vec<f64>, _> =
                text.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let parts = parts.map_err(|e| Error::invalid(format!("bad --x: {e}")))?;
            if parts.len() != p.state_dim {
                return Err(Error::invalid(format!(
                    "--x has {} entries, the state dimension is {}",
                    parts.len(),
                    p.state_dim
                )));
            }
            Vector::from_column_slice(&parts)
        }
    };
    Ok(InitialPair::new(args.t, x))
}

fn emit(args: &CommonArgs, content: &str) -> Result<(), Error> {
    match &args.output {
        Some(path) => fs::write(path, content).map_err(Error::from),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

/// Standard report envelope; timing is 0.0 unless --timings is set so that
/// reports stay byte-identical across runs.
fn envelope(command: &str, feasible: bool, body: Value, args: &CommonArgs, started: Instant) -> Value {
    let timing_ms = if args.timings {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let mut solution = body;
    let diagnostics = solution
        .as_object_mut()
        .and_then(|m| m.remove("diagnostics"))
        .unwrap_or(Value::Null);
    json!({
        "command": command,
        "feasible": feasible,
        "solution": solution,
        "diagnostics": diagnostics,
        "timing_ms": timing_ms,
    })
}

fn exit_for(feasible: bool) -> ExitCode {
    if feasible {
        ExitCode::from(0)
    } else {
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::SolveOpenLoop(args) => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let sol = solve_open_loop(&p, &tol)?;
            let body = report::open_loop_to_json(&sol);
            match args.format {
                Format::Json => {
                    let out = envelope("solve-open-loop", sol.feasible, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => {
                    let mut text = format!(
                        "open-loop equilibrium solve: {}\n",
                        verdict(sol.feasible)
                    );
                    for k in 0..p.horizon {
                        text.push_str(&format!(
                            "K_{k} =\n{}\n",
                            report::format_matrix(&sol.gains[k])
                        ));
                    }
                    for d in &sol.diagnostics {
                        text.push_str(&format!(
                            "t={}: consistency residual {:.3e}, convexity min eig {:.6}\n",
                            d.t, d.consistency_residual, d.convexity_min_eigenvalue
                        ));
                    }
                    emit(&args, &text)?;
                }
                Format::Csv => return Err(Error::invalid("csv applies to simulate only")),
            }
            Ok(exit_for(sol.feasible))
        }
        Command::SolveFeedback(args) => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let sol = solve_feedback(&p, &tol)?;
            let body = report::feedback_to_json(&sol);
            match args.format {
                Format::Json => {
                    let out = envelope("solve-feedback", sol.feasible, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => {
                    let mut text = format!(
                        "linear feedback equilibrium solve: {}\n",
                        verdict(sol.feasible)
                    );
                    for t in 0..p.horizon {
                        text.push_str(&format!(
                            "Phi_{t} =\n{}\n",
                            report::format_matrix(&sol.phi[t])
                        ));
                    }
                    for d in &sol.diagnostics {
                        text.push_str(&format!(
                            "t={}: W~ eigenvalues {:?}, consistency residual {:.3e}\n",
                            d.t, d.w_eigenvalues, d.consistency_residual
                        ));
                    }
                    emit(&args, &text)?;
                }
                Format::Csv => return Err(Error::invalid("csv applies to simulate only")),
            }
            Ok(exit_for(sol.feasible))
        }
        Command::SolveStandard(args) => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let sol = solve_standard_for_anchor(&p, args.t, &tol)?;
            let body = report::standard_to_json(&sol);
            match args.format {
                Format::Json => {
                    let out = envelope("solve-standard", sol.feasible, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => {
                    let mut text = format!(
                        "standard pre-commitment solve anchored at t={}: {}\n",
                        args.t,
                        verdict(sol.feasible)
                    );
                    for (off, g) in sol.gains.iter().enumerate() {
                        text.push_str(&format!(
                            "K_{} =\n{}\n",
                            sol.t_start + off,
                            report::format_matrix(g)
                        ));
                    }
                    emit(&args, &text)?;
                }
                Format::Csv => return Err(Error::invalid("csv applies to simulate only")),
            }
            Ok(exit_for(sol.feasible))
        }
        Command::Verify(args) => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let start = initial_pair(&args, &p)?;
            let opts = VerifyOptions {
                probes: args.probes,
                seed: args.seed,
                tolerances: tol.clone(),
            };
            let noise = NoiseModel::Rademacher;

            let mut all_pass = true;
            let mut sections = serde_json::Map::new();

            if p.mode == Mode::General {
                sections.insert(
                    "open_loop".into(),
                    json!({"skipped": "open-loop solver requires dynamics independent of the initial time"}),
                );
            } else {
                let sol = solve_open_loop(&p, &tol)?;
                if sol.feasible {
                    let rep = verify_open_loop(
                        &p,
                        &start,
                        &PolicySpec::GainSequence(sol.gains.clone()),
                        &noise,
                        &opts,
                    )?;
                    all_pass &= rep.pass;
                    sections.insert("open_loop".into(), report::verification_to_json(&rep));
                } else {
                    all_pass = false;
                    sections.insert("open_loop".into(), json!({"feasible": false}));
                }
            }

            let fb = solve_feedback(&p, &tol)?;
            if fb.feasible {
                let rep = verify_feedback(&p, &fb.phi, &start, &noise, &opts)?;
                all_pass &= rep.pass;
                sections.insert("feedback".into(), report::verification_to_json(&rep));
            } else {
                all_pass = false;
                sections.insert("feedback".into(), json!({"feasible": false}));
            }

            let body = Value::Object(sections);
            match args.format {
                Format::Json => {
                    let out = envelope("verify", all_pass, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => {
                    emit(&args, &format!("verification: {}\n{body:#}", verdict(all_pass)))?;
                }
                Format::Csv => return Err(Error::invalid("csv applies to simulate only")),
            }
            Ok(exit_for(all_pass))
        }
        Command::Simulate { common: args, policy } => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let start = initial_pair(&args, &p)?;
            let spec = match policy {
                PolicyChoice::OpenLoop => {
                    let sol = solve_open_loop(&p, &tol)?;
                    PolicySpec::GainSequence(tilq::open_loop::open_loop_gains(&sol)?)
                }
                PolicyChoice::Feedback => {
                    let sol = solve_feedback(&p, &tol)?;
                    if !sol.feasible {
                        return Err(Error::Infeasible(
                            "no feedback equilibrium strategy exists for this problem".into(),
                        ));
                    }
                    PolicySpec::Strategy(sol.phi)
                }
            };
            let noise = NoiseModel::Rademacher;
            let steps = p.horizon - start.t;
            let path = simulation::sample_path(&noise, steps, args.seed)?;
            let traj = simulation::simulate(&p, &start, &spec, &path)?;
            match args.format {
                Format::Csv => emit(&args, &simulation::trajectory_to_csv(&traj))?,
                Format::Json => {
                    let body = json!({
                        "states": traj.states.iter().map(|x| x.iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                        "controls": traj.controls.iter().map(|u| u.iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                        "noise": traj.path.values,
                        "probability": traj.path.probability,
                    });
                    let out = envelope("simulate", true, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => emit(&args, &simulation::trajectory_to_csv(&traj))?,
            }
            Ok(ExitCode::from(0))
        }
        Command::DemoInconsistency { common: args, t1 } => {
            let started = Instant::now();
            let p = load_input(&args)?;
            let tol = tolerances(&args)?;
            let t0 = args.t;
            let t1 = t1.unwrap_or(t0 + 1);
            let rep = demonstrate_inconsistency(&p, t0, t1, &tol)?;
            match args.format {
                Format::Json => {
                    let body = report::inconsistency_to_json(&rep);
                    let out = envelope("demo-inconsistency", true, body, &args, started);
                    emit(&args, &serde_json::to_string_pretty(&out).unwrap())?;
                }
                Format::Text => {
                    emit(
                        &args,
                        &format!(
                            "pre-commitment gains at step {t1}:\n\
                             anchored at {t0}:\n{}\nanchored at {t1}:\n{}\n\
                             difference norm: {:.6}\n",
                            report::format_matrix(&rep.gain_from_t0),
                            report::format_matrix(&rep.gain_from_t1),
                            rep.difference_norm
                        ),
                    )?;
                }
                Format::Csv => return Err(Error::invalid("csv applies to simulate only")),
            }
            Ok(ExitCode::from(0))
        }
        Command::Examples(args) => {
            let outcomes = fixtures::run_all_fixtures()?;
            let all_pass = outcomes.iter().all(|o| o.pass);
            match args.format {
                Format::Json => {
                    let body = report::fixture_outcomes_to_json(&outcomes);
                    emit(&args, &serde_json::to_string_pretty(&body).unwrap())?;
                }
                _ => {
                    let mut text = String::new();
                    for o in &outcomes {
                        let passed = o.checks.iter().filter(|c| c.pass).count();
                        text.push_str(&format!(
                            "{} [{}] {}/{} checks\n",
                            o.name,
                            if o.pass { "PASS" } else { "FAIL" },
                            passed,
                            o.checks.len()
                        ));
                        for c in &o.checks {
                            text.push_str(&format!(
                                "  {:<4} {:<55} error {:.2e} (tol {:.1e})\n",
                                if c.pass { "ok" } else { "FAIL" },
                                c.label,
                                c.max_error,
                                c.tolerance
                            ));
                        }
                    }
                    text.push_str(&format!(
                        "\n{}/{} fixtures pass\n",
                        outcomes.iter().filter(|o| o.pass).count(),
                        outcomes.len()
                    ));
                    emit(&args, &text)?;
                }
            }
            Ok(exit_for(all_pass))
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "feasible"
    } else {
        "infeasible"
    }
}
