//! `wedge-solver`: classify, solve, sweep, value, simulate and verify from a JSON parameter file.

mod config;
mod output;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use wedge_core::fbp_solver::{self, shoot, FreeBoundarySolution};
use wedge_core::model::{classify_with, derive_aux, AuxParams, Case, Costs, MarketParams};
use wedge_core::policy::{PolicySurface, Position};
use wedge_core::simulate::{self, SimConfig, TabulatedPolicy, TABLE_POINTS};
use wedge_core::verify::{self, CheckReport, StaticsBase, SweepSpec};
use wedge_core::Error;

use config::{GridSpec, Problem, RunConfig};
use output::{csv_header, fmt_f64, write_file, Envelope};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidParams(_) | Error::OutOfDomain(_) | Error::Insolvent(_) => 2,
                Error::IllPosed(_) => 3,
                Error::BelowCriticalCost { .. } => 4,
                Error::NumericalFailure(_) => 5,
            },
            CliError::Verification(_) => 6,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "wedge-solver", version, about = "No-trade wedge for a portfolio with an illiquid asset")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON parameter file.
    #[arg(long)]
    params: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Relative integration tolerance (absolute tolerance is 1% of it).
    #[arg(long)]
    tol: Option<f64>,
    /// Random seed for simulation.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid: `name:lin|log:start:stop:count` for sweeps, a point count for verify.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Case of the parameter set, with the critical cost when it exists.
    Classify(Common),
    /// Free boundaries and the solution path.
    Solve(Common),
    /// Boundaries and certainty equivalent along a parameter grid.
    Sweep(Common),
    /// Value function, certainty equivalent and controls at the configured position.
    Value(Common),
    /// Monte Carlo estimate of the value under the optimal policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Write the first N paths (at most 100) to paths.csv.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
        /// Steps between dumped rows.
        #[arg(long, default_value_t = 100)]
        dump_stride: u64,
    },
    /// Identity, HJB and comparative statics checks.
    Verify(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("WEDGE_SOLVER_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("error: WEDGE_SOLVER_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Classify(c) => cmd_classify(&c),
        Command::Solve(c) => cmd_solve(&c),
        Command::Sweep(c) => cmd_sweep(&c),
        Command::Value(c) => cmd_value(&c),
        Command::Simulate { common, dump_paths, dump_stride } => cmd_simulate(&common, dump_paths, dump_stride),
        Command::Verify(c) => cmd_verify(&c),
    }
}

fn load(c: &Common) -> Result<(RunConfig, Problem), CliError> {
    let cfg = RunConfig::load(&c.params)?;
    let problem = cfg.problem(c.tol)?;
    Ok((cfg, problem))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn print_json<T: Serialize>(v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{s}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(e.to_string())),
        _ => Ok(()),
    }
}

fn cmd_classify(c: &Common) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let report = classify_with(&pr.aux, &pr.tol)?;
    print_json(&Envelope::new("classify", &cfg, json!({ "label": report.case.label(), "report": report })))
}

fn boundaries_json(sol: &FreeBoundarySolution, surface: &PolicySurface) -> serde_json::Value {
    json!({
        "case": sol.case.label(),
        "xi": sol.xi,
        "costs": sol.costs,
        "q_star": sol.q_star,
        "q_upper": sol.q_upper,
        "p_star": surface.p_star,
        "p_upper": surface.p_upper,
        "n_star": sol.n_star(),
        "n_upper": sol.n_upper(),
        "a_star": sol.a_star,
        "a_upper": sol.a_upper,
        "a": sol.a_const,
        "cost_consistency": sol.path.end().i.exp_m1() - sol.xi,
        "smooth_fit": [sol.path.samples[0].dn, sol.path.end().dn],
    })
}

fn cmd_solve(c: &Common) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let surface = PolicySurface::build(&pr.aux, pr.costs, &pr.tol)?;
    let sol = &surface.solution;
    ensure_dir(&c.out)?;
    let env = Envelope::new("solve", &cfg, boundaries_json(sol, &surface));
    write_file(&c.out.join("boundaries.json"), &env.to_string_pretty()?)?;
    let mut csv = csv_header("solve", &cfg)?;
    csv.push_str("q,n,dn,I,dI,p\n");
    for s in &sol.path.samples {
        let p = surface.p_of_q(s.q)?;
        let row = [s.q, s.n, s.dn, s.i, s.di, p].map(fmt_f64).join(",");
        csv.push_str(&row);
        csv.push('\n');
    }
    write_file(&c.out.join("path.csv"), &csv)?;
    print_json(&env)
}

fn sweep_position(cfg: &RunConfig) -> Position {
    cfg.position.unwrap_or(Position::new(1.0, 1.0, 1.0))
}

fn sweep_point(name: &str, v: f64, pr: &Problem) -> Result<(AuxParams, Costs), CliError> {
    let a = pr.aux;
    let with = |b1: f64, b2: f64, b3: f64, b4: f64| AuxParams::from_reduced(a.risk_aversion, b1, b2, b3, b4, a.xi);
    let raw = |f: &dyn Fn(&mut MarketParams)| -> Result<(AuxParams, Costs), CliError> {
        let mut m = match (pr.market_given, pr.market) {
            (true, Some(m)) => m,
            _ => return Err(CliError::Input(format!("sweeping `{name}` needs a `market` section"))),
        };
        f(&mut m);
        Ok((derive_aux(&m)?, m.costs()?))
    };
    Ok(match name {
        "xi" => {
            let costs = Costs::from_xi(v)?;
            (a.with_xi(costs.xi())?, costs)
        }
        "b1" => (with(v, a.b2, a.b3, a.b4)?, pr.costs),
        "b2" => (with(a.b1, v, a.b3, a.b4)?, pr.costs),
        "b3" => (with(a.b1, a.b2, v, a.b4)?, pr.costs),
        "b4" => (with(a.b1, a.b2, a.b3, v)?, pr.costs),
        "delta" => raw(&|m| m.delta = v)?,
        "alpha" => raw(&|m| m.alpha = v)?,
        "mu" => raw(&|m| m.mu = v)?,
        "rho" => raw(&|m| m.rho = v)?,
        other => return Err(CliError::Input(format!("unknown sweep parameter `{other}`"))),
    })
}

fn cmd_sweep(c: &Common) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let grid = GridSpec::parse(c.grid.as_deref().ok_or_else(|| CliError::Input("sweep needs --grid".into()))?)?;
    ensure_dir(&c.out)?;
    if grid.name == "u" {
        return sweep_paths(c, &cfg, &pr, &grid);
    }
    let pos = sweep_position(&cfg);
    let rows: Vec<Result<String, CliError>> = grid
        .values
        .par_iter()
        .map(|&v| {
            let (aux, costs) = match sweep_point(&grid.name, v, &pr) {
                Ok(x) => x,
                Err(CliError::Core(e @ Error::InvalidParams(_))) => {
                    return Ok(nan_row(v, "", &e.to_string()));
                }
                Err(e) => return Err(e),
            };
            let case = fbp_solver::case_of(&aux.field());
            match PolicySurface::build(&aux, costs, &pr.tol) {
                Ok(s) => {
                    let ce = s.certainty_equivalent(&pos).unwrap_or(f64::NAN);
                    let vals = [v, s.solution.q_star, s.solution.q_upper, s.p_star, s.p_upper, ce].map(fmt_f64);
                    Ok(format!(
                        "{},{},{},{},{},{},{},",
                        vals[0],
                        case.label(),
                        vals[1],
                        vals[2],
                        vals[3],
                        vals[4],
                        vals[5]
                    ))
                }
                Err(e @ (Error::IllPosed(_) | Error::BelowCriticalCost { .. })) => {
                    Ok(nan_row(v, case.label(), &e.to_string()))
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect();
    let mut csv = csv_header("sweep", &cfg)?;
    csv.push_str(&format!("# grid: {}\n", c.grid.as_deref().unwrap_or_default()));
    csv.push_str(&format!("# position: x={}, y={}, theta={}\n", pos.x, pos.y, pos.theta));
    csv.push_str(&format!("{},case,q_star,q_upper,p_star,p_upper,certainty_equivalent,reason\n", grid.name));
    for r in rows {
        csv.push_str(&r?);
        csv.push('\n');
    }
    write_file(&c.out.join("sweep.csv"), &csv)?;
    println!("{}", c.out.join("sweep.csv").display());
    Ok(())
}

fn nan_row(v: f64, case: &str, reason: &str) -> String {
    let reason = reason.replace([',', '\n'], ";");
    format!("{},{case},NaN,NaN,NaN,NaN,NaN,{reason}", fmt_f64(v))
}

/// Solution paths started from `(u, m(u))` for each `u` on the grid.
fn sweep_paths(c: &Common, cfg: &RunConfig, pr: &Problem, grid: &GridSpec) -> Result<(), CliError> {
    let ctx = pr.aux.field();
    let mut csv = csv_header("sweep", cfg)?;
    csv.push_str(&format!("# grid: {}\n", c.grid.as_deref().unwrap_or_default()));
    csv.push_str("u,q,n,I,zeta,sigma,reason\n");
    let paths: Vec<_> = grid.values.par_iter().map(|&u| (u, shoot(&ctx, u, &pr.tol))).collect();
    for (u, path) in paths {
        match path {
            Ok(p) => {
                let sigma = p.end().i.exp_m1();
                for s in &p.samples {
                    let row = [u, s.q, s.n, s.i, p.zeta, sigma].map(fmt_f64).join(",");
                    csv.push_str(&row);
                    csv.push_str(",\n");
                }
            }
            Err(e) => {
                let reason = e.to_string().replace([',', '\n'], ";");
                csv.push_str(&format!("{},NaN,NaN,NaN,NaN,NaN,{reason}\n", fmt_f64(u)));
            }
        }
    }
    write_file(&c.out.join("paths.csv"), &csv)?;
    println!("{}", c.out.join("paths.csv").display());
    Ok(())
}

fn cmd_value(c: &Common) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let pos = cfg.position.ok_or_else(|| CliError::Input("value needs a `position` section".into()))?;
    let surface = PolicySurface::build(&pr.aux, pr.costs, &pr.tol)?;
    let reb = surface.rebalance_to_wedge(&pos)?;
    let after = reb.after;
    let value = surface.value_function(&pos)?;
    let mut result = json!({
        "position": pos,
        "region": surface.region(pos.fraction()),
        "p": pos.fraction(),
        "p_star": surface.p_star,
        "p_upper": surface.p_upper,
        "value": value,
        "certainty_equivalent": surface.certainty_equivalent(&pos)?,
        "merton_value_of_cash": wedge_core::policy::merton_value(pos.x, &pr.aux).ok(),
        "trade_units": reb.units,
        "after_trade": after,
    });
    if let Some(m) = pr.market {
        if after.wealth() > 0.0 {
            result["controls"] = serde_json::to_value(surface.feedback_controls(&after, &m)?)
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
        result["market"] = serde_json::to_value(m).map_err(|e| CliError::Io(e.to_string()))?;
    }
    print_json(&Envelope::new("value", &cfg, result))
}

fn cmd_simulate(c: &Common, dump: usize, stride: u64) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let pos = cfg.position.ok_or_else(|| CliError::Input("simulate needs a `position` section".into()))?;
    let market = pr.market.ok_or_else(|| CliError::Input("simulate needs market parameters".into()))?;
    let mut sim: SimConfig = cfg.simulation.unwrap_or_default();
    if let Some(s) = c.seed {
        sim.seed = s;
    }
    if dump > 100 {
        return Err(CliError::Input("--dump-paths is capped at 100".into()));
    }
    let surface = PolicySurface::build(&pr.aux, pr.costs, &pr.tol)?;
    let value = surface.value_function(&pos)?;
    let res = simulate::simulate_optimal(&pos, &surface, &market, &sim)?;
    let bound = res.truncation_bound.unwrap_or(0.0);
    let gap = (res.estimate - value).abs();
    let result = json!({
        "value_function": value,
        "sim": res,
        "gap": gap,
        "gap_in_std_errors": (gap - bound).max(0.0) / res.std_error,
        "market": market,
    });
    ensure_dir(&c.out)?;
    let env = Envelope::new("simulate", &cfg, result);
    write_file(&c.out.join("simulate.json"), &env.to_string_pretty()?)?;
    if dump > 0 {
        let policy = TabulatedPolicy::optimal(&surface, &market, TABLE_POINTS)?;
        let rows = simulate::dump_paths(&pos, &policy, &market, &sim, res.horizon, dump, stride)?;
        let mut csv = csv_header("simulate", &cfg)?;
        csv.push_str("path,t,X,Y,Theta,P,C\n");
        for r in rows {
            let vals = [r.t, r.x, r.y, r.theta, r.p, r.consumption].map(fmt_f64).join(",");
            csv.push_str(&format!("{},{vals}\n", r.path));
        }
        write_file(&c.out.join("paths.csv"), &csv)?;
    }
    print_json(&env)
}

fn cmd_verify(c: &Common) -> Result<(), CliError> {
    let (cfg, pr) = load(c)?;
    let grid = match c.grid.as_deref() {
        None => None,
        Some(g) => Some(
            g.parse::<usize>()
                .ok()
                .filter(|&n| n >= 3)
                .ok_or_else(|| CliError::Input(format!("verify --grid takes a point count >= 3, got `{g}`")))?,
        ),
    };
    let ctx = pr.aux.field();
    let mut reports: Vec<CheckReport> = verify::run_identity_suite(&ctx, grid.unwrap_or(1000));
    let surface = PolicySurface::build(&pr.aux, pr.costs, &pr.tol)?;
    reports.extend(verify::run_solution_suite(&surface.solution));
    if let Some(m) = pr.market {
        reports.extend(verify::run_hjb_suite(&surface, &m, grid.unwrap_or(2001)));
    }
    let base = StaticsBase {
        aux: pr.aux,
        costs: pr.costs,
        market: if pr.market_given { pr.market } else { None },
        position: sweep_position(&cfg),
    };
    let spec = cfg.sweep.clone().unwrap_or_else(|| SweepSpec::around(&pr.aux, base.market.as_ref()));
    match verify::run_statics_suite(&base, &spec, &pr.tol) {
        Ok(r) => reports.extend(r),
        Err(e) => reports.push(CheckReport {
            name: "statics".into(),
            passed: false,
            worst: f64::NAN,
            tolerance: 0.0,
            location: None,
            detail: e.to_string(),
        }),
    }
    if surface.solution.case == Case::Case1 || surface.solution.case == Case::Case4 {
        reports.extend(verify::run_crossing_continuity(&ctx, &pr.tol, 101)?);
    }
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    ensure_dir(&c.out)?;
    let env = Envelope::new("verify", &cfg, serde_json::to_value(&reports).map_err(|e| CliError::Io(e.to_string()))?);
    write_file(&c.out.join("verify.json"), &env.to_string_pretty()?)?;
    for r in &reports {
        println!(
            "{} {} worst={} tol={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            fmt_f64(r.worst),
            fmt_f64(r.tolerance)
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(failed.join(", ")))
    }
}
