use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use hjbqvi::io::config::Config;
use hjbqvi::io::run::{load_run, problem_for, save_run, GridSpec, Run};
use hjbqvi::mc::{allowance, check_dpp, estimate_value, simulate_path, FieldInterpolator, GridPolicy, StopRule, DEFAULT_ALLOWANCE_C};
use hjbqvi::validate::{validate, ValidationOptions};
use hjbqvi::verify::{run_suite, VerifyOptions};
use hjbqvi::{Region, Result};

#[derive(Parser)]
#[command(name = "hjbqvi", version, about = "Impulse and stochastic control of jump-diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the QVI on a uniform grid and write a run directory.
    Solve(SolveArgs),
    /// Estimate the payoff of a solved policy by Monte Carlo.
    Simulate(SimArgs),
    /// Check the dynamic programming principle against a solved value function.
    CheckDpp(DppArgs),
    /// Run the property suite over a run directory; exit code 0 iff all pass.
    Verify(VerifyArgs),
    /// Sample the standing assumptions of a config.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Node counts `N_x1,...,N_xd,N_t` (no `N_t` with --elliptic or an elliptic config).
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
    /// Solve the stationary problem (parabolic configs need a discount and t-free data).
    #[arg(long)]
    elliptic: bool,
    #[arg(long)]
    tol: Option<f64>,
    /// Strict supersolution parameters, e.g. `q=3,kappa=0.1`.
    #[arg(long)]
    certify_supersolution: Option<String>,
    /// Write the Lévy quadrature rule as CSV.
    #[arg(long)]
    dump_quad: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    /// Config file; defaults to the run directory's copy.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory holding the solved policy.
    #[arg(long, alias = "run")]
    policy: PathBuf,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Starting state, comma separated; the origin by default.
    #[arg(long)]
    x0: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    t0: f64,
    #[arg(long)]
    workers: Option<usize>,
    /// Allowance constant C in `C (sqrt(dt) + h)`.
    #[arg(long, default_value_t = DEFAULT_ALLOWANCE_C)]
    allowance_c: f64,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    mc: MonteCarloArgs,
    /// Per-path CSV output.
    #[arg(long)]
    paths_csv: Option<PathBuf>,
}

#[derive(Args)]
struct DppArgs {
    #[command(flatten)]
    mc: MonteCarloArgs,
    /// `time:t` or `box:w`.
    #[arg(long)]
    stop_rule: StopRule,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    with_supersolution: bool,
    /// Skip the re-solve with lowered data.
    #[arg(long)]
    no_comparison: bool,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 4096)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_supersolution(text: &str) -> std::result::Result<(f64, f64), String> {
    let mut q = None;
    let mut kappa = None;
    for part in text.split(',') {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got '{part}'"))?;
        let v: f64 = v.trim().parse().map_err(|e| format!("{k}: {e}"))?;
        match k.trim() {
            "q" => q = Some(v),
            "kappa" => kappa = Some(v),
            other => return Err(format!("unknown supersolution key '{other}'")),
        }
    }
    match (q, kappa) {
        (Some(q), Some(k)) => Ok((q, k)),
        _ => Err("both q and kappa are required".into()),
    }
}

fn parse_point(text: &str, d: usize) -> std::result::Result<Vec<f64>, String> {
    let x: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    if x.len() != d {
        return Err(format!("x0 needs {d} coordinates, got {}", x.len()));
    }
    Ok(x)
}

fn solve(a: SolveArgs) -> Result<bool> {
    let mut config = Config::load(&a.config)?;
    if let Some(tol) = a.tol {
        config.solver.tol = tol;
    }
    let elliptic = a.elliptic || config.is_elliptic();
    let grid = GridSpec::parse(&a.grid, config.dim(), elliptic)?;
    let sup = match &a.certify_supersolution {
        Some(s) => Some(parse_supersolution(s).map_err(hjbqvi::Error::Config)?),
        None => None,
    };
    if let Some(path) = &a.dump_quad {
        let (_, levy) = config.build()?;
        let mut f = std::fs::File::create(path)?;
        levy.dump_quadrature(&mut f)?;
    }
    let mut run = Run::solve(&config, &grid, sup)?;
    save_run(&a.out, &mut run)?;
    let tol = config.solver.tol;
    let mut out = std::io::stdout().lock();
    writeln!(out, "run_dir: {}", a.out.display())?;
    writeln!(out, "config_hash: {}", run.manifest.config_hash)?;
    writeln!(out, "mode: {}", if run.is_elliptic() { "elliptic" } else { "parabolic" })?;
    writeln!(out, "levels: {}", run.levels.len())?;
    writeln!(out, "solve_seconds: {:.3}", run.manifest.timings.get("solve").copied().unwrap_or(0.0))?;
    let certs = &run.certificate.certificates;
    let interior = certs.iter().map(|c| c.interior_residual).fold(0.0, f64::max);
    let boundary = certs.iter().map(|c| c.boundary_residual).fold(0.0, f64::max);
    writeln!(out, "max_interior_residual: {interior:.3e}")?;
    writeln!(out, "max_boundary_residual: {boundary:.3e}")?;
    let p0 = &run.policies[0];
    writeln!(
        out,
        "initial_policy: continuation={} intervention={} stopped={}",
        p0.count(Region::Continuation),
        p0.count(Region::Intervention),
        p0.count(Region::Stopped)
    )?;
    if let Some(s) = &run.manifest.supersolution {
        writeln!(
            out,
            "supersolution: w1={} w2={} q={} kappa_tilde={} margin={:.4e} kappa={}",
            s.params.w1, s.params.w2, s.params.q, s.params.kappa_tilde, s.margin, s.kappa
        )?;
    }
    let ok = certs.iter().all(|c| c.passes(tol));
    writeln!(out, "certificate: {}", if ok { "pass" } else { "fail" })?;
    Ok(ok)
}

struct Loaded {
    run: Run,
    config: Config,
}

fn load(mc: &MonteCarloArgs) -> Result<Loaded> {
    let run = load_run(&mc.policy)?;
    let config = match &mc.config {
        Some(p) => Config::load(p)?,
        None => run.config.clone(),
    };
    if config.hash() != run.manifest.config_hash {
        eprintln!("warning: config differs from the one the policy was solved with");
    }
    Ok(Loaded { run, config })
}

fn point(mc: &MonteCarloArgs, d: usize) -> Result<Vec<f64>> {
    match &mc.x0 {
        Some(s) => parse_point(s, d).map_err(hjbqvi::Error::Config),
        None => Ok(vec![0.0; d]),
    }
}

fn simulate(a: SimArgs) -> Result<bool> {
    let Loaded { run, config } = load(&a.mc)?;
    let (problem, levy) = problem_for(&config, &run.manifest.grid)?;
    let grid = run.grid(&problem)?;
    let strategy = GridPolicy {
        grid: &grid,
        policies: &run.policies,
    };
    let mut opts = config.sim_options(run.manifest.grid.time_steps.unwrap_or(100));
    if let Some(dt) = a.mc.dt {
        opts.dt = dt;
    }
    opts.workers = a.mc.workers.or(opts.workers);
    let paths = a.mc.paths.unwrap_or(config.monte_carlo.paths);
    let seed = a.mc.seed.unwrap_or(config.monte_carlo.seed);
    let x0 = point(&a.mc, config.dim())?;
    let est = estimate_value(&problem, &levy, &strategy, a.mc.t0, &x0, paths, &opts, seed)?;
    let interp = FieldInterpolator {
        problem: &problem,
        grid: &grid,
        levels: &run.levels,
    };
    let v = interp.eval(a.mc.t0, &x0);
    let allow = allowance(a.mc.allowance_c, opts.dt, grid.max_spacing());
    let upper_ok = est.mean <= v + 3.0 * est.std_error + allow;
    let lower_ok = est.mean >= v - 3.0 * est.std_error - allow;
    let mut out = std::io::stdout().lock();
    writeln!(out, "x0: {x0:?}")?;
    writeln!(out, "t0: {}", a.mc.t0)?;
    writeln!(out, "paths: {}", est.paths)?;
    writeln!(out, "seed: {seed}")?;
    writeln!(out, "dt: {}", opts.dt)?;
    writeln!(out, "estimate: {:.6}", est.mean)?;
    writeln!(out, "std_error: {:.6}", est.std_error)?;
    writeln!(out, "solved_value: {v:.6}")?;
    writeln!(out, "allowance: {allow:.6}")?;
    writeln!(out, "mean_impulses: {:.4}", est.mean_impulses)?;
    writeln!(out, "exit_fraction: {:.4}", est.exit_fraction)?;
    writeln!(out, "aborted: {}", est.aborted)?;
    writeln!(out, "value_dominates: {}", if upper_ok { "pass" } else { "fail" })?;
    writeln!(out, "policy_near_optimal: {}", if lower_ok { "pass" } else { "fail" })?;
    if let Some(path) = &a.paths_csv {
        write_paths_csv(path, &problem, &levy, &strategy, a.mc.t0, &x0, paths, &opts, seed)?;
    }
    Ok(upper_ok && lower_ok)
}

#[allow(clippy::too_many_arguments)]
fn write_paths_csv(
    path: &Path,
    problem: &hjbqvi::Problem,
    levy: &hjbqvi::LevyModel,
    strategy: &GridPolicy,
    t0: f64,
    x0: &[f64],
    paths: usize,
    opts: &hjbqvi::mc::SimOptions,
    seed: u64,
) -> Result<()> {
    let records: Vec<_> = (0..paths as u64)
        .into_par_iter()
        .map(|s| simulate_path(problem, levy, strategy, t0, x0, opts, seed, s))
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "path", "stop_time", "stop_state", "exited", "aborted", "impulses", "running", "terminal", "impulse_cost", "payoff",
    ])?;
    for (i, r) in records.iter().enumerate() {
        let state = r.stop_state.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            i.to_string(),
            r.stop_time.to_string(),
            state,
            r.exited.to_string(),
            r.aborted.to_string(),
            r.events.len().to_string(),
            r.running.to_string(),
            r.terminal.to_string(),
            r.impulse_total.to_string(),
            r.payoff().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn dpp(a: DppArgs) -> Result<bool> {
    let Loaded { run, config } = load(&a.mc)?;
    let (problem, levy) = problem_for(&config, &run.manifest.grid)?;
    let grid = run.grid(&problem)?;
    let strategy = GridPolicy {
        grid: &grid,
        policies: &run.policies,
    };
    let mut opts = config.sim_options(run.manifest.grid.time_steps.unwrap_or(100));
    if let Some(dt) = a.mc.dt {
        opts.dt = dt;
    }
    opts.workers = a.mc.workers.or(opts.workers);
    let paths = a.mc.paths.unwrap_or(config.monte_carlo.paths);
    let seed = a.mc.seed.unwrap_or(config.monte_carlo.seed);
    let x0 = point(&a.mc, config.dim())?;
    let interp = FieldInterpolator {
        problem: &problem,
        grid: &grid,
        levels: &run.levels,
    };
    let value = |t: f64, x: &[f64]| interp.eval(t, x);
    let r = check_dpp(&problem, &levy, &strategy, &value, a.mc.t0, &x0, a.stop_rule, paths, &opts, seed)?;
    let allow = allowance(a.mc.allowance_c, opts.dt, grid.max_spacing());
    let ok = r.passes(allow);
    let mut out = std::io::stdout().lock();
    writeln!(out, "stop_rule: {:?}", r.rule)?;
    writeln!(out, "x0: {x0:?}")?;
    writeln!(out, "paths: {}", r.paths)?;
    writeln!(out, "value: {:.6}", r.value)?;
    writeln!(out, "estimate: {:.6}", r.estimate)?;
    writeln!(out, "std_error: {:.6}", r.std_error)?;
    writeln!(out, "residual: {:.6}", r.residual)?;
    writeln!(out, "allowance: {allow:.6}")?;
    writeln!(out, "stopped_fraction: {:.4}", r.stopped_fraction)?;
    writeln!(out, "dpp: {}", if ok { "pass" } else { "fail" })?;
    Ok(ok)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let opts = VerifyOptions {
        tol: a.tol,
        with_supersolution: a.with_supersolution,
        comparison: !a.no_comparison,
        ..Default::default()
    };
    let report = run_suite(&a.run, &opts)?;
    print!("{report}");
    let ok = report.all_passed();
    println!("{}", if ok { "all properties pass" } else { "some properties FAIL" });
    Ok(ok)
}

fn validate_cmd(a: ValidateArgs) -> Result<bool> {
    let config = Config::load(&a.config)?;
    let (problem, levy) = config.build()?;
    let report = validate(
        &problem,
        &levy,
        &ValidationOptions {
            samples: a.samples,
            seed: a.seed,
        },
    )?;
    print!("{report}");
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::CheckDpp(a) => dpp(a),
        Command::Verify(a) => verify(a),
        Command::Validate(a) => validate_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
