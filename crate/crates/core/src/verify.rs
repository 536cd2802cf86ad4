//! Property suite over a persisted run.
//!
//! Every check reads only the run directory: the config rebuilds the problem, the
//! manifest rebuilds the grid, and the stored fields are the objects under test.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::impulse::{iterate_m_terminal, ImpulseTable};
use crate::io::run::{load_run, Run};
use crate::levy::LevyModel;
use crate::problem::Problem;
use crate::solver::{certify_elliptic, certify_parabolic, solve_elliptic, solve_parabolic, SolverOptions};
use crate::supersolution::perturbed_margin;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Residual tolerance; the run's solver tolerance when absent.
    pub tol: Option<f64>,
    /// Tolerance of the perturbed supersolution check.
    pub perturbed_tol: f64,
    pub with_supersolution: bool,
    /// Re-solve with lowered data for the comparison check.
    pub comparison: bool,
    pub perturbed_m: Vec<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            tol: None,
            perturbed_tol: 1e-8,
            with_supersolution: false,
            comparison: true,
            perturbed_m: vec![2.0, 10.0, 100.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub name: String,
    pub passed: bool,
    /// Signed slack: non-negative when the property holds with room to spare.
    pub margin: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub properties: Vec<PropertyResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }

    fn push(&mut self, name: &str, margin: f64, tolerance: f64, detail: String) {
        self.properties.push(PropertyResult {
            name: name.to_string(),
            passed: margin >= -tolerance,
            margin,
            tolerance,
            detail,
        });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.properties {
            writeln!(
                f,
                "{:<4} {:<28} margin {:>12.4e}  tol {:>9.2e}  {}",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.margin,
                p.tolerance,
                p.detail
            )?;
        }
        Ok(())
    }
}

fn times_of(grid: &Grid, run: &Run) -> Vec<f64> {
    match grid.times() {
        Some(t) => t.to_vec(),
        None => vec![0.0; run.levels.len()],
    }
}

/// Deterministic non-negative bump used to probe monotonicity and convexity.
fn bump(i: usize, scale: f64) -> f64 {
    scale * ((i * 7919) % 13) as f64 / 13.0
}

fn min_of(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(f64::INFINITY, f64::min)
}

/// `M` is monotone and convex on the stored fields.
fn m_algebra(tables: &[ImpulseTable], levels: &[ValueField], tol: f64, report: &mut Report) {
    let mut mono = f64::INFINITY;
    let mut conv = f64::INFINITY;
    for (table, v) in tables.iter().zip(levels) {
        let u = &v.values;
        let scale = u.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let up: Vec<f64> = u.iter().enumerate().map(|(i, x)| x + bump(i, scale)).collect();
        let alt: Vec<f64> = u.iter().enumerate().map(|(i, x)| x - bump(i + 5, scale) + bump(i, scale)).collect();
        let (mu, mup, malt) = (table.apply(u), table.apply(&up), table.apply(&alt));
        let mix: Vec<f64> = u.iter().zip(&alt).map(|(a, b)| 0.3 * a + 0.7 * b).collect();
        let mmix = table.apply(&mix);
        for i in 0..u.len() {
            if mu[i] == f64::NEG_INFINITY {
                continue;
            }
            mono = mono.min(mup[i] - mu[i]);
            conv = conv.min(0.3 * mu[i] + 0.7 * malt[i] - mmix[i]);
        }
    }
    let none = mono == f64::INFINITY;
    let detail = |what: &str| if none { "no impulses".to_string() } else { what.to_string() };
    report.push("m_monotone", if none { 0.0 } else { mono }, tol, detail("min(M(u+b) - Mu), b >= 0"));
    report.push("m_convex", if none { 0.0 } else { conv }, tol, detail("min(0.3 Mu + 0.7 Mv - M(0.3u + 0.7v))"));
}

/// Grid modulus of `Mu`: between adjacent nodes with identical candidate sets,
/// `|Mu_i - Mu_j| <= max_ζ |(u(Γ_i) + K_i) - (u(Γ_j) + K_j)|`.
fn m_modulus(grid: &Grid, tables: &[ImpulseTable], levels: &[ValueField], tol: f64, report: &mut Report) {
    let mut slack = f64::INFINITY;
    let mut pairs = 0usize;
    let mut worst_ratio: f64 = 0.0;
    for (table, v) in tables.iter().zip(levels) {
        if table.is_empty() {
            continue;
        }
        let u = &v.values;
        let shape = grid.shape();
        for i in 0..grid.len() {
            for (k, &n) in shape.iter().enumerate() {
                if grid.axis_index(i, k) + 1 >= n {
                    continue;
                }
                let j = i + grid.stride(k);
                let (ci, cj) = (table.candidates(i), table.candidates(j));
                if ci.is_empty() || ci.len() != cj.len() || ci.iter().zip(cj).any(|(a, b)| a.zeta != b.zeta) {
                    continue;
                }
                let bound = ci
                    .iter()
                    .zip(cj)
                    .map(|(a, b)| (a.value(u) - b.value(u)).abs())
                    .fold(0.0, f64::max);
                let diff = (table.best(i, u).0 - table.best(j, u).0).abs();
                slack = slack.min(bound - diff);
                if bound > 0.0 {
                    worst_ratio = worst_ratio.max(diff / bound);
                }
                pairs += 1;
            }
        }
    }
    let (margin, detail) = if pairs == 0 {
        (0.0, "no comparable adjacent pairs".to_string())
    } else {
        (slack, format!("{pairs} adjacent pairs, max |ΔMu|/bound = {worst_ratio:.3}"))
    };
    report.push("m_adjacent_modulus", margin, tol, detail);
}

fn residual_certificates(problem: &Problem, levy: &LevyModel, grid: &Grid, run: &Run, tol: f64, report: &mut Report) -> Result<()> {
    let certs = if run.is_elliptic() {
        vec![certify_elliptic(problem, levy, grid, &run.levels[0])?]
    } else {
        certify_parabolic(problem, levy, grid, &run.levels)?
    };
    let interior = certs.iter().map(|c| c.interior_residual).fold(0.0, f64::max);
    let boundary = certs.iter().map(|c| c.boundary_residual).fold(0.0, f64::max);
    let stored_match = certs
        .iter()
        .zip(&run.certificate.certificates)
        .map(|(a, b)| (a.interior_residual - b.interior_residual).abs().max((a.boundary_residual - b.boundary_residual).abs()))
        .fold(0.0, f64::max);
    report.push(
        "residual_interior",
        tol - interior,
        0.0,
        format!("max |min(G, u - Mu)| = {interior:.3e} over {} level(s)", certs.len()),
    );
    report.push("residual_boundary", tol - boundary, 0.0, format!("max |min(u - g, u - Mu)| = {boundary:.3e}"));
    report.push(
        "certificate_reproducible",
        tol - stored_match,
        0.0,
        format!("stored vs recomputed residuals differ by {stored_match:.3e}"),
    );
    Ok(())
}

/// Outside S and at maturity the holder may do nothing: `u >= g` and `u >= Mu`.
fn boundary_conditions(grid: &Grid, tables: &[ImpulseTable], terminals: &[Vec<f64>], run: &Run, tol: f64, report: &mut Report) {
    let last = run.levels.len() - 1;
    let mut slack = f64::INFINITY;
    let mut nodes = 0usize;
    for (lvl, v) in run.levels.iter().enumerate() {
        let maturity = !run.is_elliptic() && lvl == last;
        let u = &v.values;
        let mu = tables[lvl].apply(u);
        for i in 0..grid.len() {
            if grid.is_inside(i) && !maturity {
                continue;
            }
            slack = slack.min(u[i] - terminals[lvl][i]).min(u[i] - mu[i]);
            nodes += 1;
        }
    }
    let margin = if nodes == 0 { 0.0 } else { slack };
    report.push("boundary_can_do_nothing", margin, tol, format!("min(u - g, u - Mu) over {nodes} boundary/maturity nodes"));
}

/// The maturity level equals `sup(g, Mg, M²g, ...)`.
fn terminal_sup(problem: &Problem, grid: &Grid, run: &Run, opts: &SolverOptions, tol: f64, report: &mut Report) -> Result<()> {
    if run.is_elliptic() {
        return Ok(());
    }
    let times = grid.times().unwrap();
    let t = *times.last().unwrap();
    let g = ValueField::from_fn(grid, Some(t), |x| problem.terminal(t, x));
    let it = iterate_m_terminal(grid, &g, problem, t, opts.terminal_max_sweeps)?;
    let u = &run.levels[run.levels.len() - 1];
    let diff = it.field.max_abs_diff(u);
    report.push("terminal_sup", tol - diff, 0.0, format!("max |u(T) - sup_n M^n g| = {diff:.3e} ({} sweeps)", it.sweeps));
    Ok(())
}

/// Lowering f and g by one lowers the solution: `v(f-1, g-1) <= v + tol`.
fn comparison(problem: &Problem, levy: &LevyModel, grid: &Grid, run: &Run, opts: &SolverOptions, tol: f64, report: &mut Report) -> Result<()> {
    let f = problem.running_fn();
    let g = problem.terminal_fn();
    let lower = problem.with_payoff(Arc::new(move |t, x, b| f(t, x, b) - 1.0), Arc::new(move |t, x| g(t, x) - 1.0));
    let lowered: Vec<ValueField> = if run.is_elliptic() {
        vec![solve_elliptic(&lower, levy, grid, opts)?.value]
    } else {
        solve_parabolic(&lower, levy, grid, opts)?.levels
    };
    let mut slack = f64::INFINITY;
    for (a, b) in lowered.iter().zip(&run.levels) {
        slack = slack.min(min_of(a.values.iter().zip(&b.values).map(|(x, y)| y - x)));
    }
    report.push("comparison", slack, tol, "min(v - v_lowered) with f - 1, g - 1".into());
    Ok(())
}

fn perturbation_checks(problem: &Problem, levy: &LevyModel, grid: &Grid, run: &Run, opts: &VerifyOptions, report: &mut Report) -> Result<()> {
    let (Some(rec), Some(w)) = (&run.manifest.supersolution, &run.supersolution) else {
        return Err(Error::MissingArtifact(Path::new(crate::io::run::SUPERSOLUTION_BIN).to_path_buf()));
    };
    report.push(
        "supersolution_margin",
        rec.margin - rec.kappa,
        0.0,
        format!("min F(w) = {:.4e}, kappa = {}", rec.margin, rec.kappa),
    );
    for &m in &opts.perturbed_m {
        let margin = perturbed_margin(problem, levy, grid, &run.levels, w, rec.kappa, m)?;
        report.push(
            &format!("perturbed_supersolution_m{m}"),
            margin,
            opts.perturbed_tol,
            format!("min F(v_m) - kappa/m at m = {m}"),
        );
    }
    Ok(())
}

/// Runs every property on an in-memory run (as loaded from disk).
pub fn check_run(run: &Run, opts: &VerifyOptions) -> Result<Report> {
    let (problem, levy) = run.problem()?;
    let grid = run.grid(&problem)?;
    let solver = run.manifest.solver.clone();
    let tol = opts.tol.unwrap_or(solver.tol);
    let times = times_of(&grid, run);
    let built: Vec<(ImpulseTable, Vec<f64>)> = times
        .par_iter()
        .map(|&t| {
            let table = ImpulseTable::build(&grid, &problem, t)?;
            let g = ValueField::from_fn(&grid, Some(t), |x| problem.terminal(t, x)).values;
            Ok((table, g))
        })
        .collect::<Result<_>>()?;
    let (tables, terminals): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let mut report = Report::default();
    m_algebra(&tables, &run.levels, tol, &mut report);
    m_modulus(&grid, &tables, &run.levels, tol, &mut report);
    residual_certificates(&problem, &levy, &grid, run, tol, &mut report)?;
    boundary_conditions(&grid, &tables, &terminals, run, tol, &mut report);
    terminal_sup(&problem, &grid, run, &solver, tol, &mut report)?;
    if opts.comparison {
        comparison(&problem, &levy, &grid, run, &solver, tol, &mut report)?;
    }
    if opts.with_supersolution {
        perturbation_checks(&problem, &levy, &grid, run, opts, &mut report)?;
    }
    Ok(report)
}

/// Loads `run_dir` (verifying checksums) and runs the suite.
pub fn run_suite(run_dir: &Path, opts: &VerifyOptions) -> Result<Report> {
    let run = load_run(run_dir)?;
    check_run(&run, opts)
}
