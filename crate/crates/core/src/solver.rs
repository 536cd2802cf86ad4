//! Backward implicit-Euler time stepping and Howard policy iteration for the
//! discrete min-system
//!
//! ```text
//! inside S:   min( min_β G^β(u),  u - Mu ) = 0,   G^β(u) = s u - L^β u - f^β - s u_next
//! outside S:  min( u - g,         u - Mu ) = 0
//! ```
//!
//! with `s = 1/Δt` in parabolic mode and `s = ρ`, `u_next = 0` in elliptic mode.
//! Every option of the min is affine in u, so each policy gives a linear system
//! and Howard's algorithm converges in finitely many steps on monotone rows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{discretize_all, Generator};
use crate::grid::{Grid, ValueField};
use crate::impulse::{iterate_terminal_with, ImpulseTable};
use crate::levy::LevyModel;
use crate::linalg::{self, CsrMatrix};
use crate::problem::Problem;

/// How the intervention option enters the linear systems.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObstacleCoupling {
    /// Intervention rows `u_i - u(Γ) = K` are part of the linear system.
    #[default]
    Implicit,
    /// `Mu` is frozen at the previous outer iterate, rows become `u_i = ψ_i`.
    Lagged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Residual tolerance of the min-system.
    pub tol: f64,
    pub max_iter: usize,
    /// Outer iterations of the lagged coupling.
    pub max_outer: usize,
    pub coupling: ObstacleCoupling,
    pub terminal_max_sweeps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 200,
            max_outer: 1000,
            coupling: ObstacleCoupling::Implicit,
            terminal_max_sweeps: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum NodeAction {
    Continue { control: usize },
    Intervene { candidate: usize, zeta: Vec<f64> },
    /// Outside S, or at maturity: collect g.
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Continuation,
    Intervention,
    Stopped,
}

impl NodeAction {
    pub fn region(&self) -> Region {
        match self {
            NodeAction::Continue { .. } => Region::Continuation,
            NodeAction::Intervene { .. } => Region::Intervention,
            NodeAction::Stop => Region::Stopped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub time: Option<f64>,
    pub actions: Vec<NodeAction>,
}

impl Policy {
    pub fn count(&self, region: Region) -> usize {
        self.actions.iter().filter(|a| a.region() == region).count()
    }
}

/// Residual certificate of one solved level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub level: usize,
    pub time: Option<f64>,
    /// max |min(G, u - Mu)| over inside nodes.
    pub interior_residual: f64,
    /// max |min(u - g, u - Mu)| over outside nodes (and all nodes at maturity).
    pub boundary_residual: f64,
    /// min (u - Mu); `+inf` without impulses.
    pub obstacle_gap: f64,
    pub iterations: usize,
    /// max |F(u)| after each Howard iteration (per outer iteration when lagged).
    pub history: Vec<f64>,
}

impl LevelCertificate {
    pub fn passes(&self, tol: f64) -> bool {
        self.interior_residual <= tol && self.boundary_residual <= tol && self.obstacle_gap >= -tol
    }
}

/// Assembled operators for one time level.
#[derive(Clone, Debug)]
pub struct LevelOps {
    pub time: f64,
    pub generators: Vec<Generator>,
    pub impulses: ImpulseTable,
    pub terminal: Vec<f64>,
    inside: Vec<bool>,
}

/// Candidate is a pure self-loop: it can never be chosen implicitly.
fn self_loop(ops: &LevelOps, i: usize, c: usize) -> bool {
    ops.impulses.candidates(i)[c].stencil.weight_of(i) >= 1.0 - 1e-12
}

impl LevelOps {
    /// `G^β_i(u) = s u_i - (L^β u)_i - f^β_i - s u_next_i`.
    #[inline]
    pub fn pde_residual(&self, c: usize, i: usize, u: &[f64], shift: f64, next: Option<&[f64]>) -> f64 {
        let gen = &self.generators[c];
        shift * u[i] - gen.apply_at(i, u) - gen.running[i] - next.map_or(0.0, |v| shift * v[i])
    }

    /// Nodewise residual of the min-system.
    pub fn residual(&self, u: &[f64], shift: f64, next: Option<&[f64]>) -> Vec<f64> {
        (0..u.len())
            .into_par_iter()
            .map(|i| {
                let mu = self.impulses.best(i, u).0;
                let gap = u[i] - mu;
                let other = if self.inside[i] {
                    (0..self.generators.len())
                        .map(|c| self.pde_residual(c, i, u, shift, next))
                        .fold(f64::INFINITY, f64::min)
                } else {
                    u[i] - self.terminal[i]
                };
                other.min(gap)
            })
            .collect()
    }

    /// `min(u - g, u - Mu)` at every node (the maturity condition).
    pub fn terminal_residual(&self, u: &[f64]) -> Vec<f64> {
        (0..u.len())
            .map(|i| (u[i] - self.terminal[i]).min(u[i] - self.impulses.best(i, u).0))
            .collect()
    }

    pub fn intervention(&self, u: &[f64]) -> Vec<f64> {
        self.impulses.apply(u)
    }

    pub fn is_inside(&self, i: usize) -> bool {
        self.inside[i]
    }
}

/// Problem + grid with operator caching for time-homogeneous data.
pub struct Discretization<'a> {
    pub problem: &'a Problem,
    pub levy: &'a LevyModel,
    pub grid: &'a Grid,
    cache: Option<(Vec<Generator>, ImpulseTable)>,
}

impl<'a> Discretization<'a> {
    pub fn new(problem: &'a Problem, levy: &'a LevyModel, grid: &'a Grid) -> Result<Self> {
        let cache = if problem.time_homogeneous {
            let gens = discretize_all(problem, levy, grid, 0.0)?;
            let table = ImpulseTable::build(grid, problem, 0.0)?;
            Some((gens, table))
        } else {
            None
        };
        Ok(Discretization {
            problem,
            levy,
            grid,
            cache,
        })
    }

    pub fn at(&self, t: f64) -> Result<LevelOps> {
        let (generators, impulses) = match &self.cache {
            Some((gens, table)) => {
                let factor = self.problem.weight(t) / self.problem.weight(0.0);
                if factor == 1.0 {
                    (gens.clone(), table.clone())
                } else {
                    (
                        gens.iter().map(|g| g.scaled(t, factor)).collect(),
                        table.scaled(t, factor),
                    )
                }
            }
            None => (
                discretize_all(self.problem, self.levy, self.grid, t)?,
                ImpulseTable::build(self.grid, self.problem, t)?,
            ),
        };
        let mut x = vec![0.0; self.grid.dim()];
        let terminal = (0..self.grid.len())
            .map(|i| {
                self.grid.coords(i, &mut x);
                self.problem.terminal(t, &x)
            })
            .collect();
        Ok(LevelOps {
            time: t,
            generators,
            impulses,
            terminal,
            inside: self.grid.inside_tags().to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Choice {
    Continue(usize),
    Intervene(usize),
    Stop,
}

struct LevelProblem<'a> {
    ops: &'a LevelOps,
    shift: f64,
    next: Option<&'a [f64]>,
    /// Frozen `Mu` for the lagged coupling.
    obstacle: Option<Vec<f64>>,
}

impl LevelProblem<'_> {
    fn option_residual(&self, i: usize, u: &[f64], choice: Choice) -> f64 {
        match choice {
            Choice::Continue(c) => self.ops.pde_residual(c, i, u, self.shift, self.next),
            Choice::Intervene(c) => match &self.obstacle {
                Some(psi) => u[i] - psi[i],
                None => u[i] - self.ops.impulses.candidates(i)[c].value(u),
            },
            Choice::Stop => u[i] - self.ops.terminal[i],
        }
    }

    /// Best intervention candidate among those usable in a linear row.
    fn best_candidate(&self, i: usize, u: &[f64]) -> Option<(usize, f64)> {
        let cands = self.ops.impulses.candidates(i);
        let mut best: Option<(usize, f64)> = None;
        for (c, cand) in cands.iter().enumerate() {
            if self.obstacle.is_none() && self_loop(self.ops, i, c) {
                continue;
            }
            let v = cand.value(u);
            if best.is_none_or(|b| v > b.1) {
                best = Some((c, v));
            }
        }
        best
    }

    /// Improved choice at node i; keeps `current` when it is optimal up to rounding.
    /// Also returns the min-system residual at node i.
    fn improve(&self, i: usize, u: &[f64], current: Choice) -> (Choice, f64) {
        let eps = 1e-13 * (1.0 + self.shift.abs() * u[i].abs() + u[i].abs());
        let mut best = current;
        let mut best_r = self.option_residual(i, u, current);
        let mut min_r = best_r;
        let mut consider = |choice: Choice, r: f64| {
            min_r = min_r.min(r);
            if r < best_r - eps {
                best = choice;
                best_r = r;
            }
        };
        if let Some((c, _)) = self.best_candidate(i, u) {
            let choice = Choice::Intervene(c);
            consider(choice, self.option_residual(i, u, choice));
        }
        if self.ops.inside[i] {
            for c in 0..self.ops.generators.len() {
                let choice = Choice::Continue(c);
                consider(choice, self.option_residual(i, u, choice));
            }
        } else {
            consider(Choice::Stop, self.option_residual(i, u, Choice::Stop));
        }
        (best, min_r)
    }

    fn system(&self, policy: &[Choice]) -> (CsrMatrix, Vec<f64>) {
        let n = policy.len();
        let mut a = CsrMatrix::with_capacity(n, 5 * n);
        let mut b = vec![0.0; n];
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (i, choice) in policy.iter().enumerate() {
            row.clear();
            match *choice {
                Choice::Continue(c) => {
                    let gen = &self.ops.generators[c];
                    let r = &gen.rows[i];
                    row.push((i, self.shift - r.diag));
                    row.extend(r.terms.iter().map(|&(j, w)| (j, -w)));
                    b[i] = gen.running[i] + r.constant + self.next.map_or(0.0, |v| self.shift * v[i]);
                }
                Choice::Intervene(c) => match &self.obstacle {
                    Some(psi) => {
                        row.push((i, 1.0));
                        b[i] = psi[i];
                    }
                    None => {
                        let cand = &self.ops.impulses.candidates(i)[c];
                        row.push((i, 1.0));
                        row.extend(cand.stencil.terms.iter().map(|&(j, w)| (j, -w)));
                        b[i] = cand.cost + cand.stencil.constant;
                    }
                },
                Choice::Stop => {
                    row.push((i, 1.0));
                    b[i] = self.ops.terminal[i];
                }
            }
            a.push_row(&mut row);
        }
        (a, b)
    }

    fn howard(&self, u0: &[f64], policy: &mut [Choice], opts: &SolverOptions) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut u = u0.to_vec();
        let mut history = Vec::new();
        // Linear residuals far below the certificate tolerance.
        let lin_tol = (opts.tol * 1e-3).max(1e-14);
        for _ in 0..opts.max_iter {
            let (a, b) = self.system(policy);
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            u = linalg::solve(&a, &b, &u, lin_tol * scale)?;
            let (improved, residual): (Vec<Choice>, Vec<f64>) = (0..policy.len())
                .into_par_iter()
                .map(|i| self.improve(i, &u, policy[i]))
                .unzip();
            let changes = improved.iter().zip(policy.iter()).filter(|(a, b)| a != b).count();
            history.push(residual.iter().fold(0.0f64, |m, r| m.max(r.abs())));
            if changes == 0 {
                return Ok((u, history));
            }
            policy.copy_from_slice(&improved);
        }
        Err(Error::PolicyIteration {
            iterations: opts.max_iter,
            history,
        })
    }

    fn solve(&mut self, u0: &[f64], policy: &mut [Choice], opts: &SolverOptions) -> Result<(Vec<f64>, usize, Vec<f64>)> {
        match opts.coupling {
            ObstacleCoupling::Implicit => {
                let (u, history) = self.howard(u0, policy, opts)?;
                Ok((u, history.len(), history))
            }
            ObstacleCoupling::Lagged => {
                let mut u = u0.to_vec();
                let mut history = Vec::new();
                for outer in 1..=opts.max_outer {
                    self.obstacle = Some(self.ops.intervention(&u));
                    let (next, _) = self.howard(&u, policy, opts)?;
                    let diff = next.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    history.push(diff);
                    u = next;
                    if diff <= opts.tol {
                        self.obstacle = None;
                        return Ok((u, outer, history));
                    }
                }
                Err(Error::PolicyIteration {
                    iterations: opts.max_outer,
                    history,
                })
            }
        }
    }
}

fn default_policy(grid: &Grid) -> Vec<Choice> {
    (0..grid.len())
        .map(|i| if grid.is_inside(i) { Choice::Continue(0) } else { Choice::Stop })
        .collect()
}

/// Public policy with the tie rule applied: `u - Mu <= tie` counts as intervention.
fn export_policy(ops: &LevelOps, u: &[f64], choices: &[Choice], time: Option<f64>, tie: f64) -> Policy {
    let actions = choices
        .iter()
        .enumerate()
        .map(|(i, choice)| {
            let (mu, arg) = ops.impulses.best(i, u);
            if let Some(c) = arg {
                if u[i] - mu <= tie {
                    return NodeAction::Intervene {
                        candidate: c,
                        zeta: ops.impulses.candidates(i)[c].zeta.clone(),
                    };
                }
            }
            match *choice {
                Choice::Continue(c) => NodeAction::Continue { control: c },
                Choice::Intervene(c) => NodeAction::Intervene {
                    candidate: c,
                    zeta: ops.impulses.candidates(i)[c].zeta.clone(),
                },
                Choice::Stop => NodeAction::Stop,
            }
        })
        .collect();
    Policy { time, actions }
}

fn certificate(ops: &LevelOps, u: &[f64], residual: &[f64], level: usize, time: Option<f64>, iterations: usize, history: Vec<f64>) -> LevelCertificate {
    let mut interior: f64 = 0.0;
    let mut boundary: f64 = 0.0;
    for (i, r) in residual.iter().enumerate() {
        if ops.is_inside(i) {
            interior = interior.max(r.abs());
        } else {
            boundary = boundary.max(r.abs());
        }
    }
    let gap = ops
        .intervention(u)
        .iter()
        .zip(u)
        .map(|(m, v)| v - m)
        .fold(f64::INFINITY, f64::min);
    LevelCertificate {
        level,
        time,
        interior_residual: interior,
        boundary_residual: boundary,
        obstacle_gap: gap,
        iterations,
        history,
    }
}

#[derive(Clone, Debug)]
pub struct ParabolicSolution {
    /// `levels[n]` is the field at `times[n]`; the last entry is the maturity field.
    pub levels: Vec<ValueField>,
    pub policies: Vec<Policy>,
    pub certificates: Vec<LevelCertificate>,
    pub terminal_sweeps: usize,
    pub seconds: f64,
}

impl ParabolicSolution {
    pub fn initial(&self) -> &ValueField {
        &self.levels[0]
    }
}

#[derive(Clone, Debug)]
pub struct EllipticSolution {
    pub value: ValueField,
    pub policy: Policy,
    pub certificate: LevelCertificate,
    /// Largest row excess of the discrete generator; rho must exceed it.
    pub excess: f64,
    pub seconds: f64,
}

/// Solves the maturity condition `u = sup(g, Mg, M²g, ...)` at time `t`.
pub fn terminal_level(disc: &Discretization, t: f64, opts: &SolverOptions) -> Result<(ValueField, Policy, LevelCertificate, usize)> {
    let ops = disc.at(t)?;
    let g = ValueField::new(ops.terminal.clone(), Some(t));
    let it = iterate_terminal_with(&ops.impulses, &g, opts.terminal_max_sweeps)?;
    let u = it.field.values.clone();
    let actions = it
        .argmax
        .iter()
        .enumerate()
        .map(|(i, a)| match a {
            Some(c) => NodeAction::Intervene {
                candidate: *c,
                zeta: ops.impulses.candidates(i)[*c].zeta.clone(),
            },
            None => NodeAction::Stop,
        })
        .collect();
    let residual = ops.terminal_residual(&u);
    let mut cert = certificate(&ops, &u, &residual, 0, Some(t), it.sweeps, Vec::new());
    cert.boundary_residual = residual.iter().fold(0.0, |m, r| m.max(r.abs()));
    cert.interior_residual = 0.0;
    let mut field = it.field;
    field.growth_constant = disc.grid.growth_constant(&field.values, disc.problem.growth_p);
    Ok((field, Policy { time: Some(t), actions }, cert, it.sweeps))
}

/// One implicit step from `u_next` at `t + dt` to `t`.
pub fn step_parabolic(
    disc: &Discretization,
    u_next: &ValueField,
    t: f64,
    dt: f64,
    opts: &SolverOptions,
    warm: Option<&Policy>,
) -> Result<(ValueField, Policy, LevelCertificate)> {
    let ops = disc.at(t)?;
    let mut lp = LevelProblem {
        ops: &ops,
        shift: 1.0 / dt,
        next: Some(&u_next.values),
        obstacle: None,
    };
    let mut choices = warm.map_or_else(|| default_policy(disc.grid), |p| warm_choices(disc.grid, &ops, p));
    let (u, iterations, history) = lp.solve(&u_next.values, &mut choices, opts)?;
    let residual = ops.residual(&u, 1.0 / dt, Some(&u_next.values));
    let cert = certificate(&ops, &u, &residual, 0, Some(t), iterations, history);
    let policy = export_policy(&ops, &u, &choices, Some(t), opts.tol);
    let mut field = ValueField::new(u, Some(t));
    field.iterations = iterations;
    field.residual = cert.interior_residual.max(cert.boundary_residual);
    Ok((field, policy, cert))
}

fn warm_choices(grid: &Grid, ops: &LevelOps, policy: &Policy) -> Vec<Choice> {
    policy
        .actions
        .iter()
        .enumerate()
        .map(|(i, a)| match a {
            NodeAction::Continue { control } if grid.is_inside(i) => Choice::Continue(*control),
            NodeAction::Intervene { candidate, .. }
                if *candidate < ops.impulses.candidates(i).len() && !self_loop(ops, i, *candidate) =>
            {
                Choice::Intervene(*candidate)
            }
            _ if grid.is_inside(i) => Choice::Continue(0),
            _ => Choice::Stop,
        })
        .collect()
}

pub fn solve_parabolic(problem: &Problem, levy: &LevyModel, grid: &Grid, opts: &SolverOptions) -> Result<ParabolicSolution> {
    let start = Instant::now();
    let times = grid
        .times()
        .ok_or_else(|| Error::InvalidGrid("parabolic solve needs time levels".into()))?
        .to_vec();
    let disc = Discretization::new(problem, levy, grid)?;
    let n = times.len() - 1;
    let (terminal, tpol, mut tcert, sweeps) =
        terminal_level(&disc, times[n], opts).map_err(|e| Error::at_level(n, e))?;
    tcert.level = n;
    let mut levels = vec![terminal];
    let mut policies = vec![tpol];
    let mut certificates = vec![tcert];
    for k in (0..n).rev() {
        let dt = times[k + 1] - times[k];
        let warm = if k + 1 == n { None } else { policies.last() };
        let (field, policy, mut cert) = step_parabolic(&disc, levels.last().unwrap(), times[k], dt, opts, warm)
            .map_err(|e| Error::at_level(k, e))?;
        cert.level = k;
        levels.push(field);
        policies.push(policy);
        certificates.push(cert);
    }
    levels.reverse();
    policies.reverse();
    certificates.reverse();
    let p = problem.growth_p;
    for f in levels.iter_mut() {
        f.growth_constant = grid.growth_constant(&f.values, p);
        if !f.all_finite() {
            return Err(Error::InvalidProblem("solution contains non-finite values".into()));
        }
    }
    Ok(ParabolicSolution {
        levels,
        policies,
        certificates,
        terminal_sweeps: sweeps,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn solve_elliptic(problem: &Problem, levy: &LevyModel, grid: &Grid, opts: &SolverOptions) -> Result<EllipticSolution> {
    let start = Instant::now();
    let rho = problem
        .horizon
        .rho()
        .ok_or_else(|| Error::InvalidProblem("elliptic solve needs an elliptic problem".into()))?;
    let disc = Discretization::new(problem, levy, grid)?;
    let ops = disc.at(0.0)?;
    let excess = ops
        .generators
        .iter()
        .map(|g| g.max_excess(grid))
        .fold(f64::NEG_INFINITY, f64::max);
    if !(rho > 0.0) || rho <= excess {
        return Err(Error::DiscountTooSmall { rho, excess });
    }
    let mut lp = LevelProblem {
        ops: &ops,
        shift: rho,
        next: None,
        obstacle: None,
    };
    let mut choices = default_policy(grid);
    let u0: Vec<f64> = ops.terminal.clone();
    let (u, iterations, history) = lp.solve(&u0, &mut choices, opts)?;
    let residual = ops.residual(&u, rho, None);
    let cert = certificate(&ops, &u, &residual, 0, None, iterations, history);
    let policy = export_policy(&ops, &u, &choices, None, opts.tol);
    let mut value = ValueField::new(u, None);
    value.iterations = iterations;
    value.residual = cert.interior_residual.max(cert.boundary_residual);
    value.growth_constant = grid.growth_constant(&value.values, problem.growth_p);
    Ok(EllipticSolution {
        value,
        policy,
        certificate: cert,
        excess,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Recomputes every level's residuals from stored fields.
pub fn certify_parabolic(problem: &Problem, levy: &LevyModel, grid: &Grid, levels: &[ValueField]) -> Result<Vec<LevelCertificate>> {
    let times = grid
        .times()
        .ok_or_else(|| Error::InvalidGrid("parabolic certificate needs time levels".into()))?;
    if times.len() != levels.len() {
        return Err(Error::InvalidGrid(format!(
            "{} stored levels for {} time levels",
            levels.len(),
            times.len()
        )));
    }
    let disc = Discretization::new(problem, levy, grid)?;
    let n = times.len() - 1;
    let mut out = Vec::with_capacity(levels.len());
    for k in 0..=n {
        let ops = disc.at(times[k])?;
        let u = &levels[k].values;
        let mut cert = if k == n {
            let r = ops.terminal_residual(u);
            let mut c = certificate(&ops, u, &r, k, Some(times[k]), 0, Vec::new());
            c.interior_residual = 0.0;
            c.boundary_residual = r.iter().fold(0.0, |m, v| m.max(v.abs()));
            c
        } else {
            let shift = 1.0 / (times[k + 1] - times[k]);
            let r = ops.residual(u, shift, Some(&levels[k + 1].values));
            certificate(&ops, u, &r, k, Some(times[k]), 0, Vec::new())
        };
        cert.level = k;
        out.push(cert);
    }
    Ok(out)
}

pub fn certify_elliptic(problem: &Problem, levy: &LevyModel, grid: &Grid, value: &ValueField) -> Result<LevelCertificate> {
    let rho = problem
        .horizon
        .rho()
        .ok_or_else(|| Error::InvalidProblem("elliptic certificate needs an elliptic problem".into()))?;
    let disc = Discretization::new(problem, levy, grid)?;
    let ops = disc.at(0.0)?;
    let r = ops.residual(&value.values, rho, None);
    Ok(certificate(&ops, &value.values, &r, 0, None, 0, Vec::new()))
}

/// Elliptic solve vs the lifted parabolic solve at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformReport {
    /// max |w - u(0, .)| over inside nodes on the finest time grid.
    pub difference: f64,
    /// Richardson estimate of the time-discretization error of the finest parabolic solve.
    pub time_error: f64,
    /// `max |e^{-ρT} w - u(T, .)|`.
    pub horizon_error: f64,
    pub estimate: f64,
    pub passes: bool,
}

/// Compares `solve_elliptic` with the lifted problem solved on `[0, T]` with `steps` and
/// `2 steps` levels. Both share the spatial operator, so the estimate consists of the
/// time-stepping error (Richardson) and the truncated-horizon term
/// `max |e^{-ρT} w - u(T, .)|`, which bounds the effect of the maturity data at t = 0.
pub fn transform_consistency(
    problem: &Problem,
    levy: &LevyModel,
    nodes: &[usize],
    maturity: f64,
    steps: usize,
    opts: &SolverOptions,
) -> Result<TransformReport> {
    let space = Grid::uniform(problem, nodes, None)?;
    let ell = solve_elliptic(problem, levy, &space, opts)?;
    let rho = problem.horizon.rho().unwrap_or(0.0);
    let lifted = problem.to_parabolic(maturity)?;
    let coarse = Grid::new(&lifted, space.axes().to_vec(), Some(crate::grid::linspace(0.0, maturity, steps + 1)))?;
    let fine = Grid::new(&lifted, space.axes().to_vec(), Some(crate::grid::linspace(0.0, maturity, 2 * steps + 1)))?;
    let u1 = solve_parabolic(&lifted, levy, &coarse, opts)?;
    let u2 = solve_parabolic(&lifted, levy, &fine, opts)?;
    let (a, b, w) = (&u1.levels[0].values, &u2.levels[0].values, &ell.value.values);
    let mut diff: f64 = 0.0;
    let mut rich: f64 = 0.0;
    let mut horizon_error: f64 = 0.0;
    let damp = (-rho * maturity).exp();
    let last = &u2.levels[u2.levels.len() - 1].values;
    for i in 0..space.len() {
        if !space.is_inside(i) {
            continue;
        }
        diff = diff.max((b[i] - w[i]).abs());
        // first order in time: error of the fine solve ~ |u_fine - u_coarse|
        rich = rich.max((b[i] - a[i]).abs());
        horizon_error = horizon_error.max((damp * w[i] - last[i]).abs());
    }
    let estimate = rich + horizon_error;
    Ok(TransformReport {
        difference: diff,
        time_error: rich,
        horizon_error,
        estimate,
        passes: diff <= 2.0 * estimate.max(opts.tol),
    })
}
