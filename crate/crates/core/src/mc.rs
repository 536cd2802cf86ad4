//! Euler-Maruyama simulation of the impulse-controlled jump-diffusion, policy
//! evaluation and dynamic-programming checks against a solved field.
//!
//! Each path draws from its own ChaCha stream (`seed`, stream = path index), and
//! sums are reduced over the ordered path list, so estimates do not depend on
//! the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::levy::LevyModel;
use crate::problem::{norm, Problem};
use crate::solver::{NodeAction, Policy};

/// Value function used to close a path at a stopping time.
pub type ValueFn<'a> = dyn Fn(f64, &[f64]) -> f64 + Sync + 'a;

/// What the controller does at a step boundary.
#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Continue(usize),
    Intervene(Vec<f64>),
}

pub trait Strategy: Sync {
    fn decide(&self, t: f64, x: &[f64]) -> Decision;
}

impl<F> Strategy for F
where
    F: Fn(f64, &[f64]) -> Decision + Sync,
{
    fn decide(&self, t: f64, x: &[f64]) -> Decision {
        self(t, x)
    }
}

/// Solver policy evaluated at the nearest node of the latest level `t_n <= t`.
pub struct GridPolicy<'a> {
    pub grid: &'a Grid,
    pub policies: &'a [Policy],
}

impl GridPolicy<'_> {
    fn level(&self, t: f64) -> usize {
        match self.grid.times() {
            Some(ts) => {
                let eps = 1e-9 * ts[ts.len() - 1].abs().max(1.0);
                ts.partition_point(|&s| s <= t + eps).saturating_sub(1).min(self.policies.len() - 1)
            }
            None => 0,
        }
    }
}

impl Strategy for GridPolicy<'_> {
    fn decide(&self, t: f64, x: &[f64]) -> Decision {
        let pol = &self.policies[self.level(t)];
        match &pol.actions[self.grid.nearest(x)] {
            NodeAction::Continue { control } => Decision::Continue(*control),
            NodeAction::Intervene { zeta, .. } => Decision::Intervene(zeta.clone()),
            NodeAction::Stop => Decision::Continue(0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    pub dt: f64,
    pub max_impulses_per_step: usize,
    /// Simulation horizon for elliptic problems (payoffs discounted by `e^{-ρt}`).
    pub horizon_cap: Option<f64>,
    pub record_trajectory: bool,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-2,
            max_impulses_per_step: 16,
            horizon_cap: None,
            record_trajectory: false,
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulseEvent {
    pub time: f64,
    /// State just before the impulse (after any jump of the preceding step).
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Discounted cost K as accrued.
    pub cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub events: Vec<ImpulseEvent>,
    pub stop_time: f64,
    pub stop_state: Vec<f64>,
    /// Left S (post-impulse) before the horizon.
    pub exited: bool,
    /// Stopped by the DPP stopping rule.
    pub stopped_by_rule: bool,
    pub running: f64,
    /// g at exit/maturity, or v at the stopping rule.
    pub terminal: f64,
    pub impulse_total: f64,
    pub aborted: bool,
}

impl PathRecord {
    pub fn payoff(&self) -> f64 {
        self.running + self.terminal + self.impulse_total
    }

    /// Σ K recomputed from the event list.
    pub fn event_cost(&self) -> f64 {
        self.events.iter().map(|e| e.cost).sum()
    }
}

/// Bounded stopping rules for the DPP check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StopRule {
    /// Deterministic time `t̃` (capped at maturity).
    Time { t: f64 },
    /// First exit from the cube of half-width `w` around the start point.
    Box { half_width: f64 },
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, val) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("stop rule `{s}` must be time:<t> or box:<w>")))?;
        let v: f64 = val
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("stop rule value `{val}` is not a number")))?;
        match kind.trim() {
            "time" => Ok(StopRule::Time { t: v }),
            "box" if v > 0.0 => Ok(StopRule::Box { half_width: v }),
            _ => Err(Error::Config(format!("unknown stop rule `{s}`"))),
        }
    }
}

struct Ctx<'a> {
    problem: &'a Problem,
    levy: &'a LevyModel,
    strategy: &'a dyn Strategy,
    opts: &'a SimOptions,
    horizon: f64,
    /// `e^{-ρt}` for elliptic problems; parabolic data carry their own weight.
    rho: f64,
    guard: f64,
}

impl<'a> Ctx<'a> {
    fn new(problem: &'a Problem, levy: &'a LevyModel, strategy: &'a dyn Strategy, opts: &'a SimOptions) -> Result<Self> {
        if !(opts.dt > 0.0) {
            return Err(Error::MonteCarlo(format!("dt must be positive, got {}", opts.dt)));
        }
        let (horizon, rho) = match problem.horizon {
            crate::problem::Horizon::Parabolic { maturity } => (maturity, 0.0),
            crate::problem::Horizon::Elliptic { rho } => {
                let cap = opts.horizon_cap.unwrap_or_else(|| {
                    // e^{-ρ cap} = 1e-8
                    if rho > 0.0 {
                        18.5 / rho
                    } else {
                        100.0
                    }
                });
                (cap, rho)
            }
        };
        let guard = 1e3 * problem.domain.diameter().max(1.0);
        Ok(Ctx {
            problem,
            levy,
            strategy,
            opts,
            horizon,
            rho,
            guard,
        })
    }

    fn weight(&self, t: f64) -> f64 {
        if self.rho > 0.0 {
            (-self.rho * t).exp()
        } else {
            1.0
        }
    }

    fn run(
        &self,
        t0: f64,
        x0: &[f64],
        stream: u64,
        seed: u64,
        stop: Option<(&StopRule, &ValueFn<'_>)>,
    ) -> PathRecord {
        let p = self.problem;
        let d = p.dim_x;
        let m = p.dim_w;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut rec = PathRecord::default();
        let mut x = x0.to_vec();
        let mut t = t0;
        let mut mu = vec![0.0; d];
        let mut sigma = vec![0.0; d * m];
        let mut jump = vec![0.0; d];
        let mut dw = vec![0.0; m];
        let mut y = vec![0.0; d];
        let eps = 1e-9 * self.opts.dt;
        let mut steps = 0u64;
        loop {
            if self.opts.record_trajectory {
                rec.times.push(t);
                rec.states.push(x.clone());
            }
            let mut control = 0;
            for k in 0..=self.opts.max_impulses_per_step {
                match self.strategy.decide(t, &x) {
                    Decision::Continue(c) => {
                        control = c;
                        break;
                    }
                    Decision::Intervene(_) if k == self.opts.max_impulses_per_step => break,
                    Decision::Intervene(zeta) => {
                        p.impulse_target(t, &x, &zeta, &mut y);
                        let cost = self.weight(t) * p.impulse_cost(t, &x, &zeta);
                        rec.impulse_total += cost;
                        rec.events.push(ImpulseEvent {
                            time: t,
                            pre: x.clone(),
                            post: y.clone(),
                            zeta,
                            cost,
                        });
                        x.copy_from_slice(&y);
                    }
                }
            }
            let finish = |rec: &mut PathRecord, x: &[f64], t: f64, terminal: f64| {
                rec.stop_time = t;
                rec.stop_state = x.to_vec();
                rec.terminal = terminal;
            };
            if !p.domain.contains(&x) {
                rec.exited = true;
                finish(&mut rec, &x, t, self.weight(t) * p.terminal(t, &x));
                return rec;
            }
            if let Some((rule, value)) = stop {
                let hit = match *rule {
                    StopRule::Time { t: s } => t >= s.min(self.horizon) - eps,
                    StopRule::Box { half_width } => x.iter().zip(x0).any(|(a, b)| (a - b).abs() >= half_width),
                };
                if hit && t < self.horizon - eps {
                    rec.stopped_by_rule = true;
                    finish(&mut rec, &x, t, value(t, &x));
                    return rec;
                }
            }
            if t >= self.horizon - eps {
                let g = if self.rho > 0.0 { 0.0 } else { p.terminal(t, &x) };
                finish(&mut rec, &x, t, g);
                return rec;
            }
            let h = self.opts.dt.min(self.horizon - t);
            let beta = &p.controls[control.min(p.controls.len() - 1)];
            rec.running += self.weight(t) * p.running(t, &x, beta) * h;
            p.drift(t, &x, beta, &mut mu);
            p.diffusion(t, &x, beta, &mut sigma);
            let sh = h.sqrt();
            for w in dw.iter_mut() {
                *w = sh * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            self.levy.sample_increment(p, t, &x, beta, h, &mut rng, &mut jump);
            for k in 0..d {
                let diff: f64 = (0..m).map(|r| sigma[k * m + r] * dw[r]).sum();
                x[k] += mu[k] * h + diff + jump[k];
            }
            steps += 1;
            let next = t0 + steps as f64 * self.opts.dt;
            t = if self.horizon - next <= eps { self.horizon } else { next };
            if !x.iter().all(|v| v.is_finite()) || norm(&x) > self.guard {
                rec.aborted = true;
                finish(&mut rec, &x, t, 0.0);
                return rec;
            }
        }
    }
}

/// One path from `(t0, x0)`; `stream` selects the independent random stream.
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    problem: &Problem,
    levy: &LevyModel,
    strategy: &dyn Strategy,
    t0: f64,
    x0: &[f64],
    opts: &SimOptions,
    seed: u64,
    stream: u64,
) -> Result<PathRecord> {
    let ctx = Ctx::new(problem, levy, strategy, opts)?;
    Ok(ctx.run(t0, x0, stream, seed, None))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
    pub aborted: usize,
    pub mean_impulses: f64,
    pub exit_fraction: f64,
}

/// Sum by pairwise halving over a fixed order.
fn tree_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => tree_sum(&v[..n / 2]) + tree_sum(&v[n / 2..]),
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::MonteCarlo(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn summarize(records: &[(f64, usize, bool, bool)]) -> Result<Estimate> {
    let n = records.len();
    let aborted = records.iter().filter(|r| r.2).count();
    if aborted as f64 > 0.01 * n as f64 {
        return Err(Error::MonteCarlo(format!(
            "{aborted} of {n} paths aborted by the explosion guard (limit 1%)"
        )));
    }
    let good: Vec<&(f64, usize, bool, bool)> = records.iter().filter(|r| !r.2).collect();
    let k = good.len() as f64;
    let values: Vec<f64> = good.iter().map(|r| r.0).collect();
    let mean = tree_sum(&values) / k;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if k > 1.0 { tree_sum(&dev) / (k - 1.0) } else { 0.0 };
    let imps: Vec<f64> = good.iter().map(|r| r.1 as f64).collect();
    let exits: Vec<f64> = good.iter().map(|r| if r.3 { 1.0 } else { 0.0 }).collect();
    Ok(Estimate {
        mean,
        std_error: (var / k).sqrt(),
        paths: n,
        aborted,
        mean_impulses: tree_sum(&imps) / k,
        exit_fraction: tree_sum(&exits) / k,
    })
}

/// Mean and standard error of the payoff J under `strategy`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_value(
    problem: &Problem,
    levy: &LevyModel,
    strategy: &dyn Strategy,
    t0: f64,
    x0: &[f64],
    n_paths: usize,
    opts: &SimOptions,
    seed: u64,
) -> Result<Estimate> {
    if n_paths < 100 {
        return Err(Error::MonteCarlo(format!("need at least 100 paths, got {n_paths}")));
    }
    let ctx = Ctx::new(problem, levy, strategy, opts)?;
    let records: Vec<(f64, usize, bool, bool)> = with_pool(opts.workers, || {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|s| {
                let r = ctx.run(t0, x0, s, seed, None);
                (r.payoff(), r.events.len(), r.aborted, r.exited)
            })
            .collect()
    })?;
    summarize(&records)
}

/// Space-multilinear, time-linear interpolation of solved levels.
pub struct FieldInterpolator<'a> {
    pub problem: &'a Problem,
    pub grid: &'a Grid,
    pub levels: &'a [ValueField],
}

impl FieldInterpolator<'_> {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        let Some(ts) = self.grid.times() else {
            return self.grid.evaluate(self.problem, t, &self.levels[0].values, x);
        };
        let n = ts.len() - 1;
        let j = ts.partition_point(|&s| s <= t).clamp(1, n) - 1;
        let theta = ((t - ts[j]) / (ts[j + 1] - ts[j])).clamp(0.0, 1.0);
        let a = self.grid.evaluate(self.problem, ts[j], &self.levels[j].values, x);
        if theta == 0.0 {
            return a;
        }
        let b = self.grid.evaluate(self.problem, ts[j + 1], &self.levels[j + 1].values, x);
        (1.0 - theta) * a + theta * b
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DppReport {
    pub rule: StopRule,
    pub value: f64,
    pub estimate: f64,
    pub std_error: f64,
    /// `estimate - value`.
    pub residual: f64,
    pub stopped_fraction: f64,
    pub paths: usize,
}

impl DppReport {
    pub fn passes(&self, allowance: f64) -> bool {
        self.residual.abs() <= 3.0 * self.std_error + allowance
    }
}

/// `E[∫_t^τ̃ f + Σ_{τ_j ≤ τ̃} K + v(τ̃, X_τ̃)]` against `v(t0, x0)`.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp(
    problem: &Problem,
    levy: &LevyModel,
    strategy: &dyn Strategy,
    value: &ValueFn<'_>,
    t0: f64,
    x0: &[f64],
    rule: StopRule,
    n_paths: usize,
    opts: &SimOptions,
    seed: u64,
) -> Result<DppReport> {
    if n_paths < 100 {
        return Err(Error::MonteCarlo(format!("need at least 100 paths, got {n_paths}")));
    }
    let ctx = Ctx::new(problem, levy, strategy, opts)?;
    let records: Vec<(f64, usize, bool, bool)> = with_pool(opts.workers, || {
        (0..n_paths as u64)
            .into_par_iter()
            .map(|s| {
                let r = ctx.run(t0, x0, s, seed, Some((&rule, value)));
                (r.payoff(), r.events.len(), r.aborted, r.stopped_by_rule)
            })
            .collect()
    })?;
    let est = summarize(&records)?;
    let v0 = value(t0, x0);
    Ok(DppReport {
        rule,
        value: v0,
        estimate: est.mean,
        std_error: est.std_error,
        residual: est.mean - v0,
        stopped_fraction: est.exit_fraction,
        paths: n_paths,
    })
}

/// Allowance constant calibrated on the closed-form toys.
pub const DEFAULT_ALLOWANCE_C: f64 = 0.25;

/// Discretization allowance `C (sqrt(dt) + h)`.
pub fn allowance(c: f64, dt: f64, h: f64) -> f64 {
    c * (dt.sqrt() + h)
}
