//! Strict supersolutions `w = e^{-κ̃ t} (w₁|x|^q + w₂)` and the perturbation
//! `v_m = (1 - 1/m) v + (1/m) w`.
//!
//! The discrete min-system residual F is concave in u (affine PDE rows, convex M),
//! so `F(v_m) >= (1 - 1/m) F(v) + F(w)/m >= κ/m` whenever `F(v) = 0` and `F(w) >= κ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::levy::LevyModel;
use crate::problem::{norm, Problem};
use crate::solver::{Discretization, LevelOps};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionParams {
    pub w1: f64,
    pub w2: f64,
    pub q: f64,
    pub kappa_tilde: f64,
}

impl SupersolutionParams {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (-self.kappa_tilde * t).exp() * (self.w1 * norm(x).powf(self.q) + self.w2)
    }

    pub fn field(&self, grid: &Grid, t: f64) -> ValueField {
        ValueField::from_fn(grid, Some(t), |x| self.eval(t, x))
    }
}

#[derive(Clone, Debug)]
pub struct Supersolution {
    pub params: SupersolutionParams,
    pub kappa: f64,
    /// Smallest nodewise residual over all nodes and levels.
    pub margin: f64,
    /// One field per time level (a single field in elliptic mode).
    pub fields: Vec<ValueField>,
    /// Nodewise residual of the min-system at w, per level.
    pub margins: Vec<Vec<f64>>,
}

fn ladder(elliptic: bool) -> Vec<SupersolutionParams> {
    let w1s: Vec<f64> = (-3..=3).map(|e| 10f64.powi(e)).collect();
    let mut w2s = vec![0.0];
    w2s.extend((-2..=6).map(|e| 10f64.powi(e)));
    let kts: &[f64] = if elliptic { &[0.0] } else { &[0.0, 0.1, 1.0, 10.0] };
    let mut out = Vec::new();
    for &kappa_tilde in kts {
        for &w1 in &w1s {
            for &w2 in &w2s {
                out.push(SupersolutionParams {
                    w1,
                    w2,
                    q: 0.0,
                    kappa_tilde,
                });
            }
        }
    }
    out
}

/// Residual of the min-system for one level: `next = None` means maturity in
/// parabolic mode, `shift = ρ` with `next = None` in elliptic mode.
enum LevelKind<'a> {
    Elliptic(f64),
    Step(f64, &'a [f64]),
    Maturity,
}

fn level_residual(ops: &LevelOps, u: &[f64], kind: LevelKind) -> Vec<f64> {
    match kind {
        LevelKind::Elliptic(rho) => ops.residual(u, rho, None),
        LevelKind::Step(shift, next) => ops.residual(u, shift, Some(next)),
        LevelKind::Maturity => ops.terminal_residual(u),
    }
}

/// Searches the ladder for `w` with `min F(w) >= kappa` on every node and level.
pub fn build_strict_supersolution(
    problem: &Problem,
    levy: &LevyModel,
    grid: &Grid,
    q: f64,
    kappa: f64,
) -> Result<Supersolution> {
    if !(q > problem.growth_p) {
        return Err(Error::InvalidProblem(format!(
            "supersolution exponent q = {q} must exceed the growth exponent {}",
            problem.growth_p
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidProblem(format!("kappa must be positive, got {kappa}")));
    }
    if problem.has_impulses() && problem.fixed_cost.is_none() {
        return Err(Error::InvalidProblem(
            "a fixed-cost bound k0 must be declared to certify a strict supersolution".into(),
        ));
    }
    let elliptic = problem.horizon.is_elliptic();
    let mut cands = ladder(elliptic);
    for c in cands.iter_mut() {
        c.q = q;
    }
    let disc = Discretization::new(problem, levy, grid)?;
    let mut best = vec![f64::INFINITY; cands.len()];
    if elliptic {
        let rho = problem.horizon.rho().unwrap_or(0.0);
        let ops = disc.at(0.0)?;
        for (k, c) in cands.iter().enumerate() {
            let w = c.field(grid, 0.0);
            best[k] = min(&level_residual(&ops, &w.values, LevelKind::Elliptic(rho)));
        }
    } else {
        let times = grid
            .times()
            .ok_or_else(|| Error::InvalidGrid("parabolic supersolution needs time levels".into()))?;
        let n = times.len() - 1;
        for lvl in 0..=n {
            let ops = disc.at(times[lvl])?;
            for (k, c) in cands.iter().enumerate() {
                if best[k] < kappa {
                    continue;
                }
                let w = c.field(grid, times[lvl]);
                let r = if lvl == n {
                    level_residual(&ops, &w.values, LevelKind::Maturity)
                } else {
                    let next = c.field(grid, times[lvl + 1]);
                    let shift = 1.0 / (times[lvl + 1] - times[lvl]);
                    level_residual(&ops, &w.values, LevelKind::Step(shift, &next.values))
                };
                best[k] = best[k].min(min(&r));
            }
        }
    }
    let Some(k) = best.iter().position(|&m| m >= kappa) else {
        let best_margin = best.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::SupersolutionNotFound { best_margin });
    };
    certify(problem, levy, grid, cands[k].clone(), kappa)
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Nodewise residuals of a given `w`, reported whether or not they reach `kappa`.
pub fn certify(
    problem: &Problem,
    levy: &LevyModel,
    grid: &Grid,
    params: SupersolutionParams,
    kappa: f64,
) -> Result<Supersolution> {
    let disc = Discretization::new(problem, levy, grid)?;
    let mut fields = Vec::new();
    let mut margins = Vec::new();
    match problem.horizon.rho() {
        Some(rho) => {
            let ops = disc.at(0.0)?;
            let mut w = params.field(grid, 0.0);
            w.time = None;
            margins.push(level_residual(&ops, &w.values, LevelKind::Elliptic(rho)));
            fields.push(w);
        }
        None => {
            let times = grid
                .times()
                .ok_or_else(|| Error::InvalidGrid("parabolic supersolution needs time levels".into()))?;
            let n = times.len() - 1;
            fields = times.iter().map(|&t| params.field(grid, t)).collect();
            for lvl in 0..=n {
                let ops = disc.at(times[lvl])?;
                let r = if lvl == n {
                    level_residual(&ops, &fields[lvl].values, LevelKind::Maturity)
                } else {
                    let shift = 1.0 / (times[lvl + 1] - times[lvl]);
                    level_residual(&ops, &fields[lvl].values, LevelKind::Step(shift, &fields[lvl + 1].values))
                };
                margins.push(r);
            }
        }
    }
    let margin = margins.iter().map(|m| min(m)).fold(f64::INFINITY, f64::min);
    Ok(Supersolution {
        params,
        kappa,
        margin,
        fields,
        margins,
    })
}

/// `min_i F(v_m)_i - κ/m` over every node and level, `v_m = (1 - 1/m) v + w/m`.
///
/// `v` and `w` hold one field per level (one field in elliptic mode).
pub fn perturbed_margin(
    problem: &Problem,
    levy: &LevyModel,
    grid: &Grid,
    v: &[ValueField],
    w: &[ValueField],
    kappa: f64,
    m: f64,
) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::InvalidGrid(format!("{} value levels vs {} supersolution levels", v.len(), w.len())));
    }
    let lam = 1.0 / m;
    let vm: Vec<Vec<f64>> = v
        .iter()
        .zip(w)
        .map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (1.0 - lam) * x + lam * y).collect())
        .collect();
    let disc = Discretization::new(problem, levy, grid)?;
    let mut worst = f64::INFINITY;
    match problem.horizon.rho() {
        Some(rho) => {
            let ops = disc.at(0.0)?;
            worst = min(&level_residual(&ops, &vm[0], LevelKind::Elliptic(rho)));
        }
        None => {
            let times = grid
                .times()
                .ok_or_else(|| Error::InvalidGrid("parabolic check needs time levels".into()))?;
            let n = times.len() - 1;
            for lvl in 0..=n {
                let ops = disc.at(times[lvl])?;
                let r = if lvl == n {
                    level_residual(&ops, &vm[lvl], LevelKind::Maturity)
                } else {
                    let shift = 1.0 / (times[lvl + 1] - times[lvl]);
                    level_residual(&ops, &vm[lvl], LevelKind::Step(shift, &vm[lvl + 1]))
                };
                worst = worst.min(min(&r));
            }
        }
    }
    Ok(worst - kappa * lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Domain, Impulses};

    fn diffusion_toy(rho: f64) -> Problem {
        Problem::builder(1, Domain::whole_space(vec![-2.0], vec![2.0]))
            .elliptic(rho)
            .constant_vol(0.5)
            .running(|_, x, _| x[0].sin())
            .impulses(Impulses::jump_to(vec![vec![0.0]], 1.0, 0.0))
            .fixed_cost(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn quadratic_certifies_with_discount() {
        let p = diffusion_toy(1.0);
        let g = Grid::uniform(&p, &[41], None).unwrap();
        let s = build_strict_supersolution(&p, &LevyModel::none(), &g, 2.0, 0.1).unwrap();
        assert!(s.margin >= 0.1);
        // direct evaluation of L w on the quadratic: rho w - sigma^2 w1 - f
        let w = &s.params;
        for i in 1..40 {
            let x = g.node(i)[0];
            let pde = 1.0 * w.eval(0.0, &[x]) - 0.25 * w.w1 - x.sin();
            let imp = w.eval(0.0, &[x]) - (w.eval(0.0, &[0.0]) - 1.0);
            assert!((s.margins[0][i] - pde.min(imp)).abs() < 1e-9);
        }
    }

    #[test]
    fn impulses_toward_origin_give_margin_k0_plus_w1_norm() {
        let p = diffusion_toy(1.0);
        let g = Grid::uniform(&p, &[41], None).unwrap();
        let s = build_strict_supersolution(&p, &LevyModel::none(), &g, 2.0, 0.1).unwrap();
        let ops = Discretization::new(&p, &LevyModel::none(), &g).unwrap().at(0.0).unwrap();
        let w = &s.fields[0].values;
        let mw = ops.intervention(w);
        for i in 0..g.len() {
            let x = g.node(i)[0];
            assert!((w[i] - mw[i] - (s.params.w1 * x * x + 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_discount_cannot_be_certified() {
        let p = Problem::builder(1, Domain::whole_space(vec![-2.0], vec![2.0]))
            .elliptic(0.0)
            .constant_vol(0.5)
            .running(|_, _, _| 1.0)
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[21], None).unwrap();
        match build_strict_supersolution(&p, &LevyModel::none(), &g, 2.0, 0.1) {
            Err(Error::SupersolutionNotFound { best_margin }) => assert!(best_margin < 0.1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn q_must_exceed_growth() {
        let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
            .elliptic(1.0)
            .growth(2.0)
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[11], None).unwrap();
        assert!(build_strict_supersolution(&p, &LevyModel::none(), &g, 2.0, 0.1).is_err());
    }
}
