//! The intervention operator `Mu(t,x) = max_ζ { u(t, Γ(t,x,ζ)) + K(t,x,ζ) }`.
//!
//! Z(t,x) is a finite list, so the supremum is an exact maximum. Ties go to the
//! smallest candidate index. Targets off the lattice are evaluated through the
//! monotone [`Grid::stencil`] functional, which keeps M monotone, convex and
//! translation invariant on grid functions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Stencil, ValueField};
use crate::problem::Problem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionResult {
    /// `-inf` when the problem has no impulses.
    pub value: f64,
    pub candidate: Option<usize>,
    pub zeta: Option<Vec<f64>>,
    pub target: Option<Vec<f64>>,
    pub cost: f64,
}

/// One admissible impulse at a node, pre-resolved against the lattice.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub zeta: Vec<f64>,
    pub target: Vec<f64>,
    pub stencil: Stencil,
    pub cost: f64,
}

impl Candidate {
    #[inline]
    pub fn value(&self, u: &[f64]) -> f64 {
        self.stencil.apply(u) + self.cost
    }
}

fn resolve(grid: &Grid, problem: &Problem, t: f64, x: &[f64]) -> Result<Vec<Candidate>> {
    let zetas = problem.candidates(t, x)?;
    let mut out = Vec::with_capacity(zetas.len());
    for zeta in zetas {
        let mut target = vec![0.0; x.len()];
        problem.impulse_target(t, x, &zeta, &mut target);
        let cost = problem.impulse_cost(t, x, &zeta);
        if !cost.is_finite() || target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "impulse {zeta:?} at x={x:?} has non-finite target or cost"
            )));
        }
        let stencil = grid.stencil(problem, t, &target);
        out.push(Candidate {
            zeta,
            target,
            stencil,
            cost,
        });
    }
    Ok(out)
}

fn best(cands: &[Candidate], u: &[f64]) -> (f64, Option<usize>) {
    let mut value = f64::NEG_INFINITY;
    let mut arg = None;
    for (c, cand) in cands.iter().enumerate() {
        let v = cand.value(u);
        if v > value {
            value = v;
            arg = Some(c);
        }
    }
    (value, arg)
}

/// `Mu` at an arbitrary point.
pub fn apply_m(grid: &Grid, u: &[f64], problem: &Problem, t: f64, x: &[f64]) -> Result<InterventionResult> {
    if !problem.has_impulses() {
        return Ok(InterventionResult {
            value: f64::NEG_INFINITY,
            candidate: None,
            zeta: None,
            target: None,
            cost: 0.0,
        });
    }
    let cands = resolve(grid, problem, t, x)?;
    let (value, arg) = best(&cands, u);
    let c = arg.expect("non-empty candidate list");
    let cand = &cands[c];
    Ok(InterventionResult {
        value,
        candidate: Some(c),
        zeta: Some(cand.zeta.clone()),
        target: Some(cand.target.clone()),
        cost: cand.cost,
    })
}

/// Candidate lists resolved for every node at one time.
#[derive(Clone, Debug)]
pub struct ImpulseTable {
    pub time: f64,
    rows: Vec<Vec<Candidate>>,
}

impl ImpulseTable {
    /// Empty rows when the problem has no impulses.
    pub fn build(grid: &Grid, problem: &Problem, t: f64) -> Result<ImpulseTable> {
        if !problem.has_impulses() {
            return Ok(ImpulseTable {
                time: t,
                rows: vec![Vec::new(); grid.len()],
            });
        }
        let rows = (0..grid.len())
            .into_par_iter()
            .map(|i| resolve(grid, problem, t, &grid.node(i)).map_err(|e| Error::at_node(i, e)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImpulseTable { time: t, rows })
    }

    /// Same table with costs and closure constants multiplied by `factor`.
    pub fn scaled(&self, time: f64, factor: f64) -> ImpulseTable {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|c| {
                        let mut c = c.clone();
                        c.cost *= factor;
                        c.stencil.constant *= factor;
                        c
                    })
                    .collect()
            })
            .collect();
        ImpulseTable { time, rows }
    }

    pub fn candidates(&self, i: usize) -> &[Candidate] {
        &self.rows[i]
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    /// `(Mu(x_i), argmax)`.
    #[inline]
    pub fn best(&self, i: usize, u: &[f64]) -> (f64, Option<usize>) {
        best(&self.rows[i], u)
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.best(i, u).0).collect()
    }

    pub fn apply_with_argmax(&self, u: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
        (0..self.rows.len()).map(|i| self.best(i, u)).unzip()
    }
}

/// Nodewise M over one level, with the argmax impulse per node.
#[derive(Clone, Debug)]
pub struct InterventionField {
    pub field: ValueField,
    pub argmax: Vec<Option<usize>>,
    pub zeta: Vec<Option<Vec<f64>>>,
}

pub fn apply_m_field(grid: &Grid, u: &ValueField, problem: &Problem, t: f64) -> Result<InterventionField> {
    let table = ImpulseTable::build(grid, problem, t)?;
    let (values, argmax) = table.apply_with_argmax(&u.values);
    let zeta = argmax
        .iter()
        .enumerate()
        .map(|(i, a)| a.map(|c| table.candidates(i)[c].zeta.clone()))
        .collect();
    Ok(InterventionField {
        field: ValueField::new(values, u.time),
        argmax,
        zeta,
    })
}

#[derive(Clone, Debug)]
pub struct TerminalIteration {
    pub field: ValueField,
    /// Candidate used where an impulse chain beats g (ties count as impulses).
    pub argmax: Vec<Option<usize>>,
    pub sweeps: usize,
}

/// `sup(g, Mg, M²g, ...)` by Jacobi sweeps `u ← max(g, Mu)`.
///
/// Since `M max(a, b) = max(Ma, Mb)`, sweep n holds `max(g, ..., Mⁿg)` exactly.
/// The returned sweep count includes the final sweep that confirms the fixed point.
pub fn iterate_m_terminal(
    grid: &Grid,
    g: &ValueField,
    problem: &Problem,
    t: f64,
    max_iter: usize,
) -> Result<TerminalIteration> {
    let table = ImpulseTable::build(grid, problem, t)?;
    iterate_terminal_with(&table, g, max_iter)
}

pub(crate) fn iterate_terminal_with(table: &ImpulseTable, g: &ValueField, max_iter: usize) -> Result<TerminalIteration> {
    let mut u = g.values.clone();
    for sweep in 1..=max_iter {
        let (mu, _) = table.apply_with_argmax(&u);
        let mut changed = 0.0f64;
        let next: Vec<f64> = g
            .values
            .iter()
            .zip(&mu)
            .zip(&u)
            .map(|((&gi, &mi), &ui)| {
                let v = gi.max(mi);
                changed = changed.max((v - ui) / ui.abs().max(1.0));
                v
            })
            .collect();
        if changed <= 1e-15 {
            let (mu, argmax) = table.apply_with_argmax(&u);
            let argmax = argmax
                .into_iter()
                .zip(mu.iter().zip(&g.values))
                .map(|(a, (&m, &gi))| if m >= gi { a } else { None })
                .collect();
            let mut field = ValueField::new(u, g.time);
            field.iterations = sweep;
            return Ok(TerminalIteration {
                field,
                argmax,
                sweeps: sweep,
            });
        }
        u = next;
    }
    let mu = table.apply(&u);
    let residual = mu.iter().zip(&u).map(|(m, v)| (m - v).max(0.0)).fold(0.0, f64::max);
    Err(Error::TerminalNotConverged {
        sweeps: max_iter,
        residual,
    })
}

/// Max change of `Mu` over nodes as the candidate list is refined.
///
/// `family(n)` must return the problem with its transaction sets discretized at
/// resolution `n`; resolutions `n0, 2 n0, 4 n0, ...` are compared pairwise.
pub fn candidate_refinement(
    grid: &Grid,
    u: &ValueField,
    t: f64,
    n0: usize,
    doublings: usize,
    family: impl Fn(usize) -> Problem,
) -> Result<Vec<f64>> {
    let mut prev = apply_m_field(grid, u, &family(n0), t)?.field;
    let mut out = Vec::with_capacity(doublings);
    let mut n = n0;
    for _ in 0..doublings {
        n *= 2;
        let next = apply_m_field(grid, u, &family(n), t)?.field;
        out.push(next.max_abs_diff(&prev));
        prev = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Domain, Impulses};
    use std::sync::Arc;

    fn grid_problem(n: usize, imp: Impulses) -> (Grid, Problem) {
        let p = Problem::builder(1, Domain::whole_space(vec![-2.0], vec![2.0]))
            .impulses(imp)
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[n], Some(1)).unwrap();
        (g, p)
    }

    #[test]
    fn constant_field_loses_fixed_cost() {
        let (g, p) = grid_problem(9, Impulses::shifts(vec![vec![0.5], vec![-1.0]], 0.3, 0.0));
        let u = ValueField::from_fn(&g, None, |_| 4.0);
        let m = apply_m_field(&g, &u, &p, 0.0).unwrap();
        assert!(m.field.values.iter().all(|&v| (v - 3.7).abs() < 1e-15));
    }

    #[test]
    fn single_candidate_jump_to_origin() {
        let (g, p) = grid_problem(9, Impulses::jump_to(vec![vec![0.0]], 1.0, 0.0));
        let u = ValueField::from_fn(&g, None, |x| if x[0] == 0.0 { 5.0 } else { x[0] });
        let r = apply_m(&g, &u.values, &p, 0.0, &[1.3]).unwrap();
        assert_eq!(r.value, 4.0);
        assert_eq!(r.target, Some(vec![0.0]));
        assert_eq!(r.candidate, Some(0));
    }

    #[test]
    fn exhaustive_scan_of_three_candidates() {
        let (g, p) = grid_problem(9, Impulses::jump_to(vec![vec![-1.0], vec![0.0], vec![1.0]], 0.5, 0.0));
        let u = ValueField::from_fn(&g, None, |x| -x[0].abs());
        for &x in &[-2.0, -0.25, 0.0, 1.7] {
            let r = apply_m(&g, &u.values, &p, 0.0, &[x]).unwrap();
            assert_eq!(r.value, -0.5);
            assert_eq!(r.zeta, Some(vec![0.0]));
        }
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let (g, p) = grid_problem(9, Impulses::jump_to(vec![vec![-1.0], vec![1.0]], 0.5, 0.0));
        let u = ValueField::from_fn(&g, None, |x| -x[0].abs());
        let r = apply_m(&g, &u.values, &p, 0.0, &[0.3]).unwrap();
        assert_eq!(r.candidate, Some(0));
    }

    #[test]
    fn no_impulses_gives_minus_infinity() {
        let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0])).build().unwrap();
        let g = Grid::uniform(&p, &[5], Some(1)).unwrap();
        let u = ValueField::from_fn(&g, None, |_| 0.0);
        let r = apply_m(&g, &u.values, &p, 0.0, &[0.0]).unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.candidate, None);
    }

    #[test]
    fn empty_transaction_set_reports_node() {
        let imp = Impulses::new(
            Arc::new(|_, x: &[f64]| if x[0] > 0.0 { vec![] } else { vec![vec![0.0]] }),
            Arc::new(|_, _, z, out| out.copy_from_slice(z)),
            Arc::new(|_, _, _| -1.0),
        );
        let (g, p) = grid_problem(5, imp);
        let u = ValueField::from_fn(&g, None, |_| 0.0);
        match apply_m_field(&g, &u, &p, 0.0) {
            Err(Error::AtNode { node, source }) => {
                assert!(node >= 3);
                assert!(matches!(*source, Error::EmptyTransactionSet { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monotone_inputs_give_monotone_output() {
        // Gamma(x) = x/2 is monotone, K constant; u increasing on 5 nodes.
        let (g, p) = grid_problem(5, Impulses::toward_origin(vec![0.5], 0.2, 0.0));
        let u = ValueField::from_fn(&g, None, |x| x[0].powi(3) + x[0]);
        let m = apply_m_field(&g, &u, &p, 0.0).unwrap();
        // oracle: nodewise scan, u at x/2 interpolated on the 5-node grid
        let nodes = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let uv: Vec<f64> = nodes.iter().map(|x: &f64| x.powi(3) + x).collect();
        let expected: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let y: f64 = x / 2.0;
                let j = ((y + 2.0).floor() as usize).min(3);
                let th = y + 2.0 - j as f64;
                (1.0 - th) * uv[j] + th * uv[j + 1] - 0.2
            })
            .collect();
        for (a, b) in m.field.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(m.field.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn terminal_one_sweep_when_impulses_useless() {
        let (g, p) = grid_problem(9, Impulses::shifts(vec![vec![0.5]], 1.0, 0.0));
        let gf = ValueField::from_fn(&g, Some(1.0), |x| x[0].sin());
        let r = iterate_m_terminal(&g, &gf, &p, 1.0, 10).unwrap();
        assert_eq!(r.sweeps, 1);
        assert_eq!(r.field.values, gf.values);
    }

    #[test]
    fn terminal_spike_example() {
        let (g, p) = grid_problem(11, Impulses::jump_to(vec![vec![0.0]], 1.0, 0.0));
        let gf = ValueField::from_fn(&g, Some(1.0), |x| if x[0] == 0.0 { 10.0 } else { 0.0 });
        let r = iterate_m_terminal(&g, &gf, &p, 1.0, 20).unwrap();
        for (i, v) in r.field.values.iter().enumerate() {
            let expect = if i == 5 { 10.0 } else { 9.0 };
            assert_eq!(*v, expect);
        }
        assert_eq!(r.sweeps, 2);
    }

    #[test]
    fn terminal_non_convergence_reports_residual() {
        let (g, p) = grid_problem(11, Impulses::shifts(vec![vec![0.4]], 0.1, 0.0));
        let gf = ValueField::from_fn(&g, Some(1.0), |x| x[0]);
        match iterate_m_terminal(&g, &gf, &p, 1.0, 2) {
            Err(Error::TerminalNotConverged { sweeps, residual }) => {
                assert_eq!(sweeps, 2);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn refinement_diagnostic_shrinks() {
        let base = Problem::builder(1, Domain::whole_space(vec![-2.0], vec![2.0])).build().unwrap();
        let g = Grid::uniform(&base, &[81], Some(1)).unwrap();
        let u = ValueField::from_fn(&g, None, |x| -(x[0] - 0.3).powi(2));
        let family = |n: usize| {
            let targets = crate::grid::linspace(-2.0, 2.0, n + 1).into_iter().map(|v| vec![v]).collect();
            base.with_impulses(Some(Impulses::jump_to(targets, 0.1, 0.0)))
        };
        let diffs = candidate_refinement(&g, &u, 0.0, 4, 3, family).unwrap();
        assert!(diffs.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{diffs:?}");
    }
}
