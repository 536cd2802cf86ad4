//! Monotone finite-difference/quadrature discretization of `L^β`.
//!
//! Each node gets an affine row `(L u)_i = diag u_i + Σ w_j u_j + constant` with
//! `w_j >= 0`. Drift is upwinded, diffusion uses the nonuniform three-point rule,
//! mixed derivatives the seven-point rule whose diagonal orientation follows the
//! sign of `a_kl`. Box edges use a zero-flux ghost for the differential part.
//! Jump targets go through [`Grid::stencil`], so jumps leaving the box pick up
//! the far-field closure; the constant part lands in `constant`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::levy::LevyModel;
use crate::problem::Problem;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Row {
    pub diag: f64,
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Row {
    #[inline]
    pub fn apply(&self, i: usize, u: &[f64]) -> f64 {
        self.diag * u[i] + self.terms.iter().map(|&(j, w)| w * u[j]).sum::<f64>() + self.constant
    }

    /// `diag + Σ w_j`; zero for the differential part, non-zero only through closures.
    pub fn excess(&self) -> f64 {
        self.diag + self.terms.iter().map(|t| t.1).sum::<f64>()
    }
}

/// Discrete `L^β` and `f^β` for one control at one time.
#[derive(Clone, Debug)]
pub struct Generator {
    pub time: f64,
    pub control: usize,
    /// Rows for nodes outside S are empty.
    pub rows: Vec<Row>,
    pub running: Vec<f64>,
}

impl Generator {
    /// `(L^β u)_i`.
    #[inline]
    pub fn apply_at(&self, i: usize, u: &[f64]) -> f64 {
        self.rows[i].apply(i, u)
    }

    /// `L^β u + f^β` on every node (zero outside S).
    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows.len())
            .map(|i| self.apply_at(i, u) + self.running[i])
            .collect()
    }

    /// Same operator at another time for data weighted by `factor`.
    pub fn scaled(&self, time: f64, factor: f64) -> Generator {
        let rows = self
            .rows
            .iter()
            .map(|r| Row {
                diag: r.diag,
                terms: r.terms.clone(),
                constant: r.constant * factor,
            })
            .collect();
        Generator {
            time,
            control: self.control,
            rows,
            running: self.running.iter().map(|f| f * factor).collect(),
        }
    }

    pub fn max_excess(&self, grid: &Grid) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .filter(|(i, _)| grid.is_inside(*i))
            .map(|(_, r)| r.excess())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Scratch {
    x: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    a: Vec<f64>,
    l: Vec<f64>,
    y: Vec<f64>,
}

fn push(terms: &mut Vec<(usize, f64)>, j: usize, w: f64) {
    if w != 0.0 {
        terms.push((j, w));
    }
}

/// Index of the neighbour along axis k, or `i` itself past the box edge.
fn step(grid: &Grid, i: usize, k: usize, up: bool) -> usize {
    let ik = grid.axis_index(i, k);
    let n = grid.axis(k).len();
    match (up, ik) {
        (true, ik) if ik + 1 < n => i + grid.stride(k),
        (false, ik) if ik > 0 => i - grid.stride(k),
        _ => i,
    }
}

fn spacings(grid: &Grid, i: usize, k: usize) -> (Option<f64>, Option<f64>) {
    let axis = grid.axis(k);
    let ik = grid.axis_index(i, k);
    let hm = (ik > 0).then(|| axis[ik] - axis[ik - 1]);
    let hp = (ik + 1 < axis.len()).then(|| axis[ik + 1] - axis[ik]);
    (hm, hp)
}

fn assemble_row(
    problem: &Problem,
    levy: &LevyModel,
    grid: &Grid,
    t: f64,
    beta: &[f64],
    i: usize,
    s: &mut Scratch,
) -> Result<(Row, f64)> {
    let d = grid.dim();
    let m = problem.dim_w;
    grid.coords(i, &mut s.x);
    problem.drift(t, &s.x, beta, &mut s.mu);
    problem.diffusion(t, &s.x, beta, &mut s.sigma);
    for a in 0..d {
        for b in 0..d {
            s.a[a * d + b] = (0..m).map(|r| s.sigma[a * m + r] * s.sigma[b * m + r]).sum();
        }
    }
    let mut terms: Vec<(usize, f64)> = Vec::new();
    let mut diag = 0.0;
    let mut constant = 0.0;

    for node in levy.scheme_folded_nodes() {
        problem.jump(t, &s.x, beta, &node.z, &mut s.l);
        for a in 0..d {
            for b in 0..d {
                s.a[a * d + b] += node.weight * s.l[a] * s.l[b];
            }
        }
    }
    for node in levy.scheme_nonlocal_nodes() {
        problem.jump(t, &s.x, beta, &node.z, &mut s.l);
        if node.size() < 1.0 {
            for k in 0..d {
                s.mu[k] -= node.weight * s.l[k];
            }
        }
        for k in 0..d {
            s.y[k] = s.x[k] + s.l[k];
        }
        let st = grid.stencil(problem, t, &s.y);
        for &(j, w) in &st.terms {
            push(&mut terms, j, node.weight * w);
        }
        constant += node.weight * st.constant;
        diag -= node.weight;
    }

    for k in 0..d {
        let (hm, hp) = spacings(grid, i, k);
        let up = step(grid, i, k, true);
        let down = step(grid, i, k, false);
        let akk = s.a[k * d + k];
        if akk != 0.0 {
            match (hm, hp) {
                (Some(hm), Some(hp)) => {
                    let cp = akk / ((hm + hp) * hp);
                    let cm = akk / ((hm + hp) * hm);
                    push(&mut terms, up, cp);
                    push(&mut terms, down, cm);
                    diag -= cp + cm;
                }
                (None, Some(h)) => {
                    let c = akk / (2.0 * h * h);
                    push(&mut terms, up, c);
                    diag -= c;
                }
                (Some(h), None) => {
                    let c = akk / (2.0 * h * h);
                    push(&mut terms, down, c);
                    diag -= c;
                }
                (None, None) => {}
            }
        }
        let mu = s.mu[k];
        if mu > 0.0 {
            if let Some(hp) = hp {
                push(&mut terms, up, mu / hp);
                diag -= mu / hp;
            }
        } else if mu < 0.0 {
            if let Some(hm) = hm {
                push(&mut terms, down, -mu / hm);
                diag += mu / hm;
            }
        }
    }
    for k in 0..d {
        for l in (k + 1)..d {
            let akl = s.a[k * d + l];
            if akl == 0.0 {
                continue;
            }
            let hk = mean_spacing(spacings(grid, i, k));
            let hl = mean_spacing(spacings(grid, i, l));
            let c = akl.abs() / (2.0 * hk * hl);
            let kp = step(grid, i, k, true);
            let km = step(grid, i, k, false);
            let lp_of = |j: usize| step(grid, j, l, true);
            let lm_of = |j: usize| step(grid, j, l, false);
            if akl > 0.0 {
                push(&mut terms, lp_of(kp), c);
                push(&mut terms, lm_of(km), c);
            } else {
                push(&mut terms, lm_of(kp), c);
                push(&mut terms, lp_of(km), c);
            }
            push(&mut terms, kp, -c);
            push(&mut terms, km, -c);
            push(&mut terms, lp_of(i), -c);
            push(&mut terms, lm_of(i), -c);
            diag += 2.0 * c;
        }
    }

    // merge columns, fold self-references into the diagonal
    terms.sort_unstable_by_key(|t| t.0);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
    for (j, w) in terms {
        if j == i {
            diag += w;
        } else if let Some(last) = merged.last_mut().filter(|l| l.0 == j) {
            last.1 += w;
        } else {
            merged.push((j, w));
        }
    }
    let scale = merged.iter().map(|t| t.1.abs()).fold(diag.abs(), f64::max);
    for t in merged.iter_mut() {
        if t.1 < 0.0 {
            if t.1 < -1e-12 * scale {
                return Err(Error::NonMonotone {
                    node: i,
                    column: t.0,
                    coefficient: t.1,
                });
            }
            t.1 = 0.0;
        }
    }
    merged.retain(|t| t.1 != 0.0);
    let f = problem.running(t, &s.x, beta);
    Ok((
        Row {
            diag,
            terms: merged,
            constant,
        },
        f,
    ))
}

fn mean_spacing(h: (Option<f64>, Option<f64>)) -> f64 {
    match h {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 1.0,
    }
}

/// Rows of `L^β` at time `t` for control index `control`.
pub fn discretize_generator(
    problem: &Problem,
    levy: &LevyModel,
    grid: &Grid,
    t: f64,
    control: usize,
) -> Result<Generator> {
    let d = grid.dim();
    let m = problem.dim_w;
    let beta = problem
        .controls
        .get(control)
        .ok_or_else(|| Error::InvalidProblem(format!("control index {control} out of range")))?;
    let out: Vec<(Row, f64)> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || Scratch {
                x: vec![0.0; d],
                mu: vec![0.0; d],
                sigma: vec![0.0; d * m],
                a: vec![0.0; d * d],
                l: vec![0.0; d],
                y: vec![0.0; d],
            },
            |s, i| {
                if grid.is_inside(i) {
                    assemble_row(problem, levy, grid, t, beta, i, s)
                } else {
                    Ok((Row::default(), 0.0))
                }
            },
        )
        .collect::<Result<_>>()?;
    let (rows, running) = out.into_iter().unzip();
    Ok(Generator {
        time: t,
        control,
        rows,
        running,
    })
}

/// One generator per control.
pub fn discretize_all(problem: &Problem, levy: &LevyModel, grid: &Grid, t: f64) -> Result<Vec<Generator>> {
    (0..problem.controls.len())
        .map(|c| discretize_generator(problem, levy, grid, t, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{Atom, LevyModel};
    use crate::problem::Domain;

    fn line(lo: f64, hi: f64) -> Problem {
        Problem::builder(1, Domain::whole_space(vec![lo], vec![hi]))
            .constant_vol(1.0)
            .drift(|_, _, _, out| out[0] = 0.5)
            .growth(2.0)
            .build()
            .unwrap()
    }

    #[test]
    fn quadratic_is_differentiated_exactly_inside() {
        let p = line(-2.0, 2.0);
        let g = Grid::uniform(&p, &[21], Some(1)).unwrap();
        let gen = discretize_generator(&p, &LevyModel::none(), &g, 0.0, 0).unwrap();
        let u: Vec<f64> = (0..21).map(|i| g.node(i)[0].powi(2)).collect();
        // L u = 1/2 * 2 + 0.5 * 2x, upwind forward difference adds 0.5 * h
        for i in 1..20 {
            let x = g.node(i)[0];
            let expect = 1.0 + x + 0.5 * 0.2;
            assert!((gen.apply_at(i, &u) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_are_monotone_and_conservative() {
        let p = line(-1.0, 1.0);
        let g = Grid::uniform(&p, &[11], Some(1)).unwrap();
        let gen = discretize_generator(&p, &LevyModel::none(), &g, 0.0, 0).unwrap();
        for r in &gen.rows {
            assert!(r.terms.iter().all(|t| t.1 > 0.0));
            assert!(r.excess().abs() < 1e-12);
        }
    }

    #[test]
    fn compound_poisson_difference_on_grid() {
        let p = Problem::builder(1, Domain::whole_space(vec![-3.0], vec![3.0]))
            .jump_map(|_, _, _, z, out| out[0] = z[0])
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[61], Some(1)).unwrap();
        let levy = LevyModel::atoms(vec![Atom { z: vec![0.5], weight: 2.0 }], 0.1).unwrap();
        let gen = discretize_generator(&p, &levy, &g, 0.0, 0).unwrap();
        let u: Vec<f64> = (0..61).map(|i| g.node(i)[0].powi(3)).collect();
        // 2 * [(x+0.5)^3 - x^3] - 2 * 0.5 * u'(x), compensator upwinded backward
        let i = 30;
        let x = g.node(i)[0];
        let jump = 2.0 * ((x + 0.5f64).powi(3) - x.powi(3));
        let h = 0.1;
        let comp = -(u[i] - u[i - 1]) / h;
        assert!((gen.apply_at(i, &u) - (jump + comp)).abs() < 1e-12);
    }

    #[test]
    fn negative_correlation_uses_anti_diagonal() {
        let p = Problem::builder(2, Domain::whole_space(vec![-1.0, -1.0], vec![1.0, 1.0]))
            .diffusion(|_, _, _, out| {
                // a = [[1, -0.5], [-0.5, 1]]
                let r = -0.5f64;
                out.copy_from_slice(&[1.0, 0.0, r, (1.0 - r * r).sqrt()]);
            })
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[11, 11], Some(1)).unwrap();
        let gen = discretize_generator(&p, &LevyModel::none(), &g, 0.0, 0).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|i| {
            let x = g.node(i);
            x[0] * x[1]
        }).collect();
        let i = g.index(&[5, 5]);
        assert!((gen.apply_at(i, &u) + 0.5).abs() < 1e-12);
        let row = &gen.rows[i];
        assert!(row.terms.iter().all(|t| t.1 > 0.0));
        assert!(row.terms.iter().any(|t| t.0 == g.index(&[6, 4])));
        assert!(!row.terms.iter().any(|t| t.0 == g.index(&[6, 6])));
    }

    #[test]
    fn strong_correlation_on_anisotropic_grid_is_rejected() {
        let p = Problem::builder(2, Domain::whole_space(vec![-1.0, -10.0], vec![1.0, 10.0]))
            .diffusion(|_, _, _, out| out.copy_from_slice(&[1.0, 0.0, 0.99, 0.14]))
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[11, 11], Some(1)).unwrap();
        let r = discretize_generator(&p, &LevyModel::none(), &g, 0.0, 0);
        assert!(matches!(r, Err(Error::NonMonotone { .. })));
    }
}
