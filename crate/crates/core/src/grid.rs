//! Tensor-product lattices, grid functions and monotone point evaluation.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::problem::{norm, Problem};

/// Affine functional of a grid function: `sum w_j u_j + constant`.
///
/// Weights produced by [`Grid::stencil`] are non-negative.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stencil {
    pub terms: SmallVec<[(usize, f64); 8]>,
    pub constant: f64,
}

impl Stencil {
    pub fn node(i: usize) -> Self {
        let mut terms = SmallVec::new();
        terms.push((i, 1.0));
        Stencil { terms, constant: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        Stencil {
            terms: SmallVec::new(),
            constant: c,
        }
    }

    #[inline]
    pub fn apply(&self, u: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, w)| w * u[j]).sum::<f64>() + self.constant
    }

    pub fn weight_of(&self, i: usize) -> f64 {
        self.terms.iter().filter(|(j, _)| *j == i).map(|(_, w)| w).sum()
    }
}

/// Axis-aligned lattice over the bounding box with optional time levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    strides: Vec<usize>,
    len: usize,
    inside: Vec<bool>,
    times: Option<Vec<f64>>,
}

fn check_axis(k: usize, axis: &[f64]) -> Result<()> {
    if axis.len() < 3 {
        return Err(Error::InvalidGrid(format!("axis {k} has {} nodes, need at least 3", axis.len())));
    }
    if axis.windows(2).any(|w| !(w[1] > w[0])) || axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid(format!("axis {k} is not strictly increasing")));
    }
    Ok(())
}

impl Grid {
    /// Tags every node against the problem's open set S.
    pub fn new(problem: &Problem, axes: Vec<Vec<f64>>, times: Option<Vec<f64>>) -> Result<Grid> {
        if axes.len() != problem.dim_x {
            return Err(Error::InvalidGrid(format!(
                "{} axes for a {}-dimensional state",
                axes.len(),
                problem.dim_x
            )));
        }
        for (k, axis) in axes.iter().enumerate() {
            check_axis(k, axis)?;
        }
        if let Some(ts) = &times {
            if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidGrid("time levels must be strictly increasing".into()));
            }
        }
        let mut strides = vec![1; axes.len()];
        for k in (0..axes.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * axes[k + 1].len();
        }
        let len = axes.iter().map(Vec::len).product();
        let mut grid = Grid {
            axes,
            strides,
            len,
            inside: Vec::new(),
            times,
        };
        let mut x = vec![0.0; grid.dim()];
        grid.inside = (0..len)
            .map(|i| {
                grid.coords(i, &mut x);
                problem.domain.contains(&x)
            })
            .collect();
        Ok(grid)
    }

    /// Uniform axes spanning the box; `time_steps` levels over `[0, T]` in parabolic mode.
    pub fn uniform(problem: &Problem, nodes: &[usize], time_steps: Option<usize>) -> Result<Grid> {
        let lo = problem.domain.lower();
        let hi = problem.domain.upper();
        if nodes.len() != lo.len() {
            return Err(Error::InvalidGrid(format!(
                "{} node counts for a {}-dimensional state",
                nodes.len(),
                lo.len()
            )));
        }
        let axes = nodes
            .iter()
            .enumerate()
            .map(|(k, &n)| linspace(lo[k], hi[k], n))
            .collect();
        let times = match (problem.horizon.maturity(), time_steps) {
            (Some(t), Some(n)) if n > 0 => Some(linspace(0.0, t, n + 1)),
            (Some(_), _) => return Err(Error::InvalidGrid("parabolic grid needs time steps".into())),
            (None, _) => None,
        };
        Grid::new(problem, axes, times)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn stride(&self, k: usize) -> usize {
        self.strides[k]
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    /// Number of stored levels (1 for elliptic grids).
    pub fn n_levels(&self) -> usize {
        self.times.as_ref().map_or(1, Vec::len)
    }

    pub fn is_inside(&self, i: usize) -> bool {
        self.inside[i]
    }

    pub fn inside_tags(&self) -> &[bool] {
        &self.inside
    }

    pub fn coords(&self, i: usize, out: &mut [f64]) {
        let mut rem = i;
        for k in 0..self.axes.len() {
            let ik = rem / self.strides[k];
            rem %= self.strides[k];
            out[k] = self.axes[k][ik];
        }
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.coords(i, &mut x);
        x
    }

    /// Index along axis `k` of node `i`.
    #[inline]
    pub fn axis_index(&self, i: usize, k: usize) -> usize {
        (i / self.strides[k]) % self.axes[k].len()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(m, s)| m * s).sum()
    }

    /// Largest spacing over all axes.
    pub fn max_spacing(&self) -> f64 {
        self.axes
            .iter()
            .flat_map(|a| a.windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    /// Node whose coordinates are closest per axis (clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut i = 0;
        for (k, axis) in self.axes.iter().enumerate() {
            let j = axis.partition_point(|&a| a < x[k]);
            let ik = if j == 0 {
                0
            } else if j >= axis.len() {
                axis.len() - 1
            } else if x[k] - axis[j - 1] <= axis[j] - x[k] {
                j - 1
            } else {
                j
            };
            i += ik * self.strides[k];
        }
        i
    }

    /// Multilinear interpolation weights for a point inside the box.
    fn multilinear(&self, x: &[f64], scale: f64) -> Stencil {
        let d = self.dim();
        let mut cells: SmallVec<[(usize, f64); 4]> = SmallVec::new();
        for (k, axis) in self.axes.iter().enumerate() {
            let n = axis.len();
            let j = axis.partition_point(|&a| a <= x[k]).clamp(1, n - 1) - 1;
            let theta = ((x[k] - axis[j]) / (axis[j + 1] - axis[j])).clamp(0.0, 1.0);
            cells.push((j, theta));
        }
        let mut st = Stencil::default();
        for corner in 0..(1usize << d) {
            let mut w = scale;
            let mut idx = 0;
            for (k, &(j, theta)) in cells.iter().enumerate() {
                let up = (corner >> k) & 1 == 1;
                w *= if up { theta } else { 1.0 - theta };
                idx += (j + usize::from(up)) * self.strides[k];
            }
            if w != 0.0 {
                st.terms.push((idx, w));
            }
        }
        st
    }

    /// Monotone evaluation functional at an arbitrary point, with far-field closure.
    ///
    /// Inside the box: multilinear interpolation. Outside the box the point is
    /// projected onto the box; if the projection lies outside S the value is
    /// `g(t, x)`, otherwise it is the growth extension
    /// `u(x_edge) (1 + |x|^p) / (1 + |x_edge|^p)`.
    pub fn stencil(&self, problem: &Problem, t: f64, x: &[f64]) -> Stencil {
        let mut edge: SmallVec<[f64; 4]> = SmallVec::from_elem(0.0, x.len());
        if !problem.domain.clamp(x, &mut edge) {
            return self.multilinear(x, 1.0);
        }
        if !problem.domain.contains(&edge) {
            return Stencil::constant(problem.terminal(t, x));
        }
        let p = problem.growth_p;
        let ratio = if p == 0.0 {
            1.0
        } else {
            (1.0 + norm(x).powf(p)) / (1.0 + norm(&edge).powf(p))
        };
        self.multilinear(&edge, ratio)
    }

    /// Interpolate a grid function at `x` with far-field closure.
    pub fn evaluate(&self, problem: &Problem, t: f64, u: &[f64], x: &[f64]) -> f64 {
        self.stencil(problem, t, x).apply(u)
    }

    /// Smallest C with `|u(x)| <= C (1 + |x|^p)` on the nodes.
    pub fn growth_constant(&self, u: &[f64], p: f64) -> f64 {
        let mut x = vec![0.0; self.dim()];
        (0..self.len)
            .map(|i| {
                self.coords(i, &mut x);
                u[i].abs() / (1.0 + norm(&x).powf(p))
            })
            .fold(0.0, f64::max)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect()
}

/// Grid function for one time level (or the stationary field).
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    pub values: Vec<f64>,
    pub time: Option<f64>,
    /// Policy-iteration sweeps (or terminal sweeps) spent on this level.
    pub iterations: usize,
    /// Max |QVI residual| certified for this level.
    pub residual: f64,
    /// Recorded C of the polynomial growth bound.
    pub growth_constant: f64,
}

impl ValueField {
    pub fn new(values: Vec<f64>, time: Option<f64>) -> Self {
        ValueField {
            values,
            time,
            iterations: 0,
            residual: 0.0,
            growth_constant: 0.0,
        }
    }

    /// Samples `f(x)` at every node.
    pub fn from_fn(grid: &Grid, time: Option<f64>, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|i| {
                grid.coords(i, &mut x);
                f(&x)
            })
            .collect();
        ValueField::new(values, time)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Domain;

    fn problem_1d(s: Option<(f64, f64)>, p: f64) -> Problem {
        let domain = match s {
            None => Domain::whole_space(vec![-1.0], vec![1.0]),
            Some((a, b)) => Domain::open_box(vec![-1.0], vec![1.0], vec![a], vec![b]),
        };
        Problem::builder(1, domain)
            .growth(p)
            .terminal(|_, x| 100.0 + x[0])
            .build()
            .unwrap()
    }

    #[test]
    fn rejects_short_or_unsorted_axes() {
        let p = problem_1d(None, 0.0);
        assert!(Grid::new(&p, vec![vec![0.0, 1.0]], None).is_err());
        assert!(Grid::new(&p, vec![vec![0.0, 1.0, 0.5]], None).is_err());
    }

    #[test]
    fn tags_follow_open_set() {
        let p = problem_1d(Some((-0.5, 0.5)), 0.0);
        let g = Grid::uniform(&p, &[5], Some(4)).unwrap();
        assert_eq!(g.inside_tags(), &[false, false, true, false, false]);
        assert_eq!(g.n_levels(), 5);
    }

    #[test]
    fn interpolation_is_exact_on_affine_and_positive() {
        let p = Problem::builder(2, Domain::whole_space(vec![0.0, 0.0], vec![1.0, 2.0]))
            .build()
            .unwrap();
        let g = Grid::uniform(&p, &[5, 7], Some(1)).unwrap();
        let u = ValueField::from_fn(&g, None, |x| 1.0 + 2.0 * x[0] - 3.0 * x[1]);
        let x = [0.33, 1.41];
        let st = g.stencil(&p, 0.0, &x);
        assert!(st.terms.iter().all(|&(_, w)| w > 0.0));
        assert!((st.terms.iter().map(|t| t.1).sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((st.apply(&u.values) - (1.0 + 0.66 - 4.23)).abs() < 1e-12);
    }

    #[test]
    fn far_field_uses_g_outside_s_and_growth_inside() {
        let p = problem_1d(Some((-0.5, 0.5)), 0.0);
        let g = Grid::uniform(&p, &[5], Some(1)).unwrap();
        let st = g.stencil(&p, 0.0, &[3.0]);
        assert!(st.terms.is_empty());
        assert_eq!(st.constant, 103.0);

        let p = problem_1d(None, 2.0);
        let g = Grid::uniform(&p, &[5], Some(1)).unwrap();
        let st = g.stencil(&p, 0.0, &[2.0]);
        assert_eq!(st.terms.len(), 1);
        assert_eq!(st.terms[0].0, 4);
        assert!((st.terms[0].1 - 5.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn nearest_node_lookup() {
        let p = problem_1d(None, 0.0);
        let g = Grid::uniform(&p, &[5], Some(1)).unwrap();
        assert_eq!(g.nearest(&[-0.8]), 0);
        assert_eq!(g.nearest(&[0.26]), 3);
        assert_eq!(g.nearest(&[7.0]), 4);
    }
}
