//! Lévy measures, the small/large jump split and the nonlocal integral terms.
//!
//! The measure is a finite set of atoms plus at most one catalogue density on
//! a one-dimensional jump variable. Everything the solver and the simulator
//! need is read off a single discretized rule of `(z, weight)` nodes.

use std::f64::consts::PI;
use std::io::Write;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::problem::{norm, Problem};

/// Catalogue densities on a scalar jump variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JumpDensity {
    /// `intensity * N(mean, std^2)`.
    Gaussian { intensity: f64, mean: f64, std: f64 },
    /// Kou double exponential with upward probability `p_up`.
    DoubleExponential {
        intensity: f64,
        p_up: f64,
        eta_up: f64,
        eta_down: f64,
    },
    /// CGMY: `c e^{-g|z|} |z|^{-1-y}` for z < 0, `c e^{-m z} z^{-1-y}` for z > 0.
    TemperedStable { c: f64, g: f64, m: f64, y: f64 },
}

impl JumpDensity {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            JumpDensity::Gaussian { intensity, mean, std } => {
                let s = (z - mean) / std;
                intensity * (-0.5 * s * s).exp() / (std * (2.0 * PI).sqrt())
            }
            JumpDensity::DoubleExponential {
                intensity,
                p_up,
                eta_up,
                eta_down,
            } => {
                if z > 0.0 {
                    intensity * p_up * eta_up * (-eta_up * z).exp()
                } else if z < 0.0 {
                    intensity * (1.0 - p_up) * eta_down * (eta_down * z).exp()
                } else {
                    0.0
                }
            }
            JumpDensity::TemperedStable { c, g, m, y } => {
                if z > 0.0 {
                    c * (-m * z).exp() / z.powf(1.0 + y)
                } else if z < 0.0 {
                    c * (g * z).exp() / (-z).powf(1.0 + y)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn infinite_activity(&self) -> bool {
        matches!(*self, JumpDensity::TemperedStable { y, .. } if y >= 0.0)
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            JumpDensity::Gaussian { intensity, std, mean } => {
                intensity >= 0.0 && std > 0.0 && mean.is_finite()
            }
            JumpDensity::DoubleExponential {
                intensity,
                p_up,
                eta_up,
                eta_down,
            } => intensity >= 0.0 && (0.0..=1.0).contains(&p_up) && eta_up > 0.0 && eta_down > 0.0,
            JumpDensity::TemperedStable { c, g, m, y } => c >= 0.0 && g > 0.0 && m > 0.0 && y < 2.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLevy(format!("bad density parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: Vec<f64>,
    pub weight: f64,
}

/// Declared well-definedness case for the jump map (cases (a)-(c) of the growth table).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "kebab-case")]
pub enum GrowthCase {
    /// Finite activity and bounded jump map.
    Bounded,
    /// `|l| <= C(|z|)` and `p <= p*`.
    Moment,
    /// `|l| <= C(1 + |z|^a)` on `|z| >= 1`, value growth `b`, `a b <= p*`.
    Coupled { a: f64, b: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSpec {
    /// Total Gauss-Legendre nodes for the density, split over segments.
    pub nodes: usize,
    /// Truncation radius for large jumps; chosen from the tail mass when absent.
    pub radius: Option<f64>,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            nodes: 256,
            radius: None,
        }
    }
}

/// One quadrature node of the discretized measure.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpNode {
    pub z: Vec<f64>,
    pub weight: f64,
    pub atom: bool,
}

impl JumpNode {
    pub fn size(&self) -> f64 {
        norm(&self.z)
    }
}

/// Tail mass target for the automatic truncation radius.
pub const TAIL_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct LevyModel {
    pub atoms: Vec<Atom>,
    pub density: Option<JumpDensity>,
    pub delta: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub quad: QuadSpec,
    /// Cutoff below which simulated jumps are replaced by a Gaussian.
    pub sim_cutoff: f64,
    pub growth_case: Option<GrowthCase>,
    radius: f64,
    nodes: Vec<JumpNode>,
    sim: SimulationTable,
}

/// Precomputed quantities for path simulation.
#[derive(Clone, Debug, Default)]
struct SimulationTable {
    /// Atom weights plus density masses above the cutoff on each side.
    atom_mass: f64,
    neg_mass: f64,
    pos_mass: f64,
    /// Nodes with cutoff <= |z| < 1 (compensator), and |z| < cutoff (Gaussian closure).
    compensated: Vec<JumpNode>,
    below_cutoff: Vec<JumpNode>,
}

fn gl(n: usize) -> Vec<(f64, f64)> {
    GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap())
        .as_node_weight_pairs()
        .to_vec()
}

/// Maps of [0, 1] used to resolve the origin singularity.
#[derive(Clone, Copy)]
enum Map {
    Linear,
    /// z = a + (b - a) s^3, clustered at `a`.
    Cubic,
    /// z = a (b/a)^s on a same-sign interval.
    Log,
}

fn segment(rule: &[(f64, f64)], a: f64, b: f64, map: Map, density: impl Fn(f64) -> f64, out: &mut Vec<(f64, f64)>) {
    if a == b {
        return;
    }
    for &(node, weight) in rule {
        let s = 0.5 * (node + 1.0);
        let ws = 0.5 * weight;
        let (z, jac) = match map {
            Map::Linear => (a + (b - a) * s, b - a),
            Map::Cubic => (a + (b - a) * s * s * s, 3.0 * (b - a) * s * s),
            Map::Log => {
                let r = (b / a).ln();
                let z = a * (r * s).exp();
                (z, z * r)
            }
        };
        let w = ws * jac * density(z);
        if w != 0.0 {
            out.push((z, w.abs()));
        }
    }
}

/// Discretizes a density over `(-radius, radius)` with breakpoints at 0, ±delta, ±1.
fn discretize(density: &JumpDensity, delta: f64, radius: f64, total_nodes: usize) -> Vec<(f64, f64)> {
    let per = (total_nodes / 6).max(8);
    let rule = gl(per);
    let singular = density.infinite_activity();
    let (near, mid) = if singular {
        (Map::Cubic, Map::Log)
    } else {
        (Map::Linear, Map::Linear)
    };
    let f = |z: f64| density.eval(z);
    let mut out = Vec::with_capacity(6 * per);
    // z > 0: [0, delta] clustered at 0, [delta, 1], [1, radius]
    segment(&rule, 0.0, delta, near, f, &mut out);
    segment(&rule, delta, 1.0, mid, f, &mut out);
    segment(&rule, 1.0, radius, Map::Linear, f, &mut out);
    // z < 0 mirrored
    segment(&rule, -0.0, -delta, near, f, &mut out);
    segment(&rule, -delta, -1.0, mid, f, &mut out);
    segment(&rule, -1.0, -radius, Map::Linear, f, &mut out);
    out
}

fn tail_mass(density: &JumpDensity, radius: f64, p: f64) -> f64 {
    let rule = gl(64);
    let mut pts = Vec::new();
    let far = radius * 64.0;
    segment(&rule, radius, far, Map::Log, |z| z.powf(p) * density.eval(z), &mut pts);
    segment(&rule, -radius, -far, Map::Log, |z| z.abs().powf(p) * density.eval(z), &mut pts);
    pts.iter().map(|p| p.1).sum()
}

impl LevyModel {
    /// No jumps at all.
    pub fn none() -> Self {
        LevyModel::new(Vec::new(), None, 0.01, QuadSpec::default()).expect("empty measure is valid")
    }

    /// Finite measure made of atoms only.
    pub fn atoms(atoms: Vec<Atom>, delta: f64) -> Result<Self> {
        LevyModel::new(atoms, None, delta, QuadSpec::default())
    }

    pub fn new(atoms: Vec<Atom>, density: Option<JumpDensity>, delta: f64, quad: QuadSpec) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidLevy(format!("small-jump cutoff must lie in (0, 1), got {delta}")));
        }
        if let Some(r) = quad.radius {
            if !(r >= 1.0) {
                return Err(Error::InvalidLevy(format!(
                    "quadrature radius {r} < 1 would truncate the compensated zone"
                )));
            }
        }
        for a in &atoms {
            if !(a.weight >= 0.0 && a.weight.is_finite()) || a.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidLevy(format!("bad atom {a:?}")));
            }
        }
        if let Some(d) = &density {
            d.check()?;
            if let Some(a) = atoms.first() {
                if a.z.len() != 1 {
                    return Err(Error::InvalidLevy("densities require a scalar jump variable".into()));
                }
            }
        }
        let (p_star, q_star) = match density {
            Some(JumpDensity::TemperedStable { y, .. }) => (4.0, y.max(0.0)),
            _ => (4.0, 0.0),
        };
        let mut model = LevyModel {
            atoms,
            density,
            delta,
            p_star,
            q_star,
            quad,
            sim_cutoff: 1e-3,
            growth_case: None,
            radius: 1.0,
            nodes: Vec::new(),
            sim: SimulationTable::default(),
        };
        model.rebuild()?;
        Ok(model)
    }

    pub fn with_moments(mut self, p_star: f64, q_star: f64) -> Result<Self> {
        self.p_star = p_star;
        self.q_star = q_star;
        self.rebuild()?;
        Ok(self)
    }

    pub fn with_sim_cutoff(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidLevy(format!("simulation cutoff must lie in (0, 1), got {eps}")));
        }
        self.sim_cutoff = eps;
        self.rebuild()?;
        Ok(self)
    }

    pub fn with_growth_case(mut self, case: GrowthCase) -> Self {
        self.growth_case = Some(case);
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidLevy(format!("small-jump cutoff must lie in (0, 1), got {delta}")));
        }
        self.delta = delta;
        self.rebuild()?;
        Ok(self)
    }

    fn rebuild(&mut self) -> Result<()> {
        self.radius = match (self.quad.radius, &self.density) {
            (Some(r), _) => r,
            (None, None) => 1.0,
            (None, Some(d)) => {
                let mut r = 1.0;
                while tail_mass(d, r, self.p_star) >= TAIL_TOLERANCE && r < 4096.0 {
                    r *= 2.0;
                }
                r
            }
        };
        let mut nodes: Vec<JumpNode> = self
            .atoms
            .iter()
            .filter(|a| a.weight > 0.0)
            .map(|a| JumpNode {
                z: a.z.clone(),
                weight: a.weight,
                atom: true,
            })
            .collect();
        if let Some(d) = &self.density {
            for (z, w) in discretize(d, self.delta, self.radius, self.quad.nodes) {
                nodes.push(JumpNode {
                    z: vec![z],
                    weight: w,
                    atom: false,
                });
            }
        }
        self.nodes = nodes;
        self.sim = self.simulation_table();
        Ok(())
    }

    fn simulation_table(&self) -> SimulationTable {
        let eps = self.sim_cutoff;
        let mut table = SimulationTable {
            atom_mass: self.atoms.iter().map(|a| a.weight).sum(),
            ..Default::default()
        };
        for a in &self.atoms {
            if norm(&a.z) < 1.0 && a.weight > 0.0 {
                table.compensated.push(JumpNode {
                    z: a.z.clone(),
                    weight: a.weight,
                    atom: true,
                });
            }
        }
        let Some(d) = &self.density else {
            return table;
        };
        let rule = gl(48);
        let f = |z: f64| d.eval(z);
        let mut pts = Vec::new();
        if d.infinite_activity() {
            let mut pos = Vec::new();
            segment(&rule, eps, 1.0, Map::Log, f, &mut pos);
            segment(&rule, 1.0, self.radius, Map::Linear, f, &mut pos);
            table.pos_mass = pos.iter().map(|p| p.1).sum();
            let mut neg = Vec::new();
            segment(&rule, -eps, -1.0, Map::Log, f, &mut neg);
            segment(&rule, -1.0, -self.radius, Map::Linear, f, &mut neg);
            table.neg_mass = neg.iter().map(|p| p.1).sum();
            segment(&rule, eps, 1.0, Map::Log, f, &mut pts);
            segment(&rule, -eps, -1.0, Map::Log, f, &mut pts);
            let mut below = Vec::new();
            segment(&rule, 0.0, eps, Map::Cubic, f, &mut below);
            segment(&rule, -0.0, -eps, Map::Cubic, f, &mut below);
            table.below_cutoff = below
                .into_iter()
                .map(|(z, w)| JumpNode {
                    z: vec![z],
                    weight: w,
                    atom: false,
                })
                .collect();
        } else {
            let mut pos = Vec::new();
            segment(&rule, 0.0, self.radius, Map::Linear, f, &mut pos);
            table.pos_mass = pos.iter().map(|p| p.1).sum();
            let mut neg = Vec::new();
            segment(&rule, -0.0, -self.radius, Map::Linear, f, &mut neg);
            table.neg_mass = neg.iter().map(|p| p.1).sum();
            segment(&rule, 0.0, 1.0, Map::Linear, f, &mut pts);
            segment(&rule, -0.0, -1.0, Map::Linear, f, &mut pts);
        }
        table.compensated.extend(pts.into_iter().map(|(z, w)| JumpNode {
            z: vec![z],
            weight: w,
            atom: false,
        }));
        table
    }

    pub fn is_zero(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn infinite_activity(&self) -> bool {
        self.density.as_ref().is_some_and(JumpDensity::infinite_activity)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// All nodes of the discretized measure.
    pub fn nodes(&self) -> &[JumpNode] {
        &self.nodes
    }

    pub fn small_nodes(&self) -> impl Iterator<Item = &JumpNode> {
        let delta = self.delta;
        self.nodes.iter().filter(move |n| n.size() < delta)
    }

    pub fn large_nodes(&self) -> impl Iterator<Item = &JumpNode> {
        let delta = self.delta;
        self.nodes.iter().filter(move |n| n.size() >= delta)
    }

    /// Nodes treated as genuine nonlocal differences in the scheme.
    ///
    /// Finite-activity measures are kept whole, so the scheme does not depend on
    /// delta; for infinite activity the small zone is folded into diffusion.
    pub fn scheme_nonlocal_nodes(&self) -> Box<dyn Iterator<Item = &JumpNode> + '_> {
        if self.infinite_activity() {
            Box::new(self.large_nodes())
        } else {
            Box::new(self.nodes.iter())
        }
    }

    /// Nodes folded into an effective second-order term.
    pub fn scheme_folded_nodes(&self) -> Box<dyn Iterator<Item = &JumpNode> + '_> {
        if self.infinite_activity() {
            Box::new(self.small_nodes())
        } else {
            Box::new(std::iter::empty())
        }
    }

    /// Total mass; infinite for infinite-activity measures.
    pub fn total_mass(&self) -> f64 {
        if self.infinite_activity() {
            f64::INFINITY
        } else {
            self.nodes.iter().map(|n| n.weight).sum()
        }
    }

    /// Numerical value of `∫ (|z|^2 ∧ 1) ν(dz)`.
    pub fn levy_integral(&self) -> f64 {
        self.nodes.iter().map(|n| n.size().powi(2).min(1.0) * n.weight).sum()
    }

    /// Writes the discretized rule as CSV.
    pub fn dump_quadrature(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "index,z,weight,atom,zone")?;
        for (i, n) in self.nodes.iter().enumerate() {
            let z = n.z.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
            let zone = if n.size() < self.delta { "small" } else { "large" };
            writeln!(out, "{i},{z},{:e},{},{zone}", n.weight, n.atom)?;
        }
        Ok(())
    }

    /// Monte Carlo increment of the compensated jump integral over one step.
    #[allow(clippy::too_many_arguments)]
    pub fn sample_increment<R: Rng + ?Sized>(
        &self,
        problem: &Problem,
        t: f64,
        x: &[f64],
        beta: &[f64],
        dt: f64,
        rng: &mut R,
        out: &mut [f64],
    ) {
        out.fill(0.0);
        if self.is_zero() {
            return;
        }
        let d = x.len();
        let mut l = vec![0.0; d];
        for node in &self.sim.compensated {
            problem.jump(t, x, beta, &node.z, &mut l);
            for k in 0..d {
                out[k] -= dt * node.weight * l[k];
            }
        }
        let lambda = self.sim.atom_mass + self.sim.pos_mass + self.sim.neg_mass;
        if lambda > 0.0 {
            let count: f64 = Poisson::new(lambda * dt).map(|p| p.sample(rng)).unwrap_or(0.0);
            let mut z = vec![0.0; problem.dim_z];
            for _ in 0..count as u64 {
                self.sample_jump(lambda, rng, &mut z);
                problem.jump(t, x, beta, &z, &mut l);
                for k in 0..d {
                    out[k] += l[k];
                }
            }
        }
        if !self.sim.below_cutoff.is_empty() {
            // Gaussian closure with covariance ∫_{|z|<eps} l l^T ν(dz)
            let mut cov = vec![0.0; d * d];
            for node in &self.sim.below_cutoff {
                problem.jump(t, x, beta, &node.z, &mut l);
                for a in 0..d {
                    for b in 0..d {
                        cov[a * d + b] += node.weight * l[a] * l[b];
                    }
                }
            }
            let chol = cholesky_psd(&cov, d);
            let xi: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let s = dt.sqrt();
            for a in 0..d {
                out[a] += s * (0..=a).map(|b| chol[a * d + b] * xi[b]).sum::<f64>();
            }
        }
    }

    fn sample_jump<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R, z: &mut [f64]) {
        let mut u = rng.gen::<f64>() * lambda;
        if u < self.sim.atom_mass {
            for a in &self.atoms {
                if u < a.weight {
                    z.copy_from_slice(&a.z);
                    return;
                }
                u -= a.weight;
            }
            let last = self.atoms.last().expect("atom mass implies atoms");
            z.copy_from_slice(&last.z);
            return;
        }
        u -= self.sim.atom_mass;
        let positive = u < self.sim.pos_mass;
        let density = self.density.as_ref().expect("density mass implies density");
        z[0] = match *density {
            JumpDensity::Gaussian { mean, std, .. } => loop {
                let v = mean + std * rng.sample::<f64, _>(StandardNormal);
                if (v > 0.0) == positive && v.abs() <= self.radius {
                    break v;
                }
            },
            JumpDensity::DoubleExponential { eta_up, eta_down, .. } => {
                if positive {
                    Exp::new(eta_up).unwrap().sample(rng)
                } else {
                    -Exp::new(eta_down).unwrap().sample(rng)
                }
            }
            JumpDensity::TemperedStable { g, m, y, .. } => {
                let rate = if positive { m } else { g };
                let lo = if density.infinite_activity() { self.sim_cutoff } else { 0.0 };
                let v = sample_tempered_power(rng, lo, self.radius, y, rate);
                if positive {
                    v
                } else {
                    -v
                }
            }
        };
    }

    /// ∫_{|z|<δ} [u(x+l) - u(x) - <∇u, l>] ν(dz) for a local quadratic model of u.
    ///
    /// For the quadratic model the integrand is exactly `½ lᵀ H l`.
    pub fn integral_small(
        &self,
        local: &LocalQuadratic,
        problem: &Problem,
        t: f64,
        x: &[f64],
        beta: &[f64],
    ) -> Result<f64> {
        if !(self.delta < 1.0) {
            return Err(Error::InvalidLevy(format!("delta must be < 1, got {}", self.delta)));
        }
        let h = local.hessian.as_ref().ok_or(Error::MissingHessian)?;
        let d = x.len();
        let mut l = vec![0.0; d];
        let mut acc = 0.0;
        for node in self.small_nodes() {
            problem.jump(t, x, beta, &node.z, &mut l);
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += l[a] * h[a * d + b] * l[b];
                }
            }
            acc += 0.5 * q * node.weight;
        }
        Ok(acc)
    }

    /// Taylor bound `∫_{|z|<δ} |l|^2 ν(dz) · |H|` for the small-jump integral.
    pub fn small_jump_bound(&self, local: &LocalQuadratic, problem: &Problem, t: f64, x: &[f64], beta: &[f64]) -> Result<f64> {
        let h = local.hessian.as_ref().ok_or(Error::MissingHessian)?;
        let hnorm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut l = vec![0.0; x.len()];
        let mut m2 = 0.0;
        for node in self.small_nodes() {
            problem.jump(t, x, beta, &node.z, &mut l);
            m2 += node.weight * l.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(m2 * hnorm)
    }

    /// ∫_{|z|≥δ} [u(x+l) - u(x) - <p, l> 1_{|z|<1}] ν(dz) on a grid function.
    #[allow(clippy::too_many_arguments)]
    pub fn integral_large(
        &self,
        grid: &Grid,
        u: &[f64],
        p: &[f64],
        problem: &Problem,
        t: f64,
        x: &[f64],
        beta: &[f64],
    ) -> Result<f64> {
        if !(self.radius >= 1.0) {
            return Err(Error::InvalidLevy(format!(
                "quadrature radius {} < 1 would truncate the compensated zone",
                self.radius
            )));
        }
        let d = x.len();
        let ux = grid.evaluate(problem, t, u, x);
        let mut l = vec![0.0; d];
        let mut y = vec![0.0; d];
        let mut acc = 0.0;
        for node in self.large_nodes() {
            problem.jump(t, x, beta, &node.z, &mut l);
            for k in 0..d {
                y[k] = x[k] + l[k];
            }
            let mut term = grid.evaluate(problem, t, u, &y) - ux;
            if node.size() < 1.0 {
                term -= p.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>();
            }
            acc += node.weight * term;
        }
        Ok(acc)
    }
}

/// Value, gradient and (row-major) Hessian of u at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalQuadratic {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<Vec<f64>>,
}

impl LocalQuadratic {
    /// Central differences at an interior node; `hessian` is `None` on the box edge.
    pub fn from_grid(grid: &Grid, u: &[f64], i: usize) -> LocalQuadratic {
        let d = grid.dim();
        let mut gradient = vec![0.0; d];
        let mut hessian = vec![0.0; d * d];
        let mut interior = true;
        for k in 0..d {
            let n = grid.axis(k).len();
            let ik = grid.axis_index(i, k);
            if ik == 0 || ik + 1 == n {
                interior = false;
                continue;
            }
            let s = grid.stride(k);
            let a = grid.axis(k);
            let (hm, hp) = (a[ik] - a[ik - 1], a[ik + 1] - a[ik]);
            let (um, u0, up) = (u[i - s], u[i], u[i + s]);
            gradient[k] = (hm * hm * (up - u0) + hp * hp * (u0 - um)) / (hm * hp * (hm + hp));
            hessian[k * d + k] = 2.0 * (hm * (up - u0) - hp * (u0 - um)) / (hm * hp * (hm + hp));
        }
        if interior {
            for k in 0..d {
                for l in (k + 1)..d {
                    let (sk, sl) = (grid.stride(k), grid.stride(l));
                    let ak = grid.axis(k);
                    let al = grid.axis(l);
                    let ik = grid.axis_index(i, k);
                    let il = grid.axis_index(i, l);
                    let hk = ak[ik + 1] - ak[ik - 1];
                    let hl = al[il + 1] - al[il - 1];
                    let v = (u[i + sk + sl] - u[i + sk - sl] - u[i - sk + sl] + u[i - sk - sl]) / (hk * hl);
                    hessian[k * d + l] = v;
                    hessian[l * d + k] = v;
                }
            }
        }
        LocalQuadratic {
            value: u[i],
            gradient,
            hessian: interior.then_some(hessian),
        }
    }
}

/// Lower-triangular factor of a symmetric positive semidefinite matrix.
fn cholesky_psd(a: &[f64], d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                l[i * d + i] = s.max(0.0).sqrt();
            } else if l[j * d + j] > 0.0 {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    l
}

/// Samples `z ∝ z^{-1-y} e^{-rate z}` on `[lo, hi]` by power-law proposal and rejection.
fn sample_tempered_power<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64, y: f64, rate: f64) -> f64 {
    let a = -y;
    loop {
        let u: f64 = rng.gen();
        let z = if lo <= 0.0 {
            // finite-activity branch (y < 0): z^{a-1} on [0, hi]
            hi * u.powf(1.0 / a)
        } else if a.abs() < 1e-12 {
            lo * (hi / lo).powf(u)
        } else {
            (lo.powf(a) + u * (hi.powf(a) - lo.powf(a))).powf(1.0 / a)
        };
        if rng.gen::<f64>() < (-rate * (z - lo.max(0.0))).exp() {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Domain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn additive_problem(lo: f64, hi: f64) -> Problem {
        Problem::builder(1, Domain::whole_space(vec![lo], vec![hi]))
            .growth(2.0)
            .jump_map(|_, _, _, z, out| out[0] = z[0])
            .build()
            .unwrap()
    }

    fn quadratic_local(x: f64) -> LocalQuadratic {
        LocalQuadratic {
            value: x * x,
            gradient: vec![2.0 * x],
            hessian: Some(vec![2.0]),
        }
    }

    #[test]
    fn delta_out_of_range_rejected() {
        assert!(LevyModel::atoms(vec![], 1.0).is_err());
        assert!(LevyModel::atoms(vec![], 0.0).is_err());
        let quad = QuadSpec {
            nodes: 64,
            radius: Some(0.5),
        };
        assert!(LevyModel::new(vec![], None, 0.1, quad).is_err());
    }

    #[test]
    fn small_integral_atom_inside_zone() {
        let p = additive_problem(-2.0, 2.0);
        let nu = LevyModel::atoms(vec![Atom { z: vec![0.5], weight: 1.0 }], 0.6).unwrap();
        for &x in &[-1.0, 0.0, 0.3] {
            let v = nu.integral_small(&quadratic_local(x), &p, 0.0, &[x], &[0.0]).unwrap();
            // (x+0.5)^2 - x^2 - 2x*0.5
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn small_integral_vanishes_on_affine_and_constant() {
        let p = additive_problem(-2.0, 2.0);
        let nu = LevyModel::new(
            vec![Atom { z: vec![0.005], weight: 3.0 }],
            Some(JumpDensity::TemperedStable { c: 1.0, g: 2.0, m: 3.0, y: 0.7 }),
            0.05,
            QuadSpec::default(),
        )
        .unwrap();
        let affine = LocalQuadratic {
            value: 1.0,
            gradient: vec![3.0],
            hessian: Some(vec![0.0]),
        };
        assert_eq!(nu.integral_small(&affine, &p, 0.0, &[0.2], &[0.0]).unwrap(), 0.0);
        let missing = LocalQuadratic {
            hessian: None,
            ..affine
        };
        assert!(matches!(
            nu.integral_small(&missing, &p, 0.0, &[0.2], &[0.0]),
            Err(Error::MissingHessian)
        ));
    }

    #[test]
    fn small_integral_respects_taylor_bound() {
        let p = additive_problem(-2.0, 2.0);
        let nu = LevyModel::new(
            vec![],
            Some(JumpDensity::TemperedStable { c: 0.5, g: 1.0, m: 1.5, y: 1.2 }),
            0.1,
            QuadSpec::default(),
        )
        .unwrap();
        let local = LocalQuadratic {
            value: 0.0,
            gradient: vec![0.0],
            hessian: Some(vec![-3.0]),
        };
        let v = nu.integral_small(&local, &p, 0.0, &[0.0], &[0.0]).unwrap();
        let bound = nu.small_jump_bound(&local, &p, 0.0, &[0.0], &[0.0]).unwrap();
        assert!(v.abs() <= bound + 1e-15);
        assert!(v < 0.0);
    }

    #[test]
    fn large_integral_atom_examples() {
        let p = additive_problem(-3.0, 3.0);
        let grid = Grid::uniform(&p, &[61], Some(1)).unwrap();
        let quad = crate::grid::ValueField::from_fn(&grid, None, |x| x[0] * x[0]);
        let nu = LevyModel::atoms(vec![Atom { z: vec![1.5], weight: 2.0 }], 0.5).unwrap();
        let v = nu.integral_large(&grid, &quad.values, &[0.0], &p, 0.0, &[0.0], &[0.0]).unwrap();
        assert!((v - 4.5).abs() < 1e-12);

        let lin = crate::grid::ValueField::from_fn(&grid, None, |x| x[0]);
        let nu = LevyModel::atoms(vec![Atom { z: vec![0.8], weight: 1.0 }], 0.5).unwrap();
        for &x in &[-1.0, 0.0, 1.1] {
            let v = nu.integral_large(&grid, &lin.values, &[1.0], &p, 0.0, &[x], &[0.0]).unwrap();
            assert!(v.abs() < 1e-12, "x={x}: {v}");
        }
        let constant = crate::grid::ValueField::from_fn(&grid, None, |_| 7.0);
        let nu = LevyModel::atoms(
            vec![Atom { z: vec![1.2], weight: 0.7 }, Atom { z: vec![-2.0], weight: 0.2 }],
            0.5,
        )
        .unwrap();
        let v = nu.integral_large(&grid, &constant.values, &[42.0], &p, 0.0, &[0.5], &[0.0]).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_mass_and_levy_integral() {
        let nu = LevyModel::new(
            vec![],
            Some(JumpDensity::Gaussian { intensity: 2.0, mean: 0.1, std: 0.3 }),
            0.05,
            QuadSpec::default(),
        )
        .unwrap();
        assert!((nu.total_mass() - 2.0).abs() < 1e-9);
        assert!(nu.levy_integral().is_finite());
    }

    #[test]
    fn tempered_stable_radius_meets_tail_target() {
        let d = JumpDensity::TemperedStable { c: 1.0, g: 5.0, m: 5.0, y: 0.5 };
        let nu = LevyModel::new(vec![], Some(d.clone()), 0.01, QuadSpec::default()).unwrap();
        assert!(nu.infinite_activity());
        assert!(tail_mass(&d, nu.radius(), nu.p_star) < TAIL_TOLERANCE);
        // second moment against a fine reference on the same breakpoints
        let m2: f64 = nu.nodes().iter().map(|n| n.z[0] * n.z[0] * n.weight).sum();
        let fine = discretize(&d, 0.01, nu.radius(), 4096);
        let m2_ref: f64 = fine.iter().map(|(z, w)| z * z * w).sum();
        assert!((m2 - m2_ref).abs() < 1e-6 * m2_ref, "{m2} vs {m2_ref}");
    }

    #[test]
    fn zero_measure_gives_zero_increment() {
        let p = additive_problem(-1.0, 1.0);
        let nu = LevyModel::none();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = [1.0];
        for _ in 0..100 {
            nu.sample_increment(&p, 0.0, &[0.0], &[0.0], 0.1, &mut rng, &mut out);
            assert_eq!(out[0], 0.0);
        }
    }

    fn increment_stats(nu: &LevyModel, n: usize) -> (f64, f64) {
        let p = additive_problem(-5.0, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut out = [0.0];
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            nu.sample_increment(&p, 0.0, &[0.0], &[0.0], 1.0, &mut rng, &mut out);
            s += out[0];
            s2 += out[0] * out[0];
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn compound_poisson_mean_uncompensated() {
        let nu = LevyModel::atoms(vec![Atom { z: vec![1.0], weight: 2.0 }], 0.5).unwrap();
        let (mean, se) = increment_stats(&nu, 40_000);
        assert!((mean - 2.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn compound_poisson_mean_compensated() {
        let nu = LevyModel::atoms(vec![Atom { z: vec![0.5], weight: 4.0 }], 0.1).unwrap();
        let (mean, se) = increment_stats(&nu, 40_000);
        assert!(mean.abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn tempered_stable_increment_is_centred() {
        // Symmetric tempered stable with additive jumps: compensated small and
        // mid-size jumps cancel; large jumps are symmetric, so the mean is 0.
        let nu = LevyModel::new(
            vec![],
            Some(JumpDensity::TemperedStable { c: 0.3, g: 3.0, m: 3.0, y: 0.8 }),
            0.05,
            QuadSpec::default(),
        )
        .unwrap();
        let (mean, se) = increment_stats(&nu, 20_000);
        assert!(mean.abs() < 3.5 * se, "mean {mean} se {se}");
    }
}
