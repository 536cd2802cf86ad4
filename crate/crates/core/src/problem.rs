//! Control problem instances: dynamics, payoff, impulse structure and domain.
//!
//! Coefficients are plain callbacks. Vector-valued callbacks write into a
//! caller-provided output slice so the hot assembly loops do not allocate.
//! The diffusion matrix is stored row-major with shape `dim_x × dim_w`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// `(t, x, beta, out)`: drift, or row-major diffusion matrix.
pub type CoefficientFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, beta, z, out)`: jump map.
pub type JumpMapFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, beta)`: running profit.
pub type RunningFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// `(t, x)`: terminal / exit profit.
pub type StateFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// `(t, x, zeta)`: impulse cost.
pub type ImpulseCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// `(t, x, zeta, out)`: post-impulse state.
pub type ImpulseMapFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x)`: finite list of admissible impulses.
pub type CandidateFn = Arc<dyn Fn(f64, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;
/// Membership in the open set S.
pub type RegionFn = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Parabolic { maturity: f64 },
    Elliptic { rho: f64 },
}

impl Horizon {
    pub fn is_elliptic(&self) -> bool {
        matches!(self, Horizon::Elliptic { .. })
    }

    pub fn maturity(&self) -> Option<f64> {
        match *self {
            Horizon::Parabolic { maturity } => Some(maturity),
            Horizon::Elliptic { .. } => None,
        }
    }

    pub fn rho(&self) -> Option<f64> {
        match *self {
            Horizon::Elliptic { rho } => Some(rho),
            Horizon::Parabolic { .. } => None,
        }
    }
}

/// Bounding box used for truncation together with the open set S.
#[derive(Clone)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    region: RegionFn,
}

impl Domain {
    /// S is all of R^d; the box only truncates.
    pub fn whole_space(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Domain {
            lower,
            upper,
            region: Arc::new(|_| true),
        }
    }

    /// S is the open box `(s_lower, s_upper)`.
    pub fn open_box(lower: Vec<f64>, upper: Vec<f64>, s_lower: Vec<f64>, s_upper: Vec<f64>) -> Self {
        Domain {
            lower,
            upper,
            region: Arc::new(move |x: &[f64]| {
                x.iter()
                    .zip(s_lower.iter().zip(&s_upper))
                    .all(|(&xi, (&lo, &hi))| xi > lo && xi < hi)
            }),
        }
    }

    pub fn with_region(lower: Vec<f64>, upper: Vec<f64>, region: RegionFn) -> Self {
        Domain {
            lower,
            upper,
            region,
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Is `x` in the open set S.
    pub fn contains(&self, x: &[f64]) -> bool {
        (self.region)(x)
    }

    pub fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    /// Writes the nearest box point into `out`; returns whether anything moved.
    pub fn clamp(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut moved = false;
        for k in 0..x.len() {
            let c = x[k].clamp(self.lower[k], self.upper[k]);
            moved |= c != x[k];
            out[k] = c;
        }
        moved
    }

    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub(crate) fn check(&self, dim: usize) -> Result<()> {
        if self.lower.len() != dim || self.upper.len() != dim {
            return Err(Error::DegenerateBox(format!(
                "box has {} / {} bounds for dimension {dim}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (k, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::DegenerateBox(format!("axis {k}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Impulse structure: candidate list Z(t,x), map Gamma and cost K.
#[derive(Clone)]
pub struct Impulses {
    pub candidates: CandidateFn,
    pub map: ImpulseMapFn,
    pub cost: ImpulseCostFn,
}

impl Impulses {
    pub fn new(candidates: CandidateFn, map: ImpulseMapFn, cost: ImpulseCostFn) -> Self {
        Impulses {
            candidates,
            map,
            cost,
        }
    }

    /// Gamma(x, zeta) = zeta over a fixed target list; K = -fixed - proportional * |zeta - x|.
    pub fn jump_to(targets: Vec<Vec<f64>>, fixed: f64, proportional: f64) -> Self {
        Impulses {
            candidates: Arc::new(move |_, _| targets.clone()),
            map: Arc::new(|_, _, z, out| out.copy_from_slice(z)),
            cost: Arc::new(move |_, x, z| -fixed - proportional * dist(x, z)),
        }
    }

    /// Gamma(x, zeta) = x + zeta; K = -fixed - proportional * |zeta|.
    pub fn shifts(shifts: Vec<Vec<f64>>, fixed: f64, proportional: f64) -> Self {
        Impulses {
            candidates: Arc::new(move |_, _| shifts.clone()),
            map: Arc::new(|_, x, z, out| {
                for k in 0..x.len() {
                    out[k] = x[k] + z[k];
                }
            }),
            cost: Arc::new(move |_, _, z| -fixed - proportional * norm(z)),
        }
    }

    /// Gamma(x, theta) = (1 - theta) x for fractions theta in (0, 1].
    pub fn toward_origin(fractions: Vec<f64>, fixed: f64, proportional: f64) -> Self {
        Impulses {
            candidates: Arc::new(move |_, _| fractions.iter().map(|&f| vec![f]).collect()),
            map: Arc::new(|_, x, z, out| {
                for k in 0..x.len() {
                    out[k] = (1.0 - z[0]) * x[k];
                }
            }),
            cost: Arc::new(move |_, x, z| -fixed - proportional * z[0] * norm(x)),
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// One impulse/stochastic control problem.
///
/// In parabolic mode a nonzero `discount` weights f, g and K by `exp(-discount * t)`;
/// this is the form produced by lifting an elliptic problem to a finite horizon.
#[derive(Clone)]
pub struct Problem {
    pub horizon: Horizon,
    pub dim_x: usize,
    pub dim_w: usize,
    pub dim_z: usize,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    jump: JumpMapFn,
    running: RunningFn,
    terminal: StateFn,
    impulses: Option<Impulses>,
    pub controls: Vec<Vec<f64>>,
    pub domain: Domain,
    pub growth_p: f64,
    /// Declared k0 of the fixed-cost condition `K <= -k0 < 0`.
    pub fixed_cost: Option<f64>,
    pub discount: f64,
    /// Declares that no callback depends on t (always true for elliptic problems).
    /// Lets the solver assemble the operator once.
    pub time_homogeneous: bool,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("horizon", &self.horizon)
            .field("dim_x", &self.dim_x)
            .field("dim_w", &self.dim_w)
            .field("dim_z", &self.dim_z)
            .field("controls", &self.controls)
            .field("box_lower", &self.domain.lower)
            .field("box_upper", &self.domain.upper)
            .field("growth_p", &self.growth_p)
            .field("fixed_cost", &self.fixed_cost)
            .field("discount", &self.discount)
            .field("impulses", &self.impulses.is_some())
            .finish()
    }
}

impl Problem {
    pub fn builder(dim_x: usize, domain: Domain) -> ProblemBuilder {
        ProblemBuilder::new(dim_x, domain)
    }

    /// Data weight `exp(-discount * t)` in parabolic mode, 1 in elliptic mode.
    #[inline]
    pub fn weight(&self, t: f64) -> f64 {
        match self.horizon {
            Horizon::Parabolic { .. } if self.discount != 0.0 => (-self.discount * t).exp(),
            _ => 1.0,
        }
    }

    #[inline]
    pub fn drift(&self, t: f64, x: &[f64], beta: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, beta, out)
    }

    /// Row-major `dim_x × dim_w`.
    #[inline]
    pub fn diffusion(&self, t: f64, x: &[f64], beta: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, beta, out)
    }

    #[inline]
    pub fn jump(&self, t: f64, x: &[f64], beta: &[f64], z: &[f64], out: &mut [f64]) {
        (self.jump)(t, x, beta, z, out)
    }

    #[inline]
    pub fn running(&self, t: f64, x: &[f64], beta: &[f64]) -> f64 {
        self.weight(t) * (self.running)(t, x, beta)
    }

    #[inline]
    pub fn terminal(&self, t: f64, x: &[f64]) -> f64 {
        self.weight(t) * (self.terminal)(t, x)
    }

    pub fn has_impulses(&self) -> bool {
        self.impulses.is_some()
    }

    pub fn impulses(&self) -> Option<&Impulses> {
        self.impulses.as_ref()
    }

    /// Z(t, x); an empty list is the excluded case and is an error.
    pub fn candidates(&self, t: f64, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        match &self.impulses {
            None => Ok(Vec::new()),
            Some(imp) => {
                let z = (imp.candidates)(t, x);
                if z.is_empty() {
                    Err(Error::EmptyTransactionSet { t, x: x.to_vec() })
                } else {
                    Ok(z)
                }
            }
        }
    }

    /// Panics if the problem has no impulses.
    #[inline]
    pub fn impulse_target(&self, t: f64, x: &[f64], zeta: &[f64], out: &mut [f64]) {
        let imp = self.impulses.as_ref().expect("problem has no impulses");
        (imp.map)(t, x, zeta, out)
    }

    /// Discount-weighted impulse cost. Panics if the problem has no impulses.
    #[inline]
    pub fn impulse_cost(&self, t: f64, x: &[f64], zeta: &[f64]) -> f64 {
        let imp = self.impulses.as_ref().expect("problem has no impulses");
        self.weight(t) * (imp.cost)(t, x, zeta)
    }

    /// Same problem with `f` and `g` replaced; used for ordered problem pairs.
    pub fn with_payoff(&self, running: RunningFn, terminal: StateFn) -> Problem {
        Problem {
            running,
            terminal,
            ..self.clone()
        }
    }

    pub fn with_impulses(&self, impulses: Option<Impulses>) -> Problem {
        Problem {
            impulses,
            ..self.clone()
        }
    }

    pub fn with_horizon(&self, horizon: Horizon) -> Problem {
        Problem {
            horizon,
            ..self.clone()
        }
    }

    pub fn running_fn(&self) -> RunningFn {
        self.running.clone()
    }

    pub fn terminal_fn(&self) -> StateFn {
        self.terminal.clone()
    }

    /// Elliptic problem obtained from a discounted, time-homogeneous parabolic one.
    ///
    /// The parabolic data are `exp(-rho t) f(x, beta)` etc. and the value function
    /// factors as `exp(-rho t) w(x)`; `w` solves the elliptic QVI with discount rho.
    pub fn to_elliptic(&self) -> Result<Problem> {
        let maturity = match self.horizon {
            Horizon::Parabolic { maturity } => maturity,
            Horizon::Elliptic { .. } => {
                return Err(Error::InvalidProblem("problem is already elliptic".into()))
            }
        };
        if !(self.discount > 0.0) {
            return Err(Error::InvalidProblem(format!(
                "discount rate must be positive for the elliptic transform, got {}",
                self.discount
            )));
        }
        if !self.time_homogeneous {
            return Err(Error::TimeDependent("problem is not declared time-homogeneous".into()));
        }
        if let Some(report) = self.sampled_time_dependence(maturity) {
            return Err(Error::TimeDependent(report));
        }
        Ok(Problem {
            horizon: Horizon::Elliptic { rho: self.discount },
            ..self.clone()
        })
    }

    /// Inverse of [`Problem::to_elliptic`]: finite horizon with `exp(-rho t)` weighted data.
    pub fn to_parabolic(&self, maturity: f64) -> Result<Problem> {
        let rho = match self.horizon {
            Horizon::Elliptic { rho } => rho,
            Horizon::Parabolic { .. } => {
                return Err(Error::InvalidProblem("problem is already parabolic".into()))
            }
        };
        if !(maturity > 0.0) {
            return Err(Error::InvalidProblem(format!("maturity must be positive, got {maturity}")));
        }
        Ok(Problem {
            horizon: Horizon::Parabolic { maturity },
            discount: rho,
            time_homogeneous: true,
            ..self.clone()
        })
    }

    /// Compares the raw callbacks at two time points over a small sample of states.
    fn sampled_time_dependence(&self, maturity: f64) -> Option<String> {
        let d = self.dim_x;
        let mut x = vec![0.0; d];
        let mut a = vec![0.0; d * self.dim_w.max(d)];
        let mut b = a.clone();
        let times = [0.0, 0.37 * maturity, maturity];
        for s in 0..9 {
            for k in 0..d {
                let frac = (s as f64 + 0.5) / 9.0;
                x[k] = self.domain.lower[k] + frac * (self.domain.upper[k] - self.domain.lower[k]);
            }
            for beta in &self.controls {
                (self.drift)(times[0], &x, beta, &mut a[..d]);
                for &t in &times[1..] {
                    (self.drift)(t, &x, beta, &mut b[..d]);
                    if a[..d] != b[..d] {
                        return Some(format!("drift depends on t at x={x:?}"));
                    }
                }
                let dw = d * self.dim_w;
                (self.diffusion)(times[0], &x, beta, &mut a[..dw]);
                for &t in &times[1..] {
                    (self.diffusion)(t, &x, beta, &mut b[..dw]);
                    if a[..dw] != b[..dw] {
                        return Some(format!("diffusion depends on t at x={x:?}"));
                    }
                }
                let f0 = (self.running)(times[0], &x, beta);
                if times[1..].iter().any(|&t| (self.running)(t, &x, beta) != f0) {
                    return Some(format!("running profit depends on t at x={x:?}"));
                }
            }
            let g0 = (self.terminal)(times[0], &x);
            if times[1..].iter().any(|&t| (self.terminal)(t, &x) != g0) {
                return Some(format!("terminal profit depends on t at x={x:?}"));
            }
        }
        None
    }
}

pub struct ProblemBuilder {
    horizon: Horizon,
    dim_x: usize,
    dim_w: usize,
    dim_z: usize,
    drift: Option<CoefficientFn>,
    diffusion: Option<CoefficientFn>,
    jump: Option<JumpMapFn>,
    running: Option<RunningFn>,
    terminal: Option<StateFn>,
    impulses: Option<Impulses>,
    controls: Vec<Vec<f64>>,
    domain: Domain,
    growth_p: f64,
    fixed_cost: Option<f64>,
    discount: f64,
    time_homogeneous: bool,
}

impl ProblemBuilder {
    fn new(dim_x: usize, domain: Domain) -> Self {
        ProblemBuilder {
            horizon: Horizon::Parabolic { maturity: 1.0 },
            dim_x,
            dim_w: dim_x,
            dim_z: 1,
            drift: None,
            diffusion: None,
            jump: None,
            running: None,
            terminal: None,
            impulses: None,
            controls: vec![vec![0.0]],
            domain,
            growth_p: 0.0,
            fixed_cost: None,
            discount: 0.0,
            time_homogeneous: false,
        }
    }

    pub fn parabolic(mut self, maturity: f64) -> Self {
        self.horizon = Horizon::Parabolic { maturity };
        self
    }

    pub fn elliptic(mut self, rho: f64) -> Self {
        self.horizon = Horizon::Elliptic { rho };
        self
    }

    pub fn brownian_dim(mut self, m: usize) -> Self {
        self.dim_w = m;
        self
    }

    pub fn jump_dim(mut self, k: usize) -> Self {
        self.dim_z = k;
        self
    }

    pub fn drift(mut self, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    /// Constant diagonal diffusion `vol * I`.
    pub fn constant_vol(self, vol: f64) -> Self {
        let d = self.dim_x;
        let m = self.dim_w;
        self.diffusion(move |_, _, _, out| {
            out.fill(0.0);
            for k in 0..d.min(m) {
                out[k * m + k] = vol;
            }
        })
    }

    pub fn jump_map(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jump = Some(Arc::new(f));
        self
    }

    pub fn running(mut self, f: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.running = Some(Arc::new(f));
        self
    }

    pub fn terminal(mut self, g: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal = Some(Arc::new(g));
        self
    }

    pub fn impulses(mut self, impulses: Impulses) -> Self {
        self.impulses = Some(impulses);
        self
    }

    pub fn controls(mut self, controls: Vec<Vec<f64>>) -> Self {
        self.controls = controls;
        self
    }

    pub fn growth(mut self, p: f64) -> Self {
        self.growth_p = p;
        self
    }

    pub fn fixed_cost(mut self, k0: f64) -> Self {
        self.fixed_cost = Some(k0);
        self
    }

    pub fn discount(mut self, rho: f64) -> Self {
        self.discount = rho;
        self
    }

    pub fn time_homogeneous(mut self, yes: bool) -> Self {
        self.time_homogeneous = yes;
        self
    }

    pub fn build(self) -> Result<Problem> {
        let d = self.dim_x;
        if d == 0 || self.dim_w == 0 || self.dim_z == 0 {
            return Err(Error::InvalidProblem("dimensions must be at least 1".into()));
        }
        self.domain.check(d)?;
        if self.controls.is_empty() {
            return Err(Error::EmptyControlSet);
        }
        match self.horizon {
            Horizon::Parabolic { maturity } if !(maturity > 0.0 && maturity.is_finite()) => {
                return Err(Error::InvalidProblem(format!("maturity must be positive, got {maturity}")))
            }
            Horizon::Elliptic { rho } if !(rho >= 0.0 && rho.is_finite()) => {
                return Err(Error::InvalidProblem(format!("rho must be non-negative, got {rho}")))
            }
            _ => {}
        }
        if !(self.growth_p >= 0.0) {
            return Err(Error::InvalidProblem("growth exponent must be non-negative".into()));
        }
        if let Some(k0) = self.fixed_cost {
            if !(k0 > 0.0) {
                return Err(Error::InvalidProblem(format!("declared fixed cost must be positive, got {k0}")));
            }
        }
        Ok(Problem {
            horizon: self.horizon,
            dim_x: d,
            dim_w: self.dim_w,
            dim_z: self.dim_z,
            drift: self.drift.unwrap_or_else(|| Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0))),
            diffusion: self
                .diffusion
                .unwrap_or_else(|| Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0))),
            jump: self
                .jump
                .unwrap_or_else(|| Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0))),
            running: self.running.unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
            terminal: self.terminal.unwrap_or_else(|| Arc::new(|_, _| 0.0)),
            impulses: self.impulses,
            controls: self.controls,
            domain: self.domain,
            growth_p: self.growth_p,
            fixed_cost: self.fixed_cost,
            discount: self.discount,
            time_homogeneous: self.time_homogeneous || self.horizon.is_elliptic(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_problem() -> ProblemBuilder {
        Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
    }

    #[test]
    fn empty_controls_rejected() {
        let err = unit_problem().controls(vec![]).build().unwrap_err();
        assert!(matches!(err, Error::EmptyControlSet));
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = Problem::builder(1, Domain::whole_space(vec![1.0], vec![1.0]))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateBox(_)));
    }

    #[test]
    fn empty_candidate_list_is_error() {
        let imp = Impulses::new(
            Arc::new(|_, x: &[f64]| if x[0] > 0.0 { vec![] } else { vec![vec![0.0]] }),
            Arc::new(|_, _, z, out| out.copy_from_slice(z)),
            Arc::new(|_, _, _| -1.0),
        );
        let p = unit_problem().impulses(imp).build().unwrap();
        assert!(p.candidates(0.0, &[-0.5]).is_ok());
        assert!(matches!(
            p.candidates(0.0, &[0.5]),
            Err(Error::EmptyTransactionSet { .. })
        ));
    }

    #[test]
    fn elliptic_transform_strips_discount_weight() {
        let p = unit_problem()
            .parabolic(2.0)
            .discount(1.0)
            .time_homogeneous(true)
            .running(|_, x, _| x[0] * x[0])
            .build()
            .unwrap();
        let x = [0.7];
        assert!((p.running(0.5, &x, &[0.0]) - (-0.5f64).exp() * 0.49).abs() < 1e-15);
        let e = p.to_elliptic().unwrap();
        assert_eq!(e.horizon, Horizon::Elliptic { rho: 1.0 });
        assert!((e.running(0.5, &x, &[0.0]) - 0.49).abs() < 1e-15);
    }

    #[test]
    fn zero_discount_rejected() {
        let p = unit_problem().parabolic(1.0).build().unwrap();
        assert!(p.to_elliptic().is_err());
    }

    #[test]
    fn time_dependent_data_rejected() {
        let p = unit_problem()
            .parabolic(1.0)
            .discount(0.5)
            .running(|t, _, _| t)
            .build()
            .unwrap();
        assert!(matches!(p.to_elliptic(), Err(Error::TimeDependent(_))));
        let declared = unit_problem()
            .parabolic(1.0)
            .discount(0.5)
            .time_homogeneous(false)
            .build()
            .unwrap();
        assert!(matches!(declared.to_elliptic(), Err(Error::TimeDependent(_))));
    }

    #[test]
    fn lift_then_transform_is_identity_on_samples() {
        let e = unit_problem()
            .elliptic(0.8)
            .running(|_, x, b| x[0].sin() + b[0])
            .terminal(|_, x| x[0].cos())
            .build()
            .unwrap();
        let back = e.to_parabolic(3.0).unwrap().to_elliptic().unwrap();
        for i in 0..50 {
            let x = [-1.0 + 2.0 * i as f64 / 49.0];
            assert!((back.running(0.0, &x, &[0.3]) - e.running(0.0, &x, &[0.3])).abs() <= 1e-12);
            assert!((back.terminal(0.0, &x) - e.terminal(0.0, &x)).abs() <= 1e-12);
        }
        assert_eq!(back.horizon, e.horizon);
    }
}
