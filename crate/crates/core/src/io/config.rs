//! TOML problem descriptions.
//!
//! A config names one of a small catalogue of dynamics, payoff shapes, impulse
//! families and Lévy measures. Every violated key is reported at once; the
//! config hash is the SHA-256 of the parsed config as canonical (sorted-key) JSON,
//! so it does not depend on key order or formatting.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::levy::{Atom, GrowthCase, JumpDensity, LevyModel, QuadSpec};
use crate::mc::SimOptions;
use crate::problem::{Domain, Impulses, Problem};
use crate::solver::SolverOptions;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub maturity: Option<f64>,
    pub rho: Option<f64>,
    /// Parabolic only: data weighted by `exp(-discount t)`.
    #[serde(default)]
    pub discount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub growth_p: f64,
    /// Open box S; S is the whole space when absent.
    pub inside: Option<BoxConfig>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    /// `dX = (m + β) dt + s dW` (β added when `control_in_drift`).
    #[default]
    Brownian,
    /// `dX = (m - θ X + β) dt + s dW`.
    Ou,
    /// `dX = X (m + β) dt + X s dW` componentwise.
    Gbm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JumpMapKind {
    /// `l_k(z) = z_k`.
    #[default]
    Additive,
    /// `l_k(x, z) = x_k z_k`.
    Proportional,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default)]
    pub kind: DynamicsKind,
    /// Per-axis drift m (default 0).
    pub drift: Option<Vec<f64>>,
    /// Per-axis volatility s (default 0).
    pub vol: Option<Vec<f64>>,
    /// Per-axis mean reversion θ for `ou`.
    pub reversion: Option<Vec<f64>>,
    /// Correlation of the first two Brownian drivers.
    #[serde(default)]
    pub correlation: f64,
    #[serde(default)]
    pub control_in_drift: bool,
    #[serde(default)]
    pub jump_map: JumpMapKind,
}

/// Scalar functions of the state used for f and g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FnSpec {
    Constant { value: f64 },
    /// `Σ c_k x_axis^k`.
    Polynomial { coeffs: Vec<f64>, #[serde(default)] axis: usize },
    /// `scale |x - center|^2`.
    Quadratic { scale: f64, center: Option<Vec<f64>> },
    /// `scale |x - center|`.
    Abs { scale: f64, center: Option<Vec<f64>> },
    /// `scale |x|^power`.
    Power { scale: f64, power: f64 },
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`.
    Gaussian { amplitude: f64, width: f64, center: Option<Vec<f64>> },
    /// `max(x_axis - strike, 0)`.
    Call { strike: f64, #[serde(default)] axis: usize },
    /// `max(strike - x_axis, 0)`.
    Put { strike: f64, #[serde(default)] axis: usize },
    Sum { terms: Vec<FnSpec> },
}

fn dist2(x: &[f64], c: &Option<Vec<f64>>) -> f64 {
    match c {
        Some(c) => x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum(),
        None => x.iter().map(|a| a * a).sum(),
    }
}

impl FnSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            FnSpec::Constant { value } => *value,
            FnSpec::Polynomial { coeffs, axis } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x[*axis] + c),
            FnSpec::Quadratic { scale, center } => scale * dist2(x, center),
            FnSpec::Abs { scale, center } => scale * dist2(x, center).sqrt(),
            FnSpec::Power { scale, power } => scale * dist2(x, &None).sqrt().powf(*power),
            FnSpec::Gaussian {
                amplitude,
                width,
                center,
            } => amplitude * (-dist2(x, center) / (2.0 * width * width)).exp(),
            FnSpec::Call { strike, axis } => (x[*axis] - strike).max(0.0),
            FnSpec::Put { strike, axis } => (strike - x[*axis]).max(0.0),
            FnSpec::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }

    fn check(&self, d: usize, key: &str, out: &mut Vec<String>) {
        let center_ok = |c: &Option<Vec<f64>>| c.as_ref().is_none_or(|c| c.len() == d);
        match self {
            FnSpec::Polynomial { axis, .. } | FnSpec::Call { axis, .. } | FnSpec::Put { axis, .. } if *axis >= d => {
                out.push(format!("{key}.axis: {axis} out of range for dimension {d}"))
            }
            FnSpec::Quadratic { center, .. } | FnSpec::Abs { center, .. } if !center_ok(center) => {
                out.push(format!("{key}.center: expected {d} entries"))
            }
            FnSpec::Gaussian { center, width, .. } => {
                if !center_ok(center) {
                    out.push(format!("{key}.center: expected {d} entries"));
                }
                if !(*width > 0.0) {
                    out.push(format!("{key}.width: must be positive"));
                }
            }
            FnSpec::Sum { terms } => {
                for (i, t) in terms.iter().enumerate() {
                    t.check(d, &format!("{key}.terms[{i}]"), out);
                }
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    pub running: Option<FnSpec>,
    pub terminal: Option<FnSpec>,
    /// f is reduced by `control_cost |β|^2`.
    #[serde(default)]
    pub control_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsConfig {
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpulseKind {
    #[default]
    None,
    JumpTo,
    Shift,
    TowardOrigin,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseConfig {
    #[serde(default)]
    pub kind: ImpulseKind,
    /// Targets for `jump-to`, shift vectors for `shift`.
    pub candidates: Option<Vec<Vec<f64>>>,
    /// θ values for `toward-origin` (Γ = (1 - θ) x).
    pub fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub fixed_cost: f64,
    #[serde(default)]
    pub proportional_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyConfig {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    pub density: Option<JumpDensity>,
    pub delta: Option<f64>,
    pub quad_nodes: Option<usize>,
    pub radius: Option<f64>,
    pub sim_cutoff: Option<f64>,
    pub p_star: Option<f64>,
    pub q_star: Option<f64>,
    pub growth_case: Option<GrowthCase>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub dt: Option<f64>,
    pub paths: usize,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            dt: None,
            paths: 10_000,
            seed: 1,
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub horizon: HorizonConfig,
    pub state: StateConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    pub payoff: PayoffConfig,
    pub controls: Option<ControlsConfig>,
    #[serde(default)]
    pub impulse: ImpulseConfig,
    #[serde(default)]
    pub levy: LevyConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
}

/// Allowed keys per table path, for the unknown-key report.
fn allowed_keys(path: &str) -> Option<&'static [&'static str]> {
    Some(match path {
        "" => &[
            "schema_version",
            "horizon",
            "state",
            "dynamics",
            "payoff",
            "controls",
            "impulse",
            "levy",
            "solver",
            "monte_carlo",
        ],
        "horizon" => &["maturity", "rho", "discount"],
        "state" => &["lower", "upper", "growth_p", "inside"],
        "state.inside" => &["lower", "upper"],
        "dynamics" => &["kind", "drift", "vol", "reversion", "correlation", "control_in_drift", "jump_map"],
        "payoff" => &["running", "terminal", "control_cost"],
        "controls" => &["values"],
        "impulse" => &["kind", "candidates", "fractions", "fixed_cost", "proportional_cost"],
        "levy" => &[
            "atoms",
            "density",
            "delta",
            "quad_nodes",
            "radius",
            "sim_cutoff",
            "p_star",
            "q_star",
            "growth_case",
        ],
        "solver" => &["tol", "max_iter", "max_outer", "coupling", "terminal_max_sweeps"],
        "monte_carlo" => &["dt", "paths", "seed", "workers"],
        _ => return None,
    })
}

fn unknown_keys(value: &toml::Value, path: &str, out: &mut Vec<String>) {
    let Some(table) = value.as_table() else { return };
    let Some(allowed) = allowed_keys(path) else { return };
    for (k, v) in table {
        let full = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        if !allowed.contains(&k.as_str()) {
            out.push(format!("{full}: unknown key"));
        } else {
            unknown_keys(v, &full, out);
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let value: toml::Value = text.parse::<toml::Table>().map(toml::Value::Table).map_err(|e| Error::Config(e.to_string()))?;
        let mut violations = Vec::new();
        unknown_keys(&value, "", &mut violations);
        match value.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => violations.push(format!("schema_version: expected {SCHEMA_VERSION}, got {v}")),
            None => violations.push("schema_version: missing or not an integer".into()),
        }
        if let Some(h) = value.get("horizon") {
            if h.get("maturity").is_some() && h.get("rho").is_some() {
                violations.push("horizon ambiguous: set either horizon.maturity or horizon.rho, not both".into());
            }
        }
        if !violations.is_empty() {
            return Err(Error::ConfigViolations(violations));
        }
        let config: Config = value.try_into().map_err(|e: toml::de::Error| Error::ConfigViolations(vec![e.message().to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical sorted-key JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&sort(json)).expect("json serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn dim(&self) -> usize {
        self.state.lower.len()
    }

    pub fn is_elliptic(&self) -> bool {
        self.horizon.rho.is_some()
    }

    fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        let d = self.dim();
        let h = &self.horizon;
        match (h.maturity, h.rho) {
            (None, None) => v.push("horizon: one of maturity or rho is required".into()),
            (Some(t), _) if !(t > 0.0) => v.push(format!("horizon.maturity: must be positive, got {t}")),
            (_, Some(r)) if !(r > 0.0) => v.push(format!("horizon.rho: must be positive, got {r}")),
            _ => {}
        }
        if h.discount < 0.0 {
            v.push("horizon.discount: must be non-negative".into());
        }
        if d == 0 {
            v.push("state.lower: at least one dimension required".into());
        }
        if self.state.upper.len() != d {
            v.push(format!("state.upper: expected {d} entries"));
        } else if self.state.lower.iter().zip(&self.state.upper).any(|(a, b)| !(a < b)) {
            v.push("state: lower must be strictly below upper on every axis".into());
        }
        if self.state.growth_p < 0.0 {
            v.push("state.growth_p: must be non-negative".into());
        }
        if let Some(b) = &self.state.inside {
            if b.lower.len() != d || b.upper.len() != d {
                v.push(format!("state.inside: expected {d} entries in lower and upper"));
            }
        }
        let dy = &self.dynamics;
        for (key, vec) in [("drift", &dy.drift), ("vol", &dy.vol), ("reversion", &dy.reversion)] {
            if let Some(x) = vec {
                if x.len() != d {
                    v.push(format!("dynamics.{key}: expected {d} entries, got {}", x.len()));
                }
            }
        }
        if dy.kind == DynamicsKind::Ou && dy.reversion.is_none() {
            v.push("dynamics.reversion: required for kind = \"ou\"".into());
        }
        if !(dy.correlation.abs() <= 1.0) {
            v.push("dynamics.correlation: must lie in [-1, 1]".into());
        }
        if dy.correlation != 0.0 && d < 2 {
            v.push("dynamics.correlation: needs at least two state dimensions".into());
        }
        if let Some(f) = &self.payoff.running {
            f.check(d, "payoff.running", &mut v);
        }
        if let Some(g) = &self.payoff.terminal {
            g.check(d, "payoff.terminal", &mut v);
        }
        let controls = self.control_values();
        if controls.is_empty() {
            v.push("controls.values: control set B is empty".into());
        }
        if dy.control_in_drift && controls.iter().any(|b| b.len() != d) {
            v.push(format!("controls.values: each control needs {d} entries when control_in_drift"));
        }
        let im = &self.impulse;
        match im.kind {
            ImpulseKind::None => {}
            ImpulseKind::JumpTo | ImpulseKind::Shift => match &im.candidates {
                None => v.push("impulse.candidates: required for this impulse kind".into()),
                Some(c) if c.is_empty() => v.push("impulse.candidates: empty transaction set".into()),
                Some(c) if c.iter().any(|z| z.len() != d) => v.push(format!("impulse.candidates: each entry needs {d} coordinates")),
                _ => {}
            },
            ImpulseKind::TowardOrigin => match &im.fractions {
                None => v.push("impulse.fractions: required for toward-origin".into()),
                Some(f) if f.is_empty() => v.push("impulse.fractions: empty transaction set".into()),
                Some(f) if f.iter().any(|t| !(0.0..=1.0).contains(t)) => v.push("impulse.fractions: must lie in [0, 1]".into()),
                _ => {}
            },
        }
        if im.kind != ImpulseKind::None && !(im.fixed_cost > 0.0) {
            v.push("impulse.fixed_cost: must be positive (K <= -k0 < 0)".into());
        }
        if im.proportional_cost < 0.0 {
            v.push("impulse.proportional_cost: must be non-negative".into());
        }
        let lv = &self.levy;
        if let Some(delta) = lv.delta {
            if !(delta > 0.0 && delta < 1.0) {
                v.push(format!("levy.delta: must lie in (0, 1), got {delta}"));
            }
        }
        if lv.atoms.iter().any(|a| a.z.len() != lv.atoms[0].z.len()) {
            v.push("levy.atoms: all atoms need the same dimension".into());
        }
        if let Some(a) = lv.atoms.first() {
            if a.z.len() != d && dy.jump_map == JumpMapKind::Proportional {
                v.push(format!("levy.atoms: proportional jumps need {d}-dimensional z"));
            }
        }
        if let Some(r) = lv.radius {
            if r < 1.0 {
                v.push(format!("levy.radius: must be at least 1, got {r}"));
            }
        }
        if self.solver.tol <= 0.0 {
            v.push("solver.tol: must be positive".into());
        }
        if let Some(dt) = self.monte_carlo.dt {
            if !(dt > 0.0) {
                v.push("monte_carlo.dt: must be positive".into());
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigViolations(v))
        }
    }

    fn control_values(&self) -> Vec<Vec<f64>> {
        match &self.controls {
            Some(c) => c.values.clone(),
            None => vec![vec![0.0; if self.dynamics.control_in_drift { self.dim() } else { 1 }]],
        }
    }

    pub fn sim_options(&self, maturity_steps: usize) -> SimOptions {
        let dt = self.monte_carlo.dt.unwrap_or_else(|| match self.horizon.maturity {
            Some(t) => t / maturity_steps.max(1) as f64,
            None => 1e-2,
        });
        SimOptions {
            dt,
            workers: self.monte_carlo.workers,
            ..SimOptions::default()
        }
    }

    /// Builds the problem and the jump measure.
    pub fn build(&self) -> Result<(Problem, LevyModel)> {
        let d = self.dim();
        let domain = match &self.state.inside {
            Some(b) => Domain::open_box(
                self.state.lower.clone(),
                self.state.upper.clone(),
                b.lower.clone(),
                b.upper.clone(),
            ),
            None => Domain::whole_space(self.state.lower.clone(), self.state.upper.clone()),
        };
        let dy = self.dynamics.clone();
        let m_drift = dy.drift.clone().unwrap_or_else(|| vec![0.0; d]);
        let vol = dy.vol.clone().unwrap_or_else(|| vec![0.0; d]);
        let theta = dy.reversion.clone().unwrap_or_else(|| vec![0.0; d]);
        let kind = dy.kind;
        let cid = dy.control_in_drift;
        let rho = dy.correlation;
        let mut b = Problem::builder(d, domain)
            .growth(self.state.growth_p)
            .time_homogeneous(true)
            .controls(self.control_values())
            .drift(move |_, x, beta, out| {
                for k in 0..d {
                    let c = if cid { beta[k] } else { 0.0 };
                    out[k] = match kind {
                        DynamicsKind::Brownian => m_drift[k] + c,
                        DynamicsKind::Ou => m_drift[k] - theta[k] * x[k] + c,
                        DynamicsKind::Gbm => x[k] * (m_drift[k] + c),
                    };
                }
            })
            .diffusion(move |_, x, _, out| {
                out.fill(0.0);
                for k in 0..d {
                    let s = match kind {
                        DynamicsKind::Gbm => vol[k] * x[k],
                        _ => vol[k],
                    };
                    out[k * d + k] = s;
                }
                if rho != 0.0 {
                    // second axis driven by rho W1 + sqrt(1 - rho^2) W2
                    let s = out[d + 1];
                    out[d] = rho * s;
                    out[d + 1] = (1.0 - rho * rho).sqrt() * s;
                }
            });
        let jm = dy.jump_map;
        let dz = self.levy.atoms.first().map_or(1, |a| a.z.len());
        b = b.jump_dim(dz).jump_map(move |_, x, _, z, out| {
            out.fill(0.0);
            for k in 0..d.min(z.len()) {
                out[k] = match jm {
                    JumpMapKind::Additive => z[k],
                    JumpMapKind::Proportional => x[k] * z[k],
                };
            }
        });
        if let Some(maturity) = self.horizon.maturity {
            b = b.parabolic(maturity).discount(self.horizon.discount);
        } else if let Some(r) = self.horizon.rho {
            b = b.elliptic(r);
        }
        let running = self.payoff.running.clone();
        let cc = self.payoff.control_cost;
        b = b.running(move |_, x, beta| {
            let f = running.as_ref().map_or(0.0, |f| f.eval(x));
            f - cc * beta.iter().map(|v| v * v).sum::<f64>()
        });
        let terminal = self.payoff.terminal.clone();
        b = b.terminal(move |_, x| terminal.as_ref().map_or(0.0, |g| g.eval(x)));
        let im = &self.impulse;
        let impulses = match im.kind {
            ImpulseKind::None => None,
            ImpulseKind::JumpTo => Some(Impulses::jump_to(
                im.candidates.clone().unwrap_or_default(),
                im.fixed_cost,
                im.proportional_cost,
            )),
            ImpulseKind::Shift => Some(Impulses::shifts(
                im.candidates.clone().unwrap_or_default(),
                im.fixed_cost,
                im.proportional_cost,
            )),
            ImpulseKind::TowardOrigin => Some(Impulses::toward_origin(
                im.fractions.clone().unwrap_or_default(),
                im.fixed_cost,
                im.proportional_cost,
            )),
        };
        if let Some(imp) = impulses {
            b = b.impulses(imp).fixed_cost(im.fixed_cost);
        }
        let problem = b.build()?;
        let lv = &self.levy;
        let quad = QuadSpec {
            nodes: lv.quad_nodes.unwrap_or(QuadSpec::default().nodes),
            radius: lv.radius,
        };
        let mut levy = LevyModel::new(lv.atoms.clone(), lv.density.clone(), lv.delta.unwrap_or(0.1), quad)?;
        if lv.p_star.is_some() || lv.q_star.is_some() {
            let (p, q) = (lv.p_star.unwrap_or(levy.p_star), lv.q_star.unwrap_or(levy.q_star));
            levy = levy.with_moments(p, q)?;
        }
        if let Some(eps) = lv.sim_cutoff {
            levy = levy.with_sim_cutoff(eps)?;
        }
        if let Some(gc) = lv.growth_case {
            levy = levy.with_growth_case(gc);
        }
        Ok((problem, levy))
    }
}

fn sort(v: serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(map) => {
            let sorted: BTreeMap<String, serde_json::Value> = map.into_iter().map(|(k, v)| (k, sort(v))).collect();
            serde_json::Value::Object(sorted.into_iter().collect())
        }
        serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(sort).collect()),
        other => other,
    }
}
