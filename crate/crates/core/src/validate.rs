//! Sampled checks of the standing assumptions on a problem.
//!
//! Continuity and Lipschitz conditions cannot be decided for black-box callbacks;
//! they are probed on a randomly shifted Halton cloud in the bounding box. A
//! Lipschitz estimate is the largest difference quotient over all pairs of the
//! cloud; it fails when refining the cloud eightfold raises the estimate by more
//! than [`LIPSCHITZ_GROWTH`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{GrowthCase, LevyModel};
use crate::problem::{norm, Problem};

pub const LIPSCHITZ_GROWTH: f64 = 1.5;

const PRIMES: [u8; 20] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { samples: 4096, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Unverifiable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub detail: String,
    /// Offending sample point on failure.
    pub point: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Empirical Lipschitz constants on the full cloud.
    pub lipschitz: Vec<(String, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, status: Status, detail: impl Into<String>, point: Option<Vec<f64>>) {
        self.checks.push(Check {
            name: name.to_string(),
            status,
            detail: detail.into(),
            point,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::Unverifiable => "----",
            };
            write!(f, "{tag} {:<24} {}", c.name, c.detail)?;
            if let Some(p) = &c.point {
                write!(f, " at x={p:?}")?;
            }
            writeln!(f)?;
        }
        for (name, l) in &self.lipschitz {
            writeln!(f, "     lipschitz {name:<14} {l:.4e}")?;
        }
        Ok(())
    }
}

/// Halton points in the box, shifted modulo 1 by a seeded random vector.
pub fn sample_cloud(problem: &Problem, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let d = problem.dim_x;
    let lo = problem.domain.lower();
    let hi = problem.domain.upper();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| if seed == 0 { 0.0 } else { rng.gen::<f64>() }).collect();
    (1..=n)
        .map(|i| {
            (0..d)
                .map(|k| {
                    let u = (halton::number(PRIMES[k % PRIMES.len()], i) + shift[k]).fract();
                    lo[k] + u * (hi[k] - lo[k])
                })
                .collect()
        })
        .collect()
}

/// Largest pairwise difference quotient `|F(x) - F(y)| / |x - y|` with its worst pair.
fn lipschitz(points: &[Vec<f64>], values: &[Vec<f64>]) -> (f64, usize) {
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (0.0f64, i);
            for j in i + 1..points.len() {
                let dx = dist(&points[i], &points[j]);
                if dx == 0.0 {
                    continue;
                }
                let q = dist(&values[i], &values[j]) / dx;
                if q > best.0 {
                    best = (q, if norm(&points[i]) < norm(&points[j]) { i } else { j });
                }
            }
            best
        })
        .reduce(|| (0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lipschitz_check(report: &mut ValidationReport, name: &str, points: &[Vec<f64>], values: &[Vec<f64>]) {
    let coarse = (points.len() / 8).max(2).min(points.len());
    let (lc, _) = lipschitz(&points[..coarse], &values[..coarse]);
    let (lf, worst) = lipschitz(points, values);
    report.lipschitz.push((name.to_string(), lf));
    let grows = lf > LIPSCHITZ_GROWTH * lc + 1e-12 * (1.0 + lc);
    if grows {
        report.push(
            &format!("lipschitz-{name}"),
            Status::Fail,
            format!("estimate grows under refinement: {lc:.4e} on {coarse} points, {lf:.4e} on {}", points.len()),
            Some(points[worst].clone()),
        );
    } else {
        report.push(
            &format!("lipschitz-{name}"),
            Status::Pass,
            format!("L ≈ {lf:.4e} (stable under {}x refinement)", points.len() / coarse),
            None,
        );
    }
}

fn first_bad(points: &[Vec<f64>], values: &[Vec<f64>]) -> Option<Vec<f64>> {
    points
        .iter()
        .zip(values)
        .find(|(_, v)| v.iter().any(|x| !x.is_finite()))
        .map(|(p, _)| p.clone())
}

/// Checks the standing assumptions by sampling. Hard errors: empty transaction
/// set at a sample point, empty control set, degenerate box.
pub fn validate(problem: &Problem, levy: &LevyModel, opts: &ValidationOptions) -> Result<ValidationReport> {
    let d = problem.dim_x;
    problem.domain.check(d)?;
    if problem.controls.is_empty() {
        return Err(Error::EmptyControlSet);
    }
    if opts.samples < 16 {
        return Err(Error::InvalidProblem("validation needs at least 16 samples".into()));
    }
    let points = sample_cloud(problem, opts.samples, opts.seed);
    let times: Vec<f64> = match problem.horizon.maturity() {
        Some(t) => vec![0.0, 0.5 * t, t],
        None => vec![0.0],
    };
    let mut report = ValidationReport::default();
    let dw = d * problem.dim_w;

    // (V3) finiteness and Lipschitz estimates of the coefficients, per control
    let jump_z: Vec<Vec<f64>> = levy.nodes().iter().map(|n| n.z.clone()).take(64).collect();
    let mut nonfinite: Option<(String, Vec<f64>)> = None;
    for (b, beta) in problem.controls.iter().enumerate() {
        let t0 = times[0];
        let mu: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| {
                let mut out = vec![0.0; d];
                problem.drift(t0, x, beta, &mut out);
                out
            })
            .collect();
        let sigma: Vec<Vec<f64>> = points
            .par_iter()
            .map(|x| {
                let mut out = vec![0.0; dw];
                problem.diffusion(t0, x, beta, &mut out);
                out
            })
            .collect();
        let f: Vec<Vec<f64>> = points.par_iter().map(|x| vec![problem.running(t0, x, beta)]).collect();
        for (name, vals) in [("mu", &mu), ("sigma", &sigma), ("f", &f)] {
            if nonfinite.is_none() {
                if let Some(p) = first_bad(&points, vals) {
                    nonfinite = Some((format!("{name} (control {b})"), p));
                }
            }
        }
        for &t in &times[1..] {
            for x in &points {
                let mut out = vec![0.0; d.max(dw)];
                problem.drift(t, x, beta, &mut out[..d]);
                let ok_mu = out[..d].iter().all(|v| v.is_finite());
                problem.diffusion(t, x, beta, &mut out[..dw]);
                let ok = ok_mu && out[..dw].iter().all(|v| v.is_finite()) && problem.running(t, x, beta).is_finite();
                if !ok && nonfinite.is_none() {
                    nonfinite = Some((format!("coefficients at t={t} (control {b})"), x.clone()));
                }
            }
        }
        for z in &jump_z {
            for x in &points {
                let mut out = vec![0.0; d];
                problem.jump(t0, x, beta, z, &mut out);
                if out.iter().any(|v| !v.is_finite()) && nonfinite.is_none() {
                    nonfinite = Some((format!("jump map at z={z:?} (control {b})"), x.clone()));
                }
            }
        }
        if nonfinite.is_none() {
            let suffix = if problem.controls.len() > 1 { format!("[{b}]") } else { String::new() };
            lipschitz_check(&mut report, &format!("mu{suffix}"), &points, &mu);
            lipschitz_check(&mut report, &format!("sigma{suffix}"), &points, &sigma);
        }
    }
    let g_bad = times
        .iter()
        .flat_map(|&t| points.iter().map(move |x| (t, x)))
        .find(|(t, x)| !problem.terminal(*t, x).is_finite());
    if nonfinite.is_none() {
        if let Some((t, x)) = g_bad {
            nonfinite = Some((format!("g at t={t}"), x.clone()));
        }
    }
    match nonfinite {
        Some((what, p)) => report.push("finite-coefficients", Status::Fail, format!("{what} is not finite"), Some(p)),
        None => report.push(
            "finite-coefficients",
            Status::Pass,
            format!("mu, sigma, l, f, g finite on {} points x {} time(s)", points.len(), times.len()),
            None,
        ),
    }

    // (V2), (L2): transaction sets, impulse map and costs
    if problem.has_impulses() {
        let mut bad: Option<(String, Vec<f64>)> = None;
        let mut cost_violation: Option<(f64, Vec<f64>)> = None;
        let mut sizes = std::collections::BTreeSet::new();
        let mut gamma: Vec<Vec<f64>> = Vec::with_capacity(points.len());
        let mut uniform = true;
        let mut first: Option<Vec<Vec<f64>>> = None;
        for &t in &times {
            for x in &points {
                let zs = problem.candidates(t, x)?;
                sizes.insert(zs.len());
                if t == times[0] {
                    match &first {
                        None => first = Some(zs.clone()),
                        Some(f) if f != &zs => uniform = false,
                        _ => {}
                    }
                }
                let mut row = Vec::with_capacity(zs.len() * (d + 1));
                for z in &zs {
                    let mut target = vec![0.0; d];
                    problem.impulse_target(t, x, z, &mut target);
                    let k = problem.impulse_cost(t, x, z) / problem.weight(t);
                    if (!k.is_finite() || target.iter().any(|v| !v.is_finite())) && bad.is_none() {
                        bad = Some((format!("impulse {z:?} at t={t}"), x.clone()));
                    }
                    if let Some(k0) = problem.fixed_cost {
                        if k > -k0 && cost_violation.as_ref().is_none_or(|(worst, _)| k > *worst) {
                            cost_violation = Some((k, x.clone()));
                        }
                    }
                    row.extend(target);
                    row.push(k);
                }
                if t == times[0] {
                    gamma.push(row);
                }
            }
        }
        match bad {
            Some((what, p)) => report.push("impulse-finite", Status::Fail, format!("{what} has a non-finite target or cost"), Some(p)),
            None => report.push("impulse-finite", Status::Pass, "Gamma and K finite at every sample", None),
        }
        match (problem.fixed_cost, cost_violation) {
            (None, _) => report.push("fixed-cost", Status::Unverifiable, "no k0 declared", None),
            (Some(k0), Some((k, p))) => report.push("fixed-cost", Status::Fail, format!("K = {k} exceeds -k0 = {}", -k0), Some(p)),
            (Some(k0), None) => report.push("fixed-cost", Status::Pass, format!("K <= -{k0} at every candidate"), None),
        }
        if uniform {
            report.push(
                "transaction-set",
                Status::Pass,
                format!("Z(t,x) non-empty; identical {}-element list at every sample", sizes.iter().next().unwrap_or(&0)),
                None,
            );
            lipschitz_check(&mut report, "gamma-K", &points, &gamma);
        } else {
            report.push(
                "transaction-set",
                Status::Unverifiable,
                format!("Z(t,x) non-empty; list sizes {sizes:?} vary, Hausdorff continuity is spot-check only"),
                None,
            );
        }
    }

    // Levy measure
    let li = levy.levy_integral();
    if li.is_finite() {
        report.push("levy-integrability", Status::Pass, format!("∫(|z|²∧1)ν(dz) ≈ {li:.4e}"), None);
    } else {
        report.push("levy-integrability", Status::Fail, "∫(|z|²∧1)ν(dz) is not finite", None);
    }
    let p = problem.growth_p;
    match levy.growth_case {
        None if levy.is_zero() => report.push("growth-case", Status::Pass, "no jumps", None),
        None => report.push("growth-case", Status::Unverifiable, "no growth case declared", None),
        Some(GrowthCase::Bounded) => {
            if levy.infinite_activity() {
                report.push("growth-case", Status::Fail, "case (a) needs finite activity", None);
            } else {
                report.push("growth-case", Status::Pass, "case (a): finite activity; jump map sampled finite", None);
            }
        }
        Some(GrowthCase::Moment) => {
            let status = if p <= levy.p_star { Status::Pass } else { Status::Fail };
            report.push("growth-case", status, format!("case (b): p = {p}, p* = {}", levy.p_star), None);
        }
        Some(GrowthCase::Coupled { a, b }) => {
            let status = if a * b <= levy.p_star { Status::Pass } else { Status::Fail };
            report.push("growth-case", status, format!("case (c): a b = {}, p* = {}", a * b, levy.p_star), None);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Domain, Impulses};

    #[test]
    fn cloud_is_deterministic_and_inside_box() {
        let p = Problem::builder(2, Domain::whole_space(vec![-1.0, 0.0], vec![1.0, 3.0])).build().unwrap();
        let a = sample_cloud(&p, 64, 5);
        assert_eq!(a, sample_cloud(&p, 64, 5));
        assert_ne!(a, sample_cloud(&p, 64, 6));
        assert!(a.iter().all(|x| (-1.0..=1.0).contains(&x[0]) && (0.0..=3.0).contains(&x[1])));
    }

    #[test]
    fn lipschitz_of_linear_map_is_its_slope() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1]).collect();
        let vals: Vec<Vec<f64>> = pts.iter().map(|x| vec![3.0 * x[0] + 1.0]).collect();
        assert!((lipschitz(&pts, &vals).0 - 3.0).abs() < 1e-9);
    }

    #[test]
    fn costs_above_minus_k0_fail() {
        let p = Problem::builder(1, Domain::whole_space(vec![-1.0], vec![1.0]))
            .impulses(Impulses::jump_to(vec![vec![0.0]], 0.5, 0.0))
            .fixed_cost(1.0)
            .build()
            .unwrap();
        let r = validate(&p, &LevyModel::none(), &ValidationOptions { samples: 64, seed: 1 }).unwrap();
        assert_eq!(r.get("fixed-cost").unwrap().status, Status::Fail);
        assert!(!r.passed());
    }
}
