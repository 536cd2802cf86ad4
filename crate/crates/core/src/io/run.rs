//! Run directories.
//!
//! ```text
//! run_dir/
//!   manifest.json         config hash, grid, solver options, seeds, checksums, timings
//!   config.toml           the config as parsed
//!   value.qvif            all levels, axis order (t, x1, ..., xd)
//!   value.csv             t, x1..xd, value
//!   policy.csv            t, x1..xd, action, control, candidate, zeta
//!   policy.json           policies per level
//!   certificate.json      residual certificates and per-level metadata
//!   supersolution.qvif    certified w, when requested
//! ```
//!
//! Every artifact listed in the manifest is checked against its SHA-256 on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Config;
use super::qvif;
use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::levy::LevyModel;
use crate::problem::Problem;
use crate::solver::{solve_elliptic, solve_parabolic, LevelCertificate, NodeAction, Policy, SolverOptions};
use crate::supersolution::{build_strict_supersolution, SupersolutionParams};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.toml";
pub const VALUE_BIN: &str = "value.qvif";
pub const VALUE_CSV: &str = "value.csv";
pub const POLICY_CSV: &str = "policy.csv";
pub const POLICY_JSON: &str = "policy.json";
pub const CERTIFICATE: &str = "certificate.json";
pub const SUPERSOLUTION_BIN: &str = "supersolution.qvif";

/// Uniform grid: node counts per axis and, in parabolic mode, the number of time steps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nodes: Vec<usize>,
    pub time_steps: Option<usize>,
}

impl GridSpec {
    /// Parses `N_x1,...,N_xd[,N_t]`; the last count is `N_t` unless `elliptic`.
    pub fn parse(text: &str, dim: usize, elliptic: bool) -> Result<GridSpec> {
        let counts: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidGrid(format!("grid '{text}': {e}")))?;
        let want = if elliptic { dim } else { dim + 1 };
        if counts.len() != want {
            return Err(Error::InvalidGrid(format!(
                "grid '{text}': expected {want} counts ({dim} spatial{})",
                if elliptic { "" } else { " + time steps" }
            )));
        }
        Ok(GridSpec {
            nodes: counts[..dim].to_vec(),
            time_steps: if elliptic { None } else { Some(counts[dim]) },
        })
    }

    pub fn is_elliptic(&self) -> bool {
        self.time_steps.is_none()
    }

    pub fn build(&self, problem: &Problem) -> Result<Grid> {
        Grid::uniform(problem, &self.nodes, self.time_steps)
    }

    /// Array shape in QVIF axis order.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = Vec::new();
        if let Some(n) = self.time_steps {
            s.push(n + 1);
        }
        s.extend(&self.nodes);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionRecord {
    pub params: SupersolutionParams,
    pub kappa: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub grid: GridSpec,
    pub solver: SolverOptions,
    pub seeds: Vec<u64>,
    /// File name to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub supersolution: Option<SupersolutionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub time: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub growth_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub certificates: Vec<LevelCertificate>,
    pub fields: Vec<FieldMeta>,
    pub terminal_sweeps: usize,
    /// Largest row excess of the generator (elliptic mode).
    pub excess: Option<f64>,
}

/// A solved problem together with everything persisted for it.
#[derive(Clone, Debug)]
pub struct Run {
    pub manifest: RunManifest,
    pub config: Config,
    /// One field per time level (a single field in elliptic mode).
    pub levels: Vec<ValueField>,
    pub policies: Vec<Policy>,
    pub certificate: CertificateFile,
    /// Certified w per level, when requested.
    pub supersolution: Option<Vec<ValueField>>,
}

/// Problem for a config solved in the mode of `grid` (parabolic configs may be
/// solved in elliptic form when discounted and time-homogeneous).
pub fn problem_for(config: &Config, grid: &GridSpec) -> Result<(Problem, LevyModel)> {
    let (problem, levy) = config.build()?;
    let problem = if grid.is_elliptic() && !problem.horizon.is_elliptic() {
        problem.to_elliptic()?
    } else {
        problem
    };
    if !grid.is_elliptic() && problem.horizon.is_elliptic() {
        return Err(Error::InvalidGrid("elliptic config needs spatial node counts only".into()));
    }
    Ok((problem, levy))
}

impl Run {
    /// Solves `config` on `grid`, optionally certifying a strict supersolution `(q, κ)`.
    pub fn solve(config: &Config, grid: &GridSpec, supersolution: Option<(f64, f64)>) -> Result<Run> {
        let (problem, levy) = problem_for(config, grid)?;
        let g = grid.build(&problem)?;
        let opts = config.solver.clone();
        let mut timings = BTreeMap::new();
        let (levels, policies, certificate) = if problem.horizon.is_elliptic() {
            let s = solve_elliptic(&problem, &levy, &g, &opts)?;
            timings.insert("solve".to_string(), s.seconds);
            let cert = CertificateFile {
                certificates: vec![s.certificate],
                fields: vec![meta(&s.value)],
                terminal_sweeps: 0,
                excess: Some(s.excess),
            };
            (vec![s.value], vec![s.policy], cert)
        } else {
            let s = solve_parabolic(&problem, &levy, &g, &opts)?;
            timings.insert("solve".to_string(), s.seconds);
            let cert = CertificateFile {
                certificates: s.certificates,
                fields: s.levels.iter().map(meta).collect(),
                terminal_sweeps: s.terminal_sweeps,
                excess: None,
            };
            (s.levels, s.policies, cert)
        };
        let (record, fields) = match supersolution {
            Some((q, kappa)) => {
                let start = std::time::Instant::now();
                let w = build_strict_supersolution(&problem, &levy, &g, q, kappa)?;
                timings.insert("supersolution".to_string(), start.elapsed().as_secs_f64());
                let rec = SupersolutionRecord {
                    params: w.params,
                    kappa,
                    margin: w.margin,
                };
                (Some(rec), Some(w.fields))
            }
            None => (None, None),
        };
        Ok(Run {
            manifest: RunManifest {
                schema_version: super::config::SCHEMA_VERSION,
                config_hash: config.hash(),
                grid: grid.clone(),
                solver: opts,
                seeds: Vec::new(),
                artifacts: BTreeMap::new(),
                timings,
                supersolution: record,
            },
            config: config.clone(),
            levels,
            policies,
            certificate,
            supersolution: fields,
        })
    }

    pub fn problem(&self) -> Result<(Problem, LevyModel)> {
        problem_for(&self.config, &self.manifest.grid)
    }

    pub fn grid(&self, problem: &Problem) -> Result<Grid> {
        self.manifest.grid.build(problem)
    }

    pub fn is_elliptic(&self) -> bool {
        self.manifest.grid.is_elliptic()
    }
}

fn meta(f: &ValueField) -> FieldMeta {
    FieldMeta {
        time: f.time,
        iterations: f.iterations,
        residual: f.residual,
        growth_constant: f.growth_constant,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn flatten(levels: &[ValueField]) -> Vec<f64> {
    levels.iter().flat_map(|f| f.values.iter().copied()).collect()
}

fn value_csv(grid: &Grid, levels: &[ValueField]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.push("value".into());
    w.write_record(&header)?;
    let mut x = vec![0.0; d];
    for f in levels {
        let t = f.time.map_or(String::new(), |t| t.to_string());
        for (i, v) in f.values.iter().enumerate() {
            grid.coords(i, &mut x);
            let mut rec = vec![t.clone()];
            rec.extend(x.iter().map(|c| c.to_string()));
            rec.push(v.to_string());
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn policy_csv(grid: &Grid, policies: &[Policy]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let d = grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend(["action", "control", "candidate", "zeta"].map(String::from));
    w.write_record(&header)?;
    let mut x = vec![0.0; d];
    for p in policies {
        let t = p.time.map_or(String::new(), |t| t.to_string());
        for (i, a) in p.actions.iter().enumerate() {
            grid.coords(i, &mut x);
            let mut rec = vec![t.clone()];
            rec.extend(x.iter().map(|c| c.to_string()));
            match a {
                NodeAction::Continue { control } => rec.extend(["continue".into(), control.to_string(), String::new(), String::new()]),
                NodeAction::Intervene { candidate, zeta } => rec.extend([
                    "intervene".into(),
                    String::new(),
                    candidate.to_string(),
                    zeta.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(";"),
                ]),
                NodeAction::Stop => rec.extend(["stop".into(), String::new(), String::new(), String::new()]),
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads `value.csv` back into per-level value vectors.
pub fn read_value_csv(path: &Path, levels: usize) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec
            .get(rec.len() - 1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                detail: format!("bad value in row {}", rows.len() + 1),
            })?;
        rows.push(v);
    }
    if levels == 0 || rows.len() % levels != 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            detail: format!("{} rows do not split into {levels} levels", rows.len()),
        });
    }
    let n = rows.len() / levels;
    Ok(rows.chunks(n).map(|c| c.to_vec()).collect())
}

/// Writes every artifact and the manifest; fills in `run.manifest.artifacts`.
pub fn save_run(dir: &Path, run: &mut Run) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (problem, _) = run.problem()?;
    let grid = run.grid(&problem)?;
    let shape = run.manifest.grid.shape();
    let mut files: Vec<(&str, Vec<u8>)> = vec![
        (CONFIG, run.config.to_toml_string()?.into_bytes()),
        (VALUE_BIN, qvif::encode(&shape, &flatten(&run.levels))?),
        (VALUE_CSV, value_csv(&grid, &run.levels)?),
        (POLICY_CSV, policy_csv(&grid, &run.policies)?),
        (POLICY_JSON, serde_json::to_vec_pretty(&run.policies)?),
        (CERTIFICATE, serde_json::to_vec_pretty(&run.certificate)?),
    ];
    if let Some(w) = &run.supersolution {
        files.push((SUPERSOLUTION_BIN, qvif::encode(&shape, &flatten(w))?));
    }
    run.manifest.artifacts.clear();
    for (name, bytes) in &files {
        fs::write(dir.join(name), bytes)?;
        run.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
    }
    fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&run.manifest)?)?;
    Ok(())
}

fn read_checked(dir: &Path, manifest: &RunManifest, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let expected = manifest
        .artifacts
        .get(name)
        .ok_or_else(|| Error::MissingArtifact(path.clone()))?;
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let bytes = fs::read(&path)?;
    let got = sha256_hex(&bytes);
    if &got != expected {
        return Err(Error::Checksum {
            path,
            detail: format!("sha256 {got}, manifest records {expected}"),
        });
    }
    Ok(bytes)
}

fn split_levels(dir: &Path, name: &str, bytes: &[u8], shape: &[usize], times: &[Option<f64>]) -> Result<Vec<ValueField>> {
    let path = dir.join(name);
    let (dims, values) = qvif::decode(bytes, &path)?;
    if dims != shape {
        return Err(Error::Malformed {
            path,
            detail: format!("dims {dims:?}, grid expects {shape:?}"),
        });
    }
    let n = values.len() / times.len();
    Ok(values
        .chunks(n)
        .zip(times)
        .map(|(c, &t)| ValueField::new(c.to_vec(), t))
        .collect())
}

/// Loads a run directory, verifying every checksum in the manifest.
pub fn load_run(dir: &Path) -> Result<Run> {
    let mpath = dir.join(MANIFEST);
    if !mpath.exists() {
        return Err(Error::MissingArtifact(mpath));
    }
    let manifest: RunManifest = serde_json::from_slice(&fs::read(&mpath)?)?;
    let config_text = String::from_utf8(read_checked(dir, &manifest, CONFIG)?).map_err(|e| Error::Malformed {
        path: dir.join(CONFIG),
        detail: e.to_string(),
    })?;
    let config = Config::from_toml_str(&config_text)?;
    if config.hash() != manifest.config_hash {
        return Err(Error::Checksum {
            path: dir.join(CONFIG),
            detail: "config hash differs from manifest".into(),
        });
    }
    let certificate: CertificateFile = serde_json::from_slice(&read_checked(dir, &manifest, CERTIFICATE)?)?;
    let policies: Vec<Policy> = serde_json::from_slice(&read_checked(dir, &manifest, POLICY_JSON)?)?;
    for name in [VALUE_CSV, POLICY_CSV] {
        read_checked(dir, &manifest, name)?;
    }
    let shape = manifest.grid.shape();
    let times: Vec<Option<f64>> = certificate.fields.iter().map(|m| m.time).collect();
    let mut levels = split_levels(dir, VALUE_BIN, &read_checked(dir, &manifest, VALUE_BIN)?, &shape, &times)?;
    for (f, m) in levels.iter_mut().zip(&certificate.fields) {
        f.iterations = m.iterations;
        f.residual = m.residual;
        f.growth_constant = m.growth_constant;
    }
    let supersolution = if manifest.artifacts.contains_key(SUPERSOLUTION_BIN) {
        let bytes = read_checked(dir, &manifest, SUPERSOLUTION_BIN)?;
        Some(split_levels(dir, SUPERSOLUTION_BIN, &bytes, &shape, &times)?)
    } else {
        None
    };
    Ok(Run {
        manifest,
        config,
        levels,
        policies,
        certificate,
        supersolution,
    })
}
