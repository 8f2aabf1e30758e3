//! Experiment configuration and the pipeline behind each CLI subcommand.
//!
//! Every CSV artifact starts with two `#` lines: the subcommand and the
//! configuration as one line of JSON. [`load_config`] accepts such an
//! artifact as well as JSON or TOML files, so any artifact can be
//! regenerated from its own header.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::coupling::tally;
use crate::error::{Error, ErrorClass, Result};
use crate::network::{load_network, Preset, ProcessKind, ReactionNetwork};
use crate::qsd::{empirical_w1, evenly_spaced, free_qsd_samples, histogram, refine_to_common_mesh, tv_distance, Mesh};
use crate::rng::{self, Purpose};
use crate::sensitivity::{
    assemble_bound, row_contraction, row_fte, row_setup, table_row, write_table_csv, Budgets, FiniteTimeErrorEstimate,
};
use crate::simulate::{simulate_with_regeneration, write_trajectory_csv, SimConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_HORIZON: i32 = 4;
pub const EXIT_NOT_ACCEPTED: i32 = 5;

/// Samples per measure for the capped `W1` reported next to TV.
const W1_SAMPLES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Qsd,
    Fte,
    Contraction,
    Bound,
    Table,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Qsd => "qsd",
            Command::Fte => "fte",
            Command::Contraction => "contraction",
            Command::Bound => "bound",
            Command::Table => "table",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "simulate" => Command::Simulate,
            "qsd" => Command::Qsd,
            "fte" => Command::Fte,
            "contraction" => Command::Contraction,
            "bound" => Command::Bound,
            "table" => Command::Table,
            _ => return Err(Error::InvalidParameter(format!("unknown subcommand `{s}`"))),
        })
    }
}

/// Everything one experiment depends on. Unset options fall back to the
/// preset's reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    /// TOML network document; needs `initial_state`, `step` and `horizon`.
    pub network: Option<PathBuf>,
    pub initial_state: Option<Vec<f64>>,
    pub volumes: Vec<f64>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    /// `T` in steps; must agree with `round(T/h)` when both are given.
    pub horizon_steps: Option<usize>,
    pub seed: u64,
    /// Process simulated by `simulate`.
    pub process: ProcessKind,
    /// Steps of each free run behind a QSD histogram.
    pub qsd_steps: usize,
    /// Bins per axis, one entry per volume or one for all. Histograms are
    /// refined onto the finest mesh before comparison.
    pub bins: Vec<usize>,
    pub mesh_lo: Option<Vec<f64>>,
    pub mesh_hi: Option<Vec<f64>>,
    /// Inputs of `bound`.
    pub fte: Option<f64>,
    pub gamma: Option<f64>,
    pub budgets: Budgets,
    pub out: Option<PathBuf>,
    pub json_summary: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: None,
            network: None,
            initial_state: None,
            volumes: Vec::new(),
            step: None,
            horizon: None,
            horizon_steps: None,
            seed: 1,
            process: ProcessKind::Poisson,
            qsd_steps: 10_000_000,
            bins: Vec::new(),
            mesh_lo: None,
            mesh_hi: None,
            fte: None,
            gamma: None,
            budgets: Budgets {
                thinning: 10,
                ..Budgets::default()
            },
            out: None,
            json_summary: None,
        }
    }
}

/// Network, start state and per-volume time parameters of a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub network: ReactionNetwork,
    pub initial_state: Vec<f64>,
    pub preset: Option<Preset>,
    pub volumes: Vec<f64>,
}

impl ExperimentConfig {
    /// Echo line written into every artifact. Output paths are left out so
    /// an artifact does not depend on where it is written.
    pub fn echo(&self) -> String {
        let inputs = ExperimentConfig {
            out: None,
            json_summary: None,
            ..self.clone()
        };
        serde_json::to_string(&inputs).expect("config serializes")
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let (network, preset) = match (&self.preset, &self.network) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "give either a preset or a network file, not both".into(),
                ))
            }
            (None, None) => return Err(Error::InvalidParameter("no preset or network file given".into())),
            (Some(p), None) => (p.network(), Some(*p)),
            (None, Some(path)) => (load_network(&std::fs::read_to_string(path)?)?, None),
        };
        let initial_state = match (&self.initial_state, preset) {
            (Some(x), _) => x.clone(),
            (None, Some(p)) => p.initial_state(),
            (None, None) => return Err(Error::InvalidParameter("a network file needs `initial_state`".into())),
        };
        if initial_state.len() != network.dim() {
            return Err(Error::DimensionMismatch {
                expected: network.dim(),
                got: initial_state.len(),
            });
        }
        let volumes = if self.volumes.is_empty() {
            vec![1000.0]
        } else {
            self.volumes.clone()
        };
        if let Some(v) = volumes.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidParameter(format!("volume must be positive, got {v}")));
        }
        let r = Resolved {
            network,
            initial_state,
            preset,
            volumes,
        };
        for &v in &r.volumes {
            self.time_parameters(&r, v)?;
        }
        Ok(r)
    }

    /// `(h, T)` at volume `v`.
    pub fn time_parameters(&self, r: &Resolved, v: f64) -> Result<(f64, f64)> {
        let h = match (self.step, r.preset) {
            (Some(h), _) => h,
            (None, Some(p)) => p.default_step(),
            (None, None) => return Err(Error::InvalidParameter("a network file needs `step`".into())),
        };
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
        }
        let t = match (self.horizon, self.horizon_steps, r.preset) {
            (Some(t), Some(n), _) => {
                if (t / h).round() as usize != n {
                    return Err(Error::InvalidParameter(format!(
                        "horizon {t} is {} steps of {h}, not {n}",
                        (t / h).round()
                    )));
                }
                t
            }
            (Some(t), None, _) => t,
            (None, Some(n), _) => n as f64 * h,
            (None, None, Some(p)) => p.default_horizon(v),
            (None, None, None) => return Err(Error::InvalidParameter("a network file needs `horizon`".into())),
        };
        if !(t.is_finite() && t >= h) {
            return Err(Error::InvalidParameter(format!(
                "horizon {t} is shorter than one step {h}"
            )));
        }
        Ok((h, t))
    }
}

/// Read a config from JSON, TOML, or the echo header of an artifact.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, path.extension().and_then(|e| e.to_str()))
}

pub fn parse_config(text: &str, extension: Option<&str>) -> Result<ExperimentConfig> {
    if let Some(line) = text.lines().find_map(|l| l.strip_prefix("# config ")) {
        return serde_json::from_str(line).map_err(|e| Error::Parse(e.to_string()));
    }
    if extension == Some("toml") {
        return toml::from_str(text).map_err(|e| Error::Parse(e.to_string()));
    }
    serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Git-style content hash of the inputs: SHA-256 over `blob <len>\0`
/// followed by the config echo and the network file, if any.
pub fn input_hash(cfg: &ExperimentConfig) -> Result<String> {
    let mut content = cfg.echo().into_bytes();
    if let Some(p) = &cfg.network {
        content.extend(std::fs::read(p)?);
    }
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(&content);
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Exit status for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Horizon => EXIT_HORIZON,
        ErrorClass::Numeric | ErrorClass::Io => EXIT_OTHER,
    }
}

/// Output of one subcommand, held in memory until the run has succeeded.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub csv: Vec<u8>,
    pub results: Value,
    /// False when a tail fit was not accepted.
    pub accepted: bool,
}

impl Artifact {
    pub fn exit_code(&self) -> i32 {
        if self.accepted {
            0
        } else {
            EXIT_NOT_ACCEPTED
        }
    }

    /// JSON summary: config echo, input hash, seed, wall clock and results.
    pub fn summary(&self, cmd: Command, cfg: &ExperimentConfig, wall: Duration) -> Result<Value> {
        Ok(json!({
            "command": cmd.name(),
            "config": cfg,
            "input_hash": input_hash(cfg)?,
            "seed": cfg.seed,
            "wall_clock_seconds": wall.as_secs_f64(),
            "accepted": self.accepted,
            "results": self.results,
        }))
    }
}

/// Version of the CSV layouts; bumped whenever a column changes.
pub const SCHEMA_VERSION: u32 = 1;

fn header(cmd: Command, cfg: &ExperimentConfig) -> Vec<u8> {
    format!("# qsdsens {cmd} schema {SCHEMA_VERSION}\n# config {}\n", cfg.echo()).into_bytes()
}

/// Run one subcommand.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Artifact> {
    let mut csv = header(cmd, cfg);
    if cmd == Command::Bound {
        let (results, accepted) = run_bound(cfg, &mut csv)?;
        return Ok(Artifact { csv, results, accepted });
    }
    let r = cfg.resolve()?;
    let (results, accepted) = match cmd {
        Command::Simulate => run_simulate(cfg, &r, &mut csv)?,
        Command::Qsd => run_qsd(cfg, &r, &mut csv)?,
        Command::Fte => run_fte(cfg, &r, &mut csv)?,
        Command::Contraction => run_contraction(cfg, &r, &mut csv)?,
        Command::Bound => unreachable!(),
        Command::Table => run_table(cfg, &r, &mut csv)?,
    };
    Ok(Artifact { csv, results, accepted })
}

fn single_volume(r: &Resolved) -> Result<f64> {
    match r.volumes.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::InvalidParameter(
            "this subcommand takes exactly one volume".into(),
        )),
    }
}

fn run_simulate(cfg: &ExperimentConfig, r: &Resolved, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    let v = single_volume(r)?;
    let (h, t) = cfg.time_parameters(r, v)?;
    let sim = SimConfig::with_horizon(v, h, t, cfg.seed)?;
    let run = simulate_with_regeneration(&r.network, &sim, cfg.process, &r.initial_state, None, true)?;
    write_trajectory_csv(&mut *out, r.network.species(), h, &run.trajectory)?;
    Ok((
        json!({ "volume": v, "steps": sim.steps, "regenerations": run.regen_count, "final_state": run.final_state }),
        true,
    ))
}

fn bins_for(cfg: &ExperimentConfig, i: usize) -> usize {
    match cfg.bins.as_slice() {
        [] => 40,
        [b] => *b,
        bs => bs[i.min(bs.len() - 1)],
    }
}

fn run_qsd(cfg: &ExperimentConfig, r: &Resolved, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    if cfg.bins.len() > 1 && cfg.bins.len() != r.volumes.len() {
        return Err(Error::InvalidParameter("give one bin count, or one per volume".into()));
    }
    let mut samples = Vec::new();
    for (i, &v) in r.volumes.iter().enumerate() {
        let (h, _) = cfg.time_parameters(r, v)?;
        let mut pair = Vec::new();
        for (j, kind) in [ProcessKind::Poisson, ProcessKind::Diffusion].into_iter().enumerate() {
            let seed = rng::stream_id(Purpose::FreeRun, rng::replica_seed(cfg.seed, (2 * i + j) as u64));
            let sim = SimConfig::new(v, h, cfg.qsd_steps, seed)?.with_thinning(cfg.budgets.thinning.max(1));
            log::info!(
                "{} V={v}: {kind:?} QSD run of {} steps",
                r.network.name(),
                cfg.qsd_steps
            );
            pair.push(free_qsd_samples(&r.network, kind, &sim, &r.initial_state)?);
        }
        samples.push(pair);
    }

    let finest = (0..r.volumes.len()).map(|i| bins_for(cfg, i)).max().unwrap_or(40);
    let (lo, hi) = match (&cfg.mesh_lo, &cfg.mesh_hi, r.preset.and_then(|p| p.default_mesh_box())) {
        (Some(lo), Some(hi), _) => (lo.clone(), hi.clone()),
        (None, None, Some(b)) => b,
        (None, None, None) => {
            let all: Vec<_> = samples.iter().flatten().map(|(res, _)| res).collect();
            let m = Mesh::covering(&all, 1, 0.05)?;
            (
                m.axes().iter().map(|a| a.lo).collect(),
                m.axes().iter().map(|a| a.hi).collect(),
            )
        }
        _ => return Err(Error::InvalidParameter("give both mesh_lo and mesh_hi".into())),
    };
    let fine = Mesh::uniform(&lo, &hi, finest)?;

    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (i, (&v, pair)) in r.volumes.iter().zip(&samples).enumerate() {
        let mesh = Mesh::uniform(&lo, &hi, bins_for(cfg, i))?;
        let hx = refine_to_common_mesh(&histogram(&pair[0].0, &mesh)?, &fine)?;
        let hy = refine_to_common_mesh(&histogram(&pair[1].0, &mesh)?, &fine)?;
        let tv = tv_distance(&hx, &hy)?;
        let w1 = empirical_w1(
            &evenly_spaced(&pair[0].0, W1_SAMPLES),
            &evenly_spaced(&pair[1].0, W1_SAMPLES),
        )?;
        log::info!("{} V={v}: TV {tv:.4}, capped W1 {w1:.4}", r.network.name());
        results.push(json!({
            "volume": v,
            "bins": bins_for(cfg, i),
            "tv": tv,
            "w1_capped": w1,
            "w1_samples": W1_SAMPLES,
            "clip_fraction": [hx.clip_fraction(), hy.clip_fraction()],
            "regenerations": [pair[0].1, pair[1].1],
        }));
        rows.push((v, hx, hy));
    }

    write!(out, "V")?;
    for s in r.network.species() {
        write!(out, ",{s}")?;
    }
    writeln!(out, ",poisson,diffusion")?;
    for (v, hx, hy) in &rows {
        for (c, (p, q)) in hx.probabilities().iter().zip(hy.probabilities()).enumerate() {
            if *p == 0.0 && *q == 0.0 {
                continue;
            }
            write!(out, "{v}")?;
            for x in fine.center(c) {
                write!(out, ",{x}")?;
            }
            writeln!(out, ",{p},{q}")?;
        }
    }
    Ok((
        json!({ "mesh": { "lo": lo, "hi": hi, "bins": finest }, "volumes": results }),
        true,
    ))
}

fn run_fte(cfg: &ExperimentConfig, r: &Resolved, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    writeln!(out, "network,V,h,T,segments,fte,fte_se")?;
    let mut results = Vec::new();
    for (i, &v) in r.volumes.iter().enumerate() {
        let (h, t) = cfg.time_parameters(r, v)?;
        let seed = rng::replica_seed(cfg.seed, i as u64);
        let setup = row_setup(&r.network, &r.initial_state, v, h, t, &cfg.budgets, seed)?;
        let fte = row_fte(&r.network, &setup, &cfg.budgets)?;
        writeln!(
            out,
            "{},{v},{h},{},{},{:.6},{:.6}",
            r.network.name(),
            fte.horizon,
            fte.segments,
            fte.mean,
            fte.std_error
        )?;
        results.push(json!(fte));
    }
    Ok((Value::Array(results), true))
}

fn run_contraction(cfg: &ExperimentConfig, r: &Resolved, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    writeln!(out, "V,t,n,p,lower,upper,fit")?;
    let mut results = Vec::new();
    let mut accepted = true;
    for (i, &v) in r.volumes.iter().enumerate() {
        let (h, t) = cfg.time_parameters(r, v)?;
        let seed = rng::replica_seed(cfg.seed, i as u64);
        let setup = row_setup(&r.network, &r.initial_state, v, h, t, &cfg.budgets, seed)?;
        let c = row_contraction(&r.network, &setup, &cfg.budgets)?;
        let (fit, curve) = (&c.tail, &c.curve);
        for (j, &s) in curve.times.iter().enumerate() {
            writeln!(
                out,
                "{v},{s},{},{},{},{},{}",
                curve.survivors[j],
                curve.p[j],
                fit.lower[j],
                fit.upper[j],
                fit.prefactor * (-fit.gamma * s).exp()
            )?;
        }
        let (coupled, extinct, censored) = tally(&c.outcomes);
        if !fit.accepted {
            log::warn!("V={v}: tail fit not accepted: {}", fit.diagnostic);
        }
        accepted &= fit.accepted;
        results.push(json!({
            "volume": v,
            "threshold": c.threshold,
            "gamma": fit.gamma,
            "alpha": (-fit.gamma * t).exp(),
            "tail_start": fit.tail_start,
            "accepted": fit.accepted,
            "diagnostic": fit.diagnostic,
            "coupled": coupled,
            "extinct": extinct,
            "censored": censored,
        }));
    }
    Ok((Value::Array(results), accepted))
}

/// `T` of a bound: the explicit horizon when no system is named, else the
/// system's horizon at its single volume.
fn bound_horizon(cfg: &ExperimentConfig) -> Result<f64> {
    if cfg.preset.is_none() && cfg.network.is_none() {
        return cfg
            .horizon
            .ok_or_else(|| Error::InvalidParameter("bound needs a horizon, or a preset to take it from".into()));
    }
    let r = cfg.resolve()?;
    let v = single_volume(&r)?;
    Ok(cfg.time_parameters(&r, v)?.1)
}

fn run_bound(cfg: &ExperimentConfig, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    let t = bound_horizon(cfg)?;
    let (Some(fte), Some(gamma)) = (cfg.fte, cfg.gamma) else {
        return Err(Error::InvalidParameter("bound needs both fte and gamma".into()));
    };
    if !(0.0..=1.0).contains(&fte) {
        return Err(Error::InvalidParameter(format!("fte must lie in [0, 1], got {fte}")));
    }
    let b = assemble_bound(FiniteTimeErrorEstimate::point(fte, t), gamma, t)?;
    writeln!(out, "fte,gamma,T,alpha,bound")?;
    writeln!(out, "{fte},{gamma},{t},{:.6},{:.6}", b.alpha, b.bound)?;
    Ok((json!(b), true))
}

fn run_table(cfg: &ExperimentConfig, r: &Resolved, out: &mut Vec<u8>) -> Result<(Value, bool)> {
    let mut rows = Vec::new();
    for (i, &v) in r.volumes.iter().enumerate() {
        let (h, t) = cfg.time_parameters(r, v)?;
        let seed = rng::replica_seed(cfg.seed, i as u64);
        rows.push(table_row(&r.network, &r.initial_state, v, h, t, &cfg.budgets, seed)?);
    }
    write_table_csv(&mut *out, &rows)?;
    let accepted = rows.iter().all(|row| row.tail.accepted);
    let results = rows
        .iter()
        .map(|row| {
            json!({
                "volume": row.volume,
                "fte": row.fte,
                "gamma": row.tail.gamma,
                "accepted": row.tail.accepted,
                "diagnostic": row.tail.diagnostic,
                "threshold": row.threshold,
                "report": row.report,
            })
        })
        .collect();
    Ok((Value::Array(results), accepted))
}
