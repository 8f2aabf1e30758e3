use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use qsd_sensitivity::experiment::{self, Command, ExperimentConfig, EXIT_OTHER, EXIT_USAGE};
use qsd_sensitivity::network::{Preset, ProcessKind};
use qsd_sensitivity::Pairing;

#[derive(Parser)]
#[command(
    name = "qsdsens",
    version,
    about = "Bounds on the distance between quasi-stationary distributions of a reaction network and its diffusion approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Record one regenerating trajectory.
    Simulate(Flags),
    /// Histogram both QSDs and report their TV distance.
    Qsd(Flags),
    /// Finite-time error of paired trajectories.
    Fte(Flags),
    /// Coupling times, survival curve and exponential tail fit.
    Contraction(Flags),
    /// Assemble the bound from a finite-time error and a rate.
    Bound(Flags),
    /// Full table rows: finite-time error, rate and bound per volume.
    Table(Flags),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct Flags {
    /// JSON or TOML config, or an earlier CSV artifact.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long = "initial-state", value_delimiter = ',')]
    initial_state: Option<Vec<f64>>,
    #[arg(long, alias = "volume", value_delimiter = ',')]
    volumes: Option<Vec<f64>>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long = "horizon-steps")]
    horizon_steps: Option<usize>,
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skeleton grid step.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "skeleton-cells")]
    skeleton_cells: Option<usize>,
    #[arg(long, value_parser = parse_pairing)]
    pairing: Option<Pairing>,
    #[arg(long = "reuse-skeletons")]
    reuse_skeletons: bool,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    bins: Option<Vec<usize>>,
    #[arg(long = "qsd-steps")]
    qsd_steps: Option<usize>,
    #[arg(long, value_parser = parse_process)]
    process: Option<ProcessKind>,
    /// Use the success-count form of the Agresti–Coull interval.
    #[arg(long = "compat-ac")]
    compat_ac: bool,
    #[arg(long)]
    fte: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "json-summary")]
    json_summary: Option<PathBuf>,
}

fn parse_pairing(s: &str) -> Result<Pairing, String> {
    match s {
        "dyadic" => Ok(Pairing::Dyadic),
        "per-cell" | "percell" => Ok(Pairing::PerCell),
        _ => Err(format!("unknown pairing `{s}`")),
    }
}

fn parse_process(s: &str) -> Result<ProcessKind, String> {
    match s {
        "poisson" => Ok(ProcessKind::Poisson),
        "diffusion" => Ok(ProcessKind::Diffusion),
        _ => Err(format!("unknown process `{s}`")),
    }
}

impl Flags {
    fn into_config(self) -> Result<ExperimentConfig, ExitCode> {
        let mut c = match &self.config {
            Some(p) => experiment::load_config(p).map_err(|e| {
                eprintln!("error: {}: {e}", p.display());
                ExitCode::from(EXIT_USAGE as u8)
            })?,
            None => ExperimentConfig::default(),
        };
        let b = &mut c.budgets;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(b.segments, self.segments);
        set!(b.runs, self.runs);
        set!(b.grid_step, self.delta);
        set!(b.pairing, self.pairing);
        set!(b.thinning, self.thinning);
        if self.threshold.is_some() {
            b.threshold = self.threshold;
        }
        if self.skeleton_cells.is_some() {
            b.skeleton_cells = self.skeleton_cells;
        }
        b.reuse_skeletons |= self.reuse_skeletons;
        b.tail.compat_ac |= self.compat_ac;
        if self.preset.is_some() || self.network.is_some() {
            c.preset = self.preset;
            c.network = self.network;
        }
        set!(c.volumes, self.volumes);
        set!(c.bins, self.bins);
        set!(c.seed, self.seed);
        set!(c.qsd_steps, self.qsd_steps);
        set!(c.process, self.process);
        for (dst, src) in [
            (&mut c.step, self.step),
            (&mut c.horizon, self.horizon),
            (&mut c.fte, self.fte),
            (&mut c.gamma, self.gamma),
        ] {
            if src.is_some() {
                *dst = src;
            }
        }
        if self.horizon_steps.is_some() {
            c.horizon_steps = self.horizon_steps;
        }
        if self.initial_state.is_some() {
            c.initial_state = self.initial_state;
        }
        if self.out.is_some() {
            c.out = self.out;
        }
        if self.json_summary.is_some() {
            c.json_summary = self.json_summary;
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (cmd, flags) = match cli.command {
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Qsd(f) => (Command::Qsd, f),
        Cmd::Fte(f) => (Command::Fte, f),
        Cmd::Contraction(f) => (Command::Contraction, f),
        Cmd::Bound(f) => (Command::Bound, f),
        Cmd::Table(f) => (Command::Table, f),
    };
    let cfg = match flags.into_config() {
        Ok(c) => c,
        Err(code) => return code,
    };
    let start = Instant::now();
    let result = experiment::run(cmd, &cfg).and_then(|a| {
        let summary = a.summary(cmd, &cfg, start.elapsed())?;
        Ok((a, summary))
    });
    let (artifact, summary) = match result {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error[{:?}]: {e}", e.class());
            return ExitCode::from(experiment::exit_code(&e) as u8);
        }
    };
    let written = (|| -> std::io::Result<()> {
        match &cfg.out {
            Some(p) => std::fs::write(p, &artifact.csv)?,
            None => std::io::stdout().write_all(&artifact.csv)?,
        }
        let text = serde_json::to_string_pretty(&summary)?;
        match &cfg.json_summary {
            Some(p) => std::fs::write(p, text + "\n")?,
            None => log::info!("summary: {}", serde_json::to_string(&summary)?),
        }
        Ok(())
    })();
    if let Err(e) = written {
        eprintln!("error[Io]: {e}");
        return ExitCode::from(EXIT_OTHER as u8);
    }
    ExitCode::from(artifact.exit_code() as u8)
}
