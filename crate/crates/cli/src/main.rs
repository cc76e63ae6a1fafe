mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Mode, RunConfig};

/// Invalid configuration or arguments; exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Self-checks that did not pass; exit code 4.
#[derive(Debug)]
pub struct VerifyFailed(pub usize);

impl std::fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

#[derive(Parser)]
#[command(name = "zeno", version, about = "Light and dark periods of a probed three-level atom")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ideal projective measurements of a driven two-level system.
    Ideal(Common),
    /// Quantum-jump simulation with a pulsed probe laser.
    Pulsed(Common),
    /// Quantum-jump simulation with a continuous probe laser.
    Continuous(Common),
    /// Closed-form transition probabilities and mean periods.
    Theory(Common),
    /// Built-in self-checks, or validation of a stored emission record.
    Verify(VerifyArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<usize>,
    /// Dark-period gap threshold for continuous runs.
    #[arg(long)]
    gap_threshold: Option<f64>,
    #[arg(long)]
    omega2: Option<f64>,
    #[arg(long)]
    omega3: Option<f64>,
    #[arg(long)]
    a3: Option<f64>,
    #[arg(long)]
    pulse_duration: Option<f64>,
    /// Gap between pulses; spacing between measurements in ideal mode.
    #[arg(long, alias = "dt")]
    gap: Option<f64>,
    /// Number of pulses; number of measurements in ideal mode.
    #[arg(long, short = 'n')]
    pulses: Option<usize>,
    /// Total simulated time.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Emission record to validate instead of running the self-checks.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Metadata sidecar of the record; defaults to the record path with a
    /// `.json` extension.
    #[arg(long, requires = "record")]
    meta: Option<PathBuf>,
}

fn resolve(mode: Mode, c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cfg.mode {
        if m != mode {
            return Err(ConfigError(format!("config is for mode {m:?}, not {mode:?}")).into());
        }
    }
    cfg.mode = Some(mode);
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.out {
        cfg.out = Some(v.clone());
    }
    if let Some(v) = c.trajectories {
        cfg.trajectories = v;
    }
    if let Some(v) = c.gap_threshold {
        cfg.gap_threshold = Some(v);
    }
    if let Some(v) = c.omega2 {
        cfg.params.omega2 = v;
    }
    if let Some(v) = c.omega3 {
        cfg.params.omega3 = v;
    }
    if let Some(v) = c.a3 {
        cfg.params.a3 = v;
    }
    let s = &mut cfg.schedule;
    if let Some(v) = c.pulse_duration {
        s.pulse_duration = Some(v);
    }
    if let Some(v) = c.gap {
        s.gap = Some(v);
    }
    if let Some(v) = c.pulses {
        s.n_pulses = Some(v);
        s.total_duration = None;
    }
    if let Some(v) = c.duration {
        s.total_duration = Some(v);
        if c.pulses.is_none() {
            s.n_pulses = None;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ideal(c) => commands::cmd_ideal(&resolve(Mode::Ideal, &c)?),
        Command::Pulsed(c) => commands::cmd_pulsed(&resolve(Mode::Pulsed, &c)?),
        Command::Continuous(c) => commands::cmd_continuous(&resolve(Mode::Continuous, &c)?),
        Command::Theory(c) => commands::cmd_theory(&resolve(Mode::Theory, &c)?),
        Command::Verify(v) => match &v.record {
            Some(record) => commands::cmd_verify_record(record, v.meta.as_deref()),
            None => commands::cmd_verify(&resolve(Mode::Verify, &v.common)?, v.common.trajectories),
        },
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use zeno_core::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if cause.is::<VerifyFailed>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => 2,
                E::Io(_) | E::Csv(_) | E::Json(_) | E::Parse(_) | E::RecordMismatch(_) => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
