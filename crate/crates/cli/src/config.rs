use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zeno_core::jump::{PulseSchedule, RunLength};
use zeno_core::quantum::VSystemParams;

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ideal,
    Pulsed,
    Continuous,
    Theory,
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsConfig {
    pub omega2: f64,
    pub omega3: f64,
    pub a3: f64,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            omega2: 1.0,
            omega3: 40.0,
            a3: 20.0,
        }
    }
}

/// Unset fields take per-mode defaults. In ideal mode `gap` is the spacing
/// between measurements and `n_pulses` the number of measurements.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub pulse_duration: Option<f64>,
    pub gap: Option<f64>,
    pub n_pulses: Option<usize>,
    pub total_duration: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub params: ParamsConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Not echoed into written configs, so a run is reproducible from them.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub trajectories: usize,
    pub gap_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            params: ParamsConfig::default(),
            schedule: ScheduleConfig::default(),
            seed: 1,
            out: None,
            trajectories: 1,
            gap_threshold: None,
        }
    }
}

pub const DEFAULT_MEASUREMENTS: usize = 100_000;
pub const DEFAULT_PULSES: usize = 20_000;
pub const DEFAULT_DURATION: f64 = 5e4;

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading config {}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())).into())
    }

    pub fn params(&self) -> Result<VSystemParams, ConfigError> {
        let p = self.params;
        VSystemParams::new(p.omega2, p.omega3, p.a3).map_err(|e| ConfigError(e.to_string()))
    }

    /// `pi / omega2`, infinite when the rf field is off.
    pub fn t_pi(&self) -> f64 {
        std::f64::consts::PI / self.params.omega2
    }

    pub fn trajectories(&self) -> Result<usize, ConfigError> {
        if self.trajectories == 0 {
            return Err(ConfigError("trajectories must be >= 1".into()));
        }
        Ok(self.trajectories)
    }

    /// `(dt, n)` of an ideal measurement run.
    pub fn ideal(&self) -> Result<(f64, usize), ConfigError> {
        let dt = self.schedule.gap.unwrap_or(self.t_pi() / 2.0);
        let n = self.schedule.n_pulses.unwrap_or(DEFAULT_MEASUREMENTS);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ConfigError(format!("measurement spacing must be finite and > 0, got {dt}")));
        }
        if n == 0 {
            return Err(ConfigError("number of measurements must be >= 1".into()));
        }
        Ok((dt, n))
    }

    pub fn pulsed(&self) -> Result<PulseSchedule, ConfigError> {
        let s = &self.schedule;
        let tau = s.pulse_duration.unwrap_or(1.0);
        let gap = s.gap.unwrap_or(1.0);
        if gap == 0.0 {
            return Err(ConfigError("pulsed mode needs gap > 0; use the continuous subcommand".into()));
        }
        let length = match (s.n_pulses, s.total_duration) {
            (Some(_), Some(_)) => {
                return Err(ConfigError("give either n_pulses or total_duration, not both".into()))
            }
            (Some(n), None) => RunLength::Pulses(n),
            (None, Some(t)) => RunLength::Duration(t),
            (None, None) => RunLength::Pulses(DEFAULT_PULSES),
        };
        PulseSchedule::new(tau, gap, length).map_err(|e| ConfigError(e.to_string()))
    }

    pub fn continuous(&self) -> Result<PulseSchedule, ConfigError> {
        let s = &self.schedule;
        if s.gap.is_some_and(|g| g != 0.0) {
            return Err(ConfigError("continuous mode has no gap; leave it unset or 0".into()));
        }
        if s.n_pulses.is_some() {
            return Err(ConfigError("continuous mode takes total_duration, not n_pulses".into()));
        }
        PulseSchedule::continuous(s.total_duration.unwrap_or(DEFAULT_DURATION))
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn gap_threshold(&self) -> Result<Option<f64>, ConfigError> {
        match self.gap_threshold {
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                Err(ConfigError(format!("gap threshold must be finite and > 0, got {t}")))
            }
            t => Ok(t),
        }
    }
}
