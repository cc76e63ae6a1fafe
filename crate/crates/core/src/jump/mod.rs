//! Quantum-jump simulation of the probed V system.
//!
//! Between photon emissions a trajectory follows the no-jump evolution of
//! [`conditional_hamiltonian`](crate::quantum::conditional_hamiltonian); an
//! emission resets the atom to `|1>`. Probe pulses switch the 1-3 coupling
//! on, the rf field and the decay channel are always active.

mod effective;
mod engine;
mod record;

pub use effective::{effective_rho_emission, effective_rho_no_emission, p0_probability};
pub use engine::{
    ensemble_average, pulse_ensemble, run_batch, run_continuous, run_trajectory, sample_pure_state,
    simulate_gap, simulate_pulse, JumpEngine, PulseEnsemble, PulseOutcome,
};
pub(crate) use engine::stream_rng;
pub use record::{read_record, read_record_csv, record_meta, write_record, write_record_csv, RecordMeta};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quantum::VSystemParams;

/// Ratio that stands in for "much greater than" in regime checks.
pub const MUCH_GREATER: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLength {
    Pulses(usize),
    Duration(f64),
}

/// Probe pulses of length `pulse_duration` separated by `gap`. A zero gap
/// selects continuous drive, in which case `pulse_duration` is ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub pulse_duration: f64,
    pub gap: f64,
    pub length: RunLength,
}

impl PulseSchedule {
    pub fn new(pulse_duration: f64, gap: f64, length: RunLength) -> Result<Self> {
        let s = Self {
            pulse_duration,
            gap,
            length,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn continuous(total_duration: f64) -> Result<Self> {
        Self::new(0.0, 0.0, RunLength::Duration(total_duration))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gap.is_finite() || self.gap < 0.0 {
            return Err(invalid(format!("gap must be finite and >= 0, got {}", self.gap)));
        }
        if !self.pulse_duration.is_finite() || self.pulse_duration < 0.0 {
            return Err(invalid(format!(
                "pulse duration must be finite and >= 0, got {}",
                self.pulse_duration
            )));
        }
        if self.is_continuous() {
            match self.length {
                RunLength::Duration(t) if t.is_finite() && t > 0.0 => Ok(()),
                RunLength::Duration(t) => Err(invalid(format!("total duration must be > 0, got {t}"))),
                RunLength::Pulses(_) => Err(invalid("continuous drive needs a total duration")),
            }
        } else {
            if self.pulse_duration <= 0.0 {
                return Err(invalid("pulsed mode needs a pulse duration > 0"));
            }
            match self.length {
                RunLength::Pulses(0) => Err(invalid("number of pulses must be >= 1")),
                RunLength::Duration(t) if !(t.is_finite() && t >= self.cycle()) => Err(invalid(
                    format!("total duration {t} shorter than one cycle"),
                )),
                _ => Ok(()),
            }
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.gap == 0.0
    }

    /// Pulse plus gap.
    pub fn cycle(&self) -> f64 {
        self.pulse_duration + self.gap
    }

    /// Number of complete cycles (pulsed mode).
    pub fn n_pulses(&self) -> usize {
        match self.length {
            RunLength::Pulses(n) => n,
            RunLength::Duration(t) => (t / self.cycle() + 1e-9).floor() as usize,
        }
    }

    pub fn pulse_start(&self, k: usize) -> f64 {
        k as f64 * self.cycle()
    }

    pub fn total_duration(&self) -> f64 {
        if self.is_continuous() {
            match self.length {
                RunLength::Duration(t) => t,
                RunLength::Pulses(_) => 0.0,
            }
        } else {
            self.pulse_start(self.n_pulses())
        }
    }

    /// Index of the latest pulse starting at or before `t`.
    pub fn pulse_containing(&self, t: f64) -> Option<usize> {
        if self.is_continuous() || t < 0.0 || t > self.total_duration() {
            return None;
        }
        let k = (t / self.cycle()).floor() as usize;
        let k = k.min(self.n_pulses().saturating_sub(1));
        // undo rounding at cycle boundaries
        if t < self.pulse_start(k) {
            Some(k.saturating_sub(1))
        } else if k + 1 < self.n_pulses() && t >= self.pulse_start(k + 1) {
            Some(k + 1)
        } else {
            Some(k)
        }
    }
}

/// Photon emission times of one trajectory, with the pulse each is
/// attributed to (`None` under continuous drive).
#[derive(Clone, Debug, PartialEq)]
pub struct EmissionRecord {
    pub jump_times: Vec<f64>,
    pub pulse_index: Vec<Option<usize>>,
    pub params: VSystemParams,
    pub schedule: PulseSchedule,
    pub seed: u64,
    pub stream: u64,
}

impl EmissionRecord {
    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.schedule.total_duration()
    }

    /// Checks ordering and attribution invariants.
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.jump_times.len() != self.pulse_index.len() {
            return Err(Error::RecordMismatch("jump and attribution lengths differ".into()));
        }
        if self.jump_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::RecordMismatch("jump times not strictly increasing".into()));
        }
        let total = self.total_duration();
        for (t, k) in self.jump_times.iter().zip(&self.pulse_index) {
            if !(0.0..=total).contains(t) {
                return Err(Error::RecordMismatch(format!("jump at {t} outside [0, {total}]")));
            }
            match (self.schedule.is_continuous(), k) {
                (true, None) => {}
                (true, Some(_)) => {
                    return Err(Error::RecordMismatch("continuous record with pulse index".into()))
                }
                (false, None) => {
                    return Err(Error::RecordMismatch(format!("jump at {t} has no pulse index")))
                }
                (false, Some(k)) => {
                    if self.schedule.pulse_containing(*t) != Some(*k) {
                        return Err(Error::RecordMismatch(format!(
                            "jump at {t} attributed to pulse {k}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `(eps_p, eps_R, eps_A) = (O2 A3 / O3^2, O2 / O3, O2 / A3)`.
pub fn epsilons(params: &VSystemParams) -> (f64, f64, f64) {
    let VSystemParams { omega2, omega3, a3 } = *params;
    (omega2 * a3 / (omega3 * omega3), omega2 / omega3, omega2 / a3)
}

/// Largest of the three small parameters.
pub fn eps_max(params: &VSystemParams) -> f64 {
    let (a, b, c) = epsilons(params);
    a.max(b).max(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck {
    pub name: String,
    pub description: String,
    /// Satisfied when at least [`MUCH_GREATER`].
    pub ratio: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub eps_p: f64,
    pub eps_r: f64,
    pub eps_a: f64,
    pub eps: f64,
    pub checks: Vec<RegimeCheck>,
    pub warnings: Vec<String>,
}

impl ValidityReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }

    pub fn check(&self, name: &str) -> Option<&RegimeCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Evaluates the conditions under which a probe pulse acts as an effective
/// level measurement and consecutive pulses decouple. Reports, never fails.
pub fn validity_report(params: &VSystemParams, schedule: &PulseSchedule) -> ValidityReport {
    let (eps_p, eps_r, eps_a) = epsilons(params);
    let eps = eps_p.max(eps_r).max(eps_a);
    let VSystemParams { omega2, omega3, a3 } = *params;
    let mut checks = Vec::new();
    let mut push = |name: &str, description: &str, ratio: f64| {
        checks.push(RegimeCheck {
            name: name.into(),
            description: description.into(),
            ratio,
            satisfied: ratio >= MUCH_GREATER,
        })
    };
    let pulse_scale = (1.0 / a3).max(a3 / (omega3 * omega3));
    if !schedule.is_continuous() {
        push(
            "pulse_duration",
            "pulse duration / max(1/A3, A3/O3^2)",
            schedule.pulse_duration / pulse_scale,
        );
    }
    push("eps_p", "1 / eps_p", 1.0 / eps_p);
    push("eps_r", "1 / eps_R", 1.0 / eps_r);
    push("eps_a", "1 / eps_A", 1.0 / eps_a);
    push("gap_decay", "gap * A3", schedule.gap * a3);
    push("gap_rotation", "(O2 gap)^2 / eps", (omega2 * schedule.gap).powi(2) / eps);

    let mut warnings = Vec::new();
    for c in &checks {
        if !c.satisfied {
            warnings.push(format!("{} = {:.4} below {}", c.description, c.ratio, MUCH_GREATER));
        }
    }
    let gap_ok = checks
        .iter()
        .filter(|c| c.name.starts_with("gap_"))
        .all(|c| c.satisfied);
    if !gap_ok {
        warnings.push(
            "pulse spacing regime violated: level 3 does not fully decay between pulses; \
             analytics must use the corrected transition probabilities"
                .into(),
        );
    }
    ValidityReport {
        eps_p,
        eps_r,
        eps_a,
        eps,
        checks,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn epsilon_values() {
        let (p, r, a) = epsilons(&VSystemParams::new(1.0, 200.0, 100.0).unwrap());
        assert_abs_diff_eq!(p, 0.0025, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(a, 0.01, epsilon = 1e-15);
        let (p, r, a) = epsilons(&VSystemParams::new(1.0, 40.0, 20.0).unwrap());
        assert_abs_diff_eq!(p, 0.0125, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.025, epsilon = 1e-15);
        assert_abs_diff_eq!(a, 0.05, epsilon = 1e-15);
        let (p, r, a) = epsilons(&VSystemParams::new(1e-9, 40.0, 20.0).unwrap());
        assert!(p < 1e-10 && r < 1e-10 && a < 1e-10);
    }

    #[test]
    fn validity_at_acceptance_point() {
        let params = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(10)).unwrap();
        let rep = validity_report(&params, &sched);
        assert_abs_diff_eq!(rep.check("pulse_duration").unwrap().ratio, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.check("gap_rotation").unwrap().ratio, 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.check("gap_decay").unwrap().ratio, 20.0, epsilon = 1e-12);
        assert!(rep.all_satisfied(), "{rep:?}");
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn validity_flags_continuous_drive() {
        let params = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::continuous(100.0).unwrap();
        let rep = validity_report(&params, &sched);
        assert!(!rep.check("gap_decay").unwrap().satisfied);
        assert!(rep.warnings.iter().any(|w| w.contains("corrected transition probabilities")));
    }

    #[test]
    fn validity_flags_short_pulse() {
        let params = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0 / 20.0, 1.0, RunLength::Pulses(10)).unwrap();
        let c = validity_report(&params, &sched).check("pulse_duration").unwrap().clone();
        assert_abs_diff_eq!(c.ratio, 1.0, epsilon = 1e-12);
        assert!(!c.satisfied);
    }

    #[test]
    fn schedule_geometry() {
        let s = PulseSchedule::new(1.0, 0.5, RunLength::Duration(10.0)).unwrap();
        assert_eq!(s.n_pulses(), 6);
        assert_abs_diff_eq!(s.total_duration(), 9.0, epsilon = 1e-12);
        assert_eq!(s.pulse_containing(0.0), Some(0));
        assert_eq!(s.pulse_containing(1.49), Some(0));
        assert_eq!(s.pulse_containing(1.5), Some(1));
        assert_eq!(s.pulse_containing(9.0), Some(5));
        assert_eq!(s.pulse_containing(9.5), None);
        assert!(PulseSchedule::new(0.0, 1.0, RunLength::Pulses(3)).is_err());
        assert!(PulseSchedule::new(1.0, 1.0, RunLength::Pulses(0)).is_err());
        assert!(PulseSchedule::new(1.0, -1.0, RunLength::Pulses(3)).is_err());
        assert!(PulseSchedule::continuous(0.0).is_err());
        assert!(PulseSchedule::new(1.0, 0.0, RunLength::Pulses(3)).is_err());
    }
}
