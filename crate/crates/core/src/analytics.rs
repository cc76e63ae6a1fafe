//! Closed-form transition probabilities and mean light/dark durations.
//!
//! All expressions keep the first-order terms in the small parameters and
//! drop second-order remainders. Probabilities are clamped to `[0, 1]`; the
//! `clamped` flag records when that fired, which signals that the parameters
//! are outside the regime where the expansions hold.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jump::epsilons;
use crate::quantum::VSystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionProbs {
    /// Probability of a dark pulse after a light one.
    pub p: f64,
    /// Probability of a dark pulse after a dark one.
    pub q: f64,
    /// Includes the incomplete-decay correction valid at any gap.
    pub corrected: bool,
    pub clamped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Pulsed,
    ContinuousLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodTheory {
    pub t_light: f64,
    pub t_dark: f64,
    pub regime: Regime,
}

fn clamp(x: f64, fired: &mut bool) -> f64 {
    if x < 0.0 {
        *fired = true;
        0.0
    } else if x > 1.0 {
        *fired = true;
        1.0
    } else {
        x
    }
}

fn check_times(gap: f64, pulse_duration: f64) -> Result<()> {
    if !(gap >= 0.0) || !gap.is_finite() {
        return Err(invalid(format!("gap must be finite and >= 0, got {gap}")));
    }
    if !(pulse_duration >= 0.0) || !pulse_duration.is_finite() {
        return Err(invalid(format!(
            "pulse duration must be finite and >= 0, got {pulse_duration}"
        )));
    }
    Ok(())
}

/// First-order `(p, q)` for well-separated pulses, before clamping.
pub(crate) fn pq_raw(params: &VSystemParams, gap: f64, pulse_duration: f64) -> (f64, f64) {
    let (eps_p, _, eps_a) = epsilons(params);
    let VSystemParams { omega2, omega3, a3 } = *params;
    let (s, c) = (omega2 * gap).sin_cos();
    let a2 = a3 * a3;
    let o2 = omega3 * omega3;
    let den = a2 + 2.0 * o2;
    let rot = omega2 * pulse_duration;

    let p = 0.5 * (1.0 - c)
        + eps_p * (2.0 * s * (a2 + o2) / den + 0.5 * rot * c * (3.0 * a2 + 2.0 * o2) / den - 0.5 * rot)
        - 0.5 * eps_a * s * o2 / den;
    let q = 0.5 * (1.0 + c) - eps_p * (2.0 * s + 0.5 * rot * (1.0 + c));
    (p, q)
}

/// Transition probabilities for gaps long against the decay time.
pub fn pq(params: &VSystemParams, gap: f64, pulse_duration: f64) -> Result<TransitionProbs> {
    params.validate()?;
    check_times(gap, pulse_duration)?;
    let (p, q) = pq_raw(params, gap, pulse_duration);
    let mut clamped = false;
    Ok(TransitionProbs {
        p: clamp(p, &mut clamped),
        q: clamp(q, &mut clamped),
        corrected: false,
        clamped,
    })
}

/// Transition probabilities including the partial decay of `|3>` across short
/// gaps. Valid for any gap, including zero.
pub fn pq_corrected(params: &VSystemParams, gap: f64, pulse_duration: f64) -> Result<TransitionProbs> {
    params.validate()?;
    check_times(gap, pulse_duration)?;
    let (p, q) = pq_raw(params, gap, pulse_duration);
    let (_, eps_r, _) = epsilons(params);
    let VSystemParams { omega2, omega3, a3 } = *params;
    let s = (omega2 * gap).sin();
    let den = a3 * a3 + 2.0 * omega3 * omega3;
    let p_tilde = p - 2.0 * eps_r * s * omega3 * a3 / den * (-0.5 * a3 * gap).exp();
    let mut clamped = false;
    Ok(TransitionProbs {
        p: clamp(p_tilde, &mut clamped),
        q: clamp(q, &mut clamped),
        corrected: true,
        clamped,
    })
}

/// Mean durations from the geometric run-length laws of the light/dark chain.
pub fn mean_periods(probs: &TransitionProbs, gap: f64, pulse_duration: f64) -> Result<PeriodTheory> {
    check_times(gap, pulse_duration)?;
    let cycle = pulse_duration + gap;
    if !(cycle > 0.0) {
        return Err(invalid("pulse duration plus gap must be > 0"));
    }
    if !(probs.p > 0.0) {
        return Err(Error::DivergentPeriod("p = 0: light periods never end".into()));
    }
    if !(probs.q < 1.0) {
        return Err(Error::DivergentPeriod("q = 1: dark periods never end".into()));
    }
    Ok(PeriodTheory {
        t_light: cycle / probs.p,
        t_dark: cycle / (1.0 - probs.q),
        regime: Regime::Pulsed,
    })
}

/// Mean light and dark durations under continuous drive of both fields.
pub fn continuous_limit_periods(params: &VSystemParams) -> Result<PeriodTheory> {
    params.validate()?;
    let VSystemParams { omega2, omega3, a3 } = *params;
    if !(omega2 > 0.0 && omega3 > 0.0) {
        return Err(Error::DivergentPeriod(
            "both Rabi frequencies must be nonzero for finite periods".into(),
        ));
    }
    let o2 = omega3 * omega3;
    let shelving = omega2 * omega2;
    Ok(PeriodTheory {
        t_light: (a3 * a3 + 2.0 * o2) * o2 / (shelving * a3.powi(3)),
        t_dark: o2 / (shelving * a3),
        regime: Regime::ContinuousLimit,
    })
}
