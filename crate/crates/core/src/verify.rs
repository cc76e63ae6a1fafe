//! Self-checks run by `zeno verify`: enumeration oracle, norm invariants,
//! master-equation oracle and consistency of the closed-form probabilities.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analytics::pq_corrected;
use crate::bloch::{exact_pq, steady_state_in, unraveling_check};
use crate::error::{invalid, Result};
use crate::ideal::{run_ideal_sequence, sequence_probability, survival_probability, Outcome, OutcomeSequence};
use crate::jump::{eps_max, stream_rng, PulseSchedule, RunLength};
use crate::quantum::{conditional_hamiltonian, Propagator, StateVector, VSystemParams, C64};

/// Significance level matching a two-sided 3 sigma test.
pub const THREE_SIGMA_ALPHA: f64 = 0.0027;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<Check>) -> Self {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnumerationCheck {
    pub n: usize,
    pub samples: usize,
    pub probability_sum: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Largest per-string `|observed - expected| / sd`.
    pub max_abs_z: f64,
}

impl EnumerationCheck {
    pub fn passed(&self) -> bool {
        (self.probability_sum - 1.0).abs() < 1e-12 && self.p_value > THREE_SIGMA_ALPHA
    }
}

fn string_from_bits(bits: u64, n: usize) -> Vec<Outcome> {
    (0..n)
        .map(|k| if bits >> k & 1 == 1 { Outcome::Perp } else { Outcome::A })
        .collect()
}

fn bits_from_string(outcomes: &[Outcome]) -> u64 {
    outcomes
        .iter()
        .enumerate()
        .map(|(k, o)| if *o == Outcome::Perp { 1 << k } else { 0 })
        .sum()
}

/// Exact probabilities of all `2^n` outcome strings against Monte Carlo
/// frequencies, as a chi-square goodness of fit. Bins expecting fewer than
/// five counts are pooled.
pub fn enumeration_check(
    psi0: &StateVector,
    omega2: f64,
    dt: f64,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<EnumerationCheck> {
    if !(1..=16).contains(&n) {
        return Err(invalid(format!("enumeration needs 1 <= n <= 16, got {n}")));
    }
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let strings = 1u64 << n;
    let probs: Vec<f64> = (0..strings)
        .map(|b| sequence_probability(&OutcomeSequence::new(string_from_bits(b, n), dt)?, psi0, omega2))
        .collect::<Result<_>>()?;
    let counts = sample_counts(psi0, omega2, dt, n, samples, seed)?;
    goodness_of_fit(n, &probs, &counts)
}

fn sample_counts(psi0: &StateVector, omega2: f64, dt: f64, n: usize, samples: usize, seed: u64) -> Result<Vec<usize>> {
    const CHUNK: usize = 8192;
    let chunks: Vec<(usize, usize)> = (0..samples)
        .step_by(CHUNK)
        .map(|a| (a, (a + CHUNK).min(samples)))
        .collect();
    let partial: Vec<HashMap<u64, usize>> = chunks
        .into_par_iter()
        .map(|(a, b)| {
            let mut rng = stream_rng(seed, a as u64);
            let mut counts = HashMap::new();
            for _ in a..b {
                let seq = run_ideal_sequence(psi0, omega2, dt, n, &mut rng)?;
                *counts.entry(bits_from_string(&seq.outcomes)).or_insert(0) += 1;
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0usize; 1 << n];
    for part in partial {
        for (k, c) in part {
            counts[k as usize] += c;
        }
    }
    Ok(counts)
}

fn goodness_of_fit(n: usize, probs: &[f64], counts: &[usize]) -> Result<EnumerationCheck> {
    let samples: usize = counts.iter().sum();
    let total = samples as f64;
    let mut chi_square = 0.0;
    let mut bins = 0usize;
    let (mut pool_obs, mut pool_exp) = (0.0, 0.0);
    let mut max_abs_z: f64 = 0.0;
    for (p, c) in probs.iter().zip(counts) {
        let expected = p * total;
        let observed = *c as f64;
        if *p > 0.0 && *p < 1.0 {
            let sd = (total * p * (1.0 - p)).sqrt();
            max_abs_z = max_abs_z.max((observed - expected).abs() / sd);
        } else if *c > 0 && *p == 0.0 {
            max_abs_z = f64::INFINITY;
        }
        if expected >= 5.0 {
            chi_square += (observed - expected).powi(2) / expected;
            bins += 1;
        } else {
            pool_obs += observed;
            pool_exp += expected;
        }
    }
    if pool_exp >= 5.0 {
        chi_square += (pool_obs - pool_exp).powi(2) / pool_exp;
        bins += 1;
    } else if pool_obs > 0.0 {
        // too few to test on their own; fold into the statistic conservatively
        chi_square += (pool_obs - pool_exp).powi(2) / pool_exp.max(1.0);
    }
    let dof = bins.saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(chi_square))
        .map_err(|e| invalid(e.to_string()))?;
    Ok(EnumerationCheck {
        n,
        samples,
        probability_sum: probs.iter().sum(),
        chi_square,
        dof,
        p_value,
        max_abs_z,
    })
}

/// Signature of a closed-form `(p, q)` evaluator, so that a deliberately
/// broken one can be fed to [`pq_consistency`].
pub type PqFn = dyn Fn(&VSystemParams, f64, f64) -> Result<(f64, f64)> + Sync;

pub fn closed_form_pq(params: &VSystemParams, gap: f64, pulse_duration: f64) -> Result<(f64, f64)> {
    let t = pq_corrected(params, gap, pulse_duration)?;
    Ok((t.p, t.q))
}

/// Compares `pq_fn` with the master-equation transition probabilities;
/// agreement must be within `5 eps^2`.
pub fn pq_consistency(pq_fn: &PqFn) -> Check {
    let name = "pq consistency";
    let cases = [(1.0, 200.0, 100.0, 1.0, 0.5), (1.0, 200.0, 100.0, 2.5, 0.5)];
    Check::from_result(
        name,
        (|| {
            let mut worst: f64 = 0.0;
            let mut tol = f64::INFINITY;
            for (o2, o3, a, gap, tau) in cases {
                let p = VSystemParams::new(o2, o3, a)?;
                let eps = eps_max(&p);
                tol = tol.min(5.0 * eps * eps);
                let (pe, qe) = exact_pq(&p, gap, tau)?;
                let (pc, qc) = pq_fn(&p, gap, tau)?;
                worst = worst.max((pe - pc).abs()).max((qe - qc).abs());
            }
            Ok(Check::new(
                name,
                worst <= tol,
                format!("max |exact - closed form| = {worst:.3e}, tolerance {tol:.1e}"),
            ))
        })(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trajectories for the unraveling check.
    pub trajectories: usize,
    /// Monte Carlo samples for the enumeration check.
    pub samples: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 20240601,
            trajectories: 2000,
            samples: 200_000,
        }
    }
}

fn enumeration(opts: &VerifyOptions) -> Check {
    let name = "enumeration oracle";
    let psi0 = StateVector::new(
        C64::from(0.3f64.cos()),
        C64::from_polar(0.3f64.sin(), 0.5),
        C64::from(0.0),
    );
    Check::from_result(
        name,
        (|| {
            let mut details = Vec::new();
            let mut ok = true;
            for n in [4, 8] {
                let e = enumeration_check(&psi0, 1.0, 0.7, n, opts.samples, opts.seed ^ n as u64)?;
                ok &= e.passed();
                details.push(format!(
                    "n={n}: sum-1={:.1e} chi2={:.1}/{} p={:.3}",
                    e.probability_sum - 1.0,
                    e.chi_square,
                    e.dof,
                    e.p_value
                ));
            }
            Ok(Check::new(name, ok, details.join("; ")))
        })(),
    )
}

fn survival(opts: &VerifyOptions) -> Check {
    let name = "zeno survival";
    Check::from_result(
        name,
        (|| {
            let t_pi = std::f64::consts::PI;
            let mut prev = 0.0;
            let mut monotone = true;
            for n in [4usize, 16, 64, 256] {
                let s = survival_probability(1.0, t_pi / n as f64, n)?;
                monotone &= s > prev;
                prev = s;
            }
            let exact = survival_probability(1.0, t_pi / 64.0, 64)?;
            let runs = 20_000;
            let mut rng = stream_rng(opts.seed, 7);
            let mut survived = 0usize;
            for _ in 0..runs {
                let seq = run_ideal_sequence(&StateVector::ground(), 1.0, t_pi / 64.0, 64, &mut rng)?;
                survived += seq.outcomes.iter().all(|o| *o == Outcome::A) as usize;
            }
            let f = survived as f64 / runs as f64;
            let sd = (exact * (1.0 - exact) / runs as f64).sqrt();
            let z = (f - exact) / sd;
            Ok(Check::new(
                name,
                monotone && (exact - 0.96218).abs() < 1e-5 && z.abs() <= 3.0,
                format!("P(64) = {exact:.6}, Monte Carlo {f:.5} (z = {z:+.2}), monotone = {monotone}"),
            ))
        })(),
    )
}

fn norm_invariants(opts: &VerifyOptions) -> Check {
    let name = "norm invariants";
    Check::from_result(
        name,
        (|| {
            let mut rng = stream_rng(opts.seed, 11);
            let mut worst_unitary: f64 = 0.0;
            let mut increases = 0usize;
            for _ in 0..200 {
                let params = VSystemParams::new(
                    rng.random_range(0.1..3.0),
                    rng.random_range(1.0..100.0),
                    rng.random_range(1.0..100.0),
                )?;
                let c = |r: &mut rand_chacha::ChaCha8Rng| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                let psi = StateVector::new(c(&mut rng), c(&mut rng), c(&mut rng)).normalized();
                let t = rng.random_range(0.0..2.0);
                // without the probe the 1-2 block is closed and unitary
                let block = StateVector::new(psi.amp(1), psi.amp(2), C64::from(0.0)).normalized();
                let dark = Propagator::new(&conditional_hamiltonian(&params, false))?;
                worst_unitary = worst_unitary.max((dark.propagate(&block, t).norm_sqr() - 1.0).abs());
                let probe = Propagator::new(&conditional_hamiltonian(&params, true))?;
                let ev = probe.expand(&psi);
                let mut last = 1.0 + 1e-12;
                for k in 0..=20 {
                    let n = ev.norm_sqr_at(t * k as f64 / 20.0);
                    if n > last + 1e-12 {
                        increases += 1;
                    }
                    last = n;
                }
            }
            Ok(Check::new(
                name,
                worst_unitary < 1e-10 && increases == 0,
                format!("max unitarity error {worst_unitary:.1e}, norm increases {increases}"),
            ))
        })(),
    )
}

fn fluorescence_steady_state() -> Check {
    let name = "two-level steady state";
    Check::from_result(
        name,
        (|| {
            let (o3, a) = (40.0, 20.0);
            let p = VSystemParams::new(0.0, o3, a)?;
            let rho = steady_state_in(&p, true, &[1, 3])?;
            let expected = o3 * o3 / (a * a + 2.0 * o3 * o3);
            let err = (rho.el(3, 3).re - expected).abs();
            Ok(Check::new(
                name,
                err < 1e-12,
                format!("rho33 = {:.12}, expected {expected:.12}", rho.el(3, 3).re),
            ))
        })(),
    )
}

fn unraveling(opts: &VerifyOptions) -> Check {
    let name = "bloch oracle";
    Check::from_result(
        name,
        (|| {
            let p = VSystemParams::new(1.0, 40.0, 20.0)?;
            let pulsed = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(5))?;
            let cont = PulseSchedule::continuous(5.0)?;
            let mut ok = true;
            let mut details = Vec::new();
            for (label, sched) in [("pulsed", pulsed), ("continuous", cont)] {
                let r = unraveling_check(&p, &sched, opts.trajectories, opts.seed, 50)?;
                ok &= r.within_bound();
                details.push(format!("{label}: {:.4} <= {:.4}", r.max_deviation, r.bound));
            }
            Ok(Check::new(name, ok, details.join("; ")))
        })(),
    )
}

/// Runs every check with the closed-form `(p, q)` under test.
pub fn run_battery_with(opts: &VerifyOptions, pq_fn: &PqFn) -> Vec<Check> {
    vec![
        enumeration(opts),
        survival(opts),
        norm_invariants(opts),
        fluorescence_steady_state(),
        unraveling(opts),
        pq_consistency(pq_fn),
    ]
}

pub fn run_battery(opts: &VerifyOptions) -> Vec<Check> {
    run_battery_with(opts, &closed_form_pq)
}
