//! Ideal projective measurements of a driven two-level system.
//!
//! Measurements are instantaneous and noiseless. The clock starts at `t0`
//! and the first measurement happens at `t0 + dt`.

use std::io::{Read, Write};

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::periods::{extract_periods, PeriodKind, PeriodSource};
use crate::quantum::{u_two_level, Operator, Propagator, StateVector, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    /// Found in the measured state.
    A,
    /// Found orthogonal to it.
    Perp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeSequence {
    pub outcomes: Vec<Outcome>,
    pub dt: f64,
}

impl OutcomeSequence {
    pub fn new(outcomes: Vec<Outcome>, dt: f64) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(invalid("outcome sequence must be nonempty"));
        }
        if !(dt > 0.0) {
            return Err(invalid(format!("measurement spacing must be > 0, got {dt}")));
        }
        Ok(Self { outcomes, dt })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// `A`/`Perp` as `a`/`p` characters.
    pub fn to_letters(&self) -> String {
        self.outcomes
            .iter()
            .map(|o| match o {
                Outcome::A => 'a',
                Outcome::Perp => 'p',
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealPeriodStats {
    pub mean_a: f64,
    pub mean_perp: f64,
    pub count_a: usize,
    pub count_perp: usize,
    pub std_err_a: f64,
    pub std_err_perp: f64,
}

/// Projective measurement of `|axis><axis|`.
pub fn measure_projective<R: Rng + ?Sized>(
    state: &StateVector,
    axis: &StateVector,
    rng: &mut R,
) -> (Outcome, StateVector) {
    let overlap = axis.inner(state);
    let prob = overlap.norm_sqr();
    if prob >= 1.0 - 1e-14 {
        return (Outcome::A, *axis);
    }
    if rng.random::<f64>() < prob {
        (Outcome::A, *axis)
    } else {
        let rest = StateVector(state.0 - axis.0 * overlap);
        (Outcome::Perp, rest.normalized())
    }
}

/// Alternate rf evolution over `dt` with a measurement of `|1>`, `n` times.
pub fn run_ideal_sequence<R: Rng + ?Sized>(
    psi0: &StateVector,
    omega2: f64,
    dt: f64,
    n: usize,
    rng: &mut R,
) -> Result<OutcomeSequence> {
    if n == 0 {
        return Err(invalid("number of measurements must be >= 1"));
    }
    if !(dt > 0.0) {
        return Err(invalid(format!("measurement spacing must be > 0, got {dt}")));
    }
    let u = u_two_level(omega2, dt)?;
    let axis = StateVector::ground();
    let mut psi = psi0.normalized();
    let mut outcomes = Vec::with_capacity(n);
    for _ in 0..n {
        let evolved = u.apply(&psi);
        let (o, collapsed) = measure_projective(&evolved, &axis, rng);
        outcomes.push(o);
        psi = collapsed;
    }
    OutcomeSequence::new(outcomes, dt)
}

fn projectors() -> (Operator, Operator) {
    let pa = Operator::transition(1, 1);
    let perp = Operator(Matrix3::identity() - pa.0);
    (pa, perp)
}

/// Exact probability of an outcome string from the projector/propagator chain.
pub fn sequence_probability(seq: &OutcomeSequence, psi0: &StateVector, omega2: f64) -> Result<f64> {
    let u = u_two_level(omega2, seq.dt)?;
    let (pa, perp) = projectors();
    let mut v = psi0.normalized();
    for o in &seq.outcomes {
        let p = match o {
            Outcome::A => &pa,
            Outcome::Perp => &perp,
        };
        v = p.apply(&u.apply(&v));
    }
    Ok(v.norm_sqr())
}

/// Probability of `n` consecutive `A` outcomes starting from `|1>`.
pub fn survival_probability(omega2: f64, dt: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    Ok((0.5 * omega2 * dt).cos().powi(2).powi(n as i32))
}

/// `dt / sin^2(omega2 dt / 2)`, the mean length of both kinds of period.
pub fn mean_period_exact(omega2: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(invalid(format!("measurement spacing must be > 0, got {dt}")));
    }
    let s2 = (0.5 * omega2 * dt).sin().powi(2);
    if s2 < 1e-15 {
        return Err(Error::DivergentPeriod(format!(
            "omega2*dt = {} is a multiple of 2*pi",
            omega2 * dt
        )));
    }
    Ok(dt / s2)
}

/// Leading-order mean lengths `(T_a, T_perp)` for a general Hermitian `h`.
///
/// `T_perp` uses the pseudo-inverse of `P H^2 P - (P H P)^2` on the range of
/// the complementary projector `P`, sandwiched with the state that starts a
/// `Perp` run, `P U(dt)|a> / norm`.
pub fn mean_period_general(h: &Operator, a: &StateVector, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(invalid(format!("measurement spacing must be > 0, got {dt}")));
    }
    if h.anti_hermitian_part().0.iter().any(|z| z.norm() > 1e-12) {
        return Err(invalid("Hamiltonian must be Hermitian"));
    }
    let a = a.normalized();
    let scale = h.0.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let ha = h.apply(&a);
    let mean = a.inner(&ha).re;
    let variance = ha.norm_sqr() - mean * mean;
    if variance <= 1e-12 * scale * scale {
        return Err(Error::DivergentPeriod(
            "measured state is an eigenvector of the Hamiltonian".into(),
        ));
    }
    let t_a = 1.0 / (dt * variance);

    let perp = Operator(Matrix3::identity() - a.projector().0);
    let u = Propagator::new(h)?.matrix(dt);
    let phi = perp.apply(&u.apply(&a));
    if phi.norm_sqr() < 1e-300 {
        return Err(Error::DivergentPeriod("no leakage out of the measured state".into()));
    }
    let phi = phi.normalized();

    let php = perp.0 * h.0 * perp.0;
    let m = perp.0 * h.0 * h.0 * perp.0 - php * php;
    let m = (m + m.adjoint()) * C64::from(0.5);
    let eig = m.symmetric_eigen();
    let tol = 1e-12 * scale * scale;
    let mut t_perp = 0.0;
    for k in 0..3 {
        let e = eig.eigenvectors.column(k);
        let w = e.dotc(&phi.0).norm_sqr();
        let mu = eig.eigenvalues[k];
        if mu > tol {
            t_perp += w / mu;
        } else if w > 1e-10 {
            return Err(Error::DivergentPeriod(
                "complementary state overlaps a frozen direction".into(),
            ));
        }
    }
    Ok((t_a, t_perp / dt))
}

/// Mean run lengths of an outcome sequence with the first and last runs
/// dropped as censored.
pub fn ideal_period_stats(seq: &OutcomeSequence) -> Result<IdealPeriodStats> {
    let flags: Vec<bool> = seq.outcomes.iter().map(|o| *o == Outcome::A).collect();
    let periods = extract_periods(&PeriodSource::Pulsed {
        flags: &flags,
        cycle: seq.dt,
    })?;
    let stats = |kind| {
        let d: Vec<f64> = periods
            .samples
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.duration)
            .collect();
        crate::periods::mean_and_std_err(&d)
    };
    let (mean_a, std_err_a, count_a) = stats(PeriodKind::Light);
    let (mean_perp, std_err_perp, count_perp) = stats(PeriodKind::Dark);
    if count_a == 0 || count_perp == 0 {
        return Err(Error::InsufficientData(
            "need at least one complete run of each outcome".into(),
        ));
    }
    Ok(IdealPeriodStats {
        mean_a,
        mean_perp,
        count_a,
        count_perp,
        std_err_a,
        std_err_perp,
    })
}

/// CSV with header `index,time,outcome`; `time` is `(index + 1) dt` and the
/// outcome is `A` or `perp`.
pub fn write_outcomes_csv<W: Write>(seq: &OutcomeSequence, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "time", "outcome"])?;
    for (k, o) in seq.outcomes.iter().enumerate() {
        let label = match o {
            Outcome::A => "A",
            Outcome::Perp => "perp",
        };
        w.write_record([k.to_string(), ((k + 1) as f64 * seq.dt).to_string(), label.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_outcomes_csv<R: Read>(input: R) -> Result<OutcomeSequence> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().collect::<Vec<_>>() != ["index", "time", "outcome"] {
        return Err(Error::Parse("unexpected outcome header".into()));
    }
    let mut outcomes = Vec::new();
    let mut dt = 0.0;
    for (k, row) in r.records().enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", k + 2)))?;
        let bad = |what: &str| Error::Parse(format!("row {}: {what}", k + 2));
        if row.len() != 3 {
            return Err(bad("expected 3 fields"));
        }
        if row[0].parse::<usize>().ok() != Some(k) {
            return Err(bad("index out of sequence"));
        }
        let t: f64 = row[1].parse().map_err(|_| bad("time is not a number"))?;
        if k == 0 {
            dt = t;
        } else if (t - (k + 1) as f64 * dt).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(bad("times are not evenly spaced"));
        }
        outcomes.push(match &row[2] {
            "A" => Outcome::A,
            "perp" => Outcome::Perp,
            other => return Err(bad(&format!("unknown outcome {other:?}"))),
        });
    }
    OutcomeSequence::new(outcomes, dt).map_err(|e| Error::Parse(e.to_string()))
}
