//! Segmentation of emission records into light and dark periods, and
//! comparison of the sampled means with theory.
//!
//! The first and last period of every record are censored (their boundaries
//! were not observed) and are reported separately from the samples.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analytics::PeriodTheory;
use crate::error::{invalid, Error, Result};
use crate::jump::{EmissionRecord, PulseSchedule};
use crate::quantum::VSystemParams;

pub const CENSORING_POLICY: &str = "first-and-last-dropped";

/// Minimum number of samples of each kind for [`report`].
pub const MIN_REPORT_SAMPLES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PeriodKind {
    Light,
    Dark,
}

impl PeriodKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PeriodKind::Light => "LIGHT",
            PeriodKind::Dark => "DARK",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodSample {
    pub kind: PeriodKind,
    pub duration: f64,
    /// Number of pulses in the period (pulsed mode only).
    pub pulse_count: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Periods {
    /// Complete periods, in time order; kinds strictly alternate.
    pub samples: Vec<PeriodSample>,
    pub censored_head: f64,
    pub censored_tail: f64,
    pub total_duration: f64,
}

impl Periods {
    pub fn durations(&self, kind: PeriodKind) -> Vec<f64> {
        self.samples
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| s.duration)
            .collect()
    }

    pub fn pulse_counts(&self, kind: PeriodKind) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.kind == kind)
            .filter_map(|s| s.pulse_count)
            .collect()
    }
}

pub enum PeriodSource<'a> {
    /// Per-pulse fluorescence flags; `cycle` is pulse duration plus gap.
    Pulsed { flags: &'a [bool], cycle: f64 },
    /// Photon stream under continuous drive; gaps longer than
    /// `gap_threshold` are dark periods.
    Continuous {
        jump_times: &'a [f64],
        total_duration: f64,
        gap_threshold: f64,
    },
}

/// Twenty mean photon spacings inside a burst, `20 (A3^2 + 2 O3^2) / (A3 O3^2)`.
pub fn default_gap_threshold(params: &VSystemParams) -> f64 {
    let o2 = params.omega3 * params.omega3;
    20.0 * (params.a3 * params.a3 + 2.0 * o2) / (params.a3 * o2)
}

/// Pulse `k` is light iff at least one jump is attributed to it.
pub fn classify_pulses(record: &EmissionRecord, schedule: &PulseSchedule) -> Result<Vec<bool>> {
    if schedule.is_continuous() {
        return Err(invalid("pulse classification needs a pulsed schedule"));
    }
    if record.schedule != *schedule {
        return Err(Error::RecordMismatch("record was produced with a different schedule".into()));
    }
    let n = schedule.n_pulses();
    let mut flags = vec![false; n];
    for (t, k) in record.jump_times.iter().zip(&record.pulse_index) {
        let k = k.ok_or_else(|| Error::RecordMismatch(format!("jump at {t} has no pulse index")))?;
        if k >= n {
            return Err(Error::RecordMismatch(format!("pulse index {k} beyond {n} pulses")));
        }
        if schedule.pulse_containing(*t) != Some(k) {
            return Err(Error::RecordMismatch(format!(
                "jump at {t} attributed to pulse {k} outside its cycle"
            )));
        }
        flags[k] = true;
    }
    Ok(flags)
}

struct Raw {
    kind: PeriodKind,
    start: f64,
    end: f64,
    pulses: Option<usize>,
}

pub fn extract_periods(source: &PeriodSource<'_>) -> Result<Periods> {
    let (raw, total) = match *source {
        PeriodSource::Pulsed { flags, cycle } => {
            if !(cycle > 0.0) {
                return Err(invalid(format!("cycle must be > 0, got {cycle}")));
            }
            (pulsed_runs(flags, cycle), flags.len() as f64 * cycle)
        }
        PeriodSource::Continuous {
            jump_times,
            total_duration,
            gap_threshold,
        } => {
            if !(gap_threshold > 0.0) {
                return Err(invalid(format!("gap threshold must be > 0, got {gap_threshold}")));
            }
            if jump_times.windows(2).any(|w| w[1] <= w[0])
                || jump_times.first().is_some_and(|t| *t < 0.0)
                || jump_times.last().is_some_and(|t| *t > total_duration)
            {
                return Err(invalid("jump times must be increasing and inside the record"));
            }
            (continuous_runs(jump_times, total_duration, gap_threshold), total_duration)
        }
    };
    if raw.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} period(s) observed, need at least 3 to keep one after censoring",
            raw.len()
        )));
    }
    let head = &raw[0];
    let tail = &raw[raw.len() - 1];
    let samples = raw[1..raw.len() - 1]
        .iter()
        .map(|r| PeriodSample {
            kind: r.kind,
            duration: r.end - r.start,
            pulse_count: r.pulses,
        })
        .collect();
    Ok(Periods {
        samples,
        censored_head: head.end - head.start,
        censored_tail: tail.end - tail.start,
        total_duration: total,
    })
}

fn pulsed_runs(flags: &[bool], cycle: f64) -> Vec<Raw> {
    let mut out = Vec::new();
    let mut start = 0usize;
    for k in 1..=flags.len() {
        if k == flags.len() || flags[k] != flags[start] {
            out.push(Raw {
                kind: if flags[start] { PeriodKind::Light } else { PeriodKind::Dark },
                start: start as f64 * cycle,
                end: k as f64 * cycle,
                pulses: Some(k - start),
            });
            start = k;
        }
    }
    out
}

fn continuous_runs(times: &[f64], total: f64, threshold: f64) -> Vec<Raw> {
    let dark = |start, end| Raw {
        kind: PeriodKind::Dark,
        start,
        end,
        pulses: None,
    };
    let light = |start, end| Raw {
        kind: PeriodKind::Light,
        start,
        end,
        pulses: None,
    };
    let Some((&first, _)) = times.split_first() else {
        return vec![dark(0.0, total)];
    };
    let mut out = Vec::new();
    let mut burst_start = if first > threshold {
        out.push(dark(0.0, first));
        first
    } else {
        0.0
    };
    for w in times.windows(2) {
        if w[1] - w[0] > threshold {
            out.push(light(burst_start, w[0]));
            out.push(dark(w[0], w[1]));
            burst_start = w[1];
        }
    }
    let last = *times.last().unwrap();
    if total - last > threshold {
        out.push(light(burst_start, last));
        out.push(dark(last, total));
    } else {
        out.push(light(burst_start, total));
    }
    out
}

/// Sample mean, standard error of the mean and count.
pub fn mean_and_std_err(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN, 1);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt(), n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricFit {
    /// Maximum-likelihood success probability, `1 / mean count`.
    pub p_hat: f64,
    pub std_err: f64,
    pub mean_count: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: Option<f64>,
}

/// Chi-square goodness of fit of counts `n >= 1` to `(1-p)^(n-1) p`.
///
/// Bins with expected count below 5 are merged into an upper tail.
/// `fitted_params` is subtracted from the degrees of freedom.
pub fn geometric_chi_square(counts: &[usize], p: f64, fitted_params: usize) -> (f64, usize, Option<f64>) {
    let total = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0usize; max + 2];
    for &c in counts {
        observed[c] += 1;
    }
    let prob = |n: usize| (1.0 - p).powi(n as i32 - 1) * p;
    let mut stat = 0.0;
    let mut bins = 0usize;
    let mut n = 1usize;
    let mut cum = 0.0;
    let mut cum_obs = 0usize;
    loop {
        let e = total * prob(n);
        let tail_e = total * (1.0 - cum - prob(n));
        if e < 5.0 || tail_e < 5.0 {
            break;
        }
        let o = observed.get(n).copied().unwrap_or(0) as f64;
        stat += (o - e).powi(2) / e;
        cum += prob(n);
        cum_obs += o as usize;
        bins += 1;
        n += 1;
    }
    let tail_e = total * (1.0 - cum);
    if tail_e > 0.0 {
        let o = (counts.len() - cum_obs) as f64;
        stat += (o - tail_e).powi(2) / tail_e;
        bins += 1;
    }
    let dof = bins.saturating_sub(1 + fitted_params);
    let p_value = if dof >= 1 {
        ChiSquared::new(dof as f64).ok().map(|d| 1.0 - d.cdf(stat))
    } else {
        None
    };
    (stat, dof, p_value)
}

pub fn geometric_fit(counts: &[usize]) -> Result<GeometricFit> {
    if counts.is_empty() {
        return Err(Error::InsufficientData("no pulse counts to fit".into()));
    }
    if counts.contains(&0) {
        return Err(invalid("pulse counts must be >= 1"));
    }
    let n = counts.len() as f64;
    let mean_count = counts.iter().sum::<usize>() as f64 / n;
    let p_hat = 1.0 / mean_count;
    let std_err = p_hat * ((1.0 - p_hat) / n).sqrt();
    let (chi_square, dof, p_value) = geometric_chi_square(counts, p_hat, 1);
    Ok(GeometricFit {
        p_hat,
        std_err,
        mean_count,
        chi_square,
        dof,
        p_value,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
    pub theory: f64,
    /// `(mean - theory) / std_err`.
    pub z_score: f64,
    /// `(mean - theory) / theory`.
    pub relative_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub light: KindSummary,
    pub dark: KindSummary,
    pub light_geometric: Option<GeometricFit>,
    pub dark_geometric: Option<GeometricFit>,
    pub theory: PeriodTheory,
    pub censoring: String,
    pub censored_head: f64,
    pub censored_tail: f64,
    pub total_duration: f64,
    pub gap_threshold: Option<f64>,
}

fn summarize(durations: &[f64], theory: f64) -> KindSummary {
    let (mean, std_err, count) = mean_and_std_err(durations);
    let delta = mean - theory;
    let z_score = if std_err > 0.0 {
        delta / std_err
    } else if delta == 0.0 {
        0.0
    } else {
        delta.signum() * f64::INFINITY
    };
    KindSummary {
        count,
        mean,
        std_err,
        theory,
        z_score,
        relative_delta: delta / theory,
    }
}

pub fn report(periods: &Periods, theory: &PeriodTheory, gap_threshold: Option<f64>) -> Result<PeriodReport> {
    let light = periods.durations(PeriodKind::Light);
    let dark = periods.durations(PeriodKind::Dark);
    if light.len() < MIN_REPORT_SAMPLES || dark.len() < MIN_REPORT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} light and {} dark periods, need {MIN_REPORT_SAMPLES} of each",
            light.len(),
            dark.len()
        )));
    }
    let fit = |kind| {
        let counts = periods.pulse_counts(kind);
        if counts.is_empty() {
            None
        } else {
            geometric_fit(&counts).ok()
        }
    };
    Ok(PeriodReport {
        light: summarize(&light, theory.t_light),
        dark: summarize(&dark, theory.t_dark),
        light_geometric: fit(PeriodKind::Light),
        dark_geometric: fit(PeriodKind::Dark),
        theory: *theory,
        censoring: CENSORING_POLICY.to_string(),
        censored_head: periods.censored_head,
        censored_tail: periods.censored_tail,
        total_duration: periods.total_duration,
        gap_threshold,
    })
}

#[derive(Serialize, Deserialize)]
struct SampleRow {
    kind: PeriodKind,
    duration: f64,
    pulse_count: Option<usize>,
}

/// CSV with header `kind,duration,pulse_count`.
pub fn write_samples_csv<W: Write>(samples: &[PeriodSample], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["kind", "duration", "pulse_count"])?;
    for s in samples {
        w.serialize(SampleRow {
            kind: s.kind,
            duration: s.duration,
            pulse_count: s.pulse_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<PeriodSample>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["kind", "duration", "pulse_count"] {
        return Err(Error::Parse(format!("unexpected period header {headers:?}")));
    }
    r.deserialize::<SampleRow>()
        .map(|row| {
            let row = row?;
            Ok(PeriodSample {
                kind: row.kind,
                duration: row.duration,
                pulse_count: row.pulse_count,
            })
        })
        .collect()
}
