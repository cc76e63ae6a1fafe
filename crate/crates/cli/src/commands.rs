use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use zeno_core::analytics::{continuous_limit_periods, mean_periods, pq, pq_corrected, PeriodTheory, TransitionProbs};
use zeno_core::ideal::{
    ideal_period_stats, mean_period_exact, run_ideal_sequence, write_outcomes_csv, IdealPeriodStats, Outcome,
};
use zeno_core::jump::{
    epsilons, read_record, run_batch, validity_report, write_record, EmissionRecord, PulseSchedule, ValidityReport,
};
use zeno_core::periods::{
    classify_pulses, default_gap_threshold, extract_periods, report, write_samples_csv, PeriodReport, PeriodSource,
    Periods,
};
use zeno_core::quantum::StateVector;
use zeno_core::verify::{run_battery, Check, VerifyOptions};

use crate::config::RunConfig;
use crate::VerifyFailed;

const TIMELINE_COLUMNS: usize = 100;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>> {
    match &cfg.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            write_json(dir, "config.json", cfg)?;
            Ok(Some(dir.clone()))
        }
        None => Ok(None),
    }
}

/// One character per pulse or measurement, `|` for light.
fn timeline(flags: impl Iterator<Item = bool>) -> String {
    flags
        .take(TIMELINE_COLUMNS)
        .map(|light| if light { '|' } else { '.' })
        .collect()
}

/// Start of the photon stream in bins of width `bin`; a bin is light when
/// it holds at least one photon.
fn continuous_timeline(jump_times: &[f64], total: f64, bin: f64) -> String {
    let n = ((total / bin).ceil() as usize).min(TIMELINE_COLUMNS);
    let mut cols = vec![false; n];
    for t in jump_times {
        match cols.get_mut((t / bin) as usize) {
            Some(c) => *c = true,
            None => break,
        }
    }
    timeline(cols.into_iter())
}

#[derive(Serialize)]
struct IdealReport {
    t_pi: f64,
    dt: f64,
    measurements: usize,
    theory: f64,
    stats: IdealPeriodStats,
}

pub fn cmd_ideal(cfg: &RunConfig) -> Result<()> {
    let (dt, n) = cfg.ideal()?;
    let omega2 = cfg.params.omega2;
    println!("T_pi = {:.6}  dt = {dt:.6} (T_pi/{:.3})  measurements = {n}", cfg.t_pi(), cfg.t_pi() / dt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seq = run_ideal_sequence(&StateVector::ground(), omega2, dt, n, &mut rng)?;
    println!("timeline: {}", timeline(seq.outcomes.iter().map(|o| *o == Outcome::A)));
    let stats = ideal_period_stats(&seq)?;
    let theory = mean_period_exact(omega2, dt)?;
    println!("theory    T1 = T2 = {theory:.4}");
    println!(
        "empirical T1 = {:.4} +- {:.4} ({} runs)   T2 = {:.4} +- {:.4} ({} runs)",
        stats.mean_a, stats.std_err_a, stats.count_a, stats.mean_perp, stats.std_err_perp, stats.count_perp
    );
    if let Some(dir) = out_dir(cfg)? {
        let mut w = create(&dir, "outcomes.csv")?;
        write_outcomes_csv(&seq, &mut w)?;
        w.flush()?;
        write_json(
            &dir,
            "ideal_report.json",
            &IdealReport {
                t_pi: cfg.t_pi(),
                dt,
                measurements: n,
                theory,
                stats,
            },
        )?;
    }
    Ok(())
}

/// Continuous drive has no gaps, so `skip_gap` hides the gap conditions.
fn print_validity(v: &ValidityReport, skip_gap: bool) {
    println!(
        "small parameters: eps_p = {:.4e}  eps_R = {:.4e}  eps_A = {:.4e}",
        v.eps_p, v.eps_r, v.eps_a
    );
    for c in v.checks.iter().filter(|c| !(skip_gap && c.name.starts_with("gap_"))) {
        println!(
            "  {:<15} ratio {:>10.3}  {}",
            c.name,
            c.ratio,
            if c.satisfied { "ok" } else { "NOT SATISFIED" }
        );
    }
    for w in v.warnings.iter().filter(|w| !(skip_gap && (w.contains("gap") || w.contains("pulse spacing")))) {
        println!("warning: {w}");
    }
}

fn pool(parts: Vec<Periods>) -> Periods {
    let mut all = Periods {
        samples: Vec::new(),
        censored_head: 0.0,
        censored_tail: 0.0,
        total_duration: 0.0,
    };
    for p in parts {
        all.samples.extend(p.samples);
        all.censored_head += p.censored_head;
        all.censored_tail += p.censored_tail;
        all.total_duration += p.total_duration;
    }
    all
}

fn print_report(r: &PeriodReport) {
    for (label, k) in [("light", &r.light), ("dark", &r.dark)] {
        println!(
            "{label:<5} mean {:>10.4} +- {:<8.4} theory {:>10.4}  z = {:+.2}  rel = {:+.4}  ({} periods)",
            k.mean, k.std_err, k.theory, k.z_score, k.relative_delta, k.count
        );
    }
}

fn write_records(dir: &Path, records: &[EmissionRecord]) -> Result<()> {
    for rec in records {
        let stem = format!("record-{:04}", rec.stream);
        let mut csv = create(dir, &format!("{stem}.csv"))?;
        let mut meta = create(dir, &format!("{stem}.json"))?;
        write_record(rec, &mut csv, &mut meta)?;
        csv.flush()?;
        meta.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a> {
    t_pi: f64,
    trajectories: usize,
    jumps: usize,
    validity: &'a ValidityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    probabilities: Option<TransitionProbs>,
    periods: &'a PeriodReport,
}

fn finish(
    cfg: &RunConfig,
    records: &[EmissionRecord],
    periods: &Periods,
    validity: &ValidityReport,
    probs: Option<TransitionProbs>,
    rep: &PeriodReport,
) -> Result<()> {
    print_report(rep);
    if let Some(dir) = out_dir(cfg)? {
        write_records(&dir, records)?;
        let mut w = create(&dir, "periods.csv")?;
        write_samples_csv(&periods.samples, &mut w)?;
        w.flush()?;
        write_json(
            &dir,
            "report.json",
            &RunReport {
                t_pi: cfg.t_pi(),
                trajectories: records.len(),
                jumps: records.iter().map(|r| r.len()).sum(),
                validity,
                probabilities: probs,
                periods: rep,
            },
        )?;
    }
    Ok(())
}

pub fn cmd_pulsed(cfg: &RunConfig) -> Result<()> {
    let params = cfg.params()?;
    let sched = cfg.pulsed()?;
    let n = cfg.trajectories()?;
    println!(
        "T_pi = {:.6}  pulse = {}  gap = {}  pulses = {}  trajectories = {n}",
        cfg.t_pi(),
        sched.pulse_duration,
        sched.gap,
        sched.n_pulses()
    );
    let validity = validity_report(&params, &sched);
    print_validity(&validity, false);

    let records = run_batch(&params, &sched, cfg.seed, n)?;
    let mut parts = Vec::with_capacity(n);
    for (k, rec) in records.iter().enumerate() {
        let flags = classify_pulses(rec, &sched)?;
        if k == 0 {
            println!("timeline: {}", timeline(flags.iter().copied()));
        }
        parts.push(extract_periods(&PeriodSource::Pulsed {
            flags: &flags,
            cycle: sched.cycle(),
        })?);
    }
    let periods = pool(parts);
    let probs = pq_corrected(&params, sched.gap, sched.pulse_duration)?;
    let theory = mean_periods(&probs, sched.gap, sched.pulse_duration)?;
    println!("transition probabilities (corrected): p = {:.6}  q = {:.6}", probs.p, probs.q);
    let rep = report(&periods, &theory, None)?;
    finish(cfg, &records, &periods, &validity, Some(probs), &rep)
}

pub fn cmd_continuous(cfg: &RunConfig) -> Result<()> {
    let params = cfg.params()?;
    let sched = cfg.continuous()?;
    let n = cfg.trajectories()?;
    let threshold = cfg.gap_threshold()?.unwrap_or_else(|| default_gap_threshold(&params));
    let total = sched.total_duration();
    println!("T_pi = {:.6}  duration = {total}  trajectories = {n}  gap threshold = {threshold}", cfg.t_pi());
    let validity = validity_report(&params, &sched);
    print_validity(&validity, true);

    let records = run_batch(&params, &sched, cfg.seed, n)?;
    let mut parts = Vec::with_capacity(n);
    for (k, rec) in records.iter().enumerate() {
        if k == 0 {
            println!(
                "timeline ({threshold} per column): {}",
                continuous_timeline(&rec.jump_times, total, threshold)
            );
        }
        parts.push(extract_periods(&PeriodSource::Continuous {
            jump_times: &rec.jump_times,
            total_duration: total,
            gap_threshold: threshold,
        })?);
    }
    let periods = pool(parts);
    let theory = continuous_limit_periods(&params)?;
    let rep = report(&periods, &theory, Some(threshold))?;
    finish(cfg, &records, &periods, &validity, None, &rep)
}

#[derive(Serialize)]
struct TheoryReport {
    t_pi: f64,
    eps_p: f64,
    eps_r: f64,
    eps_a: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pulsed: Option<PulsedTheory>,
    continuous: Option<PeriodTheory>,
    validity: ValidityReport,
}

#[derive(Serialize)]
struct PulsedTheory {
    pulse_duration: f64,
    gap: f64,
    probabilities: TransitionProbs,
    corrected: TransitionProbs,
    periods: PeriodTheory,
}

pub fn cmd_theory(cfg: &RunConfig) -> Result<()> {
    let params = cfg.params()?;
    let (eps_p, eps_r, eps_a) = epsilons(&params);
    println!("T_pi = {:.6}", cfg.t_pi());
    let continuous_sched = cfg.schedule.gap == Some(0.0);
    let sched: PulseSchedule = if continuous_sched { cfg.continuous()? } else { cfg.pulsed()? };
    let validity = validity_report(&params, &sched);
    print_validity(&validity, continuous_sched);

    let pulsed = if continuous_sched {
        None
    } else {
        let (tau, gap) = (sched.pulse_duration, sched.gap);
        let plain = pq(&params, gap, tau)?;
        let corrected = pq_corrected(&params, gap, tau)?;
        println!("p = {:.6}  q = {:.6}   corrected: p = {:.6}  q = {:.6}", plain.p, plain.q, corrected.p, corrected.q);
        let periods = mean_periods(&corrected, gap, tau)?;
        println!("pulsed      T_L = {:.4}  T_D = {:.4}", periods.t_light, periods.t_dark);
        Some(PulsedTheory {
            pulse_duration: tau,
            gap,
            probabilities: plain,
            corrected,
            periods,
        })
    };
    let continuous = continuous_limit_periods(&params).ok();
    match &continuous {
        Some(c) => println!("continuous  T_L = {:.4}  T_D = {:.4}", c.t_light, c.t_dark),
        None => println!("continuous  periods diverge for these parameters"),
    }
    if let Some(dir) = out_dir(cfg)? {
        write_json(
            &dir,
            "theory.json",
            &TheoryReport {
                t_pi: cfg.t_pi(),
                eps_p,
                eps_r,
                eps_a,
                pulsed,
                continuous,
                validity,
            },
        )?;
    }
    Ok(())
}

pub fn cmd_verify_record(csv: &Path, meta: Option<&Path>) -> Result<()> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("json"));
    let csv_file = File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let meta_file = File::open(&meta_path).with_context(|| format!("opening {}", meta_path.display()))?;
    let rec = read_record(csv_file, meta_file).with_context(|| format!("reading record {}", csv.display()))?;
    println!(
        "record {}: {} jumps over {} time units, consistent with its schedule",
        csv.display(),
        rec.len(),
        rec.total_duration()
    );
    Ok(())
}

pub fn cmd_verify(cfg: &RunConfig, trajectories: Option<usize>) -> Result<()> {
    let mut opts = VerifyOptions {
        seed: cfg.seed,
        ..VerifyOptions::default()
    };
    if let Some(n) = trajectories {
        opts.trajectories = n.max(1);
    }
    let checks = run_battery(&opts);
    report_checks(&checks);
    if let Some(dir) = out_dir(cfg)? {
        write_json(&dir, "verify.json", &checks)?;
    }
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        for c in &failed {
            eprintln!("FAILED {}: {}", c.name, c.detail);
        }
        Err(VerifyFailed(failed.len()).into())
    }
}

fn report_checks(checks: &[Check]) {
    for c in checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}
