//! Acceptance suite. Criteria run one after another so that the wall-clock
//! budgets are measured without competing work; each prints one line.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zeno_core::analytics::{continuous_limit_periods, mean_periods, pq_corrected};
use zeno_core::bloch::unraveling_check;
use zeno_core::ideal::{ideal_period_stats, mean_period_exact, run_ideal_sequence, survival_probability, Outcome};
use zeno_core::jump::{
    effective_rho_emission, effective_rho_no_emission, eps_max, p0_probability, pulse_ensemble, run_continuous,
    run_trajectory, validity_report, PulseSchedule, RunLength,
};
use zeno_core::periods::{
    classify_pulses, default_gap_threshold, extract_periods, mean_and_std_err, report, PeriodKind, PeriodSource,
};
use zeno_core::quantum::{DensityMatrix, StateVector, VSystemParams, C64};
use zeno_core::verify::enumeration_check;
use zeno_core::Result;

const SEED: u64 = 0x5eed_2026;

struct Verdict {
    passed: bool,
    detail: String,
}

fn pass_if(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn acceptance_params() -> VSystemParams {
    VSystemParams::new(1.0, 40.0, 20.0).unwrap()
}

fn small_eps_params() -> VSystemParams {
    VSystemParams::new(1.0, 200.0, 100.0).unwrap()
}

fn c1_ideal_periods() -> Result<Verdict> {
    let t_pi = PI;
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, div) in [2.0, 4.0, 6.0].into_iter().enumerate() {
        let dt = t_pi / div;
        let mut rng = ChaCha8Rng::seed_from_u64(SEED + k as u64);
        let seq = run_ideal_sequence(&StateVector::ground(), 1.0, dt, 1_000_000, &mut rng)?;
        let s = ideal_period_stats(&seq)?;
        let theory = mean_period_exact(1.0, dt)?;
        let z_a = (s.mean_a - theory) / s.std_err_a;
        let z_p = (s.mean_perp - theory) / s.std_err_perp;
        let z_ap = (s.mean_a - s.mean_perp) / s.std_err_a.hypot(s.std_err_perp);
        ok &= z_a.abs() <= 3.0 && z_p.abs() <= 3.0 && z_ap.abs() <= 3.0;
        parts.push(format!(
            "T_pi/{div}: theory {theory:.4}, T1 {:.4} (z {z_a:+.2}), T2 {:.4} (z {z_p:+.2}), T1-T2 z {z_ap:+.2}",
            s.mean_a, s.mean_perp
        ));
    }
    Ok(pass_if(ok, parts.join("; ")))
}

fn c2_zeno_freezing() -> Result<Verdict> {
    let mut values = Vec::new();
    for n in [4usize, 16, 64, 256] {
        values.push(survival_probability(1.0, PI / n as f64, n)?);
    }
    let monotone = values.windows(2).all(|w| w[1] > w[0]);
    let p64 = values[2];
    let runs = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut survived = 0usize;
    for _ in 0..runs {
        let seq = run_ideal_sequence(&StateVector::ground(), 1.0, PI / 64.0, 64, &mut rng)?;
        survived += seq.outcomes.iter().all(|o| *o == Outcome::A) as usize;
    }
    let f = survived as f64 / runs as f64;
    let z = (f - p64) / (p64 * (1.0 - p64) / runs as f64).sqrt();
    let ok = monotone && (p64 - 0.96218).abs() < 5e-6 && z.abs() <= 3.0;
    Ok(pass_if(
        ok,
        format!(
            "P(n) for n=4,16,64,256: {:?}; P(64) = {p64:.6}; Monte Carlo {f:.5} (z {z:+.2})",
            values.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>()
        ),
    ))
}

fn c3_enumeration() -> Result<Verdict> {
    let psi0 = StateVector::new(
        C64::from(0.3f64.cos()),
        C64::from_polar(0.3f64.sin(), 0.5),
        C64::from(0.0),
    );
    let mut ok = true;
    let mut worst_sum: f64 = 0.0;
    let mut min_p: f64 = 1.0;
    let mut max_z: f64 = 0.0;
    for n in 1..=8 {
        let e = enumeration_check(&psi0, 1.0, 0.7, n, 1_000_000, SEED + n as u64)?;
        ok &= e.passed();
        worst_sum = worst_sum.max((e.probability_sum - 1.0).abs());
        min_p = min_p.min(e.p_value);
        max_z = max_z.max(e.max_abs_z);
    }
    Ok(pass_if(
        ok,
        format!(
            "n=1..8: max |sum - 1| = {worst_sum:.1e}; smallest chi-square p-value {min_p:.4} (> 0.0027); largest per-string |z| {max_z:.2}"
        ),
    ))
}

fn pulsed_periods(params: &VSystemParams, gap: f64, tau: f64, n_pulses: usize, stream: u64) -> Result<zeno_core::periods::Periods> {
    let sched = PulseSchedule::new(tau, gap, RunLength::Pulses(n_pulses))?;
    let rec = run_trajectory(params, &sched, SEED, stream)?;
    let flags = classify_pulses(&rec, &sched)?;
    extract_periods(&PeriodSource::Pulsed {
        flags: &flags,
        cycle: sched.cycle(),
    })
}

fn c4_pulsed() -> Result<Verdict> {
    let p = acceptance_params();
    let (gap, tau) = (1.0, 1.0);
    let sched = PulseSchedule::new(tau, gap, RunLength::Pulses(20_000))?;
    let validity = validity_report(&p, &sched);
    let min_ratio = validity.checks.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
    let theory = mean_periods(&pq_corrected(&p, gap, tau)?, gap, tau)?;
    let periods = pulsed_periods(&p, gap, tau, 20_000, 0)?;
    let r = report(&periods, &theory, None)?;
    let eps = eps_max(&p);
    let within = |k: &zeno_core::periods::KindSummary| {
        (k.mean - k.theory).abs() <= (3.0 * k.std_err).max(3.0 * eps * k.theory)
    };
    let ok = min_ratio >= 20.0
        && r.light.count >= 500
        && r.dark.count >= 500
        && within(&r.light)
        && within(&r.dark)
        && (theory.t_light - 8.70).abs() < 0.01;
    Ok(pass_if(
        ok,
        format!(
            "min validity ratio {min_ratio:.1}; T_L {:.3} +- {:.3} vs {:.3} ({} periods, rel {:+.3}); T_D {:.3} +- {:.3} vs {:.3} ({} periods, rel {:+.3}); tolerance max(3 SE, {:.2} rel)",
            r.light.mean,
            r.light.std_err,
            r.light.theory,
            r.light.count,
            r.light.relative_delta,
            r.dark.mean,
            r.dark.std_err,
            r.dark.theory,
            r.dark.count,
            r.dark.relative_delta,
            3.0 * eps
        ),
    ))
}

/// `(mean, std_err, count)`.
type Estimate = (f64, f64, usize);

/// Pooled continuous-drive periods from independent trajectories.
fn continuous_means(params: &VSystemParams, segment: f64, trajectories: u64) -> Result<(Estimate, Estimate)> {
    let threshold = default_gap_threshold(params);
    let mut light = Vec::new();
    let mut dark = Vec::new();
    for stream in 0..trajectories {
        let rec = run_continuous(params, segment, SEED, stream)?;
        let periods = extract_periods(&PeriodSource::Continuous {
            jump_times: &rec.jump_times,
            total_duration: segment,
            gap_threshold: threshold,
        })?;
        light.extend(periods.durations(PeriodKind::Light));
        dark.extend(periods.durations(PeriodKind::Dark));
    }
    Ok((mean_and_std_err(&light), mean_and_std_err(&dark)))
}

fn c5_continuous() -> Result<Verdict> {
    let p = acceptance_params();
    let theory = continuous_limit_periods(&p)?;
    let (segment, n) = (1e5, 10);
    let ((ml, sl, nl), (md, sd, nd)) = continuous_means(&p, segment, n)?;
    let ok = (ml / theory.t_light - 1.0).abs() <= 0.10
        && (md / theory.t_dark - 1.0).abs() <= 0.10
        && nl.min(nd) >= 500
        && (theory.t_light - 720.0).abs() < 1e-9
        && (theory.t_dark - 80.0).abs() < 1e-9;
    Ok(pass_if(
        ok,
        format!(
            "{:.0e} time units; T_L {ml:.1} +- {sl:.1} ({nl} periods) vs 720; T_D {md:.2} +- {sd:.2} ({nd} periods) vs 80; tolerance 10%",
            segment * n as f64
        ),
    ))
}

fn c6_crossover() -> Result<Verdict> {
    let p = acceptance_params();
    let tau = 1.0;
    let eps = eps_max(&p);
    let mut t_light = Vec::new();
    let mut t_dark = Vec::new();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, gap) in [2.0, 1.0, 0.5, 0.1, 0.02].into_iter().enumerate() {
        let probs = pq_corrected(&p, gap, tau)?;
        let theory = mean_periods(&probs, gap, tau)?;
        let cycle = tau + gap;
        let n_pulses = ((400.0 * (theory.t_light + theory.t_dark)) / cycle).ceil() as usize;
        let periods = pulsed_periods(&p, gap, tau, n_pulses, 100 + k as u64)?;
        let r = report(&periods, &theory, None)?;
        let (lg, dg) = (r.light_geometric.clone().unwrap(), r.dark_geometric.clone().unwrap());
        // geometric p-hats estimate p and 1 - q
        let track_p = (lg.p_hat - probs.p).abs() <= 3.0 * lg.std_err + 5.0 * eps * eps;
        let track_q = (dg.p_hat - (1.0 - probs.q)).abs() <= 3.0 * dg.std_err + 5.0 * eps * eps;
        ok &= track_p && track_q;
        t_light.push(r.light.mean);
        t_dark.push(r.dark.mean);
        parts.push(format!(
            "dt={gap}: T_L {:.1} (theory {:.1}), T_D {:.2} (theory {:.2})",
            r.light.mean, theory.t_light, r.dark.mean, theory.t_dark
        ));
    }
    let ((ml, _, _), (md, _, _)) = continuous_means(&p, 1e5, 4)?;
    parts.push(format!("dt=0: T_L {ml:.1}, T_D {md:.2}"));
    t_light.push(ml);
    t_dark.push(md);

    let monotone = t_light.windows(2).all(|w| w[1] > w[0]) && t_dark.windows(2).all(|w| w[1] > w[0]);
    let last = t_light.len() - 2;
    let plateau = |v: &[f64]| v[last] >= 0.5 * v[last + 1] && v[last] <= 1.1 * v[last + 1];
    let ideal_zeno = (tau + 0.02) / (0.5 * p.omega2 * 0.02f64).sin().powi(2);
    let no_divergence = t_light[last] < 0.1 * ideal_zeno;
    ok &= monotone && plateau(&t_light) && plateau(&t_dark) && no_divergence;
    parts.push(format!(
        "monotone {monotone}, plateau {}, ideal-Zeno T at dt=0.02 would be {ideal_zeno:.0}",
        plateau(&t_light) && plateau(&t_dark)
    ));
    Ok(pass_if(ok, parts.join("; ")))
}

fn c7_unraveling() -> Result<Verdict> {
    let p = acceptance_params();
    let pulsed = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(10))?;
    let cont = PulseSchedule::continuous(10.0)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, sched) in [("pulsed", pulsed), ("continuous", cont)] {
        let r = unraveling_check(&p, &sched, 10_000, SEED, 100)?;
        ok &= r.max_deviation <= 0.05 && r.grid_points == 100;
        parts.push(format!(
            "{label}: max deviation {:.4} at t={:.2} rho{}{}",
            r.max_deviation, r.at_time, r.at_element.0, r.at_element.1
        ));
    }
    Ok(pass_if(ok, format!("{} (tolerance 0.05, N = 10^4)", parts.join("; "))))
}

fn c8_effective_states() -> Result<Verdict> {
    let p = small_eps_params();
    let tau = 0.5;
    let eps = eps_max(&p);
    let n = 100_000;
    let from_two = pulse_ensemble(&p, &StateVector::level(2).projector(), tau, n, SEED)?;
    let from_one = pulse_ensemble(&p, &StateVector::ground().projector(), tau, n, SEED + 1)?;
    let d_dark = from_two.rho_no_emission.max_abs_diff(&effective_rho_no_emission(&p));
    let d_light = from_one.rho_emission.max_abs_diff(&effective_rho_emission(&p, tau));
    let ok = eps <= 0.01 && d_dark <= 5.0 * eps * eps && d_light <= 5.0 * eps;
    Ok(pass_if(
        ok,
        format!(
            "eps {eps}; no-emission branch max deviation {d_dark:.2e} (tolerance {:.0e}); emission branch {d_light:.2e} (tolerance {:.0e})",
            5.0 * eps * eps,
            5.0 * eps
        ),
    ))
}

fn c9_p0() -> Result<Verdict> {
    let p = small_eps_params();
    let tau = 0.5;
    let eps = eps_max(&p);
    let s = 0.5f64.sqrt();
    let mixed = DensityMatrix(
        StateVector::ground().projector().0 * C64::from(0.3) + StateVector::level(2).projector().0 * C64::from(0.7),
    );
    let states = [
        ("|1>", StateVector::ground().projector()),
        ("|2>", StateVector::level(2).projector()),
        ("(|1> + i|2>)/sqrt2", StateVector::new(C64::from(s), C64::new(0.0, s), C64::from(0.0)).projector()),
        ("0.3|1><1| + 0.7|2><2|", mixed),
        (
            "|2> - 0.1|3>",
            StateVector::new(C64::from(0.0), C64::from(1.0), C64::from(-0.1)).normalized().projector(),
        ),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, (label, rho)) in states.iter().enumerate() {
        let e = pulse_ensemble(&p, rho, tau, 100_000, SEED + 10 + k as u64)?;
        let formula = p0_probability(rho, &p, tau);
        let sigma = e.p0_std_err().max((formula * (1.0 - formula) / e.n as f64).sqrt());
        let tol = 3.0 * sigma + 5.0 * eps * eps;
        let d = (e.p0() - formula).abs();
        ok &= d <= tol;
        parts.push(format!("{label}: {:.5} vs {formula:.5} (|d| {d:.1e} <= {tol:.1e})", e.p0()));
    }
    Ok(pass_if(ok, parts.join("; ")))
}

type Criterion = fn() -> Result<Verdict>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion, u64); 9] = [
        ("1 ideal mean periods", c1_ideal_periods, 10),
        ("2 zeno freezing", c2_zeno_freezing, 10),
        ("3 enumeration oracle", c3_enumeration, 30),
        ("4 pulsed light/dark durations", c4_pulsed, 120),
        ("5 continuous-limit shelving", c5_continuous, 300),
        ("6 pulsed-continuous crossover", c6_crossover, 300),
        ("7 unraveling equivalence", c7_unraveling, 180),
        ("8 effective post-pulse states", c8_effective_states, 120),
        ("9 no-emission probability", c9_p0, 60),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let (passed, detail) = match result {
            Ok(o) => (o.passed && in_time, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "[{}] criterion {name}: {detail} [{:.1}s, limit {limit}s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
