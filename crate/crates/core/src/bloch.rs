//! Master-equation (optical Bloch) oracle for the probed V system.
//!
//! The Lindblad generator uses the Hermitian part of the conditional
//! Hamiltonian and the jump operator `sqrt(A3) |1><3|`, so its solution is
//! the ensemble average of the quantum-jump trajectories in [`crate::jump`].

use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jump::PulseSchedule;
use crate::quantum::{conditional_hamiltonian, DensityMatrix, Propagator, VSystemParams, C64};

pub const TRACE_TOL: f64 = 1e-10;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

const CSV_HEADER: [&str; 10] = [
    "t", "rho11", "rho22", "rho33", "re12", "re13", "re23", "im12", "im13", "im23",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MasterState {
    pub rho: DensityMatrix,
    pub t: f64,
}

impl MasterState {
    /// Trace, Hermiticity and positivity within the oracle tolerances.
    pub fn check(&self) -> Result<()> {
        let violation = |what: String| Error::InvariantViolation { t: self.t, what };
        if !self.rho.0.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(violation("non-finite entries".into()));
        }
        let tr = self.rho.trace();
        if (tr - C64::from(1.0)).norm() > TRACE_TOL {
            return Err(violation(format!("trace {tr}")));
        }
        let herm = self.rho.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(violation(format!("hermiticity error {herm:e}")));
        }
        let lo = self.rho.min_eigenvalue();
        if lo < -POSITIVITY_TOL {
            return Err(violation(format!("eigenvalue {lo:e}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub probe_on: bool,
}

/// Probe-on/probe-off segments of a schedule, in order.
pub fn schedule_segments(schedule: &PulseSchedule) -> Vec<Segment> {
    if schedule.is_continuous() {
        return vec![Segment {
            duration: schedule.total_duration(),
            probe_on: true,
        }];
    }
    (0..schedule.n_pulses())
        .flat_map(|_| {
            [
                Segment {
                    duration: schedule.pulse_duration,
                    probe_on: true,
                },
                Segment {
                    duration: schedule.gap,
                    probe_on: false,
                },
            ]
        })
        .collect()
}

/// `-i[H, rho] + A3 (L rho L^+ - {L^+ L, rho}/2)` with `L = |1><3|`.
pub fn lindblad_rhs(rho: &DensityMatrix, params: &VSystemParams, probe_on: bool) -> DensityMatrix {
    let h = conditional_hamiltonian(params, probe_on).hermitian_part().0;
    lindblad_rhs_with(rho, &h, params.a3)
}

fn lindblad_rhs_with(rho: &DensityMatrix, h: &Matrix3<C64>, a3: f64) -> DensityMatrix {
    let r = &rho.0;
    let mut d = (h * r - r * h) * C64::new(0.0, -1.0);
    let a = C64::from(a3);
    d[(0, 0)] += a * r[(2, 2)];
    for k in 0..3 {
        d[(2, k)] -= a * r[(2, k)] * 0.5;
        d[(k, 2)] -= a * r[(k, 2)] * 0.5;
    }
    DensityMatrix(d)
}

/// Default RK4 step `min(1/A3, 1/O3, 2 pi/O2) / 200`.
pub fn default_step(params: &VSystemParams) -> f64 {
    let inv = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
    let scale = inv(params.a3)
        .min(inv(params.omega3))
        .min(std::f64::consts::TAU * inv(params.omega2));
    scale / 200.0
}

struct Rk4 {
    h_on: Matrix3<C64>,
    h_off: Matrix3<C64>,
    a3: f64,
}

impl Rk4 {
    fn new(params: &VSystemParams) -> Self {
        Self {
            h_on: conditional_hamiltonian(params, true).hermitian_part().0,
            h_off: conditional_hamiltonian(params, false).hermitian_part().0,
            a3: params.a3,
        }
    }

    /// Advances by exactly `duration` in equal steps no longer than `h`.
    fn advance(&self, rho: DensityMatrix, probe_on: bool, duration: f64, h: f64) -> DensityMatrix {
        if duration <= 0.0 {
            return rho;
        }
        let ham = if probe_on { &self.h_on } else { &self.h_off };
        let f = |r: &DensityMatrix| lindblad_rhs_with(r, ham, self.a3).0;
        let n = (duration / h).ceil().max(1.0) as usize;
        let dt = C64::from(duration / n as f64);
        let half = dt * 0.5;
        let mut r = rho;
        for _ in 0..n {
            let k1 = f(&r);
            let k2 = f(&DensityMatrix(r.0 + k1 * half));
            let k3 = f(&DensityMatrix(r.0 + k2 * half));
            let k4 = f(&DensityMatrix(r.0 + k3 * dt));
            r = DensityMatrix(r.0 + (k1 + (k2 + k3) * C64::from(2.0) + k4) * (dt / 6.0));
        }
        r
    }
}

fn check_initial(rho0: &DensityMatrix) -> Result<()> {
    MasterState { rho: *rho0, t: 0.0 }.check().map_err(|e| match e {
        Error::InvariantViolation { what, .. } => invalid(format!("initial state: {what}")),
        e => e,
    })
}

/// Integrates from `t = 0` through `segments`, sampling at the sorted `grid`
/// times. Segment ends and grid times are hit exactly.
pub fn integrate(
    rho0: &DensityMatrix,
    params: &VSystemParams,
    segments: &[Segment],
    grid: &[f64],
) -> Result<Vec<MasterState>> {
    integrate_with_step(rho0, params, segments, grid, default_step(params))
}

pub fn integrate_with_step(
    rho0: &DensityMatrix,
    params: &VSystemParams,
    segments: &[Segment],
    grid: &[f64],
    step: f64,
) -> Result<Vec<MasterState>> {
    params.validate()?;
    check_initial(rho0)?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("step must be finite and > 0, got {step}")));
    }
    if segments.iter().any(|s| !(s.duration >= 0.0 && s.duration.is_finite())) {
        return Err(invalid("segment durations must be finite and >= 0"));
    }
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    if grid.windows(2).any(|w| w[1] < w[0])
        || grid.first().is_some_and(|g| *g < 0.0)
        || grid.last().is_some_and(|g| *g > total * (1.0 + 1e-12))
    {
        return Err(Error::GridMismatch(format!(
            "grid must be sorted and inside [0, {total}]"
        )));
    }

    let rk = Rk4::new(params);
    let mut out = Vec::with_capacity(grid.len());
    let mut rho = *rho0;
    let mut t = 0.0;
    let mut next = 0;
    let mut start = 0.0;
    for (i, seg) in segments.iter().enumerate() {
        let end = if i + 1 == segments.len() {
            total
        } else {
            start + seg.duration
        };
        while let Some(&g) = grid.get(next) {
            if g > end {
                break;
            }
            rho = rk.advance(rho, seg.probe_on, g - t, step);
            t = g;
            let state = MasterState { rho, t };
            state.check()?;
            out.push(state);
            next += 1;
        }
        rho = rk.advance(rho, seg.probe_on, end - t, step);
        t = end;
        start = end;
    }
    while next < grid.len() {
        // grid points within rounding of the end
        let state = MasterState { rho, t: grid[next] };
        state.check()?;
        out.push(state);
        next += 1;
    }
    Ok(out)
}

/// State after evolving `rho0` through `segments` with the default step.
pub fn evolve(rho0: &DensityMatrix, params: &VSystemParams, segments: &[Segment]) -> Result<DensityMatrix> {
    let total: f64 = segments.iter().map(|s| s.duration).sum();
    let states = integrate(rho0, params, segments, &[total])?;
    Ok(states[0].rho)
}

/// `n` evenly spaced times covering `[0, total]`, both ends included.
pub fn uniform_grid(total: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|k| total * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Steady state of the generator, from the null space of the 9x9 Liouvillian.
pub fn steady_state(params: &VSystemParams, probe_on: bool) -> Result<DensityMatrix> {
    steady_state_in(params, probe_on, &[1, 2, 3])
}

/// Steady state supported on `levels`, which must span an invariant block
/// of the generator (for example `[1, 3]` when `omega2 = 0`).
pub fn steady_state_in(params: &VSystemParams, probe_on: bool, levels: &[usize]) -> Result<DensityMatrix> {
    params.validate()?;
    if levels.is_empty() || levels.iter().any(|l| !(1..=3).contains(l)) {
        return Err(invalid(format!("levels must be in 1..=3, got {levels:?}")));
    }
    let idx: Vec<usize> = levels.iter().map(|l| l - 1).collect();
    let m = idx.len();
    let h = conditional_hamiltonian(params, probe_on).hermitian_part().0;
    let mut liou = DMatrix::<C64>::zeros(m * m, m * m);
    for col in 0..m * m {
        let mut e = Matrix3::<C64>::zeros();
        e[(idx[col % m], idx[col / m])] = C64::from(1.0);
        let d = lindblad_rhs_with(&DensityMatrix(e), &h, params.a3).0;
        let mut inside = 0.0;
        for row in 0..m * m {
            let z = d[(idx[row % m], idx[row / m])];
            inside += z.norm_sqr();
            liou[(row, col)] = z;
        }
        if (d.norm_squared() - inside).abs() > 1e-12 * d.norm_squared().max(1.0) {
            return Err(invalid(format!("levels {levels:?} do not span an invariant block")));
        }
    }
    let svd = liou.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NonFinite("Liouvillian SVD"))?;
    let mut order: Vec<usize> = (0..m * m).collect();
    order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
    let (k, smallest) = (order[0], svd.singular_values[order[0]]);
    if m > 1 && svd.singular_values[order[1]] < 1e3 * smallest.max(f64::EPSILON) {
        return Err(invalid("steady state is not unique for these parameters"));
    }
    let mut rho = Matrix3::<C64>::zeros();
    for row in 0..m * m {
        rho[(idx[row % m], idx[row / m])] = v_t[(k, row)].conj();
    }
    let rho = rho / rho.trace();
    Ok(DensityMatrix((rho + rho.adjoint()) * C64::from(0.5)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnravelingReport {
    pub trajectories: usize,
    pub grid_points: usize,
    pub max_deviation: f64,
    /// Time and level pair where the deviation peaks.
    pub at_time: f64,
    pub at_element: (usize, usize),
    /// Statistical bound `5 / sqrt(N)`.
    pub bound: f64,
}

impl UnravelingReport {
    pub fn within_bound(&self) -> bool {
        self.max_deviation <= self.bound
    }
}

/// Elementwise comparison of a trajectory-ensemble average, sampled on
/// `grid`, with a master-equation solution sampled on the same grid.
pub fn compare_unraveling(
    ensemble: &[DensityMatrix],
    trajectories: usize,
    grid: &[f64],
    master: &[MasterState],
) -> Result<UnravelingReport> {
    if trajectories == 0 {
        return Err(invalid("ensemble of zero trajectories"));
    }
    if ensemble.len() != grid.len() || master.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} ensemble points, {} master points, {} grid times",
            ensemble.len(),
            master.len(),
            grid.len()
        )));
    }
    let mut report = UnravelingReport {
        trajectories,
        grid_points: grid.len(),
        max_deviation: 0.0,
        at_time: 0.0,
        at_element: (1, 1),
        bound: 5.0 / (trajectories as f64).sqrt(),
    };
    for ((avg, m), &t) in ensemble.iter().zip(master).zip(grid) {
        if (m.t - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Error::GridMismatch(format!("master sample at {} vs grid {t}", m.t)));
        }
        for i in 0..3 {
            for j in 0..3 {
                let d = (avg.0[(i, j)] - m.rho.0[(i, j)]).norm();
                if d > report.max_deviation {
                    report.max_deviation = d;
                    report.at_time = t;
                    report.at_element = (i + 1, j + 1);
                }
            }
        }
    }
    Ok(report)
}

/// Runs `n` trajectories of `schedule` from `|1>` and the master equation on
/// a uniform grid of `grid_points` times, and compares them.
pub fn unraveling_check(
    params: &VSystemParams,
    schedule: &PulseSchedule,
    n: usize,
    seed: u64,
    grid_points: usize,
) -> Result<UnravelingReport> {
    schedule.validate()?;
    let grid = uniform_grid(schedule.total_duration(), grid_points);
    let ensemble = crate::jump::ensemble_average(params, schedule, seed, n, &grid)?;
    let rho0 = DensityMatrix::pure(&crate::quantum::StateVector::ground());
    let master = integrate(&rho0, params, &schedule_segments(schedule), &grid)?;
    compare_unraveling(&ensemble, n, &grid, &master)
}

/// Writes `t` and the nine real components of each state.
pub fn write_trajectory_csv<W: Write>(states: &[MasterState], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for s in states {
        let c = s.rho.components();
        let mut row = Vec::with_capacity(10);
        row.push(s.t);
        row.extend_from_slice(&c);
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Vec<MasterState>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = r.records();
    match rows.next() {
        Some(h) if h.as_ref().is_ok_and(|h| h.iter().eq(CSV_HEADER)) => {}
        _ => return Err(Error::Parse("missing or unexpected trajectory header".into())),
    }
    let mut out = Vec::new();
    for (line, row) in rows.enumerate() {
        let row = row.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        if row.len() != 10 {
            return Err(Error::Parse(format!("row {}: expected 10 fields", line + 2)));
        }
        let mut v = [0.0; 10];
        for (x, field) in v.iter_mut().zip(row.iter()) {
            *x = field
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        }
        let mut c = [0.0; 9];
        c.copy_from_slice(&v[1..]);
        out.push(MasterState {
            rho: DensityMatrix::from_components(&c),
            t: v[0],
        });
    }
    Ok(out)
}

/// Stationary transition probabilities of the light/dark pulse chain,
/// computed without expansions.
///
/// The conditional states after a light or a dark pulse are iterated to
/// their fixed points: the dark branch is `K rho K^+` normalized, with `K`
/// the no-jump propagator of one pulse, and the light branch is the full
/// pulse map minus that term. `p` and `q` are then the no-emission
/// probabilities of the next pulse after a gap.
pub fn exact_pq(params: &VSystemParams, gap: f64, pulse_duration: f64) -> Result<(f64, f64)> {
    params.validate()?;
    if !(gap >= 0.0 && gap.is_finite() && pulse_duration > 0.0 && pulse_duration.is_finite()) {
        return Err(invalid("need gap >= 0 and pulse duration > 0"));
    }
    let k = Propagator::new(&conditional_hamiltonian(params, true))?
        .matrix(pulse_duration)
        .0;
    let pulse = [Segment {
        duration: pulse_duration,
        probe_on: true,
    }];
    let gap_seg = [Segment {
        duration: gap,
        probe_on: false,
    }];
    let no_emission = |rho: &DensityMatrix| DensityMatrix(k * rho.0 * k.adjoint());
    let after_gap = |rho: &DensityMatrix| -> Result<DensityMatrix> {
        if gap > 0.0 {
            evolve(rho, params, &gap_seg)
        } else {
            Ok(*rho)
        }
    };
    let renorm = |m: DensityMatrix| -> Result<DensityMatrix> {
        let tr = m.trace().re;
        if !(tr > 1e-300) {
            return Err(Error::DivergentPeriod("branch has zero probability".into()));
        }
        let m = m.0 / C64::from(tr);
        Ok(DensityMatrix((m + m.adjoint()) * C64::from(0.5)))
    };

    let mut light = DensityMatrix::pure(&crate::quantum::StateVector::ground());
    let mut dark = DensityMatrix::pure(&crate::quantum::StateVector::level(2));
    for _ in 0..6 {
        let before = after_gap(&light)?;
        let full = evolve(&before, params, &pulse)?;
        light = renorm(full - no_emission(&before))?;
        dark = renorm(no_emission(&after_gap(&dark)?))?;
    }
    let p = no_emission(&after_gap(&light)?).trace().re;
    let q = no_emission(&after_gap(&dark)?).trace().re;
    Ok((p, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jump::{epsilons, RunLength};
    use crate::quantum::{u_two_level, StateVector};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn random_hermitian(v: &[f64]) -> DensityMatrix {
        let mut c = [0.0; 9];
        c.copy_from_slice(&v[..9]);
        DensityMatrix::from_components(&c)
    }

    /// Positive, unit-trace state from nine unconstrained numbers.
    fn random_state(v: &[f64]) -> DensityMatrix {
        let mut a = Matrix3::<C64>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = C64::new(v[3 * i + j], v[(3 * i + j + 4) % 9] * 0.5);
            }
        }
        let m = a * a.adjoint() + Matrix3::identity() * C64::from(1e-3);
        DensityMatrix(m / m.trace())
    }

    #[test]
    fn pure_decay_rates() {
        let p = VSystemParams::new(0.0, 0.0, 7.0).unwrap();
        let d = lindblad_rhs(&StateVector::level(3).projector(), &p, true);
        assert_abs_diff_eq!(d.el(3, 3).re, -7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.el(1, 1).re, 7.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.el(2, 2).norm(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn rhs_is_traceless_and_hermitian(
            v in prop::collection::vec(-1.0f64..1.0, 9),
            o2 in 0.0f64..5.0, o3 in 0.0f64..50.0, a in 0.1f64..50.0, on in any::<bool>(),
        ) {
            let p = VSystemParams::new(o2, o3, a).unwrap();
            let d = lindblad_rhs(&random_hermitian(&v), &p, on);
            prop_assert!(d.trace().norm() < 1e-12);
            prop_assert!(d.hermiticity_error() < 1e-12);
        }

        #[test]
        fn integration_keeps_invariants(
            v in prop::collection::vec(-1.0f64..1.0, 9),
            o2 in 0.1f64..3.0, o3 in 1.0f64..30.0, a in 1.0f64..30.0, dur in 0.01f64..1.0,
        ) {
            let p = VSystemParams::new(o2, o3, a).unwrap();
            let segs = [
                Segment { duration: dur, probe_on: true },
                Segment { duration: dur, probe_on: false },
            ];
            let grid = uniform_grid(2.0 * dur, 7);
            let states = integrate(&random_state(&v), &p, &segs, &grid).unwrap();
            prop_assert_eq!(states.len(), 7);
            for s in &states {
                prop_assert!(s.check().is_ok());
                prop_assert!(s.rho.min_eigenvalue() >= -POSITIVITY_TOL);
            }
        }
    }

    #[test]
    fn coherent_rotation_without_probe() {
        let p = VSystemParams::new(1.3, 0.0, 5.0).unwrap();
        let t = 2.1;
        let segs = [Segment {
            duration: t,
            probe_on: false,
        }];
        let rho = evolve(&StateVector::ground().projector(), &p, &segs).unwrap();
        let psi = u_two_level(1.3, t).unwrap().apply(&StateVector::ground());
        assert!(rho.max_abs_diff(&psi.projector()) < 1e-11);
    }

    #[test]
    fn two_level_fluorescence_steady_state() {
        let (o3, a) = (40.0, 20.0);
        let p = VSystemParams::new(0.0, o3, a).unwrap();
        let expected = o3 * o3 / (a * a + 2.0 * o3 * o3);

        assert!(steady_state(&p, true).is_err());
        let null = steady_state_in(&p, true, &[1, 3]).unwrap();
        assert_abs_diff_eq!(null.el(3, 3).re, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(null.el(2, 2).re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(null.el(1, 3).im, a * o3 / (a * a + 2.0 * o3 * o3), epsilon = 1e-12);
        assert!(lindblad_rhs(&null, &p, true).0.norm() < 1e-10);

        let long = evolve(
            &StateVector::ground().projector(),
            &p,
            &[Segment {
                duration: 3.0,
                probe_on: true,
            }],
        )
        .unwrap();
        assert_abs_diff_eq!(long.el(3, 3).re, expected, epsilon = 1e-10);
        assert!(long.max_abs_diff(&null) < 1e-10);
    }

    #[test]
    fn step_halving_converges() {
        let p = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(3)).unwrap();
        let segs = schedule_segments(&sched);
        let grid = uniform_grid(sched.total_duration(), 25);
        let rho0 = StateVector::ground().projector();
        let h = default_step(&p);
        assert_abs_diff_eq!(h, 1.0 / 8000.0, epsilon = 1e-18);
        let coarse = integrate_with_step(&rho0, &p, &segs, &grid, h).unwrap();
        let fine = integrate_with_step(&rho0, &p, &segs, &grid, h / 2.0).unwrap();
        let worst = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| a.rho.max_abs_diff(&b.rho))
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst:e}");

        // fourth order: the error of a 16x coarser step shrinks ~16x per halving
        let c1 = integrate_with_step(&rho0, &p, &segs, &grid, 16.0 * h).unwrap();
        let c2 = integrate_with_step(&rho0, &p, &segs, &grid, 8.0 * h).unwrap();
        let err = |s: &[MasterState]| {
            s.iter()
                .zip(&fine)
                .map(|(a, b)| a.rho.max_abs_diff(&b.rho))
                .fold(0.0, f64::max)
        };
        let ratio = err(&c1) / err(&c2);
        assert!((10.0..24.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn grid_and_segment_edges() {
        let p = VSystemParams::new(1.0, 10.0, 10.0).unwrap();
        let segs = [
            Segment {
                duration: 0.3,
                probe_on: true,
            },
            Segment {
                duration: 0.7,
                probe_on: false,
            },
        ];
        let rho0 = StateVector::ground().projector();
        let states = integrate(&rho0, &p, &segs, &[0.0, 0.3, 0.3, 1.0]).unwrap();
        assert_eq!(states[0].rho, rho0);
        assert_eq!(states[1].rho, states[2].rho);
        assert_eq!(states[3].t, 1.0);
        assert!(matches!(
            integrate(&rho0, &p, &segs, &[0.5, 0.2]),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            integrate(&rho0, &p, &segs, &[1.5]),
            Err(Error::GridMismatch(_))
        ));
        let bad = DensityMatrix(rho0.0 * C64::from(2.0));
        assert!(matches!(integrate(&bad, &p, &segs, &[0.5]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invariant_violation_is_reported() {
        let mut s = MasterState {
            rho: StateVector::ground().projector(),
            t: 2.5,
        };
        s.rho.0[(1, 1)] = C64::from(-0.01);
        s.rho.0[(0, 0)] = C64::from(1.01);
        match s.check() {
            Err(Error::InvariantViolation { t, what }) => {
                assert_eq!(t, 2.5);
                assert!(what.contains("eigenvalue"), "{what}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_trajectory_is_not_the_ensemble() {
        let p = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(3)).unwrap();
        let r = unraveling_check(&p, &sched, 1, 3, 20).unwrap();
        assert_eq!(r.bound, 5.0);
        assert!(r.max_deviation > 0.05 && r.max_deviation <= 1.0 + 1e-12);
    }

    #[test]
    fn deviation_scales_as_inverse_root_n() {
        let p = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let sched = PulseSchedule::new(1.0, 1.0, RunLength::Pulses(5)).unwrap();
        let ns = [100usize, 1000, 10000];
        let devs: Vec<f64> = ns
            .iter()
            .map(|&n| unraveling_check(&p, &sched, n, 11, 50).unwrap())
            .inspect(|r| assert!(r.within_bound(), "{r:?}"))
            .map(|r| r.max_deviation)
            .collect();
        let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = devs.iter().map(|d| d.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}, deviations {devs:?}");
    }

    #[test]
    fn compare_rejects_mismatched_grids() {
        let rho = StateVector::ground().projector();
        let master = vec![MasterState { rho, t: 0.0 }, MasterState { rho, t: 1.0 }];
        assert!(matches!(
            compare_unraveling(&[rho], 10, &[0.0, 1.0], &master),
            Err(Error::GridMismatch(_))
        ));
        assert!(matches!(
            compare_unraveling(&[rho, rho], 10, &[0.0, 2.0], &master),
            Err(Error::GridMismatch(_))
        ));
        let ok = compare_unraveling(&[rho, rho], 100, &[0.0, 1.0], &master).unwrap();
        assert_eq!(ok.max_deviation, 0.0);
        assert_abs_diff_eq!(ok.bound, 0.5);
    }

    #[test]
    fn csv_round_trip() {
        let p = VSystemParams::new(1.0, 40.0, 20.0).unwrap();
        let segs = [Segment {
            duration: 0.5,
            probe_on: true,
        }];
        let states = integrate(&StateVector::ground().projector(), &p, &segs, &uniform_grid(0.5, 11)).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&states, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,rho11,rho22,rho33,re12,re13,re23,im12,im13,im23\n"));
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), states.len());
        for (a, b) in back.iter().zip(&states) {
            assert_eq!(a.t, b.t);
            assert_eq!(a.rho.components(), b.rho.components());
        }
        assert!(matches!(read_trajectory_csv("x,y\n".as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn exact_pq_matches_expansion() {
        for (o2, o3, a, gap, tau) in [
            (1.0, 40.0, 20.0, 1.0, 1.0),
            (1.0, 200.0, 100.0, 0.5, 0.5),
            (1.0, 200.0, 100.0, 2.0, 1.0),
        ] {
            let p = VSystemParams::new(o2, o3, a).unwrap();
            let eps = crate::jump::eps_max(&p);
            let (pe, qe) = exact_pq(&p, gap, tau).unwrap();
            let th = crate::analytics::pq_corrected(&p, gap, tau).unwrap();
            assert!((pe - th.p).abs() < 5.0 * eps * eps, "p {pe} vs {}", th.p);
            assert!((qe - th.q).abs() < 5.0 * eps * eps, "q {qe} vs {}", th.q);
        }
    }

    #[test]
    fn emission_state_relaxes_to_photon_emission_block() {
        // After the probe is switched off and |3> has decayed, the state
        // rotated back by the rf field is the 2x2 emission-branch matrix,
        // including its -i eps_A O3^2 / (2 D) coherence.
        let p = VSystemParams::new(1.0, 200.0, 100.0).unwrap();
        let tau = 0.5;
        let (eps_p, _, eps_a) = epsilons(&p);
        let (a, o) = (100.0f64, 200.0f64);
        let d = a * a + 2.0 * o * o;
        let rho = crate::jump::effective_rho_emission(&p, tau);
        let t = 10.0 / a;
        let after = evolve(
            &rho,
            &p,
            &[Segment {
                duration: t,
                probe_on: false,
            }],
        )
        .unwrap();
        let u = u_two_level(1.0, t).unwrap().0;
        let back = DensityMatrix(u.adjoint() * after.0 * u);
        let eps = eps_p.max(eps_a);
        assert!(back.el(3, 3).re.abs() < 1e-3);
        assert_abs_diff_eq!(back.el(2, 2).re, eps_p * tau * a * a / d, epsilon = 5.0 * eps * eps);
        let coherence = eps_p * a * a / d - 0.5 * eps_a * o * o / d;
        assert_abs_diff_eq!(back.el(1, 2).im, coherence, epsilon = 5.0 * eps * eps);
        assert_abs_diff_eq!(back.el(1, 2).re, 0.0, epsilon = 5.0 * eps * eps);
    }
}
