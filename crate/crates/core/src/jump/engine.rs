use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{EmissionRecord, PulseSchedule};
use crate::error::{invalid, Error, Result};
use crate::quantum::{conditional_hamiltonian, DensityMatrix, Evolution, Propagator, StateVector, C64};
use crate::quantum::VSystemParams;

/// Trajectories per rayon task in batch runs.
const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PulseOutcome {
    pub fluoresced: bool,
    pub photon_count: usize,
    pub post_state: StateVector,
}

/// Cached no-jump propagators for one parameter set.
#[derive(Clone, Debug)]
pub struct JumpEngine {
    params: VSystemParams,
    probe: Propagator,
    dark: Propagator,
    tol: f64,
    first_step: f64,
}

/// Accumulates `|psi><psi|` of the normalized state at fixed absolute times.
struct GridSampler<'a> {
    times: &'a [f64],
    next: usize,
    sums: &'a mut [Matrix3<C64>],
}

impl GridSampler<'_> {
    /// Record every pending grid time `< until` (or `<= until` when
    /// `inclusive`); `ev` holds the state at absolute time `origin`.
    fn fill(&mut self, ev: &Evolution<'_>, origin: f64, until: f64, inclusive: bool) {
        while let Some(&g) = self.times.get(self.next) {
            if g > until || (!inclusive && g == until) {
                break;
            }
            let s = ev.at((g - origin).max(0.0)).normalized();
            self.sums[self.next] += s.0 * s.0.adjoint();
            self.next += 1;
        }
    }
}

impl JumpEngine {
    pub fn new(params: &VSystemParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: *params,
            probe: Propagator::new(&conditional_hamiltonian(params, true))?,
            dark: Propagator::new(&conditional_hamiltonian(params, false))?,
            tol: 1e-10 / params.a3,
            first_step: 1.0 / params.a3,
        })
    }

    pub fn params(&self) -> &VSystemParams {
        &self.params
    }

    pub fn propagator(&self, probe_on: bool) -> &Propagator {
        if probe_on {
            &self.probe
        } else {
            &self.dark
        }
    }

    /// Smallest `t` in `(0, limit]` with `norm^2(t) <= r`, to within `tol`.
    /// The caller guarantees `norm^2(limit) <= r`.
    fn jump_time(&self, ev: &Evolution<'_>, r: f64, limit: f64) -> Result<f64> {
        let mut lo = 0.0;
        let mut hi = limit;
        let mut probe = self.first_step.min(limit);
        while probe < limit {
            if ev.norm_sqr_at(probe) <= r {
                hi = probe;
                break;
            }
            lo = probe;
            probe *= 2.0;
        }
        let mut iterations = 0;
        while hi - lo > self.tol {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if ev.norm_sqr_at(mid) <= r {
                hi = mid;
            } else {
                lo = mid;
            }
            iterations += 1;
            if iterations > 400 {
                return Err(Error::RootFinding(format!(
                    "no convergence in [{lo}, {hi}] for level {r}"
                )));
            }
        }
        if !hi.is_finite() || hi <= 0.0 {
            return Err(Error::RootFinding(format!("invalid jump time {hi}")));
        }
        Ok(hi)
    }

    /// Evolves `state` for `duration` with the jump procedure, appending
    /// jump times (offset by `origin`) to `jumps`.
    fn evolve<R: Rng + ?Sized>(
        &self,
        state: &StateVector,
        probe_on: bool,
        origin: f64,
        duration: f64,
        rng: &mut R,
        jumps: &mut Vec<f64>,
        mut sampler: Option<&mut GridSampler<'_>>,
    ) -> Result<StateVector> {
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(invalid(format!("duration must be finite and >= 0, got {duration}")));
        }
        let n0 = state.norm_sqr();
        if !(n0 > 0.0) || !state.is_finite() {
            return Err(invalid("state must be nonzero and finite"));
        }
        let prop = self.propagator(probe_on);
        let mut psi = state.normalized();
        let mut t = 0.0;
        loop {
            let ev = prop.expand(&psi);
            let remaining = duration - t;
            let r: f64 = rng.random();
            if ev.norm_sqr_at(remaining) > r {
                if let Some(s) = sampler.as_deref_mut() {
                    s.fill(&ev, origin + t, origin + duration, false);
                }
                return Ok(ev.at(remaining).normalized());
            }
            let tau = self.jump_time(&ev, r, remaining)?;
            if let Some(s) = sampler.as_deref_mut() {
                s.fill(&ev, origin + t, origin + t + tau, false);
            }
            t += tau;
            jumps.push(origin + t);
            psi = StateVector::ground();
        }
    }

    pub fn pulse<R: Rng + ?Sized>(
        &self,
        state: &StateVector,
        pulse_duration: f64,
        rng: &mut R,
    ) -> Result<PulseOutcome> {
        let mut jumps = Vec::new();
        let post_state = self.evolve(state, true, 0.0, pulse_duration, rng, &mut jumps, None)?;
        Ok(PulseOutcome {
            fluoresced: !jumps.is_empty(),
            photon_count: jumps.len(),
            post_state,
        })
    }

    pub fn gap<R: Rng + ?Sized>(
        &self,
        state: &StateVector,
        gap_duration: f64,
        rng: &mut R,
    ) -> Result<(usize, StateVector)> {
        let mut jumps = Vec::new();
        let post = self.evolve(state, false, 0.0, gap_duration, rng, &mut jumps, None)?;
        Ok((jumps.len(), post))
    }

    /// Full schedule from `|1>`. Returns `(time, pulse)` per jump and the
    /// final state.
    fn drive<R: Rng + ?Sized>(
        &self,
        schedule: &PulseSchedule,
        rng: &mut R,
        mut sampler: Option<&mut GridSampler<'_>>,
    ) -> Result<(Vec<f64>, Vec<Option<usize>>, StateVector)> {
        schedule.validate()?;
        let mut times = Vec::new();
        let mut index = Vec::new();
        let mut psi = StateVector::ground();
        if schedule.is_continuous() {
            let total = schedule.total_duration();
            psi = self.evolve(&psi, true, 0.0, total, rng, &mut times, sampler.as_deref_mut())?;
            index.resize(times.len(), None);
        } else {
            for k in 0..schedule.n_pulses() {
                let start = schedule.pulse_start(k);
                let gap_start = start + schedule.pulse_duration;
                let gap = schedule.pulse_start(k + 1) - gap_start;
                psi = self.evolve(
                    &psi,
                    true,
                    start,
                    schedule.pulse_duration,
                    rng,
                    &mut times,
                    sampler.as_deref_mut(),
                )?;
                psi = self.evolve(&psi, false, gap_start, gap, rng, &mut times, sampler.as_deref_mut())?;
                index.resize(times.len(), Some(k));
            }
        }
        if let Some(s) = sampler {
            let end = schedule.total_duration();
            let ev = self.probe.expand(&psi);
            s.fill(&ev, end, end + 1e-9 * end.max(1.0), true);
        }
        Ok((times, index, psi))
    }

    pub fn trajectory<R: Rng + ?Sized>(
        &self,
        schedule: &PulseSchedule,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
        let (t, i, _) = self.drive(schedule, rng, None)?;
        Ok((t, i))
    }
}

/// RNG for trajectory `stream` of a run seeded with `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One probe pulse applied to `state`.
pub fn simulate_pulse<R: Rng + ?Sized>(
    state: &StateVector,
    params: &VSystemParams,
    pulse_duration: f64,
    rng: &mut R,
) -> Result<PulseOutcome> {
    JumpEngine::new(params)?.pulse(state, pulse_duration, rng)
}

/// Free evolution between pulses: rf on, probe off, decay active.
pub fn simulate_gap<R: Rng + ?Sized>(
    state: &StateVector,
    params: &VSystemParams,
    gap_duration: f64,
    rng: &mut R,
) -> Result<(usize, StateVector)> {
    JumpEngine::new(params)?.gap(state, gap_duration, rng)
}

/// Pulsed trajectory from `|1>`; jumps in a gap belong to the preceding pulse.
pub fn run_trajectory(
    params: &VSystemParams,
    schedule: &PulseSchedule,
    seed: u64,
    stream: u64,
) -> Result<EmissionRecord> {
    if schedule.is_continuous() {
        return Err(invalid("run_trajectory needs a gap > 0; use run_continuous"));
    }
    let engine = JumpEngine::new(params)?;
    let (jump_times, pulse_index) = engine.trajectory(schedule, &mut stream_rng(seed, stream))?;
    Ok(EmissionRecord {
        jump_times,
        pulse_index,
        params: *params,
        schedule: schedule.clone(),
        seed,
        stream,
    })
}

/// Both fields on throughout, from `|1>`.
pub fn run_continuous(
    params: &VSystemParams,
    total_duration: f64,
    seed: u64,
    stream: u64,
) -> Result<EmissionRecord> {
    let schedule = PulseSchedule::continuous(total_duration)?;
    let engine = JumpEngine::new(params)?;
    let (jump_times, pulse_index) = engine.trajectory(&schedule, &mut stream_rng(seed, stream))?;
    Ok(EmissionRecord {
        jump_times,
        pulse_index,
        params: *params,
        schedule,
        seed,
        stream,
    })
}

/// `n` independent trajectories on streams `0..n`, run in parallel. The
/// output order and content depend only on `seed`.
pub fn run_batch(
    params: &VSystemParams,
    schedule: &PulseSchedule,
    seed: u64,
    n: usize,
) -> Result<Vec<EmissionRecord>> {
    let engine = JumpEngine::new(params)?;
    schedule.validate()?;
    (0..n as u64)
        .into_par_iter()
        .map(|stream| {
            let (jump_times, pulse_index) =
                engine.trajectory(schedule, &mut stream_rng(seed, stream))?;
            Ok(EmissionRecord {
                jump_times,
                pulse_index,
                params: *params,
                schedule: schedule.clone(),
                seed,
                stream,
            })
        })
        .collect()
}

/// Mean of `|psi(t)><psi(t)|` over `n` trajectories at each grid time.
pub fn ensemble_average(
    params: &VSystemParams,
    schedule: &PulseSchedule,
    seed: u64,
    n: usize,
    grid: &[f64],
) -> Result<Vec<DensityMatrix>> {
    if n == 0 {
        return Err(invalid("need at least one trajectory"));
    }
    if grid.windows(2).any(|w| w[1] < w[0])
        || grid.first().is_some_and(|g| *g < 0.0)
        || grid.last().is_some_and(|g| *g > schedule.total_duration())
    {
        return Err(Error::GridMismatch("grid must be sorted and inside the run".into()));
    }
    let engine = JumpEngine::new(params)?;
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|a| (a, (a + CHUNK).min(n)))
        .collect();
    let partial: Vec<Vec<Matrix3<C64>>> = chunks
        .into_par_iter()
        .map(|(a, b)| {
            let mut sums = vec![Matrix3::zeros(); grid.len()];
            for stream in a..b {
                let mut sampler = GridSampler {
                    times: grid,
                    next: 0,
                    sums: &mut sums,
                };
                let mut rng = stream_rng(seed, stream as u64);
                engine.drive(schedule, &mut rng, Some(&mut sampler))?;
                if sampler.next != grid.len() {
                    return Err(Error::GridMismatch(format!(
                        "sampled {} of {} grid points",
                        sampler.next,
                        grid.len()
                    )));
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Matrix3::<C64>::zeros(); grid.len()];
    for part in partial {
        for (acc, m) in total.iter_mut().zip(part) {
            *acc += m;
        }
    }
    Ok(total
        .into_iter()
        .map(|m| DensityMatrix(m / C64::from(n as f64)))
        .collect())
}

/// Draws a pure state from the eigen-ensemble of `rho`.
pub fn sample_pure_state<R: Rng + ?Sized>(rho: &DensityMatrix, rng: &mut R) -> StateVector {
    let h = (rho.0 + rho.0.adjoint()) * C64::from(0.5);
    let eig = h.symmetric_eigen();
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = 2;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            pick = k;
            break;
        }
        u -= w;
    }
    StateVector(eig.eigenvectors.column(pick).into_owned())
}

/// Outcome statistics of many independent single pulses.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseEnsemble {
    pub n: usize,
    pub n_dark: usize,
    /// Mean post-pulse state over pulses without emission.
    pub rho_no_emission: DensityMatrix,
    /// Mean post-pulse state over pulses with at least one emission.
    pub rho_emission: DensityMatrix,
}

impl PulseEnsemble {
    pub fn p0(&self) -> f64 {
        self.n_dark as f64 / self.n as f64
    }

    /// Binomial standard error of [`PulseEnsemble::p0`].
    pub fn p0_std_err(&self) -> f64 {
        let p = self.p0();
        (p * (1.0 - p) / self.n as f64).sqrt()
    }
}

/// Runs `n` single pulses from states drawn from `rho0`, in parallel.
pub fn pulse_ensemble(
    params: &VSystemParams,
    rho0: &DensityMatrix,
    pulse_duration: f64,
    n: usize,
    seed: u64,
) -> Result<PulseEnsemble> {
    if n == 0 {
        return Err(invalid("need at least one pulse"));
    }
    let engine = JumpEngine::new(params)?;
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(1024)
        .map(|a| (a, (a + 1024).min(n)))
        .collect();
    let parts: Vec<(usize, Matrix3<C64>, Matrix3<C64>)> = chunks
        .into_par_iter()
        .map(|(a, b)| {
            let mut rng = stream_rng(seed, a as u64);
            let mut dark = 0;
            let mut sum_dark = Matrix3::zeros();
            let mut sum_light = Matrix3::zeros();
            for _ in a..b {
                let psi = sample_pure_state(rho0, &mut rng);
                let out = engine.pulse(&psi, pulse_duration, &mut rng)?;
                let proj = out.post_state.0 * out.post_state.0.adjoint();
                if out.fluoresced {
                    sum_light += proj;
                } else {
                    dark += 1;
                    sum_dark += proj;
                }
            }
            Ok((dark, sum_dark, sum_light))
        })
        .collect::<Result<_>>()?;
    let mut n_dark = 0;
    let mut sum_dark = Matrix3::<C64>::zeros();
    let mut sum_light = Matrix3::<C64>::zeros();
    for (d, sd, sl) in parts {
        n_dark += d;
        sum_dark += sd;
        sum_light += sl;
    }
    let avg = |m: Matrix3<C64>, k: usize| {
        if k == 0 {
            DensityMatrix::zeros()
        } else {
            DensityMatrix(m / C64::from(k as f64))
        }
    };
    Ok(PulseEnsemble {
        n,
        n_dark,
        rho_no_emission: avg(sum_dark, n_dark),
        rho_emission: avg(sum_light, n - n_dark),
    })
}
