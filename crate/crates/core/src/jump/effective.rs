//! First-order effective states right at the end of a probe pulse, and the
//! no-emission probability of a pulse.

use nalgebra::Matrix3;

use super::epsilons;
use crate::quantum::{DensityMatrix, VSystemParams, C64};

/// Conditional state after a pulse without emission, to first order in the
/// small parameters: close to `|2><2|` with `-i eps_p` and `-eps_R`
/// admixtures of levels 1 and 3.
pub fn effective_rho_no_emission(params: &VSystemParams) -> DensityMatrix {
    let (eps_p, eps_r, _) = epsilons(params);
    let mut m = Matrix3::<C64>::zeros();
    m[(1, 1)] = C64::from(1.0);
    m[(0, 1)] = C64::new(0.0, -eps_p);
    m[(1, 0)] = C64::new(0.0, eps_p);
    m[(1, 2)] = C64::from(-eps_r);
    m[(2, 1)] = C64::from(-eps_r);
    DensityMatrix(m)
}

/// Conditional state after a pulse with at least one emission: the driven
/// 1-3 steady state plus first-order admixture of level 2.
pub fn effective_rho_emission(params: &VSystemParams, pulse_duration: f64) -> DensityMatrix {
    let (eps_p, eps_r, _) = epsilons(params);
    let VSystemParams { omega2, omega3, a3 } = *params;
    let a2 = a3 * a3;
    let o2 = omega3 * omega3;
    let leak = eps_p * a2 * omega2 * pulse_duration;
    let norm = a2 + 2.0 * o2 + leak;

    let mut m = Matrix3::<C64>::zeros();
    m[(0, 0)] = C64::from(a2 + o2);
    m[(1, 1)] = C64::from(leak);
    m[(2, 2)] = C64::from(o2);
    m[(0, 1)] = C64::new(0.0, eps_p * a2);
    m[(1, 0)] = C64::new(0.0, -eps_p * a2);
    m[(0, 2)] = C64::new(0.0, a3 * omega3);
    m[(2, 0)] = C64::new(0.0, -a3 * omega3);
    m[(1, 2)] = C64::from(eps_r * (a2 + o2));
    m[(2, 1)] = C64::from(eps_r * (a2 + o2));
    DensityMatrix(m / C64::from(norm))
}

/// First-order probability of no photon during a pulse of the given length,
/// clamped to `[0, 1]`.
pub fn p0_probability(rho: &DensityMatrix, params: &VSystemParams, pulse_duration: f64) -> f64 {
    let (eps_p, eps_r, _) = epsilons(params);
    let r22 = rho.el(2, 2).re;
    let p0 = r22 - eps_p * params.omega2 * pulse_duration * r22 + 2.0 * eps_p * rho.el(1, 2).im
        - 2.0 * eps_r * rho.el(2, 3).re;
    p0.clamp(0.0, 1.0)
}
