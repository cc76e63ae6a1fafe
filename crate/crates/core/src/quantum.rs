//! States, operators and propagators for the three-level V system.
//!
//! The basis is fixed as `(|1>, |2>, |3>)`: ground state, metastable level and
//! the fast-decaying probe level. Hamiltonians are written with `hbar = 1` in
//! the resonant rotating frame. The two-level rf problem embeds into this
//! space with the `|3>` amplitude left at zero.

use nalgebra::{Matrix3, Schur, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Pure state (possibly unnormalized) over `(|1>, |2>, |3>)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector(pub Vector3<C64>);

impl StateVector {
    pub fn new(amp1: C64, amp2: C64, amp3: C64) -> Self {
        Self(Vector3::new(amp1, amp2, amp3))
    }

    /// Basis state for level `1`, `2` or `3`.
    pub fn level(level: usize) -> Self {
        assert!((1..=3).contains(&level), "level label must be 1, 2 or 3");
        let mut v = Vector3::zeros();
        v[level - 1] = ONE;
        Self(v)
    }

    pub fn ground() -> Self {
        Self::level(1)
    }

    /// Amplitude of level `1`, `2` or `3`.
    pub fn amp(&self, level: usize) -> C64 {
        self.0[level - 1]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self(self.0 / C64::from(n))
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.0.dotc(&other.0)
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self(self.0 * factor)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// `|self><self|` without normalization.
    pub fn projector(&self) -> DensityMatrix {
        DensityMatrix(self.0 * self.0.adjoint())
    }
}

/// A 3x3 complex operator: Hamiltonian, propagator or projector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Operator(pub Matrix3<C64>);

impl Operator {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn zeros() -> Self {
        Self(Matrix3::zeros())
    }

    /// `|ket><bra|` between basis levels.
    pub fn transition(ket: usize, bra: usize) -> Self {
        let mut m = Matrix3::zeros();
        m[(ket - 1, bra - 1)] = ONE;
        Self(m)
    }

    pub fn apply(&self, state: &StateVector) -> StateVector {
        StateVector(self.0 * state.0)
    }

    pub fn compose(&self, other: &Operator) -> Operator {
        Operator(self.0 * other.0)
    }

    pub fn adjoint(&self) -> Operator {
        Operator(self.0.adjoint())
    }

    pub fn hermitian_part(&self) -> Operator {
        Operator((self.0 + self.0.adjoint()) * C64::from(0.5))
    }

    pub fn anti_hermitian_part(&self) -> Operator {
        Operator((self.0 - self.0.adjoint()) * C64::from(0.5))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// 3x3 density matrix. Indices passed to [`DensityMatrix::el`] are level labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityMatrix(pub Matrix3<C64>);

impl DensityMatrix {
    pub fn zeros() -> Self {
        Self(Matrix3::zeros())
    }

    pub fn pure(state: &StateVector) -> Self {
        state.normalized().projector()
    }

    /// Element `rho_{ij}` with `i, j` in `1..=3`.
    pub fn el(&self, i: usize, j: usize) -> C64 {
        self.0[(i - 1, j - 1)]
    }

    pub fn trace(&self) -> C64 {
        self.0.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.0 + self.0.adjoint()) * C64::from(0.5);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0 * C64::from(factor))
    }

    /// Populations followed by the real and imaginary parts of the
    /// coherences `rho_12, rho_13, rho_23`.
    pub fn components(&self) -> [f64; 9] {
        let r = |i, j| self.el(i, j);
        [
            r(1, 1).re,
            r(2, 2).re,
            r(3, 3).re,
            r(1, 2).re,
            r(1, 3).re,
            r(2, 3).re,
            r(1, 2).im,
            r(1, 3).im,
            r(2, 3).im,
        ]
    }

    /// Inverse of [`DensityMatrix::components`].
    pub fn from_components(c: &[f64; 9]) -> Self {
        let mut m = Matrix3::zeros();
        m[(0, 0)] = C64::from(c[0]);
        m[(1, 1)] = C64::from(c[1]);
        m[(2, 2)] = C64::from(c[2]);
        for (k, (i, j)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            let z = C64::new(c[3 + k], c[6 + k]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
        Self(m)
    }
}

impl std::ops::Add for DensityMatrix {
    type Output = DensityMatrix;
    fn add(self, rhs: DensityMatrix) -> DensityMatrix {
        DensityMatrix(self.0 + rhs.0)
    }
}

impl std::ops::Sub for DensityMatrix {
    type Output = DensityMatrix;
    fn sub(self, rhs: DensityMatrix) -> DensityMatrix {
        DensityMatrix(self.0 - rhs.0)
    }
}

/// Physical constants of the V system: rf Rabi frequency `omega2`, probe Rabi
/// frequency `omega3` and Einstein coefficient `a3` of level 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VSystemParams {
    pub omega2: f64,
    pub omega3: f64,
    pub a3: f64,
}

impl VSystemParams {
    /// Rabi frequencies may be zero (field switched off); the decay rate must
    /// be strictly positive.
    pub fn new(omega2: f64, omega3: f64, a3: f64) -> Result<Self> {
        let p = Self { omega2, omega3, a3 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("omega2", self.omega2), ("omega3", self.omega3)] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.a3.is_finite() || self.a3 <= 0.0 {
            return Err(invalid(format!("a3 must be finite and > 0, got {}", self.a3)));
        }
        Ok(())
    }

    /// Length of a pi pulse of the rf field.
    pub fn t_pi(&self) -> f64 {
        std::f64::consts::PI / self.omega2
    }
}

/// rf-only propagator `exp(-i H t)` for `H = (omega2/2)(|1><2| + |2><1|)`,
/// identity on `|3>`.
pub fn u_two_level(omega2: f64, duration: f64) -> Result<Operator> {
    if duration < 0.0 || !duration.is_finite() {
        return Err(invalid(format!("duration must be finite and >= 0, got {duration}")));
    }
    let half = 0.5 * omega2 * duration;
    let (s, c) = half.sin_cos();
    let mut m = Matrix3::zeros();
    m[(0, 0)] = C64::from(c);
    m[(1, 1)] = C64::from(c);
    m[(0, 1)] = C64::new(0.0, -s);
    m[(1, 0)] = C64::new(0.0, -s);
    m[(2, 2)] = ONE;
    Ok(Operator(m))
}

/// Two-level rf Hamiltonian embedded in the three-level space.
pub fn rf_hamiltonian(omega2: f64) -> Operator {
    let g = C64::from(0.5 * omega2);
    Operator((Operator::transition(1, 2).0 + Operator::transition(2, 1).0) * g)
}

/// No-jump generator
/// `H = (O2/2)(|1><2| + h.c.) + probe_on (O3/2)(|1><3| + h.c.) - (i/2) A3 |3><3|`.
pub fn conditional_hamiltonian(params: &VSystemParams, probe_on: bool) -> Operator {
    let mut m = rf_hamiltonian(params.omega2).0;
    if probe_on {
        let g = C64::from(0.5 * params.omega3);
        m[(0, 2)] = g;
        m[(2, 0)] = g;
    }
    m[(2, 2)] = C64::new(0.0, -0.5 * params.a3);
    Operator(m)
}

/// `exp(-i h_cond t) state`, unnormalized. The squared norm of the result is
/// the probability of no emission during `[0, t]`.
pub fn conditional_propagate(
    state: &StateVector,
    h_cond: &Operator,
    duration: f64,
) -> Result<StateVector> {
    if duration < 0.0 || !duration.is_finite() {
        return Err(invalid(format!("duration must be finite and >= 0, got {duration}")));
    }
    let prop = Propagator::new(h_cond)?;
    Ok(prop.propagate(state, duration))
}

#[derive(Clone, Debug)]
enum Spectral {
    /// `G = V diag(lambda) V^-1`.
    Diagonal {
        lambda: [C64; 3],
        v: Matrix3<C64>,
        v_inv: Matrix3<C64>,
    },
    /// Degenerate or ill-conditioned spectrum: scaling and squaring.
    Dense,
}

/// Precomputed `t -> exp(-i H t)` for a fixed (possibly non-Hermitian) `H`.
#[derive(Clone, Debug)]
pub struct Propagator {
    generator: Matrix3<C64>,
    spectral: Spectral,
}

impl Propagator {
    pub fn new(h: &Operator) -> Result<Self> {
        if !h.is_finite() {
            return Err(Error::NonFinite("Hamiltonian"));
        }
        let generator = h.0 * (-I);
        let spectral = diagonalize(&generator).unwrap_or(Spectral::Dense);
        Ok(Self { generator, spectral })
    }

    pub fn is_diagonalized(&self) -> bool {
        matches!(self.spectral, Spectral::Diagonal { .. })
    }

    pub fn matrix(&self, t: f64) -> Operator {
        match &self.spectral {
            Spectral::Diagonal { lambda, v, v_inv } => {
                let mut scaled = *v;
                for k in 0..3 {
                    let e = (lambda[k] * t).exp();
                    for i in 0..3 {
                        scaled[(i, k)] *= e;
                    }
                }
                Operator(scaled * v_inv)
            }
            Spectral::Dense => Operator(expm_dense(&(self.generator * C64::from(t)))),
        }
    }

    pub fn propagate(&self, state: &StateVector, t: f64) -> StateVector {
        self.expand(state).at(t)
    }

    /// Mode expansion of `state`, for repeated evaluation at many times.
    pub fn expand(&self, state: &StateVector) -> Evolution<'_> {
        match &self.spectral {
            Spectral::Diagonal { lambda, v, v_inv } => Evolution::Modes {
                lambda: *lambda,
                v: *v,
                coeffs: v_inv * state.0,
            },
            Spectral::Dense => Evolution::Dense {
                prop: self,
                state: *state,
            },
        }
    }
}

/// `t -> exp(-i H t) psi` for a fixed initial `psi`.
#[derive(Clone, Debug)]
pub enum Evolution<'a> {
    Modes {
        lambda: [C64; 3],
        v: Matrix3<C64>,
        coeffs: Vector3<C64>,
    },
    Dense {
        prop: &'a Propagator,
        state: StateVector,
    },
}

impl Evolution<'_> {
    pub fn at(&self, t: f64) -> StateVector {
        match self {
            Evolution::Modes { lambda, v, coeffs } => {
                let w = Vector3::new(
                    coeffs[0] * (lambda[0] * t).exp(),
                    coeffs[1] * (lambda[1] * t).exp(),
                    coeffs[2] * (lambda[2] * t).exp(),
                );
                StateVector(v * w)
            }
            Evolution::Dense { prop, state } => prop.matrix(t).apply(state),
        }
    }

    pub fn norm_sqr_at(&self, t: f64) -> f64 {
        self.at(t).norm_sqr()
    }
}

fn diagonalize(g: &Matrix3<C64>) -> Option<Spectral> {
    let scale = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let (q, t) = Schur::try_new(*g, f64::EPSILON, 1000)?.unpack();
    let lambda = [t[(0, 0)], t[(1, 1)], t[(2, 2)]];
    for a in 0..3 {
        for b in (a + 1)..3 {
            if (lambda[a] - lambda[b]).norm() < 1e-9 * scale {
                return None;
            }
        }
    }
    // Eigenvectors of the triangular factor by back substitution.
    let mut x = Matrix3::<C64>::zeros();
    for k in 0..3 {
        x[(k, k)] = ONE;
        for i in (0..k).rev() {
            let mut acc = ZERO;
            for j in (i + 1)..=k {
                acc += t[(i, j)] * x[(j, k)];
            }
            x[(i, k)] = -acc / (t[(i, i)] - lambda[k]);
        }
    }
    let mut v = q * x;
    for k in 0..3 {
        let n = v.column(k).norm();
        for i in 0..3 {
            v[(i, k)] /= C64::from(n);
        }
    }
    let v_inv = v.try_inverse()?;
    let cond = v.norm() * v_inv.norm();
    if !cond.is_finite() || cond > 1e6 {
        return None;
    }
    let mut rebuilt = v;
    for k in 0..3 {
        for i in 0..3 {
            rebuilt[(i, k)] *= lambda[k];
        }
    }
    let err = (rebuilt * v_inv - g).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if err > 1e-11 * scale.max(1.0) {
        return None;
    }
    Some(Spectral::Diagonal { lambda, v, v_inv })
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub(crate) fn expm_dense(a: &Matrix3<C64>) -> Matrix3<C64> {
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let mut squarings = 0u32;
    if norm > 0.25 {
        squarings = (norm / 0.25).log2().ceil() as u32;
    }
    let scaled = a / C64::from(2f64.powi(squarings as i32));
    let mut term = Matrix3::<C64>::identity();
    let mut sum = term;
    for k in 1..=18 {
        term = term * scaled / C64::from(k as f64);
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}
