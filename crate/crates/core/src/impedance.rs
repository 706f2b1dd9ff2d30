//! Single-axis mass-spring-damper impedance model and its exact zero-order-hold
//! discretization.
//!
//! The model relates the displacement correction `Δy` of a contact point to the
//! external force acting on it:
//!
//! ```text
//! M Δÿ + D Δẏ + K Δy = F_ext
//! ```
//!
//! In state-space form `x = [Δy, Δẏ]`, `ẋ = A x + B F_ext` with
//! `A = [[0, 1], [-K/M, -D/M]]` and `B = [0, 1/M]`. Sampling with a held force
//! gives `x[k+1] = A_d x[k] + B_d F[k]` where `A_d = e^{AT}` and
//! `B_d = (e^{AT} - I) A⁻¹ B`.
//!
//! The 2x2 exponential is evaluated in closed form. Since every 2x2 matrix
//! satisfies its characteristic polynomial, `e^{At}` is a combination of `I` and
//! `A` only; the coefficients depend on whether the eigenvalues are distinct real,
//! repeated, or a complex-conjugate pair.

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{self, Mat2, Vec2, IDENTITY};

/// Relative tolerance on `D²` vs `4MK` used to call a model critically damped.
pub const CRITICAL_DAMPING_RTOL: f64 = 1e-9;

/// Relative size below which the rigid-body input series is truncated.
const SERIES_RTOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImpedanceError {
    #[error("invalid impedance parameters: {0}")]
    InvalidParams(String),
    #[error("sample time must be positive and finite, got {0}")]
    InvalidSampleTime(f64),
    #[error("force profile is empty")]
    EmptyForceProfile,
}

/// Desired mass (kg), damping (N·s/m) and stiffness (N/m) of one contact point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceParams {
    mass: f64,
    damping: f64,
    stiffness: f64,
}

impl ImpedanceParams {
    pub fn new(mass: f64, damping: f64, stiffness: f64) -> Result<Self, ImpedanceError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(ImpedanceError::InvalidParams(format!(
                "mass must be positive, got {mass}"
            )));
        }
        if !(damping.is_finite() && damping >= 0.0) {
            return Err(ImpedanceError::InvalidParams(format!(
                "damping must be non-negative, got {damping}"
            )));
        }
        if !(stiffness.is_finite() && stiffness >= 0.0) {
            return Err(ImpedanceError::InvalidParams(format!(
                "stiffness must be non-negative, got {stiffness}"
            )));
        }
        Ok(Self {
            mass,
            damping,
            stiffness,
        })
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    /// Coefficients of the characteristic polynomial `λ² − aλ − b` together with
    /// the input scale `c`.
    pub fn characteristic(&self) -> CharacteristicCoefficients {
        let a = -self.damping / self.mass;
        let b = -self.stiffness / self.mass;
        let c = 1.0 / self.mass;
        let half = Complex64::new(a / 2.0, 0.0);
        let root = Complex64::new(a * a / 4.0 + b, 0.0).sqrt();
        CharacteristicCoefficients {
            a,
            b,
            c,
            eigenvalues: [half + root, half - root],
        }
    }
}

/// Continuous-time state-space pair `(A, B)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousModel {
    pub state_matrix: Mat2,
    pub input_matrix: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicCoefficients {
    /// `−D/M`
    pub a: f64,
    /// `−K/M`
    pub b: f64,
    /// `1/M`
    pub c: f64,
    pub eigenvalues: [Complex64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DampingClass {
    Underdamped,
    CriticallyDamped,
    Overdamped,
    /// Zero stiffness: no restoring force, `A` is singular.
    RigidBodyDegenerate,
}

/// Sampled model advancing the impedance state by one period `T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteModel {
    pub transition: Mat2,
    pub input_gain: Vec2,
    pub sample_time: f64,
    params: ImpedanceParams,
}

impl DiscreteModel {
    pub fn params(&self) -> ImpedanceParams {
        self.params
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.transition)
    }
}

/// Displacement correction (m) and its rate (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImpedanceState {
    pub displacement: f64,
    pub velocity: f64,
}

impl ImpedanceState {
    pub const ZERO: Self = Self {
        displacement: 0.0,
        velocity: 0.0,
    };

    pub fn new(displacement: f64, velocity: f64) -> Self {
        Self {
            displacement,
            velocity,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.displacement.is_finite() && self.velocity.is_finite()
    }

    fn as_vec(&self) -> Vec2 {
        [self.displacement, self.velocity]
    }
}

pub fn continuous_matrices(params: &ImpedanceParams) -> ContinuousModel {
    let m = params.mass;
    ContinuousModel {
        state_matrix: [[0.0, 1.0], [-params.stiffness / m, -params.damping / m]],
        input_matrix: [0.0, 1.0 / m],
    }
}

pub fn classify_damping(params: &ImpedanceParams) -> DampingClass {
    if params.stiffness == 0.0 {
        return DampingClass::RigidBodyDegenerate;
    }
    let d2 = params.damping * params.damping;
    let four_mk = 4.0 * params.mass * params.stiffness;
    let discriminant = d2 - four_mk;
    if discriminant.abs() <= CRITICAL_DAMPING_RTOL * d2.max(four_mk) {
        DampingClass::CriticallyDamped
    } else if discriminant < 0.0 {
        DampingClass::Underdamped
    } else {
        DampingClass::Overdamped
    }
}

/// `sinh(x)/x`, continuous at zero.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

/// `sin(x)/x`, continuous at zero.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// `e^{At} − I` for an arbitrary real 2x2 `A`.
///
/// With `s = tr(A)/2` and `N = A − sI`, `N² = μ²I` where `μ² = s² − det(A)`, so
/// `e^{At} = e^{st} (C I + S N)` with `(C, S) = (cosh μt, sinh(μt)/μ)` for real
/// distinct eigenvalues, `(cos ωt, sin(ωt)/ω)` with `ω² = −μ²` for a complex pair,
/// and `(1, t)` for a repeated eigenvalue. Subtracting the identity is done
/// before expanding so small `t` keeps full relative precision.
fn exp_minus_identity(a: &Mat2, t: f64) -> Mat2 {
    let s = linalg::trace(a) / 2.0;
    let n = linalg::sub(a, &linalg::scale(&IDENTITY, s));
    let det = linalg::det(a);
    let mu_sq = s * s - det;

    if mu_sq > 0.0 && mu_sq.sqrt() * t.abs() >= 1.0 {
        // Well-separated real eigenvalues: cosh(μt) and e^{st} are then large
        // and small at once, so combine the two modes directly. The smaller
        // root comes from the product to avoid cancelling s against μ.
        let mu = mu_sq.sqrt();
        let big = if s < 0.0 { s - mu } else { s + mu };
        let small = if big == 0.0 { 0.0 } else { det / big };
        let (e_big, e_small) = ((big * t).exp_m1(), (small * t).exp_m1());
        let diag = (e_big + e_small) / 2.0;
        // Sign of (e^{λ₁t} − e^{λ₂t})/(λ₁ − λ₂) does not depend on the order.
        let off = (e_big - e_small) / (big - small);
        return linalg::add(&linalg::scale(&IDENTITY, diag), &linalg::scale(&n, off));
    }

    let (cos_part_minus_one, sin_part) = if mu_sq > 0.0 {
        let mu = mu_sq.sqrt();
        let half = (mu * t / 2.0).sinh();
        (2.0 * half * half, t * sinhc(mu * t))
    } else if mu_sq < 0.0 {
        let omega = (-mu_sq).sqrt();
        let half = (omega * t / 2.0).sin();
        (-2.0 * half * half, t * sinc(omega * t))
    } else {
        (0.0, t)
    };

    let growth = (s * t).exp();
    // e^{st}·C − 1 = expm1(st)·C + (C − 1)
    let diag = (s * t).exp_m1() * (1.0 + cos_part_minus_one) + cos_part_minus_one;
    linalg::add(
        &linalg::scale(&IDENTITY, diag),
        &linalg::scale(&n, growth * sin_part),
    )
}

/// State transition matrix `e^{At}`.
pub fn matrix_exponential(model: &ContinuousModel, t: f64) -> Mat2 {
    linalg::add(&exp_minus_identity(&model.state_matrix, t), &IDENTITY)
}

pub fn discretize(
    params: &ImpedanceParams,
    sample_time: f64,
) -> Result<DiscreteModel, ImpedanceError> {
    if !(sample_time.is_finite() && sample_time > 0.0) {
        return Err(ImpedanceError::InvalidSampleTime(sample_time));
    }
    let model = continuous_matrices(params);
    let a = &model.state_matrix;
    let b = &model.input_matrix;
    let phi = exp_minus_identity(a, sample_time);
    let transition = linalg::add(&phi, &IDENTITY);

    let input_gain = if params.stiffness > 0.0 {
        let det = linalg::det(a);
        let inv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        linalg::mul_vec(&phi, &linalg::mul_vec(&inv, b))
    } else {
        rigid_body_input_gain(a, b, sample_time)
    };

    Ok(DiscreteModel {
        transition,
        input_gain,
        sample_time,
        params: *params,
    })
}

/// `Σ_{k≥0} T^{k+1}/(k+1)! · A^k B`, the held-input integral when `A` is singular.
fn rigid_body_input_gain(a: &Mat2, b: &Vec2, t: f64) -> Vec2 {
    let mut term = [b[0] * t, b[1] * t];
    let mut sum = term;
    for k in 1..SERIES_MAX_TERMS {
        let next = linalg::mul_vec(a, &term);
        let factor = t / (k as f64 + 1.0);
        term = [next[0] * factor, next[1] * factor];
        sum = [sum[0] + term[0], sum[1] + term[1]];
        if linalg::vec_norm_inf(&term) <= SERIES_RTOL * linalg::vec_norm_inf(&sum) {
            break;
        }
    }
    sum
}

/// One sample of the discrete update with the force held over the period.
pub fn step(model: &DiscreteModel, state: &ImpedanceState, external_force: f64) -> ImpedanceState {
    let x = linalg::mul_vec(&model.transition, &state.as_vec());
    ImpedanceState {
        displacement: x[0] + model.input_gain[0] * external_force,
        velocity: x[1] + model.input_gain[1] * external_force,
    }
}

/// Runs `step` over a force profile starting from rest. The output has one more
/// element than the profile; element 0 is the zero state.
pub fn simulate(
    params: &ImpedanceParams,
    sample_time: f64,
    force_profile: &[f64],
) -> Result<Vec<ImpedanceState>, ImpedanceError> {
    if force_profile.is_empty() {
        return Err(ImpedanceError::EmptyForceProfile);
    }
    let model = discretize(params, sample_time)?;
    let mut out = Vec::with_capacity(force_profile.len() + 1);
    let mut state = ImpedanceState::ZERO;
    out.push(state);
    for &force in force_profile {
        state = step(&model, &state, force);
        out.push(state);
    }
    Ok(out)
}

/// Largest eigenvalue magnitude of a real 2x2 matrix.
pub fn spectral_radius(m: &Mat2) -> f64 {
    let half_tr = linalg::trace(m) / 2.0;
    let disc = Complex64::new(half_tr * half_tr - linalg::det(m), 0.0).sqrt();
    let mid = Complex64::new(half_tr, 0.0);
    (mid + disc).norm().max((mid - disc).norm())
}
