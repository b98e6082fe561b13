//! Random models: adaptive batch sizes, subsampled estimates, least-squares
//! multipliers and the Lagrangian Hessian approximations.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::linalg::{operator_norm, smallest_eigpair, ConstraintFactor, NullSpaceBasis};
use crate::problem::Problem;
use crate::rng::SampleRng;
use crate::scalar::{lit, Real};

/// Target stationarity: first order (`α = 0`) or second order (`α = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stationarity {
    First,
    Second,
}

impl Stationarity {
    pub fn alpha(self) -> i32 {
        match self {
            Stationarity::First => 0,
            Stationarity::Second => 1,
        }
    }

    pub fn from_alpha(alpha: u8) -> Result<Self> {
        match alpha {
            0 => Ok(Stationarity::First),
            1 => Ok(Stationarity::Second),
            other => Err(SolverError::InvalidConfig(format!("alpha must be 0 or 1, got {other}"))),
        }
    }
}

/// Accuracy coefficients, failure probabilities and variance constants of the
/// random models, plus the batch cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyParams {
    pub kappa_f: f64,
    pub kappa_g: f64,
    pub kappa_h: f64,
    pub p_f: f64,
    pub p_g: f64,
    pub p_h: f64,
    pub c_f: f64,
    pub c_g: f64,
    pub c_h: f64,
    pub batch_cap: usize,
    pub stationarity: Stationarity,
}

impl Default for AccuracyParams {
    fn default() -> Self {
        Self {
            // κ_fcd η³ / (16 max{1, Δ_max}) with κ_fcd = 1, η = 0.4, Δ_max = 5.
            kappa_f: 0.064 / 80.0,
            kappa_g: 0.05,
            kappa_h: 0.05,
            p_f: 0.9,
            p_g: 0.9,
            p_h: 0.9,
            c_f: 5.0,
            c_g: 5.0,
            c_h: 5.0,
            batch_cap: 10_000,
            stationarity: Stationarity::First,
        }
    }
}

impl AccuracyParams {
    pub fn alpha(&self) -> i32 {
        self.stationarity.alpha()
    }

    /// Largest admissible `κ_f` for the given `κ_fcd`, `η` and `Δ_max`.
    pub fn kappa_f_bound(kappa_fcd: f64, eta: f64, delta_max: f64) -> f64 {
        kappa_fcd * eta.powi(3) / (16.0 * delta_max.max(1.0))
    }

    pub fn validate(&self, kappa_fcd: f64, eta: f64, delta_max: f64) -> Result<()> {
        let positive = [
            ("kappa_f", self.kappa_f),
            ("kappa_g", self.kappa_g),
            ("kappa_h", self.kappa_h),
            ("c_f", self.c_f),
            ("c_g", self.c_g),
            ("c_h", self.c_h),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("p_f", self.p_f), ("p_g", self.p_g), ("p_h", self.p_h)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SolverError::InvalidConfig(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if self.batch_cap == 0 {
            return Err(SolverError::InvalidConfig("batch_cap must be positive".into()));
        }
        let bound = Self::kappa_f_bound(kappa_fcd, eta, delta_max);
        if self.kappa_f > bound * (1.0 + 1e-12) {
            return Err(SolverError::InvalidConfig(format!("kappa_f = {} exceeds bound {bound}", self.kappa_f)));
        }
        Ok(())
    }
}

/// Which quantity a batch estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateKind {
    Value,
    Gradient,
    Hessian,
}

/// Chebyshev batch size, clamped to `[1, batch_cap]`.
pub fn batch_size(kind: EstimateKind, delta: f64, reliability: f64, params: &AccuracyParams) -> usize {
    let alpha = params.alpha();
    let raw = match kind {
        EstimateKind::Hessian => params.c_h / (params.p_h * (params.kappa_h * delta).powi(2)),
        EstimateKind::Gradient => params.c_g / (params.p_g * (params.kappa_g * delta.powi(alpha + 1)).powi(2)),
        EstimateKind::Value => {
            let accuracy = (params.kappa_f * delta.powi(alpha + 2)).powi(2);
            params.c_f / (params.p_f * accuracy.min(reliability * reliability))
        }
    };
    let cap = params.batch_cap;
    if !(raw.is_finite()) || raw >= cap as f64 {
        return cap;
    }
    (raw.ceil() as usize).clamp(1, cap)
}

/// Gradient estimate `ḡ` with the batch used.
pub fn estimate_gradient<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &DVector<T>,
    delta: T,
    params: &AccuracyParams,
    rng: &mut SampleRng,
) -> (DVector<T>, usize) {
    let batch = batch_size(EstimateKind::Gradient, delta.as_f64(), f64::INFINITY, params);
    (problem.sample_gradient(x, batch, rng), batch)
}

/// Objective value estimates at the iterate and the trial point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueEstimates<T> {
    /// `f̄_k`; absent when only the trial value was re-estimated.
    pub current: Option<T>,
    /// `f̄_{s_k}`.
    pub trial: T,
    pub batch: usize,
}

/// With `shared`, one sample set is evaluated at both points; otherwise only
/// the trial point is (re-)estimated from a fresh set.
#[allow(clippy::too_many_arguments)]
pub fn estimate_values<T: Real, P: Problem<T> + ?Sized>(
    problem: &P,
    x_k: &DVector<T>,
    x_trial: &DVector<T>,
    delta: T,
    reliability: T,
    params: &AccuracyParams,
    rng: &mut SampleRng,
    shared: bool,
) -> ValueEstimates<T> {
    let batch = batch_size(EstimateKind::Value, delta.as_f64(), reliability.as_f64(), params);
    if shared {
        let (fk, fs) = problem.sample_value_pair(x_k, x_trial, batch, rng);
        ValueEstimates { current: Some(fk), trial: fs, batch }
    } else {
        ValueEstimates { current: None, trial: problem.sample_value(x_trial, batch, rng), batch }
    }
}

/// `λ̄ = −(GGᵀ)⁻¹ G ḡ`.
pub fn estimate_multiplier<T: Real>(g: &DMatrix<T>, grad: &DVector<T>) -> Result<DVector<T>> {
    ConstraintFactor::new(g)?.multiplier(grad)
}

/// `H̄ = ∇̄²f + Σ λ̄ⁱ ∇²cⁱ`.
pub fn lagrangian_hessian<T: Real>(objective_hessian: DMatrix<T>, multiplier: &DVector<T>, constraint_hessians: &[DMatrix<T>]) -> DMatrix<T> {
    let mut h = objective_hessian;
    for (lam, ch) in multiplier.iter().zip(constraint_hessians) {
        h += ch * *lam;
    }
    h
}

/// How `H̄` is built when targeting first-order points. Second-order runs
/// always use the sampled Lagrangian Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HessianStrategy {
    #[default]
    Identity,
    Sr1,
    /// Lagrangian Hessian from a single objective-Hessian sample.
    EstHessian,
    /// Mean of the last `window` single-sample Lagrangian Hessians.
    AveHessian { window: usize },
}

impl HessianStrategy {
    pub const DEFAULT_WINDOW: usize = 50;

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "id" | "identity" => Ok(Self::Identity),
            "sr1" => Ok(Self::Sr1),
            "esth" => Ok(Self::EstHessian),
            "aveh" => Ok(Self::AveHessian { window: Self::DEFAULT_WINDOW }),
            other => Err(SolverError::InvalidConfig(format!("unknown Hessian strategy {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity => "id",
            Self::Sr1 => "sr1",
            Self::EstHessian => "esth",
            Self::AveHessian { .. } => "aveh",
        }
    }
}

/// History carried between iterations by the SR1 and averaging strategies.
#[derive(Debug, Clone, Default)]
pub struct HessianMemory<T: Real> {
    sr1: Option<Sr1State<T>>,
    window: VecDeque<DMatrix<T>>,
}

#[derive(Debug, Clone)]
struct Sr1State<T: Real> {
    h: DMatrix<T>,
    prev: Option<(DVector<T>, DVector<T>)>,
}

/// Relative size of the SR1 denominator below which the update is skipped.
pub const SR1_SKIP: f64 = 1e-8;

impl<T: Real> HessianMemory<T> {
    pub fn new() -> Self {
        Self { sr1: None, window: VecDeque::new() }
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// Applies the SR1 update for the move `x_prev → x` and stores `(x, ∇̄ₓL)`.
    fn sr1(&mut self, x: &DVector<T>, lagrangian_grad: &DVector<T>) -> DMatrix<T> {
        let d = x.len();
        let state = self.sr1.get_or_insert_with(|| Sr1State { h: DMatrix::identity(d, d), prev: None });
        if let Some((px, pl)) = state.prev.take() {
            let s = x - px;
            let y = lagrangian_grad - pl;
            let r = &y - &state.h * &s;
            let denom = r.dot(&s);
            if denom != T::zero() && denom.abs() >= lit::<T>(SR1_SKIP) * r.norm() * s.norm() {
                state.h += (&r * r.transpose()) / denom;
            }
        }
        state.prev = Some((x.clone(), lagrangian_grad.clone()));
        state.h.clone()
    }

    fn average(&mut self, sample: DMatrix<T>, window: usize) -> DMatrix<T> {
        self.window.push_back(sample);
        while self.window.len() > window.max(1) {
            self.window.pop_front();
        }
        let mut sum = DMatrix::zeros(self.window[0].nrows(), self.window[0].ncols());
        for m in &self.window {
            sum += m;
        }
        sum / lit::<T>(self.window.len() as f64)
    }
}

/// Hessian approximation plus the curvature information derived from it.
#[derive(Debug, Clone)]
pub struct HessianEstimate<T: Real> {
    pub h: DMatrix<T>,
    pub h_norm: T,
    /// Smallest eigenvalue of `ZᵀH̄Z` (second-order runs only).
    pub tau: Option<T>,
    /// `|min{τ̄, 0}|`; zero for first-order runs.
    pub tau_plus: T,
    /// Unit eigenvector for `tau` in reduced coordinates.
    pub eigvec: Option<DVector<T>>,
    pub batch: usize,
}

/// Builds `H̄` for the current iterate.
#[allow(clippy::too_many_arguments)]
pub fn build_hessian<T: Real, P: Problem<T> + ?Sized>(
    strategy: HessianStrategy,
    memory: &mut HessianMemory<T>,
    problem: &P,
    x: &DVector<T>,
    multiplier: &DVector<T>,
    lagrangian_grad: &DVector<T>,
    basis: &NullSpaceBasis<T>,
    delta: T,
    params: &AccuracyParams,
    rng: &mut SampleRng,
) -> Result<HessianEstimate<T>> {
    let d = x.len();
    let (h, batch) = match params.stationarity {
        Stationarity::Second => {
            let batch = batch_size(EstimateKind::Hessian, delta.as_f64(), f64::INFINITY, params);
            let hf = problem.sample_hessian(x, batch, rng);
            (lagrangian_hessian(hf, multiplier, &problem.constraint_hessians(x)), batch)
        }
        Stationarity::First => match strategy {
            HessianStrategy::Identity => (DMatrix::identity(d, d), 0),
            HessianStrategy::Sr1 => (memory.sr1(x, lagrangian_grad), 0),
            HessianStrategy::EstHessian => {
                let hf = problem.sample_hessian(x, 1, rng);
                (lagrangian_hessian(hf, multiplier, &problem.constraint_hessians(x)), 1)
            }
            HessianStrategy::AveHessian { window } => {
                let hf = problem.sample_hessian(x, 1, rng);
                let sample = lagrangian_hessian(hf, multiplier, &problem.constraint_hessians(x));
                (memory.average(sample, window), 1)
            }
        },
    };
    if h.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput("Hessian estimate"));
    }
    let h_norm = operator_norm(&h);
    let (tau, eigvec) = match params.stationarity {
        Stationarity::Second if basis.dim() > 0 => {
            let (tau, zeta) = smallest_eigpair(&basis.reduce(&h))?;
            (Some(tau), Some(zeta))
        }
        _ => (None, None),
    };
    let tau_plus = tau.map_or(T::zero(), |t| (-t).max(T::zero()));
    Ok(HessianEstimate { h, h_norm, tau, tau_plus, eigvec, batch })
}
