//! Trial steps: the parameter-free radius split, normal and tangential
//! components for gradient and eigen steps, second-order corrections and the
//! predicted reduction of the merit model.

// Negated comparisons here deliberately reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::estimator::HessianEstimate;
use crate::linalg::{cauchy_decrease_bound, operator_norm, quadratic_model, trs_solve, ConstraintFactor, NullSpaceBasis, TrsMethod};
use crate::problem::Constraints;
use crate::scalar::{lit, Real};

/// Relative slack used when certifying the decrease conditions after roundoff.
pub const CERTIFICATE_RTOL: f64 = 1e-10;

/// Relative slack on the predicted-reduction threshold in the merit loop.
pub const PRED_RTOL: f64 = 1e-12;

/// `floor`, raised to a small multiple of the unit roundoff of `T`.
pub fn roundoff_rtol<T: Real>(floor: f64) -> f64 {
    floor.max(64.0 * T::default_epsilon().as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepKind {
    Gradient,
    Eigen,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::Gradient => "gradient",
            StepKind::Eigen => "eigen",
        }
    }
}

/// Residuals divided by `‖G‖` (feasibility) and `‖H̄‖` (optimality).
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledResiduals<T: Real> {
    pub feasibility: DVector<T>,
    pub optimality: DVector<T>,
    /// `‖(optimality, feasibility)‖`.
    pub kkt_norm: T,
}

pub fn rescaled_residuals<T: Real>(c: &DVector<T>, g_norm: T, lagrangian_grad: &DVector<T>, h_norm: T) -> Result<RescaledResiduals<T>> {
    if !(h_norm > T::zero()) {
        return Err(SolverError::ZeroHessianNorm);
    }
    if !(g_norm > T::zero()) {
        return Err(SolverError::RankDeficient { ratio: 0.0 });
    }
    let feasibility = c / g_norm;
    let optimality = lagrangian_grad / h_norm;
    let kkt_norm = feasibility.norm().hypot(optimality.norm());
    Ok(RescaledResiduals { feasibility, optimality, kkt_norm })
}

/// `Δ̆` (normal) and `Δ̃` (tangential) with `Δ̆² + Δ̃² = Δ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSplit<T> {
    pub normal: T,
    pub tangential: T,
    pub mode: StepKind,
}

/// Splits `delta` in proportion to the rescaled feasibility norm and, by
/// mode, the rescaled optimality norm or rescaled negative curvature.
pub fn split_radius<T: Real>(mode: StepKind, delta: T, feasibility_rs: T, other_rs: T) -> Result<RadiusSplit<T>> {
    let denom = feasibility_rs.hypot(other_rs);
    if !(denom > T::zero()) {
        return Err(SolverError::DegenerateResiduals(0));
    }
    Ok(RadiusSplit {
        normal: (feasibility_rs / denom * delta).min(delta),
        tangential: (other_rs / denom * delta).min(delta),
        mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalStep<T: Real> {
    /// `−Gᵀ(GGᵀ)⁻¹c`.
    pub v: DVector<T>,
    pub gamma: T,
    /// `γ̄ v`.
    pub w: DVector<T>,
}

/// Shrinks the least-norm feasibility step onto the normal radius.
pub fn normal_step<T: Real>(factor: &ConstraintFactor<T>, c: &DVector<T>, normal_radius: T) -> Result<NormalStep<T>> {
    let v = factor.min_norm_pull(c)?;
    let vn = v.norm();
    let gamma = if vn == T::zero() { T::one() } else { (normal_radius / vn).min(T::one()) };
    let w = &v * gamma;
    Ok(NormalStep { v, gamma, w })
}

/// Certificate that a tangential step met its decrease requirement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepCertificate {
    /// `m(u) − m(0) ≤ bound` (fraction of Cauchy decrease).
    Cauchy { model_change: f64, bound: f64, scale: f64, rtol: f64 },
    /// Slope `≤ 0`, `‖u‖ ≤ Δ̃`, curvature `≤ −κ τ̄⁺ Δ̃²`; plus the implied model change.
    Eigen {
        slope: f64,
        step_norm: f64,
        radius: f64,
        curvature: f64,
        curvature_bound: f64,
        model_change: f64,
        scale: f64,
        rtol: f64,
    },
}

impl StepCertificate {
    /// Whether every condition holds within the recorded relative slack.
    pub fn holds(&self) -> bool {
        match *self {
            StepCertificate::Cauchy { model_change, bound, scale, rtol } => model_change <= bound + rtol * scale,
            StepCertificate::Eigen { slope, step_norm, radius, curvature, curvature_bound, model_change, scale, rtol } => {
                slope <= rtol * scale
                    && step_norm <= radius * (1.0 + rtol)
                    && curvature <= curvature_bound + rtol * scale
                    && model_change <= 0.5 * curvature_bound + rtol * scale
            }
        }
    }
}

/// Tangential step for a gradient step, certified against the Cauchy fraction.
#[allow(clippy::too_many_arguments)]
pub fn tangential_gradient<T: Real>(
    h: &DMatrix<T>,
    grad: &DVector<T>,
    w: &DVector<T>,
    basis: &NullSpaceBasis<T>,
    radius: T,
    method: TrsMethod,
    kappa_fcd: T,
) -> Result<(DVector<T>, StepCertificate)> {
    let gr = basis.restrict(&(grad + h * w));
    let hr = basis.reduce(h);
    let u = if radius > T::zero() { trs_solve(&hr, &gr, radius, method)? } else { DVector::zeros(gr.len()) };
    let change = quadratic_model(&hr, &gr, &u);
    let gr_norm = gr.norm();
    let hr_norm = operator_norm(&hr);
    let bound = cauchy_decrease_bound(gr_norm, hr_norm, radius, kappa_fcd);
    let scale = (gr_norm * radius + hr_norm * radius * radius).as_f64();
    let cert = StepCertificate::Cauchy {
        model_change: change.as_f64(),
        bound: bound.as_f64(),
        scale,
        rtol: roundoff_rtol::<T>(CERTIFICATE_RTOL),
    };
    if !cert.holds() {
        return Err(SolverError::SubsolverFailure { reduction: change.as_f64(), bound: bound.as_f64() });
    }
    Ok((u, cert))
}

/// Tangential step along the (scaled) eigenvector of the most negative reduced curvature.
#[allow(clippy::too_many_arguments)]
pub fn tangential_eigen<T: Real>(
    h: &DMatrix<T>,
    grad: &DVector<T>,
    w: &DVector<T>,
    basis: &NullSpaceBasis<T>,
    radius: T,
    tau: T,
    eigvec: &DVector<T>,
    kappa_fcd: T,
) -> Result<(DVector<T>, StepCertificate)> {
    if !(tau < T::zero()) {
        return Err(SolverError::NotNegativeCurvature(tau.as_f64()));
    }
    let gr = basis.restrict(&(grad + h * w));
    let n = eigvec.norm();
    let mut u = eigvec * (radius / n);
    if gr.dot(&u) > T::zero() {
        u = -u;
    }
    let t = basis.lift(&u);
    let slope = (grad + h * w).dot(&t);
    let curvature = t.dot(&(h * &t));
    let tau_plus = -tau;
    let curvature_bound = -(kappa_fcd * tau_plus * radius * radius);
    let hr = basis.reduce(h);
    let change = quadratic_model(&hr, &gr, &u);
    let scale = (gr.norm() * radius + operator_norm(h) * radius * radius).as_f64();
    let cert = StepCertificate::Eigen {
        slope: slope.as_f64(),
        step_norm: u.norm().as_f64(),
        radius: radius.as_f64(),
        curvature: curvature.as_f64(),
        curvature_bound: curvature_bound.as_f64(),
        model_change: change.as_f64(),
        scale,
        rtol: roundoff_rtol::<T>(CERTIFICATE_RTOL),
    };
    if !cert.holds() {
        return Err(SolverError::SubsolverFailure { reduction: change.as_f64(), bound: (curvature_bound * lit(0.5)).as_f64() });
    }
    Ok((u, cert))
}

/// `d = −Gᵀ(GGᵀ)⁻¹ {c(x + Δx) − c − GΔx}`.
pub fn soc_step<T: Real, C: Constraints<T> + ?Sized>(
    problem: &C,
    factor: &ConstraintFactor<T>,
    x: &DVector<T>,
    dx: &DVector<T>,
    c: &DVector<T>,
    jacobian: &DMatrix<T>,
) -> Result<DVector<T>> {
    let remainder = problem.constraints(&(x + dx)) - c - jacobian * dx;
    factor.min_norm_pull(&remainder)
}

/// Gradient step when its predicted decrease dominates the eigen step's.
/// A zero `‖H̄‖` makes the ratio term infinite.
pub fn select_step_type<T: Real>(kkt_norm: T, h_norm: T, tau_plus: T, c_norm: T, delta: T) -> StepKind {
    let reach = if h_norm > T::zero() { delta.min(kkt_norm / h_norm) } else { delta };
    let gradient_side = kkt_norm * reach;
    let eigen_side = tau_plus * delta * (delta + c_norm);
    if gradient_side >= eigen_side {
        StepKind::Gradient
    } else {
        StepKind::Eigen
    }
}

/// Whether the iteration may attempt a step: `max{‖∇̄L‖/max{1,‖H̄‖}, τ̄⁺} ≥ ηΔ`.
pub fn step_criterion_holds<T: Real>(kkt_norm: T, h_norm: T, tau_plus: T, eta: T, delta: T) -> bool {
    (kkt_norm / h_norm.max(T::one())).max(tau_plus) >= eta * delta
}

/// `ḡᵀΔx + ½ΔxᵀH̄Δx + μ̄(‖c + GΔx‖ − ‖c‖)`.
pub fn predicted_reduction<T: Real>(grad: &DVector<T>, h: &DMatrix<T>, mu: T, c: &DVector<T>, jacobian: &DMatrix<T>, dx: &DVector<T>) -> T {
    PredParts::new(grad, h, c, jacobian, dx).at(mu)
}

/// Predicted reduction split into its model and feasibility parts so the
/// merit loop can re-evaluate it for any `μ̄`. The scales bound the size of
/// the terms each part was computed from, which sets its roundoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredParts<T> {
    pub model: T,
    pub feasibility_change: T,
    pub model_scale: T,
    pub feasibility_scale: T,
}

impl<T: Real> PredParts<T> {
    pub fn new(grad: &DVector<T>, h: &DMatrix<T>, c: &DVector<T>, jacobian: &DMatrix<T>, dx: &DVector<T>) -> Self {
        let slope = grad.dot(dx);
        let curvature = dx.dot(&(h * dx)) * lit::<T>(0.5);
        let gdx = jacobian * dx;
        let feasibility_change = (c + &gdx).norm() - c.norm();
        Self {
            model: slope + curvature,
            feasibility_change,
            model_scale: slope.abs() + curvature.abs(),
            feasibility_scale: c.norm() + gdx.norm(),
        }
    }

    pub fn at(&self, mu: T) -> T {
        self.model + mu * self.feasibility_change
    }

    /// Roundoff allowance on `at(mu)` when compared against `threshold`.
    pub fn slack(&self, mu: T, threshold: T) -> T {
        lit::<T>(roundoff_rtol::<T>(PRED_RTOL)) * (threshold.abs() + self.model_scale + mu * self.feasibility_scale)
    }
}

/// `−(κ_fcd/2) max{‖∇̄L‖ min{Δ, ‖∇̄L‖/‖H̄‖}, τ̄⁺Δ(Δ + ‖c‖)}`.
pub fn pred_threshold<T: Real>(kkt_norm: T, h_norm: T, tau_plus: T, c_norm: T, delta: T, kappa_fcd: T) -> T {
    let reach = if h_norm > T::zero() { delta.min(kkt_norm / h_norm) } else { delta };
    let gradient_side = kkt_norm * reach;
    let eigen_side = tau_plus * delta * (delta + c_norm);
    -(kappa_fcd * lit::<T>(0.5)) * gradient_side.max(eigen_side)
}

/// `pred ≤ threshold` up to `slack` (see [`PredParts::slack`]).
pub fn meets_threshold<T: Real>(pred: T, threshold: T, slack: T) -> bool {
    pred <= threshold + slack
}

/// Multiplies `mu` by `rho` until the predicted reduction meets `threshold`.
/// Returns the final `mu` and the number of multiplications.
pub fn raise_merit<T: Real>(mu: T, rho: T, cap: usize, threshold: T, parts: &PredParts<T>) -> Result<(T, usize)> {
    let mut mu = mu;
    let mut count = 0;
    while !meets_threshold(parts.at(mu), threshold, parts.slack(mu, threshold)) {
        if count == cap {
            return Err(SolverError::MeritLoopDiverged(cap));
        }
        mu *= rho;
        count += 1;
    }
    Ok((mu, count))
}

/// Everything the step construction reads from one iteration's estimates.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a, T: Real> {
    pub grad: &'a DVector<T>,
    pub lagrangian_grad: &'a DVector<T>,
    pub c: &'a DVector<T>,
    pub jacobian: &'a DMatrix<T>,
    pub factor: &'a ConstraintFactor<T>,
    pub basis: &'a NullSpaceBasis<T>,
    pub hessian: &'a HessianEstimate<T>,
    pub delta: T,
    pub kappa_fcd: T,
    pub method: TrsMethod,
}

/// A fully assembled trial step `Δx = w + Zu`.
#[derive(Debug, Clone)]
pub struct TrialStep<T: Real> {
    pub kind: StepKind,
    pub split: RadiusSplit<T>,
    pub normal: NormalStep<T>,
    pub u: DVector<T>,
    pub t: DVector<T>,
    pub dx: DVector<T>,
    pub certificate: StepCertificate,
}

pub fn compute_trial_step<T: Real>(kind: StepKind, ctx: &StepContext<'_, T>) -> Result<TrialStep<T>> {
    let hess = ctx.hessian;
    let rs = rescaled_residuals(ctx.c, ctx.factor.norm(), ctx.lagrangian_grad, hess.h_norm)?;
    let feas = rs.feasibility.norm();
    let split = match kind {
        StepKind::Gradient => split_radius(kind, ctx.delta, feas, rs.optimality.norm())?,
        StepKind::Eigen => split_radius(kind, ctx.delta, feas, hess.tau_plus / hess.h_norm)?,
    };
    let normal = normal_step(ctx.factor, ctx.c, split.normal)?;
    let (u, certificate) = match kind {
        StepKind::Gradient => tangential_gradient(&hess.h, ctx.grad, &normal.w, ctx.basis, split.tangential, ctx.method, ctx.kappa_fcd)?,
        StepKind::Eigen => {
            let (Some(tau), Some(zeta)) = (hess.tau, hess.eigvec.as_ref()) else {
                return Err(SolverError::NotNegativeCurvature(0.0));
            };
            tangential_eigen(&hess.h, ctx.grad, &normal.w, ctx.basis, split.tangential, tau, zeta, ctx.kappa_fcd)?
        }
    };
    let t = ctx.basis.lift(&u);
    let dx = &normal.w + &t;
    Ok(TrialStep { kind, split, normal, u, t, dx, certificate })
}
