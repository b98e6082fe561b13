//! The outer iteration: estimate, test, step, merit update, ratio test and
//! radius/reliability updates, plus the stopping loop.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::benchmarks::kkt_residuals;
use crate::error::{Result, SolverError};
use crate::estimator::{build_hessian, estimate_gradient, estimate_values, AccuracyParams, HessianMemory, HessianStrategy, Stationarity};
use crate::linalg::{ConstraintFactor, TrsMethod};
use crate::problem::Problem;
use crate::rng::{OracleKind, RngStream};
use crate::scalar::{lit, Real};
use crate::steps::{
    compute_trial_step, meets_threshold, pred_threshold, raise_merit, select_step_type, soc_step, step_criterion_holds, PredParts,
    roundoff_rtol, StepCertificate, StepContext, StepKind, CERTIFICATE_RTOL,
};

/// Lower bound on the reliability parameter.
pub const EPS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub delta0: f64,
    pub delta_max: f64,
    pub mu0: f64,
    pub eps0: f64,
    /// Feasibility radius `r` below which rejected steps try a second-order correction.
    pub soc_radius: f64,
    pub kappa_fcd: f64,
    pub accuracy: AccuracyParams,
    pub hessian: HessianStrategy,
    pub trs: TrsMethod,
    pub kkt_tol: f64,
    pub max_iters: usize,
    pub delta_min: f64,
    /// Stop on exact residuals when the problem exposes a noiseless oracle.
    pub use_true_kkt: bool,
    /// Consecutive estimate-based hits required to stop without exact residuals.
    pub debounce: usize,
    pub merit_loop_cap: usize,
    pub max_resample: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 0.4,
            gamma: 1.5,
            rho: 1.2,
            delta0: 1.0,
            delta_max: 5.0,
            mu0: 1.0,
            eps0: 1.0,
            soc_radius: 0.01,
            kappa_fcd: 1.0,
            accuracy: AccuracyParams::default(),
            hessian: HessianStrategy::Identity,
            trs: TrsMethod::Auto,
            kkt_tol: 1e-4,
            max_iters: 10_000,
            delta_min: 1e-12,
            use_true_kkt: true,
            debounce: 5,
            merit_loop_cap: 100,
            max_resample: 5,
            seed: 0,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| SolverError::InvalidConfig(format!("{key} = {value:?}: {e}")))
}

impl SolverConfig {
    pub fn with_stationarity(mut self, stationarity: Stationarity) -> Self {
        self.accuracy.stationarity = stationarity;
        self
    }

    pub fn stationarity(&self) -> Stationarity {
        self.accuracy.stationarity
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(SolverError::InvalidConfig(msg)) };
        check(self.eta > 0.0 && self.eta < 1.0, format!("eta must lie in (0,1), got {}", self.eta))?;
        check(self.gamma > 1.0, format!("gamma must exceed 1, got {}", self.gamma))?;
        check(self.rho > 1.0, format!("rho must exceed 1, got {}", self.rho))?;
        check(self.delta_max > 0.0 && self.delta_max.is_finite(), format!("delta_max must be positive, got {}", self.delta_max))?;
        check(
            self.delta0 > 0.0 && self.delta0 <= self.delta_max,
            format!("delta0 must lie in (0, delta_max], got {}", self.delta0),
        )?;
        check(self.mu0 > 0.0 && self.mu0.is_finite(), format!("mu0 must be positive, got {}", self.mu0))?;
        check(self.eps0 > 0.0 && self.eps0.is_finite(), format!("eps0 must be positive, got {}", self.eps0))?;
        check(self.soc_radius > 0.0, format!("r must be positive, got {}", self.soc_radius))?;
        check(self.kappa_fcd > 0.0 && self.kappa_fcd <= 1.0, format!("kappa_fcd must lie in (0,1], got {}", self.kappa_fcd))?;
        check(self.kkt_tol >= 0.0, format!("kkt_tol must be nonnegative, got {}", self.kkt_tol))?;
        check(self.delta_min >= 0.0, format!("delta_min must be nonnegative, got {}", self.delta_min))?;
        check(self.debounce >= 1, "debounce must be at least 1".into())?;
        if let HessianStrategy::AveHessian { window } = self.hessian {
            check(window >= 1, "AveH window must be at least 1".into())?;
        }
        self.accuracy.validate(self.kappa_fcd, self.eta, self.delta_max)
    }

    /// Sets one field from a `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.accuracy;
        match key.trim() {
            "alpha" => a.stationarity = Stationarity::from_alpha(parse(key, value)?)?,
            "eta" => self.eta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "delta0" => self.delta0 = parse(key, value)?,
            "delta_max" => self.delta_max = parse(key, value)?,
            "mu0" => self.mu0 = parse(key, value)?,
            "eps0" => self.eps0 = parse(key, value)?,
            "r" | "soc_radius" => self.soc_radius = parse(key, value)?,
            "kappa_fcd" => self.kappa_fcd = parse(key, value)?,
            "kappa_f" => a.kappa_f = parse(key, value)?,
            "kappa_g" => a.kappa_g = parse(key, value)?,
            "kappa_h" => a.kappa_h = parse(key, value)?,
            "p_f" => a.p_f = parse(key, value)?,
            "p_g" => a.p_g = parse(key, value)?,
            "p_h" => a.p_h = parse(key, value)?,
            "c_f" => a.c_f = parse(key, value)?,
            "c_g" => a.c_g = parse(key, value)?,
            "c_h" => a.c_h = parse(key, value)?,
            "batch_cap" => a.batch_cap = parse(key, value)?,
            "hessian" => {
                let window = match self.hessian {
                    HessianStrategy::AveHessian { window } => Some(window),
                    _ => None,
                };
                self.hessian = HessianStrategy::parse(value.trim())?;
                if let (HessianStrategy::AveHessian { window: w }, Some(old)) = (&mut self.hessian, window) {
                    *w = old;
                }
            }
            "aveh_window" => {
                let window = parse(key, value)?;
                self.hessian = HessianStrategy::AveHessian { window };
            }
            "trs" => {
                self.trs = match value.trim() {
                    "auto" => TrsMethod::Auto,
                    "exact" => TrsMethod::Exact,
                    "dogleg" => TrsMethod::Dogleg,
                    "steihaug" => TrsMethod::Steihaug,
                    other => return Err(SolverError::InvalidConfig(format!("unknown subproblem solver {other:?}"))),
                }
            }
            "kkt_tol" => self.kkt_tol = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "delta_min" => self.delta_min = parse(key, value)?,
            "use_true_kkt" => self.use_true_kkt = parse(key, value)?,
            "debounce" => self.debounce = parse(key, value)?,
            "merit_loop_cap" => self.merit_loop_cap = parse(key, value)?,
            "max_resample" => self.max_resample = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(SolverError::InvalidConfig(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SolverError::Parse(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }
}

/// `(x_k, Δ_k, ε̄_k, μ̄_k)`, the iteration counter and carried history.
#[derive(Debug, Clone)]
pub struct SolverState<T: Real> {
    pub x: DVector<T>,
    pub delta: T,
    pub eps: T,
    pub mu: T,
    pub k: u64,
    pub memory: HessianMemory<T>,
    pub rng: RngStream,
    /// Exact `(‖∇L‖, τ⁺)` at `x`, when known.
    pub exact: Option<(f64, f64)>,
}

impl<T: Real> SolverState<T> {
    pub fn new(x0: DVector<T>, config: &SolverConfig) -> Self {
        Self {
            x: x0,
            delta: lit(config.delta0),
            eps: lit(config.eps0),
            mu: lit(config.mu0),
            k: 0,
            memory: HessianMemory::new(),
            rng: RngStream::new(config.seed),
            exact: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// The step-attempt criterion failed; no step was computed.
    UnsuccessfulLine6,
    SuccessfulReliable,
    SuccessfulUnreliable,
    UnsuccessfulRejected,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::UnsuccessfulLine6 => "unsuccessful-line6",
            Outcome::SuccessfulReliable => "successful-reliable",
            Outcome::SuccessfulUnreliable => "successful-unreliable",
            Outcome::UnsuccessfulRejected => "unsuccessful-rejected",
        }
    }

    pub fn is_successful(self) -> bool {
        matches!(self, Outcome::SuccessfulReliable | Outcome::SuccessfulUnreliable)
    }
}

/// Quantities needed to audit one constructed step after the fact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub delta: f64,
    pub normal_radius: f64,
    pub tangential_radius: f64,
    pub gamma: f64,
    pub step_norm: f64,
    pub c_norm: f64,
    pub linearized_c_norm: f64,
    /// `‖c‖ + ‖G‖‖Δx‖`, the roundoff scale of `‖c + GΔx‖`.
    pub linearized_scale: f64,
    pub certificate: StepCertificate,
    pub pred: f64,
    pub threshold: f64,
    pub pred_slack: f64,
    pub merit_raises: usize,
    /// Relative roundoff floor of the scalar type the step was computed in.
    pub rtol: f64,
}

impl StepDiagnostics {
    /// Names of violated per-step invariants.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.certificate.holds() {
            out.push(match self.certificate {
                StepCertificate::Cauchy { .. } => "cauchy-fraction",
                StepCertificate::Eigen { .. } => "eigen-conditions",
            });
        }
        if !meets_threshold(self.pred, self.threshold, self.pred_slack) {
            out.push("pred-threshold");
        }
        if self.step_norm > self.delta * (1.0 + CERTIFICATE_RTOL.max(self.rtol)) {
            out.push("step-norm");
        }
        let d2 = self.delta * self.delta;
        if (self.normal_radius.powi(2) + self.tangential_radius.powi(2) - d2).abs() > 1e-10f64.max(self.rtol) * d2 {
            out.push("radius-split");
        }
        let target = (1.0 - self.gamma) * self.c_norm;
        if (self.linearized_c_norm - target).abs() > 1e-8f64.max(self.rtol) * self.linearized_scale.max(f64::MIN_POSITIVE) {
            out.push("linearized-feasibility");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: u64,
    pub outcome: Outcome,
    pub step_kind: Option<StepKind>,
    pub soc: bool,
    /// Radius, reliability and merit parameter after the update.
    pub delta: f64,
    pub eps: f64,
    pub mu: f64,
    pub delta_prev: f64,
    pub eps_prev: f64,
    pub pred: Option<f64>,
    pub ared: Option<f64>,
    pub kkt_est: f64,
    pub tau_est: f64,
    /// Exact residuals at the post-update iterate.
    pub kkt_true: Option<f64>,
    pub tau_true: Option<f64>,
    pub batch_f: usize,
    pub batch_g: usize,
    pub batch_h: usize,
    pub diagnostics: Option<StepDiagnostics>,
}

/// Exact residuals at `x`; curvature only for second-order runs.
fn exact_residuals<T: Real, P: Problem<T> + ?Sized>(problem: &P, x: &DVector<T>, stationarity: Stationarity) -> Result<Option<(f64, f64)>> {
    let Some(objective) = problem.noiseless() else {
        return Ok(None);
    };
    match stationarity {
        Stationarity::Second => {
            let (kkt, tau) = kkt_residuals(problem, objective, x)?;
            Ok(Some((kkt.as_f64(), tau.as_f64())))
        }
        Stationarity::First => {
            let g = objective.gradient(x);
            let jac = problem.jacobian(x);
            let lam = ConstraintFactor::new(&jac)?.multiplier(&g)?;
            let lgrad = g + jac.transpose() * lam;
            Ok(Some((lgrad.norm().hypot(problem.constraints(x).norm()).as_f64(), 0.0)))
        }
    }
}

/// Runs one outer iteration, updating `state` in place.
pub fn iterate<T: Real, P: Problem<T> + ?Sized>(state: &mut SolverState<T>, problem: &P, config: &SolverConfig) -> Result<IterationRecord> {
    let k = state.k;
    let params = &config.accuracy;
    let (eta, gamma) = (lit::<T>(config.eta), lit::<T>(config.gamma));
    let kappa = lit::<T>(config.kappa_fcd);
    let delta = state.delta;
    let eps_floor = lit::<T>(EPS_FLOOR);
    let delta_prev = delta.as_f64();
    let eps_prev = state.eps.as_f64();

    // Step 1: random models at x_k.
    let x = state.x.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput("iterate"));
    }
    let c = problem.constraints(&x);
    let jac = problem.jacobian(&x);
    let factor = ConstraintFactor::new(&jac)?;
    let basis = factor.nullspace();
    let c_norm = c.norm();

    let mut rng = state.rng.substream(k, OracleKind::Gradient { attempt: 0 });
    let (mut grad, mut batch_g) = estimate_gradient(problem, &x, delta, params, &mut rng);
    let mut lam = factor.multiplier(&grad)?;
    let mut lgrad = &grad + jac.transpose() * &lam;
    let mut hrng = state.rng.substream(k, OracleKind::Hessian);
    let hess = build_hessian(config.hessian, &mut state.memory, problem, &x, &lam, &lgrad, &basis, delta, params, &mut hrng)?;
    let alpha = config.stationarity();

    let mut record = IterationRecord {
        k,
        outcome: Outcome::UnsuccessfulLine6,
        step_kind: None,
        soc: false,
        delta: 0.0,
        eps: 0.0,
        mu: state.mu.as_f64(),
        delta_prev,
        eps_prev,
        pred: None,
        ared: None,
        kkt_est: 0.0,
        tau_est: hess.tau_plus.as_f64(),
        kkt_true: None,
        tau_true: None,
        batch_f: 0,
        batch_g,
        batch_h: hess.batch,
        diagnostics: None,
    };

    let mut attempt: u8 = 0;
    let step = loop {
        let kkt = lgrad.norm().hypot(c_norm);
        record.kkt_est = kkt.as_f64();
        record.batch_g = batch_g;

        // Step 2: attempt criterion, step type, trial step.
        if !step_criterion_holds(kkt, hess.h_norm, hess.tau_plus, eta, delta) {
            break None;
        }
        let kind = select_step_type(kkt, hess.h_norm, hess.tau_plus, c_norm, delta);
        let ctx = StepContext {
            grad: &grad,
            lagrangian_grad: &lgrad,
            c: &c,
            jacobian: &jac,
            factor: &factor,
            basis: &basis,
            hessian: &hess,
            delta,
            kappa_fcd: kappa,
            method: config.trs,
        };
        match compute_trial_step(kind, &ctx) {
            Ok(step) => break Some((kkt, step)),
            Err(SolverError::DegenerateResiduals(_)) if (attempt as usize) < config.max_resample => {
                attempt += 1;
                let mut rng = state.rng.substream(k, OracleKind::Gradient { attempt });
                (grad, batch_g) = estimate_gradient(problem, &x, delta, params, &mut rng);
                lam = factor.multiplier(&grad)?;
                lgrad = &grad + jac.transpose() * &lam;
            }
            Err(SolverError::DegenerateResiduals(_)) => break None,
            Err(e) => return Err(e),
        }
    };

    let Some((kkt, step)) = step else {
        state.delta = delta / gamma;
        state.eps = (state.eps / gamma).max(eps_floor);
        return Ok(finish(state, problem, config, record, Outcome::UnsuccessfulLine6));
    };
    record.step_kind = Some(step.kind);

    // Step 3: merit parameter, predicted and actual reductions.
    let parts = PredParts::new(&grad, &hess.h, &c, &jac, &step.dx);
    let threshold = pred_threshold(kkt, hess.h_norm, hess.tau_plus, c_norm, delta, kappa);
    let (mu, raises) = raise_merit(state.mu, lit(config.rho), config.merit_loop_cap, threshold, &parts)?;
    state.mu = mu;
    let pred = parts.at(mu);
    record.mu = mu.as_f64();
    record.pred = Some(pred.as_f64());
    record.diagnostics = Some(StepDiagnostics {
        delta: delta.as_f64(),
        normal_radius: step.split.normal.as_f64(),
        tangential_radius: step.split.tangential.as_f64(),
        gamma: step.normal.gamma.as_f64(),
        step_norm: step.dx.norm().as_f64(),
        c_norm: c_norm.as_f64(),
        linearized_c_norm: (&c + &jac * &step.dx).norm().as_f64(),
        linearized_scale: (c_norm + factor.norm() * step.dx.norm()).as_f64(),
        certificate: step.certificate,
        pred: pred.as_f64(),
        threshold: threshold.as_f64(),
        pred_slack: parts.slack(mu, threshold).as_f64(),
        merit_raises: raises,
        rtol: roundoff_rtol::<T>(0.0),
    });

    let trial = &x + &step.dx;
    let mut vrng = state.rng.substream(k, OracleKind::Value);
    let values = estimate_values(problem, &x, &trial, delta, state.eps, params, &mut vrng, true);
    record.batch_f = values.batch;
    let f_k = values.current.unwrap_or(values.trial);
    let merit_change = |f_s: T, point: &DVector<T>| f_s - f_k + mu * (problem.constraints(point).norm() - c_norm);
    let mut ared = merit_change(values.trial, &trial);

    // Step 4: ratio test, optional second-order correction, updates.
    let mut accepted = None;
    if ared / pred >= eta {
        accepted = Some(trial);
    } else if alpha == Stationarity::Second && c_norm <= lit(config.soc_radius) {
        let d = soc_step(problem, &factor, &x, &step.dx, &c, &jac)?;
        let corrected = &trial + d;
        let mut crng = state.rng.substream(k, OracleKind::ValueCorrection);
        let revalued = estimate_values(problem, &x, &corrected, delta, state.eps, params, &mut crng, false);
        ared = merit_change(revalued.trial, &corrected);
        record.soc = true;
        if ared / pred >= eta {
            accepted = Some(corrected);
        }
    }
    record.ared = Some(ared.as_f64());

    let outcome = match accepted {
        Some(next) => {
            state.x = next;
            state.exact = None;
            state.delta = (gamma * delta).min(lit(config.delta_max));
            if -pred >= state.eps {
                state.eps *= gamma;
                Outcome::SuccessfulReliable
            } else {
                state.eps = (state.eps / gamma).max(eps_floor);
                Outcome::SuccessfulUnreliable
            }
        }
        None => {
            state.delta = delta / gamma;
            state.eps = (state.eps / gamma).max(eps_floor);
            Outcome::UnsuccessfulRejected
        }
    };
    Ok(finish(state, problem, config, record, outcome))
}

fn finish<T: Real, P: Problem<T> + ?Sized>(
    state: &mut SolverState<T>,
    problem: &P,
    config: &SolverConfig,
    mut record: IterationRecord,
    outcome: Outcome,
) -> IterationRecord {
    state.k += 1;
    if state.exact.is_none() {
        state.exact = exact_residuals(problem, &state.x, config.stationarity()).ok().flatten();
    }
    record.outcome = outcome;
    record.delta = state.delta.as_f64();
    record.eps = state.eps.as_f64();
    record.mu = state.mu.as_f64();
    if let Some((kkt, tau)) = state.exact {
        record.kkt_true = Some(kkt);
        record.tau_true = (config.stationarity() == Stationarity::Second).then_some(tau);
    }
    record
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    RadiusFloor,
}

#[derive(Debug, Clone)]
pub struct RunResult<T: Real> {
    pub state: SolverState<T>,
    pub trajectory: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl<T: Real> RunResult<T> {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// Iterates from `x0` until a stopping rule fires.
pub fn run<T: Real, P: Problem<T> + ?Sized>(problem: &P, x0: DVector<T>, config: &SolverConfig) -> Result<RunResult<T>> {
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(SolverError::DimensionMismatch(format!("x0 has length {}, problem dimension is {}", x0.len(), problem.dim())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput("x0"));
    }
    let second = config.stationarity() == Stationarity::Second;
    let use_exact = config.use_true_kkt && problem.noiseless().is_some();
    let mut state = SolverState::new(x0, config);
    if use_exact {
        state.exact = exact_residuals(problem, &state.x, config.stationarity())?;
    }
    let mut trajectory = Vec::new();
    let mut hits = 0usize;
    let stop = loop {
        if use_exact {
            if let Some((kkt, tau)) = state.exact {
                let measure = if second { kkt.max(tau) } else { kkt };
                if measure <= config.kkt_tol {
                    break StopReason::Converged;
                }
            }
        } else if hits >= config.debounce {
            break StopReason::Converged;
        }
        if state.k >= config.max_iters as u64 {
            break StopReason::MaxIterations;
        }
        if state.delta < lit(config.delta_min) {
            break StopReason::RadiusFloor;
        }
        let record = iterate(&mut state, problem, config)?;
        let measure = if second { record.kkt_est.max(record.tau_est) } else { record.kkt_est };
        hits = if measure <= config.kkt_tol { hits + 1 } else { 0 };
        trajectory.push(record);
    };
    Ok(RunResult { state, trajectory, stop })
}
