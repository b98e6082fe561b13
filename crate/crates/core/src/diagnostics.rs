//! Self-check suite: finite differences, estimator frequencies, step
//! invariants and short solver runs, reported as a pass/fail table.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::benchmarks::{finite_difference_errors, make_logistic, saddle_start, FeatureLaw, Quadratic, Saddle, SyntheticLogisticSpec};
use crate::estimator::{batch_size, estimate_gradient, AccuracyParams, EstimateKind, HessianEstimate, Stationarity};
use crate::linalg::{cauchy_decrease_bound, operator_norm, quadratic_model, smallest_eigpair, symmetrize, trs_solve, ConstraintFactor, TrsMethod};
use crate::problem::{GaussianNoiseSpec, GaussianNoisy, Objective, Problem};
use crate::rng::{OracleKind, RngStream, SampleRng};
use crate::solver::{run, SolverConfig};
use crate::steps::{compute_trial_step, meets_threshold, pred_threshold, predicted_reduction, raise_merit, PredParts, StepContext, StepKind};

pub const MODULES: [&str; 5] = ["linalg", "problem", "estimator", "steps", "solver"];

/// Deliberate defects used to confirm that the checks can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Flips the sign of the curvature term of the predicted reduction used by the merit loop.
    PredCurvatureSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn result(module: &'static str, name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { module, name, passed, detail }
}

/// Runs every check whose module matches `filter` (all when `None`).
pub fn run_checks(filter: Option<&str>, fault: Fault) -> Vec<CheckResult> {
    let wants = |m: &str| filter.is_none_or(|f| f == m);
    let mut out = Vec::new();
    if wants("linalg") {
        out.push(check_nullspace());
        out.push(check_trs());
    }
    if wants("problem") {
        out.push(check_finite_differences());
        out.push(check_noise_moments());
    }
    if wants("estimator") {
        out.push(check_gradient_accuracy());
        out.push(check_multiplier_residual());
    }
    if wants("steps") {
        out.push(check_step_invariants());
        out.push(check_pred_threshold(fault));
    }
    if wants("solver") {
        out.push(check_quadratic_run());
        out.push(check_saddle_escape());
    }
    out
}

fn random_matrix(rows: usize, cols: usize, rng: &mut SampleRng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_vector(n: usize, rng: &mut SampleRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn check_nullspace() -> CheckResult {
    let mut rng = SampleRng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(2..9);
        let m = rng.random_range(1..d);
        let g = random_matrix(m, d, &mut rng);
        let Ok(f) = ConstraintFactor::new(&g) else { continue };
        let z = f.nullspace().z;
        let orth = (z.transpose() * &z - DMatrix::identity(d - m, d - m)).amax();
        let kernel = (&g * &z).amax();
        worst = worst.max(orth).max(kernel);
    }
    result("linalg", "nullspace-orthonormal-kernel", worst <= 1e-10, format!("max residual {worst:.2e}"))
}

fn check_trs() -> CheckResult {
    let mut rng = SampleRng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..7);
        let h = symmetrize(&random_matrix(n, n, &mut rng));
        let g = random_vector(n, &mut rng);
        let radius = rng.random_range(0.05..3.0);
        for method in [TrsMethod::Exact, TrsMethod::Dogleg, TrsMethod::Steihaug] {
            let Ok(u) = trs_solve(&h, &g, radius, method) else {
                failures += 1;
                continue;
            };
            let bound = cauchy_decrease_bound(g.norm(), operator_norm(&h), radius, 1.0);
            let m = quadratic_model(&h, &g, &u);
            let scale = g.norm() * radius + operator_norm(&h) * radius * radius;
            if u.norm() > radius * (1.0 + 1e-12) || m > bound + 1e-10 * scale {
                failures += 1;
            }
        }
    }
    result("linalg", "trs-cauchy-fraction", failures == 0, format!("{failures} failures over 600 solves"))
}

fn check_finite_differences() -> CheckResult {
    let spec = SyntheticLogisticSpec { dim: 5, records: 50, num_constraints: 2, law: FeatureLaw::Normal };
    let logistic = match make_logistic::<f64>(&spec, 3) {
        Ok(p) => p,
        Err(e) => return result("problem", "finite-differences", false, e.to_string()),
    };
    let mut rng = SampleRng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x2 = random_vector(2, &mut rng);
        let x5 = random_vector(5, &mut rng) * 0.3;
        for (ge, he) in [
            finite_difference_errors(&Saddle, &x2, 1e-6),
            finite_difference_errors(&Quadratic, &x2, 1e-6),
            finite_difference_errors(&logistic, &x5, 1e-6),
        ] {
            worst = worst.max(ge).max(he);
        }
    }
    result("problem", "finite-differences", worst <= 1e-5, format!("max relative error {worst:.2e}"))
}

fn check_noise_moments() -> CheckResult {
    let var = 1e-2;
    let p = GaussianNoisy::new(Saddle, GaussianNoiseSpec { variance: var });
    let x = DVector::from_column_slice(&[0.3, -0.2]);
    let f = Objective::<f64>::value(&Saddle, &x);
    let mut rng = RngStream::new(4).substream(0, OracleKind::Auxiliary(0));
    let n = 10_000;
    let draws: Vec<f64> = (0..n).map(|_| p.sample_value(&x, 1, &mut rng)).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sample_var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let ok = (mean - f).abs() <= 4.0 * var.sqrt() / (n as f64).sqrt() && (sample_var / var - 1.0).abs() <= 0.1;
    result("problem", "gaussian-value-moments", ok, format!("mean error {:.2e}, variance ratio {:.3}", mean - f, sample_var / var))
}

fn check_gradient_accuracy() -> CheckResult {
    let p = GaussianNoisy::new(Saddle, GaussianNoiseSpec { variance: 1e-2 });
    let params = AccuracyParams { batch_cap: usize::MAX, ..Default::default() };
    let x = DVector::from_column_slice(&[0.6, 0.8]);
    let g = Objective::<f64>::gradient(&Saddle, &x);
    let stream = RngStream::new(5);
    let trials = 1000;
    let delta = 1.0;
    let mut misses = 0;
    for t in 0..trials {
        let mut rng = stream.substream(t, OracleKind::Gradient { attempt: 0 });
        let (est, _) = estimate_gradient(&p, &x, delta, &params, &mut rng);
        if (est - &g).norm() > params.kappa_g * delta {
            misses += 1;
        }
    }
    let rate = misses as f64 / trials as f64;
    let batch = batch_size(EstimateKind::Gradient, delta, 1.0, &params);
    result("estimator", "gradient-accuracy-frequency", rate <= params.p_g, format!("failure rate {rate:.3} at batch {batch}"))
}

fn check_multiplier_residual() -> CheckResult {
    let mut rng = SampleRng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let g = random_matrix(2, 5, &mut rng);
        let grad = random_vector(5, &mut rng);
        let Ok(f) = ConstraintFactor::new(&g) else { continue };
        let Ok(lam) = f.multiplier(&grad) else { continue };
        worst = worst.max((&g * (&grad + g.transpose() * lam)).amax());
    }
    result("estimator", "multiplier-projected-residual", worst <= 1e-10, format!("max |G ∇L| {worst:.2e}"))
}

/// A random step-construction instance.
struct Instance {
    g: DMatrix<f64>,
    factor: ConstraintFactor<f64>,
    c: DVector<f64>,
    grad: DVector<f64>,
    lgrad: DVector<f64>,
    hess: HessianEstimate<f64>,
    delta: f64,
}

fn random_instance(rng: &mut SampleRng, positive_definite: bool) -> Option<Instance> {
    let d = rng.random_range(3..8);
    let m = rng.random_range(1..d);
    let g = random_matrix(m, d, rng);
    let factor = ConstraintFactor::new(&g).ok()?;
    let basis = factor.nullspace();
    let mut h = symmetrize(&random_matrix(d, d, rng));
    if positive_definite {
        h = &h * &h + DMatrix::identity(d, d) * 0.1;
    }
    let c = random_vector(m, rng);
    let grad = random_vector(d, rng);
    let lgrad = &grad + g.transpose() * factor.multiplier(&grad).ok()?;
    let (tau, zeta) = smallest_eigpair(&basis.reduce(&h)).ok()?;
    let hess = HessianEstimate { h_norm: operator_norm(&h), h, tau: Some(tau), tau_plus: (-tau).max(0.0), eigvec: Some(zeta), batch: 0 };
    Some(Instance { g, factor, c, grad, lgrad, hess, delta: rng.random_range(0.05..3.0) })
}

fn check_step_invariants() -> CheckResult {
    let mut rng = SampleRng::seed_from_u64(7);
    let mut violations = 0;
    let mut count = 0;
    for i in 0..400 {
        let Some(inst) = random_instance(&mut rng, false) else { continue };
        let basis = inst.factor.nullspace();
        let kind = if i % 2 == 0 || inst.hess.tau_plus == 0.0 { StepKind::Gradient } else { StepKind::Eigen };
        let ctx = StepContext {
            grad: &inst.grad,
            lagrangian_grad: &inst.lgrad,
            c: &inst.c,
            jacobian: &inst.g,
            factor: &inst.factor,
            basis: &basis,
            hessian: &inst.hess,
            delta: inst.delta,
            kappa_fcd: 1.0,
            method: TrsMethod::Auto,
        };
        let Ok(step) = compute_trial_step(kind, &ctx) else {
            violations += 1;
            continue;
        };
        count += 1;
        let d2 = inst.delta * inst.delta;
        let split_ok = (step.split.normal.powi(2) + step.split.tangential.powi(2) - d2).abs() <= 1e-10 * d2;
        let norm_ok = step.dx.norm() <= inst.delta * (1.0 + 1e-10);
        let lin = (&inst.c + &inst.g * &step.dx).norm();
        let scale = inst.c.norm() + inst.factor.norm() * step.dx.norm();
        let lin_ok = (lin - (1.0 - step.normal.gamma) * inst.c.norm()).abs() <= 1e-8 * scale;
        if !(split_ok && norm_ok && lin_ok && step.certificate.holds()) {
            violations += 1;
        }
    }
    result("steps", "step-invariants", violations == 0 && count > 0, format!("{violations} violations over {count} steps"))
}

fn check_pred_threshold(fault: Fault) -> CheckResult {
    let mut rng = SampleRng::seed_from_u64(8);
    let mut violations = 0;
    let mut count = 0;
    for _ in 0..200 {
        let Some(inst) = random_instance(&mut rng, true) else { continue };
        let basis = inst.factor.nullspace();
        let kkt = inst.lgrad.norm().hypot(inst.c.norm());
        let ctx = StepContext {
            grad: &inst.grad,
            lagrangian_grad: &inst.lgrad,
            c: &inst.c,
            jacobian: &inst.g,
            factor: &inst.factor,
            basis: &basis,
            hessian: &inst.hess,
            delta: inst.delta,
            kappa_fcd: 1.0,
            method: TrsMethod::Auto,
        };
        let Ok(step) = compute_trial_step(StepKind::Gradient, &ctx) else { continue };
        let mut parts = PredParts::new(&inst.grad, &inst.hess.h, &inst.c, &inst.g, &step.dx);
        if fault == Fault::PredCurvatureSign {
            parts.model = inst.grad.dot(&step.dx) - 0.5 * step.dx.dot(&(&inst.hess.h * &step.dx));
        }
        let threshold = pred_threshold(kkt, inst.hess.h_norm, inst.hess.tau_plus, inst.c.norm(), inst.delta, 1.0);
        let Ok((mu, _)) = raise_merit(1.0, 1.2, 100, threshold, &parts) else {
            violations += 1;
            continue;
        };
        count += 1;
        let pred = predicted_reduction(&inst.grad, &inst.hess.h, mu, &inst.c, &inst.g, &step.dx);
        if !meets_threshold(pred, threshold, parts.slack(mu, threshold)) {
            violations += 1;
        }
    }
    result("steps", "pred-threshold", violations == 0 && count > 0, format!("{violations} violations over {count} steps"))
}

fn check_quadratic_run() -> CheckResult {
    let p = GaussianNoisy::new(Quadratic, GaussianNoiseSpec { variance: 0.0 });
    let cfg = SolverConfig { kkt_tol: 1e-6, max_iters: 200, ..Default::default() };
    match run(&p, DVector::from_column_slice(&[2.0, -1.0]), &cfg) {
        Ok(res) => {
            let err = (&res.state.x - DVector::from_column_slice(&[0.5, 0.5])).norm();
            let clean = res.trajectory.iter().filter_map(|r| r.diagnostics).all(|d| d.violations().is_empty());
            let ok = res.converged() && err <= 1e-5 && clean;
            result("solver", "quadratic-converges", ok, format!("{} iterations, error {err:.2e}", res.trajectory.len()))
        }
        Err(e) => result("solver", "quadratic-converges", false, e.to_string()),
    }
}

fn check_saddle_escape() -> CheckResult {
    let p = GaussianNoisy::new(Saddle, GaussianNoiseSpec { variance: 1e-8 });
    let cfg = SolverConfig { seed: 0, ..Default::default() }.with_stationarity(Stationarity::Second);
    match run(&p, saddle_start(0), &cfg) {
        Ok(res) => {
            let err = (&res.state.x - DVector::from_column_slice(&[-1.0, 0.0])).norm();
            let ok = res.converged() && err <= 0.05;
            result("solver", "saddle-escape", ok, format!("{} iterations, distance to minimum {err:.2e}", res.trajectory.len()))
        }
        Err(e) => result("solver", "saddle-escape", false, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let results = run_checks(None, Fault::None);
        for r in &results {
            assert!(r.passed, "{} {}: {}", r.module, r.name, r.detail);
        }
        assert_eq!(results.len(), 10);
    }

    #[test]
    fn fault_breaks_pred_threshold() {
        let results = run_checks(Some("steps"), Fault::PredCurvatureSign);
        assert_eq!(results.len(), 2);
        let pred = results.iter().find(|r| r.name == "pred-threshold").unwrap();
        assert!(!pred.passed);
    }
}
