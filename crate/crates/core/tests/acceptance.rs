//! Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use trsqp::benchmarks::{kkt_residuals, make_logistic, saddle_start, true_kkt, FeatureLaw, Quadratic, Saddle, Scaled, SyntheticLogisticSpec};
use trsqp::estimator::{
    batch_size, build_hessian, estimate_gradient, estimate_values, AccuracyParams, EstimateKind, HessianMemory, HessianStrategy, Stationarity,
};
use trsqp::linalg::ConstraintFactor;
use trsqp::problem::{Constraints, GaussianNoiseSpec, GaussianNoisy, Objective, Problem};
use trsqp::rng::{OracleKind, RngStream, SampleRng};
use trsqp::solver::{run, IterationRecord, Outcome, RunResult, SolverConfig};
use trsqp::steps::{rescaled_residuals, select_step_type, split_radius, normal_step, StepKind};

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn noisy<P>(base: P, variance: f64) -> GaussianNoisy<P> {
    GaussianNoisy::new(base, GaussianNoiseSpec::new(variance).unwrap())
}

fn second_order(seed: u64) -> SolverConfig {
    SolverConfig { seed, ..Default::default() }.with_stationarity(Stationarity::Second)
}

/// Runs collected for the trajectory-level criteria.
#[derive(Default)]
struct Collected {
    runs: Vec<(String, Vec<IterationRecord>)>,
}

impl Collected {
    fn add(&mut self, label: String, result: &RunResult<f64>) {
        self.runs.push((label, result.trajectory.clone()));
    }
}

fn criterion_1(collected: &mut Collected) -> Line {
    let start = Instant::now();
    let p = noisy(Quadratic, 0.0);
    let cfg = SolverConfig { kkt_tol: 1e-6, max_iters: 200, ..Default::default() };
    let res = run(&p, DVector::from_column_slice(&[3.0, -2.0]), &cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (kkt, _) = true_kkt(&p, &res.state.x).unwrap();
    let err = (&res.state.x - DVector::from_column_slice(&[0.5, 0.5])).norm();
    let passed = kkt <= 1e-6 && res.trajectory.len() <= 200 && err <= 1e-5 && elapsed < 1.0;
    collected.add("quadratic".into(), &res);
    Line {
        id: 1,
        name: "deterministic quadratic",
        passed,
        detail: format!("{} iterations, kkt {kkt:.2e}, |x - x*| {err:.2e}, {elapsed:.3}s", res.trajectory.len()),
    }
}

const NOISE_LEVELS: [f64; 4] = [1e-8, 1e-4, 1e-2, 1e-1];
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn criterion_2(collected: &mut Collected) -> Line {
    let start = Instant::now();
    let jobs: Vec<(f64, u64)> = NOISE_LEVELS.iter().flat_map(|&v| SEEDS.iter().map(move |&s| (v, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(var, seed)| {
            let p = noisy(Saddle, var);
            let cfg = SolverConfig { max_iters: 10_000, kkt_tol: 1e-4, ..second_order(seed) };
            let res = run(&p, saddle_start::<f64>(seed), &cfg).unwrap();
            let (kkt, tau) = true_kkt(&p, &res.state.x).unwrap();
            (var, seed, res, kkt.max(tau))
        })
        .collect();
    let elapsed = start.elapsed().as_secs_f64();
    let target = DVector::from_column_slice(&[-1.0, 0.0]);
    let mut ok = 0;
    let mut low_noise_iters = Vec::new();
    let mut failures = Vec::new();
    for (var, seed, res, measure) in &results {
        let dist = (&res.state.x - &target).norm();
        let good = *measure <= 1e-4 && res.trajectory.len() <= 10_000 && dist <= 0.05;
        if good {
            ok += 1;
        } else {
            failures.push(format!("(σ²={var:e}, seed {seed}: measure {measure:.1e}, dist {dist:.2e})"));
        }
        if *var == 1e-8 {
            low_noise_iters.push(res.trajectory.len());
        }
        collected.add(format!("saddle-2nd σ²={var:e} seed {seed}"), res);
    }
    low_noise_iters.sort_unstable();
    let median = low_noise_iters[low_noise_iters.len() / 2];
    let iters: Vec<usize> = results.iter().map(|r| r.2.trajectory.len()).collect();
    let passed = ok == 20 && median <= 300 && elapsed < 120.0;
    Line {
        id: 2,
        name: "saddle escape",
        passed,
        detail: format!(
            "{ok}/20 converged near (-1,0); median iterations at σ²=1e-8: {median}; iterations {iters:?}; {elapsed:.1}s {}",
            failures.join(" ")
        ),
    }
}

fn criterion_3(collected: &mut Collected) -> Line {
    let mut trapped = 0;
    let mut taus = Vec::new();
    for seed in SEEDS {
        let p = noisy(Saddle, 1e-4);
        let cfg = SolverConfig { max_iters: 100, seed, ..Default::default() };
        let res = run(&p, saddle_start::<f64>(seed), &cfg).unwrap();
        // Signed smallest reduced eigenvalue at the final iterate.
        let (_, tau_plus) = kkt_residuals(&p, &Saddle, &res.state.x).unwrap();
        let x = &res.state.x;
        let jac = Constraints::<f64>::jacobian(&Saddle, x);
        let f = ConstraintFactor::new(&jac).unwrap();
        let lam = f.multiplier(&Objective::<f64>::gradient(&Saddle, x)).unwrap()[0];
        let z = f.nullspace().z;
        let h = Objective::<f64>::hessian(&Saddle, x) + DMatrix::identity(2, 2) * (2.0 * lam);
        let tau = (z.transpose() * h * z)[(0, 0)];
        debug_assert!((tau_plus - (-tau).max(0.0)).abs() < 1e-9);
        if tau <= -0.5 {
            trapped += 1;
        }
        taus.push(format!("{tau:.3}"));
        collected.add(format!("saddle-1st seed {seed}"), &res);
    }
    Line { id: 3, name: "saddle trapping (first order, Id)", passed: trapped >= 4, detail: format!("{trapped}/5 with τ ≤ -0.5; final τ {taus:?}") }
}

fn criterion_4(collected: &mut Collected) -> Line {
    let start = Instant::now();
    let spec = SyntheticLogisticSpec::new(FeatureLaw::Normal);
    let results: Vec<_> = SEEDS
        .par_iter()
        .map(|&seed| {
            let p = make_logistic::<f64>(&spec, seed).unwrap();
            let cfg = SolverConfig { max_iters: 10_000, kkt_tol: 1e-4, ..second_order(seed) };
            let res = run(&p, DVector::zeros(spec.dim), &cfg).unwrap();
            (seed, res)
        })
        .collect();
    let mut ok = 0;
    let mut details = Vec::new();
    for (seed, res) in &results {
        let kkts: Vec<f64> = res.trajectory.iter().filter_map(|r| r.kkt_true).collect();
        let first = kkts.first().copied().unwrap_or(f64::NAN);
        let best = kkts.iter().copied().fold(f64::INFINITY, f64::min);
        let reached = best <= 1e-2;
        let decay = first / best;
        if reached && decay >= 100.0 {
            ok += 1;
        }
        details.push(format!("seed {seed}: {} it, kkt {first:.2e} -> {best:.2e}", res.trajectory.len()));
        collected.add(format!("logistic seed {seed}"), res);
    }
    Line {
        id: 4,
        name: "logistic regression (normal)",
        passed: ok >= 4,
        detail: format!("{ok}/5 pass; {}; {:.1}s", details.join("; "), start.elapsed().as_secs_f64()),
    }
}

/// Long noisy saddle run used for the radius-decay property.
fn long_run(collected: &mut Collected) -> f64 {
    let p = noisy(Saddle, 1e-2);
    let cfg = SolverConfig { max_iters: 5_000, kkt_tol: 0.0, delta_min: 0.0, ..second_order(11) };
    let res = run(&p, saddle_start::<f64>(11), &cfg).unwrap();
    let n = res.trajectory.len();
    let mut tail: Vec<f64> = res.trajectory[n - n / 10..].iter().map(|r| r.delta).collect();
    tail.sort_by(f64::total_cmp);
    collected.add("saddle-long".into(), &res);
    if n < 5_000 {
        return f64::NAN;
    }
    tail[tail.len() / 2]
}

fn criterion_5(collected: &Collected) -> Line {
    let mut iterations = 0;
    let mut steps = 0;
    let mut violations: Vec<String> = Vec::new();
    for (label, traj) in &collected.runs {
        for r in traj {
            iterations += 1;
            if let Some(d) = r.diagnostics {
                steps += 1;
                for v in d.violations() {
                    if violations.len() < 10 {
                        violations.push(format!("{label} k={}: {v}", r.k));
                    } else {
                        violations.push(String::new());
                    }
                }
            }
            let discipline = match r.outcome {
                Outcome::SuccessfulReliable => r.delta == (1.5 * r.delta_prev).min(5.0) && r.eps == r.eps_prev * 1.5,
                Outcome::SuccessfulUnreliable => r.delta == (1.5 * r.delta_prev).min(5.0),
                Outcome::UnsuccessfulLine6 | Outcome::UnsuccessfulRejected => r.delta == r.delta_prev / 1.5 && r.eps == (r.eps_prev / 1.5).max(1e-300),
            };
            if !discipline {
                violations.push(format!("{label} k={}: update discipline", r.k));
            }
        }
    }
    let shown: Vec<&String> = violations.iter().filter(|s| !s.is_empty()).collect();
    Line {
        id: 5,
        name: "per-iteration invariants",
        passed: violations.is_empty() && iterations >= 10_000,
        detail: format!("{iterations} iterations, {steps} steps audited, {} violations {shown:?}", violations.len()),
    }
}

struct Freq {
    misses: usize,
    trials: usize,
}

impl Freq {
    fn rate(&self) -> f64 {
        self.misses as f64 / self.trials as f64
    }
}

fn criterion_6() -> Line {
    let var = 1e-2;
    let p = noisy(Saddle, var);
    let x = DVector::from_column_slice(&[0.6, 0.8]);
    let trial = DVector::from_column_slice(&[0.5, 0.7]);
    let stream = RngStream::new(21);
    let trials = 1000;
    let mut details = Vec::new();
    let mut passed = true;
    for stationarity in [Stationarity::First, Stationarity::Second] {
        let params = AccuracyParams { batch_cap: usize::MAX, stationarity, ..Default::default() };
        let alpha = params.alpha();
        for (delta, eps) in [(1.0, 1.0), (0.5, 1e-4)] {
            let (mut fh, mut fg, mut ff) = (Freq { misses: 0, trials }, Freq { misses: 0, trials }, Freq { misses: 0, trials });
            let mut second_moment = 0.0;
            let g = Objective::<f64>::gradient(&Saddle, &x);
            let h = Objective::<f64>::hessian(&Saddle, &x);
            let (f_k, f_s) = (Objective::<f64>::value(&Saddle, &x), Objective::<f64>::value(&Saddle, &trial));
            let value_tol = params.kappa_f * f64::powi(delta, alpha + 2);
            for t in 0..trials as u64 {
                let mut rng = stream.substream(t, OracleKind::Gradient { attempt: 0 });
                let (est, _) = estimate_gradient(&p, &x, delta, &params, &mut rng);
                if (est - &g).norm() > params.kappa_g * f64::powi(delta, alpha + 1) {
                    fg.misses += 1;
                }
                let mut rng = stream.substream(t, OracleKind::Hessian);
                let hb = batch_size(EstimateKind::Hessian, delta, eps, &params);
                let est = p.sample_hessian(&x, hb, &mut rng);
                if (est - &h).norm() > params.kappa_h * delta {
                    fh.misses += 1;
                }
                let mut rng = stream.substream(t, OracleKind::Value);
                let vals = estimate_values(&p, &x, &trial, delta, eps, &params, &mut rng, true);
                let ek = vals.current.unwrap() - f_k;
                let es = vals.trial - f_s;
                if ek.abs() > value_tol || es.abs() > value_tol {
                    ff.misses += 1;
                }
                second_moment += (ek * ek).max(es * es);
            }
            second_moment /= trials as f64;
            let ok = fh.rate() <= params.p_h && fg.rate() <= params.p_g && ff.rate() <= params.p_f && second_moment <= eps * eps;
            passed &= ok;
            details.push(format!(
                "α={alpha} Δ={delta} ε̄={eps}: fail(H,g,f)=({:.3},{:.3},{:.3}) E|f̄-f|²={second_moment:.1e}",
                fh.rate(),
                fg.rate(),
                ff.rate()
            ));
        }
    }
    Line { id: 6, name: "estimator statistics", passed, detail: details.join("; ") }
}

fn criterion_7(collected: &Collected, long_median: f64) -> Line {
    let mut unstable = Vec::new();
    for (label, traj) in &collected.runs {
        let n = traj.len();
        if n == 0 {
            continue;
        }
        let last = traj[n - 1].mu;
        if traj[n / 2..].iter().any(|r| r.mu != last) {
            unstable.push(label.clone());
        }
    }
    let passed = unstable.is_empty() && long_median < 0.1;
    Line {
        id: 7,
        name: "merit stabilization and radius decay",
        passed,
        detail: format!("{} runs with late μ̄ changes {unstable:?}; long-run median Δ {long_median:.2e}", unstable.len()),
    }
}

fn step_signature<P: Problem<f64>>(p: &P, x: &DVector<f64>, delta: f64) -> (f64, f64, f64, StepKind) {
    let params = AccuracyParams { stationarity: Stationarity::Second, ..Default::default() };
    let c = p.constraints(x);
    let jac = p.jacobian(x);
    let factor = ConstraintFactor::new(&jac).unwrap();
    let basis = factor.nullspace();
    let mut rng = RngStream::new(0).substream(0, OracleKind::Gradient { attempt: 0 });
    let (grad, _) = estimate_gradient(p, x, delta, &params, &mut rng);
    let lam = factor.multiplier(&grad).unwrap();
    let lgrad = &grad + jac.transpose() * &lam;
    let mut memory = HessianMemory::new();
    let hess = build_hessian(HessianStrategy::EstHessian, &mut memory, p, x, &lam, &lgrad, &basis, delta, &params, &mut rng).unwrap();
    let kkt = lgrad.norm().hypot(c.norm());
    let kind = select_step_type(kkt, hess.h_norm, hess.tau_plus, c.norm(), delta);
    let rs = rescaled_residuals(&c, factor.norm(), &lgrad, hess.h_norm).unwrap();
    let other = match kind {
        StepKind::Gradient => rs.optimality.norm(),
        StepKind::Eigen => hess.tau_plus / hess.h_norm,
    };
    let split = split_radius(kind, delta, rs.feasibility.norm(), other).unwrap();
    let normal = normal_step(&factor, &c, split.normal).unwrap();
    (normal.gamma, split.normal / delta, split.tangential / delta, kind)
}

fn criterion_8() -> Line {
    let mut rng = SampleRng::seed_from_u64(8);
    let mut ratio_mismatch = 0;
    let mut selector_mismatch = 0;
    let mut ratio_mismatch_same_kind = 0;
    let states = 100;
    for _ in 0..states {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let radius = rng.random_range(0.5..1.5);
        let x = DVector::from_column_slice(&[radius * theta.cos(), radius * theta.sin()]);
        let delta = rng.random_range(0.01..5.0);
        let sigs: Vec<_> = [1e-3, 1.0, 1e3].iter().map(|&s| step_signature(&noisy(Scaled { inner: Saddle, scale: s }, 0.0), &x, delta)).collect();
        let base = sigs[1];
        for s in [&sigs[0], &sigs[2]] {
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
            if !(close(s.0, base.0) && close(s.1, base.1) && close(s.2, base.2)) {
                ratio_mismatch += 1;
                if s.3 == base.3 {
                    ratio_mismatch_same_kind += 1;
                }
            }
            if s.3 != base.3 {
                selector_mismatch += 1;
            }
        }
    }
    Line {
        id: 8,
        name: "scale invariance",
        passed: ratio_mismatch == 0 && selector_mismatch == 0,
        detail: format!("{states} states x 2 scales: {ratio_mismatch} split/γ̄ mismatches, {selector_mismatch} step-type mismatches, {ratio_mismatch_same_kind} split/γ̄ mismatches with equal step type"),
    }
}

fn criterion_9() -> Line {
    let render = |seed: u64| {
        let p = noisy(Saddle, 1e-2);
        let cfg = SolverConfig { max_iters: 500, ..second_order(seed) };
        let res = run(&p, saddle_start::<f64>(seed), &cfg).unwrap();
        let mut buf = Vec::new();
        trsqp::report::write_trajectory(&mut buf, &res.trajectory).unwrap();
        buf
    };
    let (a, b) = (render(3), render(3));
    let p = make_logistic::<f64>(&SyntheticLogisticSpec { records: 600, ..SyntheticLogisticSpec::new(FeatureLaw::Exponential) }, 2).unwrap();
    let logistic = |_: ()| {
        let res = run(&p, DVector::zeros(15), &SolverConfig { max_iters: 200, ..second_order(2) }).unwrap();
        let mut buf = Vec::new();
        trsqp::report::write_trajectory(&mut buf, &res.trajectory).unwrap();
        buf
    };
    let (c, d) = (logistic(()), logistic(()));
    Line {
        id: 9,
        name: "determinism",
        passed: a == b && c == d && !a.is_empty(),
        detail: format!("saddle CSV {} bytes identical: {}; logistic CSV {} bytes identical: {}", a.len(), a == b, c.len(), c == d),
    }
}

fn main() {
    let total = Instant::now();
    let mut collected = Collected::default();
    let mut lines = vec![criterion_1(&mut collected), criterion_2(&mut collected), criterion_3(&mut collected), criterion_4(&mut collected)];
    let long_median = long_run(&mut collected);
    lines.push(criterion_5(&collected));
    lines.push(criterion_6());
    lines.push(criterion_7(&collected, long_median));
    lines.push(criterion_8());
    lines.push(criterion_9());
    lines.sort_by_key(|l| l.id);
    let mut failed = 0;
    for l in &lines {
        println!("criterion {} [{}]: {} ({})", l.id, l.name, if l.passed { "PASS" } else { "FAIL" }, l.detail);
        failed += usize::from(!l.passed);
    }
    println!("acceptance: {}/{} passed in {:.1}s", lines.len() - failed, lines.len(), total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
