//! Built-in test problems: the circle-constrained saddle, an equality
//! constrained quadratic, synthetic constrained logistic regression, and a
//! noiseless KKT/curvature evaluator.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::linalg::{smallest_eigpair, ConstraintFactor, RANK_TOLERANCE};
use crate::problem::{finite_sum_problem, AffineConstraints, Constraints, FiniteSum, LogisticLoss, Objective, Problem};
use crate::rng::SampleRng;
use crate::scalar::{lit, Real};

/// `f(x) = 2x₁ + ½x₂²` on the unit circle `x₁² + x₂² = 1`.
///
/// Local minimum at `(−1, 0)`, saddle at `(1, 0)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Saddle;

impl<T: Real> Constraints<T> for Saddle {
    fn dim(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, x[0] * x[0] + x[1] * x[1] - T::one())
    }
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        let two = lit::<T>(2.0);
        DMatrix::from_row_slice(1, 2, &[two * x[0], two * x[1]])
    }
    fn constraint_hessians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        vec![DMatrix::identity(2, 2) * lit::<T>(2.0)]
    }
}

impl<T: Real> Objective<T> for Saddle {
    fn value(&self, x: &DVector<T>) -> T {
        lit::<T>(2.0) * x[0] + lit::<T>(0.5) * x[1] * x[1]
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_column_slice(&[lit(2.0), x[1]])
    }
    fn hessian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[T::zero(), T::one()]))
    }
}

/// `f(x) = ½‖x‖²` subject to `x₁ + x₂ = 1`; solution `(½, ½)`, `λ = −½`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Quadratic;

impl<T: Real> Constraints<T> for Quadratic {
    fn dim(&self) -> usize {
        2
    }
    fn num_constraints(&self) -> usize {
        1
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_element(1, x[0] + x[1] - T::one())
    }
    fn jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_element(1, 2, T::one())
    }
    fn constraint_hessians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        vec![DMatrix::zeros(2, 2)]
    }
}

impl<T: Real> Objective<T> for Quadratic {
    fn value(&self, x: &DVector<T>) -> T {
        lit::<T>(0.5) * x.norm_squared()
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        x.clone()
    }
    fn hessian(&self, _x: &DVector<T>) -> DMatrix<T> {
        DMatrix::identity(2, 2)
    }
}

/// Objective multiplied by a positive constant; constraints untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaled<P, T> {
    pub inner: P,
    pub scale: T,
}

impl<T: Real, P: Constraints<T>> Constraints<T> for Scaled<P, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        self.inner.constraints(x)
    }
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.inner.jacobian(x)
    }
    fn constraint_hessians(&self, x: &DVector<T>) -> Vec<DMatrix<T>> {
        self.inner.constraint_hessians(x)
    }
}

impl<T: Real, P: Objective<T>> Objective<T> for Scaled<P, T> {
    fn value(&self, x: &DVector<T>) -> T {
        self.inner.value(x) * self.scale
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.inner.gradient(x) * self.scale
    }
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.inner.hessian(x) * self.scale
    }
}

/// Uniform draw from the disc of radius `radius` around `center` (2-D).
pub fn uniform_in_disc<T: Real>(center: &DVector<T>, radius: f64, rng: &mut impl Rng) -> DVector<T> {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    let mut x = center.clone();
    x[0] += lit::<T>(r * theta.cos());
    x[1] += lit::<T>(r * theta.sin());
    x
}

/// Start near the saddle `(1, 0)`, uniform within distance `0.01`.
pub fn saddle_start<T: Real>(seed: u64) -> DVector<T> {
    let mut rng = SampleRng::seed_from_u64(seed ^ 0x5AD0_1E00);
    uniform_in_disc(&DVector::from_column_slice(&[T::one(), T::zero()]), 0.01, &mut rng)
}

/// Class-conditional feature law of the synthetic logistic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureLaw {
    /// `N(0,1)` for label `+1`, `N(5,1)` for label `−1`.
    Normal,
    /// `Exp(1)` for label `+1`, `5 + Exp(1)` for label `−1`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogisticSpec {
    pub dim: usize,
    pub records: usize,
    pub num_constraints: usize,
    pub law: FeatureLaw,
}

impl SyntheticLogisticSpec {
    pub const FULL_RECORDS: usize = 60_000;

    pub fn new(law: FeatureLaw) -> Self {
        Self { dim: 15, records: 6_000, num_constraints: 5, law }
    }

    pub fn full_size(self) -> Self {
        Self { records: Self::FULL_RECORDS, ..self }
    }
}

pub type LogisticProblem<T> = FiniteSum<LogisticLoss<T>, AffineConstraints<T>>;

const MAX_RANK_RETRIES: usize = 100;

/// Standard-normal `A ∈ R^{m×d}` with full row rank, and `b ∈ R^m`.
pub fn random_affine_constraints<T: Real>(m: usize, d: usize, rng: &mut impl Rng) -> Result<AffineConstraints<T>> {
    if m == 0 || m >= d {
        return Err(SolverError::DatasetGenerationFailed(format!("need 0 < m < d, got m={m}, d={d}")));
    }
    for _ in 0..MAX_RANK_RETRIES {
        let a = DMatrix::<T>::from_fn(m, d, |_, _| lit(rng.sample::<f64, _>(StandardNormal)));
        let b = DVector::<T>::from_fn(m, |_, _| lit(rng.sample::<f64, _>(StandardNormal)));
        if ConstraintFactor::new(&a).is_ok() {
            return Ok(AffineConstraints { a, b });
        }
    }
    Err(SolverError::DatasetGenerationFailed(format!(
        "no full-rank constraint matrix after {MAX_RANK_RETRIES} draws (tolerance {RANK_TOLERANCE})"
    )))
}

/// Balanced synthetic dataset with random affine constraints; start at `x₀ = 0`.
pub fn make_logistic<T: Real>(spec: &SyntheticLogisticSpec, seed: u64) -> Result<LogisticProblem<T>> {
    if spec.records == 0 || spec.dim == 0 {
        return Err(SolverError::EmptyDataset);
    }
    let mut rng = SampleRng::seed_from_u64(seed);
    let positives = spec.records / 2;
    let labels = DVector::<T>::from_fn(spec.records, |i, _| if i < positives { T::one() } else { -T::one() });
    let mut features = DMatrix::<T>::zeros(spec.records, spec.dim);
    for i in 0..spec.records {
        let shift = if i < positives { 0.0 } else { 5.0 };
        for j in 0..spec.dim {
            let draw: f64 = match spec.law {
                FeatureLaw::Normal => rng.sample(StandardNormal),
                FeatureLaw::Exponential => Exp1.sample(&mut rng),
            };
            features[(i, j)] = lit(shift + draw);
        }
    }
    let constraints = random_affine_constraints(spec.num_constraints, spec.dim, &mut rng)?;
    finite_sum_problem(LogisticLoss::new(features, labels)?, constraints)
}

/// Logistic problem over a loaded dataset with random affine constraints.
pub fn logistic_from_data<T: Real>(features: DMatrix<T>, labels: DVector<T>, num_constraints: usize, seed: u64) -> Result<LogisticProblem<T>> {
    let mut rng = SampleRng::seed_from_u64(seed);
    let constraints = random_affine_constraints(num_constraints, features.ncols(), &mut rng)?;
    finite_sum_problem(LogisticLoss::new(features, labels)?, constraints)
}

/// Exact KKT residual `‖(∇f + Gᵀλ, c)‖` and reduced negative curvature `τ⁺`
/// with least-squares multipliers.
pub fn true_kkt<T: Real, P: Problem<T> + ?Sized>(problem: &P, x: &DVector<T>) -> Result<(T, T)> {
    let objective = problem.noiseless().ok_or(SolverError::MissingNoiselessOracle)?;
    kkt_residuals(problem, objective, x)
}

pub fn kkt_residuals<T: Real, C: Constraints<T> + ?Sized, O: Objective<T> + ?Sized>(constraints: &C, objective: &O, x: &DVector<T>) -> Result<(T, T)> {
    let g = objective.gradient(x);
    let jac = constraints.jacobian(x);
    let c = constraints.constraints(x);
    let factor = ConstraintFactor::new(&jac)?;
    let lam = factor.multiplier(&g)?;
    let lgrad = &g + jac.transpose() * &lam;
    let kkt = lgrad.norm().hypot(c.norm());
    let basis = factor.nullspace();
    if basis.dim() == 0 {
        return Ok((kkt, T::zero()));
    }
    let mut h = objective.hessian(x);
    for (l, ch) in lam.iter().zip(constraints.constraint_hessians(x)) {
        h += ch * *l;
    }
    let (tau, _) = smallest_eigpair(&basis.reduce(&h))?;
    Ok((kkt, (-tau).max(T::zero())))
}

/// Largest central-difference discrepancies of the gradient and Hessian at `x`,
/// each relative to `max(1, ‖reference‖_max)`.
pub fn finite_difference_errors<T: Real, O: Objective<T> + ?Sized>(objective: &O, x: &DVector<T>, h: T) -> (T, T) {
    let d = x.len();
    let g = objective.gradient(x);
    let hess = objective.hessian(x);
    let two_h = h + h;
    let mut grad_err = T::zero();
    let mut hess_err = T::zero();
    let gscale = g.amax().max(T::one());
    let hscale = hess.amax().max(T::one());
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let fd = (objective.value(&xp) - objective.value(&xm)) / two_h;
        grad_err = grad_err.max((fd - g[j]).abs() / gscale);
        let col = (objective.gradient(&xp) - objective.gradient(&xm)) / two_h;
        for i in 0..d {
            hess_err = hess_err.max((col[i] - hess[(i, j)]).abs() / hscale);
        }
    }
    (grad_err, hess_err)
}
