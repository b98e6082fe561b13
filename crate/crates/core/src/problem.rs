//! Problem oracles: deterministic equality constraints and a stochastic
//! objective sampled in batches.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SolverError};
use crate::rng::SampleRng;
use crate::scalar::{lit, Real};

/// Deterministic constraints `c(x) = 0`.
pub trait Constraints<T: Real>: Send + Sync {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn constraints(&self, x: &DVector<T>) -> DVector<T>;
    /// Jacobian `G(x)`, `m × d`.
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T>;
    /// `∇²cⁱ(x)` for `i = 1..m`.
    fn constraint_hessians(&self, x: &DVector<T>) -> Vec<DMatrix<T>>;
}

/// Exact (noiseless) objective oracle.
pub trait Objective<T: Real>: Send + Sync {
    fn value(&self, x: &DVector<T>) -> T;
    fn gradient(&self, x: &DVector<T>) -> DVector<T>;
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T>;
}

/// Equality-constrained problem with a sampled objective.
///
/// Every `sample_*` method returns the mean over `batch` realizations drawn
/// from `rng`.
pub trait Problem<T: Real>: Constraints<T> {
    fn sample_value(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> T;
    /// Means at `x` and `y` over one shared sample set.
    fn sample_value_pair(&self, x: &DVector<T>, y: &DVector<T>, batch: usize, rng: &mut SampleRng) -> (T, T);
    fn sample_gradient(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DVector<T>;
    fn sample_hessian(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DMatrix<T>;
    /// Exact objective, when the problem has one (benchmarking only).
    fn noiseless(&self) -> Option<&dyn Objective<T>>;
}

/// Gaussian noise-injection variance `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseSpec {
    pub variance: f64,
}

impl GaussianNoiseSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(SolverError::InvalidConfig(format!("noise variance {variance} must be finite and >= 0")));
        }
        Ok(Self { variance })
    }
}

/// Wraps an exact problem and perturbs its objective samples:
/// `F ~ N(f, σ²)`, `∇F ~ N(∇f, σ²(I + 11ᵀ))`, and symmetric Hessian noise with
/// i.i.d. `N(0, σ²)` entries on and above the diagonal.
///
/// Batch means are drawn from their exact sampling distribution (a mean of
/// `b` draws has the noise scaled by `1/√b`), so the cost does not grow with
/// the batch. In a shared value pair both points see the same noise draw.
/// Value, gradient and Hessian noise are independent of each other.
#[derive(Debug, Clone)]
pub struct GaussianNoisy<P> {
    base: P,
    sigma: f64,
}

impl<P> GaussianNoisy<P> {
    pub fn new(base: P, spec: GaussianNoiseSpec) -> Self {
        Self { base, sigma: spec.variance.sqrt() }
    }

    pub fn base(&self) -> &P {
        &self.base
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    fn batch_scale<T: Real>(&self, batch: usize) -> T {
        lit(self.sigma / (batch.max(1) as f64).sqrt())
    }
}

/// Builds the Gaussian noise-injection problem around an exact base problem.
pub fn gaussian_noisy<T: Real, P: Constraints<T> + Objective<T>>(base: P, spec: GaussianNoiseSpec) -> GaussianNoisy<P> {
    GaussianNoisy::new(base, spec)
}

fn normal<T: Real>(rng: &mut SampleRng) -> T {
    let z: f64 = rng.sample(StandardNormal);
    lit(z)
}

impl<T: Real, P: Constraints<T>> Constraints<T> for GaussianNoisy<P> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn num_constraints(&self) -> usize {
        self.base.num_constraints()
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        self.base.constraints(x)
    }
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.base.jacobian(x)
    }
    fn constraint_hessians(&self, x: &DVector<T>) -> Vec<DMatrix<T>> {
        self.base.constraint_hessians(x)
    }
}

impl<T: Real, P: Constraints<T> + Objective<T>> Problem<T> for GaussianNoisy<P> {
    fn sample_value(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> T {
        let f = self.base.value(x);
        if self.sigma == 0.0 {
            return f;
        }
        f + self.batch_scale::<T>(batch) * normal::<T>(rng)
    }

    fn sample_value_pair(&self, x: &DVector<T>, y: &DVector<T>, batch: usize, rng: &mut SampleRng) -> (T, T) {
        let (fx, fy) = (self.base.value(x), self.base.value(y));
        if self.sigma == 0.0 {
            return (fx, fy);
        }
        let noise = self.batch_scale::<T>(batch) * normal::<T>(rng);
        (fx + noise, fy + noise)
    }

    fn sample_gradient(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DVector<T> {
        let mut g = self.base.gradient(x);
        if self.sigma == 0.0 {
            return g;
        }
        let scale = self.batch_scale::<T>(batch);
        let z = DVector::<T>::from_fn(g.len(), |_, _| normal(rng));
        let shared: T = normal(rng);
        for (gi, zi) in g.iter_mut().zip(z.iter()) {
            *gi += scale * (*zi + shared);
        }
        g
    }

    fn sample_hessian(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DMatrix<T> {
        let mut h = self.base.hessian(x);
        if self.sigma == 0.0 {
            return h;
        }
        let scale = self.batch_scale::<T>(batch);
        let n = h.nrows();
        for i in 0..n {
            for j in i..n {
                let e = scale * normal::<T>(rng);
                h[(i, j)] += e;
                if i != j {
                    h[(j, i)] += e;
                }
            }
        }
        h
    }

    fn noiseless(&self) -> Option<&dyn Objective<T>> {
        Some(&self.base)
    }
}

/// Per-record loss of a finite-sum objective `f = (1/N) Σᵢ ℓᵢ`.
pub trait RecordLoss<T: Real>: Send + Sync {
    fn num_records(&self) -> usize;
    fn dim(&self) -> usize;
    fn value(&self, i: usize, x: &DVector<T>) -> T;
    /// `out += weight · ∇ℓᵢ(x)`.
    fn add_gradient(&self, i: usize, x: &DVector<T>, weight: T, out: &mut DVector<T>);
    /// `out += weight · ∇²ℓᵢ(x)`.
    fn add_hessian(&self, i: usize, x: &DVector<T>, weight: T, out: &mut DMatrix<T>);
}

/// Affine constraints `Ax − b`.
#[derive(Debug, Clone)]
pub struct AffineConstraints<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Real> Constraints<T> for AffineConstraints<T> {
    fn dim(&self) -> usize {
        self.a.ncols()
    }
    fn num_constraints(&self) -> usize {
        self.a.nrows()
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        &self.a * x - &self.b
    }
    fn jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }
    fn constraint_hessians(&self, _x: &DVector<T>) -> Vec<DMatrix<T>> {
        let d = self.a.ncols();
        vec![DMatrix::zeros(d, d); self.a.nrows()]
    }
}

/// Finite-sum objective; batches are drawn uniformly with replacement and the
/// full-data mean is the noiseless oracle.
#[derive(Debug, Clone)]
pub struct FiniteSum<L, C> {
    loss: L,
    constraints: C,
}

impl<L, C> FiniteSum<L, C> {
    pub fn new<T: Real>(loss: L, constraints: C) -> Result<Self>
    where
        L: RecordLoss<T>,
        C: Constraints<T>,
    {
        if loss.num_records() == 0 {
            return Err(SolverError::EmptyDataset);
        }
        if loss.dim() != constraints.dim() {
            return Err(SolverError::DimensionMismatch(format!(
                "loss dimension {} vs constraint dimension {}",
                loss.dim(),
                constraints.dim()
            )));
        }
        Ok(Self { loss, constraints })
    }
}

/// Builds a finite-sum problem from per-record oracles and constraints.
pub fn finite_sum_problem<T: Real, L: RecordLoss<T>, C: Constraints<T>>(loss: L, constraints: C) -> Result<FiniteSum<L, C>> {
    FiniteSum::new(loss, constraints)
}

impl<L, C> FiniteSum<L, C> {
    pub fn loss(&self) -> &L {
        &self.loss
    }

    pub fn constraint_set(&self) -> &C {
        &self.constraints
    }
}

impl<L, C> FiniteSum<L, C> {
    fn draw_indices<T: Real>(&self, batch: usize, rng: &mut SampleRng) -> Vec<usize>
    where
        L: RecordLoss<T>,
    {
        let n = self.loss.num_records();
        (0..batch.max(1)).map(|_| rng.random_range(0..n)).collect()
    }

    pub fn batch_value<T: Real>(&self, x: &DVector<T>, indices: &[usize]) -> T
    where
        L: RecordLoss<T>,
     {
        let w = T::one() / lit::<T>(indices.len() as f64);
        indices.iter().fold(T::zero(), |acc, &i| acc + self.loss.value(i, x)) * w
    }

    pub fn batch_gradient<T: Real>(&self, x: &DVector<T>, indices: &[usize]) -> DVector<T>
    where
        L: RecordLoss<T>,
     {
        let w = T::one() / lit::<T>(indices.len() as f64);
        let mut g = DVector::zeros(self.loss.dim());
        for &i in indices {
            self.loss.add_gradient(i, x, w, &mut g);
        }
        g
    }

    pub fn batch_hessian<T: Real>(&self, x: &DVector<T>, indices: &[usize]) -> DMatrix<T>
    where
        L: RecordLoss<T>,
     {
        let w = T::one() / lit::<T>(indices.len() as f64);
        let d = self.loss.dim();
        let mut h = DMatrix::zeros(d, d);
        for &i in indices {
            self.loss.add_hessian(i, x, w, &mut h);
        }
        h
    }

    fn all<T: Real>(&self) -> Vec<usize>
    where
        L: RecordLoss<T>,
    {
        (0..self.loss.num_records()).collect()
    }
}

impl<T: Real, L: RecordLoss<T>, C: Constraints<T>> Constraints<T> for FiniteSum<L, C> {
    fn dim(&self) -> usize {
        self.constraints.dim()
    }
    fn num_constraints(&self) -> usize {
        self.constraints.num_constraints()
    }
    fn constraints(&self, x: &DVector<T>) -> DVector<T> {
        self.constraints.constraints(x)
    }
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.constraints.jacobian(x)
    }
    fn constraint_hessians(&self, x: &DVector<T>) -> Vec<DMatrix<T>> {
        self.constraints.constraint_hessians(x)
    }
}

impl<T: Real, L: RecordLoss<T>, C: Constraints<T>> Objective<T> for FiniteSum<L, C> {
    fn value(&self, x: &DVector<T>) -> T {
        self.batch_value(x, &self.all::<T>())
    }
    fn gradient(&self, x: &DVector<T>) -> DVector<T> {
        self.batch_gradient(x, &self.all::<T>())
    }
    fn hessian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.batch_hessian(x, &self.all::<T>())
    }
}

impl<T: Real, L: RecordLoss<T>, C: Constraints<T>> Problem<T> for FiniteSum<L, C> {
    fn sample_value(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> T {
        let idx = self.draw_indices::<T>(batch, rng);
        self.batch_value(x, &idx)
    }
    fn sample_value_pair(&self, x: &DVector<T>, y: &DVector<T>, batch: usize, rng: &mut SampleRng) -> (T, T) {
        let idx = self.draw_indices::<T>(batch, rng);
        (self.batch_value(x, &idx), self.batch_value(y, &idx))
    }
    fn sample_gradient(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DVector<T> {
        let idx = self.draw_indices::<T>(batch, rng);
        self.batch_gradient(x, &idx)
    }
    fn sample_hessian(&self, x: &DVector<T>, batch: usize, rng: &mut SampleRng) -> DMatrix<T> {
        let idx = self.draw_indices::<T>(batch, rng);
        self.batch_hessian(x, &idx)
    }
    fn noiseless(&self) -> Option<&dyn Objective<T>> {
        Some(self)
    }
}

/// Logistic loss `log(1 + exp(−y zᵀx))` over labeled records.
#[derive(Debug, Clone)]
pub struct LogisticLoss<T: Real> {
    /// One record per row.
    pub features: DMatrix<T>,
    /// Labels in `{−1, +1}`.
    pub labels: DVector<T>,
    // Record-major copy so per-record access is contiguous.
    by_record: DMatrix<T>,
}

impl<T: Real> LogisticLoss<T> {
    pub fn new(features: DMatrix<T>, labels: DVector<T>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(SolverError::EmptyDataset);
        }
        if features.nrows() != labels.len() {
            return Err(SolverError::DimensionMismatch(format!(
                "{} feature rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let by_record = features.transpose();
        Ok(Self { features, labels, by_record })
    }

    fn margin(&self, i: usize, x: &DVector<T>) -> T {
        self.labels[i] * self.by_record.column(i).dot(x)
    }
}

/// `1 / (1 + e^{−t})` without overflow.
fn sigmoid<T: Real>(t: T) -> T {
    if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^{t})` without overflow.
fn softplus<T: Real>(t: T) -> T {
    if t > T::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl<T: Real> RecordLoss<T> for LogisticLoss<T> {
    fn num_records(&self) -> usize {
        self.features.nrows()
    }
    fn dim(&self) -> usize {
        self.features.ncols()
    }
    fn value(&self, i: usize, x: &DVector<T>) -> T {
        softplus(-self.margin(i, x))
    }
    fn add_gradient(&self, i: usize, x: &DVector<T>, weight: T, out: &mut DVector<T>) {
        let m = self.margin(i, x);
        let coef = -weight * self.labels[i] * sigmoid(-m);
        out.axpy(coef, &self.by_record.column(i), T::one());
    }
    fn add_hessian(&self, i: usize, x: &DVector<T>, weight: T, out: &mut DMatrix<T>) {
        let m = self.margin(i, x);
        let coef = weight * sigmoid(m) * sigmoid(-m);
        let z = self.by_record.column(i);
        out.ger(coef, &z, &z, T::one());
    }
}

/// Reads `label, feature_1, …, feature_d` rows with labels in `{−1, +1}`.
/// A leading non-numeric header row is skipped.
pub fn load_labeled_csv<T: Real>(path: impl AsRef<Path>) -> Result<(DMatrix<T>, DVector<T>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if lineno == 0 => continue,
            Err(e) => return Err(SolverError::Parse(format!("line {}: {e}", lineno + 1))),
        }
    }
    if rows.is_empty() {
        return Err(SolverError::EmptyDataset);
    }
    let width = rows[0].len();
    if width < 2 {
        return Err(SolverError::Parse("need a label column and at least one feature".into()));
    }
    let mut features = DMatrix::zeros(rows.len(), width - 1);
    let mut labels = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(SolverError::Parse(format!("row {} has {} columns, expected {width}", i + 1, row.len())));
        }
        if row[0] != 1.0 && row[0] != -1.0 {
            return Err(SolverError::Parse(format!("row {}: label {} not in {{-1, +1}}", i + 1, row[0])));
        }
        labels[i] = lit(row[0]);
        for j in 1..width {
            features[(i, j - 1)] = lit(row[j]);
        }
    }
    Ok((features, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{OracleKind, RngStream};
    use nalgebra::{dmatrix, dvector};

    struct Bowl;

    impl Constraints<f64> for Bowl {
        fn dim(&self) -> usize {
            3
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
            dvector![x.sum() - 1.0]
        }
        fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            dmatrix![1.0, 1.0, 1.0]
        }
        fn constraint_hessians(&self, _x: &DVector<f64>) -> Vec<DMatrix<f64>> {
            vec![DMatrix::zeros(3, 3)]
        }
    }

    impl Objective<f64> for Bowl {
        fn value(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.norm_squared() + x[0]
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            let mut g = x.clone();
            g[0] += 1.0;
            g
        }
        fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(3, 3)
        }
    }

    fn rng(k: u64) -> SampleRng {
        RngStream::new(11).substream(k, OracleKind::Auxiliary(0))
    }

    #[test]
    fn zero_noise_is_exact() {
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(0.0).unwrap());
        let x = dvector![0.3, -0.2, 0.9];
        let mut r = rng(0);
        assert_eq!(p.sample_value(&x, 5, &mut r), Bowl.value(&x));
        assert_eq!(p.sample_gradient(&x, 5, &mut r), Bowl.gradient(&x));
        assert_eq!(p.sample_hessian(&x, 5, &mut r), Bowl.hessian(&x));
        assert!(GaussianNoiseSpec::new(-1.0).is_err());
    }

    #[test]
    fn value_noise_statistics() {
        let sigma2 = 1e-2;
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(sigma2).unwrap());
        let x = dvector![0.1, 0.2, 0.3];
        let f = Bowl.value(&x);
        let mut r = rng(1);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| p.sample_value(&x, 1, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - f).abs() <= 4.0 * sigma2.sqrt() / (n as f64).sqrt());
        assert!((var - sigma2).abs() <= 0.1 * sigma2);
    }

    #[test]
    fn gradient_noise_covariance() {
        let sigma2 = 1e-1;
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(sigma2).unwrap());
        let x = dvector![0.5, -0.5, 1.0];
        let g = Bowl.gradient(&x);
        let mut r = rng(2);
        let n = 10_000;
        let mut cov = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let e = p.sample_gradient(&x, 1, &mut r) - &g;
            cov += &e * e.transpose();
        }
        cov /= n as f64;
        let expected = (DMatrix::identity(3, 3) + DMatrix::from_element(3, 3, 1.0)) * sigma2;
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[(i, j)] - expected[(i, j)]).abs() <= 0.15 * expected[(i, j)], "{i},{j}: {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn hessian_noise_is_symmetric_and_constraints_untouched() {
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(0.5).unwrap());
        let x = dvector![1.0, 2.0, 3.0];
        let h = p.sample_hessian(&x, 3, &mut rng(3));
        assert_eq!(h, h.transpose());
        assert_ne!(h, Bowl.hessian(&x));
        assert_eq!(p.constraints(&x), Bowl.constraints(&x));
        assert_eq!(p.jacobian(&x), Bowl.jacobian(&x));
    }

    #[test]
    fn shared_pair_reuses_noise() {
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(1.0).unwrap());
        let x = dvector![0.0, 0.0, 0.0];
        let (a, b) = p.sample_value_pair(&x, &x, 10, &mut rng(4));
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_streams_reproduce() {
        let p = GaussianNoisy::new(Bowl, GaussianNoiseSpec::new(0.3).unwrap());
        let x = dvector![0.2, 0.2, 0.2];
        let a = p.sample_gradient(&x, 7, &mut rng(5));
        let b = p.sample_gradient(&x, 7, &mut rng(5));
        assert_eq!(a, b);
    }

    fn toy_logistic() -> FiniteSum<LogisticLoss<f64>, AffineConstraints<f64>> {
        let z = dmatrix![
            1.0, 0.5, -0.3;
            -0.7, 1.2, 0.1;
            0.3, -0.4, 2.0;
            1.5, 0.2, -1.1;
            -0.2, -0.9, 0.6
        ];
        let y = dvector![1.0, -1.0, 1.0, -1.0, 1.0];
        let cons = AffineConstraints { a: dmatrix![1.0, 1.0, 1.0], b: dvector![0.5] };
        FiniteSum::new(LogisticLoss::new(z, y).unwrap(), cons).unwrap()
    }

    #[test]
    fn logistic_value_at_origin() {
        let single = LogisticLoss::new(dmatrix![0.3, -2.0], dvector![-1.0]).unwrap();
        assert!((single.value(0, &dvector![0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        let p = toy_logistic();
        assert!((Objective::value(&p, &dvector![0.0, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logistic_gradient_and_hessian_match_finite_differences() {
        let p = toy_logistic();
        let x = dvector![0.4, -0.3, 0.8];
        let h = 1e-6;
        let g = Objective::gradient(&p, &x);
        let hess = Objective::hessian(&p, &x);
        for j in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (Objective::value(&p, &xp) - Objective::value(&p, &xm)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6, "grad {j}");
            let gd = (Objective::gradient(&p, &xp) - Objective::gradient(&p, &xm)) / (2.0 * h);
            for i in 0..3 {
                assert!((gd[i] - hess[(i, j)]).abs() <= 1e-5 * (1.0 + hess[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn full_batch_equals_noiseless() {
        let p = toy_logistic();
        let x = dvector![0.1, 0.2, -0.3];
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(p.batch_gradient(&x, &all), Objective::gradient(&p, &x));
        assert_eq!(p.batch_value(&x, &all), Objective::value(&p, &x));
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = LogisticLoss::<f64>::new(DMatrix::zeros(0, 2), DVector::zeros(0)).unwrap_err();
        assert_eq!(err, SolverError::EmptyDataset);
    }

    #[test]
    fn csv_loader_reads_labels_and_features() {
        let dir = std::env::temp_dir().join(format!("trsqp-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("data.csv");
        std::fs::write(&path, "label,a,b\n1,0.5,2\n-1,1.5,-3\n").unwrap();
        let (z, y) = load_labeled_csv::<f64>(&path).unwrap();
        assert_eq!(z, dmatrix![0.5, 2.0; 1.5, -3.0]);
        assert_eq!(y, dvector![1.0, -1.0]);
        std::fs::write(&path, "2,0.5,2\n").unwrap();
        assert!(load_labeled_csv::<f64>(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
