//! Dense kernels: constraint factorizations, null-space bases, symmetric
//! eigenpairs and trust-region subproblem solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SolverError};
use crate::scalar::{lit, Real};

/// Relative singular-value tolerance below which a Jacobian counts as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Reduced dimension up to which [`TrsMethod::Auto`] picks the exact solver.
pub const EXACT_TRS_MAX_DIM: usize = 200;

/// Orthonormal basis of `ker(G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceBasis<T: Real> {
    pub z: DMatrix<T>,
}

impl<T: Real> NullSpaceBasis<T> {
    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// `Zᵀ M Z`.
    pub fn reduce(&self, m: &DMatrix<T>) -> DMatrix<T> {
        self.z.transpose() * m * &self.z
    }

    /// `Zᵀ v`.
    pub fn restrict(&self, v: &DVector<T>) -> DVector<T> {
        self.z.tr_mul(v)
    }

    /// `Z u`.
    pub fn lift(&self, u: &DVector<T>) -> DVector<T> {
        &self.z * u
    }
}

/// Householder factorization `Gᵀ = Q [R; 0]` of a full-row-rank Jacobian.
///
/// Everything the step computation needs from `G` comes out of this one
/// factorization: the null-space basis, least-norm pulls and multipliers.
#[derive(Debug, Clone)]
pub struct ConstraintFactor<T: Real> {
    q: DMatrix<T>,
    r: DMatrix<T>,
    m: usize,
    norm: T,
}

impl<T: Real> ConstraintFactor<T> {
    pub fn new(g: &DMatrix<T>) -> Result<Self> {
        let (m, d) = g.shape();
        if m == 0 || m > d {
            return Err(SolverError::DimensionMismatch(format!(
                "Jacobian is {m}x{d}; need 1 <= m <= d"
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFiniteInput("constraint Jacobian"));
        }
        let sv = g.clone().svd(false, false).singular_values;
        let smax = sv.iter().fold(T::zero(), |a, &b| a.max(b));
        let smin = sv.iter().fold(smax, |a, &b| a.min(b));
        if smax <= T::zero() || smin <= lit::<T>(RANK_TOLERANCE) * smax {
            let ratio = if smax > T::zero() { (smin / smax).as_f64() } else { 0.0 };
            return Err(SolverError::RankDeficient { ratio });
        }

        let mut a = g.transpose();
        let mut q = DMatrix::<T>::identity(d, d);
        for j in 0..m {
            let x = a.view((j, j), (d - j, 1)).clone_owned();
            let xnorm = x.norm();
            if xnorm == T::zero() {
                continue;
            }
            let alpha = if x[0] >= T::zero() { -xnorm } else { xnorm };
            let mut v = x;
            v[0] -= alpha;
            let vnorm = v.norm();
            if vnorm == T::zero() {
                continue;
            }
            v /= vnorm;
            let two = lit::<T>(2.0);
            // A[j.., j..] -= 2 v (vᵀ A[j.., j..])
            let mut block = a.view_mut((j, j), (d - j, m - j));
            let vt_block = v.transpose() * &block;
            block -= (&v * vt_block) * two;
            // Q[:, j..] -= 2 (Q[:, j..] v) vᵀ
            let mut qblock = q.view_mut((0, j), (d, d - j));
            let qv = &qblock * &v;
            qblock -= (qv * v.transpose()) * two;
        }
        let r = a.view((0, 0), (m, m)).upper_triangle();
        Ok(Self { q, r, m, norm: smax })
    }

    /// Spectral norm `‖G‖`.
    pub fn norm(&self) -> T {
        self.norm
    }

    pub fn nullspace(&self) -> NullSpaceBasis<T> {
        let d = self.q.nrows();
        NullSpaceBasis { z: self.q.columns(self.m, d - self.m).clone_owned() }
    }

    /// `−Gᵀ(GGᵀ)⁻¹ rhs`.
    pub fn min_norm_pull(&self, rhs: &DVector<T>) -> Result<DVector<T>> {
        if rhs.len() != self.m {
            return Err(SolverError::DimensionMismatch(format!(
                "rhs has length {}, expected {}",
                rhs.len(),
                self.m
            )));
        }
        let y = self
            .r
            .tr_solve_upper_triangular(rhs)
            .ok_or(SolverError::RankDeficient { ratio: 0.0 })?;
        Ok(-(self.q.columns(0, self.m) * y))
    }

    /// `−(GGᵀ)⁻¹ G g`, the least-squares multiplier for gradient `g`.
    pub fn multiplier(&self, g: &DVector<T>) -> Result<DVector<T>> {
        let qtg = self.q.columns(0, self.m).tr_mul(g);
        let lam = self
            .r
            .solve_upper_triangular(&qtg)
            .ok_or(SolverError::RankDeficient { ratio: 0.0 })?;
        Ok(-lam)
    }
}

pub fn nullspace_basis<T: Real>(g: &DMatrix<T>) -> Result<NullSpaceBasis<T>> {
    Ok(ConstraintFactor::new(g)?.nullspace())
}

pub fn min_norm_pull<T: Real>(g: &DMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>> {
    ConstraintFactor::new(g)?.min_norm_pull(rhs)
}

/// Largest singular value; zero for empty matrices.
pub fn operator_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |a, &b| a.max(b))
}

pub fn symmetrize<T: Real>(s: &DMatrix<T>) -> DMatrix<T> {
    (s + s.transpose()) * lit::<T>(0.5)
}

/// Smallest eigenvalue of a symmetric matrix with a unit eigenvector.
///
/// The eigenvector sign is fixed so its largest-magnitude entry is positive.
pub fn smallest_eigpair<T: Real>(s: &DMatrix<T>) -> Result<(T, DVector<T>)> {
    if !s.is_square() || s.nrows() == 0 {
        return Err(SolverError::DimensionMismatch(format!("eigenproblem of shape {:?}", s.shape())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteInput("symmetric eigenproblem"));
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let (idx, tau) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, eig.eigenvalues[0]), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    let mut zeta = eig.eigenvectors.column(idx).clone_owned();
    let n = zeta.norm();
    zeta /= n;
    let lead = zeta.iter().copied().fold(T::zero(), |a, v| if v.abs() > a.abs() { v } else { a });
    if lead < T::zero() {
        zeta = -zeta;
    }
    Ok((tau, zeta))
}

/// `gᵀu + ½uᵀHu`.
pub fn quadratic_model<T: Real>(h: &DMatrix<T>, g: &DVector<T>, u: &DVector<T>) -> T {
    g.dot(u) + lit::<T>(0.5) * u.dot(&(h * u))
}

/// Right-hand side of the fraction-of-Cauchy-decrease condition:
/// `−(κ/2)‖g‖ min{Δ, ‖g‖/‖H‖}`, with the ratio read as `+∞` when `‖H‖ = 0`.
pub fn cauchy_decrease_bound<T: Real>(g_norm: T, h_norm: T, radius: T, kappa: T) -> T {
    let reach = if h_norm > T::zero() { radius.min(g_norm / h_norm) } else { radius };
    -(kappa * lit::<T>(0.5)) * g_norm * reach
}

/// Trust-region subproblem solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrsMethod {
    /// Exact below [`EXACT_TRS_MAX_DIM`], Steihaug above.
    #[default]
    Auto,
    Exact,
    Dogleg,
    Steihaug,
}

/// Approximately minimizes `gᵀu + ½uᵀHu` over `‖u‖ ≤ radius`.
pub fn trs_solve<T: Real>(
    h: &DMatrix<T>,
    g: &DVector<T>,
    radius: T,
    method: TrsMethod,
) -> Result<DVector<T>> {
    check_trs_inputs(h, g, radius)?;
    let n = g.len();
    if n == 0 || radius == T::zero() {
        return Ok(DVector::zeros(n));
    }
    let u = match method {
        TrsMethod::Auto if n <= EXACT_TRS_MAX_DIM => trs_exact(h, g, radius),
        TrsMethod::Auto | TrsMethod::Steihaug => trs_steihaug(h, g, radius),
        TrsMethod::Exact => trs_exact(h, g, radius),
        TrsMethod::Dogleg => trs_dogleg(h, g, radius),
    };
    Ok(clip_to_ball(u, radius))
}

/// Cauchy point of the model inside the ball.
pub fn cauchy_point<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> Result<DVector<T>> {
    check_trs_inputs(h, g, radius)?;
    Ok(cauchy_unchecked(h, g, radius))
}

fn check_trs_inputs<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> Result<()> {
    if h.nrows() != g.len() || h.ncols() != g.len() {
        return Err(SolverError::DimensionMismatch(format!(
            "model Hessian {:?} vs gradient {}",
            h.shape(),
            g.len()
        )));
    }
    if h.iter().chain(g.iter()).any(|v| !v.is_finite()) || !radius.is_finite() {
        return Err(SolverError::NonFiniteInput("trust-region subproblem"));
    }
    if radius < T::zero() {
        return Err(SolverError::InvalidConfig("negative trust-region radius".into()));
    }
    Ok(())
}

fn clip_to_ball<T: Real>(mut u: DVector<T>, radius: T) -> DVector<T> {
    let n = u.norm();
    if n > radius {
        u *= radius / n;
    }
    u
}

fn cauchy_unchecked<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> DVector<T> {
    let gnorm = g.norm();
    if gnorm == T::zero() {
        return DVector::zeros(g.len());
    }
    let curv = g.dot(&(h * g));
    let tau = if curv <= T::zero() {
        T::one()
    } else {
        (gnorm * gnorm * gnorm / (radius * curv)).min(T::one())
    };
    g * (-(tau * radius / gnorm))
}

/// Global minimizer via the secular equation on the eigenbasis of `H`.
fn trs_exact<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> DVector<T> {
    let eig = SymmetricEigen::new(symmetrize(h));
    let lam = &eig.eigenvalues;
    let q = &eig.eigenvectors;
    let gt = q.tr_mul(g);
    let n = g.len();
    let gnorm = g.norm();

    let (imin, lmin) = lam
        .iter()
        .copied()
        .enumerate()
        .fold((0, lam[0]), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    let lmax_abs = lam.iter().fold(T::zero(), |a, v| a.max(v.abs()));

    let step_for = |shift: T, skip: &dyn Fn(usize) -> bool| -> DVector<T> {
        let mut coeff = DVector::zeros(n);
        for i in 0..n {
            if !skip(i) {
                coeff[i] = -gt[i] / (lam[i] + shift);
            }
        }
        coeff
    };

    if lmin > T::zero() {
        let coeff = step_for(T::zero(), &|_| false);
        if coeff.norm() <= radius {
            return q * coeff;
        }
    }

    let lo = (-lmin).max(T::zero());
    let scale = lmax_abs.max(gnorm / radius).max(lit::<T>(f64::MIN_POSITIVE));
    let tie = lit::<T>(1e-12) * scale;
    let degenerate = |i: usize| lam[i] - lmin <= tie;
    let g_deg = (0..n).filter(|&i| degenerate(i)).fold(T::zero(), |a, i| a + gt[i] * gt[i]).sqrt();

    if lmin <= T::zero() && g_deg <= lit::<T>(1e-14) * gnorm.max(lit::<T>(f64::MIN_POSITIVE)) {
        // Hard case candidate: the gradient has no weight on the bottom eigenspace.
        let coeff = step_for(lo, &|i| degenerate(i));
        let cn = coeff.norm();
        if cn <= radius {
            let mut coeff = coeff;
            coeff[imin] = (radius * radius - cn * cn).max(T::zero()).sqrt();
            return q * coeff;
        }
    }

    let phi = |shift: T| -> (T, T) {
        // (‖u(σ)‖, Σ gᵢ²/(λᵢ+σ)³)
        let mut s2 = T::zero();
        let mut s3 = T::zero();
        for i in 0..n {
            let den = lam[i] + shift;
            let t = gt[i] / den;
            s2 += t * t;
            s3 += t * t / den;
        }
        (s2.sqrt(), s3)
    };

    let mut a = lo;
    let mut b = lo + gnorm / radius;
    let mut sigma = b;
    let inv_radius = T::one() / radius;
    for _ in 0..300 {
        let (norm, s3) = phi(sigma);
        if !norm.is_finite() {
            a = sigma;
            sigma = (a + b) * lit::<T>(0.5);
            continue;
        }
        if (norm - radius).abs() <= lit::<T>(1e-14) * radius {
            break;
        }
        if norm > radius {
            a = sigma;
        } else {
            b = sigma;
        }
        // Newton on 1/‖u(σ)‖ − 1/Δ.
        let psi = T::one() / norm - inv_radius;
        let dpsi = s3 / (norm * norm * norm);
        let mut next = if dpsi > T::zero() { sigma - psi / dpsi } else { lit::<T>(f64::NAN) };
        if !(next > a && next < b) {
            next = (a + b) * lit::<T>(0.5);
        }
        if (b - a) <= T::default_epsilon() * b.abs().max(T::one()) {
            sigma = b;
            break;
        }
        sigma = next;
    }
    q * step_for(sigma, &|_| false)
}

fn trs_dogleg<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> DVector<T> {
    let gnorm = g.norm();
    if gnorm == T::zero() {
        return DVector::zeros(g.len());
    }
    let Some(chol) = symmetrize(h).cholesky() else {
        return cauchy_unchecked(h, g, radius);
    };
    let pb = -chol.solve(g);
    if pb.norm() <= radius {
        return pb;
    }
    let curv = g.dot(&(h * g));
    let pu = g * (-(gnorm * gnorm / curv));
    let pu_norm = pu.norm();
    if pu_norm >= radius {
        return g * (-(radius / gnorm));
    }
    // ‖pu + s(pb − pu)‖ = Δ, s ∈ [0, 1]
    let dir = &pb - &pu;
    let aa = dir.dot(&dir);
    let bb = lit::<T>(2.0) * pu.dot(&dir);
    let cc = pu_norm * pu_norm - radius * radius;
    let disc = (bb * bb - lit::<T>(4.0) * aa * cc).max(T::zero()).sqrt();
    let s = ((-bb + disc) / (lit::<T>(2.0) * aa)).clamp(T::zero(), T::one());
    pu + dir * s
}

fn trs_steihaug<T: Real>(h: &DMatrix<T>, g: &DVector<T>, radius: T) -> DVector<T> {
    let n = g.len();
    let gnorm = g.norm();
    let mut z = DVector::zeros(n);
    if gnorm == T::zero() {
        return z;
    }
    let tol = lit::<T>(0.5).min(gnorm.sqrt()) * gnorm;
    let mut r = g.clone();
    let mut d = -g.clone();
    for _ in 0..(2 * n).max(10) {
        let hd = h * &d;
        let curv = d.dot(&hd);
        if curv <= T::zero() {
            return to_boundary(&z, &d, radius);
        }
        let rr = r.dot(&r);
        let alpha = rr / curv;
        let z_next = &z + &d * alpha;
        if z_next.norm() >= radius {
            return to_boundary(&z, &d, radius);
        }
        z = z_next;
        r += hd * alpha;
        let rr_next = r.dot(&r);
        if rr_next.sqrt() < tol {
            return z;
        }
        d = -&r + d * (rr_next / rr);
    }
    z
}

/// `z + s d` with `s ≥ 0` and `‖z + s d‖ = Δ`.
fn to_boundary<T: Real>(z: &DVector<T>, d: &DVector<T>, radius: T) -> DVector<T> {
    let aa = d.dot(d);
    let bb = lit::<T>(2.0) * z.dot(d);
    let cc = z.dot(z) - radius * radius;
    let disc = (bb * bb - lit::<T>(4.0) * aa * cc).max(T::zero()).sqrt();
    let s = (-bb + disc) / (lit::<T>(2.0) * aa);
    z + d * s
}
