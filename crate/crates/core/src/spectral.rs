//! Stationary covariance of ARX regressors, joint covariance of stacked
//! inputs, minimal-eigenvalue sequences, and whitening diagnostics.
//!
//! The stacked ARX regressor X_t = (y_{t-1}..y_{t-k}, u_{t-1}..u_{t-k})
//! evolves as a linear state-space system driven by the two white noises
//! (e_t, u_t). Its stationary covariance Q_x solves the discrete fixed point
//! P = A P A^T + B W B^T, and lagged cross-covariances are A^l P. From these
//! the joint covariance Q_{X,n} of n consecutive regressors is assembled
//! block-Toeplitz, and rho_n is its minimal eigenvalue.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ArxModel, DataModel, JointCovarianceSpec};
use crate::seed::SeedSpec;

/// Default cap on the side length of Q_{X,n} (dense eigensolves only).
pub const DEFAULT_SIZE_CAP: usize = 4096;

/// Convergence threshold for the stationary covariance iteration.
const LYAPUNOV_TOL: f64 = 1e-12;
const LYAPUNOV_MAX_ITER: usize = 1_000_000;

/// State-space realization of the stacked ARX regressor:
/// X_{t+1} = A X_t + B (e_t, u_t)^T, noise covariance W = diag(sigma_e^2, sigma_u^2).
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceForm {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl StateSpaceForm {
    pub fn of_regressor(model: &ArxModel) -> Self {
        let k = model.order();
        let d = 2 * k;
        let mut a = DMatrix::<f64>::zeros(d, d);
        // New y_t = a . y-lags + b . u-lags (+ e_t).
        for j in 0..k {
            a[(0, j)] = model.a[j];
            a[(0, k + j)] = model.b[j];
        }
        // Shift registers for the remaining lags.
        for i in 1..k {
            a[(i, i - 1)] = 1.0;
            a[(k + i, k + i - 1)] = 1.0;
        }
        let mut b = DMatrix::<f64>::zeros(d, 2);
        b[(0, 0)] = 1.0; // e_t enters y_t
        b[(k, 1)] = 1.0; // u_t enters the input register
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![
            model.sigma_e * model.sigma_e,
            model.sigma_u * model.sigma_u,
        ]));
        StateSpaceForm { a, b, w }
    }
}

/// Stationary covariance Q_x together with the lagged cross-covariances
/// C(l) = E[X_{t+l} X_t^T] = A^l Q_x.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariances {
    a: DMatrix<f64>,
    p: DMatrix<f64>,
}

impl CrossCovariances {
    pub fn q_x(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// E[X_{t+lag} X_t^T].
    pub fn at(&self, lag: usize) -> DMatrix<f64> {
        let mut c = self.p.clone();
        for _ in 0..lag {
            c = &self.a * c;
        }
        c
    }

    /// C(0), C(1), ..., C(max_lag) in one sweep.
    pub fn upto(&self, max_lag: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(max_lag + 1);
        out.push(self.p.clone());
        for _ in 0..max_lag {
            let next = &self.a * out.last().unwrap();
            out.push(next);
        }
        out
    }

    /// Residual of the stationary fixed point, max-norm.
    pub fn lyapunov_residual(&self, ss: &StateSpaceForm) -> f64 {
        let q = &ss.b * &ss.w * ss.b.transpose();
        (&ss.a * &self.p * ss.a.transpose() + q - &self.p).amax()
    }
}

/// Solve the stationary regressor covariance P = A P A^T + B W B^T by
/// fixed-point iteration (stops when successive iterates differ by less than
/// 1e-12 in max norm).
pub fn arx_state_covariance(model: &ArxModel) -> Result<CrossCovariances> {
    model.check_stable()?;
    let ss = StateSpaceForm::of_regressor(model);
    let q = &ss.b * &ss.w * ss.b.transpose();
    let mut p = q.clone();
    for _ in 0..LYAPUNOV_MAX_ITER {
        let mut next = &ss.a * &p * ss.a.transpose() + &q;
        // Keep the iterate exactly symmetric.
        let t = next.transpose();
        next += t;
        next *= 0.5;
        let diff = (&next - &p).amax();
        p = next;
        if diff < LYAPUNOV_TOL {
            return Ok(CrossCovariances { a: ss.a, p });
        }
    }
    Err(Error::NoConvergence {
        what: "stationary covariance iteration".to_string(),
        iterations: LYAPUNOV_MAX_ITER,
    })
}

/// Joint covariance Q_{X,n} of the stacked inputs X_{1:n}, with the default
/// size cap.
pub fn joint_covariance(model: &DataModel, n: usize) -> Result<DMatrix<f64>> {
    joint_covariance_capped(model, n, DEFAULT_SIZE_CAP)
}

/// Joint covariance with an explicit cap on n*d.
pub fn joint_covariance_capped(model: &DataModel, n: usize, cap: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let d = model.dim();
    let side = n * d;
    if side > cap {
        return Err(Error::SizeCap {
            requested: side,
            cap,
        });
    }
    match model {
        DataModel::IidIsotropic(m) => {
            Ok(DMatrix::identity(side, side) * (m.sigma_x * m.sigma_x))
        }
        DataModel::CorrelatedGaussian(m) => match &m.joint {
            JointCovarianceSpec::IndependentRows => {
                Ok(block_toeplitz(&block_diag_lags(&m.q_x, n), n, d))
            }
            JointCovarianceSpec::StationaryLags(lags) => {
                let mut padded: Vec<DMatrix<f64>> = lags.iter().take(n).cloned().collect();
                while padded.len() < n {
                    padded.push(DMatrix::zeros(d, d));
                }
                Ok(block_toeplitz(&padded, n, d))
            }
            JointCovarianceSpec::Explicit(full) => {
                if full.nrows() < side {
                    return Err(Error::dims(format!(
                        "explicit joint covariance side {} too small for n = {n}",
                        full.nrows()
                    )));
                }
                let mut sub = full.view((0, 0), (side, side)).into_owned();
                let asym = (&sub - sub.transpose()).amax();
                if asym > 1e-10 * sub.amax().max(1.0) {
                    return Err(Error::Asymmetric {
                        max_abs: asym,
                        tol: 1e-10 * sub.amax().max(1.0),
                    });
                }
                let t = sub.transpose();
                sub += t;
                sub *= 0.5;
                Ok(sub)
            }
        },
        DataModel::Arx(m) => {
            let cross = arx_state_covariance(m)?;
            Ok(block_toeplitz(&cross.upto(n - 1), n, d))
        }
    }
}

fn block_diag_lags(q: &DMatrix<f64>, n: usize) -> Vec<DMatrix<f64>> {
    let d = q.nrows();
    let mut lags = vec![DMatrix::zeros(d, d); n];
    lags[0] = q.clone();
    lags
}

/// Assemble the symmetric block-Toeplitz matrix with block (i, j) equal to
/// C(i-j) for i >= j and C(j-i)^T above the diagonal.
fn block_toeplitz(lags: &[DMatrix<f64>], n: usize, d: usize) -> DMatrix<f64> {
    let mut q = DMatrix::<f64>::zeros(n * d, n * d);
    for i in 0..n {
        for j in 0..=i {
            let c = &lags[i - j];
            for r in 0..d {
                for s in 0..d {
                    q[(i * d + r, j * d + s)] = c[(r, s)];
                    q[(j * d + s, i * d + r)] = c[(r, s)];
                }
            }
        }
    }
    q
}

/// All eigenvalues of a symmetric matrix (unsorted), after a symmetry check.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::dims("matrix must be square and non-empty".to_string()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    let tol = 1e-10 * scale;
    if asym > tol {
        return Err(Error::Asymmetric { max_abs: asym, tol });
    }
    // Exactly diagonal matrices are their own eigendecomposition; this keeps
    // cases like the iid joint covariance bit-exact.
    if is_diagonal(m) {
        return Ok(m.diagonal());
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(sym.symmetric_eigen().eigenvalues)
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// rho_n = min eigenvalue of Q_{X,n} for one n.
///
/// Q_{X,n} is a covariance, so rho_n >= 0 up to eigensolver rounding; tiny
/// negative values are clamped to zero. Note that the recast ARX regressors
/// share components across consecutive windows when k >= 2 (y_{t-1} appears
/// in both X_t and X_{t+1}), making Q_{X,n} exactly singular there: rho_n is
/// structurally zero for k >= 2, n >= 2, and strictly positive only in the
/// k = 1 case.
pub fn rho_at(model: &DataModel, n: usize) -> Result<f64> {
    let rho = min_eigenvalue(&joint_covariance(model, n)?)?;
    if rho < -1e-12 {
        return Err(Error::Numeric(format!(
            "joint covariance has eigenvalue {rho} well below zero"
        )));
    }
    Ok(rho.max(0.0))
}

/// The sequence rho_1..rho_{n_max} with a bracket for the limit rho_*.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSummary {
    /// rho_n for n = 1..=n_max.
    pub rho: Vec<f64>,
    pub n_max: usize,
    /// (lower, upper) bracket for rho_* = inf_n rho_n. The upper end is
    /// rho_{n_max}; the lower end subtracts the plateau gap
    /// rho_{n_max/2} - rho_{n_max}, floored at zero. Certificates use rho_n
    /// at the actual n; only asymptote diagnostics use the bracket's lower
    /// end (rho_{n_max} itself would be anti-conservative as a stand-in for
    /// rho_*).
    pub rho_star_bracket: (f64, f64),
    pub q_x: DMatrix<f64>,
}

/// Compute rho_n for every n up to n_max. Interlacing of principal
/// submatrices forces the sequence non-increasing; a violation beyond 1e-12
/// is reported as a numeric error.
pub fn rho_sequence(model: &DataModel, n_max: usize) -> Result<SpectralSummary> {
    if n_max == 0 {
        return Err(Error::invalid("n_max must be at least 1"));
    }
    let rho: Vec<f64> = (1..=n_max)
        .into_par_iter()
        .map(|n| rho_at(model, n))
        .collect::<Result<Vec<_>>>()?;
    for n in 1..rho.len() {
        if rho[n] > rho[n - 1] + 1e-12 {
            return Err(Error::Numeric(format!(
                "rho_{} = {} exceeds rho_{} = {}",
                n + 1,
                rho[n],
                n,
                rho[n - 1]
            )));
        }
    }
    let q_x = joint_covariance(model, 1)?;
    let last = rho[n_max - 1];
    let plateau_gap = if n_max >= 2 {
        rho[n_max / 2 - 1] - last
    } else {
        0.0
    };
    Ok(SpectralSummary {
        rho,
        n_max,
        rho_star_bracket: ((last - plateau_gap).max(0.0), last),
        q_x,
    })
}

/// Bracket rho_* from rho values sampled on a grid of n. `pairs` must be
/// (n, rho_n) sorted by n; the plateau gap is taken between the largest grid
/// point and the largest grid point at most half of it.
pub fn rho_star_bracket_from_grid(pairs: &[(usize, f64)]) -> Result<(f64, f64)> {
    let last = pairs
        .last()
        .ok_or_else(|| Error::invalid("empty rho grid"))?;
    let half = pairs
        .iter()
        .rev()
        .find(|(n, _)| *n <= last.0 / 2)
        .unwrap_or(&pairs[0]);
    let gap = (half.1 - last.1).max(0.0);
    Ok(((last.1 - gap).max(0.0), last.1))
}

/// Covariance Q_{w,n} of the n prediction errors Z_{w,i} = Y_i - w . X_i:
/// entry (i, j) is (w - w*)^T E[X_i X_j^T] (w - w*) + sigma_eps^2 [i = j].
pub fn prediction_error_covariance(
    w: &DVector<f64>,
    model: &DataModel,
    n: usize,
) -> Result<DMatrix<f64>> {
    let d = model.dim();
    if w.len() != d {
        return Err(Error::dims("weight dimension does not match model".to_string()));
    }
    let qxn = joint_covariance(model, n)?;
    let delta = w - model.w_star();
    let se2 = model.sigma_eps() * model.sigma_eps();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let block = qxn.view((i * d, j * d), (d, d));
            let value = (block * &delta).dot(&delta);
            q[(i, j)] = value;
            q[(j, i)] = value;
        }
    }
    for i in 0..n {
        q[(i, i)] += se2;
    }
    Ok(q)
}

/// Outcome of the whitening diagnostic: S = Q_{w,n}^{-1/2} Z_{w,1:n} should
/// have identity covariance and sum of squares with chi-square(n) moments.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenReport {
    pub n: usize,
    pub samples: usize,
    pub max_cov_error: f64,
    pub cov_threshold: f64,
    pub chi2_mean: f64,
    pub chi2_mean_threshold: f64,
    pub chi2_var: f64,
    pub chi2_var_threshold: f64,
    pub covariance_ok: bool,
    pub moments_ok: bool,
}

impl WhitenReport {
    pub fn pass(&self) -> bool {
        self.covariance_ok && self.moments_ok
    }
}

/// Draw 10^5 realizations of the prediction-error vector, whiten with the
/// symmetric inverse square root of Q_{w,n}, and check identity covariance
/// plus chi-square(n) moments (each within 5 standard errors).
pub fn whiten_check(
    w: &DVector<f64>,
    model: &DataModel,
    n: usize,
    seed: SeedSpec,
) -> Result<WhitenReport> {
    const SAMPLES: usize = 100_000;
    let d = model.dim();
    let qxn = joint_covariance(model, n)?;
    let chol = Cholesky::new(qxn.clone()).ok_or_else(|| {
        Error::NotPositiveDefinite("joint covariance failed Cholesky".to_string())
    })?;
    let l = chol.l();
    let qwn = prediction_error_covariance(w, model, n)?;
    let inv_sqrt = symmetric_inverse_sqrt(&qwn)?;
    let delta_star = model.w_star() - w;
    let sigma_eps = model.sigma_eps();

    let mut rng = seed.rng();
    let mut cov_acc = DMatrix::<f64>::zeros(n, n);
    let mut t_sum = 0.0;
    let mut t_sq_sum = 0.0;
    for _ in 0..SAMPLES {
        let z = DVector::from_fn(n * d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x_stack = &l * z;
        let mut errs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let xi = x_stack.rows(i * d, d);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal);
            errs[i] = delta_star.dot(&xi.into_owned()) + sigma_eps * eps;
        }
        let s = &inv_sqrt * errs;
        cov_acc += &s * s.transpose();
        let t = s.norm_squared();
        t_sum += t;
        t_sq_sum += t * t;
    }
    let m = SAMPLES as f64;
    cov_acc /= m;
    let mut max_cov_error = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            // Var of a sample covariance entry of N(0, I) is (1 + [i=j]) / m.
            let se = ((1.0 + target) / m).sqrt();
            let err = (cov_acc[(i, j)] - target).abs() / se;
            max_cov_error = max_cov_error.max(err);
        }
    }
    let chi2_mean = t_sum / m;
    let chi2_var = t_sq_sum / m - chi2_mean * chi2_mean;
    let nf = n as f64;
    let mean_se = (2.0 * nf / m).sqrt();
    let var_se = ((8.0 * nf * nf + 48.0 * nf) / m).sqrt();
    Ok(WhitenReport {
        n,
        samples: SAMPLES,
        max_cov_error,
        cov_threshold: 5.0,
        chi2_mean,
        chi2_mean_threshold: 5.0 * mean_se,
        chi2_var,
        chi2_var_threshold: 5.0 * var_se,
        covariance_ok: max_cov_error < 5.0,
        moments_ok: (chi2_mean - nf).abs() < 5.0 * mean_se
            && (chi2_var - 2.0 * nf).abs() < 5.0 * var_se,
    })
}

/// M^{-1/2} via eigendecomposition of a symmetric positive definite matrix.
pub fn symmetric_inverse_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    let tol = 1e-10 * scale;
    if asym > tol {
        return Err(Error::Asymmetric { max_abs: asym, tol });
    }
    let eig = ((m + m.transpose()) * 0.5).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::NotPositiveDefinite(
            "inverse square root of a non-PD matrix".to_string(),
        ));
    }
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        eig.eigenvectors[(i, j)] / eig.eigenvalues[j].sqrt()
    });
    Ok(&scaled * eig.eigenvectors.transpose())
}
