//! Gibbs posterior, Gaussian KL divergence, and posterior-averaged losses in
//! closed form.
//!
//! For the squared loss and a Gaussian prior the Gibbs measure
//! `rho(w) ∝ prior(w) exp(-lambda Ê(w))` is itself Gaussian, which is what
//! makes the whole certificate pipeline closed-form: its precision is
//! `prior_precision + (2 lambda / n) X^T X`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::{DataModel, Dataset};
use crate::numeric::pairwise_sum;

/// Relative tolerance on covariance symmetry.
const SYMMETRY_TOL: f64 = 1e-12;

/// A Gaussian measure over weight vectors; houses both priors and posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianWeightMeasure {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianWeightMeasure {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::invalid("measure dimension must be at least 1"));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::dims(format!(
                "covariance must be {d}x{d}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("measure parameters must be finite"));
        }
        let scale = cov.amax().max(f64::MIN_POSITIVE);
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::Asymmetric {
                max_abs: asym,
                tol: SYMMETRY_TOL * scale,
            });
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::NotPositiveDefinite(
                "covariance failed Cholesky factorization".to_string(),
            ));
        }
        Ok(GaussianWeightMeasure { mean, cov })
    }

    /// N(mean, sigma^2 I).
    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive"));
        }
        let d = mean.len();
        GaussianWeightMeasure::new(mean, DMatrix::identity(d, d) * (sigma * sigma))
    }

    pub fn standard(dim: usize, sigma: f64) -> Result<Self> {
        GaussianWeightMeasure::isotropic(DVector::zeros(dim), sigma)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub(crate) fn cholesky(&self) -> Cholesky<f64, Dyn> {
        // Kept valid by the constructor.
        Cholesky::new(self.cov.clone()).expect("covariance validated SPD")
    }

    pub fn log_density(&self, w: &DVector<f64>) -> f64 {
        let chol = self.cholesky();
        let delta = w - &self.mean;
        let quad = chol.solve(&delta).dot(&delta);
        let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        -0.5 * (self.dim() as f64 * (2.0 * std::f64::consts::PI).ln() + ln_det + quad)
    }
}

/// Exact minimizer of `lambda E_rho[Ê] + KL(rho || prior)` over Gaussian
/// measures:
/// precision = prior_cov^{-1} + (2 lambda / n) X^T X,
/// mean = cov (prior_cov^{-1} prior_mean + (2 lambda / n) X^T y).
pub fn gibbs_posterior(
    prior: &GaussianWeightMeasure,
    s: &Dataset,
    lambda: f64,
) -> Result<GaussianWeightMeasure> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if prior.dim() != s.d() {
        return Err(Error::dims(format!(
            "prior dimension {} does not match dataset d {}",
            prior.dim(),
            s.d()
        )));
    }
    let n = s.n() as f64;
    let scale = 2.0 * lambda / n;
    let xtx = s.x().transpose() * s.x();
    if xtx.amax() == 0.0 {
        // No design information: the Gibbs measure is the prior itself.
        return Ok(prior.clone());
    }
    let prior_precision = prior.cholesky().inverse();
    let mut precision = &prior_precision + &xtx * scale;
    symmetrize(&mut precision);
    let chol = Cholesky::new(precision).ok_or_else(|| {
        Error::NotPositiveDefinite("posterior precision failed Cholesky".to_string())
    })?;
    let rhs = &prior_precision * prior.mean() + s.x().transpose() * s.y() * scale;
    let mean = chol.solve(&rhs);
    let mut cov = chol.inverse();
    symmetrize(&mut cov);
    GaussianWeightMeasure::new(mean, cov)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// KL(rho || pi) between Gaussians:
/// 0.5 [ tr(S_pi^{-1} S_rho) + (mu_pi - mu_rho)^T S_pi^{-1} (mu_pi - mu_rho)
///       - d + ln det S_pi - ln det S_rho ].
pub fn kl_gaussian(rho: &GaussianWeightMeasure, pi: &GaussianWeightMeasure) -> Result<f64> {
    if rho.dim() != pi.dim() {
        return Err(Error::dims("measure dimensions differ".to_string()));
    }
    let d = rho.dim() as f64;
    let chol_pi = pi.cholesky();
    let chol_rho = rho.cholesky();
    let trace = chol_pi.solve(rho.cov()).trace();
    let delta = pi.mean() - rho.mean();
    let quad = chol_pi.solve(&delta).dot(&delta);
    let ln_det_pi = 2.0 * chol_pi.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let ln_det_rho = 2.0 * chol_rho.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let kl = 0.5 * (trace + quad - d + ln_det_pi - ln_det_rho);
    // Rounding may leave a tiny negative at rho ~ pi.
    Ok(kl.max(0.0))
}

/// Posterior average of the empirical loss:
/// (1/n) ||y - X mu||^2 + (1/n) tr(X Sigma X^T).
pub fn expected_empirical_loss(rho: &GaussianWeightMeasure, s: &Dataset) -> Result<f64> {
    if rho.dim() != s.d() {
        return Err(Error::dims("posterior dimension does not match dataset".to_string()));
    }
    let n = s.n() as f64;
    let residual = s.y() - s.x() * rho.mean();
    let squares: Vec<f64> = residual.iter().map(|r| r * r).collect();
    let xs = s.x() * rho.cov();
    let row_terms: Vec<f64> = (0..s.n())
        .map(|i| xs.row(i).dot(&s.x().row(i)))
        .collect();
    Ok(pairwise_sum(&squares) / n + pairwise_sum(&row_terms) / n)
}

/// Posterior average of the generalization loss:
/// (w* - mu)^T Q_x (w* - mu) + tr(Q_x Sigma) + sigma_eps^2.
pub fn expected_generalization_loss(
    rho: &GaussianWeightMeasure,
    model: &DataModel,
) -> Result<f64> {
    if rho.dim() != model.dim() {
        return Err(Error::dims("posterior dimension does not match model".to_string()));
    }
    let resolved = model.resolve()?;
    Ok(expected_generalization_loss_resolved(rho, &resolved))
}

/// Same as [`expected_generalization_loss`] for a pre-resolved model.
pub fn expected_generalization_loss_resolved(
    rho: &GaussianWeightMeasure,
    resolved: &crate::model::ResolvedModel,
) -> f64 {
    let delta = &resolved.w_star - rho.mean();
    resolved.qx.quad_form(&delta)
        + resolved.qx.trace_product(rho.cov())
        + resolved.sigma_eps * resolved.sigma_eps
}

/// The objective the Gibbs posterior minimizes:
/// lambda E_rho[Ê] + KL(rho || prior). `lambda = 0` is allowed here (the loss
/// term drops out); `gibbs_posterior` itself requires lambda > 0.
pub fn gibbs_objective(
    rho: &GaussianWeightMeasure,
    s: &Dataset,
    lambda: f64,
    prior: &GaussianWeightMeasure,
) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    Ok(lambda * expected_empirical_loss(rho, s)? + kl_gaussian(rho, prior)?)
}
