//! Complexity terms and certificate assembly.
//!
//! A certificate upper-bounds the posterior-averaged generalization loss by
//!
//! ```text
//! rhs = E_rho[empirical] + (KL(rho || prior) + ln(1/delta) + Psi) / lambda
//! ```
//!
//! where Psi is a data-independent exponential moment of the loss deviation
//! under the prior. Several Psi variants are provided:
//!
//! - `bounded_loss`: closed form lambda^2 L^2 / (8n) for losses clipped to [0, L];
//! - `thm2`: closed-form additive term for isotropic Gaussian inputs and an
//!   isotropic zero-mean Gaussian prior, valid for lambda < 1/c;
//! - `thm3_exact`: exact chi-square-MGF form
//!   ln E_prior[ exp(lambda v_w) / (1 + 2 lambda v_w / n)^{n/2} ] for
//!   independent isotropic inputs;
//! - `thm3_relaxed`: the weaker form ln E_prior[exp(2 lambda^2 v_w^2 / n)],
//!   which is infinite for any untruncated Gaussian prior (the integrand is
//!   the exponential of a quartic);
//! - `thm4`: the dependent-data form with the denominator floored by
//!   rho_{n,w} = rho_n ||w - w*||^2 + sigma_eps^2, rho_n the minimal
//!   eigenvalue of the joint input covariance;
//! - `cor6`: the n -> infinity limit ln E_prior[exp(lambda (v_w - rho_{*,w}))],
//!   an asymptote rather than a finite-n certificate.
//!
//! Monte Carlo estimation uses log-sum-exp with the maximum subtracted, a
//! delta-method standard error on the log scale, and an effective sample
//! size (sum w)^2 / sum w^2; an estimate is declared diverged when the ESS
//! collapses below 10 at 10^6 samples. Work is split into fixed-size chunks
//! with per-chunk RNG streams merged in index order, so results are
//! bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DataModel, IidModel, QxForm, ResolvedModel};
use crate::numeric::{merge_exp_chunks, ExpMomentChunk};
use crate::posterior::GaussianWeightMeasure;
use crate::seed::SeedSpec;
use crate::spectral;

/// Minimum Monte Carlo sample count accepted by the Psi estimators.
pub const MIN_PSI_SAMPLES: u64 = 1000;
/// ESS floor below which an estimate is declared diverged...
pub const ESS_FLOOR: f64 = 10.0;
/// ...provided at least this many samples were drawn.
pub const ESS_DECLARE_SAMPLES: u64 = 1_000_000;
/// Fixed Monte Carlo chunk size (determines worker streams, not threads).
const MC_CHUNK: u64 = 16_384;
/// Default truncation radius in units of the largest prior standard deviation.
pub const DEFAULT_TRUNCATION_SIGMAS: f64 = 5.0;

/// Which bound a certificate was assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    BoundedLoss,
    Thm2,
    Thm3Exact,
    Thm3Relaxed,
    Thm4,
    Cor6,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BoundKind::BoundedLoss => "bounded_loss",
            BoundKind::Thm2 => "thm2",
            BoundKind::Thm3Exact => "thm3_exact",
            BoundKind::Thm3Relaxed => "thm3_relaxed",
            BoundKind::Thm4 => "thm4",
            BoundKind::Cor6 => "cor6",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiMethod {
    ClosedForm,
    MonteCarlo,
    Diverged,
}

/// Value of a complexity term, in nats.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEstimate {
    /// +infinity when diverged (serialized as null).
    pub value: f64,
    pub std_error: f64,
    pub method: PsiMethod,
    /// Effective sample size; only meaningful for Monte Carlo estimates.
    pub ess: Option<f64>,
}

impl PsiEstimate {
    pub fn closed_form(value: f64) -> Self {
        PsiEstimate {
            value,
            std_error: 0.0,
            method: PsiMethod::ClosedForm,
            ess: None,
        }
    }

    pub fn diverged(ess: Option<f64>) -> Self {
        PsiEstimate {
            value: f64::INFINITY,
            std_error: 0.0,
            method: PsiMethod::Diverged,
            ess,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.method != PsiMethod::Diverged && self.value.is_finite()
    }
}

/// A prior over weight vectors: a Gaussian base, optionally truncated to a
/// Euclidean ball about the base mean (rejection sampling, renormalized).
/// Truncation exists so that the relaxed term and the growing-lambda regimes
/// are exercisable at all.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub base: GaussianWeightMeasure,
    pub truncation_radius: Option<f64>,
}

impl PriorSpec {
    pub fn untruncated(base: GaussianWeightMeasure) -> Self {
        PriorSpec {
            base,
            truncation_radius: None,
        }
    }

    pub fn truncated(base: GaussianWeightMeasure, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("truncation radius must be positive"));
        }
        Ok(PriorSpec {
            base,
            truncation_radius: Some(radius),
        })
    }

    /// Truncate at the default radius of 5 times the largest prior standard
    /// deviation.
    pub fn truncated_default(base: GaussianWeightMeasure) -> Result<Self> {
        let max_var = spectral::max_eigenvalue(base.cov())?;
        let radius = DEFAULT_TRUNCATION_SIGMAS * max_var.sqrt();
        PriorSpec::truncated(base, radius)
    }

    pub fn is_truncated(&self) -> bool {
        self.truncation_radius.is_some()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn sampler(&self) -> PriorSampler {
        PriorSampler {
            mean: self.base.mean().clone(),
            chol_l: self.base.cholesky().l(),
            radius: self.truncation_radius,
        }
    }
}

/// Draws from a (possibly truncated) Gaussian prior.
pub struct PriorSampler {
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    radius: Option<f64>,
}

impl PriorSampler {
    pub fn draw(&self, rng: &mut rand_chacha::ChaCha12Rng) -> DVector<f64> {
        use rand::Rng;
        loop {
            let z = DVector::from_fn(self.mean.len(), |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let w = &self.mean + &self.chol_l * z;
            match self.radius {
                None => return w,
                Some(r) => {
                    if (&w - &self.mean).norm() <= r {
                        return w;
                    }
                }
            }
        }
    }
}

/// log integrand of the chi-square-MGF complexity terms:
/// lambda v - (n/2) ln(1 + 2 lambda rho / n).
fn chi2_log_integrand(lambda: f64, n: f64, v: f64, rho: f64) -> f64 {
    lambda * v - 0.5 * n * (2.0 * lambda * rho / n).ln_1p()
}

/// Monte Carlo log-mean-exp of `g` over prior draws.
fn psi_mc<F>(prior: &PriorSpec, samples: u64, seed: SeedSpec, g: F) -> Result<PsiEstimate>
where
    F: Fn(&DVector<f64>) -> f64 + Sync,
{
    if samples < MIN_PSI_SAMPLES {
        return Err(Error::invalid(format!(
            "at least {MIN_PSI_SAMPLES} Monte Carlo samples required, got {samples}"
        )));
    }
    let chunk_count = samples.div_ceil(MC_CHUNK);
    let chunks: Vec<ExpMomentChunk> = (0..chunk_count)
        .into_par_iter()
        .map(|c| {
            let lo = c * MC_CHUNK;
            let count = MC_CHUNK.min(samples - lo);
            let mut rng = seed.child(c).rng();
            let sampler = prior.sampler();
            let gs: Vec<f64> = (0..count).map(|_| g(&sampler.draw(&mut rng))).collect();
            ExpMomentChunk::from_exponents(&gs)
        })
        .collect();
    let summary = merge_exp_chunks(&chunks);
    if summary.ess < ESS_FLOOR && samples >= ESS_DECLARE_SAMPLES {
        return Ok(PsiEstimate::diverged(Some(summary.ess)));
    }
    Ok(PsiEstimate {
        value: summary.log_mean,
        std_error: summary.se_log,
        method: PsiMethod::MonteCarlo,
        ess: Some(summary.ess),
    })
}

/// Is E_prior[exp(lambda delta^T Q delta)] finite for the untruncated
/// Gaussian base? Exactly when 2 lambda lam_max(L^T Q L) < 1 with L the
/// Cholesky factor of the prior covariance (for an isotropic prior this is
/// the familiar 2 lambda sigma_xmax^2 sigma_pi^2 < 1).
fn gaussian_exp_moment_finite(
    base: &GaussianWeightMeasure,
    q: &DMatrix<f64>,
    lambda: f64,
) -> Result<bool> {
    let l = base.cholesky().l();
    let mut s = l.transpose() * q * &l;
    let t = s.transpose();
    s += t;
    s *= 0.5;
    let lam_max = spectral::max_eigenvalue(&s)?;
    Ok(2.0 * lambda * lam_max < 1.0)
}

/// Closed-form complexity term for losses bounded in [0, L]:
/// lambda^2 L^2 / (8n).
pub fn psi_bounded(lambda: f64, n: usize, l: f64) -> Result<PsiEstimate> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::invalid("loss bound L must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(PsiEstimate::closed_form(lambda * lambda * l * l / (8.0 * n as f64)))
}

fn validate_psi_args(lambda: f64, n: usize) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    Ok(())
}

fn check_prior_dim(prior: &PriorSpec, dim: usize) -> Result<()> {
    if prior.dim() != dim {
        return Err(Error::dims(format!(
            "prior dimension {} does not match model dimension {dim}",
            prior.dim()
        )));
    }
    Ok(())
}

/// Exact chi-square-MGF complexity term for isotropic iid inputs:
/// ln E_prior[ exp(lambda v_w) / (1 + 2 lambda v_w / n)^{n/2} ].
pub fn psi_thm3_exact(
    prior: &PriorSpec,
    model: &IidModel,
    lambda: f64,
    n: usize,
    samples: u64,
    seed: SeedSpec,
) -> Result<PsiEstimate> {
    validate_psi_args(lambda, n)?;
    check_prior_dim(prior, model.dim())?;
    let data_model = DataModel::IidIsotropic(model.clone());
    if !prior.is_truncated() && !finiteness_check(prior, &data_model, lambda, BoundKind::Thm3Exact)?
    {
        return Ok(PsiEstimate::diverged(None));
    }
    let resolved = data_model.resolve()?;
    let nf = n as f64;
    psi_mc(prior, samples, seed, |w| {
        let v = resolved.v_w(w);
        chi2_log_integrand(lambda, nf, v, v)
    })
}

/// Relaxed complexity term ln E_prior[exp(2 lambda^2 v_w^2 / n)]. Infinite
/// for any untruncated Gaussian prior: the integrand is exp of a quartic in
/// w and dominates the Gaussian density.
pub fn psi_thm3_relaxed(
    prior: &PriorSpec,
    model: &IidModel,
    lambda: f64,
    n: usize,
    samples: u64,
    seed: SeedSpec,
) -> Result<PsiEstimate> {
    validate_psi_args(lambda, n)?;
    check_prior_dim(prior, model.dim())?;
    if !prior.is_truncated() {
        return Ok(PsiEstimate::diverged(None));
    }
    let resolved = DataModel::IidIsotropic(model.clone()).resolve()?;
    let nf = n as f64;
    psi_mc(prior, samples, seed, |w| {
        let v = resolved.v_w(w);
        2.0 * lambda * lambda * v * v / nf
    })
}

/// The closed-form additive term of the prior-variance bound, returned as a
/// Psi-equivalent (lambda * T) so certificates assemble uniformly:
/// T = [ (d + ||w*||^2) c / 2 + (1 - lambda c) sigma_eps^2 ] / (1 - lambda c),
/// valid for c >= 2 sigma_x^2 sigma_pi^2 and lambda in (0, 1/c).
pub fn psi_thm2_term(sigma_pi: f64, model: &IidModel, lambda: f64, c: f64) -> Result<f64> {
    if !(sigma_pi > 0.0) || !sigma_pi.is_finite() {
        return Err(Error::invalid("sigma_pi must be positive"));
    }
    let c_floor = 2.0 * model.sigma_x * model.sigma_x * sigma_pi * sigma_pi;
    if c < c_floor {
        return Err(Error::invalid(format!(
            "c = {c} below its floor 2 sigma_x^2 sigma_pi^2 = {c_floor}"
        )));
    }
    if !(lambda > 0.0) || lambda >= 1.0 / c {
        return Err(Error::invalid(format!(
            "lambda = {lambda} outside the domain (0, 1/c) = (0, {})",
            1.0 / c
        )));
    }
    let d = model.dim() as f64;
    let w_norm_sq = model.w_star.norm_squared();
    let se2 = model.sigma_eps * model.sigma_eps;
    let one_minus = 1.0 - lambda * c;
    let t = (0.5 * (d + w_norm_sq) * c + one_minus * se2) / one_minus;
    Ok(lambda * t)
}

/// Dependent-data complexity term:
/// ln E_prior[ exp(lambda v_w) / (1 + 2 lambda rho_{n,w} / n)^{n/2} ], with
/// rho_n taken from the joint-covariance spectrum at the actual n.
pub fn psi_thm4(
    prior: &PriorSpec,
    model: &DataModel,
    lambda: f64,
    n: usize,
    rho_n: f64,
    samples: u64,
    seed: SeedSpec,
) -> Result<PsiEstimate> {
    validate_psi_args(lambda, n)?;
    check_prior_dim(prior, model.dim())?;
    if !(rho_n >= 0.0) || !rho_n.is_finite() {
        return Err(Error::invalid("rho_n must be non-negative"));
    }
    if !prior.is_truncated() && !finiteness_check(prior, model, lambda, BoundKind::Thm4)? {
        return Ok(PsiEstimate::diverged(None));
    }
    let resolved = model.resolve()?;
    let nf = n as f64;
    psi_mc(prior, samples, seed, |w| {
        let (v, rho_nw) = resolved.v_and_rho(w, rho_n);
        chi2_log_integrand(lambda, nf, v, rho_nw)
    })
}

/// The n -> infinity asymptote of the dependent-data term:
/// ln E_prior[ exp(lambda (w - w*)^T (Q_x - rho_* I) (w - w*)) ].
/// Labeled in reports as an asymptote, not a certificate at finite n.
pub fn psi_cor6_limit(
    prior: &PriorSpec,
    model: &DataModel,
    lambda: f64,
    rho_star: f64,
    samples: u64,
    seed: SeedSpec,
) -> Result<PsiEstimate> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if !(rho_star >= 0.0) || !rho_star.is_finite() {
        return Err(Error::invalid("rho_star must be non-negative"));
    }
    check_prior_dim(prior, model.dim())?;
    let resolved = model.resolve()?;
    let shifted = shifted_qx(&resolved, rho_star);
    if !prior.is_truncated() {
        let dense = match &shifted {
            ShiftedQx::Scaled(c) => DMatrix::identity(resolved.dim(), resolved.dim()) * *c,
            ShiftedQx::Dense(q) => q.clone(),
        };
        if !gaussian_exp_moment_finite(&prior.base, &dense, lambda)? {
            return Ok(PsiEstimate::diverged(None));
        }
    }
    let w_star = resolved.w_star.clone();
    psi_mc(prior, samples, seed, move |w| {
        let delta = &w_star - w;
        lambda
            * match &shifted {
                ShiftedQx::Scaled(c) => c * delta.norm_squared(),
                ShiftedQx::Dense(q) => (q * &delta).dot(&delta),
            }
    })
}

enum ShiftedQx {
    Scaled(f64),
    Dense(DMatrix<f64>),
}

fn shifted_qx(resolved: &ResolvedModel, rho_star: f64) -> ShiftedQx {
    match &resolved.qx {
        QxForm::Isotropic { sigma_x2, .. } => ShiftedQx::Scaled(sigma_x2 - rho_star),
        QxForm::Dense(q) => {
            let mut shifted = q.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] -= rho_star;
            }
            ShiftedQx::Dense(shifted)
        }
    }
}

/// Decide whether the requested complexity term has a finite value for this
/// prior/model/lambda. Truncated priors are always finite; for untruncated
/// Gaussian priors the chi-square-MGF terms are finite exactly when
/// 2 lambda lam_max(Sigma_pi^{1/2} Q_x Sigma_pi^{1/2}) < 1, and the relaxed
/// term is never finite.
pub fn finiteness_check(
    prior: &PriorSpec,
    model: &DataModel,
    lambda: f64,
    kind: BoundKind,
) -> Result<bool> {
    if prior.is_truncated() {
        return Ok(true);
    }
    match kind {
        BoundKind::BoundedLoss | BoundKind::Thm2 => Ok(true),
        BoundKind::Thm3Relaxed => Ok(false),
        BoundKind::Thm3Exact | BoundKind::Thm4 | BoundKind::Cor6 => {
            let resolved = model.resolve()?;
            gaussian_exp_moment_finite(&prior.base, &resolved.qx.dense(), lambda)
        }
    }
}

/// Human-readable statement of the finiteness condition, for diagnostics.
pub fn finiteness_condition(prior: &PriorSpec, model: &DataModel, lambda: f64) -> String {
    let detail = match model.resolve() {
        Ok(resolved) => {
            let qmax = spectral::max_eigenvalue(&resolved.qx.dense()).unwrap_or(f64::NAN);
            let pmax = spectral::max_eigenvalue(prior.base.cov()).unwrap_or(f64::NAN);
            format!(
                " (here 2 * {lambda} * {qmax} * {pmax} = {})",
                2.0 * lambda * qmax * pmax
            )
        }
        Err(_) => String::new(),
    };
    format!(
        "untruncated Gaussian prior requires 2 lambda sigma_xmax^2 sigma_pi^2 < 1{detail}; \
         truncate the prior or reduce lambda"
    )
}

/// Penalty breakdown of an assembled certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Components {
    pub expected_empirical: f64,
    pub kl_over_lambda: f64,
    pub ln_inv_delta_over_lambda: f64,
    pub psi_over_lambda: f64,
}

/// A fully assembled bound:
/// rhs = expected_empirical + (kl + ln(1/delta) + psi) / lambda.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCertificate {
    pub bound_kind: BoundKind,
    pub lambda: f64,
    pub delta: f64,
    pub expected_empirical: f64,
    pub kl: f64,
    pub psi: PsiEstimate,
    /// +infinity when psi diverged (serialized as null).
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub components: Components,
}

impl BoundCertificate {
    pub fn is_finite(&self) -> bool {
        self.rhs.is_finite()
    }
}

pub fn assemble_certificate(
    bound_kind: BoundKind,
    expected_empirical: f64,
    kl: f64,
    psi: PsiEstimate,
    lambda: f64,
    delta: f64,
) -> Result<BoundCertificate> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1]"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda must be positive"));
    }
    if !(kl >= 0.0) || !kl.is_finite() {
        return Err(Error::invalid("kl must be finite and non-negative"));
    }
    if !expected_empirical.is_finite() {
        return Err(Error::invalid("expected empirical loss must be finite"));
    }
    let ln_inv_delta = (1.0 / delta).ln();
    let components = Components {
        expected_empirical,
        kl_over_lambda: kl / lambda,
        ln_inv_delta_over_lambda: ln_inv_delta / lambda,
        psi_over_lambda: psi.value / lambda,
    };
    let rhs = expected_empirical + (kl + ln_inv_delta + psi.value) / lambda;
    let rhs_std_error = psi.std_error / lambda;
    Ok(BoundCertificate {
        bound_kind,
        lambda,
        delta,
        expected_empirical,
        kl,
        psi,
        rhs,
        rhs_std_error,
        components,
    })
}
