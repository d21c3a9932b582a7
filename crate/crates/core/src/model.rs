//! Predictors, losses, and closed-form generalization losses for all data
//! models.
//!
//! A predictor is a linear map `x -> w . x` identified with its weight vector
//! `w` in R^d. Three generating processes are supported: isotropic Gaussian
//! inputs, correlated Gaussian inputs with an explicit input covariance, and
//! scalar ARX time series recast as regression on lagged outputs and inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::spectral;

/// Spectral-radius margin below 1 required of a stable ARX model. Models
/// closer to the unit circle than this are rejected: the stationary
/// covariance iteration converges too slowly to be trustworthy there.
pub const STABILITY_LIMIT: f64 = 1.0 - 1e-9;

/// Isotropic Gaussian inputs with a linear-plus-noise label.
///
/// Inputs are N(0, sigma_x^2 I) in R^d, labels are `w_star . x + eps` with
/// eps ~ N(0, sigma_eps^2), everything independent across samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IidModel {
    pub w_star: DVector<f64>,
    pub sigma_x: f64,
    pub sigma_eps: f64,
}

impl IidModel {
    pub fn new(w_star: DVector<f64>, sigma_x: f64, sigma_eps: f64) -> Result<Self> {
        if w_star.is_empty() || !w_star.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("w_star must be a non-empty finite vector"));
        }
        if !(sigma_x > 0.0) || !sigma_x.is_finite() {
            return Err(Error::invalid("sigma_x must be positive"));
        }
        if !(sigma_eps > 0.0) || !sigma_eps.is_finite() {
            return Err(Error::invalid("sigma_eps must be positive"));
        }
        Ok(IidModel {
            w_star,
            sigma_x,
            sigma_eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }
}

/// How the joint covariance of the stacked inputs X_{1:n} is obtained for a
/// correlated Gaussian model.
#[derive(Debug, Clone, PartialEq)]
pub enum JointCovarianceSpec {
    /// Rows independent: the joint covariance is block-diagonal with Q_x
    /// blocks.
    IndependentRows,
    /// Stationary cross-covariances per lag; `lags[0]` must equal Q_x and
    /// lags beyond the list are zero.
    StationaryLags(Vec<DMatrix<f64>>),
    /// An explicit joint covariance; leading principal blocks are used for
    /// smaller n.
    Explicit(DMatrix<f64>),
}

/// Identically distributed Gaussian inputs N(0, Q_x), possibly dependent
/// across samples, with the same label mechanism as [`IidModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedModel {
    pub w_star: DVector<f64>,
    pub q_x: DMatrix<f64>,
    pub joint: JointCovarianceSpec,
    pub sigma_eps: f64,
}

impl CorrelatedModel {
    pub fn new(
        w_star: DVector<f64>,
        q_x: DMatrix<f64>,
        joint: JointCovarianceSpec,
        sigma_eps: f64,
    ) -> Result<Self> {
        let d = w_star.len();
        if d == 0 || !w_star.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("w_star must be a non-empty finite vector"));
        }
        if q_x.nrows() != d || q_x.ncols() != d {
            return Err(Error::dims(format!(
                "Q_x must be {d}x{d}, got {}x{}",
                q_x.nrows(),
                q_x.ncols()
            )));
        }
        if !(sigma_eps > 0.0) || !sigma_eps.is_finite() {
            return Err(Error::invalid("sigma_eps must be positive"));
        }
        let min_eig = spectral::min_eigenvalue(&q_x)?;
        if !(min_eig > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "Q_x has minimal eigenvalue {min_eig}"
            )));
        }
        match &joint {
            JointCovarianceSpec::IndependentRows => {}
            JointCovarianceSpec::StationaryLags(lags) => {
                if lags.is_empty() {
                    return Err(Error::invalid("stationary lag list must not be empty"));
                }
                for (ell, c) in lags.iter().enumerate() {
                    if c.nrows() != d || c.ncols() != d {
                        return Err(Error::dims(format!("lag-{ell} covariance must be {d}x{d}")));
                    }
                }
                let gap = (&lags[0] - &q_x).amax();
                if gap > 1e-12 * q_x.amax().max(1.0) {
                    return Err(Error::invalid(
                        "lag-0 cross-covariance must equal Q_x".to_string(),
                    ));
                }
            }
            JointCovarianceSpec::Explicit(m) => {
                if m.nrows() != m.ncols() || m.nrows() % d != 0 || m.nrows() == 0 {
                    return Err(Error::dims(
                        "explicit joint covariance must be square with side a multiple of d"
                            .to_string(),
                    ));
                }
            }
        }
        Ok(CorrelatedModel {
            w_star,
            q_x,
            joint,
            sigma_eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_star.len()
    }
}

/// Scalar ARX(k) model: y_t = sum a_i y_{t-i} + sum b_i u_{t-i} + e_t with
/// white Gaussian noise e and white Gaussian exogenous input u.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub sigma_e: f64,
    pub sigma_u: f64,
}

impl ArxModel {
    pub fn new(a: DVector<f64>, b: DVector<f64>, sigma_e: f64, sigma_u: f64) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::dims(
                "a and b must be non-empty and of equal length".to_string(),
            ));
        }
        if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("ARX coefficients must be finite"));
        }
        if !(sigma_e > 0.0) || !(sigma_u > 0.0) || !sigma_e.is_finite() || !sigma_u.is_finite() {
            return Err(Error::invalid("sigma_e and sigma_u must be positive"));
        }
        let model = ArxModel {
            a,
            b,
            sigma_e,
            sigma_u,
        };
        model.check_stable()?;
        Ok(model)
    }

    /// Lag order k.
    pub fn order(&self) -> usize {
        self.a.len()
    }

    /// Regression dimension after recasting: k lagged outputs + k lagged inputs.
    pub fn dim(&self) -> usize {
        2 * self.order()
    }

    /// The best linear predictor in the recast problem: (a_1..a_k, b_1..b_k).
    pub fn w_star(&self) -> DVector<f64> {
        let k = self.order();
        DVector::from_fn(2 * k, |i, _| if i < k { self.a[i] } else { self.b[i - k] })
    }

    /// Largest eigenvalue modulus of the companion matrix of the output
    /// recursion, i.e. the largest root modulus of z^k - a_1 z^{k-1} - ... - a_k.
    pub fn companion_spectral_radius(&self) -> f64 {
        let k = self.order();
        let mut c = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            c[(0, j)] = self.a[j];
        }
        for i in 1..k {
            c[(i, i - 1)] = 1.0;
        }
        c.complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    pub fn check_stable(&self) -> Result<()> {
        let rho = self.companion_spectral_radius();
        if rho < STABILITY_LIMIT {
            Ok(())
        } else {
            Err(Error::Unstable {
                rho,
                limit: STABILITY_LIMIT,
            })
        }
    }
}

/// Tagged description of the data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub enum DataModel {
    IidIsotropic(IidModel),
    CorrelatedGaussian(CorrelatedModel),
    Arx(ArxModel),
}

impl DataModel {
    /// Regression dimension d.
    pub fn dim(&self) -> usize {
        match self {
            DataModel::IidIsotropic(m) => m.dim(),
            DataModel::CorrelatedGaussian(m) => m.dim(),
            DataModel::Arx(m) => m.dim(),
        }
    }

    /// The label noise standard deviation (sigma_e for ARX).
    pub fn sigma_eps(&self) -> f64 {
        match self {
            DataModel::IidIsotropic(m) => m.sigma_eps,
            DataModel::CorrelatedGaussian(m) => m.sigma_eps,
            DataModel::Arx(m) => m.sigma_e,
        }
    }

    /// The true weight vector.
    pub fn w_star(&self) -> DVector<f64> {
        match self {
            DataModel::IidIsotropic(m) => m.w_star.clone(),
            DataModel::CorrelatedGaussian(m) => m.w_star.clone(),
            DataModel::Arx(m) => m.w_star(),
        }
    }

    /// Resolve the per-sample input covariance. For ARX this solves the
    /// stationary covariance fixed point, which is the expensive part; hot
    /// loops should resolve once and reuse the [`ResolvedModel`].
    pub fn resolve(&self) -> Result<ResolvedModel> {
        let qx = match self {
            DataModel::IidIsotropic(m) => QxForm::Isotropic {
                sigma_x2: m.sigma_x * m.sigma_x,
                dim: m.dim(),
            },
            DataModel::CorrelatedGaussian(m) => QxForm::Dense(m.q_x.clone()),
            DataModel::Arx(m) => QxForm::Dense(spectral::arx_state_covariance(m)?.q_x().clone()),
        };
        Ok(ResolvedModel {
            w_star: self.w_star(),
            qx,
            sigma_eps: self.sigma_eps(),
        })
    }
}

/// Input covariance in a form that keeps the isotropic case exact.
#[derive(Debug, Clone, PartialEq)]
pub enum QxForm {
    Isotropic { sigma_x2: f64, dim: usize },
    Dense(DMatrix<f64>),
}

impl QxForm {
    pub fn dim(&self) -> usize {
        match self {
            QxForm::Isotropic { dim, .. } => *dim,
            QxForm::Dense(q) => q.nrows(),
        }
    }

    /// delta^T Q_x delta.
    pub fn quad_form(&self, delta: &DVector<f64>) -> f64 {
        match self {
            QxForm::Isotropic { sigma_x2, .. } => sigma_x2 * delta.norm_squared(),
            QxForm::Dense(q) => (q * delta).dot(delta),
        }
    }

    /// tr(Q_x S) for a symmetric S.
    pub fn trace_product(&self, s: &DMatrix<f64>) -> f64 {
        match self {
            QxForm::Isotropic { sigma_x2, .. } => sigma_x2 * s.trace(),
            QxForm::Dense(q) => q.iter().zip(s.iter()).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        match self {
            QxForm::Isotropic { sigma_x2, dim } => DMatrix::identity(*dim, *dim) * *sigma_x2,
            QxForm::Dense(q) => q.clone(),
        }
    }
}

/// A data model with its input covariance already computed.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedModel {
    pub w_star: DVector<f64>,
    pub qx: QxForm,
    pub sigma_eps: f64,
}

impl ResolvedModel {
    pub fn dim(&self) -> usize {
        self.w_star.len()
    }

    /// Generalization loss of predictor w:
    /// v_w = (w* - w)^T Q_x (w* - w) + sigma_eps^2; the isotropic case reduces
    /// to sigma_x^2 ||w* - w||^2 + sigma_eps^2.
    pub fn v_w(&self, w: &DVector<f64>) -> f64 {
        let delta = &self.w_star - w;
        self.qx.quad_form(&delta) + self.sigma_eps * self.sigma_eps
    }

    /// (v_w, rho_{n,w}) with rho_{n,w} = rho_n ||w* - w||^2 + sigma_eps^2.
    pub fn v_and_rho(&self, w: &DVector<f64>, rho_n: f64) -> (f64, f64) {
        let delta = &self.w_star - w;
        let se2 = self.sigma_eps * self.sigma_eps;
        (
            self.qx.quad_form(&delta) + se2,
            rho_n * delta.norm_squared() + se2,
        )
    }
}

/// A regression sample: n rows of inputs with scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("dataset must have n >= 1 and d >= 1"));
        }
        if x.nrows() != y.len() {
            return Err(Error::dims(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) || !y.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("dataset values must be finite"));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
}

/// The squared loss (y - y_hat)^2.
pub fn squared_loss(y_hat: f64, y: f64) -> Result<f64> {
    if !y_hat.is_finite() || !y.is_finite() {
        return Err(Error::invalid("squared_loss inputs must be finite"));
    }
    let r = y - y_hat;
    Ok(r * r)
}

/// The squared loss clipped to [0, clip].
pub fn clipped_squared_loss(y_hat: f64, y: f64, clip: f64) -> Result<f64> {
    if !(clip > 0.0) {
        return Err(Error::invalid("clip level must be positive"));
    }
    Ok(squared_loss(y_hat, y)?.min(clip))
}

/// Mean squared prediction error of w on the sample, (1/n) sum (y_i - w.x_i)^2.
pub fn empirical_loss(w: &DVector<f64>, s: &Dataset) -> Result<f64> {
    if w.len() != s.d() {
        return Err(Error::dims(format!(
            "weight dimension {} does not match dataset d {}",
            w.len(),
            s.d()
        )));
    }
    let residual = s.y() - s.x() * w;
    let squares: Vec<f64> = residual.iter().map(|r| r * r).collect();
    Ok(pairwise_sum(&squares) / s.n() as f64)
}

/// Mean clipped squared error, (1/n) sum min((y_i - w.x_i)^2, clip).
pub fn clipped_empirical_loss(w: &DVector<f64>, s: &Dataset, clip: f64) -> Result<f64> {
    if !(clip > 0.0) {
        return Err(Error::invalid("clip level must be positive"));
    }
    if w.len() != s.d() {
        return Err(Error::dims("weight dimension does not match dataset".to_string()));
    }
    let residual = s.y() - s.x() * w;
    let losses: Vec<f64> = residual.iter().map(|r| (r * r).min(clip)).collect();
    Ok(pairwise_sum(&losses) / s.n() as f64)
}

/// Expected squared prediction error of w under the data model.
pub fn generalization_loss(w: &DVector<f64>, model: &DataModel) -> Result<f64> {
    if w.len() != model.dim() {
        return Err(Error::dims(format!(
            "weight dimension {} does not match model dimension {}",
            w.len(),
            model.dim()
        )));
    }
    Ok(model.resolve()?.v_w(w))
}

/// Expected clipped squared error E[min((y - w.x)^2, clip)] under the model;
/// the prediction error is N(0, v_w), so this is a scalar Gaussian moment.
pub fn clipped_generalization_loss(w: &DVector<f64>, model: &DataModel, clip: f64) -> Result<f64> {
    if !(clip > 0.0) {
        return Err(Error::invalid("clip level must be positive"));
    }
    let v = generalization_loss(w, model)?;
    Ok(crate::numeric::gaussian_clipped_square_moment(
        0.0,
        v.sqrt(),
        clip,
    ))
}

/// (v_w, rho_{n,w}): the generalization loss and its eigenvalue-floored
/// counterpart rho_n ||w* - w||^2 + sigma_eps^2. Whenever rho_n is at most
/// the minimal eigenvalue of Q_x, rho_{n,w} <= v_w.
pub fn v_and_rho_terms(w: &DVector<f64>, model: &DataModel, rho_n: f64) -> Result<(f64, f64)> {
    if !(rho_n >= 0.0) {
        return Err(Error::invalid("rho_n must be non-negative"));
    }
    if w.len() != model.dim() {
        return Err(Error::dims("weight dimension does not match model".to_string()));
    }
    Ok(model.resolve()?.v_and_rho(w, rho_n))
}
