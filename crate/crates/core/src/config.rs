//! Run configuration: a JSON document validated up front, mapped onto the
//! library types. Unknown keys are rejected so configs stay reproducible
//! documents.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundKind, PriorSpec};
use crate::error::{Error, Result};
use crate::experiments::LambdaRule;
use crate::model::{ArxModel, CorrelatedModel, DataModel, IidModel, JointCovarianceSpec};
use crate::posterior::GaussianWeightMeasure;
use crate::seed::SeedSpec;

fn default_psi_samples() -> u64 {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_rule: Option<LambdaRuleConfig>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub lambda_grid_points: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default = "default_psi_samples")]
    pub psi_samples: u64,
    #[serde(default)]
    pub bound: Option<BoundKind>,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub loss_clip: Option<f64>,
    #[serde(default)]
    pub thm2_c: Option<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn seed_spec(&self) -> SeedSpec {
        SeedSpec::new(self.seed, self.stream)
    }

    pub fn data_model(&self) -> Result<DataModel> {
        self.model.build()
    }

    /// The prior, defaulting to an untruncated standard normal of the model
    /// dimension when absent.
    pub fn prior_spec(&self, dim: usize) -> Result<PriorSpec> {
        match &self.prior {
            None => Ok(PriorSpec::untruncated(GaussianWeightMeasure::standard(
                dim, 1.0,
            )?)),
            Some(p) => p.build(dim),
        }
    }

    pub fn require_lambda(&self) -> Result<f64> {
        self.lambda
            .ok_or_else(|| Error::Config("field 'lambda' is required".to_string()))
    }

    pub fn require_delta(&self) -> Result<f64> {
        let delta = self
            .delta
            .ok_or_else(|| Error::Config("field 'delta' is required".to_string()))?;
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Config("delta must lie in (0, 1]".to_string()));
        }
        Ok(delta)
    }

    pub fn require_n(&self) -> Result<usize> {
        let n = self
            .n
            .ok_or_else(|| Error::Config("field 'n' is required".to_string()))?;
        if n == 0 {
            return Err(Error::Config("n must be at least 1".to_string()));
        }
        Ok(n)
    }

    pub fn require_n_grid(&self) -> Result<Vec<usize>> {
        self.n_grid
            .clone()
            .ok_or_else(|| Error::Config("field 'n_grid' is required".to_string()))
    }

    pub fn require_trials(&self) -> Result<u64> {
        let trials = self
            .trials
            .ok_or_else(|| Error::Config("field 'trials' is required".to_string()))?;
        if trials == 0 {
            return Err(Error::Config("trials must be positive".to_string()));
        }
        Ok(trials)
    }

    pub fn bound_kind(&self) -> BoundKind {
        self.bound.unwrap_or(BoundKind::Thm3Exact)
    }

    pub fn lambda_rule(&self) -> Result<LambdaRule> {
        match (&self.lambda_rule, self.lambda) {
            (Some(rule), _) => Ok(rule.build()),
            (None, Some(l)) => Ok(LambdaRule::Fixed(l)),
            (None, None) => Err(Error::Config(
                "either 'lambda' or 'lambda_rule' is required".to_string(),
            )),
        }
    }

    /// Canonical digest of the whole configuration.
    pub fn digest(&self) -> String {
        crate::experiments::digest_str(&serde_json::to_string(self).unwrap_or_default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Iid {
        w_star: Vec<f64>,
        sigma_x: f64,
        sigma_eps: f64,
    },
    Correlated {
        w_star: Vec<f64>,
        q_x: Vec<Vec<f64>>,
        sigma_eps: f64,
        #[serde(default)]
        joint: JointConfig,
    },
    Arx {
        a: Vec<f64>,
        b: Vec<f64>,
        sigma_e: f64,
        sigma_u: f64,
    },
}

impl ModelConfig {
    pub fn build(&self) -> Result<DataModel> {
        match self {
            ModelConfig::Iid {
                w_star,
                sigma_x,
                sigma_eps,
            } => Ok(DataModel::IidIsotropic(IidModel::new(
                DVector::from_vec(w_star.clone()),
                *sigma_x,
                *sigma_eps,
            )?)),
            ModelConfig::Correlated {
                w_star,
                q_x,
                sigma_eps,
                joint,
            } => {
                let q = rows_to_matrix(q_x)?;
                Ok(DataModel::CorrelatedGaussian(CorrelatedModel::new(
                    DVector::from_vec(w_star.clone()),
                    q,
                    joint.build()?,
                    *sigma_eps,
                )?))
            }
            ModelConfig::Arx {
                a,
                b,
                sigma_e,
                sigma_u,
            } => Ok(DataModel::Arx(ArxModel::new(
                DVector::from_vec(a.clone()),
                DVector::from_vec(b.clone()),
                *sigma_e,
                *sigma_u,
            )?)),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointConfig {
    #[default]
    IndependentRows,
    StationaryLags {
        lags: Vec<Vec<Vec<f64>>>,
    },
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
}

impl JointConfig {
    fn build(&self) -> Result<JointCovarianceSpec> {
        Ok(match self {
            JointConfig::IndependentRows => JointCovarianceSpec::IndependentRows,
            JointConfig::StationaryLags { lags } => JointCovarianceSpec::StationaryLags(
                lags.iter().map(|m| rows_to_matrix(m)).collect::<Result<_>>()?,
            ),
            JointConfig::Explicit { matrix } => {
                JointCovarianceSpec::Explicit(rows_to_matrix(matrix)?)
            }
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config("matrix must not be empty".to_string()));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config("matrix rows have unequal lengths".to_string()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    pub sigma_pi: f64,
    #[serde(default)]
    pub truncation_radius: Option<f64>,
    /// Truncate at the default radius (5 sigma_pi) without spelling it out.
    #[serde(default)]
    pub truncated: bool,
}

impl PriorConfig {
    pub fn build(&self, dim: usize) -> Result<PriorSpec> {
        let mean = match &self.mean {
            None => DVector::zeros(dim),
            Some(m) => {
                if m.len() != dim {
                    return Err(Error::Config(format!(
                        "prior mean has length {}, model dimension is {dim}",
                        m.len()
                    )));
                }
                DVector::from_vec(m.clone())
            }
        };
        let base = GaussianWeightMeasure::isotropic(mean, self.sigma_pi)?;
        match (self.truncation_radius, self.truncated) {
            (Some(r), _) => PriorSpec::truncated(base, r),
            (None, true) => PriorSpec::truncated_default(base),
            (None, false) => Ok(PriorSpec::untruncated(base)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRuleConfig {
    Fixed(f64),
    SqrtN,
    NPowInvD,
}

impl LambdaRuleConfig {
    fn build(&self) -> LambdaRule {
        match self {
            LambdaRuleConfig::Fixed(l) => LambdaRule::Fixed(*l),
            LambdaRuleConfig::SqrtN => LambdaRule::SqrtN,
            LambdaRuleConfig::NPowInvD => LambdaRule::NPowInvD,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_iid_config_parses() {
        let text = r#"{
            "model": {"kind": "iid", "w_star": [0.6, -0.8], "sigma_x": 1.0, "sigma_eps": 0.5},
            "lambda": 0.3, "delta": 0.05, "n": 50, "seed": 42
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        assert_eq!(config.psi_samples, 100_000);
        let model = config.data_model().unwrap();
        assert_eq!(model.dim(), 2);
        let prior = config.prior_spec(2).unwrap();
        assert!(!prior.is_truncated());
        assert_eq!(config.digest().len(), 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{
            "model": {"kind": "iid", "w_star": [1.0], "sigma_x": 1.0, "sigma_eps": 0.5},
            "seed": 1, "surprise": true
        }"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))));
    }

    #[test]
    fn arx_and_prior_options() {
        let text = r#"{
            "model": {"kind": "arx", "a": [0.5], "b": [0.3], "sigma_e": 0.5, "sigma_u": 1.0},
            "prior": {"sigma_pi": 1.0, "truncated": true},
            "lambda": 4.0, "delta": 0.05, "n": 64, "trials": 500, "seed": 7,
            "bound": "thm4"
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        let model = config.data_model().unwrap();
        assert_eq!(model.dim(), 2);
        let prior = config.prior_spec(model.dim()).unwrap();
        assert_eq!(prior.truncation_radius, Some(5.0));
        assert_eq!(config.bound_kind(), BoundKind::Thm4);
    }

    #[test]
    fn lambda_rule_variants() {
        let text = r#"{
            "model": {"kind": "iid", "w_star": [1.0], "sigma_x": 1.0, "sigma_eps": 0.5},
            "lambda_rule": "sqrt_n", "seed": 1
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        assert!(matches!(config.lambda_rule().unwrap(), LambdaRule::SqrtN));

        let text = r#"{
            "model": {"kind": "iid", "w_star": [1.0], "sigma_x": 1.0, "sigma_eps": 0.5},
            "lambda_rule": {"fixed": 1.5}, "seed": 1
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        assert!(matches!(
            config.lambda_rule().unwrap(),
            LambdaRule::Fixed(l) if l == 1.5
        ));
    }

    #[test]
    fn correlated_model_with_explicit_joint() {
        let text = r#"{
            "model": {
                "kind": "correlated",
                "w_star": [0.5],
                "q_x": [[1.0]],
                "sigma_eps": 0.5,
                "joint": {"type": "explicit", "matrix": [[1.0, 0.9], [0.9, 1.0]]}
            },
            "seed": 3
        }"#;
        let config = RunConfig::from_json(text).unwrap();
        assert!(config.data_model().is_ok());
    }

    #[test]
    fn config_digest_is_stable() {
        let text = r#"{
            "model": {"kind": "iid", "w_star": [1.0], "sigma_x": 1.0, "sigma_eps": 0.5},
            "seed": 1
        }"#;
        let a = RunConfig::from_json(text).unwrap().digest();
        let b = RunConfig::from_json(text).unwrap().digest();
        assert_eq!(a, b);
    }
}
