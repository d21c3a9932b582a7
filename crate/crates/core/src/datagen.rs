//! Dataset generators for all data models, ARX simulation, the time-series
//! to regression recast, and CSV I/O.
//!
//! Every generator is a pure function of (model, size, [`SeedSpec`]); the
//! same seed always yields the same bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ArxModel, CorrelatedModel, DataModel, Dataset, IidModel};
use crate::seed::SeedSpec;
use crate::spectral;

/// Transient threshold used to size the ARX burn-in.
const BURN_IN_DECAY: f64 = 1e-8;

/// A simulated scalar time series: outputs y, exogenous inputs u, and the
/// number of initial samples discarded to wash out the zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPair {
    y: DVector<f64>,
    u: DVector<f64>,
    burn_in_used: usize,
}

impl TimeSeriesPair {
    pub fn new(y: DVector<f64>, u: DVector<f64>, burn_in_used: usize) -> Result<Self> {
        if y.len() != u.len() || y.is_empty() {
            return Err(Error::dims("y and u must be non-empty and equal length".to_string()));
        }
        if !y.iter().all(|v| v.is_finite()) || !u.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("time series values must be finite"));
        }
        Ok(TimeSeriesPair { y, u, burn_in_used })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn burn_in_used(&self) -> usize {
        self.burn_in_used
    }
}

/// Sample n i.i.d. rows x ~ N(0, sigma_x^2 I) with labels y = w* . x + eps.
pub fn sample_iid(model: &IidModel, n: usize, seed: SeedSpec) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let d = model.dim();
    let mut rng = seed.rng();
    let x = DMatrix::from_fn(n, d, |_, _| {
        model.sigma_x * rng.sample::<f64, _>(StandardNormal)
    });
    let y = DVector::from_fn(n, |i, _| {
        x.row(i).transpose().dot(&model.w_star)
            + model.sigma_eps * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(x, y)
}

/// Sample the stacked input vector X_{1:n} ~ N(0, Q_{X,n}) through a Cholesky
/// factor of the joint covariance, then attach labels y_i = w* . x_i + eps_i.
///
/// When rows are independent the joint factor is block-diagonal, so rows are
/// drawn from the Q_x factor directly; this produces the same numbers as
/// factoring the full block-diagonal Q_{X,n} while staying O(n d^2).
pub fn sample_correlated(model: &CorrelatedModel, n: usize, seed: SeedSpec) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let d = model.dim();
    let mut rng = seed.rng();
    let x = if matches!(model.joint, crate::model::JointCovarianceSpec::IndependentRows) {
        let chol = Cholesky::new(model.q_x.clone()).ok_or_else(|| {
            Error::NotPositiveDefinite("Q_x failed Cholesky".to_string())
        })?;
        let l = chol.l();
        let mut x = DMatrix::<f64>::zeros(n, d);
        for i in 0..n {
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let row = &l * z;
            for j in 0..d {
                x[(i, j)] = row[j];
            }
        }
        x
    } else {
        let data_model = DataModel::CorrelatedGaussian(model.clone());
        let qxn = spectral::joint_covariance(&data_model, n)?;
        let chol = Cholesky::new(qxn).ok_or_else(|| {
            Error::NotPositiveDefinite("joint covariance Q_{X,n} failed Cholesky".to_string())
        })?;
        let z = DVector::from_fn(n * d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let stacked = chol.l() * z;
        DMatrix::from_fn(n, d, |i, j| stacked[i * d + j])
    };
    let y = DVector::from_fn(n, |i, _| {
        x.row(i).transpose().dot(&model.w_star)
            + model.sigma_eps * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::new(x, y)
}

/// Number of burn-in steps: the transient of a stable recursion decays like
/// rho^t, so ceil(ln(1e-8)/ln(rho)) steps push it below 1e-8 of its initial
/// size. At least k steps are always discarded so the returned window has a
/// full lag history.
pub fn arx_burn_in(model: &ArxModel) -> usize {
    let rho = model.companion_spectral_radius();
    let k = model.order();
    if rho <= 0.0 {
        return k;
    }
    let steps = (BURN_IN_DECAY.ln() / rho.ln()).ceil();
    k.max(steps as usize)
}

/// Simulate the ARX recursion from a zero initial state and return the
/// post-burn-in window of length `t`.
pub fn simulate_arx(model: &ArxModel, t: usize, seed: SeedSpec) -> Result<TimeSeriesPair> {
    if t == 0 {
        return Err(Error::invalid("series length must be at least 1"));
    }
    model.check_stable()?;
    let k = model.order();
    let burn = arx_burn_in(model);
    let total = burn + t;
    let mut rng = seed.rng();
    let u: Vec<f64> = (0..total)
        .map(|_| model.sigma_u * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let e: Vec<f64> = (0..total)
        .map(|_| model.sigma_e * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut y = vec![0.0f64; total];
    for t_idx in 0..total {
        let mut value = e[t_idx];
        for i in 0..k {
            if t_idx > i {
                value += model.a[i] * y[t_idx - i - 1];
                value += model.b[i] * u[t_idx - i - 1];
            }
        }
        y[t_idx] = value;
    }
    TimeSeriesPair::new(
        DVector::from_iterator(t, y[burn..].iter().copied()),
        DVector::from_iterator(t, u[burn..].iter().copied()),
        burn,
    )
}

/// Recast a time series as a regression problem with k lagged outputs and k
/// lagged inputs per row:
/// Y_j = y[j+k], X_j = (y[j+k-1], ..., y[j], u[j+k-1], ..., u[j]),
/// giving n = T - k rows of dimension 2k.
pub fn recast_arx(ts: &TimeSeriesPair, k: usize) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::invalid("lag order k must be at least 1"));
    }
    let t = ts.len();
    if t <= 2 * k {
        return Err(Error::invalid(format!(
            "series length {t} must exceed 2k = {}",
            2 * k
        )));
    }
    let n = t - k;
    let d = 2 * k;
    let y_series = ts.y();
    let u_series = ts.u();
    let x = DMatrix::from_fn(n, d, |j, col| {
        if col < k {
            y_series[j + k - 1 - col]
        } else {
            u_series[j + k - 1 - (col - k)]
        }
    });
    let labels = DVector::from_fn(n, |j, _| y_series[j + k]);
    Dataset::new(x, labels)
}

/// Sample a size-n dataset from any model. For ARX the series is simulated
/// at length n + k and recast, so the rows follow the stationary regressor
/// distribution.
pub fn sample_dataset(model: &DataModel, n: usize, seed: SeedSpec) -> Result<Dataset> {
    match model {
        DataModel::IidIsotropic(m) => sample_iid(m, n, seed),
        DataModel::CorrelatedGaussian(m) => sample_correlated(m, n, seed),
        DataModel::Arx(m) => {
            let ts = simulate_arx(m, n + m.order(), seed)?;
            recast_arx(&ts, m.order())
        }
    }
}

/// Render a dataset as CSV with header `x1,...,xd,y`. Values use the
/// shortest round-trip decimal representation, so write-then-load is
/// lossless.
pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut out = String::new();
    for j in 0..dataset.d() {
        out.push_str(&format!("x{},", j + 1));
    }
    out.push_str("y\n");
    for i in 0..dataset.n() {
        for j in 0..dataset.d() {
            out.push_str(&format!("{},", dataset.x()[(i, j)]));
        }
        out.push_str(&format!("{}\n", dataset.y()[i]));
    }
    out
}

pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(dataset_to_csv(dataset).as_bytes())?;
    Ok(())
}

/// Load a dataset from CSV. The header must be exactly `x1,...,xd,y`;
/// non-finite values and ragged rows are rejected with the offending line
/// number.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: path_str.clone(),
        line: 1,
        message: "empty file".to_string(),
    })?;
    let header = header.trim_end_matches('\r');
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(Error::CsvParse {
            path: path_str,
            line: 1,
            message: "header must be x1,...,xd,y".to_string(),
        });
    }
    let d = cols.len() - 1;
    for (j, col) in cols[..d].iter().enumerate() {
        if *col != format!("x{}", j + 1) {
            return Err(Error::CsvParse {
                path: path_str,
                line: 1,
                message: format!("expected column x{}, found {col:?}", j + 1),
            });
        }
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::CsvParse {
                path: path_str,
                line: line_no,
                message: format!("expected {} columns, found {}", d + 1, fields.len()),
            });
        }
        let mut values = Vec::with_capacity(d + 1);
        for field in &fields {
            let value: f64 = field.trim().parse().map_err(|_| Error::CsvParse {
                path: path_str.clone(),
                line: line_no,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvParse {
                    path: path_str.clone(),
                    line: line_no,
                    message: format!("non-finite value {field:?}"),
                });
            }
            values.push(value);
        }
        xs.extend_from_slice(&values[..d]);
        ys.push(values[d]);
        n += 1;
    }
    if n == 0 {
        return Err(Error::CsvParse {
            path: path_str,
            line: 1,
            message: "no data rows".to_string(),
        });
    }
    let x = DMatrix::from_row_slice(n, d, &xs);
    Dataset::new(x, DVector::from_vec(ys))
}
