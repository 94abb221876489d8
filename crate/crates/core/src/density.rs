//! Multivariate Gaussian densities evaluated through a Cholesky factor.
//!
//! Everything in the estimators ends up here: component log-densities, the
//! log-sum-exp used to combine them, and the ridge repair that keeps EM alive
//! when a component collapses onto a handful of points.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal inflation schedule tried when a Cholesky factorization fails.
///
/// Attempt `j` adds `steps[j] * trace(cov) / p` to the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeSchedule {
    pub steps: Vec<f64>,
}

impl Default for RidgeSchedule {
    fn default() -> Self {
        Self {
            steps: vec![1e-10, 1e-9, 1e-8, 1e-7, 1e-6],
        }
    }
}

/// Lower Cholesky factor of a (possibly ridge-repaired) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub factor: DMatrix<f64>,
    pub logdet: f64,
    /// Amount added to every diagonal entry; zero when no repair was needed.
    pub ridge: f64,
}

/// Factor `cov` with the default ridge schedule.
pub fn cholesky_logdet(cov: &DMatrix<f64>) -> Result<CholeskyFactor> {
    cholesky_logdet_with(cov, &RidgeSchedule::default())
}

/// Factor `cov`, inflating the diagonal along `schedule` until it succeeds.
///
/// The input is symmetrized as `(A + Aᵀ) / 2` first, so `A` and `Aᵀ` give
/// bitwise identical factors.
pub fn cholesky_logdet_with(cov: &DMatrix<f64>, schedule: &RidgeSchedule) -> Result<CholeskyFactor> {
    let p = cov.nrows();
    if p == 0 || cov.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p.max(1),
            found: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let sym = DMatrix::from_fn(p, p, |i, j| 0.5 * (cov[(i, j)] + cov[(j, i)]));
    let scale = sym.trace() / p as f64;

    let mut ridge = 0.0;
    for attempt in 0..=schedule.steps.len() {
        if attempt > 0 {
            ridge = schedule.steps[attempt - 1] * scale;
        }
        let mut trial = sym.clone();
        for i in 0..p {
            trial[(i, i)] += ridge;
        }
        if let Some(chol) = trial.cholesky() {
            let factor = chol.unpack();
            let logdet = 2.0 * (0..p).map(|i| factor[(i, i)].ln()).sum::<f64>();
            if logdet.is_finite() {
                return Ok(CholeskyFactor {
                    factor,
                    logdet,
                    ridge,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite)
}

/// Numerically stable `log Σ exp(v)`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllNegInfinite);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    if values.len() == 1 {
        return Ok(max);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// A feature vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One mixture component: a mean vector and a full covariance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ComponentRepr", try_from = "ComponentRepr")]
pub struct GaussianComponent {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianComponent {
    /// Validates shape and symmetry (relative tolerance 1e-12).
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if p == 0 {
            return Err(Error::InvalidInput("empty mean vector".into()));
        }
        if covariance.nrows() != p || covariance.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: covariance.nrows(),
            });
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite component parameter".into()));
        }
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in 0..i {
                if (covariance[(i, j)] - covariance[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput("covariance is not symmetric".into()));
                }
            }
        }
        Ok(Self { mean, covariance })
    }

    /// Builds a component whose covariance has already been ridge-repaired,
    /// returning the factor alongside it.
    pub fn repaired(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        schedule: &RidgeSchedule,
    ) -> Result<(Self, CholeskyFactor)> {
        let chol = cholesky_logdet_with(&covariance, schedule)?;
        let p = covariance.nrows();
        let covariance = DMatrix::from_fn(p, p, |i, j| {
            let v = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            if i == j {
                v + chol.ridge
            } else {
                v
            }
        });
        Ok((Self::new(mean, covariance)?, chol))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn prepare(&self) -> Result<PreparedGaussian> {
        self.prepare_with(&RidgeSchedule::default())
    }

    pub fn prepare_with(&self, schedule: &RidgeSchedule) -> Result<PreparedGaussian> {
        let chol = cholesky_logdet_with(&self.covariance, schedule)?;
        Ok(PreparedGaussian::from_factor(self.mean.as_slice(), &chol))
    }
}

#[derive(Serialize, Deserialize)]
struct ComponentRepr {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl From<GaussianComponent> for ComponentRepr {
    fn from(c: GaussianComponent) -> Self {
        let p = c.dim();
        Self {
            mean: c.mean.as_slice().to_vec(),
            covariance: (0..p)
                .map(|i| (0..p).map(|j| c.covariance[(i, j)]).collect())
                .collect(),
        }
    }
}

impl TryFrom<ComponentRepr> for GaussianComponent {
    type Error = Error;

    fn try_from(r: ComponentRepr) -> Result<Self> {
        let p = r.mean.len();
        if r.covariance.len() != p || r.covariance.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: r.covariance.len(),
            });
        }
        let cov = DMatrix::from_fn(p, p, |i, j| r.covariance[i][j]);
        GaussianComponent::new(DVector::from_vec(r.mean), cov)
    }
}

/// A component ready for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct PreparedGaussian {
    mean: Vec<f64>,
    // row-major lower triangle
    chol: Vec<f64>,
    log_norm: f64,
}

impl PreparedGaussian {
    fn from_factor(mean: &[f64], chol: &CholeskyFactor) -> Self {
        let p = mean.len();
        let mut rows = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..=i {
                rows[i * p + j] = chol.factor[(i, j)];
            }
        }
        Self {
            mean: mean.to_vec(),
            chol: rows,
            log_norm: -0.5 * (p as f64 * LN_2PI + chol.logdet),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `x`; the caller guarantees `x.len() == self.dim()`.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let p = self.mean.len();
        debug_assert_eq!(x.len(), p);
        let mut stack = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if p <= stack.len() {
            &mut stack[..p]
        } else {
            heap = vec![0.0; p];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..p {
            let row = &self.chol[i * p..i * p + i + 1];
            let mut acc = x[i] - self.mean[i];
            for j in 0..i {
                acc -= row[j] * z[j];
            }
            let zi = acc / row[i];
            z[i] = zi;
            quad += zi * zi;
        }
        self.log_norm - 0.5 * quad
    }
}

/// Log-density of `comp` at `x`.
pub fn gaussian_logpdf(x: &FeatureVector, comp: &GaussianComponent) -> Result<f64> {
    if x.dim() != comp.dim() {
        return Err(Error::DimensionMismatch {
            expected: comp.dim(),
            found: x.dim(),
        });
    }
    Ok(comp.prepare()?.logpdf(x.as_slice()))
}
