//! Classical Gaussian mixture estimation from features alone.
//!
//! `em_fit_marginal` maximizes the marginal log-likelihood
//! `Σᵢ log Σₖ πₖ φₖ(xᵢ)` starting from a k-means initialization. The E- and
//! M-step helpers here are shared with the joint estimator, which differs
//! only in where the per-instance mixing weights come from.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::density::{logsumexp, GaussianComponent, PreparedGaussian, RidgeSchedule};
use crate::error::{Error, Result};

/// Global mixture parameters: components plus global mixing probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub components: Vec<GaussianComponent>,
    pub mixing: Vec<f64>,
}

impl MixtureParams {
    pub fn new(components: Vec<GaussianComponent>, mixing: Vec<f64>) -> Result<Self> {
        let params = Self { components, mixing };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.components.len();
        if k == 0 {
            return Err(Error::InvalidInput("mixture needs at least one component".into()));
        }
        if self.mixing.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: self.mixing.len(),
            });
        }
        let p = self.components[0].dim();
        if let Some(c) = self.components.iter().find(|c| c.dim() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: c.dim(),
            });
        }
        let total: f64 = self.mixing.iter().sum();
        if self.mixing.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidInput(
                "mixing probabilities must be positive and sum to one".into(),
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub(crate) fn prepare(&self, ridge: &RidgeSchedule) -> Result<Vec<PreparedGaussian>> {
        self.components.iter().map(|c| c.prepare_with(ridge)).collect()
    }

    /// Reorder components (and mixing) so that slot `j` holds old slot `order[j]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            components: order.iter().map(|&j| self.components[j].clone()).collect(),
            mixing: order.iter().map(|&j| self.mixing[j]).collect(),
        }
    }
}

/// Iteration controls shared by every EM variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change that stops the global EM loops.
    pub tol: f64,
    pub ridge: RidgeSchedule,
    /// Floor on mixing probabilities; `None` means `1e-6 / K`.
    pub min_mixing: Option<f64>,
    pub seed: u64,
    pub local_max_iter: usize,
    /// Sup-norm change in the local mixing vector that stops local EM.
    pub local_tol: f64,
    /// Drop instance `i` from its own neighbourhood when fitting the mixing
    /// field at the training locations.
    #[serde(default = "default_leave_one_out")]
    pub leave_one_out: bool,
    /// Relative change of the joint objective that stops the outer
    /// alternation of the fully iterated fit.
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
}

fn default_leave_one_out() -> bool {
    true
}

fn default_outer_tol() -> f64 {
    1e-6
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            tol: 1e-8,
            ridge: RidgeSchedule::default(),
            min_mixing: None,
            seed: 0,
            local_max_iter: 500,
            local_tol: 1e-8,
            leave_one_out: true,
            outer_tol: default_outer_tol(),
        }
    }
}

impl FitConfig {
    pub fn min_mixing(&self, k: usize) -> f64 {
        self.min_mixing.unwrap_or(1e-6 / k as f64)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.max_iter == 0 || self.local_max_iter == 0 {
            return Err(Error::InvalidInput("iteration limits must be positive".into()));
        }
        if !(self.tol > 0.0) || !(self.local_tol > 0.0) || !(self.outer_tol > 0.0) {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        let m = self.min_mixing(k);
        if !(m > 0.0 && m < 0.5 / k as f64) {
            return Err(Error::InvalidInput(format!("min_mixing must lie in (0, {})", 0.5 / k as f64)));
        }
        Ok(())
    }
}

/// Outcome of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: MixtureParams,
    /// Objective after each E-step, starting from the initial parameters.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
}

impl FitReport {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

pub(crate) fn check_dim(data: &Dataset, p: usize) -> Result<()> {
    if data.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: data.dim(),
        });
    }
    Ok(())
}

pub(crate) fn relative_change(prev: f64, cur: f64) -> f64 {
    (cur - prev).abs() / (prev.abs() + 1.0)
}

/// Floor every entry at `floor` and renormalize onto the simplex.
pub(crate) fn clamp_simplex(weights: &mut [f64], floor: f64) {
    for w in weights.iter_mut() {
        if !(*w >= floor) {
            *w = floor;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
}

/// Log mixing weights for the E-step: one global row or one row per instance.
pub(crate) enum LogPrior<'a> {
    Global(Vec<f64>),
    PerRow(&'a [f64]),
}

impl LogPrior<'_> {
    fn row(&self, i: usize, k: usize) -> &[f64] {
        match self {
            LogPrior::Global(v) => v,
            LogPrior::PerRow(m) => &m[i * k..(i + 1) * k],
        }
    }
}

const ROW_BLOCK: usize = 256;

/// Responsibilities (N×K, row-major) and the summed log-likelihood.
///
/// Rows are computed in parallel blocks; the sum is reduced sequentially in
/// row order so the result does not depend on the thread count.
pub(crate) fn e_step(
    data: &Dataset,
    comps: &[PreparedGaussian],
    prior: &LogPrior<'_>,
) -> Result<(f64, Vec<f64>)> {
    let n = data.len();
    let k = comps.len();
    let mut resp = vec![0.0; n * k];
    let mut row_ll = vec![0.0; n];
    resp.par_chunks_mut(ROW_BLOCK * k)
        .zip(row_ll.par_chunks_mut(ROW_BLOCK))
        .enumerate()
        .for_each(|(b, (rblock, lblock))| {
            let mut scratch = vec![0.0; k];
            for (r, ll) in lblock.iter_mut().enumerate() {
                let i = b * ROW_BLOCK + r;
                let x = data.feature(i);
                let lp = prior.row(i, k);
                for (j, c) in comps.iter().enumerate() {
                    scratch[j] = lp[j] + c.logpdf(x);
                }
                let lse = logsumexp(&scratch).unwrap_or(f64::NAN);
                *ll = lse;
                for j in 0..k {
                    rblock[r * k + j] = (scratch[j] - lse).exp();
                }
            }
        });
    let total: f64 = row_ll.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFiniteLikelihood);
    }
    Ok((total, resp))
}

/// Weighted means and MLE covariances from responsibilities.
///
/// A component whose total responsibility underflows keeps its previous
/// parameters.
pub(crate) fn m_step_components(
    data: &Dataset,
    resp: &[f64],
    previous: &[GaussianComponent],
    ridge: &RidgeSchedule,
) -> Result<(Vec<GaussianComponent>, Vec<f64>)> {
    let n = data.len();
    let p = data.dim();
    let k = previous.len();
    let mut totals = vec![0.0; k];
    let mut comps = Vec::with_capacity(k);
    for j in 0..k {
        let mut nk = 0.0;
        let mut mean = vec![0.0; p];
        for i in 0..n {
            let r = resp[i * k + j];
            nk += r;
            for (m, x) in mean.iter_mut().zip(data.feature(i)) {
                *m += r * x;
            }
        }
        totals[j] = nk;
        if !(nk > 1e-300) {
            comps.push(previous[j].clone());
            continue;
        }
        for m in mean.iter_mut() {
            *m /= nk;
        }
        let mut cov = vec![0.0; p * p];
        let mut d = vec![0.0; p];
        for i in 0..n {
            let r = resp[i * k + j];
            if r == 0.0 {
                continue;
            }
            for (dv, (x, m)) in d.iter_mut().zip(data.feature(i).iter().zip(&mean)) {
                *dv = x - m;
            }
            for a in 0..p {
                let ra = r * d[a];
                for b in 0..=a {
                    cov[a * p + b] += ra * d[b];
                }
            }
        }
        let cov = DMatrix::from_fn(p, p, |a, b| {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            cov[hi * p + lo] / nk
        });
        let (comp, _) = GaussianComponent::repaired(DVector::from_vec(mean), cov, ridge)?;
        comps.push(comp);
    }
    Ok((comps, totals))
}

/// `Σᵢ logsumexp_k(log πₖ + log φₖ(xᵢ))`.
pub fn marginal_loglik(data: &Dataset, params: &MixtureParams) -> Result<f64> {
    params.validate()?;
    check_dim(data, params.dim())?;
    let comps = params.prepare(&RidgeSchedule::default())?;
    let prior = LogPrior::Global(params.mixing.iter().map(|w| w.ln()).collect());
    Ok(e_step(data, &comps, &prior)?.0)
}

/// Marginal EM from `init` until the relative log-likelihood change drops
/// below `cfg.tol` or `cfg.max_iter` M-steps have run.
pub fn em_fit_marginal(data: &Dataset, init: &MixtureParams, cfg: &FitConfig) -> Result<FitReport> {
    init.validate()?;
    check_dim(data, init.dim())?;
    let k = init.k();
    cfg.validate(k)?;
    let start = Instant::now();
    let floor = cfg.min_mixing(k);
    let n = data.len() as f64;

    let mut params = init.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let comps = params.prepare(&cfg.ridge)?;
        let prior = LogPrior::Global(params.mixing.iter().map(|w| w.ln()).collect());
        let (ll, resp) = e_step(data, &comps, &prior)?;
        if let Some(&prev) = trace.last() {
            trace.push(ll);
            if relative_change(prev, ll) < cfg.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(ll);
        }
        if iterations == cfg.max_iter {
            break;
        }
        let (components, totals) = m_step_components(data, &resp, &params.components, &cfg.ridge)?;
        let mut mixing: Vec<f64> = totals.iter().map(|t| t / n).collect();
        clamp_simplex(&mut mixing, floor);
        params = MixtureParams { components, mixing };
        iterations += 1;
    }
    Ok(FitReport {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Weighted (by 0/1 membership) mean and MLE covariance of a subset of rows.
fn subset_moments(data: &Dataset, rows: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let p = data.dim();
    let m = rows.len() as f64;
    let mut mean = vec![0.0; p];
    for &i in rows {
        for (a, x) in mean.iter_mut().zip(data.feature(i)) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut cov = DMatrix::zeros(p, p);
    for &i in rows {
        let x = data.feature(i);
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] += (x[a] - mean[a]) * (x[b] - mean[b]);
            }
        }
    }
    (mean, cov / m)
}

/// Lloyd's k-means with k-means++ seeding on the features, turned into
/// starting mixture parameters.
///
/// Clusters too small (or too degenerate) to carry a covariance borrow the
/// pooled sample covariance.
pub fn kmeans_init(data: &Dataset, k: usize, seed: u64, cfg: &FitConfig) -> Result<MixtureParams> {
    let n = data.len();
    let p = data.dim();
    if k == 0 {
        return Err(Error::InvalidInput("K must be positive".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!("need at least K={k} rows, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.feature(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.feature(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data.feature(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.feature(i), &c));
        }
        centers.push(c);
    }

    // Lloyd iterations
    let mut assign = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let x = data.feature(i);
            let best = (0..k)
                .map(|j| (j, sq_dist(x, &centers[j])))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        assign.iter().for_each(|&a| counts[a] += 1);
        for j in 0..k {
            if counts[j] == 0 {
                // move the point farthest from its own center
                let far = (0..n)
                    .filter(|&i| counts[assign[i]] > 1)
                    .map(|i| (i, sq_dist(data.feature(i), &centers[assign[i]])))
                    .fold((usize::MAX, -1.0), |b, c| if c.1 > b.1 { c } else { b })
                    .0;
                counts[assign[far]] -= 1;
                assign[far] = j;
                counts[j] = 1;
                changed = true;
            }
        }
        for (j, c) in centers.iter_mut().enumerate() {
            c.iter_mut().for_each(|v| *v = 0.0);
            for i in (0..n).filter(|&i| assign[i] == j) {
                for (v, x) in c.iter_mut().zip(data.feature(i)) {
                    *v += x;
                }
            }
            c.iter_mut().for_each(|v| *v /= counts[j] as f64);
        }
        if !changed {
            break;
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let (_, pooled) = subset_moments(data, &all);
    let pooled = if pooled.trace() > 0.0 {
        pooled
    } else {
        DMatrix::identity(p, p)
    };
    let mut components = Vec::with_capacity(k);
    let mut mixing = Vec::with_capacity(k);
    for (j, center) in centers.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        let cov = if rows.len() > p {
            subset_moments(data, &rows).1
        } else {
            pooled.clone()
        };
        let mean = DVector::from_column_slice(center);
        let comp = match GaussianComponent::repaired(mean.clone(), cov, &cfg.ridge) {
            Ok((c, _)) => c,
            Err(_) => GaussianComponent::repaired(mean, pooled.clone(), &cfg.ridge)?.0,
        };
        components.push(comp);
        mixing.push(rows.len() as f64 / n as f64);
    }
    clamp_simplex(&mut mixing, cfg.min_mixing(k));
    MixtureParams::new(components, mixing)
}
