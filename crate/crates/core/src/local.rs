//! Kernel-weighted local EM for the spatially varying mixing probabilities.
//!
//! With the component parameters frozen, the locally weighted likelihood at a
//! query location `s` is
//!
//! ```text
//! Σᵢ wᵢ(s) · log Σₖ τₖ φₖ(xᵢ),    wᵢ(s) = K((S_{i1} − s₁)/h) · K((S_{i2} − s₂)/h)
//! ```
//!
//! and is maximized over the simplex by the fixed-point iteration
//! `τₖ ← Σᵢ wᵢ rᵢₖ / Σᵢ wᵢ` with `rᵢₖ ∝ τₖ φₖ(xᵢ)`. Every query point is an
//! independent problem, so a whole field is a parallel map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Location};
use crate::error::{Error, Result};
use crate::gmm::{check_dim, clamp_simplex, FitConfig, MixtureParams};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

// Gaussian weights below 1e-12 of the kernel peak are dropped from the
// iteration; in 2-D the kernel mass outside that radius is also 1e-12.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -27.631_021_115_928_547;

// Internal floor that keeps τ away from exact zero during iteration.
const TAU_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl KernelKind {
    /// Univariate kernel density at `t`.
    pub fn eval(self, t: f64) -> f64 {
        match self {
            KernelKind::Gaussian => INV_SQRT_2PI * (-0.5 * t * t).exp(),
            KernelKind::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Product kernel and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self { kind, bandwidth })
    }
}

/// `K(δ₁/h) · K(δ₂/h)`.
pub fn kernel_weight(spec: &KernelSpec, delta: [f64; 2]) -> f64 {
    spec.kind.eval(delta[0] / spec.bandwidth) * spec.kind.eval(delta[1] / spec.bandwidth)
}

/// `c · N^{-1/3}`.
pub fn default_bandwidth(n: usize, c: f64) -> f64 {
    c * (n as f64).powf(-1.0 / 3.0)
}

/// Estimated mixing probabilities at a set of query points.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMixingField {
    k: usize,
    query_points: Vec<Location>,
    mixing: Vec<f64>,
    flags: Vec<bool>,
    iterations: Vec<usize>,
}

impl LocalMixingField {
    /// Build a field from row-major `mixing` (M×K).
    ///
    /// Rows must be non-negative and sum to one within 1e-10; `flags`
    /// marks rows that fell back to the global mixing.
    pub fn new(k: usize, query_points: Vec<Location>, mixing: Vec<f64>, flags: Vec<bool>) -> Result<Self> {
        let m = query_points.len();
        if k == 0 || mixing.len() != m * k || flags.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m * k,
                found: mixing.len(),
            });
        }
        for row in mixing.chunks(k) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput("field rows must lie on the simplex".into()));
            }
        }
        Ok(Self {
            k,
            query_points,
            mixing,
            flags,
            iterations: vec![0; m],
        })
    }

    /// A field whose every row is the same mixing vector.
    pub fn constant(query_points: Vec<Location>, row: &[f64]) -> Result<Self> {
        let m = query_points.len();
        let mixing = row.iter().copied().cycle().take(m * row.len()).collect();
        Self::new(row.len(), query_points, mixing, vec![false; m])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.query_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_points.is_empty()
    }

    pub fn query_points(&self) -> &[Location] {
        &self.query_points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.mixing[i * self.k..(i + 1) * self.k]
    }

    pub fn mixing(&self) -> &[f64] {
        &self.mixing
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// Local EM iterations spent on each row (zero for rows not fitted here).
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// True when the field rows sit exactly at the dataset's locations.
    pub fn is_aligned_with(&self, data: &Dataset) -> bool {
        self.query_points.as_slice() == data.locations()
    }
}

/// Result of one local EM solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEstimate {
    pub mixing: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Local EM solver with the component densities of the training data
/// evaluated once under the frozen parameters.
pub struct LocalEstimator<'a> {
    data: &'a Dataset,
    k: usize,
    // φ_ik / max_j φ_ij, row-major N×K
    scaled: Vec<f64>,
    start: Vec<f64>,
    spec: KernelSpec,
    floor: f64,
    tol: f64,
    max_iter: usize,
    leave_one_out: bool,
    // row indices sorted by first location coordinate, and those coordinates
    by_x: Vec<usize>,
    xs: Vec<f64>,
}

impl<'a> LocalEstimator<'a> {
    pub fn new(data: &'a Dataset, theta: &MixtureParams, spec: &KernelSpec, cfg: &FitConfig) -> Result<Self> {
        theta.validate()?;
        check_dim(data, theta.dim())?;
        let k = theta.k();
        cfg.validate(k)?;
        KernelSpec::new(spec.kind, spec.bandwidth)?;
        let comps = theta.prepare(&cfg.ridge)?;
        let mut scaled = vec![0.0; data.len() * k];
        scaled
            .par_chunks_mut(k)
            .enumerate()
            .try_for_each(|(i, row)| -> Result<()> {
                let x = data.feature(i);
                for (r, c) in row.iter_mut().zip(&comps) {
                    *r = c.logpdf(x);
                }
                let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !top.is_finite() {
                    return Err(Error::NonFiniteLikelihood);
                }
                row.iter_mut().for_each(|v| *v = (*v - top).exp());
                Ok(())
            })?;
        let mut by_x: Vec<usize> = (0..data.len()).collect();
        by_x.sort_by(|&a, &b| data.location(a)[0].total_cmp(&data.location(b)[0]).then(a.cmp(&b)));
        let xs = by_x.iter().map(|&i| data.location(i)[0]).collect();
        Ok(Self {
            data,
            k,
            scaled,
            start: theta.mixing.clone(),
            spec: *spec,
            floor: cfg.min_mixing(k),
            tol: cfg.local_tol,
            max_iter: cfg.local_max_iter,
            leave_one_out: cfg.leave_one_out,
            by_x,
            xs,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Rows whose first coordinate lies within `radius` of `s`, in sorted
    /// order.
    fn window(&self, s: Location, radius: f64) -> &[usize] {
        let lo = self.xs.partition_point(|&x| x < s[0] - radius);
        let hi = self.xs.partition_point(|&x| x <= s[0] + radius);
        &self.by_x[lo..hi.max(lo)]
    }

    /// Normalized kernel weights around `s`, skipping negligible ones and
    /// the row `exclude`.
    fn neighborhood(&self, s: Location, exclude: Option<usize>) -> Result<Vec<(usize, f64)>> {
        let h = self.spec.bandwidth;
        let locs = self.data.locations();
        let scaled = |i: usize| [(locs[i][0] - s[0]) / h, (locs[i][1] - s[1]) / h];
        let keep = |i: usize| Some(i) != exclude;
        let mut out: Vec<(usize, f64)> = match self.spec.kind {
            KernelKind::Gaussian => {
                let radius = h * (-2.0 * NEGLIGIBLE_LOG_WEIGHT).sqrt();
                let near: Vec<(usize, f64)> = self
                    .window(s, radius)
                    .iter()
                    .filter(|&&i| keep(i))
                    .filter_map(|&i| {
                        let [a, b] = scaled(i);
                        let lw = -0.5 * (a * a + b * b);
                        (lw > NEGLIGIBLE_LOG_WEIGHT).then(|| (i, lw.exp()))
                    })
                    .collect();
                if near.is_empty() {
                    // far from all data: weights relative to the closest row
                    let logs: Vec<(usize, f64)> = (0..locs.len())
                        .filter(|&i| keep(i))
                        .map(|i| {
                            let [a, b] = scaled(i);
                            (i, -0.5 * (a * a + b * b))
                        })
                        .collect();
                    let top = logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                    logs.into_iter()
                        .filter(|&(_, lw)| lw - top > NEGLIGIBLE_LOG_WEIGHT)
                        .map(|(i, lw)| (i, (lw - top).exp()))
                        .collect()
                } else {
                    near
                }
            }
            KernelKind::Epanechnikov => self
                .window(s, h)
                .iter()
                .filter(|&&i| keep(i))
                .map(|&i| (i, kernel_weight(&self.spec, [locs[i][0] - s[0], locs[i][1] - s[1]])))
                .filter(|&(_, w)| w > 0.0)
                .collect(),
        };
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::EmptyNeighborhood(s[0], s[1]));
        }
        out.iter_mut().for_each(|(_, w)| *w /= total);
        Ok(out)
    }

    /// Maximize the local likelihood at `s`, starting from `start` (or the
    /// global mixing of the frozen parameters).
    pub fn estimate(&self, s: Location, start: Option<&[f64]>) -> Result<LocalEstimate> {
        self.solve(s, None, start)
    }

    /// Estimate at the location of training row `i`, leaving the row out
    /// when the configuration asks for it.
    pub fn estimate_in_sample(&self, i: usize, start: Option<&[f64]>) -> Result<LocalEstimate> {
        self.solve(self.data.location(i), self.leave_one_out.then_some(i), start)
    }

    fn solve(&self, s: Location, exclude: Option<usize>, start: Option<&[f64]>) -> Result<LocalEstimate> {
        let k = self.k;
        if k == 1 {
            return Ok(LocalEstimate {
                mixing: vec![1.0],
                iterations: 0,
                converged: true,
            });
        }
        let neigh = self.neighborhood(s, exclude)?;
        let weights: Vec<f64> = neigh.iter().map(|p| p.1).collect();
        let lik: Vec<f64> = neigh
            .iter()
            .flat_map(|&(i, _)| self.scaled[i * k..(i + 1) * k].iter().copied())
            .collect();
        let mut tau = start.unwrap_or(&self.start).to_vec();
        let mut next = vec![0.0; k];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            weighted_responsibilities(&tau, &weights, &lik, &mut next);
            let mut total = 0.0;
            for (n, t) in next.iter_mut().zip(&tau) {
                *n = (*n * t).max(TAU_FLOOR);
                total += *n;
            }
            let mut delta: f64 = 0.0;
            for (n, t) in next.iter_mut().zip(tau.iter_mut()) {
                *n /= total;
                delta = delta.max((*n - *t).abs());
                *t = *n;
            }
            iterations += 1;
            if delta < self.tol {
                converged = true;
                break;
            }
        }
        clamp_simplex(&mut tau, self.floor);
        Ok(LocalEstimate {
            mixing: tau,
            iterations,
            converged,
        })
    }

    /// Local objective `Σᵢ wᵢ log Σₖ τₖ φₖ(xᵢ)` up to an additive constant
    /// and the positive weight normalization.
    pub fn local_objective(&self, s: Location, tau: &[f64]) -> Result<f64> {
        let k = self.k;
        let neigh = self.neighborhood(s, None)?;
        Ok(neigh
            .iter()
            .map(|&(i, w)| {
                let lik = &self.scaled[i * k..(i + 1) * k];
                w * tau.iter().zip(lik).map(|(t, l)| t * l).sum::<f64>().ln()
            })
            .sum())
    }

    /// Fit every query point; rows whose neighborhood is empty fall back to
    /// the global mixing and are flagged.
    pub fn fit_field(&self, query_points: &[Location], warm: Option<&LocalMixingField>) -> Result<LocalMixingField> {
        self.field_with(query_points, warm, |i, start| self.estimate(query_points[i], start))
    }

    /// Field at the training locations, using `estimate_in_sample` per row.
    pub fn fit_training_field(&self, warm: Option<&LocalMixingField>) -> Result<LocalMixingField> {
        self.field_with(self.data.locations(), warm, |i, start| self.estimate_in_sample(i, start))
    }

    fn field_with<F>(&self, query_points: &[Location], warm: Option<&LocalMixingField>, solve: F) -> Result<LocalMixingField>
    where
        F: Fn(usize, Option<&[f64]>) -> Result<LocalEstimate> + Sync,
    {
        if let Some(w) = warm {
            if w.len() != query_points.len() || w.k() != self.k {
                return Err(Error::RowMisalignment);
            }
        }
        let rows: Vec<Result<(LocalEstimate, bool)>> = (0..query_points.len())
            .into_par_iter()
            .map(|i| match solve(i, warm.map(|w| w.row(i))) {
                Ok(est) => Ok((est, false)),
                Err(Error::EmptyNeighborhood(..)) => Ok((
                    LocalEstimate {
                        mixing: self.start.clone(),
                        iterations: 0,
                        converged: false,
                    },
                    true,
                )),
                Err(e) => Err(e),
            })
            .collect();
        let m = query_points.len();
        let mut mixing = Vec::with_capacity(m * self.k);
        let mut flags = Vec::with_capacity(m);
        let mut iterations = Vec::with_capacity(m);
        for row in rows {
            let (est, flag) = row?;
            mixing.extend_from_slice(&est.mixing);
            flags.push(flag);
            iterations.push(est.iterations);
        }
        Ok(LocalMixingField {
            k: self.k,
            query_points: query_points.to_vec(),
            mixing,
            flags,
            iterations,
        })
    }
}

/// `next_k = Σ_j w_j l_jk / Σ_m τ_m l_jm` over a contiguous neighbourhood.
fn weighted_responsibilities(tau: &[f64], weights: &[f64], lik: &[f64], next: &mut [f64]) {
    next.iter_mut().for_each(|v| *v = 0.0);
    if let [t0, t1] = *tau {
        let (mut a0, mut a1) = (0.0, 0.0);
        for (w, l) in weights.iter().zip(lik.chunks_exact(2)) {
            let c = w / (t0 * l[0] + t1 * l[1]);
            a0 += c * l[0];
            a1 += c * l[1];
        }
        next[0] = a0;
        next[1] = a1;
        return;
    }
    let k = tau.len();
    for (w, l) in weights.iter().zip(lik.chunks_exact(k)) {
        let denom: f64 = tau.iter().zip(l).map(|(t, v)| t * v).sum();
        let c = w / denom;
        for (n, v) in next.iter_mut().zip(l) {
            *n += c * v;
        }
    }
}

/// Local mixing estimate at a single location.
pub fn local_em_at(
    s: Location,
    data: &Dataset,
    theta: &MixtureParams,
    spec: &KernelSpec,
    cfg: &FitConfig,
) -> Result<Vec<f64>> {
    Ok(LocalEstimator::new(data, theta, spec, cfg)?.estimate(s, None)?.mixing)
}

/// Local mixing field at `query_points`, or at the training locations when
/// `None` (where `cfg.leave_one_out` applies).
pub fn fit_local_mixing(
    data: &Dataset,
    theta: &MixtureParams,
    spec: &KernelSpec,
    cfg: &FitConfig,
    query_points: Option<&[Location]>,
) -> Result<LocalMixingField> {
    let est = LocalEstimator::new(data, theta, spec, cfg)?;
    match query_points {
        Some(points) => est.fit_field(points, None),
        None => est.fit_training_field(None),
    }
}
