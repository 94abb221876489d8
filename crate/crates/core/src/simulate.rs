//! Synthetic data generators with known ground truth.
//!
//! Two regimes are provided: the two-class design with truncated Gaussian
//! spatial laws (`study1_scenario`) and an L-class design whose spatial laws
//! are untruncated Gaussians placed on a circle (`sag_scenario`).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Location};
use crate::density::{logsumexp, GaussianComponent, PreparedGaussian};
use crate::error::{Error, Result};
use crate::gmm::MixtureParams;

pub type Matrix2 = [[f64; 2]; 2];

/// Per-class law of the spatial location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialDensity {
    /// Gaussian restricted to the square `[lo, hi]²`.
    TruncatedGaussian { mean: [f64; 2], cov: Matrix2, lo: f64, hi: f64 },
    GaussianMixture { weights: Vec<f64>, means: Vec<[f64; 2]>, covs: Vec<Matrix2> },
}

impl SpatialDensity {
    fn validate(&self) -> Result<()> {
        match self {
            SpatialDensity::TruncatedGaussian { lo, hi, .. } => {
                if !(hi > lo) {
                    return Err(Error::InvalidInput("degenerate truncation box".into()));
                }
            }
            SpatialDensity::GaussianMixture { weights, means, covs } => {
                let total: f64 = weights.iter().sum();
                if weights.is_empty()
                    || weights.len() != means.len()
                    || weights.len() != covs.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || (total - 1.0).abs() > 1e-10
                {
                    return Err(Error::InvalidInput("spatial mixture weights must lie on the simplex".into()));
                }
            }
        }
        Ok(())
    }
}

/// A complete data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub k: usize,
    pub p: usize,
    pub n: usize,
    pub mixing: Vec<f64>,
    pub components: Vec<GaussianComponent>,
    pub spatial: Vec<SpatialDensity>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if params.k() != self.k || params.dim() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: params.k(),
            });
        }
        if self.spatial.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                found: self.spatial.len(),
            });
        }
        self.spatial.iter().try_for_each(SpatialDensity::validate)
    }

    /// The true global parameters.
    pub fn params(&self) -> Result<MixtureParams> {
        MixtureParams::new(self.components.clone(), self.mixing.clone())
    }

    pub fn with_n(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// `Ξ` with entries `rho^|i−j|`.
pub fn ar_correlation(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// Two classes, means ±1, covariances 16Ξ and 9Ξ, mixing (0.4, 0.6), and
/// truncated Gaussian locations around ±(1, 1).
pub fn study1_scenario(p: usize, n: usize, seed: u64) -> Scenario {
    study1_with_mixing(p, n, seed, [0.4, 0.6])
}

/// The two-class design with arbitrary class proportions.
pub fn study1_with_mixing(p: usize, n: usize, seed: u64, mixing: [f64; 2]) -> Scenario {
    let xi = ar_correlation(p, 0.5);
    let comp = |sign: f64, scale: f64| {
        GaussianComponent::new(DVector::from_element(p, sign), &xi * scale).expect("valid AR covariance")
    };
    let s_cov = [[0.5, 0.25], [0.25, 0.5]];
    let spatial = |sign: f64| SpatialDensity::TruncatedGaussian {
        mean: [sign, sign],
        cov: s_cov,
        lo: -5.0,
        hi: 5.0,
    };
    Scenario {
        k: 2,
        p,
        n,
        mixing: mixing.to_vec(),
        components: vec![comp(1.0, 16.0), comp(-1.0, 9.0)],
        spatial: vec![spatial(1.0), spatial(-1.0)],
        seed,
    }
}

/// `l` classes with feature means on a circle of radius 3, covariances
/// `σ²Ξ` with `σ² ~ U[1, 4]`, and Gaussian locations with covariance `0.3 I`
/// centred on a circle of radius 2. Mixing is uniform.
pub fn sag_scenario(l: usize, p: usize, n: usize, seed: u64) -> Result<Scenario> {
    if l < 2 || p == 0 {
        return Err(Error::InvalidInput("need at least two classes and one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a6_u64.rotate_left(40));
    let xi = ar_correlation(p, 0.5);
    let mut components = Vec::with_capacity(l);
    let mut spatial = Vec::with_capacity(l);
    for j in 0..l {
        let angle = 2.0 * std::f64::consts::PI * j as f64 / l as f64;
        let mut mean = DVector::zeros(p);
        mean[0] = 3.0 * angle.cos();
        if p > 1 {
            mean[1] = 3.0 * angle.sin();
        }
        let var: f64 = rng.random_range(1.0..4.0);
        components.push(GaussianComponent::new(mean, &xi * var)?);
        spatial.push(SpatialDensity::GaussianMixture {
            weights: vec![1.0],
            means: vec![[2.0 * angle.cos(), 2.0 * angle.sin()]],
            covs: vec![[[0.3, 0.0], [0.0, 0.3]]],
        });
    }
    Ok(Scenario {
        k: l,
        p,
        n,
        mixing: vec![1.0 / l as f64; l],
        components,
        spatial,
        seed,
    })
}

fn chol2(cov: &Matrix2) -> Result<[f64; 3]> {
    let a = cov[0][0];
    if !(a > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    let l11 = a.sqrt();
    let l21 = cov[1][0] / l11;
    let rest = cov[1][1] - l21 * l21;
    if !(rest > 0.0) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok([l11, l21, rest.sqrt()])
}

fn draw2<R: Rng>(rng: &mut R, mean: &[f64; 2], l: &[f64; 3]) -> Location {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    [mean[0] + l[0] * z1, mean[1] + l[1] * z1 + l[2] * z2]
}

fn inside(s: &Location, lo: f64, hi: f64) -> bool {
    s.iter().all(|&v| v >= lo && v <= hi)
}

const PROPOSALS_PER_DRAW: u64 = 1_000_000;

fn truncated_draws<R: Rng>(
    rng: &mut R,
    mean: &[f64; 2],
    cov: &Matrix2,
    lo: f64,
    hi: f64,
    count: usize,
) -> Result<Vec<Location>> {
    let l = chol2(cov)?;
    let budget = PROPOSALS_PER_DRAW.saturating_mul(count as u64);
    let mut used = 0u64;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if used >= budget {
            return Err(Error::RejectionBudgetExceeded);
        }
        used += 1;
        let s = draw2(rng, mean, &l);
        if inside(&s, lo, hi) {
            out.push(s);
        }
    }
    Ok(out)
}

/// Rejection sampling from a Gaussian restricted to `[lo, hi]²`.
pub fn sample_truncated_gaussian(
    mean: [f64; 2],
    cov: Matrix2,
    bounds: (f64, f64),
    count: usize,
    seed: u64,
) -> Result<Vec<Location>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truncated_draws(&mut rng, &mean, &cov, bounds.0, bounds.1, count)
}

/// Draw `scenario.n` labelled instances; a pure function of the scenario.
pub fn generate(scenario: &Scenario) -> Result<Dataset> {
    scenario.validate()?;
    let p = scenario.p;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let factors: Vec<DMatrix<f64>> = scenario
        .components
        .iter()
        .map(|c| {
            crate::density::cholesky_logdet(c.covariance()).map(|f| f.factor)
        })
        .collect::<Result<_>>()?;
    let spatial_factors: Vec<Vec<[f64; 3]>> = scenario
        .spatial
        .iter()
        .map(|sd| match sd {
            SpatialDensity::TruncatedGaussian { cov, .. } => Ok(vec![chol2(cov)?]),
            SpatialDensity::GaussianMixture { covs, .. } => covs.iter().map(chol2).collect(),
        })
        .collect::<Result<_>>()?;

    let mut features = Vec::with_capacity(scenario.n * p);
    let mut locations = Vec::with_capacity(scenario.n);
    let mut labels = Vec::with_capacity(scenario.n);
    let mut z = vec![0.0; p];
    for _ in 0..scenario.n {
        let y = categorical(&mut rng, &scenario.mixing);
        let mean = scenario.components[y].mean();
        let l = &factors[y];
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        for a in 0..p {
            let mut v = mean[a];
            for b in 0..=a {
                v += l[(a, b)] * z[b];
            }
            features.push(v);
        }
        let s = match &scenario.spatial[y] {
            SpatialDensity::TruncatedGaussian { mean, cov, lo, hi } => {
                truncated_draws(&mut rng, mean, cov, *lo, *hi, 1)?[0]
            }
            SpatialDensity::GaussianMixture { weights, means, .. } => {
                let j = categorical(&mut rng, weights);
                draw2(&mut rng, &means[j], &spatial_factors[y][j])
            }
        };
        locations.push(s);
        labels.push(y);
    }
    Dataset::new(p, features, locations, Some(labels))
}

fn categorical<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = x;
                p0 = 1.0;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gaussian2(mean: &[f64; 2], cov: &Matrix2) -> Result<PreparedGaussian> {
    GaussianComponent::new(
        DVector::from_column_slice(mean),
        DMatrix::from_fn(2, 2, |i, j| cov[i][j]),
    )?
    .prepare()
}

enum SpatialLaw {
    Truncated { g: PreparedGaussian, lo: f64, hi: f64, log_mass: f64 },
    Mixture { log_weights: Vec<f64>, gs: Vec<PreparedGaussian> },
}

impl SpatialLaw {
    fn log_density(&self, s: &Location) -> f64 {
        match self {
            SpatialLaw::Truncated { g, lo, hi, log_mass } => {
                if inside(s, *lo, *hi) {
                    g.logpdf(s) - log_mass
                } else {
                    f64::NEG_INFINITY
                }
            }
            SpatialLaw::Mixture { log_weights, gs } => {
                let terms: Vec<f64> = log_weights.iter().zip(gs).map(|(w, g)| w + g.logpdf(s)).collect();
                logsumexp(&terms).unwrap_or(f64::NEG_INFINITY)
            }
        }
    }
}

const QUADRATURE_NODES: usize = 64;

/// Exact `πₖ(s) = πₖ gₖ(s) / G(s)` for a scenario, with truncation
/// normalizers computed once by 64×64 Gauss–Legendre quadrature.
pub struct MixingOracle {
    log_mixing: Vec<f64>,
    laws: Vec<SpatialLaw>,
}

impl MixingOracle {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let (nodes, weights) = gauss_legendre(QUADRATURE_NODES);
        let laws = scenario
            .spatial
            .iter()
            .map(|sd| -> Result<SpatialLaw> {
                Ok(match sd {
                    SpatialDensity::TruncatedGaussian { mean, cov, lo, hi } => {
                        let g = gaussian2(mean, cov)?;
                        let half = 0.5 * (hi - lo);
                        let mid = 0.5 * (hi + lo);
                        let mut mass = 0.0;
                        for (a, wa) in nodes.iter().zip(&weights) {
                            for (b, wb) in nodes.iter().zip(&weights) {
                                let s = [mid + half * a, mid + half * b];
                                mass += wa * wb * g.logpdf(&s).exp();
                            }
                        }
                        SpatialLaw::Truncated {
                            g,
                            lo: *lo,
                            hi: *hi,
                            log_mass: (mass * half * half).ln(),
                        }
                    }
                    SpatialDensity::GaussianMixture { weights, means, covs } => SpatialLaw::Mixture {
                        log_weights: weights.iter().map(|w| w.ln()).collect(),
                        gs: means.iter().zip(covs).map(|(m, c)| gaussian2(m, c)).collect::<Result<_>>()?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            log_mixing: scenario.mixing.iter().map(|w| w.ln()).collect(),
            laws,
        })
    }

    /// Log of the class-conditional spatial density of class `k` at `s`.
    pub fn log_spatial_density(&self, k: usize, s: Location) -> f64 {
        self.laws[k].log_density(&s)
    }

    pub fn local_mixing(&self, s: Location) -> Result<Vec<f64>> {
        let terms: Vec<f64> = self
            .log_mixing
            .iter()
            .zip(&self.laws)
            .map(|(w, law)| w + law.log_density(&s))
            .collect();
        let total = logsumexp(&terms).map_err(|_| Error::ZeroTotalDensity(s[0], s[1]))?;
        Ok(terms.iter().map(|t| (t - total).exp()).collect())
    }
}

/// Exact local mixing probabilities of `scenario` at `s`.
pub fn true_local_mixing(scenario: &Scenario, s: Location) -> Result<Vec<f64>> {
    MixingOracle::new(scenario)?.local_mixing(s)
}
