//! Replicate harness for the simulation studies.
//!
//! A Study 1 replicate fits every estimator on one simulated dataset and
//! scores it against the generating scenario; a clustering replicate
//! compares plain GMM with the spatial model on the SAG-style generator.
//! Replicates are independent and keyed by `base_seed + index`.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gmm::{em_fit_marginal, kmeans_init, FitConfig, MixtureParams};
use crate::joint::{argmax, em_fit_joint, posterior, refine, JointInit, PipelineOptions, Stage};
use crate::local::{default_bandwidth, KernelKind, KernelSpec, LocalEstimator};
use crate::metrics::{align_components, ari, auc, integrate_to_binary, iou, mise_with_oracle};
use crate::simulate::{generate, sag_scenario, study1_scenario, MixingOracle};
use crate::density::FeatureVector;

/// Offset mixed into the seed that draws out-of-sample locations.
const OOS_SEED_OFFSET: u64 = 0x5EED_0F05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study1Options {
    pub p: usize,
    pub n: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub bandwidth_c: f64,
    pub kernel: KernelKind,
    pub oos: bool,
    /// Outer rounds of the fully iterated estimator; `None` skips it.
    pub full_max_outer: Option<usize>,
    pub config: FitConfig,
}

impl Study1Options {
    pub fn new(p: usize, n: usize, replicates: usize) -> Self {
        Self {
            p,
            n,
            replicates,
            base_seed: 1,
            bandwidth_c: 2.5,
            kernel: KernelKind::Gaussian,
            oos: true,
            full_max_outer: None,
            config: FitConfig::default(),
        }
    }
}

/// One row per (method, N, p, replicate). Metrics that do not apply to a
/// method are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub study: String,
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub seed: u64,
    pub log_mse_mu1: Option<f64>,
    pub log_mse_mu2: Option<f64>,
    pub log_mse_sigma1: Option<f64>,
    pub log_mse_sigma2: Option<f64>,
    pub mise_in: Option<f64>,
    pub mise_oos: Option<f64>,
    pub auc: Option<f64>,
    pub iou: Option<f64>,
    pub ari: Option<f64>,
    pub iterations: Option<usize>,
    pub time_seconds: Option<f64>,
    pub converged: Option<bool>,
}

impl ReplicateRecord {
    fn blank(study: &str, method: &str, n: usize, p: usize, replicate: usize, seed: u64) -> Self {
        Self {
            study: study.into(),
            method: method.into(),
            n,
            p,
            replicate,
            seed,
            log_mse_mu1: None,
            log_mse_mu2: None,
            log_mse_sigma1: None,
            log_mse_sigma2: None,
            mise_in: None,
            mise_oos: None,
            auc: None,
            iou: None,
            ari: None,
            iterations: None,
            time_seconds: None,
            converged: None,
        }
    }

    fn with_errors(mut self, est: &MixtureParams, truth: &MixtureParams) -> Result<Self> {
        let c = align_components(est, truth)?;
        self.log_mse_mu1 = Some(c.error("mu_1").ln());
        self.log_mse_mu2 = Some(c.error("mu_2").ln());
        self.log_mse_sigma1 = Some(c.error("Sigma_1").ln());
        self.log_mse_sigma2 = Some(c.error("Sigma_2").ln());
        Ok(self)
    }
}

/// Fits marginal, joint (both initializations) and optionally the fully
/// iterated estimator on one Study 1 dataset.
pub fn study1_replicate(opts: &Study1Options, replicate: usize) -> Result<Vec<ReplicateRecord>> {
    let seed = opts.base_seed + replicate as u64;
    let scenario = study1_scenario(opts.p, opts.n, seed);
    let truth = scenario.params()?;
    let data = generate(&scenario)?.without_labels();
    let cfg = FitConfig { seed, ..opts.config.clone() };
    let spec = KernelSpec::new(opts.kernel, default_bandwidth(opts.n, opts.bandwidth_c))?;
    let oracle = MixingOracle::new(&scenario)?;
    let blank = |method: &str| ReplicateRecord::blank("study1", method, opts.n, opts.p, replicate, seed);
    let mut out = Vec::new();

    let t0 = Instant::now();
    let kmeans = kmeans_init(&data, 2, seed, &cfg)?;
    let mg = em_fit_marginal(&data, &kmeans, &cfg)?;
    let mg_time = t0.elapsed().as_secs_f64();
    let mut rec = blank("mg").with_errors(&mg.params, &truth)?;
    rec.iterations = Some(mg.iterations);
    rec.time_seconds = Some(mg_time);
    rec.converged = Some(mg.converged);
    out.push(rec);

    let t0 = Instant::now();
    let est = LocalEstimator::new(&data, &mg.params, &spec, &cfg)?;
    let field = est.fit_training_field(None)?;
    let local_time = t0.elapsed().as_secs_f64();
    let alignment = align_components(&mg.params, &truth)?;
    let mut rec = blank("local");
    rec.mise_in = Some(mise_with_oracle(&field, &oracle, &alignment)?);
    if opts.oos {
        let fresh = generate(&scenario.with_seed(seed ^ OOS_SEED_OFFSET))?;
        let oos_field = est.fit_field(fresh.locations(), None)?;
        rec.mise_oos = Some(mise_with_oracle(&oos_field, &oracle, &alignment)?);
    }
    let iters = field.iterations();
    rec.iterations = Some(iters.iter().sum::<usize>() / iters.len().max(1));
    rec.time_seconds = Some(local_time);
    out.push(rec);

    for (method, init) in [("jnt_kmeans", &kmeans), ("jnt_mg", &mg.params)] {
        let t0 = Instant::now();
        let jnt = em_fit_joint(&data, &field, init, &cfg)?;
        let mut rec = blank(method).with_errors(&jnt.params, &truth)?;
        rec.iterations = Some(jnt.iterations);
        rec.time_seconds = Some(t0.elapsed().as_secs_f64() + local_time);
        rec.converged = Some(jnt.converged);
        out.push(rec);
    }

    if let Some(max_outer) = opts.full_max_outer {
        let t0 = Instant::now();
        let opts = PipelineOptions {
            k: 2,
            stage: Stage::Full,
            init: JointInit::Marginal,
            max_outer,
        };
        let model = refine(&data, &cfg, &spec, &opts, &kmeans, &mg, Some(field.clone()))?;
        let mut rec = blank("full").with_errors(&model.theta, &truth)?;
        rec.iterations = Some(model.summary.outer_rounds);
        rec.time_seconds = Some(t0.elapsed().as_secs_f64() + local_time + mg_time);
        rec.converged = Some(model.summary.converged);
        out.push(rec);
    }
    Ok(out)
}

/// All replicates of one Study 1 cell, in replicate order.
pub fn run_study1(opts: &Study1Options) -> Result<Vec<ReplicateRecord>> {
    let rows: Result<Vec<Vec<ReplicateRecord>>> =
        (0..opts.replicates).into_par_iter().map(|r| study1_replicate(opts, r)).collect();
    Ok(rows?.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringOptions {
    /// Number of true classes in the generator; also the fitted K.
    pub l: usize,
    pub p: usize,
    pub n: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub bandwidth_c: f64,
    pub kernel: KernelKind,
    pub config: FitConfig,
}

impl ClusteringOptions {
    pub fn new(l: usize, p: usize, n: usize, replicates: usize) -> Self {
        Self {
            l,
            p,
            n,
            replicates,
            base_seed: 1,
            bandwidth_c: 2.5,
            kernel: KernelKind::Gaussian,
            config: FitConfig::default(),
        }
    }
}

/// GMM and SGMM clustering scores on one SAG-style dataset. Class 1 is the
/// binary reference ("tumour") for AUC and IoU.
pub fn clustering_replicate(opts: &ClusteringOptions, replicate: usize) -> Result<Vec<ReplicateRecord>> {
    let seed = opts.base_seed + replicate as u64;
    let scenario = sag_scenario(opts.l, opts.p, opts.n, seed)?;
    let labelled = generate(&scenario)?;
    let labels = labelled.labels().expect("generated data is labelled").to_vec();
    let reference: Vec<bool> = labels.iter().map(|&y| y == 0).collect();
    let data = labelled.without_labels();
    let cfg = FitConfig { seed, ..opts.config.clone() };
    let spec = KernelSpec::new(opts.kernel, default_bandwidth(opts.n, opts.bandwidth_c))?;
    let k = opts.l;

    let t0 = Instant::now();
    let kmeans = kmeans_init(&data, k, seed, &cfg)?;
    let mg = em_fit_marginal(&data, &kmeans, &cfg)?;
    let mg_time = t0.elapsed().as_secs_f64();
    let gmm_mixing: Vec<f64> = mg.params.mixing.iter().copied().cycle().take(data.len() * k).collect();
    let gmm_post = posteriors(&data, &gmm_mixing, &mg.params)?;

    let est = LocalEstimator::new(&data, &mg.params, &spec, &cfg)?;
    let field = est.fit_training_field(None)?;
    let jnt = em_fit_joint(&data, &field, &mg.params, &cfg)?;
    let sgmm_time = t0.elapsed().as_secs_f64();
    let sgmm_post = posteriors(&data, field.mixing(), &jnt.params)?;

    let mut out = Vec::new();
    for (method, post, time, iters) in [
        ("gmm", gmm_post, mg_time, mg.iterations),
        ("sgmm", sgmm_post, sgmm_time, jnt.iterations),
    ] {
        let mut rec = ReplicateRecord::blank("sag", method, opts.n, opts.p, replicate, seed);
        let hard: Vec<usize> = post.chunks(k).map(argmax).collect();
        let binary = integrate_to_binary(&post, k, &reference)?;
        let mask: Vec<bool> = hard.iter().map(|&j| binary.cluster_to_class[j]).collect();
        rec.auc = Some(auc(&binary.scores, &reference)?);
        rec.iou = Some(iou(&mask, &reference));
        rec.ari = Some(ari(&hard, &labels)?);
        rec.iterations = Some(iters);
        rec.time_seconds = Some(time);
        out.push(rec);
    }
    Ok(out)
}

pub fn run_clustering(opts: &ClusteringOptions) -> Result<Vec<ReplicateRecord>> {
    let rows: Result<Vec<Vec<ReplicateRecord>>> =
        (0..opts.replicates).into_par_iter().map(|r| clustering_replicate(opts, r)).collect();
    Ok(rows?.into_iter().flatten().collect())
}

fn posteriors(data: &crate::dataset::Dataset, mixing: &[f64], theta: &MixtureParams) -> Result<Vec<f64>> {
    let k = theta.k();
    let mut out = Vec::with_capacity(data.len() * k);
    for i in 0..data.len() {
        let x = FeatureVector::new(data.feature(i).to_vec())?;
        out.extend(posterior(&x, &mixing[i * k..(i + 1) * k], theta)?);
    }
    Ok(out)
}

/// Mean and standard error of one metric over the records of `method`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
}

pub fn summarize(
    records: &[ReplicateRecord],
    method: &str,
    metric: impl Fn(&ReplicateRecord) -> Option<f64>,
) -> Summary {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.method == method)
        .filter_map(metric)
        .collect();
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        mean,
        std_error: (var / n as f64).sqrt(),
        count: n,
    }
}

/// Ordinary least squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
