//! Joint estimation with a plugged-in mixing field, posterior
//! classification, and the fully iterated alternation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::density::{FeatureVector, RidgeSchedule};
use crate::error::{Error, Result};
use crate::gmm::{
    check_dim, e_step, em_fit_marginal, kmeans_init, m_step_components, relative_change, FitConfig,
    FitReport, LogPrior, MixtureParams,
};
use crate::local::{KernelSpec, LocalEstimator, LocalMixingField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Marginal,
    Joint,
    Full,
}

/// Starting point of the joint EM in the first round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JointInit {
    KMeans,
    #[default]
    Marginal,
}

/// Per-stage bookkeeping kept with a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
    pub wall_time_seconds: f64,
}

impl From<&FitReport> for StageSummary {
    fn from(r: &FitReport) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            final_loglik: r.final_loglik(),
            wall_time_seconds: r.wall_time_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitSummary {
    pub marginal: Option<StageSummary>,
    /// Joint EM of the last outer round.
    pub joint: Option<StageSummary>,
    pub local_mean_iterations: Option<f64>,
    pub local_wall_time_seconds: Option<f64>,
    pub outer_rounds: usize,
    /// Joint objective after each outer round.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

/// A fitted semiparametric mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SgmmModel {
    /// Component parameters; `mixing` holds the global marginal estimate.
    pub theta: MixtureParams,
    /// Mixing field at the training locations (absent for marginal fits).
    pub field: Option<LocalMixingField>,
    pub kernel: KernelSpec,
    pub stage: Stage,
    pub config: FitConfig,
    /// Training rows, needed to re-run local EM at new locations.
    pub training: Option<Dataset>,
    pub summary: FitSummary,
}

impl SgmmModel {
    pub fn k(&self) -> usize {
        self.theta.k()
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    /// Checks the cross-field invariants of a model assembled by hand or
    /// read from disk.
    pub fn validate(&self) -> Result<()> {
        self.theta.validate()?;
        if let Some(field) = &self.field {
            if field.k() != self.k() {
                return Err(Error::DimensionMismatch {
                    expected: self.k(),
                    found: field.k(),
                });
            }
            if let Some(train) = &self.training {
                if !field.is_aligned_with(train) {
                    return Err(Error::RowMisalignment);
                }
                check_dim(train, self.dim())?;
            }
        } else if self.stage != Stage::Marginal {
            return Err(Error::InvalidInput("non-marginal model without a mixing field".into()));
        }
        Ok(())
    }

    /// Mixing at each row of `data`: the stored field when `data` is the
    /// training set, fresh local EM otherwise.
    pub fn mixing_for(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(data, self.dim())?;
        let k = self.k();
        match (&self.field, self.stage) {
            (None, _) | (_, Stage::Marginal) => Ok(self.theta.mixing.iter().copied().cycle().take(data.len() * k).collect()),
            (Some(field), _) if field.is_aligned_with(data) => Ok(field.mixing().to_vec()),
            (Some(_), _) => {
                let train = self.training.as_ref().ok_or_else(|| {
                    Error::InvalidInput("model lacks training rows for out-of-sample local EM".into())
                })?;
                let est = LocalEstimator::new(train, &self.theta, &self.kernel, &self.config)?;
                Ok(est.fit_field(data.locations(), None)?.mixing().to_vec())
            }
        }
    }
}

fn check_alignment(data: &Dataset, field: &LocalMixingField, k: usize) -> Result<()> {
    if field.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: field.k(),
        });
    }
    if !field.is_aligned_with(data) {
        return Err(Error::RowMisalignment);
    }
    Ok(())
}

fn log_field(field: &LocalMixingField) -> Vec<f64> {
    field.mixing().iter().map(|w| w.ln()).collect()
}

/// `Σᵢ log Σₖ π̂ₖ(Sᵢ) φₖ(Xᵢ)`.
pub fn joint_objective(data: &Dataset, field: &LocalMixingField, theta: &MixtureParams) -> Result<f64> {
    theta.validate()?;
    check_dim(data, theta.dim())?;
    check_alignment(data, field, theta.k())?;
    let comps = theta.prepare(&RidgeSchedule::default())?;
    let logs = log_field(field);
    Ok(e_step(data, &comps, &LogPrior::PerRow(&logs))?.0)
}

/// EM over the component parameters with per-instance mixing fixed at the
/// field rows. The returned mixing is `init_theta.mixing`, untouched.
pub fn em_fit_joint(
    data: &Dataset,
    field: &LocalMixingField,
    init_theta: &MixtureParams,
    cfg: &FitConfig,
) -> Result<FitReport> {
    init_theta.validate()?;
    check_dim(data, init_theta.dim())?;
    let k = init_theta.k();
    check_alignment(data, field, k)?;
    cfg.validate(k)?;
    let start = Instant::now();
    let logs = log_field(field);
    let prior = LogPrior::PerRow(&logs);

    let mut params = init_theta.clone();
    let mut trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let comps = params.prepare(&cfg.ridge)?;
        let (ll, resp) = e_step(data, &comps, &prior)?;
        let prev = trace.last().copied();
        trace.push(ll);
        if prev.is_some_and(|p| relative_change(p, ll) < cfg.tol) {
            converged = true;
            break;
        }
        if iterations == cfg.max_iter {
            break;
        }
        let (components, _) = m_step_components(data, &resp, &params.components, &cfg.ridge)?;
        params.components = components;
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

/// `αₖ ∝ πₖ(s) φₖ(x)`, normalized in log space.
pub fn posterior(x: &FeatureVector, mixing_at_s: &[f64], theta: &MixtureParams) -> Result<Vec<f64>> {
    theta.validate()?;
    if x.dim() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            found: x.dim(),
        });
    }
    if mixing_at_s.len() != theta.k() {
        return Err(Error::DimensionMismatch {
            expected: theta.k(),
            found: mixing_at_s.len(),
        });
    }
    let data = Dataset::new(x.dim(), x.as_slice().to_vec(), vec![[0.0, 0.0]], None)?;
    let comps = theta.prepare(&RidgeSchedule::default())?;
    let logs: Vec<f64> = mixing_at_s.iter().map(|w| w.ln()).collect();
    Ok(e_step(&data, &comps, &LogPrior::PerRow(&logs))?.1)
}

/// Hard labels (zero-based) and the N×K posterior matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: Vec<usize>,
    pub posteriors: Vec<f64>,
    pub k: usize,
}

impl Classification {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.posteriors[i * self.k..(i + 1) * self.k]
    }
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Posterior classification of `data` under `model`.
pub fn classify(data: &Dataset, model: &SgmmModel) -> Result<Classification> {
    let k = model.k();
    let mixing = model.mixing_for(data)?;
    let comps = model.theta.prepare(&model.config.ridge)?;
    let logs: Vec<f64> = mixing.iter().map(|w| w.ln()).collect();
    let (_, posteriors) = e_step(data, &comps, &LogPrior::PerRow(&logs))?;
    let labels = posteriors.chunks(k).map(argmax).collect();
    Ok(Classification { labels, posteriors, k })
}

/// Everything that selects a pipeline besides the data and EM controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub k: usize,
    pub stage: Stage,
    pub init: JointInit,
    /// Outer rounds for `Stage::Full`; joint fits always run exactly one.
    pub max_outer: usize,
}

/// Marginal fit, then (for joint/full) alternating local-field and joint
/// rounds.
///
/// Round one solves every local problem from the marginal mixing; later
/// rounds warm-start each location from the previous round's field.
pub fn fit_pipeline(data: &Dataset, cfg: &FitConfig, spec: &KernelSpec, opts: &PipelineOptions) -> Result<SgmmModel> {
    if opts.max_outer == 0 {
        return Err(Error::InvalidInput("max_outer must be at least 1".into()));
    }
    cfg.validate(opts.k)?;
    KernelSpec::new(spec.kind, spec.bandwidth)?;
    let kmeans = kmeans_init(data, opts.k, cfg.seed, cfg)?;
    let marginal = em_fit_marginal(data, &kmeans, cfg)?;
    refine(data, cfg, spec, opts, &kmeans, &marginal, None)
}

/// The part of `fit_pipeline` after the marginal fit. `first_field`, when
/// given, must be the round-one field (the training field under the marginal
/// parameters) and is used instead of recomputing it.
pub fn refine(
    data: &Dataset,
    cfg: &FitConfig,
    spec: &KernelSpec,
    opts: &PipelineOptions,
    kmeans: &MixtureParams,
    marginal: &FitReport,
    first_field: Option<LocalMixingField>,
) -> Result<SgmmModel> {
    if opts.max_outer == 0 {
        return Err(Error::InvalidInput("max_outer must be at least 1".into()));
    }
    let spec = KernelSpec::new(spec.kind, spec.bandwidth)?;
    let mut summary = FitSummary {
        marginal: Some(StageSummary::from(marginal)),
        converged: marginal.converged,
        ..FitSummary::default()
    };
    let global = marginal.params.mixing.clone();
    if opts.stage == Stage::Marginal {
        return Ok(SgmmModel {
            theta: marginal.params.clone(),
            field: None,
            kernel: spec,
            stage: Stage::Marginal,
            config: cfg.clone(),
            training: None,
            summary,
        });
    }

    let rounds = if opts.stage == Stage::Joint { 1 } else { opts.max_outer };
    let mut theta = marginal.params.clone();
    let mut field: Option<LocalMixingField> = None;
    let mut first_field = first_field;
    let mut local_time = 0.0;
    let mut converged = false;
    // A full fit that exhausts its rounds without the objective settling
    // is reported as unconverged.
    let mut settled = rounds == 1;
    for round in 0..rounds {
        let t0 = Instant::now();
        let next_field = match first_field.take() {
            Some(f) => {
                check_alignment(data, &f, opts.k)?;
                f
            }
            None => LocalEstimator::new(data, &theta, &spec, cfg)?.fit_training_field(field.as_ref())?,
        };
        local_time += t0.elapsed().as_secs_f64();

        let init = if round == 0 && opts.init == JointInit::KMeans {
            kmeans.clone()
        } else {
            theta.clone()
        };
        let report = em_fit_joint(data, &next_field, &init, cfg)?;
        theta = MixtureParams {
            components: report.params.components.clone(),
            mixing: global.clone(),
        };
        let objective = report.final_loglik();
        let iters = next_field.iterations();
        summary.local_mean_iterations = Some(iters.iter().sum::<usize>() as f64 / iters.len() as f64);
        summary.joint = Some(StageSummary::from(&report));
        summary.outer_rounds = round + 1;
        let prev = summary.objective_trace.last().copied();
        summary.objective_trace.push(objective);
        field = Some(next_field);
        converged = report.converged;
        if prev.is_some_and(|p| relative_change(p, objective) < cfg.outer_tol) {
            settled = true;
            break;
        }
    }
    summary.local_wall_time_seconds = Some(local_time);
    summary.converged = marginal.converged && converged && settled;
    Ok(SgmmModel {
        theta,
        field,
        kernel: spec,
        stage: opts.stage,
        config: cfg.clone(),
        training: Some(data.without_labels()),
        summary,
    })
}

/// Fully iterated estimator: up to `max_outer` alternations starting from
/// the marginal fit. `max_outer = 1` is the one-pass joint estimator.
pub fn fit_full(data: &Dataset, k: usize, cfg: &FitConfig, spec: &KernelSpec, max_outer: usize) -> Result<SgmmModel> {
    fit_pipeline(
        data,
        cfg,
        spec,
        &PipelineOptions {
            k,
            stage: Stage::Full,
            init: JointInit::Marginal,
            max_outer,
        },
    )
}
