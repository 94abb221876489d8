use std::path::Path;

use sgmm::experiment::{run_clustering, run_study1, summarize, ClusteringOptions, ReplicateRecord, Study1Options};
use sgmm::metrics::mise_with_oracle;
use sgmm::{
    align_components, ari, auc, classify, default_bandwidth, fit_pipeline, generate, integrate_to_binary, iou,
    sag_scenario, study1_scenario, study1_with_mixing, Dataset, FitConfig, JointInit, KernelKind, KernelSpec,
    LocalEstimator, LocalMixingField, Location, MixingOracle, PipelineOptions, Scenario, SgmmModel, Stage,
};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::format::*;

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Marginal => Stage::Marginal,
            StageArg::Joint => Stage::Joint,
            StageArg::Full => Stage::Full,
        }
    }
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Gaussian => KernelKind::Gaussian,
            KernelArg::Epanechnikov => KernelKind::Epanechnikov,
        }
    }
}

impl From<InitArg> for JointInit {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Kmeans => JointInit::KMeans,
            InitArg::Marginal => JointInit::Marginal,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn load_model(path: &Path) -> CliResult<SgmmModel> {
    let file: ModelFile = read_json(path)?;
    file.to_model().map_err(|e| CliError::format(path, e.to_string()))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    if a.n == 0 || a.p == 0 {
        return Err(usage("--n and --p must be positive"));
    }
    let scenario = match a.study {
        Study::One => match a.pi1 {
            None => study1_scenario(a.p, a.n, a.seed),
            Some(pi1) if pi1 > 0.0 && pi1 < 1.0 => study1_with_mixing(a.p, a.n, a.seed, [pi1, 1.0 - pi1]),
            Some(_) => return Err(usage("--pi1 must lie strictly between 0 and 1")),
        },
        Study::Sag => {
            if a.pi1.is_some() {
                return Err(usage("--pi1 applies to study 1 only"));
            }
            sag_scenario(a.k, a.p, a.n, a.seed).map_err(|e| usage(e.to_string()))?
        }
    };
    let data = generate(&scenario)?;
    write_dataset(&a.out, &data)?;
    let sidecar = a.scenario_out.clone().unwrap_or_else(|| a.out.with_extension("scenario.json"));
    write_json(&sidecar, &scenario)
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let data = read_dataset(&a.data)?.without_labels();
    if a.k == 0 || a.k > data.len() {
        return Err(usage(format!("--k must lie in 1..={}", data.len())));
    }
    let bandwidth = a.bandwidth.unwrap_or_else(|| default_bandwidth(data.len(), a.bandwidth_c));
    let spec = KernelSpec::new(a.kernel.into(), bandwidth).map_err(|e| usage(e.to_string()))?;
    let cfg = FitConfig {
        max_iter: a.max_iter,
        tol: a.tol,
        outer_tol: a.outer_tol,
        seed: a.seed,
        leave_one_out: !a.include_self,
        ..FitConfig::default()
    };
    cfg.validate(a.k).map_err(|e| usage(e.to_string()))?;
    let opts = PipelineOptions {
        k: a.k,
        stage: a.stage.into(),
        init: a.init.into(),
        max_outer: a.max_outer,
    };
    if opts.max_outer == 0 {
        return Err(usage("--max-outer must be at least 1"));
    }
    let model = fit_pipeline(&data, &cfg, &spec, &opts)?;
    write_json(&a.out, &ModelFile::from_model(&model, a.timing))?;
    if let (Some(path), Some(field)) = (&a.field_out, &model.field) {
        write_field(path, field)?;
    }
    if !model.summary.converged {
        return Err(CliError::NotConverged(a.out.clone()));
    }
    Ok(())
}

fn check_compatible(model: &SgmmModel, data: &Dataset) -> CliResult<()> {
    if data.dim() != model.dim() {
        return Err(usage(format!(
            "data has p = {} but the model was fitted with p = {}",
            data.dim(),
            model.dim()
        )));
    }
    if let Some(labels) = data.labels() {
        if labels.iter().any(|&y| y >= model.k()) {
            return Err(usage(format!("data labels exceed the model's K = {}", model.k())));
        }
    }
    Ok(())
}

pub fn predict(a: &PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let data = read_dataset(&a.data)?;
    check_compatible(&model, &data)?;
    let c = classify(&data.without_labels(), &model)?;
    write_predictions(
        &a.out,
        &Predictions {
            labels: c.labels,
            posteriors: c.posteriors,
            k: c.k,
        },
    )
}

pub fn evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let pred = read_predictions(&a.pred)?;
    let truth = read_dataset(&a.truth_data)?;
    let labels = truth
        .labels()
        .ok_or_else(|| usage(format!("{}: no y column, ground truth is required", a.truth_data.display())))?
        .to_vec();
    if labels.len() != pred.labels.len() {
        return Err(usage(format!(
            "{} predictions for {} labelled rows",
            pred.labels.len(),
            labels.len()
        )));
    }

    let mut header = vec!["n".to_string(), "auc".into(), "iou".into(), "ari".into()];
    let mut row = vec![labels.len().to_string()];
    // Class 1 is the binary reference; AUC and IoU are blank when every
    // row belongs to one side.
    let reference: Vec<bool> = labels.iter().map(|&y| y == 0).collect();
    match integrate_to_binary(&pred.posteriors, pred.k, &reference) {
        Ok(b) => {
            let mask: Vec<bool> = pred.labels.iter().map(|&j| b.cluster_to_class[j]).collect();
            row.push(fmt_f64(auc(&b.scores, &reference)?));
            row.push(fmt_f64(iou(&mask, &reference)));
        }
        Err(sgmm::Error::SingleClass) => row.extend([String::new(), String::new()]),
        Err(e) => return Err(e.into()),
    }
    let ari_cell = if labels.len() >= 2 {
        fmt_f64(ari(&pred.labels, &labels)?)
    } else {
        String::new()
    };
    row.push(ari_cell);

    if let (Some(scenario_path), Some(model_path)) = (&a.scenario, &a.model) {
        let scenario: Scenario = read_json(scenario_path)?;
        scenario.validate().map_err(|e| CliError::format(scenario_path, e.to_string()))?;
        let model = load_model(model_path)?;
        let comparison = align_components(&model.theta, &scenario.params()?).map_err(|e| usage(e.to_string()))?;
        for (name, value) in &comparison.errors {
            header.push(format!("mse_{name}"));
            row.push(fmt_f64(*value));
        }
        check_compatible(&model, &truth)?;
        let data = truth.without_labels();
        let mixing = model.mixing_for(&data)?;
        let field = LocalMixingField::new(model.k(), data.locations().to_vec(), mixing, vec![false; data.len()])?;
        let oracle = MixingOracle::new(&scenario)?;
        header.push("mise".into());
        row.push(fmt_f64(mise_with_oracle(&field, &oracle, &comparison)?));
    }
    write_table(&a.out, &header, [row])
}

/// Padded bounding box `[lo1, hi1, lo2, hi2]` of a set of locations.
fn padded_box(points: &[Location]) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for s in points {
        b[0] = b[0].min(s[0]);
        b[1] = b[1].max(s[0]);
        b[2] = b[2].min(s[1]);
        b[3] = b[3].max(s[1]);
    }
    for axis in 0..2 {
        let (lo, hi) = (b[2 * axis], b[2 * axis + 1]);
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        b[2 * axis] = lo - pad;
        b[2 * axis + 1] = hi + pad;
    }
    b
}

fn axis(lo: f64, hi: f64, res: usize) -> Vec<f64> {
    if res == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..res).map(|i| lo + (hi - lo) * i as f64 / (res - 1) as f64).collect()
}

/// Value and empty-cell flag at every node, `s2` outer and `s1` inner.
fn grid_values(
    model: &SgmmModel,
    quantity: Quantity,
    data: Option<&Dataset>,
    xs: &[f64],
    ys: &[f64],
) -> CliResult<Vec<(Option<f64>, bool)>> {
    let nodes: Vec<Location> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
    match quantity {
        Quantity::Mixing => match (&model.training, model.stage) {
            (Some(train), Stage::Joint | Stage::Full) => {
                let est = LocalEstimator::new(train, &model.theta, &model.kernel, &model.config)?;
                let field = est.fit_field(&nodes, None)?;
                Ok((0..field.len()).map(|i| (Some(field.row(i)[0]), field.flags()[i])).collect())
            }
            _ => Ok(vec![(Some(model.theta.mixing[0]), false); nodes.len()]),
        },
        Quantity::Posterior => {
            let data = data.ok_or_else(|| usage("--quantity posterior requires --data"))?;
            let c = classify(data, model)?;
            let nearest = |v: f64, grid: &[f64]| -> Option<usize> {
                if grid.len() == 1 {
                    return Some(0);
                }
                let step = grid[1] - grid[0];
                let i = ((v - grid[0]) / step).round();
                (i >= 0.0 && i < grid.len() as f64).then_some(i as usize)
            };
            let mut sums = vec![0.0; nodes.len()];
            let mut counts = vec![0usize; nodes.len()];
            for i in 0..data.len() {
                let s = data.location(i);
                if let (Some(a), Some(b)) = (nearest(s[0], xs), nearest(s[1], ys)) {
                    sums[b * xs.len() + a] += c.row(i)[0];
                    counts[b * xs.len() + a] += 1;
                }
            }
            Ok(sums
                .iter()
                .zip(&counts)
                .map(|(&s, &n)| if n > 0 { (Some(s / n as f64), false) } else { (None, true) })
                .collect())
        }
    }
}

pub fn heatmap(a: &HeatmapArgs) -> CliResult<()> {
    if a.grid_res == 0 {
        return Err(usage("--grid-res must be positive"));
    }
    let model = load_model(&a.model)?;
    let data = match &a.data {
        Some(path) => {
            let d = read_dataset(path)?;
            check_compatible(&model, &d)?;
            Some(d.without_labels())
        }
        None => None,
    };
    let b = match (&a.bounds, &data, &model.training) {
        (Some(v), _, _) => {
            if v.len() != 4 || !(v[1] > v[0] && v[3] > v[2]) {
                return Err(usage("--bounds must be lo1,hi1,lo2,hi2 with lo < hi"));
            }
            [v[0], v[1], v[2], v[3]]
        }
        (None, Some(d), _) => padded_box(d.locations()),
        (None, None, Some(t)) => padded_box(t.locations()),
        (None, None, None) => return Err(usage("a marginal model needs --data or --bounds for the grid box")),
    };
    let xs = axis(b[0], b[1], a.grid_res);
    let ys = axis(b[2], b[3], a.grid_res);
    let values = grid_values(&model, a.quantity, data.as_ref(), &xs, &ys)?;

    let header = ["s1", "s2", "value", "flag"].map(String::from);
    let rows = values.iter().enumerate().map(|(idx, (v, flag))| {
        let (i, j) = (idx % xs.len(), idx / xs.len());
        vec![
            fmt_f64(xs[i]),
            fmt_f64(ys[j]),
            v.map(fmt_f64).unwrap_or_default(),
            u8::from(*flag).to_string(),
        ]
    });
    write_table(&a.out, &header, rows)?;
    if let Some(path) = &a.pgm {
        // Top image row is the largest s2.
        let w = xs.len();
        let pixels: Vec<Option<f64>> = (0..ys.len())
            .rev()
            .flat_map(|j| (0..w).map(move |i| j * w + i))
            .map(|idx| values[idx].0.filter(|_| !values[idx].1))
            .collect();
        write_pgm(path, xs.len(), ys.len(), &pixels)?;
    }
    Ok(())
}

const SUMMARY_METRICS: [(&str, fn(&ReplicateRecord) -> Option<f64>); 10] = [
    ("log_mse_mu1", |r| r.log_mse_mu1),
    ("log_mse_mu2", |r| r.log_mse_mu2),
    ("log_mse_sigma1", |r| r.log_mse_sigma1),
    ("log_mse_sigma2", |r| r.log_mse_sigma2),
    ("log_mise_in", |r| r.mise_in.map(f64::ln)),
    ("log_mise_oos", |r| r.mise_oos.map(f64::ln)),
    ("auc", |r| r.auc),
    ("iou", |r| r.iou),
    ("ari", |r| r.ari),
    ("iterations", |r| r.iterations.map(|i| i as f64)),
];

fn write_records(path: &Path, records: &[ReplicateRecord]) -> CliResult<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in records {
        w.serialize(r).map_err(|e| CliError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_summary(path: &Path, records: &[ReplicateRecord]) -> CliResult<()> {
    let mut keys: Vec<(usize, String)> = Vec::new();
    for r in records {
        let key = (r.n, r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let header = ["study", "n", "method", "metric", "mean", "std_error", "count"].map(String::from);
    let mut rows = Vec::new();
    for (n, method) in &keys {
        let cell: Vec<ReplicateRecord> = records.iter().filter(|r| r.n == *n).cloned().collect();
        for (name, metric) in SUMMARY_METRICS {
            let s = summarize(&cell, method, metric);
            if s.count > 0 {
                rows.push(vec![
                    cell[0].study.clone(),
                    n.to_string(),
                    method.clone(),
                    name.to_string(),
                    fmt_f64(s.mean),
                    fmt_f64(s.std_error),
                    s.count.to_string(),
                ]);
            }
        }
    }
    write_table(path, &header, rows)
}

pub fn repro(a: &ReproArgs) -> CliResult<()> {
    if a.replicates == 0 || a.p == 0 || a.n.iter().any(|&n| n < 2) {
        return Err(usage("--replicates, --p must be positive and every --n at least 2"));
    }
    let kernel: KernelKind = a.kernel.into();
    let mut records = Vec::new();
    for &n in &a.n {
        let rows = match a.study {
            Study::One => run_study1(&Study1Options {
                base_seed: a.base_seed,
                bandwidth_c: a.bandwidth_c,
                kernel,
                oos: !a.no_oos,
                full_max_outer: a.full_max_outer,
                ..Study1Options::new(a.p, n, a.replicates)
            })?,
            Study::Sag => run_clustering(&ClusteringOptions {
                base_seed: a.base_seed,
                bandwidth_c: a.bandwidth_c,
                kernel,
                ..ClusteringOptions::new(a.k, a.p, n, a.replicates)
            })?,
        };
        records.extend(rows);
    }
    if !a.timing {
        records.iter_mut().for_each(|r| r.time_seconds = None);
    }
    write_records(&a.out, &records)?;
    if let Some(path) = &a.summary_out {
        write_summary(path, &records)?;
    }
    Ok(())
}
