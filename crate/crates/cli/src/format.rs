//! File formats: dataset and prediction CSVs, the JSON model file, field
//! and heatmap grids, and the binary greyscale raster.
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same double, so every artifact round-trips exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sgmm::{
    Dataset, FitConfig, FitSummary, GaussianComponent, KernelSpec, LocalMixingField, MixtureParams, SgmmModel,
    Stage, StageSummary,
};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CliError::format(path, e.to_string())
    }
}

fn open_csv(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

/// Writes rows of pre-formatted cells under `header`.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn parse_f64(path: &Path, line: usize, cell: &str) -> CliResult<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| CliError::format(path, format!("row {line}: '{cell}' is not a number")))
}

/// Reads `x1..xp, s1, s2[, y]`. Labels in the file are one-based.
pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let p = names.iter().take_while(|n| n.starts_with('x')).count();
    let has_y = names.last() == Some(&"y");
    let mut expected: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    expected.extend(["s1".to_string(), "s2".to_string()]);
    if has_y {
        expected.push("y".into());
    }
    if p == 0 || names != expected {
        return Err(CliError::format(
            path,
            format!("header must be x1..xp,s1,s2[,y], found '{}'", names.join(",")),
        ));
    }

    let mut features = Vec::new();
    let mut locations = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        if rec.len() != expected.len() {
            return Err(CliError::format(path, format!("row {line}: expected {} columns", expected.len())));
        }
        for cell in rec.iter().take(p) {
            features.push(parse_f64(path, line, cell)?);
        }
        locations.push([parse_f64(path, line, &rec[p])?, parse_f64(path, line, &rec[p + 1])?]);
        if has_y {
            let y: usize = rec[p + 2]
                .trim()
                .parse()
                .ok()
                .filter(|&y| y >= 1)
                .ok_or_else(|| CliError::format(path, format!("row {line}: label must be an integer >= 1")))?;
            labels.push(y - 1);
        }
    }
    Dataset::new(p, features, locations, has_y.then_some(labels)).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    let p = data.dim();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.extend(["s1".to_string(), "s2".to_string()]);
    let labels = data.labels();
    if labels.is_some() {
        header.push("y".into());
    }
    let rows = (0..data.len()).map(|i| {
        let mut row: Vec<String> = data.feature(i).iter().map(|&v| fmt_f64(v)).collect();
        let s = data.location(i);
        row.push(fmt_f64(s[0]));
        row.push(fmt_f64(s[1]));
        if let Some(l) = labels {
            row.push((l[i] + 1).to_string());
        }
        row
    });
    write_table(path, &header, rows)
}

/// Posterior predictions: zero-based labels and the row-major N×K matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<usize>,
    pub posteriors: Vec<f64>,
    pub k: usize,
}

pub fn write_predictions(path: &Path, pred: &Predictions) -> CliResult<()> {
    let mut header = vec!["label".to_string()];
    header.extend((1..=pred.k).map(|j| format!("alpha_{j}")));
    let rows = pred.labels.iter().zip(pred.posteriors.chunks(pred.k)).map(|(&l, row)| {
        let mut cells = vec![(l + 1).to_string()];
        cells.extend(row.iter().map(|&v| fmt_f64(v)));
        cells
    });
    write_table(path, &header, rows)
}

pub fn read_predictions(path: &Path) -> CliResult<Predictions> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let k = header.len().saturating_sub(1);
    let ok = k > 0
        && header.get(0).map(str::trim) == Some("label")
        && header.iter().skip(1).enumerate().all(|(j, h)| h.trim() == format!("alpha_{}", j + 1));
    if !ok {
        return Err(CliError::format(path, "header must be label,alpha_1..alpha_K"));
    }
    let mut labels = Vec::new();
    let mut posteriors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = i + 2;
        let label: usize = rec[0]
            .trim()
            .parse()
            .ok()
            .filter(|&l| (1..=k).contains(&l))
            .ok_or_else(|| CliError::format(path, format!("row {line}: label must lie in 1..{k}")))?;
        labels.push(label - 1);
        for cell in rec.iter().skip(1) {
            posteriors.push(parse_f64(path, line, cell)?);
        }
    }
    if labels.is_empty() {
        return Err(CliError::format(path, "no prediction rows"));
    }
    Ok(Predictions { labels, posteriors, k })
}

/// `s1, s2, pi_1..pi_K, flag`.
pub fn write_field(path: &Path, field: &LocalMixingField) -> CliResult<()> {
    let mut header = vec!["s1".to_string(), "s2".to_string()];
    header.extend((1..=field.k()).map(|j| format!("pi_{j}")));
    header.push("flag".into());
    let rows = (0..field.len()).map(|i| {
        let s = field.query_points()[i];
        let mut cells = vec![fmt_f64(s[0]), fmt_f64(s[1])];
        cells.extend(field.row(i).iter().map(|&v| fmt_f64(v)));
        cells.push(u8::from(field.flags()[i]).to_string());
        cells
    });
    write_table(path, &header, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact types serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    /// One array per component.
    pub pi: Vec<Vec<f64>>,
    pub flag: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFile {
    pub iterations: usize,
    pub converged: bool,
    pub final_loglik: f64,
}

/// Wall-clock seconds; only recorded on request since it breaks
/// byte-for-byte reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingFile {
    pub marginal: Option<f64>,
    pub local: Option<f64>,
    pub joint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub converged: bool,
    pub outer_rounds: usize,
    pub marginal: Option<StageFile>,
    pub joint: Option<StageFile>,
    pub local_mean_iterations: Option<f64>,
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<TimingFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub stage: Stage,
    pub mixing: Vec<f64>,
    pub components: Vec<ComponentFile>,
    pub kernel: KernelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldFile>,
    pub fit_report: ReportFile,
    pub config: FitConfig,
    /// Training features, row by row, in field order. Out-of-sample local
    /// EM needs them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_features: Option<Vec<Vec<f64>>>,
}

fn stage_file(s: &StageSummary) -> StageFile {
    StageFile {
        iterations: s.iterations,
        converged: s.converged,
        final_loglik: s.final_loglik,
    }
}

fn stage_summary(s: &StageFile, seconds: Option<f64>) -> StageSummary {
    StageSummary {
        iterations: s.iterations,
        converged: s.converged,
        final_loglik: s.final_loglik,
        wall_time_seconds: seconds.unwrap_or(0.0),
    }
}

impl ModelFile {
    pub fn from_model(model: &SgmmModel, timing: bool) -> Self {
        let k = model.k();
        let p = model.dim();
        let components = model
            .theta
            .components
            .iter()
            .map(|c| {
                let cov = c.covariance();
                ComponentFile {
                    mean: c.mean().iter().copied().collect(),
                    // Averaging the two triangles makes the written matrix
                    // exactly symmetric.
                    covariance: (0..p)
                        .map(|i| (0..p).map(|j| 0.5 * (cov[(i, j)] + cov[(j, i)])).collect())
                        .collect(),
                }
            })
            .collect();
        let field = model.field.as_ref().map(|f| FieldFile {
            s1: f.query_points().iter().map(|s| s[0]).collect(),
            s2: f.query_points().iter().map(|s| s[1]).collect(),
            pi: (0..k).map(|j| (0..f.len()).map(|i| f.row(i)[j]).collect()).collect(),
            flag: f.flags().to_vec(),
        });
        let sum = &model.summary;
        let fit_report = ReportFile {
            converged: sum.converged,
            outer_rounds: sum.outer_rounds,
            marginal: sum.marginal.as_ref().map(stage_file),
            joint: sum.joint.as_ref().map(stage_file),
            local_mean_iterations: sum.local_mean_iterations,
            objective_trace: sum.objective_trace.clone(),
            wall_time_seconds: timing.then(|| TimingFile {
                marginal: sum.marginal.as_ref().map(|s| s.wall_time_seconds),
                local: sum.local_wall_time_seconds,
                joint: sum.joint.as_ref().map(|s| s.wall_time_seconds),
            }),
        };
        let training_features = model
            .training
            .as_ref()
            .map(|d| (0..d.len()).map(|i| d.feature(i).to_vec()).collect());
        Self {
            schema_version: SCHEMA_VERSION,
            k,
            p,
            stage: model.stage,
            mixing: model.theta.mixing.clone(),
            components,
            kernel: model.kernel,
            field,
            fit_report,
            config: model.config.clone(),
            training_features,
        }
    }

    pub fn to_model(&self) -> sgmm::Result<SgmmModel> {
        let invalid = |m: &str| sgmm::Error::InvalidInput(m.to_string());
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("unsupported schema_version"));
        }
        if self.components.len() != self.k {
            return Err(invalid("component count differs from K"));
        }
        let mut components = Vec::with_capacity(self.k);
        for c in &self.components {
            let p = self.p;
            if c.mean.len() != p || c.covariance.len() != p || c.covariance.iter().any(|r| r.len() != p) {
                return Err(invalid("component shape differs from p"));
            }
            let cov = DMatrix::from_fn(p, p, |i, j| c.covariance[i][j]);
            components.push(GaussianComponent::new(DVector::from_vec(c.mean.clone()), cov)?);
        }
        let theta = MixtureParams::new(components, self.mixing.clone())?;
        let kernel = KernelSpec::new(self.kernel.kind, self.kernel.bandwidth)?;

        let field = match &self.field {
            None => None,
            Some(f) => {
                let m = f.s1.len();
                if f.s2.len() != m || f.flag.len() != m || f.pi.len() != self.k || f.pi.iter().any(|c| c.len() != m) {
                    return Err(invalid("field arrays have inconsistent lengths"));
                }
                let points = f.s1.iter().zip(&f.s2).map(|(&a, &b)| [a, b]).collect();
                let mixing = (0..m).flat_map(|i| f.pi.iter().map(move |col| col[i])).collect();
                Some(LocalMixingField::new(self.k, points, mixing, f.flag.clone())?)
            }
        };
        let training = match (&self.training_features, &field) {
            (Some(rows), Some(f)) => {
                if rows.len() != f.len() || rows.iter().any(|r| r.len() != self.p) {
                    return Err(invalid("training features do not match the field"));
                }
                let features = rows.iter().flatten().copied().collect();
                Some(Dataset::new(self.p, features, f.query_points().to_vec(), None)?)
            }
            (Some(_), None) => return Err(invalid("training features without a field")),
            (None, _) => None,
        };

        let r = &self.fit_report;
        let t = r.wall_time_seconds.as_ref();
        let summary = FitSummary {
            marginal: r.marginal.as_ref().map(|s| stage_summary(s, t.and_then(|t| t.marginal))),
            joint: r.joint.as_ref().map(|s| stage_summary(s, t.and_then(|t| t.joint))),
            local_mean_iterations: r.local_mean_iterations,
            local_wall_time_seconds: t.and_then(|t| t.local),
            outer_rounds: r.outer_rounds,
            objective_trace: r.objective_trace.clone(),
            converged: r.converged,
        };
        let model = SgmmModel {
            theta,
            field,
            kernel,
            stage: self.stage,
            config: self.config.clone(),
            training,
            summary,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Binary greyscale raster (`P5`, maxval 255). Value `v` in [0, 1] maps to
/// `round(255 v)`; values outside are clamped and missing cells are black.
/// `values` is row-major with the first row at the top of the image.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[Option<f64>]) -> CliResult<()> {
    let mut w = create(path)?;
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(
        values
            .iter()
            .map(|v| v.map_or(0, |v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)),
    );
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}
