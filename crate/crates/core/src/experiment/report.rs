use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bounds::NormProfile;
use crate::error::{Error, Result};

/// One `(method, σ)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub sigma_ratio: f64,
    pub sigma: f64,
    pub stability: f64,
    pub stability_se: f64,
    pub stability_mc_se: f64,
    pub fidelity: f64,
    pub fidelity_se: f64,
    pub fidelity_mc_se: f64,
    pub ssim: Option<f64>,
    pub smoothed_ssim: Option<f64>,
    pub topk_miou: Option<f64>,
    pub smoothed_topk_miou: Option<f64>,
    pub stability_bound: Option<f64>,
    pub fidelity_bound: Option<f64>,
}

pub const ROW_COLUMNS: [&str; 15] = [
    "method",
    "sigma_ratio",
    "sigma",
    "stability",
    "stability_se",
    "stability_mc_se",
    "fidelity",
    "fidelity_se",
    "fidelity_mc_se",
    "ssim",
    "smoothed_ssim",
    "topk_miou",
    "smoothed_topk_miou",
    "stability_bound",
    "fidelity_bound",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMode {
    /// Caps enforced by projection during training.
    ProjectionCaps,
    /// Spectral norms measured on the trained networks.
    MeasuredPostTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub train: u64,
    pub init: u64,
    pub eval: u64,
    pub noise: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPayload {
    pub config_hash: String,
    pub seeds: Seeds,
    pub profile_mode: ProfileMode,
    pub profile: NormProfile,
    pub eval_size: usize,
    pub topk: usize,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub wall_time_secs: f64,
    pub created_unix: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(flatten)]
    pub payload: ReportPayload,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    /// Serialized payload without timing metadata; identical configs give
    /// identical bytes.
    pub fn payload_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.payload)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows_csv(path, &self.payload.rows)
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.payload.rows
    }
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(ROW_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ROW_COLUMNS {
        return Err(Error::Parse {
            source_name: path.display().to_string(),
            offset: 0,
            message: format!("unexpected columns {header:?}"),
        });
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Report rows from either a JSON report or its CSV rendering.
pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_rows_csv(path),
        _ => Ok(ExperimentReport::read_json(path)?.payload.rows),
    }
}

/// Long-format plot series: one point per `(method, metric, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub method: String,
    pub metric: String,
    pub sigma_ratio: f64,
    pub sigma: f64,
    pub value: f64,
    pub stderr: Option<f64>,
}

pub fn plot_points(rows: &[ReportRow]) -> Vec<PlotPoint> {
    let mut out = Vec::new();
    for r in rows {
        let mut push = |metric: &str, value: Option<f64>, stderr: Option<f64>| {
            if let Some(value) = value {
                out.push(PlotPoint {
                    method: r.method.clone(),
                    metric: metric.into(),
                    sigma_ratio: r.sigma_ratio,
                    sigma: r.sigma,
                    value,
                    stderr,
                });
            }
        };
        push("stability", Some(r.stability), Some(r.stability_se));
        push("fidelity", Some(r.fidelity), Some(r.fidelity_se));
        push("smoothed_ssim", r.smoothed_ssim, None);
        push("smoothed_topk_miou", r.smoothed_topk_miou, None);
        push("stability_bound", r.stability_bound, None);
        push("fidelity_bound", r.fidelity_bound, None);
    }
    out
}

/// Unsmoothed vs smoothed agreement scores for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub sigma_ratio: f64,
    pub ssim: Option<f64>,
    pub smoothed_ssim: Option<f64>,
    pub topk_miou: Option<f64>,
    pub smoothed_topk_miou: Option<f64>,
}

/// One row per method, at the sweep row whose σ ratio is closest to
/// `sigma_ratio` among the smoothed rows.
pub fn summary_table(rows: &[ReportRow], sigma_ratio: f64) -> Vec<TableRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .filter_map(|m| {
            rows.iter()
                .filter(|r| r.method == m && r.sigma_ratio > 0.0)
                .min_by(|a, b| (a.sigma_ratio - sigma_ratio).abs().total_cmp(&(b.sigma_ratio - sigma_ratio).abs()))
                .map(|r| TableRow {
                    method: m.to_string(),
                    sigma_ratio: r.sigma_ratio,
                    ssim: r.ssim,
                    smoothed_ssim: r.smoothed_ssim,
                    topk_miou: r.topk_miou,
                    smoothed_topk_miou: r.smoothed_topk_miou,
                })
        })
        .collect()
}

pub fn render_table(table: &[TableRow]) -> String {
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    let mut s = format!(
        "{:<18} {:>8} {:>10} {:>14} {:>11} {:>20}\n",
        "method", "sigma", "SSIM", "smoothed SSIM", "top-k mIoU", "smoothed top-k mIoU"
    );
    for r in table {
        s += &format!(
            "{:<18} {:>8.3} {:>10} {:>14} {:>11} {:>20}\n",
            r.method,
            r.sigma_ratio,
            cell(r.ssim),
            cell(r.smoothed_ssim),
            cell(r.topk_miou),
            cell(r.smoothed_topk_miou)
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub method: String,
    pub sigma_ratio: f64,
    pub sigma: f64,
    pub avg_fidelity: f64,
    pub avg_variance: f64,
    pub generalization_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub config_hash: String,
    pub n_models: usize,
    pub rows: Vec<BiasVarianceRow>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, ratio: f64) -> ReportRow {
        ReportRow {
            method: method.into(),
            sigma_ratio: ratio,
            sigma: ratio * 2.0,
            stability: 1.0 / 3.0,
            stability_se: 0.01,
            stability_mc_se: 0.0,
            fidelity: 0.1,
            fidelity_se: 1e-17,
            fidelity_mc_se: 0.0,
            ssim: Some(0.5),
            smoothed_ssim: None,
            topk_miou: Some(0.25),
            smoothed_topk_miou: Some(0.3),
            stability_bound: Some(12.5),
            fidelity_bound: None,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("simple_grad", 0.0), row("simple_grad", 0.15), row("integrated_grad", 0.1)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_rows_csv(&p, &rows).unwrap();
        assert_eq!(read_rows_csv(&p).unwrap(), rows);
        let header = std::fs::read_to_string(&p).unwrap();
        assert_eq!(header.lines().next().unwrap(), ROW_COLUMNS.join(","));
    }

    #[test]
    fn table_shape() {
        let rows = vec![row("simple_grad", 0.0), row("simple_grad", 0.15), row("integrated_grad", 0.1)];
        let t = summary_table(&rows, 0.15);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].sigma_ratio, 0.15);
        assert!(render_table(&t).lines().count() == 3);
    }
}
