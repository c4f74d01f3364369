//! Labeled datasets: IDX/CSV ingestion, synthetic Gaussian blobs, and ℓ₂-cap
//! normalization.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::norm2;
use crate::rng;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// `n` samples of dimension `m`, stored row-major, with integer labels in
/// `[0, num_classes)`.
///
/// `c_cap` is an upper bound on every row's ℓ₂ norm; `x_min`/`x_max` bracket
/// every feature value.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
    c_cap: f64,
    x_min: f64,
    x_max: f64,
    grid: Option<(usize, usize)>,
}

impl LabeledDataset {
    /// Builds a dataset from flat row-major features. `c_cap` is set to the
    /// largest row norm.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        num_classes: usize,
        grid: Option<(usize, usize)>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                context: "dataset features",
                expected: labels.len() * dim,
                got: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange {
                index: bad,
                classes: num_classes,
            });
        }
        if let Some((h, w)) = grid {
            if h * w != dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset grid",
                    expected: dim,
                    got: h * w,
                });
            }
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite features".into()));
        }
        let mut ds = Self {
            features,
            labels,
            dim,
            num_classes,
            c_cap: 0.0,
            x_min: 0.0,
            x_max: 0.0,
            grid,
        };
        ds.c_cap = ds.max_row_norm();
        ds.recompute_range();
        Ok(ds)
    }

    fn recompute_range(&mut self) {
        let (lo, hi) = self
            .features
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (self.x_min, self.x_max) = if self.features.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn c_cap(&self) -> f64 {
        self.c_cap
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn value_range(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn grid(&self) -> Option<(usize, usize)> {
        self.grid
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.features.chunks_exact(self.dim).zip(self.labels.iter().copied())
    }

    pub fn max_row_norm(&self) -> f64 {
        self.features.chunks_exact(self.dim).map(norm2).fold(0.0, f64::max)
    }

    /// Rows at `indices`, in that order. Keeps this dataset's `c_cap`.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InsufficientData {
                needed: bad + 1,
                available: self.len(),
            });
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let mut ds = Self {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
            c_cap: self.c_cap,
            x_min: 0.0,
            x_max: 0.0,
            grid: self.grid,
        };
        ds.recompute_range();
        Ok(ds)
    }

    /// Projects every row with norm above `c_target` onto the `c_target`
    /// ball and records `c_target` as the dataset cap.
    pub fn normalize(&self, c_target: f64) -> Result<Self> {
        if !(c_target > 0.0) || !c_target.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normalization cap must be positive and finite, got {c_target}"
            )));
        }
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.dim) {
            let n = norm2(row);
            // Rows within rounding of the cap are left alone so that
            // normalization is idempotent.
            if n > c_target * (1.0 + 1e-12) {
                let s = c_target / n;
                row.iter_mut().for_each(|v| *v *= s);
            }
        }
        out.c_cap = c_target;
        out.recompute_range();
        Ok(out)
    }

    pub fn with_grid(mut self, grid: Option<(usize, usize)>) -> Result<Self> {
        if let Some((h, w)) = grid {
            if h * w != self.dim {
                return Err(Error::DimensionMismatch {
                    context: "dataset grid",
                    expected: self.dim,
                    got: h * w,
                });
            }
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, label) in self.iter() {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn parse_err(source: &str, offset: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        offset,
        message: message.into(),
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, source: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(source, offset as u64, "truncated header"))
}

/// Parses an IDX image/label pair held in memory. Pixels are scaled to
/// `[0, 1]` and each image is flattened row-major.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    const IMG: &str = "idx images";
    const LBL: &str = "idx labels";

    let magic = read_be_u32(images, 0, IMG)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(parse_err(IMG, 0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")));
    }
    let count = read_be_u32(images, 4, IMG)? as usize;
    let rows = read_be_u32(images, 8, IMG)? as usize;
    let cols = read_be_u32(images, 12, IMG)? as usize;
    if rows == 0 || cols == 0 {
        return Err(parse_err(IMG, 8, "image side is zero"));
    }
    let dim = rows * cols;
    let body = &images[16..];
    if body.len() < count * dim {
        return Err(parse_err(
            IMG,
            (16 + body.len()) as u64,
            format!("truncated pixel data: expected {} bytes", count * dim),
        ));
    }

    let magic = read_be_u32(labels, 0, LBL)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(parse_err(LBL, 0, format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")));
    }
    let label_count = read_be_u32(labels, 4, LBL)? as usize;
    if label_count != count {
        return Err(parse_err(
            LBL,
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    let lbody = &labels[8..];
    if lbody.len() < count {
        return Err(parse_err(LBL, (8 + lbody.len()) as u64, "truncated label data"));
    }

    let features = body[..count * dim].iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = lbody[..count].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledDataset::new(features, labels, dim, num_classes, Some((rows, cols)))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

/// Reads a headered numeric CSV. `label_column` names the integer label
/// column; every other column is a feature.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let source = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(&source, 0, format!("missing label column `{label_column}`")))?;
    let dim = headers.len() - 1;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte());
            parse_err(&source, offset, e.to_string())
        })?;
        let offset = rec.position().map_or(0, |p| p.byte());
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let l: usize = cell.trim().parse().map_err(|_| {
                    parse_err(&source, offset, format!("label `{cell}` is not a non-negative integer"))
                })?;
                labels.push(l);
            } else {
                let v: f64 = cell
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(&source, offset, format!("cell `{cell}` is not numeric")))?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledDataset::new(features, labels, dim, num_classes, None)
}

/// `c` isotropic Gaussian clusters with unit within-cluster std. Cluster
/// means are random directions scaled to norm `separation`; sample `i`
/// belongs to cluster `i mod c`.
pub fn synth_blobs(n: usize, m: usize, c: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    if c < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {c}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs n, m > 0".into()));
    }
    let mut r = rng::stream(seed, rng::streams::SYNTH);
    let means: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let dir: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = norm2(&dir);
            dir.into_iter().map(|v| separation * v / norm).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % c;
        for &mu in &means[label] {
            let z: f64 = StandardNormal.sample(&mut r);
            features.push(mu + z);
        }
        labels.push(label);
    }
    LabeledDataset::new(features, labels, m, c, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Idx,
    Csv,
}

/// `{path, format, C, grid}` plus the format-specific companion field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub format: DatasetFormat,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<(usize, usize)>,
    /// IDX only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_path: Option<PathBuf>,
    /// CSV only; defaults to `label`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }

    /// Loads the referenced data, resolving relative paths against `base`.
    pub fn load(&self, base: &Path) -> Result<LabeledDataset> {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let ds = match self.format {
            DatasetFormat::Idx => {
                let labels = self
                    .labels_path
                    .as_deref()
                    .ok_or_else(|| Error::config("labels_path", "required for idx manifests"))?;
                load_idx(&resolve(&self.path), &resolve(labels))?
            }
            DatasetFormat::Csv => load_csv(
                &resolve(&self.path),
                self.label_column.as_deref().unwrap_or("label"),
            )?,
        };
        let ds = match self.grid {
            Some(g) => ds.with_grid(Some(g))?,
            None => ds,
        };
        match self.c {
            Some(c) => ds.normalize(c),
            None => Ok(ds),
        }
    }
}
