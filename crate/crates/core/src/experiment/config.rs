use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, load_idx, synth_blobs, DatasetManifest, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::rng::derive_seed;
use crate::saliency::{BaseMethod, DEFAULT_IG_STEPS, DEFAULT_SMOOTHING_SAMPLES};
use crate::training::{SplitPlan, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Synth {
        n: usize,
        m: usize,
        classes: usize,
        separation: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<(usize, usize)>,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid: Option<(usize, usize)>,
    },
    Manifest {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    /// ℓ₂ cap applied after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Hidden widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub init_seed: u64,
    /// Start every split from the same initial weights.
    #[serde(default)]
    pub shared_init: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    SimpleGrad,
    IntegratedGrad,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::SimpleGrad => "simple_grad",
            MethodName::IntegratedGrad => "integrated_grad",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simple_grad" => Some(MethodName::SimpleGrad),
            "integrated_grad" => Some(MethodName::IntegratedGrad),
            _ => None,
        }
    }

    pub fn base(self, ig_steps: usize) -> BaseMethod {
        match self {
            MethodName::SimpleGrad => BaseMethod::SimpleGrad,
            MethodName::IntegratedGrad => BaseMethod::IntegratedGrad {
                baseline: None,
                n_steps: ig_steps,
            },
        }
    }
}

fn default_samples() -> usize {
    DEFAULT_SMOOTHING_SAMPLES
}

fn default_ig_steps() -> usize {
    DEFAULT_IG_STEPS
}

fn default_true() -> bool {
    true
}

fn default_table_ratio() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Noise levels as fractions of the data value range `x_max − x_min`.
    pub sigma_ratios: Vec<f64>,
    pub methods: Vec<MethodName>,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_ig_steps")]
    pub ig_steps: usize,
    pub noise_seed: u64,
    /// Project perturbed inputs back onto the data's ℓ₂ ball.
    #[serde(default)]
    pub normalize_input: bool,
    /// Top-k size; defaults to `⌈m/10⌉` (500 for `m ≥ 5000`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topk: Option<usize>,
    #[serde(default = "default_true")]
    pub ssim: bool,
    #[serde(default = "default_true")]
    pub topk_miou: bool,
    #[serde(default = "default_true")]
    pub generalization_gap: bool,
    /// σ ratio used for the summary table.
    #[serde(default = "default_table_ratio")]
    pub table_sigma_ratio: f64,
}

fn default_eval_size() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_size")]
    pub size: usize,
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out() }
    }
}

fn default_verify_trials() -> usize {
    1000
}

fn default_verify_seed() -> u64 {
    0x5EED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_verify_trials")]
    pub trials: usize,
    #[serde(default = "default_verify_seed")]
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trials: default_verify_trials(),
            seed: default_verify_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub split: SplitPlan,
    pub network: NetworkSection,
    pub train: TrainConfig,
    /// Enforce the caps in `train.project_caps` during training; when false
    /// the caps are ignored and bounds use measured norms only.
    #[serde(default)]
    pub project: bool,
    pub sweep: SweepSection,
    pub eval: EvalSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output.dir = parent.join(&cfg.output.dir);
            }
        }
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data.spec {
            DatasetSpec::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetSpec::Csv { path, .. } | DatasetSpec::Manifest { path } => fix(path),
            DatasetSpec::Synth { .. } => {}
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Hex SHA-256 of the canonical TOML rendering, excluding the output
    /// directory.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output = OutputSection::default();
        Ok(hex::encode(Sha256::digest(c.to_toml_string()?.as_bytes())))
    }

    /// Re-keys every seed in the config from one root.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.train.seed = derive_seed(seed, 1);
        self.network.init_seed = derive_seed(seed, 2);
        self.eval.seed = derive_seed(seed, 3);
        self.sweep.noise_seed = derive_seed(seed, 4);
        self.verify.seed = derive_seed(seed, 5);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.split.n_splits == 0 {
            return Err(Error::config("split.n_splits", "must be positive"));
        }
        if self.split.split_size == 0 {
            return Err(Error::config("split.split_size", "must be positive"));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::config("network.hidden", "widths must be positive"));
        }
        if let Some(c) = self.data.normalize_c {
            if !(c > 0.0) {
                return Err(Error::config("data.normalize_c", "must be positive"));
            }
        }
        if self.project {
            match &self.train.project_caps {
                None => return Err(Error::config("train.project_caps", "required when project = true")),
                Some(caps) if caps.len() != self.network.hidden.len() + 1 => {
                    return Err(Error::config(
                        "train.project_caps",
                        format!("expected {} caps, one per layer", self.network.hidden.len() + 1),
                    ))
                }
                _ => {}
            }
        }
        let r = &self.sweep.sigma_ratios;
        if r.is_empty() {
            return Err(Error::config("sweep.sigma_ratios", "must not be empty"));
        }
        if r.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("sweep.sigma_ratios", "must be finite and non-negative"));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("sweep.sigma_ratios", "must be strictly ascending"));
        }
        if self.sweep.methods.is_empty() {
            return Err(Error::config("sweep.methods", "at least one method is required"));
        }
        if self.sweep.n_samples == 0 {
            return Err(Error::config("sweep.n_samples", "must be positive"));
        }
        if self.sweep.ig_steps == 0 {
            return Err(Error::config("sweep.ig_steps", "must be positive"));
        }
        if self.eval.size == 0 {
            return Err(Error::config("eval.size", "must be positive"));
        }
        if let DatasetSpec::Synth { classes, m, n, .. } = &self.data.spec {
            if *classes < 2 {
                return Err(Error::config("data.classes", "need at least 2 classes"));
            }
            if *m == 0 || *n == 0 {
                return Err(Error::config("data", "n and m must be positive"));
            }
        }
        Ok(())
    }

    /// Loads and normalizes the dataset.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let data = match &self.data.spec {
            DatasetSpec::Synth {
                n,
                m,
                classes,
                separation,
                seed,
                grid,
            } => synth_blobs(*n, *m, *classes, *separation, *seed)?.with_grid(*grid)?,
            DatasetSpec::Idx { images, labels, limit } => {
                let d = load_idx(images, labels)?;
                match limit {
                    Some(l) if *l < d.len() => d.subset(&(0..*l).collect::<Vec<_>>())?,
                    _ => d,
                }
            }
            DatasetSpec::Csv { path, label_column, grid } => load_csv(path, label_column)?.with_grid(*grid)?,
            DatasetSpec::Manifest { path } => {
                let base = path.parent().unwrap_or(Path::new("."));
                DatasetManifest::read(path)?.load(base)?
            }
        };
        match self.data.normalize_c {
            Some(c) => data.normalize(c),
            None => Ok(data),
        }
    }

    pub fn dims(&self, data: &LabeledDataset) -> Vec<usize> {
        let mut d = vec![data.dim()];
        d.extend(&self.network.hidden);
        d.push(data.num_classes());
        d
    }

    pub fn split_train_config(&self, split: usize) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = derive_seed(self.train.seed, split as u64);
        if !self.project {
            t.project_caps = None;
        }
        t
    }

    pub fn split_init_seed(&self, split: usize) -> u64 {
        if self.network.shared_init {
            self.network.init_seed
        } else {
            derive_seed(self.network.init_seed, split as u64)
        }
    }
}
