//! Gradient saliency maps and the Gaussian smoothing wrapper.
//!
//! Smoothed maps are Monte-Carlo averages over `z_j = σ ε_j` with standard
//! normal `ε_j` drawn from the counter stream keyed by `cfg.seed`. Because
//! the `ε_j` do not depend on `σ`, two calls that differ only in `σ` (or in
//! the network) see the same underlying noise.

mod io;

pub use io::{read_maps_binary, read_maps_csv, write_maps_binary, write_maps_csv};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{norm2, Network};
use crate::rng;

/// Default Integrated-Gradients path resolution.
pub const DEFAULT_IG_STEPS: usize = 20;
/// Default Monte-Carlo draws for smoothed maps.
pub const DEFAULT_SMOOTHING_SAMPLES: usize = 100;

const NOISE_STREAM: u64 = 0x5A11_E1C7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyMethod {
    SimpleGrad,
    SmoothGrad,
    IntegratedGrad,
    SmoothedIntegratedGrad,
}

impl SaliencyMethod {
    pub fn is_smoothed(self) -> bool {
        matches!(self, SaliencyMethod::SmoothGrad | SaliencyMethod::SmoothedIntegratedGrad)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SaliencyMethod::SimpleGrad => "simple_grad",
            SaliencyMethod::SmoothGrad => "smooth_grad",
            SaliencyMethod::IntegratedGrad => "integrated_grad",
            SaliencyMethod::SmoothedIntegratedGrad => "smoothed_integrated_grad",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SaliencyMethod::SimpleGrad => 0,
            SaliencyMethod::SmoothGrad => 1,
            SaliencyMethod::IntegratedGrad => 2,
            SaliencyMethod::SmoothedIntegratedGrad => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => SaliencyMethod::SimpleGrad,
            1 => SaliencyMethod::SmoothGrad,
            2 => SaliencyMethod::IntegratedGrad,
            3 => SaliencyMethod::SmoothedIntegratedGrad,
            _ => return None,
        })
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SaliencyMethod::SimpleGrad,
            SaliencyMethod::SmoothGrad,
            SaliencyMethod::IntegratedGrad,
            SaliencyMethod::SmoothedIntegratedGrad,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Vec<f64>,
    pub method: SaliencyMethod,
    /// Absolute noise std; 0 for unsmoothed methods.
    pub sigma: f64,
    pub n_samples: usize,
    pub input_id: u64,
}

impl SaliencyMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }

    pub fn with_input_id(mut self, id: u64) -> Self {
        self.input_id = id;
        self
    }
}

/// The unsmoothed map a smoothing wrapper averages.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseMethod {
    SimpleGrad,
    IntegratedGrad {
        /// `None` means the zero vector.
        baseline: Option<Vec<f64>>,
        n_steps: usize,
    },
}

impl BaseMethod {
    pub fn integrated_default() -> Self {
        BaseMethod::IntegratedGrad {
            baseline: None,
            n_steps: DEFAULT_IG_STEPS,
        }
    }

    pub fn unsmoothed_method(&self) -> SaliencyMethod {
        match self {
            BaseMethod::SimpleGrad => SaliencyMethod::SimpleGrad,
            BaseMethod::IntegratedGrad { .. } => SaliencyMethod::IntegratedGrad,
        }
    }

    pub fn smoothed_method(&self) -> SaliencyMethod {
        match self {
            BaseMethod::SimpleGrad => SaliencyMethod::SmoothGrad,
            BaseMethod::IntegratedGrad { .. } => SaliencyMethod::SmoothedIntegratedGrad,
        }
    }

    fn values(&self, net: &Network, x: &[f64], y: usize) -> Result<Vec<f64>> {
        match self {
            BaseMethod::SimpleGrad => net.input_gradient(x, y),
            BaseMethod::IntegratedGrad { baseline, n_steps } => {
                let zero;
                let x0 = match baseline {
                    Some(b) => b.as_slice(),
                    None => {
                        zero = vec![0.0; x.len()];
                        &zero
                    }
                };
                integrated_values(net, x, y, x0, *n_steps)
            }
        }
    }

    /// Unsmoothed map at `x`.
    pub fn compute(&self, net: &Network, x: &[f64], y: usize) -> Result<SaliencyMap> {
        Ok(SaliencyMap {
            values: self.values(net, x, y)?,
            method: self.unsmoothed_method(),
            sigma: 0.0,
            n_samples: 1,
            input_id: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Absolute noise std.
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// When `Some(C)`, each perturbed input is projected onto the ℓ₂ ball of
    /// radius `C` before the base map is evaluated.
    pub normalize_input: Option<f64>,
    /// Consumed by callers comparing several networks: reuse one seed for all
    /// of them instead of deriving one per network.
    pub common_random_numbers: bool,
}

impl SmoothingConfig {
    pub fn new(sigma: f64, n_samples: usize, seed: u64) -> Self {
        Self {
            sigma,
            n_samples,
            seed,
            normalize_input: None,
            common_random_numbers: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "smoothing sigma must be positive and finite, got {}",
                self.sigma
            )));
        }
        if self.n_samples < 1 {
            return Err(Error::InvalidArgument("smoothing needs at least one sample".into()));
        }
        if let Some(c) = self.normalize_input {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("normalization radius must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// A smoothed map together with the per-component Monte-Carlo standard
/// error of its mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEstimate {
    pub map: SaliencyMap,
    pub std_error: Vec<f64>,
}

impl SmoothedEstimate {
    /// `sqrt(Σ_j se_j²)`: scale of the Monte-Carlo error in ℓ₂.
    pub fn std_error_norm(&self) -> f64 {
        norm2(&self.std_error)
    }
}

fn check_point(net: &Network, x: &[f64]) -> Result<()> {
    if x.len() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "saliency input",
            expected: net.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

pub fn simple_grad(net: &Network, x: &[f64], y: usize) -> Result<SaliencyMap> {
    BaseMethod::SimpleGrad.compute(net, x, y)
}

fn integrated_values(net: &Network, x: &[f64], y: usize, x0: &[f64], n_steps: usize) -> Result<Vec<f64>> {
    check_point(net, x)?;
    if x0.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "integrated-gradients baseline",
            expected: x.len(),
            got: x0.len(),
        });
    }
    if n_steps < 1 {
        return Err(Error::InvalidArgument("integrated gradients needs n_steps >= 1".into()));
    }
    let diff: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let mut acc = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for s in 0..n_steps {
        // midpoint node (s + 1/2) / n
        let alpha = (s as f64 + 0.5) / n_steps as f64;
        for ((p, &b), &d) in point.iter_mut().zip(x0).zip(&diff) {
            *p = b + alpha * d;
        }
        let g = net.input_gradient(&point, y)?;
        acc.iter_mut().zip(&g).for_each(|(a, gv)| *a += gv);
    }
    let inv = 1.0 / n_steps as f64;
    Ok(acc.iter().zip(&diff).map(|(a, d)| d * a * inv).collect())
}

/// `(x − x0) ⊙ (1/n) Σ_s ∇_x f(x0 + α_s (x − x0))_y` with midpoint nodes
/// `α_s = (s − 1/2)/n`.
pub fn integrated_grad(net: &Network, x: &[f64], y: usize, x0: &[f64], n_steps: usize) -> Result<SaliencyMap> {
    Ok(SaliencyMap {
        values: integrated_values(net, x, y, x0, n_steps)?,
        method: SaliencyMethod::IntegratedGrad,
        sigma: 0.0,
        n_samples: n_steps,
        input_id: 0,
    })
}

fn project_to_ball(v: &mut [f64], radius: f64) {
    let n = norm2(v);
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Monte-Carlo estimate of `E_z[base(x + z)]`, `z ~ N(0, σ² I)`.
pub fn smoothed_saliency_estimate(
    base: &BaseMethod,
    net: &Network,
    x: &[f64],
    y: usize,
    cfg: &SmoothingConfig,
) -> Result<SmoothedEstimate> {
    cfg.validate()?;
    check_point(net, x)?;
    let m = x.len();
    let mut r = rng::stream(cfg.seed, NOISE_STREAM);
    let mut mean = vec![0.0; m];
    let mut m2 = vec![0.0; m];
    let mut point = vec![0.0; m];
    for k in 1..=cfg.n_samples {
        for (p, &xv) in point.iter_mut().zip(x) {
            let e: f64 = StandardNormal.sample(&mut r);
            *p = xv + cfg.sigma * e;
        }
        if let Some(radius) = cfg.normalize_input {
            project_to_ball(&mut point, radius);
        }
        let v = base.values(net, &point, y)?;
        // Welford update
        for ((mu, q), val) in mean.iter_mut().zip(m2.iter_mut()).zip(&v) {
            let d = val - *mu;
            *mu += d / k as f64;
            *q += d * (val - *mu);
        }
    }
    let n = cfg.n_samples as f64;
    let std_error = if cfg.n_samples > 1 {
        m2.iter().map(|q| (q / (n - 1.0) / n).sqrt()).collect()
    } else {
        vec![0.0; m]
    };
    Ok(SmoothedEstimate {
        map: SaliencyMap {
            values: mean,
            method: base.smoothed_method(),
            sigma: cfg.sigma,
            n_samples: cfg.n_samples,
            input_id: 0,
        },
        std_error,
    })
}

pub fn smoothed_saliency(
    base: &BaseMethod,
    net: &Network,
    x: &[f64],
    y: usize,
    cfg: &SmoothingConfig,
) -> Result<SaliencyMap> {
    smoothed_saliency_estimate(base, net, x, y, cfg).map(|e| e.map)
}

/// Smooth-Grad: the Gaussian-smoothed Simple-Grad map.
pub fn smooth_grad(net: &Network, x: &[f64], y: usize, cfg: &SmoothingConfig) -> Result<SaliencyMap> {
    smoothed_saliency(&BaseMethod::SimpleGrad, net, x, y, cfg)
}
