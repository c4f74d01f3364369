//! Single-sample SGD with the `α_t = c / t` schedule, its parameter-noise
//! variant, seeded dataset splitting and weight initialization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{project_spectral, Activation, FlatParams, Matrix, Network};
use crate::rng::{self, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SgdVariant {
    #[default]
    Vanilla,
    /// Descends the Gaussian-smoothed loss `E_V[ℓ(W + V)]`, `V ~ N(0, κ² I)`.
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    UniformWithReplacement,
    RandomPermutationEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub variant: SgdVariant,
    /// `c` in `α_t = c / t`.
    pub step_constant: f64,
    /// `T`, the number of single-sample updates.
    pub iterations: u64,
    /// Parameter-noise std; only read by [`SgdVariant::Noisy`].
    #[serde(default)]
    pub kappa: f64,
    /// Monte-Carlo draws per noisy-gradient estimate.
    #[serde(default = "default_noise_mc")]
    pub noise_mc: usize,
    pub seed: u64,
    #[serde(default)]
    pub sampling: Sampling,
    /// Per-layer spectral caps enforced after every update (projected SGD).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project_caps: Option<Vec<f64>>,
}

fn default_noise_mc() -> usize {
    1
}

impl TrainConfig {
    pub fn vanilla(step_constant: f64, iterations: u64, seed: u64) -> Self {
        Self {
            variant: SgdVariant::Vanilla,
            step_constant,
            iterations,
            kappa: 0.0,
            noise_mc: 1,
            seed,
            sampling: Sampling::UniformWithReplacement,
            project_caps: None,
        }
    }

    pub fn noisy(step_constant: f64, iterations: u64, kappa: f64, noise_mc: usize, seed: u64) -> Self {
        Self {
            variant: SgdVariant::Noisy,
            kappa,
            noise_mc,
            ..Self::vanilla(step_constant, iterations, seed)
        }
    }

    /// `c = 0` is accepted; it leaves the weights untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.step_constant >= 0.0) || !self.step_constant.is_finite() {
            return Err(Error::config("train.step_constant", "must be a finite non-negative number"));
        }
        if self.iterations < 1 {
            return Err(Error::config("train.iterations", "must be at least 1"));
        }
        if self.variant == SgdVariant::Noisy {
            if !(self.kappa > 0.0) {
                return Err(Error::config("train.kappa", "must be positive for noisy SGD"));
            }
            if self.noise_mc < 1 {
                return Err(Error::config("train.noise_mc", "must be at least 1"));
            }
        }
        if let Some(caps) = &self.project_caps {
            if caps.iter().any(|&b| !(b > 0.0)) {
                return Err(Error::config("train.project_caps", "caps must be positive"));
            }
        }
        Ok(())
    }

    pub fn step_size(&self, t: u64) -> f64 {
        self.step_constant / t as f64
    }
}

/// Record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `α_t` for `t = 1..=T`.
    pub step_sizes: Vec<f64>,
    /// Training index used at each step.
    pub sampled: Vec<usize>,
    /// Per-sample loss at the current weights before each update.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Mean loss over consecutive windows of `window` steps.
    pub fn windowed_loss(&self, window: usize) -> Vec<f64> {
        self.losses
            .chunks(window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: TrainLog,
}

/// Yields training indices according to a [`Sampling`] policy.
struct IndexSampler {
    rng: ChaCha8Rng,
    sampling: Sampling,
    n: usize,
    perm: Vec<usize>,
    cursor: usize,
}

impl IndexSampler {
    fn new(seed: u64, sampling: Sampling, n: usize) -> Self {
        Self {
            rng: rng::stream(seed, streams::SAMPLING),
            sampling,
            n,
            perm: (0..n).collect(),
            cursor: n,
        }
    }

    fn next(&mut self) -> usize {
        match self.sampling {
            Sampling::UniformWithReplacement => self.rng.random_range(0..self.n),
            Sampling::RandomPermutationEpochs => {
                if self.cursor == self.n {
                    fisher_yates(&mut self.perm, &mut self.rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.perm[self.cursor - 1]
            }
        }
    }
}

/// In-place Fisher-Yates shuffle (Durstenfeld variant, from the back).
pub fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn check_compat(init: &Network, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
        });
    }
    if init.input_dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            context: "network input vs dataset",
            expected: data.dim(),
            got: init.input_dim(),
        });
    }
    if init.num_classes() < data.num_classes() {
        return Err(Error::DimensionMismatch {
            context: "network classes vs dataset",
            expected: data.num_classes(),
            got: init.num_classes(),
        });
    }
    Ok(())
}

/// Monte-Carlo estimate of `∇_W E_V[ℓ(W + V, x, y)]` with `noise_mc` draws
/// `V ~ N(0, κ² I)` taken from `rng`. Returns the averaged loss alongside.
pub fn noisy_gradient(
    net: &Network,
    x: &[f64],
    y: usize,
    kappa: f64,
    noise_mc: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, FlatParams)> {
    let base = net.flatten();
    let mut acc = FlatParams::zeros(base.len());
    let mut loss = 0.0;
    for _ in 0..noise_mc {
        let mut perturbed = base.clone();
        for w in perturbed.0.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w += kappa * z;
        }
        let (l, g) = net.with_params(&perturbed)?.loss_and_param_gradient(x, y)?;
        acc.axpy(1.0, &g);
        loss += l;
    }
    let inv = 1.0 / noise_mc as f64;
    acc.0.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, acc))
}

/// Runs `cfg.iterations` updates `W ← W − (c/t) ĝ_t` where `ĝ_t` is the
/// per-sample cross-entropy gradient (vanilla) or its parameter-noise
/// smoothed estimate (noisy). Output is a pure function of the arguments.
pub fn train(init: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_compat(init, data)?;
    if let Some(caps) = &cfg.project_caps {
        if caps.len() != init.depth() {
            return Err(Error::config(
                "train.project_caps",
                format!("expected {} caps, got {}", init.depth(), caps.len()),
            ));
        }
    }

    let mut sampler = IndexSampler::new(cfg.seed, cfg.sampling, data.len());
    let mut noise_rng = rng::stream(cfg.seed, streams::PARAM_NOISE);
    let mut net = init.clone();
    let mut params = net.flatten();
    let t_max = cfg.iterations as usize;
    let mut log = TrainLog {
        step_sizes: Vec::with_capacity(t_max),
        sampled: Vec::with_capacity(t_max),
        losses: Vec::with_capacity(t_max),
    };

    for t in 1..=cfg.iterations {
        let i = sampler.next();
        let (x, y) = (data.row(i), data.label(i));
        let (loss, grad) = match cfg.variant {
            SgdVariant::Vanilla => net.loss_and_param_gradient(x, y)?,
            SgdVariant::Noisy => noisy_gradient(&net, x, y, cfg.kappa, cfg.noise_mc, &mut noise_rng)?,
        };
        let alpha = cfg.step_size(t);
        params.axpy(-alpha, &grad);
        net = net.with_params(&params)?;
        if let Some(caps) = &cfg.project_caps {
            net = project_spectral(&net, caps)?;
            params = net.flatten();
        }
        log.step_sizes.push(alpha);
        log.sampled.push(i);
        log.losses.push(loss);
    }
    Ok(TrainOutcome { network: net, log })
}

pub fn sgd_train(init: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.variant != SgdVariant::Vanilla {
        return Err(Error::config("train.variant", "sgd_train expects the vanilla variant"));
    }
    train(init, data, cfg)
}

pub fn noisy_sgd_train(init: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.variant != SgdVariant::Noisy {
        return Err(Error::config("train.variant", "noisy_sgd_train expects the noisy variant"));
    }
    train(init, data, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub n_splits: usize,
    pub seed: u64,
    pub split_size: usize,
}

impl SplitPlan {
    pub fn validate(&self, available: usize) -> Result<()> {
        if self.n_splits == 0 || self.split_size == 0 {
            return Err(Error::config("split", "n_splits and split_size must be positive"));
        }
        let needed = self.n_splits * self.split_size;
        if needed > available {
            return Err(Error::InsufficientData { needed, available });
        }
        Ok(())
    }
}

/// Shuffles `0..n` with the plan's seed and cuts consecutive chunks of
/// `split_size`. Chunks are pairwise disjoint.
pub fn split_indices(n: usize, plan: &SplitPlan) -> Result<Vec<Vec<usize>>> {
    plan.validate(n)?;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(plan.seed, streams::SPLIT);
    fisher_yates(&mut idx, &mut r);
    Ok(idx
        .chunks_exact(plan.split_size)
        .take(plan.n_splits)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn split_dataset(data: &LabeledDataset, plan: &SplitPlan) -> Result<Vec<LabeledDataset>> {
    split_indices(data.len(), plan)?
        .iter()
        .map(|ix| data.subset(ix))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on `[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`.
    #[default]
    UniformScaled,
}

pub fn init_network(dims: &[usize], activation: Activation, seed: u64, scheme: InitScheme) -> Result<Network> {
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least input and output dims, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("zero-width layer in {dims:?}")));
    }
    let mut r = rng::stream(seed, streams::INIT);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = match scheme {
                InitScheme::UniformScaled => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let data = (0..fan_in * fan_out).map(|_| r.random_range(-a..=a)).collect();
            Matrix::new(fan_out, fan_in, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers, activation)
}
