//! Empirical stability and fidelity proxies, SSIM, top-k mIoU, the
//! bias-variance decomposition and the saliency generalization-gap estimate.
//!
//! Batch computations run in parallel over evaluation samples; per-sample
//! values are collected in order and reduced by pairwise summation, so every
//! result is independent of the thread count.

mod ssim;
mod topk;

pub use ssim::{abs_minmax, ssim, ssim_grid, SsimConfig};
pub use topk::{default_k, topk_indices, topk_miou};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::derive_seed;
use crate::saliency::{smoothed_saliency_estimate, BaseMethod, SaliencyMap, SmoothingConfig};

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        pairwise_sum(v) / v.len() as f64
    }
}

/// Standard error of the mean of `v`.
fn sem(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(v);
    let sq: Vec<f64> = v.iter().map(|x| (x - mu) * (x - mu)).collect();
    (pairwise_sum(&sq) / (n as f64 - 1.0) / n as f64).sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Maps produced by one model over a fixed evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBatch {
    pub maps: Vec<SaliencyMap>,
    /// Per-map ℓ₂ norm of the Monte-Carlo standard error; zero for
    /// deterministic maps.
    pub mc_error: Vec<f64>,
    pub grid: Option<(usize, usize)>,
    pub producing_model: String,
}

impl MapBatch {
    pub fn new(maps: Vec<SaliencyMap>, grid: Option<(usize, usize)>, producing_model: impl Into<String>) -> Result<Self> {
        let mc_error = vec![0.0; maps.len()];
        Self::with_errors(maps, mc_error, grid, producing_model)
    }

    pub fn with_errors(
        maps: Vec<SaliencyMap>,
        mc_error: Vec<f64>,
        grid: Option<(usize, usize)>,
        producing_model: impl Into<String>,
    ) -> Result<Self> {
        let m = maps.first().map_or(0, SaliencyMap::len);
        if let Some(bad) = maps.iter().find(|s| s.len() != m) {
            return Err(Error::DimensionMismatch {
                context: "map batch",
                expected: m,
                got: bad.len(),
            });
        }
        if mc_error.len() != maps.len() {
            return Err(Error::DimensionMismatch {
                context: "map batch errors",
                expected: maps.len(),
                got: mc_error.len(),
            });
        }
        if let Some((h, w)) = grid {
            if !maps.is_empty() && h * w != m {
                return Err(Error::DimensionMismatch {
                    context: "map batch grid",
                    expected: m,
                    got: h * w,
                });
            }
        }
        Ok(Self {
            maps,
            mc_error,
            grid,
            producing_model: producing_model.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn map_len(&self) -> usize {
        self.maps.first().map_or(0, SaliencyMap::len)
    }

    fn check_aligned(&self, other: &MapBatch) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch {
                context: "aligned batches",
                expected: self.len(),
                got: other.len(),
            });
        }
        if self.map_len() != other.map_len() {
            return Err(Error::DimensionMismatch {
                context: "aligned map length",
                expected: self.map_len(),
                got: other.map_len(),
            });
        }
        if let Some(i) = (0..self.len()).find(|&i| self.maps[i].input_id != other.maps[i].input_id) {
            return Err(Error::InvalidArgument(format!(
                "batches disagree on the input at position {i}: {} vs {}",
                self.maps[i].input_id, other.maps[i].input_id
            )));
        }
        Ok(())
    }
}

/// A scalar proxy averaged over evaluation samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyEstimate {
    pub value: f64,
    /// Standard error over evaluation samples.
    pub std_error: f64,
    /// Mean ℓ₂ Monte-Carlo error of the underlying smoothed maps.
    pub mc_error: f64,
}

impl ProxyEstimate {
    fn from_parts(values: &[f64], mc: &[f64]) -> Self {
        Self {
            value: mean(values),
            std_error: sem(values),
            mc_error: mean(mc),
        }
    }
}

/// How to turn `(net, x, y)` into a map: an unsmoothed base method when
/// `sigma == 0`, its Gaussian-smoothed version otherwise. Sample `i` of an
/// evaluation set draws its noise from `derive_seed(seed, input_id)`, so two
/// networks evaluated with the same recipe share every noise draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRecipe {
    pub base: BaseMethod,
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub normalize_input: Option<f64>,
}

impl MapRecipe {
    pub fn unsmoothed(base: BaseMethod) -> Self {
        Self {
            base,
            sigma: 0.0,
            n_samples: 1,
            seed: 0,
            normalize_input: None,
        }
    }

    pub fn smoothing(&self, input_id: u64) -> SmoothingConfig {
        SmoothingConfig {
            sigma: self.sigma,
            n_samples: self.n_samples,
            seed: derive_seed(self.seed, input_id),
            normalize_input: self.normalize_input,
            common_random_numbers: true,
        }
    }

    /// The map and the ℓ₂ norm of its Monte-Carlo standard error.
    pub fn map(&self, net: &Network, x: &[f64], y: usize, input_id: u64) -> Result<(SaliencyMap, f64)> {
        if self.sigma < 0.0 {
            return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if self.sigma == 0.0 {
            return Ok((self.base.compute(net, x, y)?.with_input_id(input_id), 0.0));
        }
        let est = smoothed_saliency_estimate(&self.base, net, x, y, &self.smoothing(input_id))?;
        let se = est.std_error_norm();
        Ok((est.map.with_input_id(input_id), se))
    }

    /// Maps for every row of `data`, targeting each row's label. Row `i`
    /// gets input id `id_offset + i`.
    pub fn batch(&self, net: &Network, data: &LabeledDataset, id_offset: u64, model: &str) -> Result<MapBatch> {
        let out: Vec<(SaliencyMap, f64)> = (0..data.len())
            .into_par_iter()
            .map(|i| self.map(net, data.row(i), data.label(i), id_offset + i as u64))
            .collect::<Result<_>>()?;
        let (maps, errs) = out.into_iter().unzip();
        MapBatch::with_errors(maps, errs, data.grid(), model)
    }
}

/// Mean over samples of `‖a_i − b_i‖₂`.
pub fn stability_proxy(a: &MapBatch, b: &MapBatch) -> Result<ProxyEstimate> {
    a.check_aligned(b)?;
    let d: Vec<f64> = a.maps.iter().zip(&b.maps).map(|(p, q)| dist(&p.values, &q.values)).collect();
    let mc: Vec<f64> = a.mc_error.iter().zip(&b.mc_error).map(|(p, q)| p.hypot(*q)).collect();
    Ok(ProxyEstimate::from_parts(&d, &mc))
}

/// Mean over evaluation samples of `‖smoothed − base‖₂`; exactly 0 at
/// `σ = 0`.
pub fn fidelity_proxy(net: &Network, recipe: &MapRecipe, eval: &LabeledDataset) -> Result<ProxyEstimate> {
    if recipe.sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {}", recipe.sigma)));
    }
    if recipe.sigma == 0.0 {
        return Ok(ProxyEstimate {
            value: 0.0,
            std_error: 0.0,
            mc_error: 0.0,
        });
    }
    let smoothed = recipe.batch(net, eval, 0, "")?;
    let base = MapRecipe::unsmoothed(recipe.base.clone()).batch(net, eval, 0, "")?;
    fidelity_from_batches(&smoothed, &base)
}

/// Fidelity proxy from precomputed aligned batches.
pub fn fidelity_from_batches(smoothed: &MapBatch, base: &MapBatch) -> Result<ProxyEstimate> {
    let mut est = stability_proxy(smoothed, base)?;
    est.mc_error = mean(&smoothed.mc_error);
    Ok(est)
}

/// Mean SSIM over aligned, gridded batches.
pub fn ssim_batch(a: &MapBatch, b: &MapBatch, cfg: &SsimConfig) -> Result<f64> {
    a.check_aligned(b)?;
    let grid = a
        .grid
        .or(b.grid)
        .ok_or_else(|| Error::InvalidArgument("SSIM needs batches with a grid".into()))?;
    let v: Vec<f64> = a
        .maps
        .par_iter()
        .zip(&b.maps)
        .map(|(p, q)| ssim(&p.values, &q.values, grid, cfg))
        .collect::<Result<_>>()?;
    Ok(mean(&v))
}

/// Mean top-`k` IoU over aligned batches.
pub fn topk_miou_batch(a: &MapBatch, b: &MapBatch, k: usize) -> Result<f64> {
    a.check_aligned(b)?;
    let v: Vec<f64> = a
        .maps
        .iter()
        .zip(&b.maps)
        .map(|(p, q)| topk_miou(&p.values, &q.values, k))
        .collect::<Result<_>>()?;
    Ok(mean(&v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasVariance {
    /// Mean over models and samples of `‖smoothed − unsmoothed‖`.
    pub avg_fidelity: f64,
    /// Mean over models and samples of `‖smoothed − ensemble mean‖²`.
    pub avg_variance: f64,
}

/// Bias-variance split from per-model smoothed and unsmoothed batches over
/// one evaluation set.
pub fn bias_variance_from_batches(smoothed: &[MapBatch], unsmoothed: &[MapBatch]) -> Result<BiasVariance> {
    if smoothed.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: smoothed.len(),
        });
    }
    if unsmoothed.len() != smoothed.len() {
        return Err(Error::DimensionMismatch {
            context: "bias-variance model count",
            expected: smoothed.len(),
            got: unsmoothed.len(),
        });
    }
    for (s, u) in smoothed.iter().zip(unsmoothed) {
        smoothed[0].check_aligned(s)?;
        s.check_aligned(u)?;
    }
    let n_models = smoothed.len() as f64;
    let per_sample: Vec<(f64, f64)> = (0..smoothed[0].len())
        .map(|i| {
            let m = smoothed[0].map_len();
            let mut center = vec![0.0; m];
            for b in smoothed {
                center.iter_mut().zip(&b.maps[i].values).for_each(|(c, v)| *c += v);
            }
            center.iter_mut().for_each(|c| *c /= n_models);
            let fid: Vec<f64> = smoothed
                .iter()
                .zip(unsmoothed)
                .map(|(s, u)| dist(&s.maps[i].values, &u.maps[i].values))
                .collect();
            let var: Vec<f64> = smoothed.iter().map(|s| dist(&s.maps[i].values, &center).powi(2)).collect();
            (mean(&fid), mean(&var))
        })
        .collect();
    let (fid, var): (Vec<f64>, Vec<f64>) = per_sample.into_iter().unzip();
    Ok(BiasVariance {
        avg_fidelity: mean(&fid),
        avg_variance: mean(&var),
    })
}

pub fn bias_variance(models: &[Network], recipe: &MapRecipe, eval: &LabeledDataset) -> Result<BiasVariance> {
    if models.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: models.len(),
        });
    }
    let base = MapRecipe::unsmoothed(recipe.base.clone());
    let mut smoothed = Vec::with_capacity(models.len());
    let mut unsmoothed = Vec::with_capacity(models.len());
    for (j, net) in models.iter().enumerate() {
        let name = format!("model-{j}");
        smoothed.push(recipe.batch(net, eval, 0, &name)?);
        unsmoothed.push(base.batch(net, eval, 0, &name)?);
    }
    bias_variance_from_batches(&smoothed, &unsmoothed)
}

/// Mean over `points` of the distance from each model's map to the ensemble
/// mean map, one value per model.
fn ensemble_spread(models: &[Network], recipe: &MapRecipe, points: &LabeledDataset, id_offset: u64) -> Result<Vec<f64>> {
    let batches: Vec<MapBatch> = models
        .iter()
        .map(|net| recipe.batch(net, points, id_offset, ""))
        .collect::<Result<_>>()?;
    let n_models = models.len() as f64;
    let m = points.dim();
    let mut per_model: Vec<Vec<f64>> = vec![Vec::with_capacity(points.len()); models.len()];
    for i in 0..points.len() {
        let mut center = vec![0.0; m];
        for b in &batches {
            center.iter_mut().zip(&b.maps[i].values).for_each(|(c, v)| *c += v);
        }
        center.iter_mut().for_each(|c| *c /= n_models);
        for (j, b) in batches.iter().enumerate() {
            per_model[j].push(dist(&b.maps[i].values, &center));
        }
    }
    Ok(per_model.iter().map(|v| mean(v)).collect())
}

/// Finite-ensemble estimate of the saliency generalization gap: for each
/// model, mean distance to the ensemble-mean map over `eval` minus the same
/// over the model's own training set, averaged over models. The ensemble
/// mean stands in for the expectation over training sets.
pub fn saliency_generalization_gap(
    models: &[Network],
    train_sets: &[LabeledDataset],
    eval: &LabeledDataset,
    recipe: &MapRecipe,
) -> Result<f64> {
    if models.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            available: models.len(),
        });
    }
    if train_sets.len() != models.len() {
        return Err(Error::DimensionMismatch {
            context: "training sets per model",
            expected: models.len(),
            got: train_sets.len(),
        });
    }
    if eval.is_empty() || train_sets.iter().any(LabeledDataset::is_empty) {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let held_out = ensemble_spread(models, recipe, eval, 0)?;
    let gaps: Vec<f64> = train_sets
        .iter()
        .enumerate()
        .map(|(j, ts)| {
            // Training points get ids disjoint from the evaluation set's.
            let offset = (j as u64 + 1) << 40;
            ensemble_spread(models, recipe, ts, offset).map(|own| held_out[j] - own[j])
        })
        .collect::<Result<_>>()?;
    Ok(mean(&gaps))
}
