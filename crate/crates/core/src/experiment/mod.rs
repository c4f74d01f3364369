//! Config-driven orchestration: split training, σ sweeps, bound
//! verification, bias-variance runs and report rendering.

mod config;
mod report;
pub mod verify;

pub use config::{
    DataSection, DatasetSpec, EvalSection, ExperimentConfig, MethodName, NetworkSection, OutputSection,
    SweepSection, VerifySection,
};
pub use report::{
    plot_points, read_rows, read_rows_csv, render_table, summary_table, write_rows_csv, BiasVarianceReport,
    BiasVarianceRow, ExperimentReport, PlotPoint, ProfileMode, ReportMetadata, ReportPayload, ReportRow, Seeds,
    TableRow, ROW_COLUMNS,
};

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    fidelity_bound, integratedgrad_stability_bound, simplegrad_stability_bound, smoothgrad_stability_bound,
    smoothness_bound, FidelityMethod, NormProfile, Regime, SgdTerms, SmoothnessVariant,
};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::{
    bias_variance_from_batches, default_k, fidelity_from_batches, saliency_generalization_gap, ssim_batch,
    stability_proxy, topk_miou_batch, MapBatch, MapRecipe, SsimConfig,
};
use crate::nn::Network;
use crate::rng::{stream, streams};
use crate::training::{fisher_yates, init_network, split_indices, train, InitScheme, SgdVariant, TrainLog};

/// Loaded dataset with its disjoint training splits and evaluation set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: LabeledDataset,
    pub split_indices: Vec<Vec<usize>>,
    pub eval_indices: Vec<usize>,
    pub eval: LabeledDataset,
}

impl Prepared {
    pub fn split(&self, j: usize) -> Result<LabeledDataset> {
        self.data.subset(&self.split_indices[j])
    }
}

/// Splits the data and draws the evaluation set from the rows no split
/// uses (or from all rows when every row is taken).
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let data = cfg.load_dataset()?;
    let splits = split_indices(data.len(), &cfg.split)?;
    let mut used = vec![false; data.len()];
    splits.iter().flatten().for_each(|&i| used[i] = true);
    let mut pool: Vec<usize> = (0..data.len()).filter(|&i| !used[i]).collect();
    if pool.is_empty() {
        pool = (0..data.len()).collect();
    }
    let mut r = stream(cfg.eval.seed, streams::EVAL_SET);
    fisher_yates(&mut pool, &mut r);
    pool.truncate(cfg.eval.size);
    pool.sort_unstable();
    let eval = data.subset(&pool)?;
    Ok(Prepared {
        data,
        split_indices: splits,
        eval_indices: pool,
        eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub split: usize,
    pub indices: Vec<usize>,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
}

pub struct TrainedSplit {
    pub network: Network,
    pub log: TrainLog,
    pub summary: SplitSummary,
}

fn accuracy(net: &Network, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits = (0..data.len())
        .map(|i| net.predict(data.row(i)).map(|p| (p == data.label(i)) as usize))
        .sum::<Result<usize>>()?;
    Ok(hits as f64 / data.len() as f64)
}

/// Trains one network per split, concurrently.
pub fn train_splits(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<TrainedSplit>> {
    let dims = cfg.dims(&prep.data);
    (0..prep.split_indices.len())
        .into_par_iter()
        .map(|j| {
            let data = prep.split(j)?;
            let init = init_network(&dims, cfg.network.activation, cfg.split_init_seed(j), InitScheme::UniformScaled)?;
            let out = train(&init, &data, &cfg.split_train_config(j))?;
            let window = (cfg.train.iterations as usize / 20).max(1);
            let final_loss = out.log.windowed_loss(window).last().copied().unwrap_or(f64::NAN);
            let summary = SplitSummary {
                split: j,
                indices: prep.split_indices[j].clone(),
                final_loss,
                train_accuracy: accuracy(&out.network, &data)?,
                eval_accuracy: accuracy(&out.network, &prep.eval)?,
            };
            Ok(TrainedSplit {
                network: out.network,
                log: out.log,
                summary,
            })
        })
        .collect()
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for it in items {
        w.serialize(it)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn model_path(out: &Path, j: usize) -> PathBuf {
    out.join("models").join(format!("model-{j}.json"))
}

/// `train-splits`: writes `models/model-{j}.json`, `models/log-{j}.json`
/// and `splits/split-{j}.json` under `out`.
pub fn cmd_train_splits(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SplitSummary>> {
    let prep = prepare(cfg)?;
    let trained = train_splits(cfg, &prep)?;
    ensure_dir(&out.join("models"))?;
    ensure_dir(&out.join("splits"))?;
    for t in &trained {
        let j = t.summary.split;
        t.network.save(&model_path(out, j))?;
        write_json(&out.join("models").join(format!("log-{j}.json")), &t.log)?;
        write_json(&out.join("splits").join(format!("split-{j}.json")), &t.summary)?;
    }
    Ok(trained.into_iter().map(|t| t.summary).collect())
}

pub fn load_models(out: &Path, count: usize) -> Result<Vec<Network>> {
    (0..count).map(|j| Network::load(&model_path(out, j))).collect()
}

fn check_models(models: &[Network], data: &LabeledDataset, needed: usize) -> Result<()> {
    if models.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            available: models.len(),
        });
    }
    for m in models {
        if m.input_dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                context: "model input vs dataset",
                expected: data.dim(),
                got: m.input_dim(),
            });
        }
        if m.num_classes() != data.num_classes() {
            return Err(Error::DimensionMismatch {
                context: "model classes vs dataset",
                expected: data.num_classes(),
                got: m.num_classes(),
            });
        }
    }
    Ok(())
}

/// Profile covering every model: projection caps when enforced, otherwise
/// the per-layer maximum of measured spectral norms.
pub fn bound_profile(cfg: &ExperimentConfig, models: &[Network], c: f64) -> Result<(NormProfile, ProfileMode)> {
    let activation = models[0].activation();
    match (&cfg.train.project_caps, cfg.project) {
        (Some(caps), true) => Ok((
            NormProfile::new(caps.clone(), c, models[0].input_dim())?.with_activation(activation),
            ProfileMode::ProjectionCaps,
        )),
        _ => {
            let profiles = models
                .iter()
                .map(|m| NormProfile::from_network(m, c))
                .collect::<Result<Vec<_>>>()?;
            Ok((NormProfile::envelope(&profiles)?, ProfileMode::MeasuredPostTraining))
        }
    }
}

fn smoothness_variant(cfg: &ExperimentConfig) -> SmoothnessVariant {
    match cfg.train.variant {
        SgdVariant::Noisy => SmoothnessVariant::NoisySgd { kappa: cfg.train.kappa },
        SgdVariant::Vanilla => SmoothnessVariant::VanillaSmoothActivation,
    }
}

/// Stability and fidelity bounds matching a report row, when the bound
/// hypotheses are met and a closed form exists.
fn row_bounds(
    profile: &NormProfile,
    terms: Option<SgdTerms>,
    method: MethodName,
    sigma: f64,
) -> (Option<f64>, Option<f64>) {
    let stab = terms.and_then(|t| {
        match (method, sigma > 0.0) {
            (MethodName::SimpleGrad, false) => simplegrad_stability_bound(profile, t),
            (MethodName::SimpleGrad, true) => smoothgrad_stability_bound(profile, t, sigma),
            (MethodName::IntegratedGrad, false) => integratedgrad_stability_bound(profile, t, Regime::NonConvex),
            (MethodName::IntegratedGrad, true) => return None,
        }
        .ok()
    });
    let fm = match method {
        MethodName::SimpleGrad => FidelityMethod::SimpleGrad,
        MethodName::IntegratedGrad => FidelityMethod::IntegratedGrad,
    };
    (stab, fidelity_bound(profile, sigma, fm).ok())
}

/// Sweep over `(method, σ)` for the first two models, on the shared
/// evaluation set. Both models use the same noise draws at each point.
pub fn sweep_sigma(cfg: &ExperimentConfig, prep: &Prepared, models: &[Network]) -> Result<ReportPayload> {
    check_models(models, &prep.data, 2)?;
    let (a, b) = (&models[0], &models[1]);
    let range = prep.data.value_range();
    let c = prep.data.c_cap();
    let (profile, profile_mode) = bound_profile(cfg, &models[..2], c)?;
    let terms = smoothness_bound(&profile, smoothness_variant(cfg)).ok().map(|beta| SgdTerms {
        n: cfg.split.split_size,
        t: cfg.train.iterations,
        c: cfg.train.step_constant,
        beta,
    });
    let m = prep.data.dim();
    let k = cfg.sweep.topk.unwrap_or_else(|| default_k(m));
    let grid = prep.eval.grid().filter(|&(h, w)| cfg.sweep.ssim && h >= 11 && w >= 11);
    let ssim_cfg = SsimConfig::default();
    let agreement = |x: &MapBatch, y: &MapBatch| -> Result<(Option<f64>, Option<f64>)> {
        let s = match grid {
            Some(_) => Some(ssim_batch(x, y, &ssim_cfg)?),
            None => None,
        };
        let t = if cfg.sweep.topk_miou { Some(topk_miou_batch(x, y, k)?) } else { None };
        Ok((s, t))
    };
    let mut rows = Vec::new();
    for &method in &cfg.sweep.methods {
        let base = method.base(cfg.sweep.ig_steps);
        let plain = MapRecipe::unsmoothed(base.clone());
        let base_a = plain.batch(a, &prep.eval, 0, "model-0")?;
        let base_b = plain.batch(b, &prep.eval, 0, "model-1")?;
        let (ssim0, miou0) = agreement(&base_a, &base_b)?;
        for &ratio in &cfg.sweep.sigma_ratios {
            let sigma = ratio * range;
            let recipe = MapRecipe {
                base: base.clone(),
                sigma,
                n_samples: cfg.sweep.n_samples,
                seed: cfg.sweep.noise_seed,
                normalize_input: cfg.sweep.normalize_input.then_some(c),
            };
            let (sa, sb) = if sigma > 0.0 {
                (recipe.batch(a, &prep.eval, 0, "model-0")?, recipe.batch(b, &prep.eval, 0, "model-1")?)
            } else {
                (base_a.clone(), base_b.clone())
            };
            let stab = stability_proxy(&sa, &sb)?;
            let fa = fidelity_from_batches(&sa, &base_a)?;
            let fb = fidelity_from_batches(&sb, &base_b)?;
            let (ssim_s, miou_s) = agreement(&sa, &sb)?;
            let (stability_bound, fidelity_bound) = row_bounds(&profile, terms, method, sigma);
            rows.push(ReportRow {
                method: method.as_str().into(),
                sigma_ratio: ratio,
                sigma,
                stability: stab.value,
                stability_se: stab.std_error,
                stability_mc_se: stab.mc_error,
                fidelity: 0.5 * (fa.value + fb.value),
                fidelity_se: 0.5 * fa.std_error.hypot(fb.std_error),
                fidelity_mc_se: 0.5 * (fa.mc_error + fb.mc_error),
                ssim: ssim0,
                smoothed_ssim: ssim_s,
                topk_miou: miou0,
                smoothed_topk_miou: miou_s,
                stability_bound,
                fidelity_bound,
            });
        }
    }
    Ok(ReportPayload {
        config_hash: cfg.hash()?,
        seeds: Seeds {
            split: cfg.split.seed,
            train: cfg.train.seed,
            init: cfg.network.init_seed,
            eval: cfg.eval.seed,
            noise: cfg.sweep.noise_seed,
        },
        profile_mode,
        profile,
        eval_size: prep.eval.len(),
        topk: k,
        rows,
    })
}

fn metadata(start: Instant) -> ReportMetadata {
    ReportMetadata {
        wall_time_secs: start.elapsed().as_secs_f64(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    }
}

/// `sweep-sigma`: reads the first two models under `out/models` and writes
/// `report.json` and `report.csv`.
pub fn cmd_sweep_sigma(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    let start = Instant::now();
    let prep = prepare(cfg)?;
    let models = load_models(out, 2)?;
    let payload = sweep_sigma(cfg, &prep, &models)?;
    let report = ExperimentReport {
        payload,
        metadata: metadata(start),
    };
    ensure_dir(out)?;
    report.write_json(&out.join("report.json"))?;
    report.write_csv(&out.join("report.csv"))?;
    Ok(report)
}

/// `verify-bounds`: runs every property suite and writes `verify.json`.
pub fn cmd_verify_bounds(cfg: &ExperimentConfig, out: &Path) -> Result<verify::VerifyReport> {
    let rep = verify::run_all(cfg.verify.seed, cfg.verify.trials)?;
    ensure_dir(out)?;
    write_json(&out.join("verify.json"), &rep)?;
    Ok(rep)
}

/// Largest number of training points per split used for the
/// generalization-gap estimate.
const GAP_POINTS: usize = 64;

pub fn bias_variance_sweep(cfg: &ExperimentConfig, prep: &Prepared, models: &[Network]) -> Result<BiasVarianceReport> {
    check_models(models, &prep.data, 2)?;
    let range = prep.data.value_range();
    let c = prep.data.c_cap();
    let train_sets: Vec<LabeledDataset> = (0..models.len())
        .map(|j| {
            let ix = &prep.split_indices[j];
            prep.data.subset(&ix[..ix.len().min(GAP_POINTS)])
        })
        .collect::<Result<_>>()?;
    let gap_eval = prep.eval.subset(&(0..prep.eval.len().min(GAP_POINTS)).collect::<Vec<_>>())?;
    let mut rows = Vec::new();
    for &method in &cfg.sweep.methods {
        let base = method.base(cfg.sweep.ig_steps);
        let plain = MapRecipe::unsmoothed(base.clone());
        let unsmoothed: Vec<MapBatch> = models
            .iter()
            .map(|n| plain.batch(n, &prep.eval, 0, ""))
            .collect::<Result<_>>()?;
        for &ratio in &cfg.sweep.sigma_ratios {
            let sigma = ratio * range;
            let recipe = MapRecipe {
                base: base.clone(),
                sigma,
                n_samples: cfg.sweep.n_samples,
                seed: cfg.sweep.noise_seed,
                normalize_input: cfg.sweep.normalize_input.then_some(c),
            };
            let smoothed: Vec<MapBatch> = if sigma > 0.0 {
                models
                    .iter()
                    .map(|n| recipe.batch(n, &prep.eval, 0, ""))
                    .collect::<Result<_>>()?
            } else {
                unsmoothed.clone()
            };
            let bv = bias_variance_from_batches(&smoothed, &unsmoothed)?;
            let gap = if cfg.sweep.generalization_gap {
                Some(saliency_generalization_gap(models, &train_sets, &gap_eval, &recipe)?)
            } else {
                None
            };
            rows.push(BiasVarianceRow {
                method: method.as_str().into(),
                sigma_ratio: ratio,
                sigma,
                avg_fidelity: bv.avg_fidelity,
                avg_variance: bv.avg_variance,
                generalization_gap: gap,
            });
        }
    }
    Ok(BiasVarianceReport {
        config_hash: cfg.hash()?,
        n_models: models.len(),
        rows,
    })
}

/// `bias-variance`: reads every split's model and writes
/// `bias_variance.json` and `bias_variance.csv`.
pub fn cmd_bias_variance(cfg: &ExperimentConfig, out: &Path) -> Result<BiasVarianceReport> {
    let prep = prepare(cfg)?;
    let models = load_models(out, cfg.split.n_splits)?;
    let rep = bias_variance_sweep(cfg, &prep, &models)?;
    write_json(&out.join("bias_variance.json"), &rep)?;
    write_csv(&out.join("bias_variance.csv"), &rep.rows)?;
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rendered {
    pub plot: Vec<PlotPoint>,
    pub table: Vec<TableRow>,
}

/// `report`: renders plot series and the summary table from a report (JSON
/// or CSV) into `out` as `plot_data.csv` + `table.csv`, or `rendered.json`.
pub fn cmd_report(report_path: &Path, format: RenderFormat, table_ratio: f64, out: &Path) -> Result<Rendered> {
    let rows = read_rows(report_path)?;
    let rendered = Rendered {
        plot: plot_points(&rows),
        table: summary_table(&rows, table_ratio),
    };
    ensure_dir(out)?;
    match format {
        RenderFormat::Json => write_json(&out.join("rendered.json"), &rendered)?,
        RenderFormat::Csv => {
            write_csv(&out.join("plot_data.csv"), &rendered.plot)?;
            write_csv(&out.join("table.csv"), &rendered.table)?;
        }
    }
    Ok(rendered)
}
