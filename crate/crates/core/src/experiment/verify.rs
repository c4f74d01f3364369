//! Seeded property suites checking the norm, Gaussian, Stein, fidelity and
//! noisy-loss inequalities the bounds are built from.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{fidelity_bound, FidelityMethod, NormProfile};
use crate::error::Result;
use crate::nn::{project_spectral, Activation, Network};
use crate::rng::{derive_seed, stream, streams};
use crate::saliency::{smoothed_saliency_estimate, BaseMethod, SmoothingConfig};
use crate::training::{init_network, noisy_gradient, InitScheme};

/// Relative slack absorbing power-iteration and rounding error.
const FLOAT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `allowed − observed` over all trials.
    pub min_margin: f64,
    /// Largest `observed / allowed`.
    pub max_ratio: f64,
    /// Negative controls are expected to report violations.
    pub negative_control: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        if self.negative_control {
            self.violations > 0
        } else {
            self.violations == 0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    /// True when no regular suite has a violation.
    pub fn clean(&self) -> bool {
        self.suites.iter().filter(|s| !s.negative_control).all(|s| s.violations == 0)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteResult> {
        self.suites.iter().find(|s| s.name == name)
    }
}

/// `(observed, allowed)` per trial.
fn summarize(name: &str, checks: &[(f64, f64)], negative_control: bool) -> SuiteResult {
    let violations = checks.iter().filter(|(o, a)| *o > a * (1.0 + FLOAT_SLACK)).count();
    let min_margin = checks.iter().map(|(o, a)| a - o).fold(f64::INFINITY, f64::min);
    let max_ratio = checks
        .iter()
        .map(|(o, a)| if *a > 0.0 { o / a } else if *o > 0.0 { f64::INFINITY } else { 0.0 })
        .fold(0.0, f64::max);
    SuiteResult {
        name: name.into(),
        trials: checks.len(),
        violations,
        min_margin,
        max_ratio,
        negative_control,
        notes: Vec::new(),
    }
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// A random point with `‖x‖ ≤ c`, often on the sphere itself.
fn point_in_ball(r: &mut ChaCha8Rng, m: usize, c: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| normal(r)).collect();
    let n = norm(&v).max(1e-300);
    let radius = if r.random_bool(0.5) { c } else { c * r.random::<f64>() };
    v.into_iter().map(|x| x * radius / n).collect()
}

struct Case {
    net: Network,
    profile: NormProfile,
    x: Vec<f64>,
    y: usize,
}

/// Random smooth network projected onto random caps `B_i ∈ [1, 2]`, with a
/// point in the `C`-ball, `C ∈ [1, 2]`.
fn random_case(seed: u64, max_depth: usize, activations: &[Activation]) -> Result<Case> {
    let mut r = stream(seed, streams::VERIFY);
    let depth = r.random_range(1..=max_depth);
    let m = r.random_range(2..=6);
    let mut dims = vec![m];
    dims.extend((1..depth).map(|_| r.random_range(2..=8)));
    dims.push(r.random_range(2..=4));
    let activation = activations[r.random_range(0..activations.len())];
    // Inflate the raw init so projection is usually active.
    let mut raw = init_network(&dims, activation, derive_seed(seed, 1), InitScheme::UniformScaled)?;
    let boost = r.random_range(1.0..3.0);
    let mut flat = raw.flatten();
    flat.0.iter_mut().for_each(|w| *w *= boost);
    raw = raw.with_params(&flat)?;
    let caps: Vec<f64> = (0..depth).map(|_| r.random_range(1.0..2.0)).collect();
    let net = project_spectral(&raw, &caps)?;
    let c = r.random_range(1.0..2.0);
    let x = point_in_ball(&mut r, m, c);
    let y = r.random_range(0..net.num_classes());
    let profile = NormProfile::new(caps, c, m)?.with_activation(activation);
    Ok(Case { net, profile, x, y })
}

const SMOOTH: [Activation; 2] = [Activation::Tanh, Activation::ShiftedSoftplus];
const ALL: [Activation; 3] = [Activation::Tanh, Activation::ShiftedSoftplus, Activation::Relu];

fn trial_seed(root: u64, suite: u64, t: usize) -> u64 {
    derive_seed(derive_seed(root, suite), t as u64)
}

/// `‖f(x)‖ ≤ Δ_{k,0} C`
pub fn output_norm_suite(root: u64, trials: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let case = random_case(trial_seed(root, 1, t), 3, &ALL)?;
            let out = case.net.forward(&case.x)?;
            Ok((norm(&out), case.profile.delta_k0() * case.profile.c))
        })
        .collect::<Result<_>>()?;
    Ok(summarize("output_norm", &checks, false))
}

/// `‖∇_x f_y(x)‖ ≤ Δ_{k,0}`
pub fn input_gradient_suite(root: u64, trials: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let case = random_case(trial_seed(root, 2, t), 3, &ALL)?;
            let g = case.net.input_gradient(&case.x, case.y)?;
            Ok((norm(&g), case.profile.delta_k0()))
        })
        .collect::<Result<_>>()?;
    Ok(summarize("input_gradient_norm", &checks, false))
}

/// The input-gradient check against caps that are stale by a factor of 2
/// per layer. Single-output linear nets are included, whose gradient norm
/// equals the spectral norm, so violations are guaranteed to occur.
pub fn uncapped_control_suite(root: u64, trials: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(root, 3, t);
            let mut r = stream(seed, streams::VERIFY);
            let depth = r.random_range(1..=3);
            let m = r.random_range(2..=6);
            let mut dims = vec![m];
            dims.extend((1..depth).map(|_| r.random_range(2..=8)));
            dims.push(if t % 2 == 0 { 1 } else { r.random_range(2..=4) });
            let raw = init_network(&dims, Activation::Tanh, derive_seed(seed, 1), InitScheme::UniformScaled)?;
            // Caps below the raw norms, so every layer ends up exactly on its cap.
            let caps: Vec<f64> = crate::nn::spectral_norms(&raw, 1e-10, 5000)?
                .iter()
                .map(|e| e.value * r.random_range(0.3..0.8))
                .collect();
            let capped = project_spectral(&raw, &caps)?;
            let mut flat = capped.flatten();
            flat.0.iter_mut().for_each(|w| *w *= 2.0);
            let net = capped.with_params(&flat)?;
            let profile = NormProfile::new(caps, 1.0, m)?;
            let g = net.input_gradient(&vec![0.0; m], 0)?;
            Ok((norm(&g), profile.delta_k0()))
        })
        .collect::<Result<_>>()?;
    Ok(summarize("input_gradient_norm_uncapped_control", &checks, true))
}

/// `E‖z‖ ≤ σ√m` for `z ~ N(0, σ² I_m)`, checked on plain Monte-Carlo means
/// without slack. Dimensions stay small so the Jensen gap dominates the
/// Monte-Carlo error.
pub fn gaussian_norm_suite(root: u64, trials: usize, draws: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(trial_seed(root, 4, t), streams::VERIFY);
            let m = r.random_range(1..=16);
            let sigma = r.random_range(0.01..2.0);
            let mut z = vec![0.0; m];
            let total: f64 = (0..draws)
                .map(|_| {
                    z.iter_mut().for_each(|v| *v = sigma * normal(&mut r));
                    norm(&z)
                })
                .sum();
            (total / draws as f64, sigma * (m as f64).sqrt())
        })
        .collect();
    Ok(summarize("gaussian_norm", &checks, false))
}

fn mean_and_se(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    let m = samples[0].len();
    let mut mean = vec![0.0; m];
    for s in samples {
        mean.iter_mut().zip(s).for_each(|(a, v)| *a += v / n);
    }
    let mut var = vec![0.0; m];
    for s in samples {
        var.iter_mut().zip(s).zip(&mean).for_each(|((a, v), mu)| *a += (v - mu).powi(2) / (n - 1.0));
    }
    let se = var.into_iter().map(|v| (v / n).sqrt()).collect();
    (mean, se)
}

/// Stein's identity `E[∇g(x+z)] = E[z (g(x+z) − g(x))] / σ²` for a
/// network logit `g`, each side estimated from its own draws. The check is
/// `‖lhs − rhs‖ ≤ 3 sqrt(Σ_j se_lhs,j² + se_rhs,j²)`. Inputs have at least
/// four features so the ℓ₂ statistic is not dominated by one coordinate.
pub fn stein_suite(root: u64, trials: usize, draws: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(root, 5, t);
            let mut r = stream(seed, streams::VERIFY);
            let m = r.random_range(4..=8);
            let dims = [m, r.random_range(2..=8), r.random_range(2..=4)];
            let act = SMOOTH[r.random_range(0..2)];
            let net = init_network(&dims, act, derive_seed(seed, 1), InitScheme::UniformScaled)?;
            let x = point_in_ball(&mut r, m, 1.5);
            let y = r.random_range(0..dims[2]);
            let sigma = r.random_range(0.1..1.0);
            let g0 = net.forward(&x)?[y];
            let perturb = |r: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
                let z: Vec<f64> = (0..m).map(|_| sigma * normal(r)).collect();
                let p = x.iter().zip(&z).map(|(a, b)| a + b).collect();
                (z, p)
            };
            let mut lhs = Vec::with_capacity(draws);
            for _ in 0..draws {
                let (_, p) = perturb(&mut r);
                lhs.push(net.input_gradient(&p, y)?);
            }
            let mut rhs = Vec::with_capacity(draws);
            for _ in 0..draws {
                let (z, p) = perturb(&mut r);
                let d = net.forward(&p)?[y] - g0;
                rhs.push(z.iter().map(|zj| zj * d / (sigma * sigma)).collect());
            }
            let (ml, sl) = mean_and_se(&lhs);
            let (mr, sr) = mean_and_se(&rhs);
            let diff: Vec<f64> = ml.iter().zip(&mr).map(|(a, b)| a - b).collect();
            let combined = sl.iter().zip(&sr).map(|(a, b)| a * a + b * b).sum::<f64>().sqrt();
            Ok((norm(&diff), 3.0 * combined))
        })
        .collect::<Result<_>>()?;
    Ok(summarize("stein_identity", &checks, false))
}

/// Both sides of Stein's identity for `g(u) = u²` at `m = 1`, `x = 1`,
/// from the Gaussian moments `E z = 0`, `E z² = σ²`, `E z³ = 0`.
pub fn stein_closed_form(x: f64, sigma: f64) -> (f64, f64) {
    let (e1, e2, e3) = (0.0, sigma * sigma, 0.0);
    let lhs = 2.0 * (x + e1);
    let rhs = (x * x * e1 + 2.0 * x * e2 + e3) / (sigma * sigma);
    (lhs, rhs)
}

/// Closed-form `m = 1` case plus a single large Monte-Carlo run of it.
pub fn stein_scalar_suite(root: u64, draws: usize) -> Result<SuiteResult> {
    let (lhs, rhs) = stein_closed_form(1.0, 0.5);
    let mut r = stream(derive_seed(root, 6), streams::VERIFY);
    let sigma = 0.5;
    let lhs_s: Vec<Vec<f64>> = (0..draws).map(|_| vec![2.0 * (1.0 + sigma * normal(&mut r))]).collect();
    let rhs_s: Vec<Vec<f64>> = (0..draws)
        .map(|_| {
            let z = sigma * normal(&mut r);
            vec![z * (1.0 + z).powi(2) / (sigma * sigma)]
        })
        .collect();
    let (ml, sl) = mean_and_se(&lhs_s);
    let (mr, sr) = mean_and_se(&rhs_s);
    let checks = [
        ((lhs - rhs).abs(), 0.0),
        ((ml[0] - mr[0]).abs(), 3.0 * sl[0].hypot(sr[0])),
    ];
    let mut res = summarize("stein_identity_scalar", &checks, false);
    res.notes.push(format!("closed form: lhs = {lhs}, rhs = {rhs}"));
    res.notes.push(format!("monte carlo: lhs = {:.6}, rhs = {:.6}", ml[0], mr[0]));
    Ok(res)
}

/// Monte-Carlo fidelity error of smoothed Simple-Grad and Integrated-Grad
/// against the closed-form fidelity bounds, with `3·SE` allowance.
pub fn fidelity_suite(root: u64, trials: usize, draws: usize) -> Result<SuiteResult> {
    let checks: Vec<Vec<(f64, f64)>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(root, 7, t);
            let case = random_case(seed, 3, &SMOOTH)?;
            let mut r = stream(seed, streams::VERIFY ^ 0xF1D);
            let sigma = r.random_range(0.05..1.0);
            let cfg = SmoothingConfig::new(sigma, draws, derive_seed(seed, 2));
            let mut out = Vec::with_capacity(2);
            for (base, method) in [
                (BaseMethod::SimpleGrad, FidelityMethod::SimpleGrad),
                (BaseMethod::integrated_default(), FidelityMethod::IntegratedGrad),
            ] {
                let est = smoothed_saliency_estimate(&base, &case.net, &case.x, case.y, &cfg)?;
                let plain = base.compute(&case.net, &case.x, case.y)?;
                let d: Vec<f64> = est.map.values.iter().zip(&plain.values).map(|(a, b)| a - b).collect();
                let allowed = fidelity_bound(&case.profile, sigma, method)? + 3.0 * est.std_error_norm();
                out.push((norm(&d), allowed));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<(f64, f64)> = checks.into_iter().flatten().collect();
    let mut res = summarize("fidelity_bound", &flat, false);
    res.notes.push("each trial checks Simple-Grad and Integrated-Grad".into());
    Ok(res)
}

/// Gradient of the parameter-noise smoothed loss is `(L/κ)`-Lipschitz:
/// `‖∇ℓ̃(W) − ∇ℓ̃(W′)‖ ≤ (L/κ)‖W − W′‖ + 3·SE`, with both gradients
/// estimated on the same noise draws. `L = √2 Δ_{k,1} C` is evaluated on
/// caps widened by the typical noise norm `κ(√rows + √cols)`, since
/// perturbed weights leave the original caps.
pub fn noisy_loss_suite(root: u64, trials: usize, draws: usize) -> Result<SuiteResult> {
    let checks: Vec<(f64, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(root, 8, t);
            let case = random_case(seed, 3, &SMOOTH)?;
            let mut r = stream(seed, streams::VERIFY ^ 0x401);
            let kappa = r.random_range(0.05..0.2);
            let w = case.net.flatten();
            let scale = r.random_range(0.01..1.0) * kappa;
            let mut w2 = w.clone();
            w2.0.iter_mut().for_each(|v| *v += scale * normal(&mut r));
            let net2 = case.net.with_params(&w2)?;
            let dw = w.0.iter().zip(&w2.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let widened: Vec<f64> = case
                .profile
                .b
                .iter()
                .zip(case.net.layers())
                .zip(net2.layers())
                .map(|((&b, l1), l2)| {
                    let noise = 2.0 * kappa * ((l1.rows() as f64).sqrt() + (l1.cols() as f64).sqrt());
                    // W′ may itself sit outside the caps.
                    let shift = crate::nn::spectral_norm(l2, 1e-10, 5000).map(|e| e.value).unwrap_or(b);
                    b.max(shift) + noise
                })
                .collect();
            let lip = NormProfile::new(widened, case.profile.c, case.profile.m)?
                .with_loss_lip(std::f64::consts::SQRT_2);
            let l = crate::bounds::lipschitz_bound(&lip);
            let noise_seed = derive_seed(seed, 3);
            let mut ra = stream(noise_seed, streams::PARAM_NOISE);
            let mut rb = stream(noise_seed, streams::PARAM_NOISE);
            let mut diffs = Vec::with_capacity(draws);
            for _ in 0..draws {
                let (_, ga) = noisy_gradient(&case.net, &case.x, case.y, kappa, 1, &mut ra)?;
                let (_, gb) = noisy_gradient(&net2, &case.x, case.y, kappa, 1, &mut rb)?;
                diffs.push(ga.0.iter().zip(&gb.0).map(|(a, b)| a - b).collect::<Vec<f64>>());
            }
            let (mean, se) = mean_and_se(&diffs);
            Ok((norm(&mean), l / kappa * dw + 3.0 * norm(&se)))
        })
        .collect::<Result<_>>()?;
    Ok(summarize("noisy_loss_smoothness", &checks, false))
}

/// Runs every suite with `trials` trials each.
pub fn run_all(root: u64, trials: usize) -> Result<VerifyReport> {
    Ok(VerifyReport {
        seed: root,
        suites: vec![
            output_norm_suite(root, trials)?,
            input_gradient_suite(root, trials)?,
            gaussian_norm_suite(root, trials, 4000)?,
            stein_suite(root, trials, 400)?,
            stein_scalar_suite(root, 200_000)?,
            fidelity_suite(root, trials, 100)?,
            noisy_loss_suite(root, trials, 100)?,
            uncapped_control_suite(root, trials)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_stein_is_two() {
        assert_eq!(stein_closed_form(1.0, 0.3), (2.0, 2.0));
    }

    #[test]
    fn small_run_is_clean() {
        let rep = run_all(3, 20).unwrap();
        for s in &rep.suites {
            assert!(s.passed(), "{s:?}");
        }
    }
}
