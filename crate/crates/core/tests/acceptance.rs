//! End-to-end acceptance run. Each criterion prints one `PASS`/`FAIL` line
//! straight to stderr so it shows up without `--nocapture`.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use rand::Rng;
use saliency_lab::bounds::*;
use saliency_lab::experiment::verify::run_all;
use saliency_lab::experiment::{prepare, sweep_sigma, train_splits, ExperimentConfig, MethodName, ReportPayload};
use saliency_lab::metrics::{bias_variance_from_batches, ssim, topk_miou, MapBatch, SsimConfig};
use saliency_lab::nn::Activation;
use saliency_lab::saliency::{SaliencyMap, SaliencyMethod};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("acceptance criterion {n} ({name}): {verdict}; {detail}\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn config(name: &str) -> ExperimentConfig {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ExperimentConfig::load(&p).unwrap()
}

fn pipeline(cfg: &ExperimentConfig) -> ReportPayload {
    let prep = prepare(cfg).unwrap();
    let models: Vec<_> = train_splits(cfg, &prep).unwrap().into_iter().map(|t| t.network).collect();
    sweep_sigma(cfg, &prep, &models).unwrap()
}

/// Reference config restricted to Simple-Grad, which is all the trend
/// criterion inspects.
fn reference_simplegrad() -> ExperimentConfig {
    let mut cfg = config("reference.toml");
    cfg.sweep.methods = vec![MethodName::SimpleGrad];
    cfg
}

fn reference_payload() -> &'static (ReportPayload, f64) {
    static CELL: OnceLock<(ReportPayload, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let p = pipeline(&reference_simplegrad());
        (p, t.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_1_gradient_correctness() {
    let t = Instant::now();
    let mut r = rng(0xAC1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let net = random_net(&mut r, 3, 200, Activation::Tanh, 0.8);
        let x = random_vec(&mut r, net.input_dim(), 1.5);
        let y = r.random_range(0..net.num_classes());
        let gi = net.input_gradient(&x, y).unwrap();
        worst = worst.max(rel_err(&gi, &fd_input_gradient(&net, &x, y, 1e-5), 1e-3));
        let gp = net.param_gradient(&x, y).unwrap();
        worst = worst.max(rel_err(gp.as_slice(), &fd_param_gradient(&net, &x, y, 1e-5), 1e-3));
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        "gradient correctness",
        worst <= 1e-5 && secs < 30.0,
        format!("50 nets, max relative error {worst:.2e}, {secs:.1} s"),
    );
}

#[test]
fn criterion_2_property_suites() {
    let t = Instant::now();
    let cfg = config("reference.toml");
    let rep = run_all(cfg.verify.seed, 1000).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let control_fires = rep.suites.iter().filter(|s| s.negative_control).all(|s| s.violations > 0);
    let summary: Vec<String> = rep
        .suites
        .iter()
        .map(|s| format!("{} {}/{}", s.name, s.violations, s.trials))
        .collect();
    report(
        2,
        "bound property suites",
        rep.clean() && control_fires && secs < 300.0,
        format!("violations per suite [{}], {secs:.1} s", summary.join(", ")),
    );
}

#[test]
fn criterion_3_bound_identities() {
    let mut r = rng(0xAC3);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let mut worst: f64 = 0.0;
    let mut decreasing = true;
    for _ in 0..100 {
        let k = r.random_range(2..=6);
        let b: Vec<f64> = (0..k).map(|_| r.random_range(0.5..3.0)).collect();
        let p = NormProfile::new(b, r.random_range(0.5..3.0), r.random_range(1..=784)).unwrap();
        let terms = SgdTerms {
            n: r.random_range(2..100_000),
            t: r.random_range(1..1_000_000),
            c: r.random_range(0.01..2.0),
            beta: r.random_range(0.0..50.0),
        };
        let l = lipschitz_bound(&p);
        let sigma = r.random_range(0.01..5.0);
        let generic = |lc: LossConstants, regime| generic_stability_bound(lc.m_prime, lc.l_prime, l, terms, regime).unwrap();

        let sg = simplegrad_stability_bound(&p, terms).unwrap();
        worst = worst.max(rel(sg, generic(simplegrad_constants(&p), Regime::NonConvex)));
        let sm = smoothgrad_stability_bound(&p, terms, sigma).unwrap();
        worst = worst.max(rel(sm, generic(smoothgrad_constants(&p, sigma), Regime::NonConvex)));
        let ig = integratedgrad_stability_bound(&p, terms, Regime::NonConvex).unwrap();
        worst = worst.max(rel(ig, generic(integratedgrad_constants(&p), Regime::NonConvex)));
        let convex = Regime::Convex { step_sum: r.random_range(0.1..50.0) };
        let igc = integratedgrad_stability_bound(&p, terms, convex).unwrap();
        worst = worst.max(rel(igc, generic(integratedgrad_constants(&p), convex)));

        let prefix: f64 = (1..k).map(|i| delta_by_subsets(&p.b[..i], 1)).sum();
        let a = 1.0 / (terms.beta * terms.c + 1.0);
        let mut prev = f64::INFINITY;
        for s in [0.01, 0.03, 0.1, 0.3, 1.0, 3.0] {
            let ratio = smoothgrad_stability_bound(&p, terms, s).unwrap() / sg;
            let want = (delta_by_subsets(&p.b, 1) / (2.0 * s * delta_by_subsets(&p.b, 0) * prefix)).powf(a);
            worst = worst.max(rel(ratio, want));
            decreasing &= ratio < prev;
            prev = ratio;
        }
    }

    let mut exact = true;
    for t in 1..=12 {
        let b: Vec<f64> = (0..t).map(|_| r.random_range(1..=4) as f64).collect();
        for i in 0..=t {
            exact &= delta(&b, i).unwrap() == delta_by_subsets(&b, i);
        }
    }
    report(
        3,
        "closed-form bound identities",
        worst <= 1e-12 && decreasing && exact,
        format!("100 profiles, max relative error {worst:.2e}, ratio decreasing in sigma: {decreasing}, Δ exact for t ≤ 12: {exact}"),
    );
}

#[test]
fn criterion_4_trend_reproduction() {
    let (payload, secs) = reference_payload();
    let rows: Vec<_> = payload.rows.iter().filter(|r| r.method == "simple_grad").collect();
    let smoothed: Vec<_> = rows.iter().filter(|r| r.sigma_ratio > 0.0).collect();
    let sig: Vec<f64> = smoothed.iter().map(|r| r.sigma).collect();
    let stab: Vec<f64> = smoothed.iter().map(|r| r.stability).collect();
    let fid: Vec<f64> = smoothed.iter().map(|r| r.fidelity).collect();
    let rho_s = spearman(&sig, &stab);
    let rho_f = spearman(&sig, &fid);
    let fid0 = rows.iter().find(|r| r.sigma_ratio == 0.0).map(|r| r.fidelity);
    report(
        4,
        "trend reproduction",
        rho_s <= -0.9 && rho_f >= 0.9 && fid0 == Some(0.0) && *secs < 600.0,
        format!(
            "Simple-Grad over {} smoothed sigmas: rho(stability) {rho_s:+.3}, rho(fidelity) {rho_f:+.3}, fidelity at sigma 0 {:?}, {secs:.1} s",
            smoothed.len(),
            fid0
        ),
    );
}

#[test]
fn criterion_5_smoothing_improves_agreement() {
    let t = Instant::now();
    let seeds = [10007u64, 5678, 12345];
    // [simple SSIM, simple mIoU, integrated SSIM, integrated mIoU]
    let mut wins = [0usize; 4];
    let mut margins = Vec::new();
    for &seed in &seeds {
        let mut cfg = config("reference_grid.toml");
        cfg.override_seed(seed);
        let payload = pipeline(&cfg);
        for (mi, method) in ["simple_grad", "integrated_grad"].iter().enumerate() {
            let row = payload
                .rows
                .iter()
                .filter(|r| r.method == *method && r.sigma_ratio > 0.0)
                .min_by(|a, b| (a.sigma_ratio - 0.15).abs().total_cmp(&(b.sigma_ratio - 0.15).abs()))
                .unwrap();
            let ds = row.smoothed_ssim.unwrap() - row.ssim.unwrap();
            let dk = row.smoothed_topk_miou.unwrap() - row.topk_miou.unwrap();
            wins[2 * mi] += (ds >= 0.0) as usize;
            wins[2 * mi + 1] += (dk >= 0.0) as usize;
            margins.push(format!("{seed}/{method}: SSIM {ds:+.4}, mIoU {dk:+.4}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        5,
        "smoothing improves cross-split agreement",
        wins.iter().all(|&w| w >= 2),
        format!("seeds with margin ≥ 0 per metric {wins:?} of 3 [{}], {secs:.1} s", margins.join("; ")),
    );
}

#[test]
fn criterion_6_metric_exactness() {
    let mut r = rng(0xAC6);
    let cfg = SsimConfig::default();
    let a = random_vec(&mut r, 256, 1.0);
    let self_one = ssim(&a, &a, (16, 16), &cfg).unwrap() == 1.0;

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (h, w) = (r.random_range(11..28), r.random_range(11..28));
        let x = random_vec(&mut r, h * w, 1.0);
        let y: Vec<f64> = x.iter().map(|v| v + r.random_range(-0.5..0.5)).collect();
        let got = ssim(&x, &y, (h, w), &cfg).unwrap();
        let want = ssim_direct(&saliency_lab::metrics::abs_minmax(&x), &saliency_lab::metrics::abs_minmax(&y), (h, w), &cfg);
        worst = worst.max((got - want).abs());
    }

    let topk = topk_miou(&[3.0, -2.0, 1.0, 0.0], &[-5.0, 4.0, 0.1, 0.2], 2).unwrap() == 1.0
        && topk_miou(&[3.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 2).unwrap() == 0.0
        && topk_miou(&[3.0, 2.0, 0.0, 0.0], &[3.0, 0.0, 2.0, 0.0], 2).unwrap() == 1.0 / 3.0;

    let (u, v) = (0.75, -1.5);
    let batch = |x: f64| {
        let m = SaliencyMap {
            values: vec![x],
            method: SaliencyMethod::SmoothGrad,
            sigma: 0.1,
            n_samples: 1,
            input_id: 0,
        };
        MapBatch::new(vec![m], None, "fixture").unwrap()
    };
    let bv = bias_variance_from_batches(&[batch(u), batch(v)], &[batch(u), batch(v)]).unwrap();
    let bv_exact = bv.avg_variance == (u - v) * (u - v) / 4.0;

    report(
        6,
        "metric exactness",
        self_one && worst <= 1e-10 && topk && bv_exact,
        format!(
            "ssim(a,a)=1: {self_one}, max |ssim − direct| over 20 pairs {worst:.2e}, top-k fixtures: {topk}, bias-variance fixture: {bv_exact}"
        ),
    );
}

#[test]
fn criterion_7_determinism() {
    let (first, _) = reference_payload();
    let second = pipeline(&reference_simplegrad());
    let a = serde_json::to_string_pretty(first).unwrap();
    let b = serde_json::to_string_pretty(&second).unwrap();
    report(
        7,
        "determinism",
        a.as_bytes() == b.as_bytes(),
        format!("report payload of {} bytes, identical: {}", a.len(), a == b),
    );
}
