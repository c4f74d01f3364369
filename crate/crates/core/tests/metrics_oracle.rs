mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use saliency_lab::data::LabeledDataset;
use saliency_lab::metrics::*;
use saliency_lab::nn::{project_spectral, Activation, Matrix, Network};
use saliency_lab::bounds::{fidelity_bound, FidelityMethod, NormProfile};
use saliency_lab::saliency::{BaseMethod, SaliencyMap, SaliencyMethod};

fn maps(values: &[Vec<f64>]) -> MapBatch {
    let maps = values
        .iter()
        .enumerate()
        .map(|(i, v)| SaliencyMap {
            values: v.clone(),
            method: SaliencyMethod::SimpleGrad,
            sigma: 0.0,
            n_samples: 1,
            input_id: i as u64,
        })
        .collect();
    MapBatch::new(maps, None, "fixture").unwrap()
}

#[test]
fn ssim_matches_direct_definition() {
    let mut r = rng(61);
    let cfg = SsimConfig::default();
    for _ in 0..20 {
        let (h, w) = (r.random_range(11..24), r.random_range(11..24));
        let a = random_vec(&mut r, h * w, 2.0);
        let b: Vec<f64> = a.iter().map(|v| v * r.random_range(-1.0..1.5) + r.random_range(-0.5..0.5)).collect();
        let got = ssim(&a, &b, (h, w), &cfg).unwrap();
        let want = ssim_direct(&abs_minmax(&a), &abs_minmax(&b), (h, w), &cfg);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");

        let raw_cfg = SsimConfig { data_range: 4.0, ..cfg.clone() };
        let got = ssim_grid(&a, &b, (h, w), &raw_cfg).unwrap();
        assert!((got - ssim_direct(&a, &b, (h, w), &raw_cfg)).abs() < 1e-10);
    }
}

#[test]
fn ssim_of_constant_against_shifted_constant() {
    // Zero variance leaves only the luminance term.
    let cfg = SsimConfig { data_range: 2.0, ..SsimConfig::default() };
    let a = vec![0.5; 16 * 16];
    let b = vec![1.5; 16 * 16];
    let c1 = (0.01f64 * 2.0).powi(2);
    let want = (2.0 * 0.5 * 1.5 + c1) / (0.25 + 2.25 + c1);
    assert!((ssim_grid(&a, &b, (16, 16), &cfg).unwrap() - want).abs() < 1e-12);
    assert_eq!(ssim(&a, &a, (16, 16), &cfg).unwrap(), 1.0);
}

#[test]
fn ssim_rejects_small_grids() {
    let a = vec![0.0; 100];
    assert!(ssim(&a, &a, (10, 10), &SsimConfig::default()).is_err());
    assert!(ssim(&a, &a, (11, 9), &SsimConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_vec(&mut r, 144, 1.0);
        let b = random_vec(&mut r, 144, 1.0);
        let cfg = SsimConfig::default();
        let ab = ssim(&a, &b, (12, 12), &cfg).unwrap();
        let ba = ssim(&b, &a, (12, 12), &cfg).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn topk_miou_properties(seed in any::<u64>(), m in 2usize..200) {
        let mut r = rng(seed);
        let a = random_vec(&mut r, m, 1.0);
        let b = random_vec(&mut r, m, 1.0);
        let k = r.random_range(1..=m);
        let ab = topk_miou(&a, &b, k).unwrap();
        prop_assert_eq!(ab, topk_miou(&b, &a, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(topk_miou(&a, &a, k).unwrap(), 1.0);
        prop_assert_eq!(topk_miou(&a, &b, m).unwrap(), 1.0);
        let top = topk_indices(&a, k).unwrap();
        prop_assert_eq!(top.len(), k);
        let kth = top.iter().map(|&i| a[i].abs()).fold(f64::INFINITY, f64::min);
        prop_assert!((0..m).filter(|i| !top.contains(i)).all(|i| a[i].abs() <= kth));
    }

    #[test]
    fn stability_is_a_pseudometric(seed in any::<u64>(), n in 1usize..6, m in 1usize..12) {
        let mut r = rng(seed);
        let mut batch = || maps(&(0..n).map(|_| random_vec(&mut r, m, 2.0)).collect::<Vec<_>>());
        let (a, b, c) = (batch(), batch(), batch());
        let d = |x: &MapBatch, y: &MapBatch| stability_proxy(x, y).unwrap().value;
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }
}

#[test]
fn topk_fixtures() {
    assert_eq!(topk_miou(&[3.0, -2.0, 1.0, 0.0], &[-5.0, 4.0, 0.1, 0.2], 2).unwrap(), 1.0);
    assert_eq!(topk_miou(&[3.0, 2.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 1.0], 2).unwrap(), 0.0);
    assert_eq!(topk_miou(&[3.0, 2.0, 0.0, 0.0], &[3.0, 0.0, 2.0, 0.0], 2).unwrap(), 1.0 / 3.0);
    assert_eq!(default_k(100), 10);
    assert_eq!(default_k(101), 11);
    assert_eq!(default_k(6000), 500);
}

#[test]
fn bias_variance_two_model_fixture() {
    let (u, v) = (1.5, -2.25);
    let s = [maps(&[vec![u]]), maps(&[vec![v]])];
    let bv = bias_variance_from_batches(&s, &s).unwrap();
    assert_eq!(bv.avg_variance, (u - v) * (u - v) / 4.0);
    assert_eq!(bv.avg_fidelity, 0.0);
}

fn blobs(r: &mut rand_chacha::ChaCha8Rng, n: usize, m: usize, classes: usize) -> LabeledDataset {
    let x = random_vec(r, n * m, 1.0);
    let y = (0..n).map(|i| i % classes).collect();
    LabeledDataset::new(x, y, m, classes, None).unwrap()
}

#[test]
fn fidelity_of_a_linear_network_is_zero_for_simple_grad() {
    let mut r = rng(62);
    let net = Network::new(vec![Matrix::new(3, 6, random_vec(&mut r, 18, 1.0)).unwrap()], Activation::Tanh).unwrap();
    let eval = blobs(&mut r, 20, 6, 3);
    let recipe = MapRecipe {
        sigma: 0.7,
        n_samples: 16,
        seed: 3,
        ..MapRecipe::unsmoothed(BaseMethod::SimpleGrad)
    };
    let f = fidelity_proxy(&net, &recipe, &eval).unwrap();
    assert!(f.value < 1e-14, "{}", f.value);
    let zero = fidelity_proxy(&net, &MapRecipe::unsmoothed(BaseMethod::SimpleGrad), &eval).unwrap();
    assert_eq!(zero.value, 0.0);
}

#[test]
fn fidelity_respects_bound_on_capped_networks() {
    let mut r = rng(63);
    for _ in 0..10 {
        let net = random_net(&mut r, 3, 150, Activation::Tanh, 2.0);
        if net.depth() < 2 {
            continue;
        }
        let caps: Vec<f64> = (0..net.depth()).map(|_| r.random_range(1.0..2.0)).collect();
        let net = project_spectral(&net, &caps).unwrap();
        let eval = blobs(&mut r, 8, net.input_dim(), net.num_classes()).normalize(1.0).unwrap();
        let p = NormProfile::new(caps, 1.0, net.input_dim()).unwrap();
        for (base, method) in [
            (BaseMethod::SimpleGrad, FidelityMethod::SimpleGrad),
            (BaseMethod::integrated_default(), FidelityMethod::IntegratedGrad),
        ] {
            let sigma = 0.3;
            let recipe = MapRecipe {
                sigma,
                n_samples: 64,
                seed: 1,
                ..MapRecipe::unsmoothed(base)
            };
            let f = fidelity_proxy(&net, &recipe, &eval).unwrap();
            let bound = fidelity_bound(&p, sigma, method).unwrap();
            assert!(f.value <= bound + 3.0 * f.std_error.max(f.mc_error), "{} > {bound}", f.value);
        }
    }
}

#[test]
fn generalization_gap_vanishes_for_identical_models_or_shared_points() {
    let mut r = rng(64);
    let net = random_net(&mut r, 3, 150, Activation::Tanh, 1.0);
    let other = random_net(&mut r, 3, 150, Activation::Tanh, 1.0);
    let eval = blobs(&mut r, 12, net.input_dim(), net.num_classes());
    let train = blobs(&mut r, 12, net.input_dim(), net.num_classes());
    let smoothed = MapRecipe {
        sigma: 0.2,
        n_samples: 8,
        seed: 1,
        ..MapRecipe::unsmoothed(BaseMethod::SimpleGrad)
    };
    let same = vec![net.clone(), net.clone()];
    let g = saliency_generalization_gap(&same, &[train.clone(), train.clone()], &eval, &smoothed).unwrap();
    assert_eq!(g, 0.0);

    if other.input_dim() == net.input_dim() && other.num_classes() == net.num_classes() {
        let mixed = vec![net.clone(), other];
        let plain = MapRecipe::unsmoothed(BaseMethod::SimpleGrad);
        let g = saliency_generalization_gap(&mixed, &[eval.clone(), eval.clone()], &eval, &plain).unwrap();
        assert_eq!(g, 0.0);
    }
}
