#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saliency_lab::metrics::SsimConfig;
use saliency_lab::nn::{Activation, Matrix, Network};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bias-free net with depth in `1..=max_depth`, at most `max_params`
/// weights, entries uniform in `[-scale, scale]`.
pub fn random_net(r: &mut ChaCha8Rng, max_depth: usize, max_params: usize, act: Activation, scale: f64) -> Network {
    loop {
        let depth = r.random_range(1..=max_depth);
        let mut dims = vec![r.random_range(1..=8)];
        for _ in 0..depth {
            dims.push(r.random_range(1..=8));
        }
        let params: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        if params > max_params {
            continue;
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| r.random_range(-scale..scale)).collect();
                Matrix::new(w[1], w[0], data).unwrap()
            })
            .collect();
        return Network::new(layers, act).unwrap();
    }
}

pub fn random_vec(r: &mut ChaCha8Rng, m: usize, scale: f64) -> Vec<f64> {
    (0..m).map(|_| r.random_range(-scale..scale)).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖b‖, floor)`
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    diff_norm(a, b) / norm(b).max(floor)
}

/// Central differences of `x ↦ f(x)_y`.
pub fn fd_input_gradient(net: &Network, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[j] += h;
            q[j] -= h;
            (net.forward(&p).unwrap()[y] - net.forward(&q).unwrap()[y]) / (2.0 * h)
        })
        .collect()
}

/// Central differences of the cross-entropy loss in every weight.
pub fn fd_param_gradient(net: &Network, x: &[f64], y: usize, h: f64) -> Vec<f64> {
    let w = net.flatten();
    (0..w.len())
        .map(|j| {
            let mut p = w.clone();
            let mut q = w.clone();
            p.0[j] += h;
            q.0[j] -= h;
            let lp = net.with_params(&p).unwrap().loss(x, y).unwrap();
            let lq = net.with_params(&q).unwrap().loss(x, y).unwrap();
            (lp - lq) / (2.0 * h)
        })
        .collect()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// `Δ_{t,i}` straight from its definition: the sum over all `(t−i)`-subsets
/// of `{B_1..B_t}` of the product of the chosen caps.
pub fn delta_by_subsets(b: &[f64], i: usize) -> f64 {
    let t = b.len();
    let size = t - i;
    (0u32..1 << t)
        .filter(|mask| mask.count_ones() as usize == size)
        .map(|mask| (0..t).filter(|j| mask >> j & 1 == 1).map(|j| b[j]).product::<f64>())
        .sum()
}

/// Mean local SSIM computed position by position from the 2-D Gaussian
/// window, with two-pass moments.
pub fn ssim_direct(a: &[f64], b: &[f64], (h, w): (usize, usize), cfg: &SsimConfig) -> f64 {
    let n = cfg.window;
    let rad = (n / 2) as f64;
    let mut win = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2 = (i as f64 - rad).powi(2) + (j as f64 - rad).powi(2);
            win[i * n + j] = (-d2 / (2.0 * cfg.window_sigma.powi(2))).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0;
    for r in 0..=h - n {
        for c in 0..=w - n {
            let px = |img: &[f64], i: usize, j: usize| img[(r + i) * w + c + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    ma += win[i * n + j] * px(a, i, j);
                    mb += win[i * n + j] * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += win[i * n + j] * da * da;
                    vb += win[i * n + j] * db * db;
                    cov += win[i * n + j] * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}
