use rand_distr::{Distribution, StandardNormal};

use super::{norm2, Matrix, Network};
use crate::error::{Error, Result};
use crate::rng;

/// Largest-singular-value estimate from power iteration.
///
/// `value` is a Rayleigh-quotient estimate and therefore never exceeds the
/// true norm; `residual` is `‖WᵀW v − λ v‖ / λ` at the final iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn spectral_norm(w: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    // Fixed pseudo-random start: a deterministic vector that is almost surely
    // not orthogonal to the leading right singular vector.
    let mut r = rng::stream(0x5EC7_0A11, 0);
    let mut v: Vec<f64> = (0..w.cols()).map(|_| StandardNormal.sample(&mut r)).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);

    let mut estimate = SpectralEstimate {
        value: 0.0,
        residual: f64::INFINITY,
        iterations: 0,
        converged: false,
    };
    for it in 1..=max_iter.max(1) {
        let u = w.mul_vec(&v);
        let wtw_v = w.mul_vec_transposed(&u);
        let lambda = norm2(&u).powi(2);
        estimate.iterations = it;
        if lambda == 0.0 {
            // A generic start only lands in the null space of a zero matrix.
            estimate.value = 0.0;
            estimate.residual = 0.0;
            estimate.converged = w.as_slice().iter().all(|&x| x == 0.0);
            return Ok(estimate);
        }
        let residual = wtw_v
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / lambda;
        estimate.value = lambda.sqrt();
        estimate.residual = residual;
        if residual <= tol {
            estimate.converged = true;
            return Ok(estimate);
        }
        let nn = norm2(&wtw_v);
        v = wtw_v.into_iter().map(|x| x / nn).collect();
    }
    Ok(estimate)
}

/// Per-layer `‖W_i‖₂` estimates, `W_1` first.
pub fn spectral_norms(net: &Network, tol: f64, max_iter: usize) -> Result<Vec<SpectralEstimate>> {
    net.layers()
        .iter()
        .map(|w| spectral_norm(w, tol, max_iter))
        .collect()
}

const PROJECT_TOL: f64 = 1e-10;
const PROJECT_MAX_ITER: usize = 5000;

/// Rescales each `W_i` by `min(1, B_i / ‖W_i‖₂)`.
pub fn project_spectral(net: &Network, caps: &[f64]) -> Result<Network> {
    if caps.len() != net.depth() {
        return Err(Error::DimensionMismatch {
            context: "spectral caps",
            expected: net.depth(),
            got: caps.len(),
        });
    }
    if let Some(bad) = caps.iter().find(|&&b| !(b > 0.0)) {
        return Err(Error::InvalidArgument(format!("spectral cap must be positive, got {bad}")));
    }
    let mut out = net.clone();
    for (w, &cap) in out.layers_mut().iter_mut().zip(caps) {
        // The estimate approaches ‖W‖ from below, so a second pass catches
        // the rare case where the first rescale lands marginally above cap.
        for _ in 0..3 {
            let est = spectral_norm(w, PROJECT_TOL, PROJECT_MAX_ITER)?;
            if est.value <= cap {
                break;
            }
            w.scale(cap / (est.value * (1.0 + PROJECT_TOL)));
        }
    }
    Ok(out)
}
