use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_range > 0.0) {
            return Err(Error::InvalidArgument(format!("data_range must be positive, got {}", self.data_range)));
        }
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("window must be odd, got {}", self.window)));
        }
        if !(self.window_sigma > 0.0) {
            return Err(Error::InvalidArgument("window_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.window_sigma * self.window_sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

/// Separable "valid" filtering of an `h × w` row-major image.
fn filter_valid(img: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(t, k)| k * img[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(t, k)| k * rows[(r + t) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM of two `h × w` images over all valid window positions,
/// with Gaussian-weighted moments and no sample-covariance correction.
pub fn ssim_grid(a: &[f64], b: &[f64], grid: (usize, usize), cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    let (h, w) = grid;
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::DimensionMismatch {
            context: "ssim grid",
            expected: h * w,
            got: if a.len() != h * w { a.len() } else { b.len() },
        });
    }
    if h < cfg.window || w < cfg.window {
        return Err(Error::InvalidArgument(format!(
            "ssim needs a grid of at least {0}×{0}, got {h}×{w}",
            cfg.window
        )));
    }
    let taps = cfg.taps();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let aa = filter_valid(&prod(a, a), h, w, &taps);
    let bb = filter_valid(&prod(b, b), h, w, &taps);
    let ab = filter_valid(&prod(a, b), h, w, &taps);
    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let local: Vec<f64> = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Ok(super::pairwise_sum(&local) / local.len() as f64)
}

/// `|v|` rescaled to `[0, 1]`; a constant map becomes all zeros.
pub fn abs_minmax(v: &[f64]) -> Vec<f64> {
    let abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let lo = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    abs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// SSIM between two saliency maps: both are taken in magnitude and min-max
/// normalized, then compared with `data_range = 1`.
pub fn ssim(a: &[f64], b: &[f64], grid: (usize, usize), cfg: &SsimConfig) -> Result<f64> {
    let cfg = SsimConfig {
        data_range: 1.0,
        ..cfg.clone()
    };
    ssim_grid(&abs_minmax(a), &abs_minmax(b), grid, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_is_one() {
        let a: Vec<f64> = (0..144).map(|i| ((i * 37) % 11) as f64 - 3.0).collect();
        assert_eq!(ssim(&a, &a, (12, 12), &SsimConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn small_grid_rejected() {
        let a = vec![0.0; 100];
        assert!(ssim(&a, &a, (10, 10), &SsimConfig::default()).is_err());
    }

    #[test]
    fn taps_sum_to_one() {
        let t = SsimConfig::default().taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn constant_normalizes_to_zero() {
        assert_eq!(abs_minmax(&[-2.0, 2.0, 2.0]), vec![0.0; 3]);
        assert_eq!(abs_minmax(&[0.0, -1.0, 0.5]), vec![0.0, 1.0, 0.5]);
    }
}
