use crate::error::{Error, Result};

/// Desk-scale default: `⌈m/10⌉`, or 500 once maps reach 5000 features.
pub fn default_k(m: usize) -> usize {
    if m >= 5000 {
        500
    } else {
        m.div_ceil(10).max(1)
    }
}

/// Indices of the `k` largest `|v_j|`, ties going to the smaller index.
pub fn topk_indices(v: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(Error::InvalidArgument(format!("k = {k} out of range for {} features", v.len())));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j)));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Intersection-over-union of the top-`k` magnitude supports of `a` and `b`.
pub fn topk_miou(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "top-k maps",
            expected: a.len(),
            got: b.len(),
        });
    }
    let sa = topk_indices(a, k)?;
    let sb = topk_indices(b, k)?;
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < sa.len() && j < sb.len() {
        match sa[i].cmp(&sb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(inter as f64 / (2 * k - inter) as f64)
}
