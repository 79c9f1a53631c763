use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{stream, Role};

/// Gaussian blobs, one per class, rescaled per feature into [0, 1].
///
/// Centroids sit on distinct corners of the `[-2, 2]^d` hypercube (plus a
/// small jitter) whenever `m <= 2^d`, so class separation grows with `d`
/// while `spread` is the per-coordinate noise standard deviation. Rows are
/// ordered by class: `per_class` rows of class 0, then class 1, and so on.
pub fn gen_synthetic(m: usize, d: usize, per_class: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if m < 2 || d < 2 || per_class < 1 || !(spread > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs m >= 2, d >= 2, per_class >= 1, spread > 0 (got {m}, {d}, {per_class}, {spread})"
        )));
    }
    let mut rng = stream(seed, Role::Synthetic, 0, 0);

    let corners = corner_codes(m, d, &mut rng);
    let centroids = Array2::from_shape_fn((m, d), |(c, j)| {
        let sign = if (corners[c] >> (j % 64)) & 1 == 1 { 1.0 } else { -1.0 };
        2.0 * sign
    }) + Array2::from_shape_fn((m, d), |_| rng.random_range(-0.5..0.5));

    let n = m * per_class;
    let mut features = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for c in 0..m {
        for r in 0..per_class {
            let row = c * per_class + r;
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[row, j]] = centroids[[c, j]] + spread * z;
            }
            labels.push(c);
        }
    }

    for mut col in features.columns_mut() {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        col.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.5 });
    }
    LabeledDataset::new(features, labels, m)
}

/// Distinct hypercube corners (as bit codes) when there are enough of them.
fn corner_codes(m: usize, d: usize, rng: &mut impl Rng) -> Vec<u64> {
    let bits = d.min(63);
    let available = 1u64 << bits;
    if (m as u64) <= available && bits <= 16 {
        let mut all: Vec<u64> = (0..available).collect();
        all.shuffle(rng);
        all.truncate(m);
        all
    } else {
        let mut out: Vec<u64> = Vec::with_capacity(m);
        while out.len() < m {
            let code = rng.random::<u64>() & (available - 1);
            if !out.contains(&code) || out.len() as u64 >= available {
                out.push(code);
            }
        }
        out
    }
}
