use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kmeans::nearest;
use super::{sq_dist, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Subsample size for the automatic bandwidth rule.
pub const AUTO_BANDWIDTH_SAMPLE: usize = 256;

/// Half the median pairwise distance over a seeded subsample of at most
/// 256 points.
pub fn auto_bandwidth<T: Scalar>(x: &FeatureMatrix<T>, seed: u64) -> Result<f64> {
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::invalid("mean_shift auto bandwidth needs at least two points"));
    }
    let idx: Vec<usize> = if n > AUTO_BANDWIDTH_SAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, n, AUTO_BANDWIDTH_SAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (p, &i) in idx.iter().enumerate() {
        for &j in &idx[p + 1..] {
            dists.push(sq_dist(x.row(i), x.row(j)).to_f64_lossy().sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    let h = 0.5 * median;
    if h <= 0.0 {
        return Err(Error::invalid(
            "mean_shift auto bandwidth is zero: the points are (nearly) identical",
        ));
    }
    Ok(h)
}

/// Flat-kernel mean shift seeded from every point. Modes closer than h/2 are
/// merged, larger support first; points take the label of the nearest mode.
pub fn mean_shift<T: Scalar>(x: &FeatureMatrix<T>, bandwidth: f64, max_iter: usize) -> Result<Vec<i64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    let h2 = T::from_f64_lossy(bandwidth * bandwidth);
    let tol = T::from_f64_lossy(1e-3 * bandwidth);
    let d = x.n_features();
    let modes: Vec<(Vec<T>, usize)> = (0..x.n_rows())
        .into_par_iter()
        .map(|s| {
            let mut mode = x.row(s).to_vec();
            let mut support = 0;
            for _ in 0..max_iter {
                let mut sum = vec![T::zero(); d];
                let mut count = 0usize;
                for r in x.rows() {
                    if sq_dist(r, &mode) <= h2 {
                        count += 1;
                        for (acc, &v) in sum.iter_mut().zip(r) {
                            *acc = *acc + v;
                        }
                    }
                }
                support = count;
                if count == 0 {
                    break;
                }
                let c = T::from_usize_lossy(count);
                let next: Vec<T> = sum.into_iter().map(|v| v / c).collect();
                let shift = sq_dist(&next, &mode).sqrt();
                mode = next;
                if shift < tol {
                    break;
                }
            }
            (mode, support)
        })
        .collect();
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[b].1.cmp(&modes[a].1).then(a.cmp(&b)));
    let merge2 = T::from_f64_lossy(0.25 * bandwidth * bandwidth);
    let mut kept: Vec<Vec<T>> = Vec::new();
    for i in order {
        let m = &modes[i].0;
        if kept.iter().all(|k| sq_dist(k, m) >= merge2) {
            kept.push(m.clone());
        }
    }
    Ok(x.rows().map(|r| nearest(r, &kept).0 as i64).collect())
}
