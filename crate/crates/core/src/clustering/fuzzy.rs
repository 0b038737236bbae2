use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::plusplus_init;
use super::{sq_dist, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Iteration stops once no membership changes by this much or more.
pub const MEMBERSHIP_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct FuzzyResult<T> {
    pub labels: Vec<i64>,
    /// n × k, rows sum to one.
    pub memberships: Vec<Vec<f64>>,
    pub centers: Vec<Vec<T>>,
    pub iterations: usize,
}

/// Memberships for fuzzifier m = 2: u_ij = 1 / Σ_l d²_ij / d²_il. A point
/// sitting on one or more centers is shared equally among those centers.
fn memberships<T: Scalar>(x: &FeatureMatrix<T>, centers: &[Vec<T>]) -> Vec<Vec<f64>> {
    x.rows()
        .map(|r| {
            let d2: Vec<f64> = centers.iter().map(|c| sq_dist(r, c).to_f64_lossy()).collect();
            let zeros = d2.iter().filter(|&&d| d == 0.0).count();
            if zeros > 0 {
                return d2
                    .iter()
                    .map(|&d| if d == 0.0 { 1.0 / zeros as f64 } else { 0.0 })
                    .collect();
            }
            let inv: Vec<f64> = d2.iter().map(|d| 1.0 / d).collect();
            let s: f64 = inv.iter().sum();
            inv.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn argmax(row: &[f64]) -> i64 {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best as i64
}

/// Fuzzy c-means with fuzzifier 2, started from k-means++ centers.
pub fn fuzzy_cmeans<T: Scalar>(x: &FeatureMatrix<T>, k: usize, max_iter: usize, seed: u64) -> Result<FuzzyResult<T>> {
    let n = x.n_rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plusplus_init(x, k, &mut rng);
    let mut u = memberships(x, &centers);
    let d = x.n_features();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        for (j, center) in centers.iter_mut().enumerate() {
            let mut num = vec![0.0f64; d];
            let mut den = 0.0;
            for (r, ui) in x.rows().zip(&u) {
                let w = ui[j] * ui[j];
                den += w;
                for (acc, &v) in num.iter_mut().zip(r) {
                    *acc += w * v.to_f64_lossy();
                }
            }
            if den > 0.0 {
                *center = num.into_iter().map(|v| T::from_f64_lossy(v / den)).collect();
            }
        }
        let next = memberships(x, &centers);
        let change = u
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        u = next;
        if change < MEMBERSHIP_TOL {
            break;
        }
    }
    Ok(FuzzyResult {
        labels: u.iter().map(|r| argmax(r)).collect(),
        memberships: u,
        centers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::FeatureSource;

    #[test]
    fn rows_sum_to_one_and_labels_are_argmax() {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| vec![(i % 3) as f64 * 5.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let x = FeatureMatrix::new(
            (0..24).map(|i| i.to_string()).collect(),
            rows,
            FeatureSource::BuiltinDescriptor,
        )
        .unwrap();
        let r = fuzzy_cmeans(&x, 3, 300, 3).unwrap();
        for (row, &l) in r.memberships.iter().zip(&r.labels) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert_eq!(argmax(row), l);
        }
    }
}
