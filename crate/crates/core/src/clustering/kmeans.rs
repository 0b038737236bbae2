use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lloyd iterations stop once no center moves farther than this.
pub const CENTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub labels: Vec<i64>,
    pub centers: Vec<Vec<T>>,
    /// Within-cluster sum of squares after every assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

/// Greedy D² seeding: the first center uniformly at random; for each further
/// one, `2 + ⌊ln k⌋` candidates are drawn with probability proportional to the
/// squared distance to the nearest chosen center and the candidate leaving the
/// smallest total squared distance is kept.
pub(crate) fn plusplus_init<T: Scalar>(x: &FeatureMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let n = x.n_rows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![x.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = x.rows().map(|r| sq_dist(r, &centers[0]).to_f64_lossy()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let target = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                d2.iter()
                    .position(|&d| {
                        acc += d;
                        acc > target
                    })
                    .unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap_or(n - 1))
            } else {
                rng.gen_range(0..n)
            };
            let c = x.row(pick);
            let next: Vec<f64> = d2.iter().zip(x.rows()).map(|(&d, r)| d.min(sq_dist(r, c).to_f64_lossy())).collect();
            let pot: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.0) {
                best = Some((pot, next, pick));
            }
        }
        let (_, next, pick) = best.expect("at least two trials");
        d2 = next;
        centers.push(x.row(pick).to_vec());
    }
    centers
}

pub(crate) fn nearest<T: Scalar>(row: &[T], centers: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(row, &centers[0]));
    for (j, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign<T: Scalar>(x: &FeatureMatrix<T>, centers: &[Vec<T>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = x
        .rows()
        .map(|r| {
            let (j, d) = nearest(r, centers);
            inertia += d.to_f64_lossy();
            j
        })
        .collect();
    (labels, inertia)
}

/// k-means++ seeding followed by Lloyd iterations. An empty cluster keeps
/// its previous center.
pub fn kmeans_pp<T: Scalar>(x: &FeatureMatrix<T>, k: usize, max_iter: usize, seed: u64) -> Result<KMeansResult<T>> {
    let n = x.n_rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plusplus_init(x, k, &mut rng);
    let d = x.n_features();
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (labels, inertia) = assign(x, &centers);
        history.push(inertia);
        let mut sums = vec![vec![T::zero(); d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in x.rows().zip(&labels) {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(r) {
                *s = *s + v;
            }
        }
        let mut shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let cnt = T::from_usize_lossy(counts[j]);
            let new: Vec<T> = sums[j].iter().map(|&s| s / cnt).collect();
            shift = shift.max(sq_dist(&new, &centers[j]).to_f64_lossy().sqrt());
            centers[j] = new;
        }
        if shift < CENTER_TOL {
            break;
        }
    }
    let (labels, inertia) = assign(x, &centers);
    history.push(inertia);
    Ok(KMeansResult {
        labels: labels.into_iter().map(|l| l as i64).collect(),
        centers,
        inertia: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::FeatureSource;

    fn matrix(points: &[[f64; 2]]) -> FeatureMatrix<f64> {
        FeatureMatrix::new(
            (0..points.len()).map(|i| format!("p{i}")).collect(),
            points.iter().map(|p| p.to_vec()).collect(),
            FeatureSource::BuiltinDescriptor,
        )
        .unwrap()
    }

    #[test]
    fn two_clumps_separate() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        let r = kmeans_pp(&matrix(&pts), 2, 300, 7).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[5]);
        assert_ne!(r.labels[0], r.labels[3]);
    }

    #[test]
    fn deterministic_per_seed() {
        let pts: Vec<[f64; 2]> = (0..30).map(|i| [(i * 7 % 11) as f64, (i * 5 % 13) as f64]).collect();
        let a = kmeans_pp(&matrix(&pts), 3, 300, 11).unwrap();
        let b = kmeans_pp(&matrix(&pts), 3, 300, 11).unwrap();
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn identical_points_do_not_panic() {
        let pts = [[1.0, 1.0]; 5];
        let r = kmeans_pp(&matrix(&pts), 3, 300, 0).unwrap();
        assert_eq!(r.labels.len(), 5);
    }
}
