use super::{sq_dist, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One dendrogram step. `a` and `b` are the representative point indices of
/// the two merged clusters; the merged cluster is represented by `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Ward distance sqrt(2·n_a·n_b/(n_a+n_b))·‖c_a − c_b‖, made monotone.
    pub height: f64,
    pub size: usize,
}

/// Ward linkage by the nearest-neighbour chain algorithm with Lance-Williams
/// updates on squared distances. Merges are returned sorted by height.
pub fn ward_linkage<T: Scalar>(x: &FeatureMatrix<T>) -> Vec<Merge> {
    let n = x.n_rows();
    let mut d = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = sq_dist(x.row(i), x.row(j)).to_f64_lossy();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut level = vec![0.0f64; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster"));
        }
        let (a, b) = loop {
            let a = *chain.last().expect("chain is non-empty");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[a * n + p]);
            for j in 0..n {
                if j != a && active[j] && d[a * n + j] < best_d {
                    best = Some(j);
                    best_d = d[a * n + j];
                }
            }
            let b = best.expect("at least two active clusters");
            if Some(b) == prev {
                chain.truncate(chain.len() - 2);
                break (a.min(b), a.max(b));
            }
            chain.push(b);
        };
        let dab = d[a * n + b];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((na + nk) * d[a * n + k] + (nb + nk) * d[b * n + k] - nk * dab) / (na + nb + nk);
            d[a * n + k] = v;
            d[k * n + a] = v;
        }
        let height = dab.max(0.0).sqrt().max(level[a]).max(level[b]);
        active[b] = false;
        size[a] += size[b];
        level[a] = height;
        remaining -= 1;
        merges.push(Merge {
            a,
            b,
            height,
            size: size[a],
        });
    }
    merges.sort_by(|p, q| p.height.total_cmp(&q.height));
    merges
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Labels from applying the n − k lowest merges; cluster ids are numbered
/// in order of first appearance.
pub fn cut(n: usize, merges: &[Merge], k: usize) -> Vec<i64> {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in merges.iter().take(n.saturating_sub(k)) {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[rb] = ra;
    }
    let mut ids = vec![-1i64; n];
    let mut labels = vec![0i64; n];
    let mut next = 0;
    for i in 0..n {
        let r = find(&mut parent, i);
        if ids[r] < 0 {
            ids[r] = next;
            next += 1;
        }
        labels[i] = ids[r];
    }
    labels
}

pub(crate) fn ward_cut<T: Scalar>(x: &FeatureMatrix<T>, k: usize) -> Result<Vec<i64>> {
    if k == 0 || k > x.n_rows() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", x.n_rows())));
    }
    Ok(cut(x.n_rows(), &ward_linkage(x), k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::FeatureSource;

    fn m(points: &[f64]) -> FeatureMatrix<f64> {
        FeatureMatrix::new(
            (0..points.len()).map(|i| i.to_string()).collect(),
            points.iter().map(|&p| vec![p]).collect(),
            FeatureSource::BuiltinDescriptor,
        )
        .unwrap()
    }

    #[test]
    fn one_dimensional_heights() {
        // Ward height of two singletons is their distance.
        let merges = ward_linkage(&m(&[0.0, 1.0, 10.0]));
        assert_eq!(merges.len(), 2);
        assert!((merges[0].height - 1.0).abs() < 1e-12);
        // {0,1} vs {10}: sqrt(2·2·1/3)·9.5
        assert!((merges[1].height - (4.0f64 / 3.0).sqrt() * 9.5).abs() < 1e-12);
    }

    #[test]
    fn endpoints() {
        let x = m(&[0.0, 1.0, 3.0, 7.0, 15.0]);
        assert_eq!(ward_cut(&x, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(ward_cut(&x, 1).unwrap(), vec![0; 5]);
        assert!(ward_cut(&x, 6).is_err());
    }
}
