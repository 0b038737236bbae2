use super::{sq_dist, FeatureMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct OpticsResult {
    pub labels: Vec<i64>,
    pub ordering: Vec<usize>,
    /// Indexed by point; the first point of each component is infinite.
    pub reachability: Vec<f64>,
    pub core_distances: Vec<f64>,
    pub predecessor: Vec<Option<usize>>,
}

/// Round to 15 decimals, half to even.
fn round15(v: f64) -> f64 {
    if v.is_finite() {
        (v * 1e15).round_ties_even() / 1e15
    } else {
        v
    }
}

/// OPTICS ordering with unbounded eps followed by ξ-steep-area cluster
/// extraction (minimum cluster size = `min_samples`, predecessor correction
/// on). Points outside every extracted cluster are labelled −1.
pub fn optics<T: Scalar>(x: &FeatureMatrix<T>, min_samples: usize, xi: f64) -> Result<OpticsResult> {
    let n = x.n_rows();
    if min_samples < 2 {
        return Err(Error::invalid("optics min_samples must be >= 2"));
    }
    if min_samples > n {
        return Err(Error::invalid(format!(
            "optics min_samples = {min_samples} exceeds the {n} points"
        )));
    }
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::invalid("optics xi must lie in (0, 1)"));
    }
    let dist = |i: usize, j: usize| sq_dist(x.row(i), x.row(j)).to_f64_lossy().sqrt();
    // The point itself counts as its own nearest neighbour.
    let core: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| dist(i, j)).collect();
            d.select_nth_unstable_by(min_samples - 1, f64::total_cmp);
            round15(d[min_samples - 1])
        })
        .collect();
    let mut reach = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut processed = vec![false; n];
    let mut ordering = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = usize::MAX;
        for i in 0..n {
            if !processed[i] && (p == usize::MAX || reach[i] < reach[p]) {
                p = i;
            }
        }
        processed[p] = true;
        ordering.push(p);
        if core[p].is_finite() {
            for q in 0..n {
                if processed[q] {
                    continue;
                }
                let r = round15(dist(p, q).max(core[p]));
                if r < reach[q] {
                    reach[q] = r;
                    pred[q] = Some(p);
                }
            }
        }
    }
    let clusters = xi_clusters(&reach, &pred, &ordering, xi, min_samples, min_samples);
    let mut plot_labels = vec![-1i64; n];
    let mut next = 0;
    for &(s, e) in &clusters {
        if plot_labels[s..=e].iter().all(|&l| l == -1) {
            plot_labels[s..=e].iter_mut().for_each(|l| *l = next);
            next += 1;
        }
    }
    let mut labels = vec![-1i64; n];
    for (pos, &p) in ordering.iter().enumerate() {
        labels[p] = plot_labels[pos];
    }
    Ok(OpticsResult {
        labels,
        ordering,
        reachability: reach,
        core_distances: core,
        predecessor: pred,
    })
}

struct SteepDown {
    start: usize,
    end: usize,
    mib: f64,
}

fn extend_region(steep: &[bool], xward: &[bool], start: usize, min_samples: usize) -> usize {
    let mut non_xward = 0;
    let mut end = start;
    for index in start..steep.len() {
        if steep[index] {
            non_xward = 0;
            end = index;
        } else if !xward[index] {
            non_xward += 1;
            if non_xward > min_samples {
                break;
            }
        } else {
            return end;
        }
    }
    end
}

fn update_filter_sdas(sdas: Vec<SteepDown>, mib: f64, xi_c: f64, plot: &[f64]) -> Vec<SteepDown> {
    if mib.is_infinite() {
        return Vec::new();
    }
    sdas.into_iter()
        .filter(|d| mib <= plot[d.start] * xi_c)
        .map(|mut d| {
            d.mib = d.mib.max(mib);
            d
        })
        .collect()
}

fn correct_predecessor(
    plot: &[f64],
    pred_plot: &[Option<usize>],
    ordering: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if plot[s] > plot[e] {
            return Some((s, e));
        }
        let p_e = pred_plot[e];
        if ordering[s..e].iter().any(|&o| Some(o) == p_e) {
            return Some((s, e));
        }
        e -= 1;
    }
    None
}

/// Cluster intervals (start, end) over the reachability plot, smaller
/// clusters before the clusters enclosing them.
fn xi_clusters(
    reach: &[f64],
    pred: &[Option<usize>],
    ordering: &[usize],
    xi: f64,
    min_samples: usize,
    min_cluster_size: usize,
) -> Vec<(usize, usize)> {
    let n = ordering.len();
    let mut plot: Vec<f64> = ordering.iter().map(|&p| reach[p]).collect();
    plot.push(f64::INFINITY);
    let pred_plot: Vec<Option<usize>> = ordering.iter().map(|&p| pred[p]).collect();
    let xi_c = 1.0 - xi;
    let ratio: Vec<f64> = (0..n).map(|i| plot[i] / plot[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&r| r <= xi_c).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&r| r >= 1.0 / xi_c).collect();
    let down: Vec<bool> = ratio.iter().map(|&r| r > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&r| r < 1.0).collect();

    let mut sdas: Vec<SteepDown> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0;
    let mut mib = 0.0f64;
    for steep_index in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep_index < index {
            continue;
        }
        mib = plot[index..=steep_index].iter().fold(mib, |a, &b| a.max(b));
        if steep_down[steep_index] {
            sdas = update_filter_sdas(sdas, mib, xi_c, &plot);
            let d_end = extend_region(&steep_down, &up, steep_index, min_samples);
            sdas.push(SteepDown {
                start: steep_index,
                end: d_end,
                mib: 0.0,
            });
            index = d_end + 1;
            mib = plot[index];
        } else {
            sdas = update_filter_sdas(sdas, mib, xi_c, &plot);
            let u_start = steep_index;
            let u_end = extend_region(&steep_up, &down, u_start, min_samples);
            index = u_end + 1;
            mib = plot[index];
            let mut u_clusters = Vec::new();
            for d in &sdas {
                let mut c_start = d.start;
                let mut c_end = u_end;
                if plot[c_end + 1] * xi_c < d.mib {
                    continue;
                }
                let d_max = plot[d.start];
                if d_max * xi_c >= plot[c_end + 1] {
                    while plot[c_start + 1] > plot[c_end + 1] && c_start < d.end {
                        c_start += 1;
                    }
                } else if plot[c_end + 1] * xi_c >= d_max {
                    while plot[c_end - 1] > d_max && c_end > u_start {
                        c_end -= 1;
                    }
                }
                let Some((s, e)) = correct_predecessor(&plot, &pred_plot, ordering, c_start, c_end) else {
                    continue;
                };
                if e - s + 1 < min_cluster_size || s > d.end || e < u_start {
                    continue;
                }
                u_clusters.push((s, e));
            }
            u_clusters.reverse();
            clusters.extend(u_clusters);
        }
    }
    clusters
}
