use std::collections::{BTreeMap, BTreeSet};

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// True positives, false positives and false negatives of one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Per-class counts, ordered by class name.
pub type ConfusionCounts = BTreeMap<String, ClassCounts>;

/// Cluster × class counts. Noise (label −1) is kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub clusters: Vec<i64>,
    pub classes: Vec<String>,
    /// `counts[cluster][class]`.
    pub counts: Vec<Vec<u64>>,
    pub noise: Vec<u64>,
}

impl Contingency {
    pub fn build(labels: &[i64], truth: &[String]) -> Result<Self> {
        if labels.is_empty() || truth.is_empty() {
            return Err(Error::invalid("empty labels or ground truth"));
        }
        if labels.len() != truth.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} ground-truth entries",
                labels.len(),
                truth.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l < -1) {
            return Err(Error::invalid(format!("label {l} is below -1")));
        }
        let clusters: Vec<i64> = labels.iter().copied().filter(|&l| l >= 0).collect::<BTreeSet<_>>().into_iter().collect();
        let classes: Vec<String> = truth.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let ci: BTreeMap<i64, usize> = clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let ki: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut counts = vec![vec![0u64; classes.len()]; clusters.len()];
        let mut noise = vec![0u64; classes.len()];
        for (&l, t) in labels.iter().zip(truth) {
            let k = ki[t.as_str()];
            if l < 0 {
                noise[k] += 1;
            } else {
                counts[ci[&l]][k] += 1;
            }
        }
        Ok(Self {
            clusters,
            classes,
            counts,
            noise,
        })
    }

    pub fn supports(&self) -> BTreeMap<String, u64> {
        self.classes
            .iter()
            .enumerate()
            .map(|(k, c)| (c.clone(), self.noise[k] + self.counts.iter().map(|r| r[k]).sum::<u64>()))
            .collect()
    }
}

/// Maximum-weight one-to-one matching of rows to columns.
/// Returns the matched column for each row (`None` when unmatched).
pub fn optimal_assignment(weights: &[Vec<u64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let m = Matrix::from_fn(r, c, |(i, j)| {
        let w = if transpose { weights[j][i] } else { weights[i][j] };
        w as i64
    });
    let (_, assign) = kuhn_munkres(&m);
    let mut out = vec![None; rows];
    for (i, &j) in assign.iter().enumerate() {
        if transpose {
            out[j] = Some(i);
        } else {
            out[i] = Some(j);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMapping {
    /// Cluster label → class name.
    pub mapping: BTreeMap<i64, String>,
    pub counts: ConfusionCounts,
    pub supports: BTreeMap<String, u64>,
}

impl ClusterMapping {
    pub fn total_tp(&self) -> u64 {
        self.counts.values().map(|c| c.tp).sum()
    }
}

/// One-to-one cluster → class assignment maximizing total true positives.
///
/// Points of a cluster mapped to class c are predictions of c. Classes
/// without a cluster get TP = FP = 0 and FN = support; points of unmapped
/// clusters and noise count only as false negatives of their true class.
pub fn map_clusters_to_classes(labels: &[i64], truth: &[String]) -> Result<ClusterMapping> {
    let table = Contingency::build(labels, truth)?;
    let assign = optimal_assignment(&table.counts);
    let supports = table.supports();
    let mut counts: ConfusionCounts = table.classes.iter().map(|c| (c.clone(), ClassCounts::default())).collect();
    let mut mapping = BTreeMap::new();
    for (ci, col) in assign.iter().enumerate() {
        let Some(k) = *col else { continue };
        let class = &table.classes[k];
        let row = &table.counts[ci];
        let tp = row[k];
        let entry = counts.get_mut(class).expect("class present");
        entry.tp = tp;
        entry.fp = row.iter().sum::<u64>() - tp;
        mapping.insert(table.clusters[ci], class.clone());
    }
    for (class, c) in counts.iter_mut() {
        c.fn_ = supports[class] - c.tp;
    }
    Ok(ClusterMapping {
        mapping,
        counts,
        supports,
    })
}
