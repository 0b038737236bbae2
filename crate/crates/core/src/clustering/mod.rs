//! Unsupervised species clustering: crown descriptors, PCA reduction, five
//! clustering algorithms and the method-combination experiment grid.

mod agglomerative;
pub mod features;
mod fuzzy;
pub mod grid;
mod kmeans;
mod mean_shift;
mod optics;
pub mod pca;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use agglomerative::{ward_linkage, Merge};
pub use features::{
    extract_builtin_features, extract_builtin_features_with, import_embeddings, read_embeddings,
    builtin_feature_len, GRADIENT_BINS, HIST_BINS, MOMENTS_PER_BAND,
};
pub use fuzzy::{fuzzy_cmeans, FuzzyResult};
pub use grid::{
    run_experiment_grid, write_grid_report, ClusterExperimentResult, FeatureSpec, GridConfig,
    Preprocess, Reduction,
};
pub use kmeans::{kmeans_pp, KMeansResult};
pub use mean_shift::{auto_bandwidth, mean_shift};
pub use optics::{optics, OpticsResult};
pub use pca::{pca_fit_transform, ReductionModel};

/// Where a feature matrix came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    BuiltinDescriptor,
    ImportedEmbedding(String),
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSource::BuiltinDescriptor => f.write_str("builtin"),
            FeatureSource::ImportedEmbedding(name) => f.write_str(name),
        }
    }
}

/// Row-major n_crowns × n_features matrix keyed by crown id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    crown_ids: Vec<String>,
    data: Vec<T>,
    n_features: usize,
    source: FeatureSource,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(crown_ids: Vec<String>, rows: Vec<Vec<T>>, source: FeatureSource) -> Result<Self> {
        let n_features = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n_features) {
            return Err(Error::Data(format!(
                "row {i} has {} features, expected {n_features}",
                r.len()
            )));
        }
        Self::from_flat(crown_ids, rows.concat(), n_features, source)
    }

    pub fn from_flat(
        crown_ids: Vec<String>,
        data: Vec<T>,
        n_features: usize,
        source: FeatureSource,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Data("feature matrix needs at least one feature".into()));
        }
        if data.len() != crown_ids.len() * n_features {
            return Err(Error::Data(format!(
                "{} crown ids but {} values for {n_features} features",
                crown_ids.len(),
                data.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, id) in crown_ids.iter().enumerate() {
            if let Some(prev) = seen.insert(id.as_str(), i) {
                return Err(Error::Data(format!("duplicate crown id {id:?} (rows {prev} and {i})")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / n_features,
                pos % n_features
            )));
        }
        Ok(Self {
            crown_ids,
            data,
            n_features,
            source,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.crown_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn crown_ids(&self) -> &[String] {
        &self.crown_ids
    }

    pub fn source(&self) -> &FeatureSource {
        &self.source
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.n_features)
    }

    /// Rows for `ids`, in that order. Unknown ids are an error naming the id.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let index: HashMap<&str, usize> = self
            .crown_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut data = Vec::with_capacity(ids.len() * self.n_features);
        for id in ids {
            let &i = index
                .get(id.as_str())
                .ok_or_else(|| Error::Data(format!("crown id {id:?} has no feature row")))?;
            data.extend_from_slice(self.row(i));
        }
        Self::from_flat(ids.to_vec(), data, self.n_features, self.source.clone())
    }

    pub fn with_source(mut self, source: FeatureSource) -> Self {
        self.source = source;
        self
    }

    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            crown_ids: self.crown_ids.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
            n_features: self.n_features,
            source: self.source.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAlgorithm {
    KmeansPp,
    MeanShift,
    FuzzyCmeans,
    Agglomerative,
    Optics,
}

impl ClusterAlgorithm {
    pub const ALL: [ClusterAlgorithm; 5] = [
        ClusterAlgorithm::KmeansPp,
        ClusterAlgorithm::MeanShift,
        ClusterAlgorithm::FuzzyCmeans,
        ClusterAlgorithm::Agglomerative,
        ClusterAlgorithm::Optics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterAlgorithm::KmeansPp => "kmeans_pp",
            ClusterAlgorithm::MeanShift => "mean_shift",
            ClusterAlgorithm::FuzzyCmeans => "fuzzy_cmeans",
            ClusterAlgorithm::Agglomerative => "agglomerative",
            ClusterAlgorithm::Optics => "optics",
        }
    }

    /// Whether the algorithm takes a cluster count.
    pub fn uses_k(self) -> bool {
        matches!(
            self,
            ClusterAlgorithm::KmeansPp | ClusterAlgorithm::FuzzyCmeans | ClusterAlgorithm::Agglomerative
        )
    }
}

impl fmt::Display for ClusterAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown clusterer {s:?}")))
    }
}

/// Mean-shift bandwidth: a fixed radius or the data-driven rule.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Bandwidth {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Auto => s.serialize_str("auto"),
            Bandwidth::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Bandwidth::Fixed(v)),
            Repr::Text(t) if t == "auto" => Ok(Bandwidth::Auto),
            Repr::Text(t) => t
                .parse()
                .map(Bandwidth::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("bad bandwidth {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    /// Cluster count for kmeans_pp, fuzzy_cmeans and agglomerative.
    pub k: Option<usize>,
    pub bandwidth: Bandwidth,
    pub min_samples: usize,
    pub xi: f64,
    pub max_iter: usize,
    /// kmeans_pp restarts; the run with the lowest inertia is kept.
    pub n_init: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: None,
            bandwidth: Bandwidth::Auto,
            min_samples: 5,
            xi: 0.05,
            max_iter: 300,
            n_init: 10,
        }
    }
}

impl ClusterParams {
    pub fn with_k(k: usize) -> Self {
        Self {
            k: Some(k),
            ..Self::default()
        }
    }
}

/// Labels per crown; `-1` marks noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub crown_ids: Vec<String>,
    pub labels: Vec<i64>,
    pub algorithm: ClusterAlgorithm,
    pub params: ClusterParams,
    pub memberships: Option<Vec<Vec<f64>>>,
}

impl ClusterAssignment {
    /// Distinct non-noise labels.
    pub fn n_clusters(&self) -> usize {
        self.labels.iter().filter(|&&l| l >= 0).collect::<BTreeSet<_>>().len()
    }
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Run one clustering algorithm. Deterministic for a given `seed`.
pub fn cluster<T: Scalar>(
    features: &FeatureMatrix<T>,
    algorithm: ClusterAlgorithm,
    params: &ClusterParams,
    seed: u64,
) -> Result<ClusterAssignment> {
    let n = features.n_rows();
    if n == 0 {
        return Err(Error::invalid("no feature rows to cluster"));
    }
    let need_k = || -> Result<usize> {
        let k = params
            .k
            .ok_or_else(|| Error::invalid(format!("{algorithm} needs k")))?;
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if k > n {
            return Err(Error::invalid(format!("k = {k} exceeds the {n} crowns")));
        }
        Ok(k)
    };
    let mut memberships = None;
    let labels = match algorithm {
        ClusterAlgorithm::KmeansPp => {
            let k = need_k()?;
            if params.n_init == 0 {
                return Err(Error::invalid("n_init must be >= 1"));
            }
            let mut best: Option<kmeans::KMeansResult<T>> = None;
            for i in 0..params.n_init as u64 {
                let run = kmeans_pp(features, k, params.max_iter, seed.wrapping_mul(1_000_003).wrapping_add(i))?;
                let inertia = *run.inertia.last().expect("one assignment at least");
                if best.as_ref().is_none_or(|b| inertia < *b.inertia.last().unwrap()) {
                    best = Some(run);
                }
            }
            best.expect("n_init >= 1").labels
        }
        ClusterAlgorithm::FuzzyCmeans => {
            let r = fuzzy_cmeans(features, need_k()?, params.max_iter, seed)?;
            memberships = Some(r.memberships);
            r.labels
        }
        ClusterAlgorithm::Agglomerative => agglomerative::ward_cut(features, need_k()?)?,
        ClusterAlgorithm::MeanShift => {
            let h = match params.bandwidth {
                Bandwidth::Auto => auto_bandwidth(features, seed)?,
                Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
                Bandwidth::Fixed(h) => {
                    return Err(Error::invalid(format!("bandwidth must be > 0, got {h}")))
                }
            };
            mean_shift(features, h, params.max_iter)?
        }
        ClusterAlgorithm::Optics => optics(features, params.min_samples, params.xi)?.labels,
    };
    Ok(ClusterAssignment {
        crown_ids: features.crown_ids().to_vec(),
        labels,
        algorithm,
        params: params.clone(),
        memberships,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_validation() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let err = FeatureMatrix::new(ids.clone(), vec![vec![1.0, f64::NAN], vec![0.0, 0.0]], FeatureSource::BuiltinDescriptor)
            .unwrap_err();
        assert!(err.to_string().contains("row 0, column 1"), "{err}");
        let dup = vec!["a".to_string(), "a".to_string()];
        assert!(FeatureMatrix::new(dup, vec![vec![1.0], vec![2.0]], FeatureSource::BuiltinDescriptor).is_err());
        let m = FeatureMatrix::new(ids, vec![vec![1.0f32], vec![2.0]], FeatureSource::BuiltinDescriptor).unwrap();
        let s = m.select(&["b".to_string(), "a".to_string()]).unwrap();
        assert_eq!(s.data(), &[2.0, 1.0]);
        assert!(m.select(&["zz".to_string()]).unwrap_err().to_string().contains("zz"));
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for a in ClusterAlgorithm::ALL {
            assert_eq!(a.as_str().parse::<ClusterAlgorithm>().unwrap(), a);
        }
        assert!("dbscan".parse::<ClusterAlgorithm>().is_err());
    }

    #[test]
    fn bandwidth_parses() {
        #[derive(Deserialize)]
        struct W {
            b: Bandwidth,
        }
        assert_eq!(toml::from_str::<W>("b = \"auto\"").unwrap().b, Bandwidth::Auto);
        assert_eq!(toml::from_str::<W>("b = 1.5").unwrap().b, Bandwidth::Fixed(1.5));
    }

    #[test]
    fn k_checks() {
        let m = FeatureMatrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.0], vec![1.0]],
            FeatureSource::BuiltinDescriptor,
        )
        .unwrap();
        assert!(cluster(&m, ClusterAlgorithm::KmeansPp, &ClusterParams::with_k(3), 0).is_err());
        assert!(cluster(&m, ClusterAlgorithm::KmeansPp, &ClusterParams::default(), 0).is_err());
        let one = cluster(&m, ClusterAlgorithm::KmeansPp, &ClusterParams::with_k(1), 0).unwrap();
        assert_eq!(one.labels, vec![0, 0]);
    }
}
