//! The method-combination experiment: every (preprocess, feature source,
//! reduction, clusterer) tuple, scored over seeded repeats.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{extract_builtin_features_with, read_embeddings};
use super::pca::pca_fit_transform;
use super::{cluster, ClusterAlgorithm, ClusterParams, FeatureMatrix, FeatureSource};
use crate::chips::{csv_err, CrownChip, DEFAULT_MIN_PIXELS};
use crate::error::{Error, Result};
use crate::metrics::evaluate_clustering;
use crate::raster::{apply_clahe, denoise, ClaheParams};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Preprocess {
    #[serde(rename = "clahe")]
    Clahe,
    #[serde(rename = "clahe+denoising")]
    ClaheDenoising,
}

impl fmt::Display for Preprocess {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preprocess::Clahe => "clahe",
            Preprocess::ClaheDenoising => "clahe+denoising",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Pca,
    /// Vectors reduced elsewhere (e.g. UMAP) and read from a file.
    Imported,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Pca => "pca",
            Reduction::Imported => "imported",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Builtin,
    Embedding,
}

/// One feature source of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Embedding CSV per preprocess variant (embedding sources only).
    #[serde(default)]
    pub files: BTreeMap<Preprocess, PathBuf>,
    /// Pre-reduced vectors per preprocess variant, used by the imported reduction.
    #[serde(default)]
    pub reduced_files: BTreeMap<Preprocess, PathBuf>,
}

fn default_preprocess() -> Vec<Preprocess> {
    vec![Preprocess::Clahe, Preprocess::ClaheDenoising]
}

fn default_reductions() -> Vec<Reduction> {
    vec![Reduction::Pca]
}

fn default_clusterers() -> Vec<ClusterAlgorithm> {
    ClusterAlgorithm::ALL.to_vec()
}

fn default_pca_variance() -> f64 {
    0.95
}

fn default_side() -> usize {
    32
}

fn default_min_pixels() -> usize {
    DEFAULT_MIN_PIXELS
}

fn default_denoise_window() -> usize {
    3
}

/// Grid definition, usually read from TOML:
///
/// ```toml
/// preprocess = ["clahe", "clahe+denoising"]
/// reductions = ["pca", "imported"]
/// clusterers = ["kmeans_pp", "fuzzy_cmeans", "agglomerative", "mean_shift", "optics"]
/// pca_variance = 0.95
///
/// [[features]]
/// name = "densenet"
/// kind = "embedding"
/// files = { clahe = "emb/densenet_clahe.csv", "clahe+denoising" = "emb/densenet_dn.csv" }
/// reduced_files = { clahe = "emb/densenet_clahe_umap.csv", "clahe+denoising" = "emb/densenet_dn_umap.csv" }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default = "default_preprocess")]
    pub preprocess: Vec<Preprocess>,
    pub features: Vec<FeatureSpec>,
    #[serde(default = "default_reductions")]
    pub reductions: Vec<Reduction>,
    #[serde(default = "default_clusterers")]
    pub clusterers: Vec<ClusterAlgorithm>,
    /// Cluster count; defaults to the number of distinct ground-truth species.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_pca_variance")]
    pub pca_variance: f64,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_min_pixels")]
    pub min_pixels: usize,
    #[serde(default)]
    pub clahe: ClaheParams,
    #[serde(default = "default_denoise_window")]
    pub denoise_window: usize,
    /// Mean-shift and OPTICS settings; `k` here is ignored.
    #[serde(default)]
    pub params: ClusterParams,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("grid config: {e}")))
    }

    /// Read a TOML grid; relative file paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for f in &mut cfg.features {
            for p in f.files.values_mut().chain(f.reduced_files.values_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn n_combinations(&self) -> usize {
        self.preprocess.len() * self.features.len() * self.reductions.len() * self.clusterers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_combinations() == 0 {
            return Err(Error::invalid("empty grid"));
        }
        let names: BTreeSet<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        if names.len() != self.features.len() {
            return Err(Error::invalid("feature source names must be unique"));
        }
        for f in &self.features {
            for p in &self.preprocess {
                if f.kind == FeatureKind::Embedding && !f.files.contains_key(p) {
                    return Err(Error::invalid(format!("feature {:?} has no file for preprocess {p}", f.name)));
                }
                if self.reductions.contains(&Reduction::Imported) && !f.reduced_files.contains_key(p) {
                    return Err(Error::invalid(format!(
                        "feature {:?} has no reduced file for preprocess {p}",
                        f.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Scores of one combination over all repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterExperimentResult {
    pub preprocess: Preprocess,
    pub features: String,
    pub reduction: Reduction,
    pub clusterer: ClusterAlgorithm,
    pub k: usize,
    pub per_repeat_f1: Vec<f64>,
    pub per_repeat_weighted_f1: Vec<f64>,
    pub mean_f1: f64,
    pub mean_weighted_f1: f64,
    pub n_repeats: usize,
    /// Mean number of classes that received a cluster.
    pub mean_classes_assigned: f64,
}

fn preprocess_chip<T: Scalar>(chip: &CrownChip<T>, p: Preprocess, cfg: &GridConfig) -> Result<CrownChip<T>> {
    let r = &chip.raster;
    let params = ClaheParams {
        tile_grid: (cfg.clahe.tile_grid.0.min(r.height()), cfg.clahe.tile_grid.1.min(r.width())),
        ..cfg.clahe
    };
    let mut out = apply_clahe(r, &params)?;
    if p == Preprocess::ClaheDenoising {
        out = denoise(&out, cfg.denoise_window)?;
    }
    Ok(CrownChip {
        raster: out,
        ..chip.clone()
    })
}

fn builtin_matrix<T: Scalar>(
    ids: &[String],
    chips: &HashMap<&str, &CrownChip<T>>,
    p: Preprocess,
    cfg: &GridConfig,
) -> Result<FeatureMatrix<T>> {
    let rows = ids
        .par_iter()
        .map(|id| {
            let chip = chips
                .get(id.as_str())
                .ok_or_else(|| Error::Data(format!("no chip for crown {id:?}")))?;
            extract_builtin_features_with(&preprocess_chip(chip, p, cfg)?, cfg.side, cfg.min_pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(ids.to_vec(), rows, FeatureSource::BuiltinDescriptor)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Run the full grid. Crowns are those with a ground-truth label, processed
/// in crown-id order, so the result does not depend on the order of `chips`.
/// Repeat r of every combination uses seed `base_seed + r`. Results are
/// sorted by mean F1, best first.
pub fn run_experiment_grid<T: Scalar>(
    chips: &[CrownChip<T>],
    truth: &BTreeMap<String, String>,
    config: &GridConfig,
    n_repeats: usize,
    base_seed: u64,
) -> Result<Vec<ClusterExperimentResult>> {
    config.validate()?;
    if n_repeats == 0 {
        return Err(Error::invalid("n_repeats must be >= 1"));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no ground-truth labels"));
    }
    let ids: Vec<String> = truth.keys().cloned().collect();
    let truth_vec: Vec<String> = truth.values().cloned().collect();
    let k = match config.k {
        Some(k) => k,
        None => truth_vec.iter().collect::<BTreeSet<_>>().len(),
    };
    let chip_index: HashMap<&str, &CrownChip<T>> = chips.iter().map(|c| (c.crown_id.as_str(), c)).collect();

    let sources: Vec<(Preprocess, &FeatureSpec)> = config
        .preprocess
        .iter()
        .flat_map(|&p| config.features.iter().map(move |f| (p, f)))
        .collect();
    let reduced: Vec<((Preprocess, usize, Reduction), FeatureMatrix<T>)> = sources
        .par_iter()
        .enumerate()
        .map(|(si, &(p, spec))| {
            let fi = si % config.features.len();
            let ctx = |e: Error| Error::Data(format!("{p} / {}: {e}", spec.name));
            let full = || -> Result<FeatureMatrix<T>> {
                match spec.kind {
                    FeatureKind::Builtin => builtin_matrix(&ids, &chip_index, p, config),
                    FeatureKind::Embedding => read_embeddings::<T>(&spec.files[&p])?
                        .select(&ids)
                        .map(|m| m.with_source(FeatureSource::ImportedEmbedding(spec.name.clone()))),
                }
            };
            let mut out = Vec::new();
            let mut cached = None;
            for &r in &config.reductions {
                let m = match r {
                    Reduction::Pca => {
                        if cached.is_none() {
                            cached = Some(full().map_err(ctx)?);
                        }
                        let m = cached.as_ref().expect("just computed");
                        pca_fit_transform(m, config.pca_variance).map_err(ctx)?.1
                    }
                    Reduction::Imported => read_embeddings::<T>(&spec.reduced_files[&p])
                        .and_then(|m| m.select(&ids))
                        .map_err(ctx)?,
                };
                out.push(((p, fi, r), m));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut combos = Vec::new();
    for (mi, &((p, fi, r), _)) in reduced.iter().enumerate() {
        for &c in &config.clusterers {
            combos.push((mi, p, fi, r, c));
        }
    }
    let tasks: Vec<(usize, usize)> = (0..combos.len())
        .flat_map(|ci| (0..n_repeats).map(move |rep| (ci, rep)))
        .collect();
    let scores = tasks
        .par_iter()
        .map(|&(ci, rep)| {
            let (mi, p, fi, r, c) = combos[ci];
            let params = ClusterParams {
                k: Some(k),
                ..config.params.clone()
            };
            let run = || -> Result<(f64, f64, usize)> {
                let a = cluster(&reduced[mi].1, c, &params, base_seed + rep as u64)?;
                let (mapping, report) = evaluate_clustering(&a.labels, &truth_vec)?;
                Ok((report.macro_f1, report.weighted_f1, mapping.mapping.len()))
            };
            run().map_err(|e| Error::Data(format!("{p} / {} / {r} / {c}: {e}", config.features[fi].name)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut results: Vec<ClusterExperimentResult> = combos
        .iter()
        .enumerate()
        .map(|(ci, &(_, p, fi, r, c))| {
            let s = &scores[ci * n_repeats..(ci + 1) * n_repeats];
            let f1: Vec<f64> = s.iter().map(|x| x.0).collect();
            let wf1: Vec<f64> = s.iter().map(|x| x.1).collect();
            let assigned: Vec<f64> = s.iter().map(|x| x.2 as f64).collect();
            ClusterExperimentResult {
                preprocess: p,
                features: config.features[fi].name.clone(),
                reduction: r,
                clusterer: c,
                k,
                mean_f1: mean(&f1),
                mean_weighted_f1: mean(&wf1),
                per_repeat_f1: f1,
                per_repeat_weighted_f1: wf1,
                n_repeats,
                mean_classes_assigned: mean(&assigned),
            }
        })
        .collect();
    results.sort_by(|a, b| {
        b.mean_f1
            .total_cmp(&a.mean_f1)
            .then(b.mean_weighted_f1.total_cmp(&a.mean_weighted_f1))
            .then_with(|| {
                (a.preprocess, &a.features, a.reduction, a.clusterer).cmp(&(b.preprocess, &b.features, b.reduction, b.clusterer))
            })
    });
    Ok(results)
}

/// CSV columns `preprocess,features,reduction,clusterer,k,mean_f1,mean_weighted_f1,n_repeats`.
pub fn write_grid_report(path: impl AsRef<Path>, results: &[ClusterExperimentResult]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "preprocess",
        "features",
        "reduction",
        "clusterer",
        "k",
        "mean_f1",
        "mean_weighted_f1",
        "n_repeats",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in results {
        w.write_record([
            r.preprocess.to_string(),
            r.features.clone(),
            r.reduction.to_string(),
            r.clusterer.to_string(),
            r.k.to_string(),
            r.mean_f1.to_string(),
            r.mean_weighted_f1.to_string(),
            r.n_repeats.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
