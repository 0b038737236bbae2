//! Model outputs attached to trees or crowns.

use std::collections::BTreeMap;
use std::path::Path;

use canopy_core::indices::ZonalStats;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    TreeId(String),
    CrownId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl From<&ZonalStats> for IndexStats {
    fn from(s: &ZonalStats) -> Self {
        Self {
            count: s.count,
            mean: s.mean,
            median: s.median,
            std: s.std,
            min: s.min,
            max: s.max,
        }
    }
}

/// The payload shape is fixed by the kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    SpeciesPrediction {
        species: String,
        cluster: Option<usize>,
    },
    NdviStats(IndexStats),
    NdreStats(IndexStats),
    VitalityPrediction {
        vitality: u8,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::SpeciesPrediction { .. } => "species_prediction",
            Payload::NdviStats(_) => "ndvi_stats",
            Payload::NdreStats(_) => "ndre_stats",
            Payload::VitalityPrediction { .. } => "vitality_prediction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeAnnotation {
    pub target: Target,
    #[serde(flatten)]
    pub payload: Payload,
    pub produced_at: DateTime<Utc>,
    pub producer: String,
}

impl TreeAnnotation {
    pub fn tree_id(&self) -> Option<&str> {
        match &self.target {
            Target::TreeId(t) => Some(t),
            Target::CrownId(_) => None,
        }
    }
}

/// Latest annotation of each kind, per tree.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TreeAnnotations {
    pub species_prediction: Option<TreeAnnotation>,
    pub ndvi_stats: Option<TreeAnnotation>,
    pub ndre_stats: Option<TreeAnnotation>,
    pub vitality_prediction: Option<TreeAnnotation>,
}

impl TreeAnnotations {
    fn slot(&mut self, p: &Payload) -> &mut Option<TreeAnnotation> {
        match p {
            Payload::SpeciesPrediction { .. } => &mut self.species_prediction,
            Payload::NdviStats(_) => &mut self.ndvi_stats,
            Payload::NdreStats(_) => &mut self.ndre_stats,
            Payload::VitalityPrediction { .. } => &mut self.vitality_prediction,
        }
    }

    pub fn ndvi_mean(&self) -> Option<f64> {
        match self.ndvi_stats.as_ref().map(|a| &a.payload) {
            Some(Payload::NdviStats(s)) => Some(s.mean),
            _ => None,
        }
    }

    pub fn ndre_mean(&self) -> Option<f64> {
        match self.ndre_stats.as_ref().map(|a| &a.payload) {
            Some(Payload::NdreStats(s)) => Some(s.mean),
            _ => None,
        }
    }
}

/// Folds a log into the latest annotation per (tree, kind). Later
/// `produced_at` wins; equal times go to the later log entry.
pub fn latest_by_tree(log: &[TreeAnnotation]) -> BTreeMap<String, TreeAnnotations> {
    let mut out: BTreeMap<String, TreeAnnotations> = BTreeMap::new();
    for a in log {
        let Some(id) = a.tree_id() else { continue };
        let slot = out.entry(id.to_string()).or_default().slot(&a.payload);
        if slot.as_ref().is_none_or(|old| old.produced_at <= a.produced_at) {
            *slot = Some(a.clone());
        }
    }
    out
}

/// Retargets crown annotations through a crown → tree map; others pass through.
pub fn link_to_trees(annotations: Vec<TreeAnnotation>, crown_to_tree: &BTreeMap<String, String>) -> Vec<TreeAnnotation> {
    annotations
        .into_iter()
        .map(|mut a| {
            if let Target::CrownId(c) = &a.target {
                if let Some(t) = crown_to_tree.get(c) {
                    a.target = Target::TreeId(t.clone());
                }
            }
            a
        })
        .collect()
}

/// Reads a JSON-lines annotation file. A trailing line without a newline is
/// an interrupted append and is ignored.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TreeAnnotation>> {
    let path = path.as_ref();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Row {
                path: path.into(),
                row: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Annotations from a zonal statistics CSV; `kind` is ndvi_stats or ndre_stats.
pub fn from_stats(stats: &[ZonalStats], kind: &str, producer: &str, produced_at: DateTime<Utc>) -> Result<Vec<TreeAnnotation>> {
    stats
        .iter()
        .map(|s| {
            let payload = match kind {
                "ndvi_stats" => Payload::NdviStats(s.into()),
                "ndre_stats" => Payload::NdreStats(s.into()),
                other => return Err(Error::invalid(format!("stats cannot become {other} annotations"))),
            };
            Ok(TreeAnnotation {
                target: Target::CrownId(s.crown_id.clone()),
                payload,
                produced_at,
                producer: producer.into(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ann(tree: &str, t: i64, species: &str) -> TreeAnnotation {
        TreeAnnotation {
            target: Target::TreeId(tree.into()),
            payload: Payload::SpeciesPrediction {
                species: species.into(),
                cluster: Some(2),
            },
            produced_at: Utc.timestamp_opt(t, 0).unwrap(),
            producer: "test".into(),
        }
    }

    #[test]
    fn json_shape() {
        let v = serde_json::to_value(ann("t1", 0, "Tilia")).unwrap();
        assert_eq!(v["target"]["tree_id"], "t1");
        assert_eq!(v["kind"], "species_prediction");
        assert_eq!(v["payload"]["species"], "Tilia");
        let back: TreeAnnotation = serde_json::from_value(v).unwrap();
        assert_eq!(back, ann("t1", 0, "Tilia"));
    }

    #[test]
    fn latest_wins() {
        let log = vec![ann("t1", 5, "Acer"), ann("t1", 3, "Tilia"), ann("t1", 5, "Quercus")];
        let m = latest_by_tree(&log);
        match &m["t1"].species_prediction.as_ref().unwrap().payload {
            Payload::SpeciesPrediction { species, .. } => assert_eq!(species, "Quercus"),
            _ => unreachable!(),
        }
    }
}
