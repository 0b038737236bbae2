//! Minority-class merging and inverse-frequency class weights.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::segmentation::{ClassShareTable, SegmentationMap};
use crate::error::{Error, Result};

pub const OTHER_CLASS: &str = "other";

/// Which classes survive a merge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Keep the n classes with the largest shares.
    KeepTop(usize),
    /// Keep classes whose share is at least this fraction.
    ShareThreshold(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRemap {
    /// Every input class → its output class.
    pub remap: BTreeMap<String, String>,
    /// Classes folded into "other", largest share first.
    pub merged: Vec<String>,
    pub shares: ClassShareTable,
}

impl ClassRemap {
    pub fn is_identity(&self) -> bool {
        self.remap.iter().all(|(a, b)| a == b)
    }

    pub fn apply(&self, class: &str) -> String {
        self.remap.get(class).cloned().unwrap_or_else(|| class.to_string())
    }

    pub fn remap_labels(&self, labels: &[String]) -> Vec<String> {
        labels.iter().map(|l| self.apply(l)).collect()
    }

    /// Relabel a map. Kept classes keep their ids; "other" reuses the id of
    /// a kept class of that name, else the smallest id among merged classes.
    pub fn remap_map(&self, map: &SegmentationMap) -> Result<SegmentationMap> {
        if self.merged.is_empty() {
            return Ok(map.clone());
        }
        let kept_other = map
            .class_id(OTHER_CLASS)
            .filter(|_| !self.merged.iter().any(|m| m == OTHER_CLASS));
        let other_id = match kept_other {
            Some(id) => id,
            None => map
                .classes()
                .iter()
                .filter(|(_, n)| self.merged.contains(n))
                .map(|(&id, _)| id)
                .min()
                .ok_or_else(|| Error::invalid("no merged class occurs in the map's class table"))?,
        };
        let mut id_map = BTreeMap::new();
        let mut classes = BTreeMap::new();
        for (&id, name) in map.classes() {
            let target = self.apply(name);
            if target == OTHER_CLASS {
                id_map.insert(id, other_id);
                classes.insert(other_id, OTHER_CLASS.to_string());
            } else {
                id_map.insert(id, id);
                classes.insert(id, target);
            }
        }
        let data = map
            .data()
            .iter()
            .map(|v| id_map.get(v).copied().unwrap_or(*v))
            .collect();
        SegmentationMap::new(map.width(), map.height(), data, classes, map.nodata())
    }
}

/// Fold the classes outside the cutoff into one class "other".
pub fn merge_minor_classes(shares: &ClassShareTable, rule: MergeRule) -> Result<ClassRemap> {
    let mut ranked: Vec<(&String, f64)> = shares.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let keep = match rule {
        MergeRule::KeepTop(n) => n.min(ranked.len()),
        MergeRule::ShareThreshold(t) => {
            if !t.is_finite() {
                return Err(Error::invalid("share threshold must be finite"));
            }
            ranked.iter().filter(|(_, s)| *s >= t).count()
        }
    };
    if keep == 0 {
        return Err(Error::invalid("cutoff leaves zero classes"));
    }
    let merged: Vec<String> = ranked[keep..].iter().map(|(c, _)| (*c).clone()).collect();
    let mut remap = BTreeMap::new();
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for (i, (class, share)) in ranked.iter().enumerate() {
        let target = if i < keep { (*class).clone() } else { OTHER_CLASS.to_string() };
        *out.entry(target.clone()).or_default() += share;
        remap.insert((*class).clone(), target);
    }
    Ok(ClassRemap {
        remap,
        merged,
        shares: ClassShareTable::new(out)?,
    })
}

/// Inverse-frequency weights scaled so that Σ share·weight = 1.
pub fn class_weights(shares: &ClassShareTable) -> Result<BTreeMap<String, f64>> {
    if let Some((c, _)) = shares.iter().find(|(_, s)| *s <= 0.0) {
        return Err(Error::invalid(format!("class {c:?} has zero share")));
    }
    let k = shares.len() as f64;
    Ok(shares.iter().map(|(c, s)| (c.clone(), 1.0 / (s * k))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(v: &[(&str, f64)]) -> ClassShareTable {
        ClassShareTable::new(v.iter().map(|(c, s)| (c.to_string(), *s)).collect()).unwrap()
    }

    #[test]
    fn keep_top_one() {
        let r = merge_minor_classes(&table(&[("a", 0.6), ("b", 0.4)]), MergeRule::KeepTop(1)).unwrap();
        assert_eq!(r.shares.get(OTHER_CLASS), Some(0.4));
        assert_eq!(r.merged, vec!["b"]);
        assert!(merge_minor_classes(&table(&[("a", 1.0)]), MergeRule::KeepTop(0)).is_err());
    }

    #[test]
    fn low_threshold_is_identity() {
        let r = merge_minor_classes(&table(&[("a", 0.6), ("b", 0.4)]), MergeRule::ShareThreshold(0.1)).unwrap();
        assert!(r.is_identity());
        assert!(merge_minor_classes(&table(&[("a", 0.6), ("b", 0.4)]), MergeRule::ShareThreshold(0.7)).is_err());
    }

    #[test]
    fn weights() {
        let w = class_weights(&table(&[("a", 0.75), ("b", 0.25)])).unwrap();
        assert!((w["b"] / w["a"] - 3.0).abs() < 1e-12);
        assert!((0.75 * w["a"] + 0.25 * w["b"] - 1.0).abs() < 1e-12);
        let eq = class_weights(&table(&[("a", 0.5), ("b", 0.5)])).unwrap();
        assert!(eq.values().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(class_weights(&table(&[("a", 1.0), ("b", 0.0)])).is_err());
    }

    #[test]
    fn remap_segmentation() {
        let classes = [(1, "a".to_string()), (2, "b".to_string()), (3, "c".to_string())].into();
        let m = SegmentationMap::new(4, 1, vec![1, 2, 3, 0], classes, 0).unwrap();
        let r = merge_minor_classes(&table(&[("a", 0.8), ("b", 0.15), ("c", 0.05)]), MergeRule::KeepTop(1)).unwrap();
        let out = r.remap_map(&m).unwrap();
        assert_eq!(out.data(), &[1, 2, 2, 0]);
        assert_eq!(out.classes()[&2], OTHER_CLASS);
    }
}
