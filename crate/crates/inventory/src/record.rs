//! Cadastre records and snapshots.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNKNOWN: &str = "unknown";

/// Inclusive ordinal range of vitality classes, 0 = vital.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VitalityScale {
    pub min: u8,
    pub max: u8,
}

impl Default for VitalityScale {
    fn default() -> Self {
        Self { min: 0, max: 4 }
    }
}

impl VitalityScale {
    pub fn contains(&self, v: u8) -> bool {
        (self.min..=self.max).contains(&v)
    }

    /// Parses a class label; empty and "unknown" map to `None`.
    pub fn parse(&self, s: &str) -> Result<Option<u8>> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case(UNKNOWN) {
            return Ok(None);
        }
        let v: u8 = s
            .parse()
            .map_err(|_| Error::invalid(format!("vitality {s:?} is not an integer class")))?;
        if !self.contains(v) {
            return Err(Error::invalid(format!(
                "vitality {v} outside {}..={}",
                self.min, self.max
            )));
        }
        Ok(Some(v))
    }
}

/// One tree of the cadastre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub tree_id: String,
    pub x: f64,
    pub y: f64,
    pub crs: String,
    pub species: String,
    pub height_est: Option<f64>,
    pub crown_diameter_est: Option<f64>,
    /// `None` is "unknown".
    pub vitality: Option<u8>,
    pub site_info: String,
    pub last_inspected: Option<NaiveDate>,
}

impl TreeRecord {
    /// A record with every optional field unknown.
    pub fn new(tree_id: impl Into<String>, x: f64, y: f64, crs: impl Into<String>) -> Self {
        Self {
            tree_id: tree_id.into(),
            x,
            y,
            crs: crs.into(),
            species: UNKNOWN.into(),
            height_est: None,
            crown_diameter_est: None,
            vitality: None,
            site_info: String::new(),
            last_inspected: None,
        }
    }

    pub fn validate(&self, scale: &VitalityScale) -> Result<()> {
        if self.tree_id.trim().is_empty() {
            return Err(Error::invalid("empty tree_id"));
        }
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::invalid(format!("tree {}: non-finite location", self.tree_id)));
        }
        for (name, v) in [("height_est", self.height_est), ("crown_diameter_est", self.crown_diameter_est)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::invalid(format!("tree {}: {name} = {v}", self.tree_id)));
                }
            }
        }
        if let Some(v) = self.vitality {
            if !scale.contains(v) {
                return Err(Error::invalid(format!("tree {}: vitality {v} out of range", self.tree_id)));
            }
        }
        Ok(())
    }
}

/// A committed capture of the whole cadastre. Records are sorted by tree_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadastreSnapshot {
    pub snapshot_id: u64,
    pub captured_at: DateTime<Utc>,
    pub records: Vec<TreeRecord>,
}

impl CadastreSnapshot {
    /// Sorts the records and checks per-snapshot invariants.
    pub fn new(snapshot_id: u64, captured_at: DateTime<Utc>, mut records: Vec<TreeRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));
        let dups = duplicate_ids(&records);
        if !dups.is_empty() {
            return Err(Error::DuplicateIds(dups));
        }
        Ok(Self {
            snapshot_id,
            captured_at,
            records,
        })
    }

    pub fn get(&self, tree_id: &str) -> Option<&TreeRecord> {
        self.records
            .binary_search_by(|r| r.tree_id.as_str().cmp(tree_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The byte form written to disk; equal snapshots give equal bytes.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("snapshot serializes");
        out.push(b'\n');
        out
    }
}

/// Ids occurring more than once, sorted, each listed once. Input must be sorted.
pub(crate) fn duplicate_ids(sorted: &[TreeRecord]) -> Vec<String> {
    let mut dups: Vec<String> = sorted
        .windows(2)
        .filter(|w| w[0].tree_id == w[1].tree_id)
        .map(|w| w[0].tree_id.clone())
        .collect();
    dups.dedup();
    dups
}

/// Parses "S12" or "12".
pub fn parse_snapshot_ref(s: &str) -> Result<u64> {
    let t = s.trim();
    let digits = t.strip_prefix('S').or_else(|| t.strip_prefix('s')).unwrap_or(t);
    digits
        .parse()
        .map_err(|_| Error::invalid(format!("bad snapshot id {s:?}, expected e.g. S3")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vitality_labels() {
        let s = VitalityScale::default();
        assert_eq!(s.parse("").unwrap(), None);
        assert_eq!(s.parse("Unknown").unwrap(), None);
        assert_eq!(s.parse(" 3 ").unwrap(), Some(3));
        assert!(s.parse("5").is_err());
        assert!(s.parse("x").is_err());
    }

    #[test]
    fn snapshot_sorts_and_rejects_duplicates() {
        let t = Utc::now();
        let s = CadastreSnapshot::new(1, t, vec![TreeRecord::new("b", 0.0, 0.0, "EPSG:25832"), TreeRecord::new("a", 1.0, 1.0, "EPSG:25832")])
            .unwrap();
        assert_eq!(s.records[0].tree_id, "a");
        assert!(s.get("b").is_some() && s.get("c").is_none());
        let err = CadastreSnapshot::new(1, t, vec![TreeRecord::new("a", 0.0, 0.0, ""), TreeRecord::new("a", 1.0, 1.0, "")]).unwrap_err();
        assert!(err.to_string().contains("a"));
    }

    #[test]
    fn snapshot_refs() {
        assert_eq!(parse_snapshot_ref("S12").unwrap(), 12);
        assert_eq!(parse_snapshot_ref("7").unwrap(), 7);
        assert!(parse_snapshot_ref("S").is_err());
    }
}
