//! Field-level change sets between two snapshots.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::record::{CadastreSnapshot, TreeRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    pub field: String,
    pub old: Value,
    pub new: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modified {
    pub tree_id: String,
    pub changes: Vec<FieldChange>,
}

/// A removed and an added tree at identical coordinates; the export may
/// have renumbered the tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdChurn {
    pub removed: String,
    pub added: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub from: u64,
    pub to: u64,
    pub to_captured_at: DateTime<Utc>,
    pub added: Vec<TreeRecord>,
    pub removed: Vec<TreeRecord>,
    pub modified: Vec<Modified>,
    pub possible_id_churn: Vec<IdChurn>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    /// Changes touching one tree, for history views.
    pub fn for_tree(&self, tree_id: &str) -> Option<TreeChange> {
        if let Some(r) = self.added.iter().find(|r| r.tree_id == tree_id) {
            return Some(TreeChange::Added(r.clone()));
        }
        if let Some(r) = self.removed.iter().find(|r| r.tree_id == tree_id) {
            return Some(TreeChange::Removed(r.clone()));
        }
        self.modified
            .iter()
            .find(|m| m.tree_id == tree_id)
            .map(|m| TreeChange::Modified(m.changes.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "change", content = "detail", rename_all = "snake_case")]
pub enum TreeChange {
    Added(TreeRecord),
    Removed(TreeRecord),
    Modified(Vec<FieldChange>),
}

fn to_map(r: &TreeRecord) -> Map<String, Value> {
    match serde_json::to_value(r).expect("record serializes") {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

/// Per-field differences, sorted by field name.
pub fn record_changes(a: &TreeRecord, b: &TreeRecord) -> Vec<FieldChange> {
    let (ma, mb) = (to_map(a), to_map(b));
    ma.iter()
        .filter(|(k, v)| mb.get(*k) != Some(*v))
        .map(|(k, v)| FieldChange {
            field: k.clone(),
            old: v.clone(),
            new: mb.get(k).cloned().unwrap_or(Value::Null),
        })
        .collect()
}

pub fn snapshot_diff(a: &CadastreSnapshot, b: &CadastreSnapshot) -> ChangeSet {
    let (mut added, mut removed, mut modified) = (Vec::new(), Vec::new(), Vec::new());
    let (ra, rb) = (&a.records, &b.records);
    let (mut i, mut j) = (0, 0);
    while i < ra.len() || j < rb.len() {
        let ord = match (ra.get(i), rb.get(j)) {
            (Some(x), Some(y)) => x.tree_id.cmp(&y.tree_id),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match ord {
            std::cmp::Ordering::Less => {
                removed.push(ra[i].clone());
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                added.push(rb[j].clone());
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                let changes = record_changes(&ra[i], &rb[j]);
                if !changes.is_empty() {
                    modified.push(Modified {
                        tree_id: ra[i].tree_id.clone(),
                        changes,
                    });
                }
                i += 1;
                j += 1;
            }
        }
    }
    let mut possible_id_churn = Vec::new();
    for r in &removed {
        for n in added.iter().filter(|n| n.x == r.x && n.y == r.y) {
            possible_id_churn.push(IdChurn {
                removed: r.tree_id.clone(),
                added: n.tree_id.clone(),
            });
        }
    }
    ChangeSet {
        from: a.snapshot_id,
        to: b.snapshot_id,
        to_captured_at: b.captured_at,
        added,
        removed,
        modified,
        possible_id_churn,
    }
}

/// Replays `diff` on `a`. Every removal and old value must match `a`.
pub fn apply_diff(a: &CadastreSnapshot, diff: &ChangeSet) -> Result<CadastreSnapshot> {
    if diff.from != a.snapshot_id {
        return Err(Error::invalid(format!(
            "change set starts at S{}, snapshot is S{}",
            diff.from, a.snapshot_id
        )));
    }
    let mut records: std::collections::BTreeMap<String, TreeRecord> =
        a.records.iter().map(|r| (r.tree_id.clone(), r.clone())).collect();
    for r in &diff.removed {
        match records.remove(&r.tree_id) {
            Some(old) if old == *r => {}
            _ => return Err(Error::invalid(format!("removed tree {} does not match", r.tree_id))),
        }
    }
    for m in &diff.modified {
        let rec = records
            .get_mut(&m.tree_id)
            .ok_or_else(|| Error::invalid(format!("modified tree {} is absent", m.tree_id)))?;
        let mut map = to_map(rec);
        for c in &m.changes {
            match map.get_mut(&c.field) {
                Some(v) if *v == c.old => *v = c.new.clone(),
                _ => {
                    return Err(Error::invalid(format!(
                        "tree {}: field {} does not hold the expected old value",
                        m.tree_id, c.field
                    )))
                }
            }
        }
        *rec = serde_json::from_value(Value::Object(map))
            .map_err(|e| Error::invalid(format!("tree {}: {e}", m.tree_id)))?;
    }
    for r in &diff.added {
        if records.insert(r.tree_id.clone(), r.clone()).is_some() {
            return Err(Error::invalid(format!("added tree {} already exists", r.tree_id)));
        }
    }
    CadastreSnapshot::new(diff.to, diff.to_captured_at, records.into_values().collect())
}
