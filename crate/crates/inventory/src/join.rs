//! Linking delineated crowns to cadastre trees.

use std::collections::HashMap;

use canopy_core::geometry::crs_compatible;
use canopy_core::CrownCollection;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::record::CadastreSnapshot;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Match {
    pub tree_id: String,
    pub crown_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JoinResult {
    pub matches: Vec<Match>,
    pub unmatched_trees: Vec<String>,
    pub unmatched_crowns: Vec<String>,
}

/// Greedy mutual-nearest matching of tree locations to crown centroids.
///
/// Candidate pairs closer than `max_dist` are taken shortest first (ties by
/// tree id, then crown order); each pair taken is mutually nearest among the
/// trees and crowns still free. This is approximate: the total distance is
/// not minimized globally.
pub fn join_predictions(snapshot: &CadastreSnapshot, crowns: &CrownCollection, max_dist: f64) -> Result<JoinResult> {
    if !(max_dist >= 0.0 && max_dist.is_finite()) {
        return Err(Error::invalid(format!("max_dist must be finite and >= 0, got {max_dist}")));
    }
    if let Some(r) = snapshot.records.iter().find(|r| !crs_compatible(&r.crs, &crowns.crs)) {
        return Err(Error::CrsMismatch(r.crs.clone(), crowns.crs.clone()));
    }
    let centroids: Vec<(f64, f64)> = crowns.crowns().iter().map(|c| c.centroid()).collect();
    // Grid hash with cell = max_dist, so candidates lie in the 3×3 neighbourhood.
    let cell = if max_dist > 0.0 { max_dist } else { 1.0 };
    let key = |x: f64, y: f64| ((x / cell).floor() as i64, (y / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, &(x, y)) in centroids.iter().enumerate() {
        grid.entry(key(x, y)).or_default().push(j);
    }
    let mut edges: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in snapshot.records.iter().enumerate() {
        let (kx, ky) = key(r.x, r.y);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for &j in grid.get(&(kx + dx, ky + dy)).into_iter().flatten() {
                    let d = (r.x - centroids[j].0).hypot(r.y - centroids[j].1);
                    if d <= max_dist {
                        edges.push((d, i, j));
                    }
                }
            }
        }
    }
    // Records are sorted by tree_id, so index order is id order.
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut tree_used = vec![false; snapshot.records.len()];
    let mut crown_used = vec![false; centroids.len()];
    let mut matches = Vec::new();
    for (d, i, j) in edges {
        if tree_used[i] || crown_used[j] {
            continue;
        }
        tree_used[i] = true;
        crown_used[j] = true;
        matches.push(Match {
            tree_id: snapshot.records[i].tree_id.clone(),
            crown_id: crowns.crowns()[j].crown_id.clone(),
            distance: d,
        });
    }
    matches.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));
    Ok(JoinResult {
        matches,
        unmatched_trees: snapshot
            .records
            .iter()
            .zip(&tree_used)
            .filter(|(_, u)| !**u)
            .map(|(r, _)| r.tree_id.clone())
            .collect(),
        unmatched_crowns: crowns
            .crowns()
            .iter()
            .zip(&crown_used)
            .filter(|(_, u)| !**u)
            .map(|(c, _)| c.crown_id.clone())
            .collect(),
    })
}
