//! Tree filtering, paging and histograms.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use canopy_core::BBox;
use canopy_inventory::annotations::TreeAnnotations;
use canopy_inventory::{CadastreSnapshot, TreeRecord};
use serde::Serialize;

use crate::error::AppError;

pub const MAX_LIMIT: usize = 10_000;
pub const DEFAULT_LIMIT: usize = 100;

/// Conjunctive filters plus paging. Ranges are inclusive; trees with an
/// unknown value never match a range on that value.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeQuery {
    pub species: Option<BTreeSet<String>>,
    pub vitality: Option<(u8, u8)>,
    pub bbox: Option<BBox>,
    pub ndvi_mean: Option<(f64, f64)>,
    pub ndre_mean: Option<(f64, f64)>,
    pub snapshot_id: Option<u64>,
    pub offset: usize,
    pub limit: usize,
}

impl Default for TreeQuery {
    fn default() -> Self {
        Self {
            species: None,
            vitality: None,
            bbox: None,
            ndvi_mean: None,
            ndre_mean: None,
            snapshot_id: None,
            offset: 0,
            limit: DEFAULT_LIMIT,
        }
    }
}

/// Query-string keys understood by [`TreeQuery::from_pairs`].
pub const QUERY_KEYS: [&str; 11] = [
    "species",
    "vitality_min",
    "vitality_max",
    "bbox",
    "ndvi_min",
    "ndvi_max",
    "ndre_min",
    "ndre_max",
    "snapshot",
    "offset",
    "limit",
];

fn parse_num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T, AppError> {
    v.trim()
        .parse()
        .map_err(|_| AppError::field(field, format!("{field}: {v:?} is not a valid number")))
}

fn parse_f64(field: &str, v: &str) -> Result<f64, AppError> {
    let x: f64 = parse_num(field, v)?;
    if x.is_nan() {
        return Err(AppError::field(field, format!("{field} is NaN")));
    }
    Ok(x)
}

fn range<T: PartialOrd + Copy + std::fmt::Display>(
    name: &str,
    lo: Option<T>,
    hi: Option<T>,
    min: T,
    max: T,
) -> Result<Option<(T, T)>, AppError> {
    if lo.is_none() && hi.is_none() {
        return Ok(None);
    }
    let (lo, hi) = (lo.unwrap_or(min), hi.unwrap_or(max));
    if lo > hi {
        return Err(AppError::field(name, format!("{name} range is empty: {lo} > {hi}")));
    }
    Ok(Some((lo, hi)))
}

impl TreeQuery {
    /// Parses query-string pairs. Keys outside [`QUERY_KEYS`] and `extra`
    /// are rejected; `species` may repeat or hold a comma-separated list.
    pub fn from_pairs(pairs: &[(String, String)], extra: &[&str]) -> Result<Self, AppError> {
        let mut q = TreeQuery::default();
        let mut num: BTreeMap<&str, f64> = BTreeMap::new();
        let mut vit: BTreeMap<&str, u8> = BTreeMap::new();
        for (k, v) in pairs {
            match k.as_str() {
                "species" => {
                    let set = q.species.get_or_insert_with(BTreeSet::new);
                    set.extend(v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from));
                }
                "vitality_min" => {
                    vit.insert("min", parse_num("vitality", v)?);
                }
                "vitality_max" => {
                    vit.insert("max", parse_num("vitality", v)?);
                }
                "ndvi_min" | "ndvi_max" | "ndre_min" | "ndre_max" => {
                    let field = &k[..4];
                    num.insert(k.as_str(), parse_f64(field, v)?);
                }
                "bbox" => {
                    let parts: Vec<&str> = v.split(',').collect();
                    if parts.len() != 4 {
                        return Err(AppError::field("bbox", "bbox must be min_x,min_y,max_x,max_y"));
                    }
                    let c: Vec<f64> = parts.iter().map(|p| parse_f64("bbox", p)).collect::<Result<_, _>>()?;
                    if c[0] > c[2] || c[1] > c[3] {
                        return Err(AppError::field("bbox", "bbox minimum exceeds maximum"));
                    }
                    q.bbox = Some(BBox {
                        min_x: c[0],
                        min_y: c[1],
                        max_x: c[2],
                        max_y: c[3],
                    });
                }
                "snapshot" => {
                    q.snapshot_id = Some(
                        canopy_inventory::parse_snapshot_ref(v).map_err(|e| AppError::field("snapshot", e.to_string()))?,
                    );
                }
                "offset" => q.offset = parse_num("offset", v)?,
                "limit" => {
                    q.limit = parse_num("limit", v)?;
                    if q.limit > MAX_LIMIT {
                        return Err(AppError::field("limit", format!("limit must be <= {MAX_LIMIT}")));
                    }
                }
                other if extra.contains(&other) => {}
                other => return Err(AppError::field(other, format!("unknown parameter {other:?}"))),
            }
        }
        q.vitality = range("vitality", vit.get("min").copied(), vit.get("max").copied(), 0, u8::MAX)?;
        let get = |k: &str| num.get(k).copied();
        q.ndvi_mean = range("ndvi", get("ndvi_min"), get("ndvi_max"), f64::NEG_INFINITY, f64::INFINITY)?;
        q.ndre_mean = range("ndre", get("ndre_min"), get("ndre_max"), f64::NEG_INFINITY, f64::INFINITY)?;
        Ok(q)
    }

    pub fn matches(&self, r: &TreeRecord, a: Option<&TreeAnnotations>) -> bool {
        let within = |v: Option<f64>, range: Option<(f64, f64)>| match range {
            None => true,
            Some((lo, hi)) => v.is_some_and(|v| v >= lo && v <= hi),
        };
        self.species.as_ref().is_none_or(|s| s.contains(&r.species))
            && self
                .vitality
                .is_none_or(|(lo, hi)| r.vitality.is_some_and(|v| v >= lo && v <= hi))
            && self.bbox.is_none_or(|b| b.contains(r.x, r.y))
            && within(a.and_then(TreeAnnotations::ndvi_mean), self.ndvi_mean)
            && within(a.and_then(TreeAnnotations::ndre_mean), self.ndre_mean)
    }
}

/// One snapshot joined with the latest annotations per tree.
#[derive(Debug, Clone)]
pub struct InventoryView {
    pub snapshot: Arc<CadastreSnapshot>,
    pub annotations: Arc<BTreeMap<String, TreeAnnotations>>,
}

impl InventoryView {
    pub fn annotations_for(&self, tree_id: &str) -> Option<&TreeAnnotations> {
        self.annotations.get(tree_id)
    }

    /// Matching records in tree_id order.
    pub fn filter<'a>(&'a self, q: &'a TreeQuery) -> impl Iterator<Item = &'a TreeRecord> + 'a {
        self.snapshot
            .records
            .iter()
            .filter(move |r| q.matches(r, self.annotations_for(&r.tree_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeItem<'a> {
    pub record: &'a TreeRecord,
    pub annotations: Option<&'a TreeAnnotations>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page<'a> {
    pub snapshot_id: u64,
    pub total_count: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<TreeItem<'a>>,
}

pub fn query_trees<'a>(view: &'a InventoryView, q: &TreeQuery) -> Page<'a> {
    let mut total = 0;
    let mut items = Vec::new();
    for r in view.snapshot.records.iter() {
        let annotations = view.annotations_for(&r.tree_id);
        if !q.matches(r, annotations) {
            continue;
        }
        if total >= q.offset && items.len() < q.limit {
            items.push(TreeItem { record: r, annotations });
        }
        total += 1;
    }
    Page {
        snapshot_id: view.snapshot.snapshot_id,
        total_count: total,
        offset: q.offset,
        limit: q.limit,
        items,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramField {
    Species,
    Vitality,
    NdviMean,
}

impl HistogramField {
    pub fn parse(s: &str) -> Result<Self, AppError> {
        match s {
            "species" => Ok(Self::Species),
            "vitality" => Ok(Self::Vitality),
            "ndvi_mean" => Ok(Self::NdviMean),
            other => Err(AppError::field(
                "field",
                format!("unsupported histogram field {other:?} (species, vitality, ndvi_mean)"),
            )),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Species => "species",
            Self::Vitality => "vitality",
            Self::NdviMean => "ndvi_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub label: String,
    /// Bin edges for numeric fields; the last bin includes its upper edge.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub field: &'static str,
    pub total: usize,
    pub buckets: Vec<Bucket>,
}

/// NDVI histogram range.
pub const NDVI_RANGE: (f64, f64) = (-1.0, 1.0);

/// Histogram of the filtered trees, ignoring paging. Categorical fields list
/// only occupied buckets, sorted, with "unknown" last; numeric fields list
/// every bin over [−1, 1] and an "unknown" bucket when some trees lack a value.
pub fn stats_histogram(view: &InventoryView, q: &TreeQuery, field: HistogramField, bins: usize) -> Result<Histogram, AppError> {
    let mut total = 0;
    let mut unknown = 0;
    let buckets = match field {
        HistogramField::Species | HistogramField::Vitality => {
            let mut counts: BTreeMap<(u16, String), usize> = BTreeMap::new();
            for r in view.filter(q) {
                total += 1;
                let key = match field {
                    HistogramField::Species if r.species == canopy_inventory::record::UNKNOWN => None,
                    HistogramField::Species => Some((0, r.species.clone())),
                    _ => r.vitality.map(|v| (v as u16, v.to_string())),
                };
                match key {
                    Some(k) => *counts.entry(k).or_default() += 1,
                    None => unknown += 1,
                }
            }
            counts
                .into_iter()
                .map(|((_, label), count)| Bucket {
                    label,
                    lo: None,
                    hi: None,
                    count,
                })
                .collect::<Vec<_>>()
        }
        HistogramField::NdviMean => {
            if bins == 0 {
                return Err(AppError::field("bins", "bins must be >= 1"));
            }
            let (lo, hi) = NDVI_RANGE;
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0usize; bins];
            for r in view.filter(q) {
                total += 1;
                match view.annotations_for(&r.tree_id).and_then(TreeAnnotations::ndvi_mean) {
                    Some(v) => {
                        let b = ((v - lo) / width).floor();
                        counts[(b.max(0.0) as usize).min(bins - 1)] += 1;
                    }
                    None => unknown += 1,
                }
            }
            counts
                .into_iter()
                .enumerate()
                .map(|(i, count)| {
                    let (a, b) = (lo + i as f64 * width, if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width });
                    Bucket {
                        label: format!("[{a}, {b}{}", if i + 1 == bins { "]" } else { ")" }),
                        lo: Some(a),
                        hi: Some(b),
                        count,
                    }
                })
                .collect()
        }
    };
    let mut buckets = buckets;
    if unknown > 0 {
        buckets.push(Bucket {
            label: canopy_inventory::record::UNKNOWN.into(),
            lo: None,
            hi: None,
            count: unknown,
        });
    }
    Ok(Histogram {
        field: field.as_str(),
        total,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &[(&str, &str)]) -> Vec<(String, String)> {
        s.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn parse_filters() {
        let q = TreeQuery::from_pairs(
            &pairs(&[("species", "Tilia,Acer"), ("species", "Quercus"), ("vitality_min", "2"), ("bbox", "0,0,10,5"), ("limit", "50")]),
            &[],
        )
        .unwrap();
        assert_eq!(q.species.unwrap().len(), 3);
        assert_eq!(q.vitality, Some((2, 255)));
        assert_eq!(q.limit, 50);
    }

    #[test]
    fn malformed_inputs_name_the_field() {
        let field = |p: &[(&str, &str)]| match TreeQuery::from_pairs(&pairs(p), &[]).unwrap_err() {
            AppError::BadRequest { field, .. } => field.unwrap(),
            e => panic!("{e}"),
        };
        assert_eq!(field(&[("vitality_min", "3"), ("vitality_max", "1")]), "vitality");
        assert_eq!(field(&[("ndvi_min", "abc")]), "ndvi");
        assert_eq!(field(&[("ndre_min", "0.5"), ("ndre_max", "0.1")]), "ndre");
        assert_eq!(field(&[("bbox", "1,2,3")]), "bbox");
        assert_eq!(field(&[("limit", "10001")]), "limit");
        assert_eq!(field(&[("colour", "red")]), "colour");
        assert_eq!(field(&[("snapshot", "X")]), "snapshot");
    }
}
