#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use canopy_app::query::TreeQuery;
use canopy_app::tiles::{Layer, LayerKind, LayerRegistry};
use canopy_app::AppState;
use canopy_core::{GeoTransform, Raster};
use canopy_inventory::annotations::IndexStats;
use canopy_inventory::{Depth, MemoryStorage, Payload, SoilMoistureReading, Storage, Target, TreeAnnotation, TreeRecord};
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SPECIES: [&str; 5] = ["Acer platanoides", "Fagus sylvatica", "Tilia cordata", "Quercus robur", "unknown"];

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 5, 1, 8, 0, 0).unwrap()
}

pub fn records(n: usize, seed: u64) -> Vec<TreeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut r = TreeRecord::new(
                format!("T{i:04}"),
                691_000.0 + rng.gen_range(0.0..800.0),
                5_335_000.0 + rng.gen_range(0.0..800.0),
                "EPSG:25832",
            );
            r.species = SPECIES[rng.gen_range(0..SPECIES.len())].to_string();
            r.vitality = rng.gen_bool(0.8).then(|| rng.gen_range(0..=4));
            r.height_est = rng.gen_bool(0.7).then(|| (rng.gen_range(300..3000) as f64) / 100.0);
            r
        })
        .collect()
}

fn stats(mean: f64) -> IndexStats {
    IndexStats {
        count: 40,
        mean,
        median: mean,
        std: 0.05,
        min: mean - 0.1,
        max: mean + 0.1,
    }
}

/// NDVI for about 70% of the trees, NDRE for half, and a superseded NDVI
/// value for some so that only the latest may count.
pub fn annotations(records: &[TreeRecord], seed: u64) -> Vec<TreeAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for r in records {
        let ann = |payload, hours| TreeAnnotation {
            target: Target::TreeId(r.tree_id.clone()),
            payload,
            produced_at: t0() + Duration::hours(hours),
            producer: "fixture".into(),
        };
        if rng.gen_bool(0.7) {
            if rng.gen_bool(0.2) {
                out.push(ann(Payload::NdviStats(stats(-0.9)), 1));
            }
            out.push(ann(Payload::NdviStats(stats(rng.gen_range(-1.0..=1.0))), 2));
        }
        if rng.gen_bool(0.5) {
            out.push(ann(Payload::NdreStats(stats(rng.gen_range(-0.5..0.8))), 2));
        }
    }
    out
}

pub fn readings() -> Vec<SoilMoistureReading> {
    let mut out = Vec::new();
    for h in 0..6 {
        for (k, depth) in [Depth::D1, Depth::D2, Depth::D3].into_iter().enumerate() {
            out.push(SoilMoistureReading {
                sensor_id: "S-7".into(),
                timestamp: t0() + Duration::hours(h),
                depth,
                vwc: 20.0 + h as f64 + k as f64 * 5.0,
            });
        }
    }
    out
}

/// NDVI layer in web mercator around 11.6°E 48.1°N, 2 m pixels, a smooth field.
pub fn ndvi_layer() -> Layer {
    let (w, h) = (1000, 1000);
    let (x0, y0) = (1_291_000.0, 6_130_000.0);
    let data: Vec<f32> = (0..w * h)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            (0.9 * (c / 140.0).sin() * (r / 190.0).cos()) as f32
        })
        .collect();
    let raster = Raster::single("ndvi", w, h, data, Some(f32::NAN), GeoTransform::north_up(x0, y0, 2.0), "EPSG:3857")
        .unwrap();
    Layer::new("ndvi", LayerKind::Ndvi, raster, None).unwrap()
}

/// Tile (z, x, y) fully inside the fixture layer.
pub const INSIDE_TILE: (u32, u32, u32) = (15, 17440, 11372);

pub fn store(n: usize) -> Arc<MemoryStorage> {
    let store = Arc::new(MemoryStorage::new());
    let recs = records(n, 5);
    store.commit_snapshot(t0(), recs.clone()).unwrap();
    store.append_annotations(&annotations(&recs, 6)).unwrap();
    store.add_readings(readings()).unwrap();
    store
}

pub fn state(n: usize) -> AppState {
    let mut layers = LayerRegistry::new();
    layers.insert(ndvi_layer());
    AppState::new(store(n), layers)
}

/// Straightforward filter over all records, independent of the query module.
pub fn linear_scan(recs: &[TreeRecord], anns: &[TreeAnnotation], q: &TreeQuery) -> Vec<String> {
    let latest = |id: &str, ndvi: bool| -> Option<f64> {
        anns.iter()
            .filter(|a| a.tree_id() == Some(id))
            .filter_map(|a| match (&a.payload, ndvi) {
                (Payload::NdviStats(s), true) | (Payload::NdreStats(s), false) => Some((a.produced_at, s.mean)),
                _ => None,
            })
            .max_by_key(|(t, _)| *t)
            .map(|(_, m)| m)
    };
    let in_range = |v: Option<f64>, r: Option<(f64, f64)>| r.is_none_or(|(lo, hi)| v.is_some_and(|v| lo <= v && v <= hi));
    let mut ids: Vec<String> = recs
        .iter()
        .filter(|r| q.species.as_ref().is_none_or(|s: &BTreeSet<String>| s.contains(&r.species)))
        .filter(|r| q.vitality.is_none_or(|(lo, hi)| r.vitality.is_some_and(|v| lo <= v && v <= hi)))
        .filter(|r| {
            q.bbox
                .is_none_or(|b| b.min_x <= r.x && r.x <= b.max_x && b.min_y <= r.y && r.y <= b.max_y)
        })
        .filter(|r| in_range(latest(&r.tree_id, true), q.ndvi_mean))
        .filter(|r| in_range(latest(&r.tree_id, false), q.ndre_mean))
        .map(|r| r.tree_id.clone())
        .collect();
    ids.sort();
    ids
}

/// Query-string pairs for a random filter combination.
pub fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let mut p = Vec::new();
    let mut put = |k: &str, v: String| p.push((k.to_string(), v));
    if rng.gen_bool(0.4) {
        let a = SPECIES[rng.gen_range(0..SPECIES.len())];
        let b = SPECIES[rng.gen_range(0..SPECIES.len())];
        put("species", format!("{a},{b}"));
    }
    if rng.gen_bool(0.4) {
        let lo = rng.gen_range(0..=4);
        put("vitality_min", lo.to_string());
        if rng.gen_bool(0.5) {
            put("vitality_max", rng.gen_range(lo..=4).to_string());
        }
    }
    if rng.gen_bool(0.3) {
        let x = 691_000.0 + rng.gen_range(0.0..500.0);
        let y = 5_335_000.0 + rng.gen_range(0.0..500.0);
        put("bbox", format!("{x},{y},{},{}", x + 300.0, y + 300.0));
    }
    if rng.gen_bool(0.4) {
        let lo: f64 = rng.gen_range(-1.0..0.5);
        put("ndvi_min", format!("{lo:.2}"));
        put("ndvi_max", format!("{:.2}", lo + 0.5));
    }
    if rng.gen_bool(0.2) {
        put("ndre_max", "0.3".into());
    }
    p
}
