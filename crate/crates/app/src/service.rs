//! HTTP routes.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use canopy_inventory::annotations::{latest_by_tree, TreeAnnotations};
use canopy_inventory::sensors::parse_timestamp;
use canopy_inventory::store::tree_history;
use canopy_inventory::{CadastreSnapshot, Depth, Storage, TreeRecord};
use serde::Serialize;
use serde_json::{json, Value};

use crate::crs::Transformer;
use crate::error::AppError;
use crate::query::{query_trees, stats_histogram, HistogramField, InventoryView, TreeQuery};
use crate::tiles::{LayerRegistry, TileAddress};

type Result<T> = std::result::Result<T, AppError>;

#[derive(Default)]
struct Cache {
    /// Snapshots never change once committed.
    snapshots: HashMap<u64, Arc<CadastreSnapshot>>,
    annotations: Option<(u64, Arc<BTreeMap<String, TreeAnnotations>>)>,
    to_lonlat: HashMap<String, Option<Arc<Transformer>>>,
}

struct Inner {
    store: Arc<dyn Storage>,
    layers: LayerRegistry,
    cache: Mutex<Cache>,
}

/// Shared request state. Every response is a function of the store content
/// and the request.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: Arc<dyn Storage>, layers: LayerRegistry) -> Self {
        Self(Arc::new(Inner {
            store,
            layers,
            cache: Mutex::new(Cache::default()),
        }))
    }

    pub fn store(&self) -> &dyn Storage {
        self.0.store.as_ref()
    }

    pub fn layers(&self) -> &LayerRegistry {
        &self.0.layers
    }

    fn snapshot(&self, id: u64) -> Result<Arc<CadastreSnapshot>> {
        if let Some(s) = self.0.cache.lock().unwrap().snapshots.get(&id) {
            return Ok(Arc::clone(s));
        }
        let s = Arc::new(self.store().load_snapshot(id)?);
        self.0.cache.lock().unwrap().snapshots.insert(id, Arc::clone(&s));
        Ok(s)
    }

    fn annotations(&self) -> Result<Arc<BTreeMap<String, TreeAnnotations>>> {
        let version = self.store().annotations_version()?;
        if let Some((v, a)) = &self.0.cache.lock().unwrap().annotations {
            if *v == version {
                return Ok(Arc::clone(a));
            }
        }
        let log = self.store().annotations()?;
        let folded = Arc::new(latest_by_tree(&log));
        self.0.cache.lock().unwrap().annotations = Some((version, Arc::clone(&folded)));
        Ok(folded)
    }

    /// The requested snapshot, or the latest one.
    pub fn view(&self, snapshot_id: Option<u64>) -> Result<InventoryView> {
        let id = match snapshot_id {
            Some(id) => id,
            None => *self
                .store()
                .snapshot_ids()?
                .last()
                .ok_or_else(|| AppError::NotFound("the store holds no snapshot yet".into()))?,
        };
        Ok(InventoryView {
            snapshot: self.snapshot(id)?,
            annotations: self.annotations()?,
        })
    }

    fn to_lonlat(&self, crs: &str) -> Option<Arc<Transformer>> {
        let mut cache = self.0.cache.lock().unwrap();
        cache
            .to_lonlat
            .entry(crs.to_string())
            .or_insert_with(|| Transformer::new(crs, "EPSG:4326").ok().map(Arc::new))
            .clone()
    }

    /// GeoJSON feature with WGS84 point geometry; the geometry is null when
    /// the record CRS cannot be transformed.
    pub fn feature(&self, r: &TreeRecord, a: Option<&TreeAnnotations>) -> Value {
        let geometry = self
            .to_lonlat(&r.crs)
            .and_then(|t| t.apply(r.x, r.y))
            .map(|(lon, lat)| json!({ "type": "Point", "coordinates": [lon, lat] }))
            .unwrap_or(Value::Null);
        let mut props = serde_json::to_value(r).expect("record serializes");
        props["annotations"] = serde_json::to_value(a).expect("annotations serialize");
        json!({ "type": "Feature", "id": r.tree_id, "geometry": geometry, "properties": props })
    }
}

fn json_body<T: Serialize>(v: &T) -> Response {
    let bytes = serde_json::to_vec(v).expect("response serializes");
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn list_trees(State(st): State<AppState>, Query(pairs): Query<Vec<(String, String)>>) -> Result<Response> {
    let q = TreeQuery::from_pairs(&pairs, &[])?;
    let view = st.view(q.snapshot_id)?;
    let page = query_trees(&view, &q);
    let features: Vec<Value> = page.items.iter().map(|i| st.feature(i.record, i.annotations)).collect();
    Ok(json_body(&json!({
        "type": "FeatureCollection",
        "snapshot_id": page.snapshot_id,
        "total_count": page.total_count,
        "offset": page.offset,
        "limit": page.limit,
        "features": features,
    })))
}

fn only_snapshot(pairs: &[(String, String)]) -> Result<Option<u64>> {
    let mut id = None;
    for (k, v) in pairs {
        if k != "snapshot" {
            return Err(AppError::field(k, format!("unknown parameter {k:?}")));
        }
        id = Some(canopy_inventory::parse_snapshot_ref(v).map_err(|e| AppError::field("snapshot", e.to_string()))?);
    }
    Ok(id)
}

async fn get_tree(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Response> {
    let view = st.view(only_snapshot(&pairs)?)?;
    let r = view
        .snapshot
        .get(&id)
        .ok_or_else(|| AppError::NotFound(format!("tree {id:?} not in S{}", view.snapshot.snapshot_id)))?;
    let mut f = st.feature(r, view.annotations_for(&id));
    f["snapshot_id"] = view.snapshot.snapshot_id.into();
    Ok(json_body(&f))
}

async fn tree_history_route(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response> {
    let snaps: Vec<CadastreSnapshot> = st
        .store()
        .snapshot_ids()?
        .into_iter()
        .map(|i| st.snapshot(i).map(|s| (*s).clone()))
        .collect::<Result<_>>()?;
    if !snaps.iter().any(|s| s.get(&id).is_some()) {
        return Err(AppError::NotFound(format!("tree {id:?} is in no snapshot")));
    }
    let first_seen = snaps.iter().find(|s| s.get(&id).is_some()).map(|s| s.snapshot_id);
    Ok(json_body(&json!({
        "tree_id": id,
        "first_seen": first_seen,
        "history": tree_history(&snaps, &id),
    })))
}

async fn histogram(State(st): State<AppState>, Query(pairs): Query<Vec<(String, String)>>) -> Result<Response> {
    let q = TreeQuery::from_pairs(&pairs, &["field", "bins"])?;
    let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let field = HistogramField::parse(get("field").ok_or_else(|| AppError::field("field", "field is required"))?)?;
    let bins = match get("bins") {
        Some(b) => b.parse().map_err(|_| AppError::field("bins", format!("bins: {b:?} is not an integer")))?,
        None => 10,
    };
    let view = st.view(q.snapshot_id)?;
    Ok(json_body(&stats_histogram(&view, &q, field, bins)?))
}

async fn sensor_series(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Response> {
    let (mut from, mut to, mut depth) = (None, None, None);
    for (k, v) in &pairs {
        match k.as_str() {
            "from" => from = Some(parse_timestamp(v).map_err(|e| AppError::field("from", e.to_string()))?),
            "to" => to = Some(parse_timestamp(v).map_err(|e| AppError::field("to", e.to_string()))?),
            "depth" => depth = Some(v.parse::<Depth>().map_err(|e| AppError::field("depth", e.to_string()))?),
            other => return Err(AppError::field(other, format!("unknown parameter {other:?}"))),
        }
    }
    if let (Some(f), Some(t)) = (from, to) {
        if f > t {
            return Err(AppError::field("from", "from is later than to"));
        }
    }
    let all = st.store().sensor_series(&id, None, None, None)?;
    if all.is_empty() {
        return Err(AppError::NotFound(format!("no readings for sensor {id:?}")));
    }
    let readings: Vec<Value> = all
        .into_iter()
        .filter(|r| from.is_none_or(|f| r.timestamp >= f) && to.is_none_or(|t| r.timestamp < t))
        .filter(|r| depth.is_none_or(|d| r.depth == d))
        .map(|r| json!({ "timestamp": r.timestamp, "depth": r.depth, "vwc": r.vwc }))
        .collect();
    Ok(json_body(&json!({ "sensor_id": id, "readings": readings })))
}

async fn tile(State(st): State<AppState>, Path((layer, z, x, file)): Path<(String, String, String, String)>) -> Result<Response> {
    let num = |field: &str, s: &str| s.parse::<u32>().map_err(|_| AppError::field(field, format!("{field}: {s:?} is not a tile coordinate")));
    let y = file
        .strip_suffix(".png")
        .ok_or_else(|| AppError::NotFound("tiles are served as .png".into()))?;
    let addr = TileAddress::new(layer, num("z", &z)?, num("x", &x)?, num("y", y)?)?;
    if st.layers().get(&addr.layer).is_none() {
        return Err(AppError::NotFound(format!("unknown layer {:?}", addr.layer)));
    }
    let st2 = st.clone();
    let png = tokio::task::spawn_blocking(move || st2.layers().render_tile(&addr))
        .await
        .map_err(|e| AppError::Internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn layers(State(st): State<AppState>) -> Response {
    json_body(&st.layers().infos())
}

async fn not_found() -> Response {
    (StatusCode::NOT_FOUND, axum::Json(json!({ "error": "no such endpoint", "field": null }))).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/trees", get(list_trees))
        .route("/api/trees/{id}", get(get_tree))
        .route("/api/trees/{id}/history", get(tree_history_route))
        .route("/api/stats/histogram", get(histogram))
        .route("/api/sensors/{id}/series", get(sensor_series))
        .route("/api/layers", get(layers))
        .route("/tiles/{layer}/{z}/{x}/{y}", get(tile))
        .fallback(not_found)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
