mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use canopy_app::router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let res = app
        .clone()
        .oneshot(Request::get(uri).body(Body::empty()).unwrap())
        .await
        .unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &axum::Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = get(app, uri).await;
    (s, serde_json::from_slice(&b).unwrap_or_else(|e| panic!("{uri}: {e}")))
}

fn ids(v: &Value) -> Vec<String> {
    v["features"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["id"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::test]
async fn trees_are_geojson_with_annotations() {
    let app = router(common::state(60));
    let (s, v) = get_json(&app, "/api/trees?limit=5").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["type"], "FeatureCollection");
    assert_eq!(v["total_count"], 60);
    assert_eq!(v["snapshot_id"], 1);
    let f = &v["features"][0];
    assert_eq!(f["id"], "T0000");
    let coords = f["geometry"]["coordinates"].as_array().unwrap();
    let (lon, lat) = (coords[0].as_f64().unwrap(), coords[1].as_f64().unwrap());
    // UTM 32N around 691 km E / 5335 km N.
    assert!((11.0..12.0).contains(&lon) && (48.0..48.3).contains(&lat), "{lon} {lat}");
    assert!(f["properties"].get("annotations").is_some());
    assert_eq!(f["properties"]["crs"], "EPSG:25832");
}

#[tokio::test]
async fn identical_requests_give_identical_bytes() {
    let app = router(common::state(120));
    let (z, x, y) = common::INSIDE_TILE;
    for uri in [
        "/api/trees?species=Tilia%20cordata&limit=20".to_string(),
        "/api/trees?ndvi_min=-0.2&ndvi_max=0.7".to_string(),
        "/api/stats/histogram?field=ndvi_mean&bins=5".to_string(),
        format!("/tiles/ndvi/{z}/{x}/{y}.png"),
    ] {
        let (s1, a) = get(&app, &uri).await;
        let (s2, b) = get(&app, &uri).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK), "{uri}");
        assert_eq!(a, b, "{uri}");
    }
}

#[tokio::test]
async fn pagination_concatenates_to_unpaged() {
    let app = router(common::state(150));
    for filter in ["", "vitality_min=2&", "species=Fagus%20sylvatica,unknown&"] {
        let (_, all) = get_json(&app, &format!("/api/trees?{filter}limit=10000")).await;
        let all_ids = ids(&all);
        let mut joined = Vec::new();
        let mut offset = 0;
        loop {
            let (s, page) = get_json(&app, &format!("/api/trees?{filter}offset={offset}&limit=13")).await;
            assert_eq!(s, StatusCode::OK);
            assert_eq!(page["total_count"].as_u64().unwrap() as usize, all_ids.len());
            let got = ids(&page);
            if got.is_empty() {
                break;
            }
            joined.extend(got);
            offset += 13;
        }
        assert_eq!(joined, all_ids, "filter {filter:?}");
        assert_eq!(all["features"].as_array().unwrap().len(), all_ids.len());
    }
}

#[tokio::test]
async fn bad_parameters_name_the_field() {
    let app = router(common::state(10));
    for (uri, field) in [
        ("/api/trees?vitality_min=x", "vitality"),
        ("/api/trees?vitality_min=3&vitality_max=1", "vitality"),
        ("/api/trees?bbox=1,2,3", "bbox"),
        ("/api/trees?ndvi_min=abc", "ndvi"),
        ("/api/trees?limit=10001", "limit"),
        ("/api/trees?colour=red", "colour"),
        ("/api/trees?snapshot=Sx", "snapshot"),
        ("/api/stats/histogram?field=height", "field"),
        ("/api/stats/histogram", "field"),
        ("/api/stats/histogram?field=ndvi_mean&bins=0", "bins"),
        ("/api/sensors/S-7/series?depth=d9", "depth"),
        ("/api/sensors/S-7/series?from=yesterday", "from"),
        ("/tiles/ndvi/23/0/0.png", "z"),
        ("/tiles/ndvi/2/4/0.png", "xy"),
        ("/tiles/ndvi/a/0/0.png", "z"),
    ] {
        let (s, v) = get_json(&app, uri).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{uri}");
        assert_eq!(v["field"], field, "{uri}: {v}");
        assert!(v["error"].as_str().is_some_and(|e| !e.is_empty()));
    }
}

#[tokio::test]
async fn missing_things_are_404() {
    let app = router(common::state(10));
    for uri in [
        "/tiles/satellite/3/1/1.png",
        "/api/trees/NOPE",
        "/api/trees/NOPE/history",
        "/api/trees?snapshot=S9",
        "/api/sensors/ghost/series",
        "/api/nothing",
    ] {
        let (s, v) = get_json(&app, uri).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn single_tree_and_history() {
    use canopy_inventory::Storage;
    let store = common::store(10);
    let mut recs = store.load_snapshot(1).unwrap().records;
    recs[3].vitality = Some(0);
    recs[3].height_est = Some(99.0);
    recs.remove(5);
    store
        .commit_snapshot(common::t0() + chrono::Duration::days(30), recs)
        .unwrap();
    let app = router(canopy_app::AppState::new(store, canopy_app::LayerRegistry::new()));

    let (s, v) = get_json(&app, "/api/trees/T0003").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["snapshot_id"], 2);
    assert_eq!(v["properties"]["height_est"], 99.0);
    let (_, old) = get_json(&app, "/api/trees/T0003?snapshot=S1").await;
    assert_eq!(old["snapshot_id"], 1);

    let (s, h) = get_json(&app, "/api/trees/T0003/history").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h["first_seen"], 1);
    let entries = h["history"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    let fields: Vec<&str> = entries[0]["detail"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["field"].as_str().unwrap())
        .collect();
    assert_eq!(fields, ["height_est", "vitality"]);

    let (_, gone) = get_json(&app, "/api/trees/T0005/history").await;
    assert_eq!(gone["history"][0]["change"], "removed");
    let (s, _) = get_json(&app, "/api/trees/T0005").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sensor_series_filters() {
    let app = router(common::state(5));
    let (s, v) = get_json(&app, "/api/sensors/S-7/series").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["readings"].as_array().unwrap().len(), 18);
    let (_, v) = get_json(
        &app,
        "/api/sensors/S-7/series?depth=D2&from=2024-05-01T09:00:00Z&to=2024-05-01T12:00:00Z",
    )
    .await;
    let r = v["readings"].as_array().unwrap();
    assert_eq!(r.len(), 3);
    assert!(r.iter().all(|x| x["depth"] == "d2"));
    let ts: Vec<&str> = r.iter().map(|x| x["timestamp"].as_str().unwrap()).collect();
    let mut sorted = ts.clone();
    sorted.sort();
    assert_eq!(ts, sorted);
}

#[tokio::test]
async fn layers_and_png_tiles() {
    let app = router(common::state(5));
    let (s, v) = get_json(&app, "/api/layers").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["name"], "ndvi");
    let (z, x, y) = common::INSIDE_TILE;
    let res = app
        .clone()
        .oneshot(Request::get(format!("/tiles/ndvi/{z}/{x}/{y}.png")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.headers()["content-type"], "image/png");
    let body = res.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..8], b"\x89PNG\r\n\x1a\n");
}

#[tokio::test]
async fn histogram_route_matches_listing() {
    let app = router(common::state(80));
    let (_, h) = get_json(&app, "/api/stats/histogram?field=species&vitality_min=1").await;
    let (_, list) = get_json(&app, "/api/trees?vitality_min=1&limit=1").await;
    let sum: u64 = h["buckets"].as_array().unwrap().iter().map(|b| b["count"].as_u64().unwrap()).sum();
    assert_eq!(sum, list["total_count"].as_u64().unwrap());
    assert_eq!(h["total"], list["total_count"]);
}
