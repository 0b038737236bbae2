use std::path::Path;

use canopy_app::cli::main_with_args;
use canopy_core::{save_raster, Band, GeoTransform, Raster};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("canopy").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const CSV_A: &str = "tree_id,x,y,crs,species,height_est,crown_diameter_est,vitality,site_info,last_inspected
B2,691010.0,5335020.0,EPSG:25832,Tilia cordata,12.5,6.0,3,street,2023-09-01
A1,691000.0,5335000.0,EPSG:25832,Acer platanoides,8.0,,2,,
C3,691030.0,5335060.0,EPSG:25832,,,,,park,
";

const CSV_B: &str = "tree_id,x,y,crs,species,height_est,crown_diameter_est,vitality,site_info,last_inspected
A1,691000.0,5335000.0,EPSG:25832,Acer platanoides,8.5,,1,,
C3,691030.0,5335060.0,EPSG:25832,,,,,park,
D4,691050.0,5335080.0,EPSG:25832,Quercus robur,20.0,,4,,
";

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["--version"]), 0);
    assert_eq!(run(&["frobnicate"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let missing = dir.path().join("missing.csv");
    assert_eq!(run(&["ingest", "cadastre", "--store", p(&store), "--file", p(&missing)]), 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "tree_id,x\nA,1\n").unwrap();
    assert_eq!(run(&["ingest", "cadastre", "--store", p(&store), "--file", p(&bad)]), 1);
    let dup = dir.path().join("dup.csv");
    std::fs::write(&dup, "tree_id,x,y\nA,1,2\nA,3,4\n").unwrap();
    assert_eq!(run(&["ingest", "cadastre", "--store", p(&store), "--file", p(&dup)]), 1);
}

#[test]
fn ingest_diff_and_join() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    std::fs::write(&a, CSV_A).unwrap();
    std::fs::write(&b, CSV_B).unwrap();
    let ingest = |f: &Path, at: &str| run(&["ingest", "cadastre", "--store", p(&store), "--file", p(f), "--captured-at", at]);
    assert_eq!(ingest(&a, "2024-01-01T00:00:00Z"), 0);
    assert_eq!(ingest(&b, "2024-06-01T00:00:00Z"), 0);
    // Not later than the latest snapshot.
    assert_eq!(ingest(&b, "2024-03-01T00:00:00Z"), 1);

    let out = dir.path().join("diff.json");
    assert_eq!(run(&["diff", "--store", p(&store), "--from", "S1", "--to", "S2", "--out", p(&out)]), 0);
    let d: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(d["added"].as_array().unwrap().len(), 1);
    assert_eq!(d["removed"][0]["tree_id"], "B2");
    assert_eq!(d["modified"][0]["tree_id"], "A1");
    assert_eq!(run(&["diff", "--store", p(&store), "--from", "S1", "--to", "S7", "--out", p(&out)]), 1);

    let crowns = dir.path().join("crowns.geojson");
    let square = |id: &str, x: f64, y: f64| {
        serde_json::json!({
            "type": "Feature",
            "properties": { "crown_id": id },
            "geometry": { "type": "Polygon", "coordinates": [[[x - 1.0, y - 1.0], [x + 1.0, y - 1.0], [x + 1.0, y + 1.0], [x - 1.0, y + 1.0], [x - 1.0, y - 1.0]]] }
        })
    };
    let fc = serde_json::json!({
        "type": "FeatureCollection",
        "crs": { "type": "name", "properties": { "name": "EPSG:25832" } },
        "features": [square("c1", 691000.5, 5335000.5), square("c2", 691051.0, 5335079.0), square("c3", 690000.0, 5330000.0)]
    });
    std::fs::write(&crowns, serde_json::to_vec(&fc).unwrap()).unwrap();
    let pairs = dir.path().join("pairs.csv");
    let code = run(&["join", "--store", p(&store), "--crowns", p(&crowns), "--max-dist", "3", "--out", p(&pairs)]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&pairs).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "tree_id,crown_id,distance");
    assert!(rows[1].starts_with("A1,c1,"), "{text}");
    assert!(rows[2].starts_with("D4,c2,"), "{text}");
    assert_eq!(rows.len(), 3);
}

#[test]
fn indices_and_itcd_commands() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (40, 30);
    let gt = GeoTransform::north_up(691_000.0, 5_335_030.0, 1.0);
    let band = |name: &str, f: &dyn Fn(usize) -> f32| Band::new(name, (0..w * h).map(f).collect(), None);
    let ms = Raster::new(
        w,
        h,
        vec![band("red", &|i| 0.05 + (i % 7) as f32 * 0.01), band("rededge", &|_| 0.3), band("nir", &|_| 0.6)],
        gt,
        "EPSG:25832",
    )
    .unwrap();
    let ms_path = dir.path().join("ms.tif");
    save_raster(&ms, &ms_path).unwrap();
    let ndvi = dir.path().join("ndvi.tif");
    assert_eq!(run(&["indices", "--input", p(&ms_path), "--index", "ndvi", "--out", p(&ndvi)]), 0);
    let r: Raster = canopy_core::load_raster(&ndvi).unwrap();
    assert!(r.bands()[0].data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(run(&["indices", "--input", p(&ms_path), "--index", "evi", "--out", p(&ndvi)]), 1);

    let chm_data: Vec<f32> = (0..w * h)
        .map(|i| {
            let (r, c) = ((i / w) as f32, (i % w) as f32);
            let bump = |br: f32, bc: f32| 15.0 * (-((r - br).powi(2) + (c - bc).powi(2)) / 18.0).exp();
            bump(15.0, 10.0).max(bump(15.0, 29.0))
        })
        .collect();
    let chm = Raster::single("chm", w, h, chm_data, None, gt, "EPSG:25832").unwrap();
    let chm_path = dir.path().join("chm.tif");
    save_raster(&chm, &chm_path).unwrap();
    let crowns = dir.path().join("crowns.geojson");
    let code = run(&["itcd", "--chm", p(&chm_path), "--radius", "3", "--min-height", "2", "--out", p(&crowns)]);
    assert_eq!(code, 0);
    let c = canopy_core::CrownCollection::read(&crowns).unwrap();
    assert_eq!(c.crowns().len(), 2);

    let stats = dir.path().join("stats.csv");
    let code = run(&[
        "indices", "--input", p(&ms_path), "--index", "ndvi", "--out", p(&ndvi), "--crowns", p(&crowns), "--stats", p(&stats),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read_to_string(&stats).unwrap().lines().count(), 3);
}
