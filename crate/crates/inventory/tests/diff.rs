use canopy_inventory::{apply_diff, snapshot_diff, CadastreSnapshot, FileStorage, Storage, TreeRecord};
use chrono::{NaiveDate, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPECIES: [&str; 6] = ["Tilia cordata", "Acer platanoides", "Quercus robur", "Platanus x hispanica", "Betula pendula", "unknown"];

fn random_record(rng: &mut ChaCha8Rng, id: usize) -> TreeRecord {
    let mut r = TreeRecord::new(
        format!("T{id:05}"),
        500_000.0 + rng.gen::<f64>() * 4000.0,
        5_400_000.0 + rng.gen::<f64>() * 4000.0,
        "EPSG:25832",
    );
    mutate_all(rng, &mut r);
    r
}

fn maybe<T>(rng: &mut ChaCha8Rng, v: T) -> Option<T> {
    if rng.gen_bool(0.2) {
        None
    } else {
        Some(v)
    }
}

fn mutate_all(rng: &mut ChaCha8Rng, r: &mut TreeRecord) {
    for f in 0..7 {
        mutate_field(rng, r, f);
    }
}

fn mutate_field(rng: &mut ChaCha8Rng, r: &mut TreeRecord, field: usize) {
    match field {
        0 => r.species = SPECIES.choose(rng).unwrap().to_string(),
        1 => {
            let v = (rng.gen::<f64>() * 30.0 * 100.0).round() / 100.0;
            r.height_est = maybe(rng, v)
        }
        2 => {
            let v = rng.gen::<f64>() * 15.0;
            r.crown_diameter_est = maybe(rng, v)
        }
        3 => {
            let v = rng.gen_range(0..=4);
            r.vitality = maybe(rng, v)
        }
        4 => r.site_info = ["", "street", "park", "school yard", "Ecke \"Markt\", Nord"].choose(rng).unwrap().to_string(),
        5 => {
            let d = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap() + chrono::Days::new(rng.gen_range(0..2000));
            r.last_inspected = maybe(rng, d)
        }
        _ => {
            r.x += rng.gen::<f64>() - 0.5;
            r.y += rng.gen::<f64>() - 0.5;
        }
    }
}

fn random_pair(seed: u64) -> (CadastreSnapshot, CadastreSnapshot) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(0..120);
    let a_recs: Vec<TreeRecord> = (0..n).map(|i| random_record(&mut rng, i * 2)).collect();
    let mut b_recs = Vec::new();
    for r in &a_recs {
        match rng.gen_range(0..10) {
            0 => {}
            1..=3 => {
                let mut m = r.clone();
                for _ in 0..rng.gen_range(1..4) {
                    let f = rng.gen_range(0..7);
                    mutate_field(&mut rng, &mut m, f);
                }
                b_recs.push(m);
            }
            _ => b_recs.push(r.clone()),
        }
    }
    for k in 0..rng.gen_range(0..20) {
        // Odd ids never clash with the even ids of `a`.
        b_recs.push(random_record(&mut rng, 2 * (n + k) + 1));
    }
    b_recs.shuffle(&mut rng);
    let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
    let a = CadastreSnapshot::new(seed * 2 + 1, t0, a_recs).unwrap();
    let b = CadastreSnapshot::new(seed * 2 + 2, t0 + chrono::Months::new(6), b_recs).unwrap();
    (a, b)
}

#[test]
fn randomized_round_trips_are_byte_identical() {
    for seed in 0..10 {
        let (a, b) = random_pair(seed);
        let d = snapshot_diff(&a, &b);
        let rebuilt = apply_diff(&a, &d).unwrap();
        assert_eq!(rebuilt.to_canonical_json(), b.to_canonical_json(), "seed {seed}");
        assert!(snapshot_diff(&a, &a).is_empty());
        assert!(snapshot_diff(&b, &b).is_empty());
        // The change set survives its own JSON form.
        let d2 = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(apply_diff(&a, &d2).unwrap().to_canonical_json(), b.to_canonical_json());
    }
}

#[test]
fn diff_partitions_by_tree_id() {
    for seed in 20..30 {
        let (a, b) = random_pair(seed);
        let d = snapshot_diff(&a, &b);
        let ids = |v: &[TreeRecord]| v.iter().map(|r| r.tree_id.clone()).collect::<Vec<_>>();
        let (ad, rm) = (ids(&d.added), ids(&d.removed));
        let md: Vec<String> = d.modified.iter().map(|m| m.tree_id.clone()).collect();
        for v in [&ad, &rm, &md] {
            assert!(v.windows(2).all(|w| w[0] < w[1]));
        }
        for r in &b.records {
            let in_a = a.get(&r.tree_id);
            assert_eq!(in_a.is_none(), ad.contains(&r.tree_id));
            assert_eq!(in_a.is_some_and(|x| x != r), md.contains(&r.tree_id));
        }
        for r in &a.records {
            assert_eq!(b.get(&r.tree_id).is_none(), rm.contains(&r.tree_id));
        }
    }
}

#[test]
fn stored_snapshots_round_trip_through_diffs() {
    let dir = tempfile::tempdir().unwrap();
    let store = FileStorage::open(dir.path()).unwrap();
    let (a, b) = random_pair(99);
    store.commit_snapshot(a.captured_at, a.records.clone()).unwrap();
    store.commit_snapshot(b.captured_at, b.records.clone()).unwrap();
    let d = store.diff(1, 2).unwrap();
    let rebuilt = apply_diff(&store.load_snapshot(1).unwrap(), &d).unwrap();
    assert_eq!(rebuilt.to_canonical_json(), std::fs::read(store.snapshot_path(2)).unwrap());
    assert!(store.diff(2, 2).unwrap().is_empty());
}
