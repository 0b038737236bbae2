use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use canopy_core::chips::CrownChip;
use canopy_core::clustering::grid::FeatureKind;
use canopy_core::clustering::{
    run_experiment_grid, write_grid_report, ClusterAlgorithm, FeatureSpec, GridConfig, Preprocess, Reduction,
};
use canopy_core::{Band, GeoTransform, MultibandRaster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPECIES: [(&str, [f32; 3]); 3] = [("picea", [0.2, 0.5, 0.2]), ("fagus", [0.6, 0.7, 0.3]), ("pinus", [0.4, 0.3, 0.6])];

fn synthetic_chips(per: usize, seed: u64) -> (Vec<CrownChip<f32>>, BTreeMap<String, String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chips = Vec::new();
    let mut truth = BTreeMap::new();
    for (s, (name, rgb)) in SPECIES.iter().enumerate() {
        for i in 0..per {
            let id = format!("t{s}_{i:02}");
            let (w, h) = (12, 12);
            let bands = ["red", "green", "blue"]
                .iter()
                .zip(rgb)
                .map(|(b, &base)| {
                    let data = (0..w * h).map(|_| (base + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0)).collect();
                    Band::new(*b, data, Some(f32::NAN))
                })
                .collect();
            let r = MultibandRaster::new(w, h, bands, GeoTransform::north_up(0.0, 0.0, 0.1), "EPSG:25832").unwrap();
            chips.push(CrownChip::from_raster(id.clone(), r, "synthetic"));
            truth.insert(id, name.to_string());
        }
    }
    (chips, truth)
}

fn builtin() -> FeatureSpec {
    FeatureSpec {
        name: "builtin".into(),
        kind: FeatureKind::Builtin,
        files: BTreeMap::new(),
        reduced_files: BTreeMap::new(),
    }
}

fn small_grid(clusterers: Vec<ClusterAlgorithm>) -> GridConfig {
    let mut cfg = GridConfig::from_toml("features = []").unwrap();
    cfg.preprocess = vec![Preprocess::Clahe];
    cfg.features = vec![builtin()];
    cfg.clusterers = clusterers;
    cfg
}

#[test]
fn deterministic_single_combination_repeats_identically() {
    let (chips, truth) = synthetic_chips(6, 1);
    let cfg = small_grid(vec![ClusterAlgorithm::Agglomerative]);
    assert_eq!(cfg.n_combinations(), 1);
    let res = run_experiment_grid(&chips, &truth, &cfg, 2, 42).unwrap();
    assert_eq!(res.len(), 1);
    assert_eq!(res[0].per_repeat_f1.len(), 2);
    assert_eq!(res[0].per_repeat_f1[0], res[0].per_repeat_f1[1]);
    assert_eq!(res[0].k, 3);
}

#[test]
fn grid_ignores_chip_order_and_means_are_exact() {
    let (mut chips, truth) = synthetic_chips(8, 2);
    let cfg = small_grid(vec![ClusterAlgorithm::KmeansPp, ClusterAlgorithm::FuzzyCmeans]);
    let a = run_experiment_grid(&chips, &truth, &cfg, 4, 7).unwrap();
    chips.reverse();
    let b = run_experiment_grid(&chips, &truth, &cfg, 4, 7).unwrap();
    assert_eq!(a, b);
    for r in &a {
        let m = r.per_repeat_f1.iter().sum::<f64>() / r.n_repeats as f64;
        assert!((m - r.mean_f1).abs() < 1e-12);
        assert!(r.mean_f1 > 0.9, "{r:?}");
    }
    assert!(a.windows(2).all(|w| w[0].mean_f1 >= w[1].mean_f1));
}

fn write_embeddings(path: &Path, ids: &[String], dim: usize, truth: &BTreeMap<String, String>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = std::fs::File::create(path).unwrap();
    let header: Vec<String> = (0..dim).map(|d| format!("dim_{d}")).collect();
    writeln!(f, "crown_id,{}", header.join(",")).unwrap();
    for id in ids {
        let s = SPECIES.iter().position(|(n, _)| *n == truth[id]).unwrap() as f64;
        let row: Vec<String> = (0..dim).map(|d| format!("{}", if d % 3 == s as usize { 5.0 } else { 0.0 } + rng.gen::<f64>() * 0.3)).collect();
        writeln!(f, "{id},{}", row.join(",")).unwrap();
    }
}

#[test]
fn toml_grid_with_embeddings_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (chips, truth) = synthetic_chips(6, 3);
    let ids: Vec<String> = truth.keys().cloned().collect();
    for (p, tag) in [("clahe", "c"), ("dn", "d")] {
        write_embeddings(&dir.path().join(format!("vgg_{p}.csv")), &ids, 6, &truth, 10);
        write_embeddings(&dir.path().join(format!("vgg_{p}_umap.csv")), &ids, 2, &truth, 11);
        write_embeddings(&dir.path().join(format!("builtin_{tag}_umap.csv")), &ids, 3, &truth, 12);
    }
    let toml = r#"
preprocess = ["clahe", "clahe+denoising"]
reductions = ["pca", "imported"]
clusterers = ["kmeans_pp", "agglomerative"]

[params]
min_samples = 4

[[features]]
name = "builtin"
kind = "builtin"
reduced_files = { clahe = "builtin_c_umap.csv", "clahe+denoising" = "builtin_d_umap.csv" }

[[features]]
name = "vgg16"
kind = "embedding"
files = { clahe = "vgg_clahe.csv", "clahe+denoising" = "vgg_dn.csv" }
reduced_files = { clahe = "vgg_clahe_umap.csv", "clahe+denoising" = "vgg_dn_umap.csv" }
"#;
    let path = dir.path().join("grid.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = GridConfig::load(&path).unwrap();
    assert_eq!(cfg.n_combinations(), 2 * 2 * 2 * 2);
    assert_eq!(cfg.reductions, vec![Reduction::Pca, Reduction::Imported]);
    let res = run_experiment_grid(&chips, &truth, &cfg, 3, 0).unwrap();
    assert_eq!(res.len(), 16);
    assert!(res.iter().all(|r| r.n_repeats == 3 && r.per_repeat_weighted_f1.len() == 3));
    let out = dir.path().join("results.csv");
    write_grid_report(&out, &res).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "preprocess,features,reduction,clusterer,k,mean_f1,mean_weighted_f1,n_repeats"
    );
    assert_eq!(text.lines().count(), 17);
}

#[test]
fn empty_grid_and_missing_files_are_rejected() {
    let (chips, truth) = synthetic_chips(2, 4);
    let mut cfg = small_grid(vec![]);
    assert!(run_experiment_grid(&chips, &truth, &cfg, 1, 0).unwrap_err().to_string().contains("empty grid"));
    cfg.clusterers = vec![ClusterAlgorithm::KmeansPp];
    cfg.reductions = vec![Reduction::Imported];
    assert!(run_experiment_grid(&chips, &truth, &cfg, 1, 0).is_err());
}
