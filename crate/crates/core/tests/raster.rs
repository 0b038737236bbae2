use canopy_core::raster::geotiff::{self, Compression, SampleType, WriteOptions};
use canopy_core::raster::{apply_clahe, clip_histogram, denoise, iterate_tiles, ClaheParams, TileSpec};
use canopy_core::{load_raster, save_raster, Band, GeoTransform, MultibandRaster};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(w: usize, h: usize, data: Vec<f64>) -> MultibandRaster<f64> {
    MultibandRaster::single("red", w, h, data, None, GeoTransform::north_up(500.0, 900.0, 0.02), "EPSG:25832")
        .unwrap()
}

fn random_field(w: usize, h: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..w * h).map(|_| rng.gen::<f64>()).collect()
}

/// Per-region histogram equalization with optional clipping, computed from
/// raw counts, blended bilinearly between region centers.
fn ahe_oracle(img: &[f64], n: usize, regions: usize, bins: usize, clip: Option<f64>) -> Vec<f64> {
    let size = n / regions;
    let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    let mut tables = vec![vec![0.0; bins]; regions * regions];
    for rr in 0..regions {
        for rc in 0..regions {
            let mut counts = vec![0.0; bins];
            for r in rr * size..(rr + 1) * size {
                for c in rc * size..(rc + 1) * size {
                    counts[bin(img[r * n + c])] += 1.0;
                }
            }
            let total = (size * size) as f64;
            if let Some(cl) = clip {
                let cap = cl * total / bins as f64;
                let excess: f64 = counts.iter().map(|&c: &f64| (c - cap).max(0.0)).sum();
                for c in counts.iter_mut() {
                    *c = c.min(cap) + excess / bins as f64;
                }
            }
            let mut run = 0.0;
            for b in 0..bins {
                run += counts[b];
                tables[rr * regions + rc][b] = (run / total).min(1.0);
            }
        }
    }
    let center = |i: usize| i as f64 * size as f64 + size as f64 / 2.0;
    let neighbours = |pos: f64| -> (usize, usize, f64) {
        if pos <= center(0) {
            return (0, 0, 0.0);
        }
        if pos >= center(regions - 1) {
            return (regions - 1, regions - 1, 0.0);
        }
        let i = ((pos - center(0)) / size as f64).floor() as usize;
        (i, i + 1, (pos - center(i)) / size as f64)
    };
    let mut out = vec![0.0; n * n];
    for r in 0..n {
        let (a0, a1, wy) = neighbours(r as f64 + 0.5);
        for c in 0..n {
            let (b0, b1, wx) = neighbours(c as f64 + 0.5);
            let b = bin(img[r * n + c]);
            let t = |i: usize, j: usize| tables[i * regions + j][b];
            let top = t(a0, b0) * (1.0 - wx) + t(a0, b1) * wx;
            let bottom = t(a1, b0) * (1.0 - wx) + t(a1, b1) * wx;
            out[r * n + c] = (top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0);
        }
    }
    out
}

#[test]
fn clahe_without_clipping_is_plain_ahe() {
    for seed in 0..5 {
        let img = random_field(8, 8, seed);
        let params = ClaheParams {
            tile_grid: (2, 2),
            clip_limit: f64::INFINITY,
            bins: 16,
            range: (0.0, 1.0),
        };
        let out = apply_clahe(&single(8, 8, img.clone()), &params).unwrap();
        let oracle = ahe_oracle(&img, 8, 2, 16, None);
        for (a, b) in out.bands()[0].data.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn clahe_matches_clipped_region_oracle() {
    for seed in 10..15 {
        let img = random_field(8, 8, seed);
        let params = ClaheParams {
            tile_grid: (2, 2),
            clip_limit: 2.0,
            bins: 8,
            range: (0.0, 1.0),
        };
        let out = apply_clahe(&single(8, 8, img.clone()), &params).unwrap();
        let oracle = ahe_oracle(&img, 8, 2, 8, Some(2.0));
        for (a, b) in out.bands()[0].data.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

fn std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn clahe_stretches_low_contrast_ramp() {
    let n = 64;
    let img: Vec<f64> = (0..n * n).map(|i| 0.45 + 0.1 * (i % n) as f64 / (n - 1) as f64).collect();
    let out = apply_clahe(&single(n, n, img.clone()), &ClaheParams::default()).unwrap();
    assert!(std(&out.bands()[0].data) > std(&img));
}

#[test]
fn clahe_preserves_geometry_and_mask() {
    let mut img = random_field(16, 12, 3);
    img[7] = -9999.0;
    let r = MultibandRaster::single("red", 16, 12, img, Some(-9999.0), GeoTransform::north_up(1.0, 2.0, 0.5), "EPSG:3857")
        .unwrap();
    let out = apply_clahe(&r, &ClaheParams { tile_grid: (3, 4), ..Default::default() }).unwrap();
    assert_eq!((out.width(), out.height(), out.transform(), out.crs()), (16, 12, r.transform(), "EPSG:3857"));
    assert_eq!(out.bands()[0].valid_mask(), r.bands()[0].valid_mask());
}

/// Edge-inclusive mirror padding: `c b a | a b c | c b a`.
fn pad(img: &[f64], w: usize, h: usize, r: usize) -> (Vec<f64>, usize) {
    let row: Vec<usize> = (0..r).rev().chain(0..w).chain((0..w).rev().take(r)).collect();
    let col: Vec<usize> = (0..r).rev().chain(0..h).chain((0..h).rev().take(r)).collect();
    let pw = row.len();
    let mut out = Vec::with_capacity(pw * col.len());
    for &y in &col {
        for &x in &row {
            out.push(img[y * w + x]);
        }
    }
    (out, pw)
}

fn brute_median(img: &[f64], w: usize, h: usize, win: usize) -> Vec<f64> {
    let r = win / 2;
    let (p, pw) = pad(img, w, h, r);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut v = Vec::new();
            for dy in 0..win {
                for dx in 0..win {
                    v.push(p[(y + dy) * pw + x + dx]);
                }
            }
            v.sort_by(f64::total_cmp);
            out[y * w + x] = v[v.len() / 2];
        }
    }
    out
}

#[test]
fn denoise_equals_brute_force_median_on_5x5() {
    for seed in 0..20 {
        let img = random_field(5, 5, 100 + seed);
        for win in [3, 5] {
            let out = denoise(&single(5, 5, img.clone()), win).unwrap();
            assert_eq!(out.bands()[0].data, brute_median(&img, 5, 5, win), "seed {seed} window {win}");
        }
    }
}

#[test]
fn denoise_examples() {
    let r = single(6, 6, vec![0.3; 36]);
    assert_eq!(denoise(&r, 3).unwrap(), r);
    let mut img = vec![0.3; 36];
    img[14] = 1.0;
    assert!(denoise(&single(6, 6, img), 3).unwrap().bands()[0].data.iter().all(|&v| v == 0.3));
    assert!(denoise(&r, 4).is_err());
    assert!(denoise(&r, 1).is_err());
}

#[test]
fn tiles_partition_and_reassemble() {
    let (w, h) = (100, 100);
    let r = single(w, h, random_field(w, h, 9));
    assert_eq!(iterate_tiles(&r, TileSpec::new(50, 0).unwrap()).unwrap().count(), 4);
    for (size, overlap) in [(64, 0), (30, 5), (17, 16)] {
        let mut hits = vec![0u8; w * h];
        let mut rebuilt = vec![f64::NAN; w * h];
        let mut last = None;
        for tile in iterate_tiles(&r, TileSpec::new(size, overlap).unwrap()).unwrap() {
            assert!(last.map_or(true, |l| l < tile.index), "row-major order");
            last = Some(tile.index);
            let (win, inn) = (tile.window, tile.interior);
            assert_eq!((tile.raster.width(), tile.raster.height()), (win.width, win.height));
            for lr in inn.row..inn.row + inn.height {
                for lc in inn.col..inn.col + inn.width {
                    let (rr, cc) = (win.row + lr, win.col + lc);
                    hits[rr * w + cc] += 1;
                    rebuilt[rr * w + cc] = tile.raster.bands()[0].data[lr * win.width + lc];
                }
            }
        }
        assert!(hits.iter().all(|&c| c == 1), "tile {size}/{overlap} is not a partition");
        assert_eq!(rebuilt, r.bands()[0].data);
    }
}

#[test]
fn edge_tiles_are_36_wide() {
    let r = single(100, 100, vec![0.0; 10_000]);
    let tiles: Vec<_> = iterate_tiles(&r, TileSpec::new(64, 0).unwrap()).unwrap().collect();
    assert_eq!(tiles.len(), 4);
    assert_eq!((tiles[3].window.width, tiles[3].window.height), (36, 36));
}

#[test]
fn five_band_file_keeps_order_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["blue", "green", "red", "rededge", "nir"];
    let bands: Vec<Band<f32>> = names
        .iter()
        .enumerate()
        .map(|(b, n)| Band::new(*n, (0..12).map(|i| (b * 12 + i) as f32 / 60.0).collect(), None))
        .collect();
    let r = MultibandRaster::new(4, 3, bands, GeoTransform::north_up(632_000.0, 5_530_000.0, 0.015), "EPSG:25832").unwrap();
    for ext in ["tif", "json"] {
        let p = dir.path().join(format!("ortho.{ext}"));
        save_raster(&r, &p).unwrap();
        let back: MultibandRaster<f32> = load_raster(&p).unwrap();
        assert_eq!(back.band_names(), names);
        for (a, b) in back.bands().iter().zip(r.bands()) {
            assert_eq!(a.data, b.data);
        }
        assert_eq!(back.transform(), r.transform());
    }
}

#[test]
fn two_by_two_identity_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let r = MultibandRaster::single("band_1", 2, 2, vec![1.0f32, 2.0, 3.0, 4.0], None, GeoTransform::north_up(0.0, 2.0, 1.0), "EPSG:25832")
        .unwrap();
    let p = dir.path().join("x.tif");
    geotiff::write(&r, &p, &WriteOptions::for_raster(&r)).unwrap();
    let back: MultibandRaster<f32> = load_raster(&p).unwrap();
    assert_eq!((back.width(), back.height(), back.band_count()), (2, 2, 1));
    assert_eq!(back.bands()[0].data, vec![1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn nodata_marker_survives_save() {
    let dir = tempfile::tempdir().unwrap();
    let r = MultibandRaster::single("ndvi", 3, 1, vec![0.5f32, -9999.0, -0.25], Some(-9999.0), GeoTransform::north_up(0.0, 1.0, 1.0), "EPSG:25832")
        .unwrap();
    let p = dir.path().join("ndvi.tif");
    save_raster(&r, &p).unwrap();
    let back: MultibandRaster<f32> = load_raster(&p).unwrap();
    assert_eq!(back.bands()[0].nodata, Some(-9999.0));
    assert_eq!(back.bands()[0].data, r.bands()[0].data);
}

#[test]
fn empty_band_list_cannot_be_saved() {
    let dir = tempfile::tempdir().unwrap();
    let err = MultibandRaster::<f32>::new(2, 2, vec![], GeoTransform::north_up(0.0, 0.0, 1.0), "EPSG:25832")
        .and_then(|r| save_raster(&r, dir.path().join("e.tif")));
    assert!(err.is_err());
}

#[test]
fn constant_band_stays_constant() {
    let out = apply_clahe(&single(20, 20, vec![0.4; 400]), &ClaheParams::default()).unwrap();
    let v = out.bands()[0].data[0];
    assert!(out.bands()[0].data.iter().all(|&x| x == v));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn clipped_bins_stay_under_limit(
        counts in proptest::collection::vec(0u32..50, 4..64), clip in 1.0f64..4.0,
    ) {
        let total: u32 = counts.iter().sum();
        prop_assume!(total > 0);
        let hist: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let limit = clip / hist.len() as f64;
        let (clipped, excess) = clip_histogram(&hist, limit);
        prop_assert!(clipped.iter().all(|&h| h <= limit));
        let mass: f64 = clipped.iter().sum::<f64>() + excess;
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geotiff_roundtrip_all_sample_types(
        w in 1usize..9, h in 1usize..9, bands in 1usize..4, seed in any::<u64>(), deflate in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for st in [SampleType::U8, SampleType::U16, SampleType::F32] {
            let max = st.integer_max().map(|m| m as f64);
            let bs: Vec<Band<f32>> = (0..bands)
                .map(|b| {
                    let data = (0..w * h)
                        .map(|_| match max {
                            // Integer-backed rasters hold values on the sample grid.
                            Some(m) => (rng.gen_range(0..=m as u32) as f64 / m) as f32,
                            None => rng.gen::<f32>() * 2.0 - 1.0,
                        })
                        .collect();
                    Band::new(format!("b{b}"), data, None)
                })
                .collect();
            let r = MultibandRaster::new(w, h, bs, GeoTransform::new(10.0, 20.0, 0.5, -0.25), "EPSG:25832").unwrap();
            let p = dir.path().join(format!("r_{}.tif", st.as_str()));
            let opts = WriteOptions {
                sample_type: st,
                compression: if deflate { Compression::Deflate } else { Compression::None },
            };
            geotiff::write(&r, &p, &opts).unwrap();
            let back: MultibandRaster<f32> = geotiff::read(&p).unwrap();
            prop_assert_eq!(back.band_names(), r.band_names());
            prop_assert_eq!(back.transform(), r.transform());
            for (a, b) in back.bands().iter().zip(r.bands()) {
                prop_assert_eq!(&a.data, &b.data);
            }
        }
    }
}
