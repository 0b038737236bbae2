use canopy_core::chips::{extract_chips, rasterize_polygon, REASON_ALL_NODATA};
use canopy_core::indices::{compute_ndre, compute_ndvi, zonal_stats, IndexRaster};
use canopy_core::{Band, CrownCollection, CrownPolygon, CrownSource, Error, GeoTransform, MultibandRaster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classic crossing-number test.
fn pnpoly(ring: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = ring[i];
        let (xj, yj) = ring[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn fixtures() -> Vec<Vec<(f64, f64)>> {
    vec![
        // triangle
        vec![(3.3, 2.1), (17.8, 5.2), (8.1, 16.7)],
        // L-shape
        vec![(1.2, 1.2), (12.6, 1.2), (12.6, 5.4), (5.5, 5.4), (5.5, 18.9), (1.2, 18.9)],
        // concave star
        (0..10)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / 5.0;
                let r = if i % 2 == 0 { 8.7 } else { 3.4 };
                (10.2 + r * a.cos(), 9.9 + r * a.sin())
            })
            .collect(),
    ]
}

#[test]
fn rasterize_equals_point_in_polygon() {
    let (w, h) = (24, 22);
    for t in [GeoTransform::new(0.0, 22.0, 1.0, -1.0), GeoTransform::new(-0.37, 23.1, 0.9, -1.1)] {
        for (k, ring) in fixtures().into_iter().enumerate() {
            let poly = CrownPolygon::new(format!("p{k}"), ring.clone(), CrownSource::Imported).unwrap();
            let mask = rasterize_polygon(&poly, &t, w, h).unwrap();
            for r in 0..h {
                for c in 0..w {
                    let (x, y) = t.pixel_center(r, c);
                    assert_eq!(mask.get(r, c), pnpoly(&ring, x, y), "polygon {k} pixel ({r},{c})");
                }
            }
        }
    }
}

fn ndvi_raster(w: usize, h: usize, values: Vec<f32>) -> IndexRaster<f32> {
    let r = MultibandRaster::single("ndvi", w, h, values, Some(f32::NAN), GeoTransform::north_up(0.0, h as f64, 1.0), "EPSG:25832")
        .unwrap();
    IndexRaster::from_raster(r).unwrap()
}

#[test]
fn zonal_stats_six_pixels() {
    let idx = ndvi_raster(4, 3, vec![0.0, 0.2, 0.4, 9.0, 0.6, 0.8, 1.0, 9.0, 9.0, 9.0, 9.0, 9.0]);
    // Covers the first three columns of the top two rows.
    let crown = CrownPolygon::new("t1", vec![(0.0, 3.0), (3.0, 3.0), (3.0, 1.0), (0.0, 1.0)], CrownSource::Imported).unwrap();
    let mask = rasterize_polygon(&crown, idx.raster().transform(), 4, 3).unwrap();
    assert_eq!(mask.count(), 6);
    let crowns = CrownCollection::new("EPSG:25832", vec![crown]).unwrap();
    let rep = zonal_stats(&idx, &crowns).unwrap();
    let s = &rep.stats[0];
    assert_eq!(s.count, 6);
    assert!((s.mean - 0.5).abs() < 1e-6);
    assert!(s.min.abs() < 1e-7 && (s.max - 1.0).abs() < 1e-7);
}

#[test]
fn zonal_stats_skip_and_crs() {
    let idx = ndvi_raster(2, 2, vec![f32::NAN; 4]);
    let crown = CrownPolygon::new("t1", vec![(0.0, 2.0), (2.0, 2.0), (2.0, 0.0), (0.0, 0.0)], CrownSource::Imported).unwrap();
    let far = CrownPolygon::new("t2", vec![(50.0, 50.0), (52.0, 50.0), (52.0, 52.0)], CrownSource::Imported).unwrap();
    let rep = zonal_stats(&idx, &CrownCollection::new("EPSG:25832", vec![crown.clone(), far]).unwrap()).unwrap();
    assert!(rep.stats.is_empty());
    assert_eq!(rep.skipped.len(), 2);
    assert_eq!(rep.skipped[0].reason, REASON_ALL_NODATA);
    let err = zonal_stats(&idx, &CrownCollection::new("EPSG:4326", vec![crown]).unwrap()).unwrap_err();
    assert!(matches!(err, Error::CrsMismatch { .. }));
}

fn multispectral(red: Vec<f64>, rededge: Vec<f64>, nir: Vec<f64>) -> MultibandRaster<f64> {
    let n = red.len();
    MultibandRaster::new(
        n,
        1,
        vec![Band::new("red", red, None), Band::new("rededge", rededge, None), Band::new("nir", nir, None)],
        GeoTransform::north_up(0.0, 1.0, 1.0),
        "EPSG:25832",
    )
    .unwrap()
}

#[test]
fn index_invariants_on_random_reflectance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 4000;
    let mut draw = || -> f64 {
        match rng.gen_range(0..10) {
            0 => 0.0,
            _ => rng.gen::<f64>(),
        }
    };
    let red: Vec<f64> = (0..n).map(|_| draw()).collect();
    let re: Vec<f64> = (0..n).map(|_| draw()).collect();
    let nir: Vec<f64> = (0..n).map(|_| draw()).collect();
    let r = multispectral(red.clone(), re.clone(), nir.clone());
    let ndvi = compute_ndvi(&r).unwrap();
    let ndre = compute_ndre(&r).unwrap();
    let mut zero_dens = 0;
    for i in 0..n {
        for (v, a) in [(ndvi.values()[i], nir[i]), (ndre.values()[i], re[i])] {
            if a + red[i] == 0.0 {
                zero_dens += 1;
                assert!(v.is_nan());
            } else {
                assert!(v.is_finite() && (-1.0..=1.0).contains(&v), "{v}");
            }
        }
    }
    assert!(zero_dens > 0);
    let one = compute_ndvi(&multispectral(vec![0.2], vec![0.2], vec![0.8])).unwrap();
    // 0.8 - 0.2 already rounds above 0.6 in f64.
    assert!((one.values()[0] - 0.6).abs() <= f64::EPSILON);
    let one32 = compute_ndvi(&multispectral(vec![0.2], vec![0.2], vec![0.8]).cast::<f32>()).unwrap();
    assert_eq!(one32.values()[0], 0.6f32);
}

#[test]
fn missing_band_is_named() {
    let r = MultibandRaster::single("red", 1, 1, vec![0.1f32], None, GeoTransform::north_up(0.0, 1.0, 1.0), "EPSG:25832").unwrap();
    let err = compute_ndvi(&r).unwrap_err();
    assert!(err.to_string().contains("nir"), "{err}");
}

#[test]
fn chips_cover_exactly_the_crown() {
    let (w, h) = (30, 30);
    let t = GeoTransform::north_up(100.0, 200.0, 0.5);
    let bands = ["red", "green", "blue"]
        .iter()
        .enumerate()
        .map(|(b, n)| Band::new(*n, (0..w * h).map(|i| (i + b) as f32 / 1000.0).collect(), None))
        .collect();
    let ortho = MultibandRaster::new(w, h, bands, t, "EPSG:25832").unwrap();
    let ring: Vec<(f64, f64)> = (0..24)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 24.0;
            (107.5 + 4.0 * a.cos(), 192.5 + 4.0 * a.sin())
        })
        .collect();
    let big = CrownPolygon::new("big", ring.clone(), CrownSource::Imported).unwrap();
    let tiny = CrownPolygon::new("tiny", vec![(101.0, 199.0), (101.6, 199.0), (101.6, 198.4)], CrownSource::Imported).unwrap();
    let crowns = CrownCollection::new("EPSG:25832", vec![big.clone(), tiny]).unwrap();
    let out = extract_chips(&ortho, &crowns, 64, "test").unwrap();
    assert_eq!(out.chips.len(), 1);
    assert_eq!(out.skipped[0].crown_id, "tiny");
    let chip = &out.chips[0];
    let full = rasterize_polygon(&big, &t, w, h).unwrap();
    assert_eq!(chip.valid_pixels, full.count());
    let ct = chip.raster.transform();
    let (c0, r0) = t.invert(ct.origin_x, ct.origin_y);
    let (c0, r0) = (c0.round() as usize, r0.round() as usize);
    for r in 0..chip.raster.height() {
        for c in 0..chip.raster.width() {
            let inside = chip.mask[r * chip.raster.width() + c];
            assert_eq!(inside, full.get(r0 + r, c0 + c));
            let v = chip.raster.bands()[0].data[r * chip.raster.width() + c];
            if inside {
                assert_eq!(v, ortho.bands()[0].data[(r0 + r) * w + c0 + c]);
            }
        }
    }
    let wrong = CrownCollection::new("EPSG:4326", vec![big]).unwrap();
    assert!(matches!(extract_chips(&ortho, &wrong, 1, "x"), Err(Error::CrsMismatch { .. })));
}
