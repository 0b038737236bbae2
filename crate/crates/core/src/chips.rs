//! Crown rasterization and per-tree image chips.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crs_compatible, edge_crossing_x, CrownCollection, CrownPolygon};
use crate::raster::{Band, GeoTransform, MultibandRaster, Window};
use crate::scalar::Scalar;

/// Default minimum number of valid pixels for a chip.
pub const DEFAULT_MIN_PIXELS: usize = 64;

/// Full-raster binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }
}

/// A polygon's rasterized footprint restricted to its pixel bounding box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footprint {
    pub window: Window,
    pub data: Vec<bool>,
}

impl Footprint {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Shrink to the tight bounding box of the inside pixels; `None` when empty.
    pub fn tighten(&self) -> Option<Footprint> {
        let w = self.window.width;
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        for (i, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
        }
        if r0 == usize::MAX {
            return None;
        }
        let (h2, w2) = (r1 - r0 + 1, c1 - c0 + 1);
        let mut data = Vec::with_capacity(h2 * w2);
        for r in r0..=r1 {
            data.extend_from_slice(&self.data[r * w + c0..r * w + c1 + 1]);
        }
        Some(Footprint {
            window: Window {
                row: self.window.row + r0,
                col: self.window.col + c0,
                height: h2,
                width: w2,
            },
            data,
        })
    }
}

/// Scanline rasterization over the polygon's pixel bounding box, clipped to
/// the grid. A pixel is inside iff its center is inside the ring (even-odd).
pub fn rasterize_footprint(
    polygon: &CrownPolygon,
    transform: &GeoTransform,
    width: usize,
    height: usize,
) -> Result<Footprint> {
    if !(polygon.area() > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "crown {}: zero-area polygon",
            polygon.crown_id
        )));
    }
    let bb = polygon.bbox();
    let (c_a, r_a) = transform.invert(bb.min_x, bb.min_y);
    let (c_b, r_b) = transform.invert(bb.max_x, bb.max_y);
    let clamp_range = |a: f64, b: f64, n: usize| -> (usize, usize) {
        let lo = (a.min(b).floor() - 1.0).max(0.0);
        let hi = (a.max(b).ceil() + 1.0).min(n as f64);
        if !(lo < hi) {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    };
    let (c0, c1) = clamp_range(c_a, c_b, width);
    let (r0, r1) = clamp_range(r_a, r_b, height);
    let window = Window {
        row: r0,
        col: c0,
        height: r1 - r0,
        width: c1 - c0,
    };
    let mut data = vec![false; window.width * window.height];
    let ring = polygon.ring();
    let mut xs = Vec::new();
    for r in r0..r1 {
        let (_, y) = transform.pixel_center(r, 0);
        xs.clear();
        for e in ring.windows(2) {
            let ((xi, yi), (xj, yj)) = (e[0], e[1]);
            if (yi > y) != (yj > y) {
                xs.push(edge_crossing_x(xi, yi, xj, yj, y));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).expect("finite crossings"));
        let row = &mut data[(r - r0) * window.width..(r - r0 + 1) * window.width];
        for c in c0..c1 {
            let (x, _) = transform.pixel_center(r, c);
            let above = xs.len() - xs.partition_point(|&xc| xc <= x);
            row[c - c0] = above % 2 == 1;
        }
    }
    Ok(Footprint { window, data })
}

/// Rasterize a polygon onto a full `width`×`height` grid.
pub fn rasterize_polygon(
    polygon: &CrownPolygon,
    transform: &GeoTransform,
    width: usize,
    height: usize,
) -> Result<Mask> {
    let fp = rasterize_footprint(polygon, transform, width, height)?;
    let mut data = vec![false; width * height];
    for r in 0..fp.window.height {
        for c in 0..fp.window.width {
            if fp.data[r * fp.window.width + c] {
                data[(fp.window.row + r) * width + fp.window.col + c] = true;
            }
        }
    }
    Ok(Mask {
        width,
        height,
        data,
    })
}

/// Image patch under one crown. Pixels outside the crown carry each band's
/// fill value (declared nodata, else NaN) and `mask` is false there.
#[derive(Debug, Clone)]
pub struct CrownChip<T> {
    pub crown_id: String,
    pub raster: MultibandRaster<T>,
    pub mask: Vec<bool>,
    pub valid_pixels: usize,
    pub provenance: String,
    pub species: Option<String>,
}

impl<T: Scalar> CrownChip<T> {
    pub fn masked_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }

    /// Rebuild a chip from a stored patch: a pixel is unmasked when every band is valid.
    pub fn from_raster(
        crown_id: impl Into<String>,
        raster: MultibandRaster<T>,
        provenance: impl Into<String>,
    ) -> Self {
        let mask: Vec<bool> = (0..raster.len()).map(|i| raster.all_valid_at(i)).collect();
        let valid_pixels = mask.iter().filter(|&&m| m).count();
        Self {
            crown_id: crown_id.into(),
            raster,
            mask,
            valid_pixels,
            provenance: provenance.into(),
            species: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub crown_id: String,
    pub reason: String,
}

pub const REASON_NO_COVERAGE: &str = "no coverage";
pub const REASON_ALL_NODATA: &str = "all nodata";

#[derive(Debug, Clone)]
pub struct ChipExtraction<T> {
    pub chips: Vec<CrownChip<T>>,
    pub skipped: Vec<Skipped>,
}

/// Cut one chip per crown holding at least `min_pixels` valid pixels.
///
/// Output order follows the crown order. Chip values are copied from the
/// source grid without resampling.
pub fn extract_chips<T: Scalar>(
    ortho: &MultibandRaster<T>,
    crowns: &CrownCollection,
    min_pixels: usize,
    provenance: &str,
) -> Result<ChipExtraction<T>> {
    if !crs_compatible(ortho.crs(), &crowns.crs) {
        return Err(Error::CrsMismatch {
            raster: ortho.crs().to_string(),
            crowns: crowns.crs.clone(),
        });
    }
    let results: Vec<Result<std::result::Result<CrownChip<T>, Skipped>>> = crowns
        .crowns()
        .par_iter()
        .map(|crown| cut_chip(ortho, crown, min_pixels, provenance))
        .collect();
    let mut out = ChipExtraction {
        chips: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r? {
            Ok(chip) => out.chips.push(chip),
            Err(skip) => out.skipped.push(skip),
        }
    }
    Ok(out)
}

fn cut_chip<T: Scalar>(
    ortho: &MultibandRaster<T>,
    crown: &CrownPolygon,
    min_pixels: usize,
    provenance: &str,
) -> Result<std::result::Result<CrownChip<T>, Skipped>> {
    let skip = |reason: String| {
        Ok(Err(Skipped {
            crown_id: crown.crown_id.clone(),
            reason,
        }))
    };
    let fp = rasterize_footprint(crown, ortho.transform(), ortho.width(), ortho.height())?;
    let Some(fp) = fp.tighten() else {
        return skip(REASON_NO_COVERAGE.into());
    };
    let patch = ortho.subset(fp.window)?;
    let mask: Vec<bool> = fp
        .data
        .iter()
        .enumerate()
        .map(|(i, &inside)| inside && patch.all_valid_at(i))
        .collect();
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return skip(REASON_ALL_NODATA.into());
    }
    if valid < min_pixels {
        return skip(format!("too few valid pixels ({valid} < {min_pixels})"));
    }
    let bands = patch
        .bands()
        .iter()
        .map(|b| {
            let fill = b.fill_value();
            let data = b
                .data
                .iter()
                .zip(&mask)
                .map(|(&v, &m)| if m { v } else { fill })
                .collect();
            Band::new(b.name.clone(), data, Some(fill))
        })
        .collect();
    let raster = patch.with_bands(bands)?;
    Ok(Ok(CrownChip {
        crown_id: crown.crown_id.clone(),
        raster,
        mask,
        valid_pixels: valid,
        provenance: provenance.to_string(),
        species: crown.species.clone(),
    }))
}

/// One row of a chip manifest CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub crown_id: String,
    pub file: String,
    pub valid_pixels: usize,
    #[serde(default)]
    pub species_label: Option<String>,
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e.to_string())
    }
}
