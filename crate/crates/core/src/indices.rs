//! Normalized-difference vegetation indices and per-crown zonal statistics.
//!
//! NDVI = (NIR − Red) / (NIR + Red).
//!
//! NDRE = (RedEdge − Red) / (RedEdge + Red). Note that the more common
//! definition uses NIR in place of Red.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chips::{csv_err, rasterize_footprint, Skipped, REASON_ALL_NODATA, REASON_NO_COVERAGE};
use crate::error::{Error, Result};
use crate::geometry::{crs_compatible, CrownCollection};
use crate::raster::{band_names, Band, MultibandRaster};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Ndvi,
    Ndre,
}

impl IndexKind {
    pub fn band_name(self) -> &'static str {
        match self {
            IndexKind::Ndvi => "ndvi",
            IndexKind::Ndre => "ndre",
        }
    }

    /// (numerator-positive band, reference band)
    pub fn inputs(self) -> (&'static str, &'static str) {
        match self {
            IndexKind::Ndvi => (band_names::NIR, band_names::RED),
            IndexKind::Ndre => (band_names::RED_EDGE, band_names::RED),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndvi" => Some(IndexKind::Ndvi),
            "ndre" => Some(IndexKind::Ndre),
            _ => None,
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.band_name())
    }
}

/// Single-band index product; nodata is NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexRaster<T> {
    kind: IndexKind,
    raster: MultibandRaster<T>,
}

impl<T: Scalar> IndexRaster<T> {
    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn raster(&self) -> &MultibandRaster<T> {
        &self.raster
    }

    pub fn into_raster(self) -> MultibandRaster<T> {
        self.raster
    }

    pub fn values(&self) -> &[T] {
        &self.raster.bands()[0].data
    }

    /// Wrap an existing single-band raster named "ndvi" or "ndre".
    pub fn from_raster(raster: MultibandRaster<T>) -> Result<Self> {
        if raster.band_count() != 1 {
            return Err(Error::invalid(format!(
                "index raster must have exactly one band, found {}",
                raster.band_count()
            )));
        }
        let kind = IndexKind::parse(&raster.bands()[0].name).ok_or_else(|| {
            Error::invalid(format!(
                "index band must be named ndvi or ndre, found \"{}\"",
                raster.bands()[0].name
            ))
        })?;
        Ok(Self { kind, raster })
    }
}

/// Per-pixel (a − b) / (a + b).
///
/// A pixel is nodata when either input is nodata, when the denominator is
/// zero, or when either reflectance is negative.
pub fn normalized_difference<T: Scalar>(a: &Band<T>, b: &Band<T>) -> Vec<T> {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            if !a.is_valid(x) || !b.is_valid(y) || x < T::zero() || y < T::zero() {
                return T::nan();
            }
            let den = x + y;
            if den == T::zero() {
                return T::nan();
            }
            (x - y) / den
        })
        .collect()
}

pub fn compute_index<T: Scalar>(raster: &MultibandRaster<T>, kind: IndexKind) -> Result<IndexRaster<T>> {
    let (pos, reference) = kind.inputs();
    let a = raster.require_band(pos)?;
    let b = raster.require_band(reference)?;
    let data = normalized_difference(a, b);
    let mut out = MultibandRaster::single(
        kind.band_name(),
        raster.width(),
        raster.height(),
        data,
        Some(T::nan()),
        *raster.transform(),
        raster.crs(),
    )?;
    out.set_metadata("index", kind.band_name());
    Ok(IndexRaster { kind, raster: out })
}

pub fn compute_ndvi<T: Scalar>(raster: &MultibandRaster<T>) -> Result<IndexRaster<T>> {
    compute_index(raster, IndexKind::Ndvi)
}

pub fn compute_ndre<T: Scalar>(raster: &MultibandRaster<T>) -> Result<IndexRaster<T>> {
    compute_index(raster, IndexKind::Ndre)
}

/// Summary of index values under one crown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZonalStats {
    pub crown_id: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p10: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZonalReport {
    pub stats: Vec<ZonalStats>,
    pub skipped: Vec<Skipped>,
}

/// Percentile of sorted data by linear interpolation between order statistics.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Population statistics of a non-empty sample.
pub fn summarize(crown_id: &str, mut values: Vec<f64>) -> ZonalStats {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ZonalStats {
        crown_id: crown_id.to_string(),
        count: values.len(),
        mean,
        median: percentile_sorted(&values, 0.5),
        std: var.sqrt(),
        min: values[0],
        max: values[values.len() - 1],
        p10: percentile_sorted(&values, 0.1),
        p90: percentile_sorted(&values, 0.9),
    }
}

pub fn zonal_stats<T: Scalar>(index: &IndexRaster<T>, crowns: &CrownCollection) -> Result<ZonalReport> {
    let raster = index.raster();
    if !crs_compatible(raster.crs(), &crowns.crs) {
        return Err(Error::CrsMismatch {
            raster: raster.crs().to_string(),
            crowns: crowns.crs.clone(),
        });
    }
    let band = &raster.bands()[0];
    let w = raster.width();
    let mut report = ZonalReport {
        stats: Vec::new(),
        skipped: Vec::new(),
    };
    for crown in crowns.crowns() {
        let fp = rasterize_footprint(crown, raster.transform(), w, raster.height())?;
        if fp.count() == 0 {
            report.skipped.push(Skipped {
                crown_id: crown.crown_id.clone(),
                reason: REASON_NO_COVERAGE.into(),
            });
            continue;
        }
        let mut values = Vec::new();
        for r in 0..fp.window.height {
            for c in 0..fp.window.width {
                if fp.data[r * fp.window.width + c] {
                    let v = band.data[(fp.window.row + r) * w + fp.window.col + c];
                    if band.is_valid(v) {
                        values.push(v.to_f64_lossy());
                    }
                }
            }
        }
        if values.is_empty() {
            report.skipped.push(Skipped {
                crown_id: crown.crown_id.clone(),
                reason: REASON_ALL_NODATA.into(),
            });
            continue;
        }
        report.stats.push(summarize(&crown.crown_id, values));
    }
    Ok(report)
}

/// Write `crown_id,count,mean,median,std,min,max,p10,p90`.
pub fn write_stats_csv(path: impl AsRef<Path>, stats: &[ZonalStats]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for s in stats {
        w.serialize(s).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_stats_csv(path: impl AsRef<Path>) -> Result<Vec<ZonalStats>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}
