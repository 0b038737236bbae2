//! Georeferenced multiband rasters: storage, file formats, preprocessing and tiling.

mod clahe;
mod filters;
pub mod geotiff;
pub mod interchange;
mod tiles;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use clahe::{apply_clahe, clip_histogram, ClaheParams};
pub use filters::{denoise, reflect_index};
pub use tiles::{iterate_tiles, Tile, TileIter, TileSpec};

/// Band names the pipeline looks up by meaning.
pub mod band_names {
    pub const RED: &str = "red";
    pub const GREEN: &str = "green";
    pub const BLUE: &str = "blue";
    pub const RED_EDGE: &str = "rededge";
    pub const NIR: &str = "nir";
    pub const THERMAL: &str = "thermal";
    pub const CHM: &str = "chm";
}

/// Metadata key recording the integer sample type a raster was normalized from.
pub const META_SOURCE_SAMPLE_TYPE: &str = "source_sample_type";
/// Metadata key recording how CLAHE was applied.
pub const META_CLAHE: &str = "clahe";

/// Axis-aligned pixel → world mapping. `origin` is the outer corner of pixel (0, 0).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64) -> Self {
        Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
        }
    }

    /// North-up transform with square pixels.
    pub fn north_up(origin_x: f64, origin_y: f64, pixel_size: f64) -> Self {
        Self::new(origin_x, origin_y, pixel_size, -pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size_x > 0.0) || !self.pixel_size_x.is_finite() {
            return Err(Error::invalid("pixel_size_x must be > 0"));
        }
        if self.pixel_size_y == 0.0 || !self.pixel_size_y.is_finite() {
            return Err(Error::invalid("pixel_size_y must be non-zero"));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid("origin must be finite"));
        }
        Ok(())
    }

    /// World coordinate of a (fractional) pixel-grid position.
    pub fn apply(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size_x,
            self.origin_y + row * self.pixel_size_y,
        )
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        self.apply(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Fractional (col, row) of a world coordinate.
    pub fn invert(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size_x,
            (y - self.origin_y) / self.pixel_size_y,
        )
    }

    /// Transform of a sub-window starting at (row, col).
    pub fn offset(&self, row: usize, col: usize) -> Self {
        let (ox, oy) = self.apply(col as f64, row as f64);
        Self::new(ox, oy, self.pixel_size_x, self.pixel_size_y)
    }

    /// GDAL-ordered six-element form.
    pub fn to_gdal(&self) -> [f64; 6] {
        [
            self.origin_x,
            self.pixel_size_x,
            0.0,
            self.origin_y,
            0.0,
            self.pixel_size_y,
        ]
    }

    pub fn from_gdal(t: &[f64]) -> Result<Self> {
        if t.len() != 6 {
            return Err(Error::invalid(format!(
                "transform needs 6 numbers, got {}",
                t.len()
            )));
        }
        if t[2] != 0.0 || t[4] != 0.0 {
            return Err(Error::Unsupported(
                "rotated geotransforms are not supported".into(),
            ));
        }
        let gt = Self::new(t[0], t[3], t[1], t[5]);
        gt.validate()?;
        Ok(gt)
    }
}

/// One named value plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Band<T> {
    pub name: String,
    pub data: Vec<T>,
    pub nodata: Option<T>,
}

impl<T: Scalar> Band<T> {
    pub fn new(name: impl Into<String>, data: Vec<T>, nodata: Option<T>) -> Self {
        Self {
            name: name.into(),
            data,
            nodata,
        }
    }

    /// A cell is valid when it is finite and differs from the nodata marker.
    #[inline]
    pub fn is_valid(&self, v: T) -> bool {
        v.is_finite() && self.nodata.map_or(true, |nd| v != nd)
    }

    #[inline]
    pub fn is_valid_at(&self, idx: usize) -> bool {
        self.is_valid(self.data[idx])
    }

    /// Marker to write into masked cells: the declared nodata or NaN.
    pub fn fill_value(&self) -> T {
        self.nodata.unwrap_or_else(T::nan)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&v| self.is_valid(v)).collect()
    }
}

/// Pixel window in raster coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// A georeferenced grid of named spectral bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandRaster<T> {
    width: usize,
    height: usize,
    bands: Vec<Band<T>>,
    transform: GeoTransform,
    crs: String,
    metadata: BTreeMap<String, String>,
}

impl<T: Scalar> MultibandRaster<T> {
    pub fn new(
        width: usize,
        height: usize,
        bands: Vec<Band<T>>,
        transform: GeoTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        transform.validate()?;
        let n = width * height;
        for (i, b) in bands.iter().enumerate() {
            if b.data.len() != n {
                return Err(Error::invalid(format!(
                    "band \"{}\" has {} cells, expected {}x{}={}",
                    b.name,
                    b.data.len(),
                    width,
                    height,
                    n
                )));
            }
            if b.name.is_empty() {
                return Err(Error::invalid(format!("band {} has an empty name", i + 1)));
            }
            if bands[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::invalid(format!("duplicate band name \"{}\"", b.name)));
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            transform,
            crs: crs.into(),
            metadata: BTreeMap::new(),
        })
    }

    /// Single-band convenience constructor.
    pub fn single(
        name: &str,
        width: usize,
        height: usize,
        data: Vec<T>,
        nodata: Option<T>,
        transform: GeoTransform,
        crs: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![Band::new(name, data, nodata)],
            transform,
            crs,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bands(&self) -> &[Band<T>] {
        &self.bands
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn band_names(&self) -> Vec<&str> {
        self.bands.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn band(&self, name: &str) -> Option<&Band<T>> {
        self.bands.iter().find(|b| b.name == name)
    }

    pub fn require_band(&self, name: &str) -> Result<&Band<T>> {
        self.band(name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn crs(&self) -> &str {
        &self.crs
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn with_metadata(mut self, metadata: BTreeMap<String, String>) -> Self {
        self.metadata = metadata;
        self
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// True when every band holds a valid value at the cell.
    pub fn all_valid_at(&self, idx: usize) -> bool {
        self.bands.iter().all(|b| b.is_valid_at(idx))
    }

    /// Replace the bands, keeping geometry, CRS and metadata.
    pub fn with_bands(&self, bands: Vec<Band<T>>) -> Result<Self> {
        let mut out = Self::new(self.width, self.height, bands, self.transform, &self.crs)?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Apply a plane-to-plane function to every band.
    pub fn map_bands<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&Band<T>) -> Result<Vec<T>>,
    {
        let bands = self
            .bands
            .iter()
            .map(|b| Ok(Band::new(b.name.clone(), f(b)?, b.nodata)))
            .collect::<Result<Vec<_>>>()?;
        self.with_bands(bands)
    }

    /// Copy a window out of the raster. The window must lie inside the grid.
    pub fn subset(&self, w: Window) -> Result<Self> {
        if w.row + w.height > self.height || w.col + w.width > self.width {
            return Err(Error::invalid(format!(
                "window {:?} exceeds raster {}x{}",
                w, self.width, self.height
            )));
        }
        let bands = self
            .bands
            .iter()
            .map(|b| {
                let mut data = Vec::with_capacity(w.width * w.height);
                for r in w.row..w.row + w.height {
                    let start = r * self.width + w.col;
                    data.extend_from_slice(&b.data[start..start + w.width]);
                }
                Band::new(b.name.clone(), data, b.nodata)
            })
            .collect();
        let mut out = Self::new(
            w.width,
            w.height,
            bands,
            self.transform.offset(w.row, w.col),
            &self.crs,
        )?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Convert to another working precision.
    pub fn cast<U: Scalar>(&self) -> MultibandRaster<U> {
        let conv = |v: T| U::from_f64_lossy(v.to_f64_lossy());
        MultibandRaster {
            width: self.width,
            height: self.height,
            bands: self
                .bands
                .iter()
                .map(|b| Band {
                    name: b.name.clone(),
                    data: b.data.iter().map(|&v| conv(v)).collect(),
                    nodata: b.nodata.map(conv),
                })
                .collect(),
            transform: self.transform,
            crs: self.crs.clone(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Read a raster from GeoTIFF (`.tif`/`.tiff`) or the JSON+binary interchange
/// format (`.json` header or `.bin` payload).
pub fn load_raster<T: Scalar>(path: impl AsRef<Path>) -> Result<MultibandRaster<T>> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("tif") | Some("tiff") => geotiff::read(path),
        Some("json") | Some("bin") => interchange::read(path),
        other => Err(Error::Unsupported(format!(
            "unrecognized raster extension {:?} for {}",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

/// Write a raster; the format follows the file extension as in [`load_raster`].
pub fn save_raster<T: Scalar>(raster: &MultibandRaster<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if raster.band_count() == 0 {
        return Err(Error::invalid("cannot save a raster with no bands"));
    }
    match extension(path).as_deref() {
        Some("tif") | Some("tiff") => geotiff::write(raster, path, &geotiff::WriteOptions::for_raster(raster)),
        Some("json") | Some("bin") => interchange::write(raster, path),
        other => Err(Error::Unsupported(format!(
            "unrecognized raster extension {:?} for {}",
            other.unwrap_or(""),
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}
