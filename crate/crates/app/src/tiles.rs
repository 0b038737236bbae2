//! On-the-fly XYZ tiles in web mercator (EPSG:3857).

use std::collections::BTreeMap;
use std::path::Path;

use canopy_core::indices::{compute_index, IndexKind};
use canopy_core::{load_raster, Raster};
use serde::{Deserialize, Serialize};

use crate::crs::Transformer;
use crate::error::AppError;

pub const TILE_SIZE: usize = 256;
pub const MAX_ZOOM: u8 = 22;
/// Half the side of the mercator square, metres.
pub const MERCATOR_EXTENT: f64 = 20_037_508.342_789_244;
pub const WEB_MERCATOR: &str = "EPSG:3857";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileAddress {
    pub layer: String,
    pub z: u8,
    pub x: u32,
    pub y: u32,
}

impl TileAddress {
    pub fn new(layer: impl Into<String>, z: u32, x: u32, y: u32) -> Result<Self, AppError> {
        if z > MAX_ZOOM as u32 {
            return Err(AppError::field("z", format!("zoom {z} exceeds {MAX_ZOOM}")));
        }
        let n = 1u64 << z;
        if x as u64 >= n || y as u64 >= n {
            return Err(AppError::field("xy", format!("tile {x}/{y} outside zoom {z}")));
        }
        Ok(Self {
            layer: layer.into(),
            z: z as u8,
            x,
            y,
        })
    }

    /// (min_x, min_y, max_x, max_y) in EPSG:3857 metres.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        tile_bounds(self.z, self.x, self.y)
    }
}

pub fn tile_bounds(z: u8, x: u32, y: u32) -> (f64, f64, f64, f64) {
    let size = 2.0 * MERCATOR_EXTENT / (1u64 << z) as f64;
    let min_x = -MERCATOR_EXTENT + x as f64 * size;
    let max_y = MERCATOR_EXTENT - y as f64 * size;
    (min_x, max_y - size, min_x + size, max_y)
}

/// Index colormap stops over [−1, 1]: red, orange, pale yellow, light green, green.
pub const INDEX_COLORMAP: [(f64, [u8; 3]); 5] = [
    (-1.0, [215, 25, 28]),
    (-0.5, [253, 174, 97]),
    (0.0, [255, 255, 191]),
    (0.5, [166, 217, 106]),
    (1.0, [26, 150, 65]),
];

/// Piecewise-linear colour of an index value; values outside [−1, 1] clamp.
pub fn index_color(v: f64) -> [u8; 3] {
    let v = v.clamp(-1.0, 1.0);
    let i = INDEX_COLORMAP
        .windows(2)
        .position(|w| v <= w[1].0)
        .unwrap_or(INDEX_COLORMAP.len() - 2);
    let ((a, ca), (b, cb)) = (INDEX_COLORMAP[i], INDEX_COLORMAP[i + 1]);
    let t = (v - a) / (b - a);
    std::array::from_fn(|k| (ca[k] as f64 + t * (cb[k] as f64 - ca[k] as f64)).round() as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Rgb,
    Ndvi,
    Ndre,
}

/// Registration entry of a raster layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub path: std::path::PathBuf,
    pub kind: LayerKind,
    /// Value range stretched to 0..255 for RGB layers.
    #[serde(default)]
    pub range: Option<[f64; 2]>,
}

#[derive(Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    raster: Raster,
    range: [f64; 2],
    to_layer: Transformer,
    /// Extent in EPSG:3857.
    bounds: (f64, f64, f64, f64),
    /// Extent in EPSG:4326.
    lonlat_bounds: (f64, f64, f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub crs: String,
    /// [min_lon, min_lat, max_lon, max_lat]
    pub bounds: [f64; 4],
    pub colormap: Option<Vec<(f64, [u8; 3])>>,
}

fn extent_in(t: &Transformer, raster: &Raster) -> Option<(f64, f64, f64, f64)> {
    // Sample the raster outline densely; projections bend straight edges.
    let (w, h) = (raster.width() as f64, raster.height() as f64);
    let g = raster.transform();
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    const STEPS: usize = 32;
    for i in 0..=STEPS {
        let f = i as f64 / STEPS as f64;
        for (c, r) in [(f * w, 0.0), (f * w, h), (0.0, f * h), (w, f * h)] {
            let (x, y) = g.apply(c, r);
            let (px, py) = t.apply(x, y)?;
            b = (b.0.min(px), b.1.min(py), b.2.max(px), b.3.max(py));
        }
    }
    Some(b)
}

impl Layer {
    pub fn new(name: impl Into<String>, kind: LayerKind, raster: Raster, range: Option<[f64; 2]>) -> Result<Self, AppError> {
        let name = name.into();
        let raster = match kind {
            LayerKind::Rgb => {
                for b in ["red", "green", "blue"] {
                    raster.require_band(b)?;
                }
                raster
            }
            LayerKind::Ndvi | LayerKind::Ndre => {
                let k = if kind == LayerKind::Ndvi { IndexKind::Ndvi } else { IndexKind::Ndre };
                if raster.band(k.band_name()).is_some() {
                    raster
                } else {
                    compute_index(&raster, k)?.into_raster()
                }
            }
        };
        let crs = raster.crs().to_string();
        let to_mercator = Transformer::new(&crs, WEB_MERCATOR)?;
        let to_lonlat = Transformer::new(&crs, "EPSG:4326")?;
        let bounds = extent_in(&to_mercator, &raster)
            .ok_or_else(|| AppError::invalid(format!("layer {name}: extent cannot be projected")))?;
        let lonlat_bounds = extent_in(&to_lonlat, &raster)
            .ok_or_else(|| AppError::invalid(format!("layer {name}: extent cannot be projected")))?;
        Ok(Self {
            kind,
            range: range.unwrap_or([0.0, 255.0]),
            to_layer: Transformer::new(WEB_MERCATOR, &crs)?,
            raster,
            bounds,
            lonlat_bounds,
            name,
        })
    }

    pub fn load(name: &str, cfg: &LayerConfig) -> Result<Self, AppError> {
        let raster: Raster = load_raster(&cfg.path)?;
        Self::new(name, cfg.kind, raster, cfg.range)
    }

    pub fn info(&self) -> LayerInfo {
        let b = self.lonlat_bounds;
        LayerInfo {
            name: self.name.clone(),
            kind: self.kind,
            crs: self.raster.crs().to_string(),
            bounds: [b.0, b.1, b.2, b.3],
            colormap: (self.kind != LayerKind::Rgb).then(|| INDEX_COLORMAP.to_vec()),
        }
    }

    /// Colour of the layer pixel under a mercator point, if any.
    fn sample(&self, mx: f64, my: f64) -> Option<[u8; 4]> {
        let (x, y) = self.to_layer.apply(mx, my)?;
        let (c, r) = self.raster.transform().invert(x, y);
        if !(c >= 0.0 && r >= 0.0) {
            return None;
        }
        let (c, r) = (c.floor() as usize, r.floor() as usize);
        if c >= self.raster.width() || r >= self.raster.height() {
            return None;
        }
        let i = self.raster.index(r, c);
        match self.kind {
            LayerKind::Rgb => {
                let mut px = [0u8, 0, 0, 255];
                let [lo, hi] = self.range;
                for (k, name) in ["red", "green", "blue"].iter().enumerate() {
                    let band = self.raster.band(name).expect("checked at load");
                    if !band.is_valid_at(i) {
                        return None;
                    }
                    let v = (band.data[i] as f64 - lo) / (hi - lo);
                    px[k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                Some(px)
            }
            LayerKind::Ndvi | LayerKind::Ndre => {
                let band = &self.raster.bands()[0];
                if !band.is_valid_at(i) {
                    return None;
                }
                let [r, g, b] = index_color(band.data[i] as f64);
                Some([r, g, b, 255])
            }
        }
    }

    /// Row-major RGBA pixels of one tile; transparent where there is no data.
    pub fn render_rgba(&self, z: u8, x: u32, y: u32) -> Vec<u8> {
        let mut out = vec![0u8; TILE_SIZE * TILE_SIZE * 4];
        let (min_x, min_y, max_x, max_y) = tile_bounds(z, x, y);
        let b = self.bounds;
        if max_x < b.0 || min_x > b.2 || max_y < b.1 || min_y > b.3 {
            return out;
        }
        let res = (max_x - min_x) / TILE_SIZE as f64;
        for row in 0..TILE_SIZE {
            let my = max_y - (row as f64 + 0.5) * res;
            if my < b.1 || my > b.3 {
                continue;
            }
            for col in 0..TILE_SIZE {
                let mx = min_x + (col as f64 + 0.5) * res;
                if mx < b.0 || mx > b.2 {
                    continue;
                }
                if let Some(px) = self.sample(mx, my) {
                    let o = (row * TILE_SIZE + col) * 4;
                    out[o..o + 4].copy_from_slice(&px);
                }
            }
        }
        out
    }
}

pub fn encode_png(rgba: &[u8], width: usize, height: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(rgba).expect("in-memory PNG data");
    }
    buf
}

/// Registered layers by name.
#[derive(Debug, Default)]
pub struct LayerRegistry {
    layers: BTreeMap<String, Layer>,
}

impl LayerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(configs: &BTreeMap<String, LayerConfig>, base: &Path) -> Result<Self, AppError> {
        let mut reg = Self::new();
        for (name, cfg) in configs {
            let mut cfg = cfg.clone();
            if cfg.path.is_relative() {
                cfg.path = base.join(&cfg.path);
            }
            reg.insert(Layer::load(name, &cfg)?);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, layer: Layer) {
        self.layers.insert(layer.name.clone(), layer);
    }

    pub fn get(&self, name: &str) -> Option<&Layer> {
        self.layers.get(name)
    }

    pub fn infos(&self) -> Vec<LayerInfo> {
        self.layers.values().map(Layer::info).collect()
    }

    /// PNG bytes of a tile. Identical inputs give identical bytes.
    pub fn render_tile(&self, addr: &TileAddress) -> Result<Vec<u8>, AppError> {
        let layer = self
            .get(&addr.layer)
            .ok_or_else(|| AppError::NotFound(format!("unknown layer {:?}", addr.layer)))?;
        Ok(encode_png(&layer.render_rgba(addr.z, addr.x, addr.y), TILE_SIZE, TILE_SIZE))
    }
}
