//! Contrast-limited adaptive histogram equalization.
//!
//! The image is split into a grid of contextual regions. Each region gets a
//! clipped, redistributed histogram whose cumulative distribution becomes a
//! lookup table; every pixel is then mapped through the four surrounding
//! region tables and blended bilinearly by its distance to their centers.
//! Histograms are kept as fractions of the region's valid pixel count, so the
//! mapping depends on the value distribution only, not on region size.

use serde::{Deserialize, Serialize};

use super::{MultibandRaster, META_CLAHE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClaheParams {
    /// Contextual regions along (rows, cols).
    pub tile_grid: (usize, usize),
    /// Clip level relative to a flat histogram; `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
    pub bins: usize,
    /// Declared intensity range of every band.
    pub range: (f64, f64),
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tile_grid: (8, 8),
            clip_limit: 2.0,
            bins: 256,
            range: (0.0, 1.0),
        }
    }
}

/// Clip a histogram at `limit`, returning the clipped bins and the excess.
pub fn clip_histogram(hist: &[f64], limit: f64) -> (Vec<f64>, f64) {
    let mut excess = 0.0;
    let clipped = hist
        .iter()
        .map(|&h| {
            if h > limit {
                excess += h - limit;
                limit
            } else {
                h
            }
        })
        .collect();
    (clipped, excess)
}

struct RegionGrid {
    edges: Vec<usize>,
    centers: Vec<f64>,
}

impl RegionGrid {
    fn new(n: usize, parts: usize) -> Self {
        let edges: Vec<usize> = (0..=parts).map(|i| i * n / parts).collect();
        let centers = edges
            .windows(2)
            .map(|e| (e[0] + e[1]) as f64 / 2.0)
            .collect();
        Self { edges, centers }
    }

    /// Neighboring region indices and blend weight for a pixel-center coordinate.
    fn locate(&self, pos: f64) -> (usize, usize, f64) {
        let last = self.centers.len() - 1;
        if pos <= self.centers[0] {
            return (0, 0, 0.0);
        }
        if pos >= self.centers[last] {
            return (last, last, 0.0);
        }
        let i = self.centers.partition_point(|&c| c <= pos) - 1;
        let w = (pos - self.centers[i]) / (self.centers[i + 1] - self.centers[i]);
        (i, i + 1, w)
    }
}

fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}

pub fn apply_clahe<T: Scalar>(raster: &MultibandRaster<T>, params: &ClaheParams) -> Result<MultibandRaster<T>> {
    let (rows, cols) = params.tile_grid;
    let (w, h) = (raster.width(), raster.height());
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("CLAHE tile grid must be at least 1x1"));
    }
    if rows > h || cols > w {
        return Err(Error::invalid(format!(
            "CLAHE tile grid {rows}x{cols} is larger than the {h}x{w} image"
        )));
    }
    if !(params.clip_limit > 0.0) {
        return Err(Error::invalid("CLAHE clip_limit must be > 0"));
    }
    if params.bins == 0 {
        return Err(Error::invalid("CLAHE needs at least one histogram bin"));
    }
    let (lo, hi) = params.range;
    if !(hi > lo) {
        return Err(Error::invalid("CLAHE range must satisfy hi > lo"));
    }
    let bins = params.bins;
    let row_grid = RegionGrid::new(h, rows);
    let col_grid = RegionGrid::new(w, cols);
    let bin_of = |v: f64| -> usize {
        let b = ((v - lo) / (hi - lo) * bins as f64).floor();
        b.clamp(0.0, (bins - 1) as f64) as usize
    };
    let limit = params.clip_limit / bins as f64;

    let mut out = raster.map_bands(|band| {
        // One lookup table per region; None when the region has no valid pixels.
        let mut luts: Vec<Option<Vec<f64>>> = Vec::with_capacity(rows * cols);
        for ri in 0..rows {
            for ci in 0..cols {
                let mut hist = vec![0.0; bins];
                let mut n = 0usize;
                for r in row_grid.edges[ri]..row_grid.edges[ri + 1] {
                    for c in col_grid.edges[ci]..col_grid.edges[ci + 1] {
                        let v = band.data[r * w + c];
                        if band.is_valid(v) {
                            hist[bin_of(v.to_f64_lossy())] += 1.0;
                            n += 1;
                        }
                    }
                }
                if n == 0 {
                    luts.push(None);
                    continue;
                }
                let frac: Vec<f64> = hist.iter().map(|&c| c / n as f64).collect();
                let (mut clipped, excess) = clip_histogram(&frac, limit);
                let share = excess / bins as f64;
                clipped.iter_mut().for_each(|b| *b += share);
                let mut cdf = 0.0;
                let lut = clipped
                    .iter()
                    .map(|&p| {
                        cdf += p;
                        lo + (hi - lo) * cdf.min(1.0)
                    })
                    .collect();
                luts.push(Some(lut));
            }
        }
        let map = |ri: usize, ci: usize, v: f64, b: usize| -> f64 {
            match &luts[ri * cols + ci] {
                Some(lut) => lut[b],
                None => v,
            }
        };
        let mut data = band.data.clone();
        for r in 0..h {
            let (r0, r1, wy) = row_grid.locate(r as f64 + 0.5);
            for c in 0..w {
                let v = band.data[r * w + c];
                if !band.is_valid(v) {
                    continue;
                }
                let v = v.to_f64_lossy();
                let b = bin_of(v);
                let (c0, c1, wx) = col_grid.locate(c as f64 + 0.5);
                let top = lerp(map(r0, c0, v, b), map(r0, c1, v, b), wx);
                let bottom = lerp(map(r1, c0, v, b), map(r1, c1, v, b), wx);
                data[r * w + c] = T::from_f64_lossy(lerp(top, bottom, wy).clamp(lo, hi));
            }
        }
        Ok(data)
    })?;
    out.set_metadata(META_CLAHE, "per_band");
    Ok(out)
}
