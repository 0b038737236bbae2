use super::{MultibandRaster, Window};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fixed-size tiling with an optional overlap margin on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpec {
    pub tile_size: usize,
    pub overlap: usize,
}

impl TileSpec {
    pub fn new(tile_size: usize, overlap: usize) -> Result<Self> {
        let spec = Self { tile_size, overlap };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::invalid("tile_size must be > 0"));
        }
        if self.overlap >= self.tile_size {
            return Err(Error::invalid("overlap must be smaller than tile_size"));
        }
        Ok(())
    }
}

/// One tile: `raster` covers `window` (interior plus overlap, clipped to the
/// source); `interior` is the non-overlapping core in tile-local pixels.
#[derive(Debug, Clone)]
pub struct Tile<T> {
    pub index: (usize, usize),
    pub window: Window,
    pub interior: Window,
    pub raster: MultibandRaster<T>,
}

/// Row-major tile iterator.
pub struct TileIter<'a, T> {
    source: &'a MultibandRaster<T>,
    spec: TileSpec,
    rows: usize,
    cols: usize,
    next: usize,
}

impl<T: Scalar> TileIter<'_, T> {
    pub fn grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl<T: Scalar> Iterator for TileIter<'_, T> {
    type Item = Tile<T>;

    fn next(&mut self) -> Option<Tile<T>> {
        if self.next >= self.rows * self.cols {
            return None;
        }
        let (tr, tc) = (self.next / self.cols, self.next % self.cols);
        self.next += 1;
        let (size, ov) = (self.spec.tile_size, self.spec.overlap);
        let (w, h) = (self.source.width(), self.source.height());
        let r0 = tr * size;
        let c0 = tc * size;
        let r1 = (r0 + size).min(h);
        let c1 = (c0 + size).min(w);
        let wr0 = r0.saturating_sub(ov);
        let wc0 = c0.saturating_sub(ov);
        let wr1 = (r1 + ov).min(h);
        let wc1 = (c1 + ov).min(w);
        let window = Window {
            row: wr0,
            col: wc0,
            height: wr1 - wr0,
            width: wc1 - wc0,
        };
        let interior = Window {
            row: r0 - wr0,
            col: c0 - wc0,
            height: r1 - r0,
            width: c1 - c0,
        };
        let raster = self
            .source
            .subset(window)
            .expect("tile window lies inside the source raster");
        Some(Tile {
            index: (tr, tc),
            window,
            interior,
            raster,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.rows * self.cols - self.next;
        (left, Some(left))
    }
}

impl<T: Scalar> ExactSizeIterator for TileIter<'_, T> {}

/// Partition a raster into tiles. An empty raster yields no tiles.
pub fn iterate_tiles<T: Scalar>(raster: &MultibandRaster<T>, spec: TileSpec) -> Result<TileIter<'_, T>> {
    spec.validate()?;
    Ok(TileIter {
        source: raster,
        spec,
        rows: raster.height().div_ceil(spec.tile_size),
        cols: raster.width().div_ceil(spec.tile_size),
        next: 0,
    })
}
