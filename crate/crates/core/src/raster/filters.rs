use rayon::prelude::*;

use super::MultibandRaster;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Map a possibly out-of-range coordinate back into `0..n` by mirroring about
/// the edge (`d c b a | a b c d | d c b a`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Median of a scratch buffer; even counts average the two central values.
fn median_in_place<T: Scalar>(buf: &mut [T]) -> T {
    let n = buf.len();
    let cmp = |a: &T, b: &T| a.partial_cmp(b).expect("valid cells are finite");
    let mid = n / 2;
    let (lower, upper, _) = buf.select_nth_unstable_by(mid, cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        lower_max + (upper - lower_max) / (T::one() + T::one())
    }
}

/// Per-band median filter with a square `window` and mirrored borders.
///
/// Nodata cells are left untouched and never contribute to a neighbor's median.
pub fn denoise<T: Scalar>(raster: &MultibandRaster<T>, window: usize) -> Result<MultibandRaster<T>> {
    if window % 2 == 0 {
        return Err(Error::invalid(format!("median window must be odd, got {window}")));
    }
    if window < 3 {
        return Err(Error::invalid(format!("median window must be >= 3, got {window}")));
    }
    let (w, h) = (raster.width(), raster.height());
    let half = (window / 2) as isize;
    raster.map_bands(|band| {
        let out: Vec<T> = (0..h)
            .into_par_iter()
            .flat_map_iter(|r| {
                let mut scratch = Vec::with_capacity(window * window);
                (0..w)
                    .map(|c| {
                        let v = band.data[r * w + c];
                        if !band.is_valid(v) {
                            return v;
                        }
                        scratch.clear();
                        for dr in -half..=half {
                            let rr = reflect_index(r as isize + dr, h);
                            for dc in -half..=half {
                                let cc = reflect_index(c as isize + dc, w);
                                let q = band.data[rr * w + cc];
                                if band.is_valid(q) {
                                    scratch.push(q);
                                }
                            }
                        }
                        median_in_place(&mut scratch)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(out)
    })
}
