//! Classical individual tree detection on a canopy height model (CHM):
//! local-maxima treetops and marker-controlled watershed crowns.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CrownPolygon, CrownSource};
use crate::raster::{band_names, Band, MultibandRaster};
use crate::scalar::Scalar;

/// Default height below which pixels are treated as understory.
pub const DEFAULT_MIN_HEIGHT: f64 = 2.0;

/// The height band of a CHM raster: the band named "chm", or the only band.
pub fn chm_band<T: Scalar>(chm: &MultibandRaster<T>) -> Result<&Band<T>> {
    match chm.band(band_names::CHM) {
        Some(b) => Ok(b),
        None if chm.band_count() == 1 => Ok(&chm.bands()[0]),
        None => Err(Error::MissingBand(band_names::CHM.into())),
    }
}

/// CHM = DSM − DTM, clamped at zero. Nodata in either input stays nodata.
pub fn chm_from_surfaces<T: Scalar>(
    dsm: &MultibandRaster<T>,
    dtm: &MultibandRaster<T>,
) -> Result<MultibandRaster<T>> {
    if dsm.width() != dtm.width() || dsm.height() != dtm.height() {
        return Err(Error::invalid("DSM and DTM grids differ in size"));
    }
    let (s, t) = (&dsm.bands()[0], &dtm.bands()[0]);
    let data = s
        .data
        .iter()
        .zip(&t.data)
        .map(|(&a, &b)| {
            if s.is_valid(a) && t.is_valid(b) {
                (a - b).max(T::zero())
            } else {
                T::nan()
            }
        })
        .collect();
    MultibandRaster::single(
        band_names::CHM,
        dsm.width(),
        dsm.height(),
        data,
        Some(T::nan()),
        *dsm.transform(),
        dsm.crs(),
    )
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable 1-D pass; cells outside the grid contribute nothing.
fn convolve_axis(data: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let off = k as isize - r;
                let (rr, cc) = if horizontal {
                    (row as isize, col as isize + off)
                } else {
                    (row as isize + off, col as isize)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += kv * data[rr as usize * w + cc as usize];
                }
            }
            out[row * w + col] = acc;
        }
    }
    out
}

/// Gaussian smoothing by normalized convolution: nodata cells and cells
/// beyond the border get zero weight and the kernel is renormalized over the
/// remaining support. `sigma == 0` returns the input unchanged.
pub fn smooth_chm<T: Scalar>(chm: &MultibandRaster<T>, sigma: f64) -> Result<MultibandRaster<T>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid("sigma must be a finite value >= 0"));
    }
    if sigma == 0.0 {
        return Ok(chm.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (chm.width(), chm.height());
    chm.map_bands(|band| {
        let mask: Vec<f64> = band
            .data
            .iter()
            .map(|&v| if band.is_valid(v) { 1.0 } else { 0.0 })
            .collect();
        let weighted: Vec<f64> = band
            .data
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m > 0.0 { v.to_f64_lossy() } else { 0.0 })
            .collect();
        let num = convolve_axis(&convolve_axis(&weighted, w, h, &kernel, true), w, h, &kernel, false);
        let den = convolve_axis(&convolve_axis(&mask, w, h, &kernel, true), w, h, &kernel, false);
        Ok(band
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if mask[i] > 0.0 && den[i] > 0.0 {
                    T::from_f64_lossy(num[i] / den[i])
                } else {
                    v
                }
            })
            .collect())
    })
}

/// A detected tree apex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Treetop {
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub height: f64,
}

/// Offsets (dr, dc) of a filled disc of `radius`, origin excluded.
fn disc_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if (dr, dc) != (0, 0) && dr * dr + dc * dc <= r * r {
                v.push((dr, dc));
            }
        }
    }
    v
}

/// Treetops: pixels at or above `min_height` with no strictly higher valid
/// pixel inside a circular window. Of a plateau (8-connected pixels of
/// identical height) only its lexicographically smallest (row, col) pixel can
/// be a treetop. Results are in row-major order.
pub fn detect_local_maxima<T: Scalar>(
    chm: &MultibandRaster<T>,
    window_radius: usize,
    min_height: f64,
) -> Result<Vec<Treetop>> {
    if window_radius < 1 {
        return Err(Error::invalid("window_radius must be >= 1"));
    }
    let band = chm_band(chm)?;
    let (w, h) = (chm.width(), chm.height());
    let heights: Vec<Option<f64>> = band
        .data
        .iter()
        .map(|&v| band.is_valid(v).then(|| v.to_f64_lossy()))
        .collect();
    let offsets = disc_offsets(window_radius);
    let at = |r: isize, c: isize| -> Option<f64> {
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            None
        } else {
            heights[r as usize * w + c as usize]
        }
    };
    let mut plateau_min: HashMap<usize, usize> = HashMap::new();
    let mut tops = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let Some(hp) = heights[r * w + c] else { continue };
            if hp < min_height {
                continue;
            }
            let dominated = offsets
                .iter()
                .any(|&(dr, dc)| at(r as isize + dr, c as isize + dc).map_or(false, |q| q > hp));
            if dominated {
                continue;
            }
            let idx = r * w + c;
            let smallest = match plateau_min.get(&idx) {
                Some(&m) => m,
                None => {
                    let members = plateau(&heights, w, h, idx);
                    let m = *members.iter().min().expect("plateau contains its seed");
                    for p in members {
                        plateau_min.insert(p, m);
                    }
                    m
                }
            };
            if smallest != idx {
                continue;
            }
            let (x, y) = chm.transform().pixel_center(r, c);
            tops.push(Treetop {
                row: r,
                col: c,
                x,
                y,
                height: hp,
            });
        }
    }
    Ok(tops)
}

/// 8-connected component of cells with exactly the seed's height.
fn plateau(heights: &[Option<f64>], w: usize, h: usize, seed: usize) -> Vec<usize> {
    let target = heights[seed];
    let mut seen = vec![seed];
    let mut stack = vec![seed];
    let mut visited = std::collections::HashSet::from([seed]);
    while let Some(p) = stack.pop() {
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue;
                }
                let q = rr as usize * w + cc as usize;
                if heights[q] == target && visited.insert(q) {
                    seen.push(q);
                    stack.push(q);
                }
            }
        }
    }
    seen
}

/// Per-pixel watershed labels: marker index, or `None` for unclaimed pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatershedLabels {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Option<usize>>,
}

impl WatershedLabels {
    pub fn region_pixels(&self, marker: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == Some(marker))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, PartialEq)]
struct QueueItem {
    height: f64,
    marker: usize,
    seq: u64,
    pixel: usize,
}

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.height
            .total_cmp(&other.height)
            .then_with(|| Reverse(self.seq).cmp(&Reverse(other.seq)))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Priority flood from the markers, highest pixels first, 4-connected.
///
/// Queue order is (height desc, insertion order): among equal heights the
/// flood that reached a pixel first claims it. Markers are seeded in index
/// order, so the lower marker index wins a tie between seeds.
pub fn watershed_labels<T: Scalar>(
    chm: &MultibandRaster<T>,
    markers: &[Treetop],
    min_height: f64,
) -> Result<WatershedLabels> {
    if markers.is_empty() {
        return Err(Error::invalid("no markers"));
    }
    let band = chm_band(chm)?;
    let (w, h) = (chm.width(), chm.height());
    let height_at = |i: usize| -> Option<f64> {
        let v = band.data[i];
        band.is_valid(v)
            .then(|| v.to_f64_lossy())
            .filter(|&hv| hv >= min_height)
    };
    let mut labels: Vec<Option<usize>> = vec![None; w * h];
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut seeded = HashMap::new();
    for (m, t) in markers.iter().enumerate() {
        if t.row >= h || t.col >= w {
            return Err(Error::invalid(format!(
                "marker {m} at ({}, {}) lies outside the CHM",
                t.row, t.col
            )));
        }
        let idx = t.row * w + t.col;
        let Some(hv) = height_at(idx) else {
            return Err(Error::invalid(format!(
                "marker {m} at ({}, {}) is below min_height or nodata",
                t.row, t.col
            )));
        };
        if let Some(prev) = seeded.insert(idx, m) {
            return Err(Error::invalid(format!(
                "markers {prev} and {m} share pixel ({}, {})",
                t.row, t.col
            )));
        }
        heap.push(QueueItem {
            height: hv,
            marker: m,
            seq,
            pixel: idx,
        });
        seq += 1;
    }
    while let Some(item) = heap.pop() {
        if labels[item.pixel].is_some() {
            continue;
        }
        labels[item.pixel] = Some(item.marker);
        let (r, c) = (item.pixel / w, item.pixel % w);
        let neighbors = [
            (r > 0).then(|| item.pixel - w),
            (r + 1 < h).then(|| item.pixel + w),
            (c > 0).then(|| item.pixel - 1),
            (c + 1 < w).then(|| item.pixel + 1),
        ];
        for q in neighbors.into_iter().flatten() {
            if labels[q].is_some() {
                continue;
            }
            if let Some(hq) = height_at(q) {
                heap.push(QueueItem {
                    height: hq,
                    marker: item.marker,
                    seq,
                    pixel: q,
                });
                seq += 1;
            }
        }
    }
    Ok(WatershedLabels {
        width: w,
        height: h,
        labels,
    })
}

/// Marker-controlled watershed followed by vectorization: one crown per
/// marker, ids `crown_1`, `crown_2`, … in marker order.
pub fn watershed_delineate<T: Scalar>(
    chm: &MultibandRaster<T>,
    markers: &[Treetop],
    min_height: f64,
) -> Result<Vec<CrownPolygon>> {
    let labels = watershed_labels(chm, markers, min_height)?;
    let mut per_marker: Vec<Vec<usize>> = vec![Vec::new(); markers.len()];
    for (i, l) in labels.labels.iter().enumerate() {
        if let Some(m) = l {
            per_marker[*m].push(i);
        }
    }
    per_marker
        .iter()
        .enumerate()
        .map(|(m, pixels)| {
            let ring = trace_outer_ring(pixels, labels.width)
                .into_iter()
                .map(|(col, row)| chm.transform().apply(col as f64, row as f64))
                .collect();
            let mut crown = CrownPolygon::new(format!("crown_{}", m + 1), ring, CrownSource::Watershed)?;
            crown.height = Some(markers[m].height);
            Ok(crown)
        })
        .collect()
}

/// Outer boundary of a pixel set on the pixel-corner lattice, as closed
/// (col, row) corner coordinates with collinear vertices removed. Holes are
/// dropped. At corners where two region pixels touch only diagonally the
/// trace turns tightly around the current pixel, which keeps the outer ring
/// free of self-contact.
pub fn trace_outer_ring(pixels: &[usize], width: usize) -> Vec<(usize, usize)> {
    const DX: [isize; 4] = [1, 0, -1, 0];
    const DY: [isize; 4] = [0, 1, 0, -1];
    let set: std::collections::HashSet<usize> = pixels.iter().copied().collect();
    let inside = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (c as usize) < width && set.contains(&(r as usize * width + c as usize))
    };
    // Directed edges (start corner, direction); region lies on the right in
    // screen coordinates (y down).
    let mut outgoing: HashMap<(isize, isize), Vec<(usize, bool)>> = HashMap::new();
    let mut edges: Vec<((isize, isize), usize)> = Vec::new();
    let mut add = |start: (isize, isize), dir: usize, edges: &mut Vec<((isize, isize), usize)>| {
        outgoing.entry(start).or_default().push((edges.len(), false));
        edges.push((start, dir));
    };
    let mut sorted: Vec<usize> = pixels.to_vec();
    sorted.sort_unstable();
    for &p in &sorted {
        let (r, c) = ((p / width) as isize, (p % width) as isize);
        if !inside(r - 1, c) {
            add((c, r), 0, &mut edges);
        }
        if !inside(r, c + 1) {
            add((c + 1, r), 1, &mut edges);
        }
        if !inside(r + 1, c) {
            add((c + 1, r + 1), 2, &mut edges);
        }
        if !inside(r, c - 1) {
            add((c, r + 1), 3, &mut edges);
        }
    }
    let mut used = vec![false; edges.len()];
    let mut best: Vec<(isize, isize)> = Vec::new();
    let mut best_area = f64::NEG_INFINITY;
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut ring = vec![edges[start].0];
        let mut cur = start;
        used[cur] = true;
        loop {
            let (s, d) = edges[cur];
            let end = (s.0 + DX[d], s.1 + DY[d]);
            let candidates = &outgoing[&end];
            let next = [(d + 1) % 4, d, (d + 3) % 4].iter().find_map(|&want| {
                candidates
                    .iter()
                    .map(|&(e, _)| e)
                    .find(|&e| !used[e] && edges[e].1 == want)
            });
            match next {
                Some(e) => {
                    used[e] = true;
                    ring.push(end);
                    cur = e;
                }
                None => {
                    ring.push(end);
                    break;
                }
            }
        }
        // Shoelace in screen coordinates: clockwise (outer) rings are positive.
        let area: f64 = ring
            .windows(2)
            .map(|w| (w[0].0 * w[1].1 - w[1].0 * w[0].1) as f64)
            .sum::<f64>()
            / 2.0;
        if area > best_area {
            best_area = area;
            best = ring;
        }
    }
    simplify_collinear(&best)
        .into_iter()
        .map(|(c, r)| (c as usize, r as usize))
        .collect()
}

fn simplify_collinear(ring: &[(isize, isize)]) -> Vec<(isize, isize)> {
    if ring.len() < 4 {
        return ring.to_vec();
    }
    let open = &ring[..ring.len() - 1];
    let n = open.len();
    let mut out: Vec<(isize, isize)> = open
        .iter()
        .enumerate()
        .filter(|&(i, &p)| {
            let prev = open[(i + n - 1) % n];
            let next = open[(i + 1) % n];
            (p.0 - prev.0) * (next.1 - p.1) - (p.1 - prev.1) * (next.0 - p.0) != 0
        })
        .map(|(_, &p)| p)
        .collect();
    if let Some(&first) = out.first() {
        out.push(first);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoTransform;

    fn chm(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> MultibandRaster<f64> {
        let data = (0..w * h).map(|i| f(i / w, i % w)).collect();
        MultibandRaster::single(
            "chm",
            w,
            h,
            data,
            Some(-9999.0),
            GeoTransform::north_up(100.0, 200.0, 0.5),
            "EPSG:25832",
        )
        .unwrap()
    }

    fn blob(r0: f64, c0: f64, peak: f64, s: f64) -> impl Fn(usize, usize) -> f64 {
        move |r, c| {
            let d2 = (r as f64 - r0).powi(2) + (c as f64 - c0).powi(2);
            peak * (-d2 / (2.0 * s * s)).exp()
        }
    }

    #[test]
    fn sigma_zero_is_identity() {
        let c = chm(9, 7, blob(3.0, 4.0, 20.0, 2.0));
        assert_eq!(smooth_chm(&c, 0.0).unwrap(), c);
        assert!(smooth_chm(&c, -1.0).is_err());
    }

    #[test]
    fn impulse_spreads_below_peak() {
        let c = chm(15, 15, |r, c| if (r, c) == (7, 7) { 10.0 } else { 0.0 });
        let s = smooth_chm(&c, 1.0).unwrap();
        let d = &s.bands()[0].data;
        assert!(d[7 * 15 + 7] < 10.0 && d[7 * 15 + 7] > d[7 * 15 + 8]);
        assert!((d[7 * 15 + 8] - d[8 * 15 + 7]).abs() < 1e-12);
    }

    #[test]
    fn single_blob_single_top() {
        let c = chm(41, 41, blob(20.0, 20.0, 20.0, 5.0));
        let tops = detect_local_maxima(&c, 3, 2.0).unwrap();
        assert_eq!(tops.len(), 1);
        assert_eq!((tops[0].row, tops[0].col), (20, 20));
        assert_eq!(tops[0].height, 20.0);
        assert_eq!((tops[0].x, tops[0].y), (110.25, 189.75));
    }

    #[test]
    fn below_threshold_gives_nothing() {
        let c = chm(20, 20, blob(10.0, 10.0, 1.5, 3.0));
        assert!(detect_local_maxima(&c, 2, 2.0).unwrap().is_empty());
    }

    #[test]
    fn plateau_keeps_smallest_pixel() {
        let c = chm(10, 10, |r, c| if (3..6).contains(&r) && (4..8).contains(&c) { 12.0 } else { 1.0 });
        let tops = detect_local_maxima(&c, 2, 2.0).unwrap();
        assert_eq!(tops.len(), 1);
        assert_eq!((tops[0].row, tops[0].col), (3, 4));
    }

    #[test]
    fn watershed_errors() {
        let c = chm(5, 5, |_, _| 5.0);
        assert_eq!(watershed_labels(&c, &[], 2.0).unwrap_err().to_string(), "invalid argument: no markers");
        let low = Treetop { row: 0, col: 0, x: 0.0, y: 0.0, height: 1.0 };
        assert!(watershed_labels(&chm(5, 5, |_, _| 1.0), &[low], 2.0).is_err());
    }

    #[test]
    fn one_marker_claims_connected_pixels() {
        let c = chm(30, 30, blob(15.0, 15.0, 20.0, 4.0));
        let tops = detect_local_maxima(&c, 3, 2.0).unwrap();
        let labels = watershed_labels(&c, &tops, 2.0).unwrap();
        let above = c.bands()[0].data.iter().filter(|&&v| v >= 2.0).count();
        assert_eq!(labels.region_pixels(0).len(), above);
        let crowns = watershed_delineate(&c, &tops, 2.0).unwrap();
        assert_eq!(crowns.len(), 1);
        let (cx, cy) = crowns[0].centroid();
        assert!((cx - 107.75).abs() < 0.3 && (cy - 192.25).abs() < 0.3);
        assert!(crowns[0].contains(tops[0].x, tops[0].y));
    }

    #[test]
    fn trace_square_and_hole() {
        // 3x3 block with the center missing: the outer ring ignores the hole.
        let w = 5;
        let px: Vec<usize> = (1..4)
            .flat_map(|r| (1..4).map(move |c| r * w + c))
            .filter(|&p| p != 2 * w + 2)
            .collect();
        let ring = trace_outer_ring(&px, w);
        assert_eq!(ring, vec![(1, 1), (4, 1), (4, 4), (1, 4), (1, 1)]);
    }

    #[test]
    fn trace_diagonal_pinch_is_simple() {
        // Rows 0 and 1 full over columns 0..=2, row 2 over columns 0..=1.
        let w = 4;
        let px = vec![0, 1, 2, 4, 5, 6, 8, 9];
        let ring = trace_outer_ring(&px, w);
        assert_eq!(ring.first(), ring.last());
        let poly = CrownPolygon::new(
            "p",
            ring.iter().map(|&(c, r)| (c as f64, r as f64)).collect(),
            CrownSource::Watershed,
        );
        assert!(poly.is_ok());
    }
}
