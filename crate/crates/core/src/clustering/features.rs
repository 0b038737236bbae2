//! Per-crown descriptors and imported CNN embeddings.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use super::{FeatureMatrix, FeatureSource};
use crate::chips::{csv_err, read_manifest, CrownChip, DEFAULT_MIN_PIXELS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean, standard deviation and skewness.
pub const MOMENTS_PER_BAND: usize = 3;
/// Intensity histogram bins per band over [0, 1].
pub const HIST_BINS: usize = 16;
/// Magnitude-weighted gradient-orientation bins, pooled over bands.
pub const GRADIENT_BINS: usize = 8;
/// Descriptor length for a three-band (RGB) chip.
pub const BUILTIN_FEATURE_LEN_RGB: usize = 3 * (MOMENTS_PER_BAND + HIST_BINS) + GRADIENT_BINS;

pub fn builtin_feature_len(n_bands: usize) -> usize {
    n_bands * (MOMENTS_PER_BAND + HIST_BINS) + GRADIENT_BINS
}

/// [`extract_builtin_features_with`] using the default minimum pixel count.
pub fn extract_builtin_features<T: Scalar>(chip: &CrownChip<T>, side: usize) -> Result<Vec<T>> {
    extract_builtin_features_with(chip, side, DEFAULT_MIN_PIXELS)
}

/// Descriptor layout: for each band `[mean, std, skewness, hist_0..hist_15]`,
/// then `grad_0..grad_7`.
///
/// Moments and histograms use the unmasked pixels at native resolution.
/// The gradient histogram is taken on the band-averaged chip, resampled by
/// nearest neighbour to `side`×`side` over the unmasked extent with masked
/// pixels set to the band mean.
pub fn extract_builtin_features_with<T: Scalar>(
    chip: &CrownChip<T>,
    side: usize,
    min_pixels: usize,
) -> Result<Vec<T>> {
    if side < 16 {
        return Err(Error::invalid(format!("side must be >= 16, got {side}")));
    }
    if chip.valid_pixels < min_pixels.max(1) {
        return Err(Error::invalid(format!(
            "chip {} has {} valid pixels, below the minimum of {min_pixels}",
            chip.crown_id, chip.valid_pixels
        )));
    }
    let raster = &chip.raster;
    let mut out = Vec::with_capacity(builtin_feature_len(raster.band_count()));
    let mut means = Vec::with_capacity(raster.band_count());
    for band in raster.bands() {
        let mut vals: Vec<f64> = band
            .data
            .iter()
            .zip(&chip.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.to_f64_lossy())
            .collect();
        // Sorted summation makes the moments independent of pixel order.
        vals.sort_by(f64::total_cmp);
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let m2 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let m3 = vals.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
        let std = m2.sqrt();
        let skew = if std > 0.0 { m3 / (std * std * std) } else { 0.0 };
        means.push(mean);
        out.extend([mean, std, skew].map(T::from_f64_lossy));
        let mut hist = [0usize; HIST_BINS];
        for v in &vals {
            let b = (v * HIST_BINS as f64).floor().clamp(0.0, (HIST_BINS - 1) as f64) as usize;
            hist[b] += 1;
        }
        out.extend(hist.iter().map(|&c| T::from_f64_lossy(c as f64 / n)));
    }
    out.extend(gradient_histogram(chip, &means, side).into_iter().map(T::from_f64_lossy));
    Ok(out)
}

fn gradient_histogram<T: Scalar>(chip: &CrownChip<T>, means: &[f64], side: usize) -> [f64; GRADIENT_BINS] {
    let (w, h) = (chip.raster.width(), chip.raster.height());
    let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
    for (i, _) in chip.mask.iter().enumerate().filter(|(_, &m)| m) {
        r0 = r0.min(i / w);
        r1 = r1.max(i / w);
        c0 = c0.min(i % w);
        c1 = c1.max(i % w);
    }
    debug_assert!(r0 < h);
    let (bh, bw) = (r1 - r0 + 1, c1 - c0 + 1);
    let bands = chip.raster.bands();
    let mut gray = vec![0.0f64; side * side];
    for i in 0..side {
        let sr = r0 + ((i as f64 + 0.5) * bh as f64 / side as f64) as usize;
        for j in 0..side {
            let sc = c0 + ((j as f64 + 0.5) * bw as f64 / side as f64) as usize;
            let idx = sr * w + sc;
            let v: f64 = bands
                .iter()
                .zip(means)
                .map(|(b, &m)| if chip.mask[idx] { b.data[idx].to_f64_lossy() } else { m })
                .sum();
            gray[i * side + j] = v / bands.len() as f64;
        }
    }
    let mut hist = [0.0f64; GRADIENT_BINS];
    for i in 1..side - 1 {
        for j in 1..side - 1 {
            let gx = gray[i * side + j + 1] - gray[i * side + j - 1];
            let gy = gray[(i + 1) * side + j] - gray[(i - 1) * side + j];
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let t = (gy.atan2(gx) + PI) / (2.0 * PI);
            let b = ((t * GRADIENT_BINS as f64) as usize) % GRADIENT_BINS;
            hist[b] += mag;
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|v| *v /= total);
    }
    hist
}

/// Read an embedding CSV (`crown_id,dim_0,…`), optionally preceded by a
/// `# source=<name>` line. Rows keep file order. Without a source line the
/// file stem names the source.
pub fn read_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<FeatureMatrix<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = text
        .lines()
        .next()
        .and_then(|l| l.trim().strip_prefix('#'))
        .and_then(|l| l.trim().strip_prefix("source="))
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "embedding".into())
        });
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("crown_id") || headers.len() < 2 {
        return Err(Error::format(path, "header must be crown_id,dim_0,...,dim_{d-1}"));
    }
    let d = headers.len() - 1;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let id = rec.get(0).unwrap_or_default().to_string();
        if let Some(prev) = seen.insert(id.clone(), row) {
            return Err(Error::format(path, format!("duplicate crown id {id:?} (rows {prev} and {row})")));
        }
        for col in 0..d {
            let cell = rec.get(col + 1).unwrap_or_default().trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::format(path, format!("row {row} (crown {id}), column dim_{col}: not a number: {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::format(
                    path,
                    format!("row {row} (crown {id}), column dim_{col}: non-finite value {cell}"),
                ));
            }
            data.push(T::from_f64_lossy(v));
        }
        ids.push(id);
    }
    FeatureMatrix::from_flat(ids, data, d, FeatureSource::ImportedEmbedding(name))
}

/// Embeddings aligned to the crown ids of a chip manifest.
pub fn import_embeddings<T: Scalar>(manifest: impl AsRef<Path>, embedding_file: impl AsRef<Path>) -> Result<FeatureMatrix<T>> {
    let ids: Vec<String> = read_manifest(manifest)?.into_iter().map(|r| r.crown_id).collect();
    let emb = read_embeddings::<T>(embedding_file.as_ref())?;
    if emb.n_rows() != ids.len() {
        let known: std::collections::HashSet<&String> = ids.iter().collect();
        let extra: Vec<&String> = emb.crown_ids().iter().filter(|id| !known.contains(id)).take(5).collect();
        return Err(Error::Data(format!(
            "manifest lists {} crowns but the embedding file has {} rows (ids not in manifest: {extra:?})",
            ids.len(),
            emb.n_rows()
        )));
    }
    emb.select(&ids)
}
