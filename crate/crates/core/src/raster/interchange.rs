//! Plain interchange format: a JSON header beside a little-endian, row-major,
//! plane-sequential float32 payload.
//!
//! ```json
//! {"width": 2, "height": 2, "bands": ["nir", "red"],
//!  "transform": [630000.0, 0.02, 0.0, 5530000.0, 0.0, -0.02],
//!  "crs": "EPSG:25832", "nodata": -9999.0}
//! ```
//!
//! `transform` uses GDAL ordering. `nodata` is a single marker shared by all
//! bands, or `null`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::{Band, GeoTransform, MultibandRaster};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Serialize, Deserialize)]
pub struct Header {
    pub width: usize,
    pub height: usize,
    pub bands: Vec<String>,
    pub transform: Vec<f64>,
    pub crs: String,
    #[serde(default, with = "nodata_repr")]
    pub nodata: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// JSON has no NaN; a NaN marker is written as the string "nan".
mod nodata_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_nan() => s.serialize_some("nan"),
            Some(x) => s.serialize_some(x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) if t.eq_ignore_ascii_case("nan") => Some(f64::NAN),
            Some(Repr::Text(t)) => {
                return Err(serde::de::Error::custom(format!("bad nodata value {t:?}")))
            }
        })
    }
}

/// Header and payload paths for either member of the pair.
pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

pub fn read<T: Scalar>(path: &Path) -> Result<MultibandRaster<T>> {
    let (hpath, bpath) = paths(path);
    let text = std::fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::format(&hpath, e.to_string()))?;
    let transform = GeoTransform::from_gdal(&header.transform)
        .map_err(|e| Error::MissingGeotransform(format!("{}: {e}", hpath.display())))?;
    let payload = std::fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let plane = header.width * header.height;
    let expected = plane * header.bands.len() * 4;
    if payload.len() != expected {
        return Err(Error::format(
            &bpath,
            format!("payload is {} bytes, header implies {expected}", payload.len()),
        ));
    }
    let nodata = header.nodata.map(T::from_f64_lossy);
    let bands = header
        .bands
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let base = b * plane * 4;
            let data = (0..plane)
                .map(|i| {
                    let v = LittleEndian::read_f32(&payload[base + i * 4..]);
                    T::from_f64_lossy(v as f64)
                })
                .collect();
            Band::new(name.clone(), data, nodata)
        })
        .collect();
    Ok(MultibandRaster::new(header.width, header.height, bands, transform, header.crs)?
        .with_metadata(header.metadata))
}

pub fn write<T: Scalar>(raster: &MultibandRaster<T>, path: &Path) -> Result<()> {
    let (hpath, bpath) = paths(path);
    let nodata = raster.bands().first().and_then(|b| b.nodata);
    let header = Header {
        width: raster.width(),
        height: raster.height(),
        bands: raster.band_names().iter().map(|s| s.to_string()).collect(),
        transform: raster.transform().to_gdal().to_vec(),
        crs: raster.crs().to_string(),
        nodata: nodata.map(|v| v.to_f64_lossy()),
        metadata: raster.metadata().clone(),
    };
    let mut payload = vec![0u8; raster.len() * raster.band_count() * 4];
    let mut at = 0;
    for band in raster.bands() {
        for &v in &band.data {
            // Cells carrying another band's marker are rewritten to the shared one.
            let v = match (band.nodata, nodata) {
                (Some(own), Some(shared)) if v == own || (v.is_nan() && own.is_nan()) => shared,
                _ => v,
            };
            LittleEndian::write_f32(&mut payload[at..at + 4], v.to_f64_lossy() as f32);
            at += 4;
        }
    }
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(&hpath, text).map_err(|e| Error::io(&hpath, e))?;
    std::fs::write(&bpath, payload).map_err(|e| Error::io(&bpath, e))?;
    Ok(())
}
