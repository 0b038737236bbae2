//! Minimal GeoTIFF codec.
//!
//! Supported: classic (non-Big) TIFF, first IFD only, strip layout, chunky or
//! planar configuration, no compression or deflate, no predictor, 8/16-bit
//! unsigned and 32-bit float samples. Anything else is rejected with
//! [`Error::Unsupported`] naming the feature.
//!
//! Georeferencing is read from ModelTransformation or ModelPixelScale +
//! ModelTiepoint. Band names, per-band nodata markers and raster metadata are
//! carried in a JSON ImageDescription written by this codec; files from other
//! producers fall back to positional names and GDAL_NODATA.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use serde::{Deserialize, Serialize};

use super::{Band, GeoTransform, MultibandRaster, META_SOURCE_SAMPLE_TYPE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_IMAGE_DESCRIPTION: u16 = 270;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_MODEL_TRANSFORMATION: u16 = 34264;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_TYPE: u16 = 3072;

const COMPRESSION_NONE: u64 = 1;
const COMPRESSION_DEFLATE: u64 = 8;
const COMPRESSION_DEFLATE_OLD: u64 = 32946;

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    U8,
    U16,
    F32,
}

impl SampleType {
    fn bits(self) -> u16 {
        match self {
            SampleType::U8 => 8,
            SampleType::U16 => 16,
            SampleType::F32 => 32,
        }
    }

    fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    fn format_code(self) -> u16 {
        match self {
            SampleType::F32 => 3,
            _ => 1,
        }
    }

    /// Scale used to normalize integer samples into [0, 1].
    pub fn integer_max(self) -> Option<f64> {
        match self {
            SampleType::U8 => Some(u8::MAX as f64),
            SampleType::U16 => Some(u16::MAX as f64),
            SampleType::F32 => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SampleType::U8 => "u8",
            SampleType::U16 => "u16",
            SampleType::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "u8" => Some(SampleType::U8),
            "u16" => Some(SampleType::U16),
            "f32" => Some(SampleType::F32),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Compression {
    None,
    Deflate,
}

#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub sample_type: SampleType,
    pub compression: Compression,
}

impl WriteOptions {
    /// Float output unless the raster was normalized from integer samples.
    pub fn for_raster<T: Scalar>(raster: &MultibandRaster<T>) -> Self {
        let sample_type = raster
            .metadata()
            .get(META_SOURCE_SAMPLE_TYPE)
            .and_then(|s| SampleType::parse(s))
            .unwrap_or(SampleType::F32);
        Self {
            sample_type,
            compression: Compression::None,
        }
    }
}

/// Contents of the JSON ImageDescription this codec writes.
#[derive(Debug, Serialize, Deserialize)]
struct Description {
    bands: Vec<String>,
    #[serde(default)]
    nodata: Vec<Option<f64>>,
    crs: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
enum Value {
    Int(Vec<u64>),
    Real(Vec<f64>),
    Ascii(String),
}

struct Ifd {
    entries: BTreeMap<u16, Value>,
}

impl Ifd {
    fn ints(&self, tag: u16) -> Option<&[u64]> {
        match self.entries.get(&tag) {
            Some(Value::Int(v)) => Some(v),
            _ => None,
        }
    }

    fn int(&self, tag: u16) -> Option<u64> {
        self.ints(tag).and_then(|v| v.first().copied())
    }

    fn reals(&self, tag: u16) -> Option<&[f64]> {
        match self.entries.get(&tag) {
            Some(Value::Real(v)) => Some(v),
            _ => None,
        }
    }

    fn ascii(&self, tag: u16) -> Option<&str> {
        match self.entries.get(&tag) {
            Some(Value::Ascii(s)) => Some(s.trim_end_matches('\0')),
            _ => None,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Cursor<'_> {
    fn u16(&self, at: usize) -> Option<u16> {
        let b = self.buf.get(at..at + 2)?;
        Some(if self.big {
            BigEndian::read_u16(b)
        } else {
            LittleEndian::read_u16(b)
        })
    }

    fn u32(&self, at: usize) -> Option<u32> {
        let b = self.buf.get(at..at + 4)?;
        Some(if self.big {
            BigEndian::read_u32(b)
        } else {
            LittleEndian::read_u32(b)
        })
    }

    fn f32(&self, at: usize) -> Option<f32> {
        self.u32(at).map(f32::from_bits)
    }

    fn f64(&self, at: usize) -> Option<f64> {
        let b = self.buf.get(at..at + 8)?;
        Some(if self.big {
            BigEndian::read_f64(b)
        } else {
            LittleEndian::read_f64(b)
        })
    }
}

fn type_size(ty: u16) -> Option<usize> {
    match ty {
        1 | 2 | 6 | 7 => Some(1),
        3 | 8 => Some(2),
        4 | 9 | 11 => Some(4),
        5 | 10 | 12 => Some(8),
        _ => None,
    }
}

fn parse_ifd(cur: &Cursor, path: &Path) -> Result<Ifd> {
    let bad = |why: &str| Error::format(path, why.to_string());
    let ifd_off = cur.u32(4).ok_or_else(|| bad("truncated header"))? as usize;
    let count = cur.u16(ifd_off).ok_or_else(|| bad("truncated IFD"))? as usize;
    let mut entries = BTreeMap::new();
    for i in 0..count {
        let e = ifd_off + 2 + i * 12;
        let tag = cur.u16(e).ok_or_else(|| bad("truncated IFD entry"))?;
        let ty = cur.u16(e + 2).ok_or_else(|| bad("truncated IFD entry"))?;
        let n = cur.u32(e + 4).ok_or_else(|| bad("truncated IFD entry"))? as usize;
        let Some(size) = type_size(ty) else {
            // Unknown field types are skipped, as the TIFF spec requires.
            continue;
        };
        let total = size
            .checked_mul(n)
            .ok_or_else(|| bad("IFD entry size overflow"))?;
        let data_at = if total <= 4 {
            e + 8
        } else {
            cur.u32(e + 8).ok_or_else(|| bad("truncated IFD entry"))? as usize
        };
        if data_at + total > cur.buf.len() {
            return Err(bad(&format!("tag {tag} points past end of file")));
        }
        let value = match ty {
            2 => Value::Ascii(String::from_utf8_lossy(&cur.buf[data_at..data_at + n]).into_owned()),
            1 | 7 => Value::Int(cur.buf[data_at..data_at + n].iter().map(|&b| b as u64).collect()),
            3 => Value::Int(
                (0..n)
                    .map(|k| cur.u16(data_at + 2 * k).unwrap() as u64)
                    .collect(),
            ),
            4 => Value::Int(
                (0..n)
                    .map(|k| cur.u32(data_at + 4 * k).unwrap() as u64)
                    .collect(),
            ),
            11 => Value::Real(
                (0..n)
                    .map(|k| cur.f32(data_at + 4 * k).unwrap() as f64)
                    .collect(),
            ),
            12 => Value::Real((0..n).map(|k| cur.f64(data_at + 8 * k).unwrap()).collect()),
            5 => Value::Real(
                (0..n)
                    .map(|k| {
                        let num = cur.u32(data_at + 8 * k).unwrap() as f64;
                        let den = cur.u32(data_at + 8 * k + 4).unwrap() as f64;
                        num / den
                    })
                    .collect(),
            ),
            // Signed types are not needed by any tag this reader consumes.
            _ => continue,
        };
        entries.insert(tag, value);
    }
    Ok(Ifd { entries })
}

/// Read a GeoTIFF. Integer samples are normalized to [0, 1] and the source
/// type is recorded under [`META_SOURCE_SAMPLE_TYPE`].
pub fn read<T: Scalar>(path: &Path) -> Result<MultibandRaster<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

fn decode<T: Scalar>(buf: &[u8], path: &Path) -> Result<MultibandRaster<T>> {
    let bad = |why: String| Error::format(path, why);
    if buf.len() < 8 {
        return Err(bad("file too short for a TIFF header".into()));
    }
    let big = match &buf[0..2] {
        b"II" => false,
        b"MM" => true,
        _ => return Err(bad("not a TIFF file (bad byte-order mark)".into())),
    };
    let cur = Cursor { buf, big };
    match cur.u16(2) {
        Some(42) => {}
        Some(43) => return Err(Error::Unsupported("BigTIFF".into())),
        _ => return Err(bad("bad TIFF magic number".into())),
    }
    let ifd = parse_ifd(&cur, path)?;

    let width = ifd
        .int(TAG_IMAGE_WIDTH)
        .ok_or_else(|| bad("missing ImageWidth".into()))? as usize;
    let height = ifd
        .int(TAG_IMAGE_LENGTH)
        .ok_or_else(|| bad("missing ImageLength".into()))? as usize;
    if ifd.entries.contains_key(&TAG_TILE_WIDTH) {
        return Err(Error::Unsupported("tiled TIFF layout".into()));
    }
    let spp = ifd.int(TAG_SAMPLES_PER_PIXEL).unwrap_or(1) as usize;
    if spp == 0 {
        return Err(bad("SamplesPerPixel is 0".into()));
    }
    let bits = ifd.ints(TAG_BITS_PER_SAMPLE).unwrap_or(&[1]);
    if bits.iter().any(|&b| b != bits[0]) {
        return Err(Error::Unsupported("mixed BitsPerSample".into()));
    }
    let format = ifd.ints(TAG_SAMPLE_FORMAT).map(|f| f[0]).unwrap_or(1);
    let sample_type = match (bits[0], format) {
        (8, 1) => SampleType::U8,
        (16, 1) => SampleType::U16,
        (32, 3) => SampleType::F32,
        (b, f) => {
            let kind = match f {
                1 => "unsigned",
                2 => "signed",
                3 => "float",
                _ => "unknown-format",
            };
            return Err(Error::Unsupported(format!("{b}-bit {kind} samples")));
        }
    };
    let compression = ifd.int(TAG_COMPRESSION).unwrap_or(COMPRESSION_NONE);
    if !matches!(
        compression,
        COMPRESSION_NONE | COMPRESSION_DEFLATE | COMPRESSION_DEFLATE_OLD
    ) {
        return Err(Error::Unsupported(format!("compression scheme {compression}")));
    }
    if ifd.int(TAG_PREDICTOR).unwrap_or(1) != 1 {
        return Err(Error::Unsupported("TIFF predictor".into()));
    }
    let planar = ifd.int(TAG_PLANAR_CONFIG).unwrap_or(1);
    if planar != 1 && planar != 2 {
        return Err(bad(format!("bad PlanarConfiguration {planar}")));
    }
    let offsets = ifd
        .ints(TAG_STRIP_OFFSETS)
        .ok_or_else(|| bad("missing StripOffsets".into()))?;
    let counts = ifd
        .ints(TAG_STRIP_BYTE_COUNTS)
        .ok_or_else(|| bad("missing StripByteCounts".into()))?;
    if offsets.len() != counts.len() {
        return Err(bad("StripOffsets/StripByteCounts length mismatch".into()));
    }
    let rows_per_strip = (ifd.int(TAG_ROWS_PER_STRIP).unwrap_or(height as u64) as usize)
        .min(height)
        .max(1);
    let strips_per_plane = height.div_ceil(rows_per_strip);
    let expected_strips = if planar == 2 {
        strips_per_plane * spp
    } else {
        strips_per_plane
    };
    if offsets.len() != expected_strips {
        return Err(bad(format!(
            "expected {expected_strips} strips, found {}",
            offsets.len()
        )));
    }

    let transform = read_transform(&ifd)?;

    let sb = sample_type.bytes();
    let mut planes: Vec<Vec<f64>> = vec![Vec::with_capacity(width * height); spp];
    for (s, (&off, &cnt)) in offsets.iter().zip(counts).enumerate() {
        let (off, cnt) = (off as usize, cnt as usize);
        let raw = buf
            .get(off..off + cnt)
            .ok_or_else(|| bad(format!("strip {s} extends past end of file")))?;
        let bytes: Vec<u8> = if compression == COMPRESSION_NONE {
            raw.to_vec()
        } else {
            let mut out = Vec::new();
            ZlibDecoder::new(raw)
                .read_to_end(&mut out)
                .map_err(|e| bad(format!("deflate strip {s}: {e}")))?;
            out
        };
        let strip_in_plane = s % strips_per_plane;
        let rows = rows_per_strip.min(height - strip_in_plane * rows_per_strip);
        let samples_per_row = if planar == 2 { width } else { width * spp };
        let needed = rows * samples_per_row * sb;
        if bytes.len() < needed {
            return Err(bad(format!(
                "strip {s} holds {} bytes, need {needed}",
                bytes.len()
            )));
        }
        let sample = |k: usize| -> f64 {
            let at = k * sb;
            match sample_type {
                SampleType::U8 => bytes[at] as f64,
                SampleType::U16 => {
                    (if big {
                        BigEndian::read_u16(&bytes[at..])
                    } else {
                        LittleEndian::read_u16(&bytes[at..])
                    }) as f64
                }
                SampleType::F32 => f32::from_bits(if big {
                    BigEndian::read_u32(&bytes[at..])
                } else {
                    LittleEndian::read_u32(&bytes[at..])
                }) as f64,
            }
        };
        if planar == 2 {
            let band = s / strips_per_plane;
            planes[band].extend((0..rows * width).map(sample));
        } else {
            for k in 0..rows * width {
                for (b, plane) in planes.iter_mut().enumerate() {
                    plane.push(sample(k * spp + b));
                }
            }
        }
    }

    let description: Option<Description> = ifd
        .ascii(TAG_IMAGE_DESCRIPTION)
        .and_then(|d| serde_json::from_str(d).ok())
        .filter(|d: &Description| d.bands.len() == spp);
    let gdal_nodata = ifd
        .ascii(TAG_GDAL_NODATA)
        .and_then(|s| s.trim().parse::<f64>().ok());

    let scale = sample_type.integer_max().unwrap_or(1.0);
    let bands = planes
        .into_iter()
        .enumerate()
        .map(|(i, plane)| {
            let name = description
                .as_ref()
                .map(|d| d.bands[i].clone())
                .unwrap_or_else(|| format!("band_{}", i + 1));
            let raw_nodata = match &description {
                Some(d) if d.nodata.len() == spp => d.nodata[i],
                _ => gdal_nodata,
            };
            let data = plane
                .into_iter()
                .map(|v| T::from_f64_lossy(v / scale))
                .collect();
            Band::new(name, data, raw_nodata.map(|v| T::from_f64_lossy(v / scale)))
        })
        .collect();

    let crs = description
        .as_ref()
        .map(|d| d.crs.clone())
        .or_else(|| crs_from_geokeys(&ifd))
        .unwrap_or_else(|| "unknown".to_string());
    let mut raster = MultibandRaster::new(width, height, bands, transform, crs)?;
    if let Some(d) = description {
        raster = raster.with_metadata(d.metadata);
    }
    if sample_type != SampleType::F32 {
        raster.set_metadata(META_SOURCE_SAMPLE_TYPE, sample_type.as_str());
    }
    Ok(raster)
}

fn read_transform(ifd: &Ifd) -> Result<GeoTransform> {
    let pixel_is_point = geokeys(ifd)
        .and_then(|k| k.get(&KEY_RASTER_TYPE).copied())
        .map_or(false, |v| v == 2);
    let mut gt = if let Some(m) = ifd.reals(TAG_MODEL_TRANSFORMATION) {
        if m.len() < 16 {
            return Err(Error::MissingGeotransform(
                "ModelTransformation has fewer than 16 values".into(),
            ));
        }
        if m[1] != 0.0 || m[4] != 0.0 {
            return Err(Error::Unsupported("rotated ModelTransformation".into()));
        }
        GeoTransform::new(m[3], m[7], m[0], m[5])
    } else {
        let scale = ifd.reals(TAG_MODEL_PIXEL_SCALE);
        let tie = ifd.reals(TAG_MODEL_TIEPOINT);
        match (scale, tie) {
            (Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => {
                let (sx, sy) = (s[0], s[1]);
                GeoTransform::new(t[3] - t[0] * sx, t[4] + t[1] * sy, sx, -sy)
            }
            (None, None) => {
                return Err(Error::MissingGeotransform(
                    "neither ModelTransformation nor ModelPixelScale/ModelTiepoint present"
                        .into(),
                ))
            }
            (None, _) => return Err(Error::MissingGeotransform("ModelPixelScale".into())),
            (_, None) => return Err(Error::MissingGeotransform("ModelTiepoint".into())),
            _ => {
                return Err(Error::MissingGeotransform(
                    "ModelPixelScale/ModelTiepoint too short".into(),
                ))
            }
        }
    };
    if pixel_is_point {
        gt.origin_x -= 0.5 * gt.pixel_size_x;
        gt.origin_y -= 0.5 * gt.pixel_size_y;
    }
    gt.validate()
        .map_err(|e| Error::MissingGeotransform(format!("invalid geotransform: {e}")))?;
    Ok(gt)
}

fn geokeys(ifd: &Ifd) -> Option<BTreeMap<u16, u64>> {
    let dir = ifd.ints(TAG_GEO_KEY_DIRECTORY)?;
    if dir.len() < 4 {
        return None;
    }
    let n = dir[3] as usize;
    let mut keys = BTreeMap::new();
    for k in 0..n {
        let e = 4 + k * 4;
        if e + 3 >= dir.len() {
            break;
        }
        // Only keys stored inline (location 0) are needed here.
        if dir[e + 1] == 0 {
            keys.insert(dir[e] as u16, dir[e + 3]);
        }
    }
    Some(keys)
}

fn crs_from_geokeys(ifd: &Ifd) -> Option<String> {
    let keys = geokeys(ifd)?;
    keys.get(&KEY_PROJECTED_TYPE)
        .or_else(|| keys.get(&KEY_GEOGRAPHIC_TYPE))
        .filter(|&&code| code != 0 && code != 32767)
        .map(|code| format!("EPSG:{code}"))
}

fn epsg_code(crs: &str) -> Option<u64> {
    crs.strip_prefix("EPSG:")
        .or_else(|| crs.strip_prefix("epsg:"))
        .and_then(|c| c.parse().ok())
}

struct Entry {
    tag: u16,
    ty: u16,
    count: u32,
    data: Vec<u8>,
}

fn short_entry(tag: u16, vals: &[u16]) -> Entry {
    let mut data = Vec::with_capacity(vals.len() * 2);
    for v in vals {
        data.extend_from_slice(&v.to_le_bytes());
    }
    Entry {
        tag,
        ty: 3,
        count: vals.len() as u32,
        data,
    }
}

fn long_entry(tag: u16, vals: &[u32]) -> Entry {
    let mut data = Vec::with_capacity(vals.len() * 4);
    for v in vals {
        data.extend_from_slice(&v.to_le_bytes());
    }
    Entry {
        tag,
        ty: 4,
        count: vals.len() as u32,
        data,
    }
}

fn double_entry(tag: u16, vals: &[f64]) -> Entry {
    let mut data = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        data.extend_from_slice(&v.to_le_bytes());
    }
    Entry {
        tag,
        ty: 12,
        count: vals.len() as u32,
        data,
    }
}

fn ascii_entry(tag: u16, s: &str) -> Entry {
    let mut data = s.as_bytes().to_vec();
    data.push(0);
    Entry {
        tag,
        ty: 2,
        count: data.len() as u32,
        data,
    }
}

/// Write a little-endian, planar-separate GeoTIFF.
pub fn write<T: Scalar>(raster: &MultibandRaster<T>, path: &Path, opts: &WriteOptions) -> Result<()> {
    let bytes = encode(raster, opts)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn encode<T: Scalar>(raster: &MultibandRaster<T>, opts: &WriteOptions) -> Result<Vec<u8>> {
    let (w, h) = (raster.width(), raster.height());
    if w == 0 || h == 0 {
        return Err(Error::invalid("cannot write an empty raster as GeoTIFF"));
    }
    if raster.band_count() == 0 {
        return Err(Error::invalid("cannot write a raster with no bands"));
    }
    if w > u32::MAX as usize || h > u32::MAX as usize {
        return Err(Error::Unsupported("raster too large for classic TIFF".into()));
    }
    let st = opts.sample_type;
    let sb = st.bytes();
    let scale = st.integer_max();
    let rows_per_strip = (65_536 / (w * sb)).clamp(1, h);
    let strips_per_plane = h.div_ceil(rows_per_strip);

    let encode_value = |band: &Band<T>, v: T| -> Result<Vec<u8>> {
        let v = v.to_f64_lossy();
        Ok(match (st, scale) {
            (SampleType::F32, _) => (v as f32).to_le_bytes().to_vec(),
            (_, Some(max)) => {
                let raw = if v.is_finite() {
                    (v * max).round().clamp(0.0, max)
                } else {
                    match band.nodata.map(|n| n.to_f64_lossy()) {
                        Some(nd) if nd.is_finite() => (nd * max).round().clamp(0.0, max),
                        _ => {
                            return Err(Error::invalid(format!(
                                "band \"{}\" has non-finite cells but integer output needs a finite nodata marker",
                                band.name
                            )))
                        }
                    }
                };
                if st == SampleType::U8 {
                    vec![raw as u8]
                } else {
                    (raw as u16).to_le_bytes().to_vec()
                }
            }
            _ => unreachable!(),
        })
    };

    let mut strips: Vec<Vec<u8>> = Vec::with_capacity(strips_per_plane * raster.band_count());
    for band in raster.bands() {
        for s in 0..strips_per_plane {
            let r0 = s * rows_per_strip;
            let r1 = (r0 + rows_per_strip).min(h);
            let mut raw = Vec::with_capacity((r1 - r0) * w * sb);
            for &v in &band.data[r0 * w..r1 * w] {
                raw.extend(encode_value(band, v)?);
            }
            let data = match opts.compression {
                Compression::None => raw,
                Compression::Deflate => {
                    let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::default());
                    enc.write_all(&raw)
                        .and_then(|_| enc.finish())
                        .map_err(|e| Error::Data(format!("deflate failed: {e}")))?
                }
            };
            strips.push(data);
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let mut strip_offsets = Vec::with_capacity(strips.len());
    let mut strip_counts = Vec::with_capacity(strips.len());
    for s in &strips {
        strip_offsets.push(out.len() as u32);
        strip_counts.push(s.len() as u32);
        out.extend_from_slice(s);
    }
    if out.len() % 2 == 1 {
        out.push(0);
    }

    let n_bands = raster.band_count() as u16;
    let to_raw = |v: Option<T>| -> Option<f64> {
        v.map(|x| {
            let x = x.to_f64_lossy();
            match scale {
                Some(max) if x.is_finite() => (x * max).round().clamp(0.0, max),
                _ => x,
            }
        })
    };
    let description = Description {
        bands: raster.band_names().iter().map(|s| s.to_string()).collect(),
        nodata: raster.bands().iter().map(|b| to_raw(b.nodata)).collect(),
        crs: raster.crs().to_string(),
        metadata: raster.metadata().clone(),
    };
    let gt = raster.transform();
    let mut entries = vec![
        long_entry(TAG_IMAGE_WIDTH, &[w as u32]),
        long_entry(TAG_IMAGE_LENGTH, &[h as u32]),
        short_entry(TAG_BITS_PER_SAMPLE, &vec![st.bits(); n_bands as usize]),
        short_entry(
            TAG_COMPRESSION,
            &[match opts.compression {
                Compression::None => COMPRESSION_NONE as u16,
                Compression::Deflate => COMPRESSION_DEFLATE as u16,
            }],
        ),
        short_entry(TAG_PHOTOMETRIC, &[1]),
        ascii_entry(
            TAG_IMAGE_DESCRIPTION,
            &serde_json::to_string(&description).expect("description serializes"),
        ),
        long_entry(TAG_STRIP_OFFSETS, &strip_offsets),
        short_entry(TAG_SAMPLES_PER_PIXEL, &[n_bands]),
        long_entry(TAG_ROWS_PER_STRIP, &[rows_per_strip as u32]),
        long_entry(TAG_STRIP_BYTE_COUNTS, &strip_counts),
        short_entry(TAG_PLANAR_CONFIG, &[2]),
        short_entry(TAG_SAMPLE_FORMAT, &vec![st.format_code(); n_bands as usize]),
        double_entry(
            TAG_MODEL_TRANSFORMATION,
            &[
                gt.pixel_size_x,
                0.0,
                0.0,
                gt.origin_x,
                0.0,
                gt.pixel_size_y,
                0.0,
                gt.origin_y,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                0.0,
                1.0,
            ],
        ),
    ];
    if let Some(code) = epsg_code(raster.crs()).filter(|&c| c <= u16::MAX as u64) {
        let geographic = (4000..5000).contains(&code);
        let (model, key) = if geographic {
            (2, KEY_GEOGRAPHIC_TYPE)
        } else {
            (1, KEY_PROJECTED_TYPE)
        };
        entries.push(short_entry(
            TAG_GEO_KEY_DIRECTORY,
            &[
                1,
                1,
                0,
                3,
                KEY_MODEL_TYPE,
                0,
                1,
                model,
                KEY_RASTER_TYPE,
                0,
                1,
                1,
                key,
                0,
                1,
                code as u16,
            ],
        ));
    }
    if let Some(nd) = description.nodata.first().copied().flatten() {
        let text = if nd.is_nan() {
            "nan".to_string()
        } else {
            format!("{nd}")
        };
        entries.push(ascii_entry(TAG_GDAL_NODATA, &text));
    }
    entries.sort_by_key(|e| e.tag);

    let ifd_offset = out.len() as u32;
    out[4..8].copy_from_slice(&ifd_offset.to_le_bytes());
    let ifd_size = 2 + entries.len() * 12 + 4;
    let mut extra_at = out.len() + ifd_size;
    let mut extra = Vec::new();
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for e in &entries {
        out.extend_from_slice(&e.tag.to_le_bytes());
        out.extend_from_slice(&e.ty.to_le_bytes());
        out.extend_from_slice(&e.count.to_le_bytes());
        if e.data.len() <= 4 {
            let mut inline = [0u8; 4];
            inline[..e.data.len()].copy_from_slice(&e.data);
            out.extend_from_slice(&inline);
        } else {
            out.extend_from_slice(&(extra_at as u32).to_le_bytes());
            extra.extend_from_slice(&e.data);
            extra_at += e.data.len();
            if extra_at % 2 == 1 {
                extra.push(0);
                extra_at += 1;
            }
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&extra);
    Ok(out)
}
