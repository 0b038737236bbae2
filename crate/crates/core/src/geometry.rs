//! Crown polygons, collections and their GeoJSON representation.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// How a crown outline was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrownSource {
    Watershed,
    Imported,
}

impl fmt::Display for CrownSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrownSource::Watershed => "watershed",
            CrownSource::Imported => "imported",
        })
    }
}

/// Axis-aligned bounding box in world units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// One delineated tree crown.
///
/// The exterior ring is stored closed (first vertex repeated last), has
/// positive area and no crossing edges. Rings produced by pixel tracing may
/// touch themselves at a single vertex; that is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct CrownPolygon {
    pub crown_id: String,
    ring: Vec<(f64, f64)>,
    pub species: Option<String>,
    pub vitality: Option<u8>,
    pub score: Option<f64>,
    pub height: Option<f64>,
    pub source: CrownSource,
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn segments_conflict(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    if o1 == 0.0 && o2 == 0.0 {
        // Collinear: reject overlaps of positive length.
        let (p, q) = if (b.0 - a.0).abs() >= (b.1 - a.1).abs() {
            ((a.0.min(b.0), a.0.max(b.0)), (c.0.min(d.0), c.0.max(d.0)))
        } else {
            ((a.1.min(b.1), a.1.max(b.1)), (c.1.min(d.1), c.1.max(d.1)))
        };
        return p.0.max(q.0) < p.1.min(q.1);
    }
    false
}

fn signed_area(ring: &[(f64, f64)]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].0 * w[1].1 - w[1].0 * w[0].1)
        .sum::<f64>()
        / 2.0
}

impl CrownPolygon {
    /// Validate and close an exterior ring.
    pub fn new(
        crown_id: impl Into<String>,
        mut ring: Vec<(f64, f64)>,
        source: CrownSource,
    ) -> Result<Self> {
        let crown_id = crown_id.into();
        if ring.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidGeometry(format!(
                "crown {crown_id}: non-finite vertex"
            )));
        }
        if ring.first() != ring.last() || ring.len() == 1 {
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
        }
        ring.dedup();
        if ring.len() < 4 {
            return Err(Error::InvalidGeometry(format!(
                "crown {crown_id}: ring needs at least 3 distinct vertices"
            )));
        }
        let area = signed_area(&ring);
        if area == 0.0 || !area.is_finite() {
            return Err(Error::InvalidGeometry(format!(
                "crown {crown_id}: zero-area ring"
            )));
        }
        let n = ring.len() - 1;
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_conflict(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                    return Err(Error::InvalidGeometry(format!(
                        "crown {crown_id}: ring self-intersects between edges {i} and {j}"
                    )));
                }
            }
        }
        // Counter-clockwise exterior, as GeoJSON recommends.
        if area < 0.0 {
            ring.reverse();
        }
        Ok(Self {
            crown_id,
            ring,
            species: None,
            vitality: None,
            score: None,
            height: None,
            source,
        })
    }

    pub fn ring(&self) -> &[(f64, f64)] {
        &self.ring
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.ring).abs()
    }

    /// Area-weighted centroid of the ring.
    pub fn centroid(&self) -> (f64, f64) {
        let a = signed_area(&self.ring);
        let (mut cx, mut cy) = (0.0, 0.0);
        for w in self.ring.windows(2) {
            let cross = w[0].0 * w[1].1 - w[1].0 * w[0].1;
            cx += (w[0].0 + w[1].0) * cross;
            cy += (w[0].1 + w[1].1) * cross;
        }
        (cx / (6.0 * a), cy / (6.0 * a))
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for &(x, y) in &self.ring {
            b.min_x = b.min_x.min(x);
            b.min_y = b.min_y.min(y);
            b.max_x = b.max_x.max(x);
            b.max_y = b.max_y.max(y);
        }
        b
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for w in self.ring.windows(2) {
            let ((xi, yi), (xj, yj)) = (w[0], w[1]);
            if (yi > y) != (yj > y) && x < edge_crossing_x(xi, yi, xj, yj, y) {
                inside = !inside;
            }
        }
        inside
    }
}

/// X coordinate where the edge crosses the horizontal line at `y`.
///
/// Shared by the point test and the scanline rasterizer so both agree bit for bit.
#[inline]
pub(crate) fn edge_crossing_x(xi: f64, yi: f64, xj: f64, yj: f64, y: f64) -> f64 {
    (xj - xi) * (y - yi) / (yj - yi) + xi
}

/// CRS identifiers compare case-insensitively; "unknown" is compatible with anything.
pub fn crs_compatible(a: &str, b: &str) -> bool {
    let unknown = |s: &str| s.is_empty() || s.eq_ignore_ascii_case("unknown");
    unknown(a) || unknown(b) || a.eq_ignore_ascii_case(b)
}

/// A set of crowns sharing one CRS, with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct CrownCollection {
    pub crs: String,
    crowns: Vec<CrownPolygon>,
}

impl CrownCollection {
    pub fn new(crs: impl Into<String>, crowns: Vec<CrownPolygon>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &crowns {
            if !seen.insert(c.crown_id.as_str()) {
                return Err(Error::Data(format!("duplicate crown_id {}", c.crown_id)));
            }
        }
        Ok(Self {
            crs: crs.into(),
            crowns,
        })
    }

    pub fn crowns(&self) -> &[CrownPolygon] {
        &self.crowns
    }

    pub fn into_crowns(self) -> Vec<CrownPolygon> {
        self.crowns
    }

    pub fn len(&self) -> usize {
        self.crowns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crowns.is_empty()
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .crowns
            .iter()
            .map(|c| {
                let coords: Vec<Value> = c.ring.iter().map(|&(x, y)| json!([x, y])).collect();
                let mut props = Map::new();
                props.insert("crown_id".into(), json!(c.crown_id));
                props.insert("height".into(), json!(c.height));
                props.insert("score".into(), json!(c.score));
                props.insert("source".into(), json!(c.source.to_string()));
                if let Some(s) = &c.species {
                    props.insert("species".into(), json!(s));
                }
                if let Some(v) = c.vitality {
                    props.insert("vitality".into(), json!(v));
                }
                json!({
                    "type": "Feature",
                    "geometry": {"type": "Polygon", "coordinates": [coords]},
                    "properties": props,
                })
            })
            .collect();
        json!({
            "type": "FeatureCollection",
            "crs": {"type": "name", "properties": {"name": self.crs}},
            "features": features,
        })
    }

    pub fn from_geojson(value: &Value) -> Result<Self> {
        let bad = |why: String| Error::Data(format!("GeoJSON: {why}"));
        if value.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(bad("expected a FeatureCollection".into()));
        }
        let crs = value
            .pointer("/crs/properties/name")
            .and_then(Value::as_str)
            .map(normalize_crs_name)
            .unwrap_or_else(|| "unknown".to_string());
        let features = value
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing features array".into()))?;
        let mut crowns = Vec::with_capacity(features.len());
        for (i, f) in features.iter().enumerate() {
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let crown_id = match props.get("crown_id") {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => match f.get("id") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Number(n)) => n.to_string(),
                    _ => format!("{}", i + 1),
                },
            };
            let geom = f
                .get("geometry")
                .ok_or_else(|| bad(format!("feature {crown_id} has no geometry")))?;
            let rings = match geom.get("type").and_then(Value::as_str) {
                Some("Polygon") => geom.get("coordinates"),
                Some("MultiPolygon") => {
                    let polys = geom
                        .get("coordinates")
                        .and_then(Value::as_array)
                        .filter(|p| p.len() == 1)
                        .ok_or_else(|| {
                            bad(format!("feature {crown_id}: multi-part crowns are not supported"))
                        })?;
                    polys.first()
                }
                other => {
                    return Err(bad(format!(
                        "feature {crown_id}: unsupported geometry {other:?}"
                    )))
                }
            };
            let exterior = rings
                .and_then(Value::as_array)
                .and_then(|r| r.first())
                .and_then(Value::as_array)
                .ok_or_else(|| bad(format!("feature {crown_id}: missing exterior ring")))?;
            let ring = exterior
                .iter()
                .map(|p| {
                    let x = p.get(0).and_then(Value::as_f64);
                    let y = p.get(1).and_then(Value::as_f64);
                    x.zip(y)
                        .ok_or_else(|| bad(format!("feature {crown_id}: bad coordinate")))
                })
                .collect::<Result<Vec<_>>>()?;
            let source = match props.get("source").and_then(Value::as_str) {
                Some("watershed") => CrownSource::Watershed,
                _ => CrownSource::Imported,
            };
            let mut crown = CrownPolygon::new(crown_id, ring, source)?;
            crown.height = props.get("height").and_then(Value::as_f64);
            crown.score = props.get("score").and_then(Value::as_f64);
            crown.species = props
                .get("species")
                .and_then(Value::as_str)
                .map(str::to_string);
            crown.vitality = props
                .get("vitality")
                .and_then(Value::as_u64)
                .map(|v| v.min(u8::MAX as u64) as u8);
            crowns.push(crown);
        }
        Self::new(crs, crowns)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::from_geojson(&value)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_geojson()).expect("GeoJSON serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Turn OGC URN forms such as `urn:ogc:def:crs:EPSG::25832` into `EPSG:25832`.
fn normalize_crs_name(name: &str) -> String {
    if let Some(idx) = name.find("EPSG::") {
        return format!("EPSG:{}", &name[idx + 6..]);
    }
    name.to_string()
}
