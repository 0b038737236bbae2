//! Reading cadastre exports (CSV or GeoJSON points).

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::record::{duplicate_ids, TreeRecord, VitalityScale, UNKNOWN};

pub const CSV_COLUMNS: [&str; 10] = [
    "tree_id",
    "x",
    "y",
    "crs",
    "species",
    "height_est",
    "crown_diameter_est",
    "vitality",
    "site_info",
    "last_inspected",
];
const MANDATORY: [&str; 3] = ["tree_id", "x", "y"];

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Used when a row carries no CRS.
    pub default_crs: String,
    pub vitality: VitalityScale,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            default_crs: UNKNOWN.into(),
            vitality: VitalityScale::default(),
        }
    }
}

/// Reads a cadastre file; `.json`/`.geojson` are parsed as GeoJSON, anything
/// else as CSV. Records come back sorted by tree_id.
pub fn read_cadastre(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Vec<TreeRecord>> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let mut records = if ext == "json" || ext == "geojson" {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Row {
            path: path.into(),
            row: e.line(),
            reason: e.to_string(),
        })?;
        from_geojson(path, &value, opts)?
    } else {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        from_csv(path, file, opts)?
    };
    records.sort_by(|a, b| a.tree_id.cmp(&b.tree_id));
    let dups = duplicate_ids(&records);
    if !dups.is_empty() {
        return Err(Error::DuplicateIds(dups));
    }
    if let Some(first) = records.first() {
        if let Some(other) = records.iter().find(|r| !r.crs.eq_ignore_ascii_case(&first.crs)) {
            return Err(Error::CrsMismatch(first.crs.clone(), other.crs.clone()));
        }
    }
    Ok(records)
}

/// Fields of one row, keyed by column name; absent and empty are the same.
struct RawRow<'a> {
    fields: HashMap<&'a str, String>,
}

impl RawRow<'_> {
    fn get(&self, k: &str) -> Option<&str> {
        self.fields.get(k).map(|s| s.trim()).filter(|s| !s.is_empty())
    }

    fn float(&self, k: &str) -> Result<Option<f64>> {
        self.get(k)
            .map(|s| s.parse::<f64>().map_err(|_| Error::invalid(format!("{k}: {s:?} is not a number"))))
            .transpose()
    }

    fn into_record(self, opts: &IngestOptions) -> Result<TreeRecord> {
        let id = self.get("tree_id").ok_or_else(|| Error::invalid("empty tree_id"))?;
        let x = self.float("x")?.ok_or_else(|| Error::invalid("empty x"))?;
        let y = self.float("y")?.ok_or_else(|| Error::invalid("empty y"))?;
        let mut r = TreeRecord::new(id, x, y, self.get("crs").unwrap_or(&opts.default_crs));
        if let Some(s) = self.get("species") {
            r.species = s.to_string();
        }
        r.height_est = self.float("height_est")?;
        r.crown_diameter_est = self.float("crown_diameter_est")?;
        r.vitality = opts.vitality.parse(self.get("vitality").unwrap_or(""))?;
        r.site_info = self.get("site_info").unwrap_or("").to_string();
        r.last_inspected = self
            .get("last_inspected")
            .map(|s| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|_| Error::invalid(format!("last_inspected: {s:?} is not YYYY-MM-DD")))
            })
            .transpose()?;
        r.validate(&opts.vitality)?;
        Ok(r)
    }
}

fn row_error(path: &Path, row: usize, e: Error) -> Error {
    match e {
        Error::Invalid(reason) => Error::Row {
            path: path.into(),
            row,
            reason,
        },
        e => e,
    }
}

pub fn from_csv<R: std::io::Read>(path: &Path, reader: R, opts: &IngestOptions) -> Result<Vec<TreeRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Row {
            path: path.into(),
            row: 1,
            reason: e.to_string(),
        })?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let missing: Vec<String> = MANDATORY
        .iter()
        .filter(|m| !headers.iter().any(|h| h == *m))
        .map(|m| m.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Row {
            path: path.into(),
            row: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let fields = headers
            .iter()
            .zip(rec.iter())
            .map(|(h, v)| (h.as_str(), v.to_string()))
            .collect();
        out.push(RawRow { fields }.into_record(opts).map_err(|e| row_error(path, row, e))?);
    }
    Ok(out)
}

fn json_scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// FeatureCollection of Point features. The id comes from
/// `properties.tree_id` or the feature `id`; the CRS from `properties.crs`,
/// the collection's legacy `crs` member, or the default.
pub fn from_geojson(path: &Path, value: &Value, opts: &IngestOptions) -> Result<Vec<TreeRecord>> {
    let features = value
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::invalid("GeoJSON cadastre must be a FeatureCollection"))?;
    let collection_crs = value
        .pointer("/crs/properties/name")
        .and_then(Value::as_str)
        .map(str::to_string);
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let mut fields: HashMap<&str, String> = HashMap::new();
        if let Some(props) = f.get("properties").and_then(Value::as_object) {
            for col in CSV_COLUMNS {
                if let Some(s) = props.get(col).and_then(json_scalar) {
                    fields.insert(col, s);
                }
            }
        }
        if !fields.contains_key("tree_id") {
            if let Some(id) = f.get("id").and_then(json_scalar) {
                fields.insert("tree_id", id);
            }
        }
        if !fields.contains_key("crs") {
            if let Some(crs) = &collection_crs {
                fields.insert("crs", crs.clone());
            }
        }
        let geom = f.get("geometry");
        match geom.and_then(|g| g.get("type")).and_then(Value::as_str) {
            Some("Point") => {
                let coords = geom
                    .and_then(|g| g.get("coordinates"))
                    .and_then(Value::as_array)
                    .filter(|c| c.len() >= 2);
                if let Some(c) = coords {
                    fields.insert("x", json_scalar(&c[0]).unwrap_or_default());
                    fields.insert("y", json_scalar(&c[1]).unwrap_or_default());
                }
            }
            _ if fields.contains_key("x") => {}
            _ => {
                return Err(Error::Row {
                    path: path.into(),
                    row: i + 1,
                    reason: "feature has no Point geometry".into(),
                })
            }
        }
        if !fields.contains_key("tree_id") {
            return Err(Error::MissingColumns(vec!["tree_id".into()]));
        }
        out.push(RawRow { fields }.into_record(opts).map_err(|e| row_error(path, i + 1, e))?);
    }
    Ok(out)
}

/// Writes records with the standard column set.
pub fn write_csv(path: impl AsRef<Path>, records: &[TreeRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(CSV_COLUMNS).map_err(io)?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.tree_id.clone(),
            r.x.to_string(),
            r.y.to_string(),
            r.crs.clone(),
            r.species.clone(),
            opt(r.height_est),
            opt(r.crown_diameter_est),
            r.vitality.map(|v| v.to_string()).unwrap_or_else(|| UNKNOWN.into()),
            r.site_info.clone(),
            r.last_inspected.map(|d| d.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
