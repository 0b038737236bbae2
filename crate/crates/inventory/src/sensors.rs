//! Soil-moisture readings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probe depth, shallowest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    D1,
    D2,
    D3,
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "d1" => Ok(Depth::D1),
            "d2" => Ok(Depth::D2),
            "d3" => Ok(Depth::D3),
            other => Err(Error::invalid(format!("unknown depth label {other:?} (expected d1, d2, d3)"))),
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Depth::D1 => "d1",
            Depth::D2 => "d2",
            Depth::D3 => "d3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoilMoistureReading {
    pub sensor_id: String,
    pub timestamp: DateTime<Utc>,
    pub depth: Depth,
    /// Volumetric water content, percent.
    pub vwc: f64,
}

impl SoilMoistureReading {
    pub fn key(&self) -> (&str, DateTime<Utc>, Depth) {
        (&self.sensor_id, self.timestamp, self.depth)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensor_id.trim().is_empty() {
            return Err(Error::invalid("empty sensor_id"));
        }
        if !(0.0..=100.0).contains(&self.vwc) {
            return Err(Error::invalid(format!("vwc {} outside [0, 100]", self.vwc)));
        }
        Ok(())
    }
}

/// RFC 3339, or a zone-less ISO-8601 timestamp taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::invalid(format!("timestamp {s:?} is not ISO-8601")))
}

#[derive(Debug, Deserialize)]
struct Row {
    sensor_id: String,
    timestamp: String,
    depth: String,
    vwc: f64,
}

/// Parses a `sensor_id,timestamp,depth,vwc` file. Any invalid row fails the
/// whole file, naming the row.
pub fn read_sensor_csv(path: impl AsRef<Path>) -> Result<Vec<SoilMoistureReading>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sensor_csv(path, file)
}

pub fn parse_sensor_csv<R: std::io::Read>(path: &Path, reader: R) -> Result<Vec<SoilMoistureReading>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let row_err = |row: usize, reason: String| Error::Row {
        path: path.into(),
        row,
        reason,
    };
    let headers = rdr.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| row_err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parsed = (|| {
            let row: Row = rec.deserialize(Some(&headers)).map_err(|e| Error::invalid(e.to_string()))?;
            let r = SoilMoistureReading {
                sensor_id: row.sensor_id,
                timestamp: parse_timestamp(&row.timestamp)?,
                depth: row.depth.parse()?,
                vwc: row.vwc,
            };
            r.validate()?;
            Ok::<_, Error>(r)
        })();
        match parsed {
            Ok(r) => out.push(r),
            Err(Error::Invalid(reason)) => return Err(row_err(line, reason)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SensorIngest {
    pub ingested: usize,
    pub rejected_duplicates: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<SoilMoistureReading>> {
        parse_sensor_csv(Path::new("s.csv"), text.as_bytes())
    }

    #[test]
    fn rows_parse() {
        let v = parse("sensor_id,timestamp,depth,vwc\ns1,2023-05-01T10:00:00Z,d2,23.5\ns1,2023-05-01 11:00:00,D3,0\n").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].depth, Depth::D3);
        assert_eq!(v[1].timestamp, parse_timestamp("2023-05-01T11:00:00+00:00").unwrap());
    }

    #[test]
    fn out_of_range_names_row() {
        let err = parse("sensor_id,timestamp,depth,vwc\ns1,2023-05-01T10:00:00Z,d1,20\ns1,2023-05-01T11:00:00Z,d1,120\n").unwrap_err();
        match err {
            Error::Row { row, reason, .. } => {
                assert_eq!(row, 3);
                assert!(reason.contains("120"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_depth() {
        let err = parse("sensor_id,timestamp,depth,vwc\ns1,2023-05-01T10:00:00Z,d4,20\n").unwrap_err();
        assert!(err.to_string().contains("d4"));
    }
}
