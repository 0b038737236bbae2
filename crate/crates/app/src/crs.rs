//! Coordinate reference systems by EPSG code.

use proj4rs::Proj;

use crate::error::AppError;

/// Numeric code of an "EPSG:nnnn" identifier.
pub fn epsg_code(crs: &str) -> Option<u16> {
    let s = crs.trim();
    let rest = s.get(..5).filter(|p| p.eq_ignore_ascii_case("epsg:")).map(|_| &s[5..])?;
    rest.parse().ok()
}

/// A resolved CRS. Geographic systems take and return degrees.
pub struct Crs {
    code: u16,
    proj: Proj,
}

impl std::fmt::Debug for Crs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EPSG:{}", self.code)
    }
}

impl Crs {
    pub fn from_name(name: &str) -> Result<Self, AppError> {
        let code = epsg_code(name).ok_or_else(|| AppError::invalid(format!("unsupported CRS {name:?}, expected EPSG:<code>")))?;
        let proj = Proj::from_epsg_code(code).map_err(|e| AppError::invalid(format!("EPSG:{code}: {e}")))?;
        Ok(Self { code, proj })
    }

    pub fn code(&self) -> u16 {
        self.code
    }

    pub fn is_geographic(&self) -> bool {
        self.proj.is_latlong()
    }
}

/// Point transformation between two CRSs.
#[derive(Debug)]
pub struct Transformer {
    src: Crs,
    dst: Crs,
}

impl Transformer {
    pub fn new(src: &str, dst: &str) -> Result<Self, AppError> {
        Ok(Self {
            src: Crs::from_name(src)?,
            dst: Crs::from_name(dst)?,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.src.code == self.dst.code
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        if self.is_identity() {
            return Some((x, y));
        }
        let mut p = if self.src.is_geographic() {
            (x.to_radians(), y.to_radians(), 0.0)
        } else {
            (x, y, 0.0)
        };
        proj4rs::transform::transform(&self.src.proj, &self.dst.proj, &mut p).ok()?;
        let out = if self.dst.is_geographic() {
            (p.0.to_degrees(), p.1.to_degrees())
        } else {
            (p.0, p.1)
        };
        (out.0.is_finite() && out.1.is_finite()).then_some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(epsg_code("EPSG:25832"), Some(25832));
        assert_eq!(epsg_code("epsg:3857"), Some(3857));
        assert_eq!(epsg_code("unknown"), None);
    }

    #[test]
    fn utm_to_lonlat() {
        // Central meridian of zone 32 at the equator.
        let t = Transformer::new("EPSG:25832", "EPSG:4326").unwrap();
        let (lon, lat) = t.apply(500_000.0, 0.0).unwrap();
        assert!((lon - 9.0).abs() < 1e-9 && lat.abs() < 1e-9);
        let back = Transformer::new("EPSG:4326", "EPSG:25832").unwrap();
        let (x, y) = back.apply(9.5, 51.2).unwrap();
        let (lon, lat) = t.apply(x, y).unwrap();
        assert!((lon - 9.5).abs() < 1e-8 && (lat - 51.2).abs() < 1e-8);
    }
}
