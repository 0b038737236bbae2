//! Raster, vegetation-index, crown-delineation, clustering and evaluation
//! primitives for urban tree inventories.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the CLI and service.

pub mod chips;
pub mod clustering;
pub mod error;
pub mod geometry;
pub mod indices;
pub mod itcd;
pub mod metrics;
pub mod raster;
pub mod scalar;

pub use error::{Error, Result};
pub use geometry::{BBox, CrownCollection, CrownPolygon, CrownSource};
pub use raster::{load_raster, save_raster, Band, GeoTransform, MultibandRaster, Window};
pub use scalar::Scalar;

/// Single-precision raster, the storage precision of every file format.
pub type Raster = MultibandRaster<f32>;
/// Double-precision raster.
pub type Raster64 = MultibandRaster<f64>;
pub type Chip = chips::CrownChip<f32>;
pub type NdviRaster = indices::IndexRaster<f32>;
/// Feature matrices are clustered in double precision.
pub type Features = clustering::FeatureMatrix<f64>;
pub type Reduction = clustering::ReductionModel<f64>;
