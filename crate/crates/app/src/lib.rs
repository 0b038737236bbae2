//! Inventory HTTP service, map tiles and the `canopy` command line.

pub mod cli;
pub mod config;
pub mod crs;
pub mod error;
pub mod query;
pub mod service;
pub mod tiles;

pub use config::AppConfig;
pub use error::AppError;
pub use query::{query_trees, stats_histogram, TreeQuery};
pub use service::{router, AppState};
pub use tiles::{LayerRegistry, TileAddress};
