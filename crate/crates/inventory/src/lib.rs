//! Tree cadastre store: immutable snapshots with field-level diffs, model
//! annotations and soil-moisture readings.

pub mod annotations;
pub mod cadastre;
pub mod diff;
pub mod error;
pub mod join;
pub mod record;
pub mod sensors;
pub mod store;

use std::path::Path;

use chrono::{DateTime, Utc};

pub use annotations::{Payload, Target, TreeAnnotation};
pub use cadastre::IngestOptions;
pub use diff::{apply_diff, snapshot_diff, ChangeSet};
pub use error::{Error, Result};
pub use join::{join_predictions, JoinResult};
pub use record::{parse_snapshot_ref, CadastreSnapshot, TreeRecord, VitalityScale};
pub use sensors::{Depth, SensorIngest, SoilMoistureReading};
pub use store::{FileStorage, MemoryStorage, Storage};

/// Reads a cadastre export and commits it as the next snapshot.
pub fn ingest_cadastre<S: Storage + ?Sized>(
    store: &S,
    path: impl AsRef<Path>,
    captured_at: DateTime<Utc>,
    opts: &IngestOptions,
) -> Result<CadastreSnapshot> {
    let records = cadastre::read_cadastre(path, opts)?;
    store.commit_snapshot(captured_at, records)
}

/// Reads a sensor CSV and stores the readings with new keys.
pub fn ingest_sensor_series<S: Storage + ?Sized>(store: &S, path: impl AsRef<Path>) -> Result<SensorIngest> {
    let readings = sensors::read_sensor_csv(path)?;
    store.add_readings(readings)
}
