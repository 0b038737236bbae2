//! Persistence.
//!
//! On-disk layout of a [`FileStorage`] root:
//!
//! ```text
//! snapshots/S{id}.json   one canonical CadastreSnapshot per file, never rewritten
//! annotations.jsonl      append-only TreeAnnotation log, one JSON object per line
//! readings.csv           sensor_id,timestamp,depth,vwc sorted by key, replaced atomically
//! .lock                  present while a writer holds the store
//! ```
//!
//! Files are written to a temporary name and renamed into place, so readers
//! see either the old or the new state.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::annotations::{self, TreeAnnotation};
use crate::diff::{snapshot_diff, ChangeSet, TreeChange};
use crate::error::{Error, Result};
use crate::record::{CadastreSnapshot, TreeRecord};
use crate::sensors::{Depth, SensorIngest, SoilMoistureReading};

/// Storage backend. Implementations allow many concurrent readers and
/// exclude concurrent writers.
pub trait Storage: Send + Sync {
    /// Committed snapshot ids, ascending.
    fn snapshot_ids(&self) -> Result<Vec<u64>>;
    fn load_snapshot(&self, id: u64) -> Result<CadastreSnapshot>;
    /// Persists a new snapshot with the next id. `captured_at` must be later
    /// than that of every committed snapshot.
    fn commit_snapshot(&self, captured_at: DateTime<Utc>, records: Vec<TreeRecord>) -> Result<CadastreSnapshot>;
    fn annotations(&self) -> Result<Vec<TreeAnnotation>>;
    /// Changes whenever annotations are appended; cheap, for cache validation.
    fn annotations_version(&self) -> Result<u64> {
        Ok(self.annotations()?.len() as u64)
    }
    fn append_annotations(&self, items: &[TreeAnnotation]) -> Result<usize>;
    /// All readings sorted by (sensor_id, timestamp, depth).
    fn readings(&self) -> Result<Vec<SoilMoistureReading>>;
    /// Adds readings whose key is new; the rest are counted as rejected.
    fn add_readings(&self, readings: Vec<SoilMoistureReading>) -> Result<SensorIngest>;

    fn latest_snapshot(&self) -> Result<Option<CadastreSnapshot>> {
        match self.snapshot_ids()?.last() {
            Some(&id) => self.load_snapshot(id).map(Some),
            None => Ok(None),
        }
    }

    /// Change set from `a` to `b`; `a` may not be later than `b`.
    fn diff(&self, a: u64, b: u64) -> Result<ChangeSet> {
        if a > b {
            return Err(Error::invalid(format!("S{a} is later than S{b}")));
        }
        Ok(snapshot_diff(&self.load_snapshot(a)?, &self.load_snapshot(b)?))
    }

    /// Readings of one sensor with `from <= timestamp < to`, ascending in time.
    fn sensor_series(
        &self,
        sensor_id: &str,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        depth: Option<Depth>,
    ) -> Result<Vec<SoilMoistureReading>> {
        Ok(self
            .readings()?
            .into_iter()
            .filter(|r| r.sensor_id == sensor_id)
            .filter(|r| from.is_none_or(|f| r.timestamp >= f) && to.is_none_or(|t| r.timestamp < t))
            .filter(|r| depth.is_none_or(|d| r.depth == d))
            .collect())
    }
}

/// One step in a tree's history between consecutive snapshots.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HistoryEntry {
    pub from: u64,
    pub to: u64,
    pub captured_at: DateTime<Utc>,
    #[serde(flatten)]
    pub change: TreeChange,
}

/// Field-level changes of one tree across all consecutive snapshot pairs.
pub fn tree_history(snapshots: &[CadastreSnapshot], tree_id: &str) -> Vec<HistoryEntry> {
    snapshots
        .windows(2)
        .filter_map(|w| {
            let d = snapshot_diff(&w[0], &w[1]);
            d.for_tree(tree_id).map(|change| HistoryEntry {
                from: d.from,
                to: d.to,
                captured_at: d.to_captured_at,
                change,
            })
        })
        .collect()
}

fn check_commit(latest: Option<(u64, DateTime<Utc>)>, captured_at: DateTime<Utc>) -> Result<u64> {
    match latest {
        Some((_, t)) if captured_at <= t => Err(Error::invalid(format!(
            "captured_at {captured_at} is not later than the latest snapshot ({t})"
        ))),
        Some((id, _)) => Ok(id + 1),
        None => Ok(1),
    }
}

fn merge_readings(existing: &mut Vec<SoilMoistureReading>, new: Vec<SoilMoistureReading>) -> SensorIngest {
    let mut keys: BTreeSet<(String, DateTime<Utc>, Depth)> =
        existing.iter().map(|r| (r.sensor_id.clone(), r.timestamp, r.depth)).collect();
    let mut report = SensorIngest::default();
    for r in new {
        if keys.insert((r.sensor_id.clone(), r.timestamp, r.depth)) {
            existing.push(r);
            report.ingested += 1;
        } else {
            report.rejected_duplicates += 1;
        }
    }
    existing.sort_by(|a, b| a.key().cmp(&b.key()));
    report
}

/// Directory-backed store; see the module docs for the layout.
#[derive(Debug)]
pub struct FileStorage {
    root: PathBuf,
    writer: Mutex<()>,
}

/// Held while writing; removes the lock file when dropped.
struct LockFile(PathBuf);

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl FileStorage {
    /// Opens a store, creating the directory layout if needed.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let snaps = root.join("snapshots");
        fs::create_dir_all(&snaps).map_err(|e| Error::io(&snaps, e))?;
        Ok(Self {
            root,
            writer: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot_path(&self, id: u64) -> PathBuf {
        self.root.join("snapshots").join(format!("S{id}.json"))
    }

    fn annotations_path(&self) -> PathBuf {
        self.root.join("annotations.jsonl")
    }

    fn readings_path(&self) -> PathBuf {
        self.root.join("readings.csv")
    }

    /// Runs `f` holding both the in-process mutex and the lock file, which
    /// also excludes writers in other processes.
    fn write_locked<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.root.join(".lock");
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(Error::Locked(path)),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let _ = writeln!(file, "{}", std::process::id());
        let _lock = LockFile(path);
        f()
    }

    fn write_atomic(&self, target: &Path, bytes: &[u8]) -> Result<()> {
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("file");
        let tmp = target.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, target).map_err(|e| Error::io(target, e))
    }
}

impl Storage for FileStorage {
    fn snapshot_ids(&self) -> Result<Vec<u64>> {
        let dir = self.root.join("snapshots");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let id = name
                .to_str()
                .and_then(|n| n.strip_prefix('S'))
                .and_then(|n| n.strip_suffix(".json"))
                .and_then(|n| n.parse::<u64>().ok());
            ids.extend(id);
        }
        ids.sort_unstable();
        Ok(ids)
    }

    fn load_snapshot(&self, id: u64) -> Result<CadastreSnapshot> {
        let path = self.snapshot_path(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::UnknownSnapshot(id)),
            Err(e) => return Err(Error::io(&path, e)),
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path,
            reason: e.to_string(),
        })
    }

    fn commit_snapshot(&self, captured_at: DateTime<Utc>, records: Vec<TreeRecord>) -> Result<CadastreSnapshot> {
        self.write_locked(|| {
            let latest = self.latest_snapshot()?.map(|s| (s.snapshot_id, s.captured_at));
            let id = check_commit(latest, captured_at)?;
            let snap = CadastreSnapshot::new(id, captured_at, records)?;
            let path = self.snapshot_path(id);
            if path.exists() {
                return Err(Error::invalid(format!("snapshot S{id} already exists")));
            }
            self.write_atomic(&path, &snap.to_canonical_json())?;
            Ok(snap)
        })
    }

    fn annotations(&self) -> Result<Vec<TreeAnnotation>> {
        annotations::read_jsonl(self.annotations_path())
    }

    fn annotations_version(&self) -> Result<u64> {
        let path = self.annotations_path();
        match fs::metadata(&path) {
            Ok(m) => Ok(m.len()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn append_annotations(&self, items: &[TreeAnnotation]) -> Result<usize> {
        self.write_locked(|| {
            let path = self.annotations_path();
            let mut buf = Vec::new();
            for a in items {
                serde_json::to_writer(&mut buf, a).expect("annotation serializes");
                buf.push(b'\n');
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            // One write per batch keeps lines whole for readers.
            f.write_all(&buf).map_err(|e| Error::io(&path, e))?;
            f.sync_all().map_err(|e| Error::io(&path, e))?;
            Ok(items.len())
        })
    }

    fn readings(&self) -> Result<Vec<SoilMoistureReading>> {
        let path = self.readings_path();
        match fs::File::open(&path) {
            Ok(f) => crate::sensors::parse_sensor_csv(&path, f),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn add_readings(&self, readings: Vec<SoilMoistureReading>) -> Result<SensorIngest> {
        for r in &readings {
            r.validate()?;
        }
        self.write_locked(|| {
            let mut all = self.readings()?;
            let report = merge_readings(&mut all, readings);
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["sensor_id", "timestamp", "depth", "vwc"]).expect("in-memory write");
            for r in &all {
                w.write_record([
                    r.sensor_id.clone(),
                    r.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                    r.depth.to_string(),
                    r.vwc.to_string(),
                ])
                .expect("in-memory write");
            }
            let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
            self.write_atomic(&self.readings_path(), &bytes)?;
            Ok(report)
        })
    }
}

/// In-memory backend for tests and embedding.
#[derive(Debug, Default)]
pub struct MemoryStorage {
    snapshots: RwLock<Vec<CadastreSnapshot>>,
    annotations: RwLock<Vec<TreeAnnotation>>,
    readings: RwLock<Vec<SoilMoistureReading>>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Storage for MemoryStorage {
    fn snapshot_ids(&self) -> Result<Vec<u64>> {
        Ok(self.snapshots.read().unwrap().iter().map(|s| s.snapshot_id).collect())
    }

    fn load_snapshot(&self, id: u64) -> Result<CadastreSnapshot> {
        self.snapshots
            .read()
            .unwrap()
            .iter()
            .find(|s| s.snapshot_id == id)
            .cloned()
            .ok_or(Error::UnknownSnapshot(id))
    }

    fn commit_snapshot(&self, captured_at: DateTime<Utc>, records: Vec<TreeRecord>) -> Result<CadastreSnapshot> {
        let mut snaps = self.snapshots.write().unwrap();
        let id = check_commit(snaps.last().map(|s| (s.snapshot_id, s.captured_at)), captured_at)?;
        let snap = CadastreSnapshot::new(id, captured_at, records)?;
        snaps.push(snap.clone());
        Ok(snap)
    }

    fn annotations(&self) -> Result<Vec<TreeAnnotation>> {
        Ok(self.annotations.read().unwrap().clone())
    }

    fn append_annotations(&self, items: &[TreeAnnotation]) -> Result<usize> {
        self.annotations.write().unwrap().extend_from_slice(items);
        Ok(items.len())
    }

    fn readings(&self) -> Result<Vec<SoilMoistureReading>> {
        Ok(self.readings.read().unwrap().clone())
    }

    fn add_readings(&self, readings: Vec<SoilMoistureReading>) -> Result<SensorIngest> {
        for r in &readings {
            r.validate()?;
        }
        Ok(merge_readings(&mut self.readings.write().unwrap(), readings))
    }
}
