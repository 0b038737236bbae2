//! The `canopy` command line. Exit codes: 0 success, 1 invalid input,
//! 2 I/O failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use canopy_core::chips::{extract_chips, read_manifest, write_manifest, ManifestRow, DEFAULT_MIN_PIXELS};
use canopy_core::clustering::{run_experiment_grid, write_grid_report, GridConfig};
use canopy_core::indices::{compute_index, write_stats_csv, zonal_stats, IndexKind};
use canopy_core::itcd::{detect_local_maxima, smooth_chm, watershed_delineate};
use canopy_core::metrics::{
    evaluate_clustering, iou_scores, majority_vote_smooth, write_f1_report, write_iou_report, ClassShareTable,
    SegmentationMap,
};
use canopy_core::{load_raster, save_raster, Chip, CrownCollection, Raster};
use canopy_inventory::annotations::{self, link_to_trees, Payload, Target, TreeAnnotation};
use canopy_inventory::{
    ingest_cadastre, ingest_sensor_series, join_predictions, parse_snapshot_ref, FileStorage, IngestOptions, Storage,
};
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use crate::config::AppConfig;
use crate::service::{serve, AppState};
use crate::tiles::LayerRegistry;

#[derive(Debug, Parser)]
#[command(name = "canopy", version, about = "Urban tree inventory analytics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute an NDVI/NDRE raster, optionally with per-crown statistics.
    Indices {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = ["ndvi", "ndre"])]
        index: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "stats")]
        crowns: Option<PathBuf>,
        #[arg(long, requires = "crowns")]
        stats: Option<PathBuf>,
    },
    /// Treetop detection and marker-controlled watershed on a CHM.
    Itcd {
        #[arg(long)]
        chm: PathBuf,
        /// Local-maximum search radius, pixels.
        #[arg(long)]
        radius: usize,
        /// Minimum canopy height, metres.
        #[arg(long, default_value_t = 2.0)]
        min_height: f64,
        /// Gaussian smoothing of the CHM before detection, pixels; 0 disables.
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut per-crown image chips from an orthomosaic.
    Chips {
        #[arg(long)]
        ortho: PathBuf,
        #[arg(long)]
        crowns: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_PIXELS)]
        min_pixels: usize,
    },
    /// Run the preprocessing × features × reduction × clusterer grid.
    ClusterExperiment {
        #[arg(long)]
        config: PathBuf,
        /// Chip manifest written by `canopy chips`.
        #[arg(long)]
        manifest: PathBuf,
        /// crown_id,species; defaults to the manifest species labels.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Evaluate(Evaluate),
    #[command(subcommand)]
    Ingest(Ingest),
    /// Field-level change set between two snapshots.
    Diff {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match crowns to cadastre trees by mutual-nearest distance.
    Join {
        #[arg(long)]
        store: PathBuf,
        /// Defaults to the latest snapshot.
        #[arg(long)]
        snapshot: Option<String>,
        #[arg(long)]
        crowns: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        max_dist: f64,
        /// tree_id,crown_id,distance
        #[arg(long)]
        out: PathBuf,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum Evaluate {
    /// Map clusters to species and report per-class F1.
    Clustering {
        /// crown_id,cluster
        #[arg(long)]
        labels: PathBuf,
        /// crown_id,species
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class and area-weighted IoU of two class maps.
    Segmentation {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// id,name
        #[arg(long)]
        classes: PathBuf,
        /// class,share
        #[arg(long)]
        shares: PathBuf,
        #[arg(long, default_value_t = 0)]
        nodata: u32,
        /// Majority-vote window applied to the prediction; 0 disables.
        #[arg(long, default_value_t = 0)]
        smooth: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatsKind {
    NdviStats,
    NdreStats,
}

#[derive(Debug, Subcommand)]
pub enum Ingest {
    /// Commit a cadastre export (CSV or GeoJSON) as a new snapshot.
    Cadastre {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        file: PathBuf,
        /// ISO-8601; defaults to now.
        #[arg(long)]
        captured_at: Option<String>,
        /// CRS for rows without one.
        #[arg(long, default_value = "unknown")]
        crs: String,
    },
    /// Add soil-moisture readings.
    Sensors {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        file: PathBuf,
    },
    /// Append annotations from a JSON-lines file, a zonal-statistics CSV or a
    /// cluster-assignment CSV.
    Annotations {
        #[arg(long)]
        store: PathBuf,
        /// TreeAnnotation objects, one per line.
        #[arg(long, conflicts_with_all = ["stats", "species"])]
        jsonl: Option<PathBuf>,
        /// crown_id,count,mean,median,std,min,max
        #[arg(long, requires = "kind", conflicts_with = "species")]
        stats: Option<PathBuf>,
        #[arg(long, value_enum)]
        kind: Option<StatsKind>,
        /// crown_id,species[,cluster]
        #[arg(long)]
        species: Option<PathBuf>,
        /// tree_id,crown_id pairs from `canopy join`; retargets crown annotations to trees.
        #[arg(long)]
        links: Option<PathBuf>,
        #[arg(long, default_value = "canopy")]
        producer: String,
    },
}

/// Exit status for an error: 2 when the root cause is the filesystem.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<canopy_core::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<canopy_inventory::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if let Some(e) = cause.downcast_ref::<crate::AppError>() {
            return match e {
                crate::AppError::Core(c) if c.is_io() => 2,
                crate::AppError::Inventory(i) if i.is_io() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn parse_time(s: Option<&str>) -> anyhow::Result<DateTime<Utc>> {
    match s {
        Some(s) => Ok(canopy_inventory::sensors::parse_timestamp(s)?),
        None => Ok(Utc::now()),
    }
}

fn read_pairs(path: &Path, a: &str, b: &str) -> anyhow::Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| canopy_core::Error::format(path, format!("missing column {name}")))
    };
    let (ia, ib) = (col(a)?, col(b)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.push((rec[ia].trim().to_string(), rec[ib].trim().to_string()));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> canopy_core::Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return canopy_core::Error::io(path, io);
        }
        unreachable!()
    }
    canopy_core::Error::format(path, e.to_string())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| canopy_core::Error::io(dir, e))?;
    Ok(())
}

fn raster_to_classes(r: &Raster, classes: &BTreeMap<u32, String>, nodata: u32) -> anyhow::Result<SegmentationMap> {
    let band = &r.bands()[0];
    let data = band
        .data
        .iter()
        .map(|&v| if band.is_valid(v) { v as u32 } else { nodata })
        .collect();
    Ok(SegmentationMap::new(r.width(), r.height(), data, classes.clone(), nodata)?)
}

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Indices {
            input,
            index,
            out,
            crowns,
            stats,
        } => {
            let kind = IndexKind::parse(&index).context("index")?;
            let raster: Raster = load_raster(&input)?;
            let idx = compute_index(&raster, kind)?;
            save_raster(idx.raster(), &out)?;
            if let (Some(crowns), Some(stats)) = (crowns, stats) {
                let report = zonal_stats(&idx, &CrownCollection::read(&crowns)?)?;
                write_stats_csv(&stats, &report.stats)?;
                for s in &report.skipped {
                    eprintln!("skipped {}: {}", s.crown_id, s.reason);
                }
            }
        }
        Command::Itcd {
            chm,
            radius,
            min_height,
            sigma,
            out,
        } => {
            let mut chm: Raster = load_raster(&chm)?;
            if sigma > 0.0 {
                chm = smooth_chm(&chm, sigma)?;
            }
            let tops = detect_local_maxima(&chm, radius, min_height)?;
            if tops.is_empty() {
                bail!(canopy_core::Error::Data("no treetops above the minimum height".into()));
            }
            let crowns = watershed_delineate(&chm, &tops, min_height)?;
            eprintln!("{} crowns", crowns.len());
            CrownCollection::new(chm.crs(), crowns)?.write(&out)?;
        }
        Command::Chips {
            ortho,
            crowns,
            out_dir,
            min_pixels,
        } => {
            let ortho: Raster = load_raster(&ortho)?;
            let crowns = CrownCollection::read(&crowns)?;
            let ex = extract_chips(&ortho, &crowns, min_pixels, &ortho_name(&ortho))?;
            ensure_dir(&out_dir)?;
            let mut rows = Vec::with_capacity(ex.chips.len());
            for c in &ex.chips {
                let file = format!("{}.tif", c.crown_id);
                save_raster(&c.raster, out_dir.join(&file))?;
                rows.push(ManifestRow {
                    crown_id: c.crown_id.clone(),
                    file,
                    valid_pixels: c.valid_pixels,
                    species_label: c.species.clone(),
                });
            }
            write_manifest(out_dir.join("manifest.csv"), &rows)?;
            for s in &ex.skipped {
                eprintln!("skipped {}: {}", s.crown_id, s.reason);
            }
            eprintln!("{} chips", rows.len());
        }
        Command::ClusterExperiment {
            config,
            manifest,
            truth,
            repeats,
            seed,
            out,
        } => {
            let cfg = GridConfig::load(&config)?;
            let rows = read_manifest(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let chips: Vec<Chip> = rows
                .iter()
                .map(|r| Ok(Chip::from_raster(r.crown_id.clone(), load_raster(base.join(&r.file))?, r.file.clone())))
                .collect::<anyhow::Result<_>>()?;
            let truth: BTreeMap<String, String> = match truth {
                Some(p) => read_pairs(&p, "crown_id", "species")?.into_iter().collect(),
                None => rows
                    .iter()
                    .filter_map(|r| r.species_label.clone().map(|s| (r.crown_id.clone(), s)))
                    .collect(),
            };
            if truth.is_empty() {
                bail!(canopy_core::Error::invalid("no ground-truth species labels"));
            }
            let results = run_experiment_grid(&chips, &truth, &cfg, repeats, seed)?;
            write_grid_report(&out, &results)?;
            if let Some(best) = results.first() {
                eprintln!(
                    "best: {} / {} / {} / {} mean F1 {:.3}",
                    best.preprocess, best.features, best.reduction, best.clusterer, best.mean_f1
                );
            }
        }
        Command::Evaluate(Evaluate::Clustering { labels, truth, out }) => {
            let labels: BTreeMap<String, String> = read_pairs(&labels, "crown_id", "cluster")?.into_iter().collect();
            let truth: BTreeMap<String, String> = read_pairs(&truth, "crown_id", "species")?.into_iter().collect();
            let mut l = Vec::new();
            let mut t = Vec::new();
            for (id, species) in &truth {
                let Some(c) = labels.get(id) else { continue };
                l.push(
                    c.parse::<i64>()
                        .map_err(|_| canopy_core::Error::invalid(format!("cluster label {c:?} of {id} is not an integer")))?,
                );
                t.push(species.clone());
            }
            let (_, report) = evaluate_clustering(&l, &t)?;
            write_f1_report(&out, &report)?;
            eprintln!("macro F1 {:.3}, weighted F1 {:.3}", report.macro_f1, report.weighted_f1);
        }
        Command::Evaluate(Evaluate::Segmentation {
            pred,
            truth,
            classes,
            shares,
            nodata,
            smooth,
            out,
        }) => {
            let classes: BTreeMap<u32, String> = read_pairs(&classes, "id", "name")?
                .into_iter()
                .map(|(id, name)| {
                    id.parse()
                        .map(|id| (id, name))
                        .map_err(|_| canopy_core::Error::invalid(format!("class id {id:?} is not an integer")))
                })
                .collect::<Result<_, _>>()?;
            let pred_map = raster_to_classes(&load_raster(&pred)?, &classes, nodata)?;
            let truth_map = raster_to_classes(&load_raster(&truth)?, &classes, nodata)?;
            let pred_map = if smooth > 0 {
                majority_vote_smooth(&[pred_map], smooth)?
            } else {
                pred_map
            };
            let report = iou_scores(&pred_map, &truth_map, &ClassShareTable::read_csv(&shares)?)?;
            write_iou_report(&out, &report)?;
            if let Some(w) = report.weighted_iou {
                eprintln!("weighted IoU {w:.3}");
            }
        }
        Command::Ingest(Ingest::Cadastre {
            store,
            file,
            captured_at,
            crs,
        }) => {
            let store = FileStorage::open(&store)?;
            let opts = IngestOptions {
                default_crs: crs,
                ..IngestOptions::default()
            };
            let snap = ingest_cadastre(&store, &file, parse_time(captured_at.as_deref())?, &opts)?;
            println!("S{} {} records", snap.snapshot_id, snap.len());
        }
        Command::Ingest(Ingest::Sensors { store, file }) => {
            let store = FileStorage::open(&store)?;
            let rep = ingest_sensor_series(&store, &file)?;
            println!("{} ingested, {} rejected as duplicates", rep.ingested, rep.rejected_duplicates);
        }
        Command::Ingest(Ingest::Annotations {
            store,
            jsonl,
            stats,
            kind,
            species,
            links,
            producer,
        }) => {
            let now = Utc::now();
            let mut items = if let Some(p) = jsonl {
                annotations::read_jsonl(&p)?
            } else if let Some(p) = stats {
                let kind = match kind {
                    Some(StatsKind::NdviStats) => "ndvi_stats",
                    Some(StatsKind::NdreStats) => "ndre_stats",
                    None => unreachable!("clap requires --kind"),
                };
                annotations::from_stats(&canopy_core::indices::read_stats_csv(&p)?, kind, &producer, now)?
            } else if let Some(p) = species {
                species_annotations(&p, &producer, now)?
            } else {
                bail!(canopy_core::Error::invalid("one of --jsonl, --stats or --species is required"));
            };
            if let Some(l) = links {
                let map = read_pairs(&l, "crown_id", "tree_id")?.into_iter().collect();
                items = link_to_trees(items, &map);
            }
            let store = FileStorage::open(&store)?;
            let n = store.append_annotations(&items)?;
            println!("{n} annotations appended");
        }
        Command::Diff { store, from, to, out } => {
            let store = FileStorage::open(&store)?;
            let d = store.diff(parse_snapshot_ref(&from)?, parse_snapshot_ref(&to)?)?;
            let bytes = serde_json::to_vec_pretty(&d)?;
            std::fs::write(&out, bytes).map_err(|e| canopy_core::Error::io(&out, e))?;
            println!(
                "{} added, {} removed, {} modified, {} possible id churn",
                d.added.len(),
                d.removed.len(),
                d.modified.len(),
                d.possible_id_churn.len()
            );
        }
        Command::Join {
            store,
            snapshot,
            crowns,
            max_dist,
            out,
        } => {
            let store = FileStorage::open(&store)?;
            let snap = match snapshot {
                Some(s) => store.load_snapshot(parse_snapshot_ref(&s)?)?,
                None => store
                    .latest_snapshot()?
                    .ok_or_else(|| canopy_inventory::Error::invalid("the store holds no snapshot"))?,
            };
            let res = join_predictions(&snap, &CrownCollection::read(&crowns)?, max_dist)?;
            let mut w = csv::Writer::from_path(&out).map_err(|e| csv_error(&out, e))?;
            w.write_record(["tree_id", "crown_id", "distance"]).map_err(|e| csv_error(&out, e))?;
            for m in &res.matches {
                w.write_record([m.tree_id.as_str(), m.crown_id.as_str(), &m.distance.to_string()])
                    .map_err(|e| csv_error(&out, e))?;
            }
            w.flush().map_err(|e| canopy_core::Error::io(&out, e))?;
            println!(
                "{} matched, {} trees and {} crowns unmatched",
                res.matches.len(),
                res.unmatched_trees.len(),
                res.unmatched_crowns.len()
            );
        }
        Command::Serve { config, bind } => {
            let cfg = AppConfig::load(&config)?;
            let store = Arc::new(FileStorage::open(&cfg.store)?);
            let layers = LayerRegistry::load(&cfg.layers, &cfg.base_dir)?;
            let state = AppState::new(store, layers);
            let bind = bind.unwrap_or(cfg.bind);
            let rt = tokio::runtime::Runtime::new().map_err(|e| canopy_core::Error::io("tokio runtime", e))?;
            rt.block_on(serve(state, &bind))?;
        }
    }
    Ok(())
}

fn ortho_name(r: &Raster) -> String {
    r.metadata().get("source").cloned().unwrap_or_else(|| "orthomosaic".into())
}

fn species_annotations(path: &Path, producer: &str, now: DateTime<Utc>) -> anyhow::Result<Vec<TreeAnnotation>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let pos = |n: &str| headers.iter().position(|h| h.trim() == n);
    let (Some(ic), Some(is)) = (pos("crown_id"), pos("species")) else {
        bail!(canopy_core::Error::format(path, "needs crown_id and species columns"));
    };
    let iclu = pos("cluster");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let cluster = match iclu.map(|i| rec[i].trim()) {
            Some(s) if !s.is_empty() => Some(
                s.parse()
                    .map_err(|_| canopy_core::Error::format(path, format!("cluster {s:?} is not an integer")))?,
            ),
            _ => None,
        };
        out.push(TreeAnnotation {
            target: Target::CrownId(rec[ic].trim().to_string()),
            payload: Payload::SpeciesPrediction {
                species: rec[is].trim().to_string(),
                cluster,
            },
            produced_at: now,
            producer: producer.to_string(),
        });
    }
    Ok(out)
}
