//! CSV reports: `class,tp,fp,fn,f1` and `class,share,iou`, each followed by
//! summary rows.

use std::path::Path;

use super::f1::F1Report;
use super::segmentation::IouReport;
use crate::chips::csv_err;
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_f1_report(path: impl AsRef<Path>, report: &F1Report) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut row = |fields: [String; 5]| w.write_record(fields).map_err(|e| csv_err(path, e));
    row(["class", "tp", "fp", "fn", "f1"].map(String::from))?;
    for c in &report.per_class {
        row([
            c.class.clone(),
            c.counts.tp.to_string(),
            c.counts.fp.to_string(),
            c.counts.fn_.to_string(),
            c.f1.to_string(),
        ])?;
    }
    row(["macro_f1".into(), String::new(), String::new(), String::new(), report.macro_f1.to_string()])?;
    row(["weighted_f1".into(), String::new(), String::new(), String::new(), report.weighted_f1.to_string()])?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_iou_report(path: impl AsRef<Path>, report: &IouReport) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["class", "share", "iou"]).map_err(|e| csv_err(path, e))?;
    for c in &report.per_class {
        w.write_record([c.class.clone(), opt(c.share), opt(c.iou)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.write_record(["weighted_iou".to_string(), String::new(), opt(report.weighted_iou)])
        .map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
