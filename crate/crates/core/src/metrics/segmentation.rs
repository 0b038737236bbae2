use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chips::csv_err;
use crate::error::{Error, Result};

/// Per-pixel class ids with a class table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
    classes: BTreeMap<u32, String>,
    nodata: u32,
}

impl SegmentationMap {
    pub fn new(
        width: usize,
        height: usize,
        data: Vec<u32>,
        classes: BTreeMap<u32, String>,
        nodata: u32,
    ) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels for a {width}x{height} map",
                data.len()
            )));
        }
        if classes.contains_key(&nodata) {
            return Err(Error::invalid(format!("nodata id {nodata} is also a class id")));
        }
        let names: BTreeSet<&String> = classes.values().collect();
        if names.len() != classes.len() {
            return Err(Error::invalid("class names must be unique"));
        }
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| **v != nodata && !classes.contains_key(v))
        {
            return Err(Error::invalid(format!("pixel {i} has unknown class id {v}")));
        }
        Ok(Self {
            width,
            height,
            data,
            classes,
            nodata,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn classes(&self) -> &BTreeMap<u32, String> {
        &self.classes
    }

    pub fn nodata(&self) -> u32 {
        self.nodata
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * self.width + col]
    }

    pub(crate) fn with_data(&self, data: Vec<u32>) -> Self {
        Self {
            data,
            ..self.clone()
        }
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.classes.iter().find(|(_, n)| n.as_str() == name).map(|(&id, _)| id)
    }

    pub(crate) fn check_aligned(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::invalid(format!(
                "map sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        if self.classes != other.classes || self.nodata != other.nodata {
            return Err(Error::invalid("class tables differ"));
        }
        Ok(())
    }
}

/// Class name → fraction of the area. Shares are ≥ 0 and sum to 1 ± 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShareTable {
    shares: BTreeMap<String, f64>,
}

pub const SHARE_SUM_TOL: f64 = 1e-6;

impl ClassShareTable {
    pub fn new(shares: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((c, s)) = shares.iter().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("share of {c:?} is {s}")));
        }
        let sum: f64 = shares.values().sum();
        if (sum - 1.0).abs() > SHARE_SUM_TOL {
            return Err(Error::invalid(format!("shares sum to {sum}, not 1")));
        }
        Ok(Self { shares })
    }

    /// Rescale non-negative weights (fractions or percentages) to sum to 1.
    pub fn normalized(raw: BTreeMap<String, f64>) -> Result<Self> {
        if let Some((c, s)) = raw.iter().find(|(_, s)| !(s.is_finite() && **s >= 0.0)) {
            return Err(Error::invalid(format!("share of {c:?} is {s}")));
        }
        let sum: f64 = raw.values().sum();
        if !(sum > 0.0) {
            return Err(Error::invalid("shares sum to zero"));
        }
        Self::new(raw.into_iter().map(|(c, s)| (c, s / sum)).collect())
    }

    /// Pixel shares of every class in the table (nodata excluded).
    pub fn from_map(map: &SegmentationMap) -> Result<Self> {
        let mut counts: BTreeMap<u32, u64> = map.classes.keys().map(|&k| (k, 0)).collect();
        for &v in &map.data {
            if let Some(c) = counts.get_mut(&v) {
                *c += 1;
            }
        }
        Self::normalized(
            counts
                .into_iter()
                .map(|(k, c)| (map.classes[&k].clone(), c as f64))
                .collect(),
        )
    }

    pub fn get(&self, class: &str) -> Option<f64> {
        self.shares.get(class).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, f64)> {
        self.shares.iter().map(|(c, &s)| (c, s))
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, f64> {
        &self.shares
    }

    /// Read `class,share` rows and rescale them to sum to 1.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            class: String,
            share: f64,
        }
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let mut raw = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| csv_err(path, e))?;
            if raw.insert(row.class.clone(), row.share).is_some() {
                return Err(Error::format(path, format!("class {:?} listed twice", row.class)));
            }
        }
        Self::normalized(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: String,
    pub share: Option<f64>,
    /// `None` when the class occurs in neither map.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub per_class: Vec<ClassIou>,
    pub weighted_iou: Option<f64>,
}

/// Σ share·IoU over classes with a defined IoU, divided by the sum of those
/// shares.
pub fn weighted_iou<'a>(rows: impl IntoIterator<Item = (f64, Option<f64>)> + 'a) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (share, iou) in rows {
        if let Some(v) = iou {
            num += share * v;
            den += share;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Per-class IoU over pixels that are valid in both maps, and the
/// share-weighted mean. Classes missing from `shares` are reported but carry
/// no weight.
pub fn iou_scores(pred: &SegmentationMap, truth: &SegmentationMap, shares: &ClassShareTable) -> Result<IouReport> {
    pred.check_aligned(truth)?;
    let mut inter: BTreeMap<u32, u64> = BTreeMap::new();
    let mut union: BTreeMap<u32, u64> = BTreeMap::new();
    for (&p, &t) in pred.data.iter().zip(&truth.data) {
        if p == pred.nodata || t == truth.nodata {
            continue;
        }
        *union.entry(p).or_default() += 1;
        if p == t {
            *inter.entry(p).or_default() += 1;
        } else {
            *union.entry(t).or_default() += 1;
        }
    }
    let per_class: Vec<ClassIou> = pred
        .classes
        .iter()
        .map(|(id, name)| {
            let u = union.get(id).copied().unwrap_or(0);
            ClassIou {
                class: name.clone(),
                share: shares.get(name),
                iou: (u > 0).then(|| inter.get(id).copied().unwrap_or(0) as f64 / u as f64),
            }
        })
        .collect();
    let weighted = weighted_iou(per_class.iter().filter_map(|c| c.share.map(|s| (s, c.iou))));
    Ok(IouReport {
        per_class,
        weighted_iou: weighted,
    })
}
