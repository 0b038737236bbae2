use std::collections::BTreeMap;

use super::segmentation::SegmentationMap;
use crate::error::{Error, Result};

/// Modal class; ties keep `original` when it is among the modes, else the
/// lowest id wins. `None` when there are no votes.
fn modal(votes: &BTreeMap<u32, usize>, original: u32) -> Option<u32> {
    let top = *votes.values().max()?;
    if votes.get(&original) == Some(&top) {
        return Some(original);
    }
    votes.iter().find(|(_, &c)| c == top).map(|(&id, _)| id)
}

/// Majority vote. With several aligned maps each pixel takes the modal class
/// of the maps at that pixel (the first map supplies the original class).
/// With one map each pixel takes the modal class of its `window`×`window`
/// neighbourhood, clipped at the border. Nodata never votes; a nodata pixel
/// of a single map stays nodata.
pub fn majority_vote_smooth(maps: &[SegmentationMap], window: usize) -> Result<SegmentationMap> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd, got {window}")));
    }
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to vote over"))?;
    for m in &maps[1..] {
        first.check_aligned(m)?;
    }
    let nodata = first.nodata();
    let (w, h) = (first.width(), first.height());
    let mut out = Vec::with_capacity(w * h);
    if maps.len() > 1 {
        for i in 0..w * h {
            let mut votes = BTreeMap::new();
            for m in maps {
                let v = m.data()[i];
                if v != nodata {
                    *votes.entry(v).or_insert(0usize) += 1;
                }
            }
            out.push(modal(&votes, first.data()[i]).unwrap_or(nodata));
        }
    } else {
        let r = window / 2;
        for row in 0..h {
            for col in 0..w {
                let orig = first.get(row, col);
                if orig == nodata {
                    out.push(nodata);
                    continue;
                }
                let mut votes = BTreeMap::new();
                for rr in row.saturating_sub(r)..(row + r + 1).min(h) {
                    for cc in col.saturating_sub(r)..(col + r + 1).min(w) {
                        let v = first.get(rr, cc);
                        if v != nodata {
                            *votes.entry(v).or_insert(0usize) += 1;
                        }
                    }
                }
                out.push(modal(&votes, orig).unwrap_or(orig));
            }
        }
    }
    Ok(first.with_data(out))
}
