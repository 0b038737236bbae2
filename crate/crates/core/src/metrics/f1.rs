use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::assignment::{ClassCounts, ConfusionCounts};

/// 2TP / (2TP + FP + FN), or 0 when the denominator is 0.
pub fn f1_score(c: ClassCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fn_;
    if den == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub class: String,
    pub counts: ClassCounts,
    pub support: u64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassF1>,
    pub macro_f1: f64,
    /// Support-weighted mean.
    pub weighted_f1: f64,
}

/// Per-class, macro and support-weighted F1. Classes present in only one of
/// `counts` and `supports` are included with zero for the missing side.
pub fn f1_scores(counts: &ConfusionCounts, supports: &BTreeMap<String, u64>) -> F1Report {
    let mut classes: Vec<&String> = counts.keys().chain(supports.keys()).collect();
    classes.sort();
    classes.dedup();
    let per_class: Vec<ClassF1> = classes
        .into_iter()
        .map(|class| {
            let c = counts.get(class).copied().unwrap_or_default();
            ClassF1 {
                class: class.clone(),
                counts: c,
                support: supports.get(class).copied().unwrap_or(0),
                f1: f1_score(c),
            }
        })
        .collect();
    let k = per_class.len();
    let macro_f1 = if k == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / k as f64
    };
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    let weighted_f1 = if total == 0 {
        0.0
    } else {
        per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64
    };
    F1Report {
        per_class,
        macro_f1,
        weighted_f1,
    }
}
