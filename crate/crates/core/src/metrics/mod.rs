//! Cluster→class assignment, F1 and IoU scoring, class merging and weighting,
//! and majority-vote smoothing of label maps.

mod assignment;
mod classes;
mod f1;
mod report;
mod segmentation;
mod vote;

pub use assignment::{
    map_clusters_to_classes, optimal_assignment, ClassCounts, ClusterMapping, ConfusionCounts, Contingency,
};
pub use classes::{class_weights, merge_minor_classes, ClassRemap, MergeRule, OTHER_CLASS};
pub use f1::{f1_score, f1_scores, ClassF1, F1Report};
pub use report::{write_f1_report, write_iou_report};
pub use segmentation::{iou_scores, weighted_iou, ClassIou, ClassShareTable, IouReport, SegmentationMap};
pub use vote::majority_vote_smooth;

/// Map clusters to classes and score the result.
pub fn evaluate_clustering(labels: &[i64], truth: &[String]) -> crate::Result<(ClusterMapping, F1Report)> {
    let mapping = map_clusters_to_classes(labels, truth)?;
    let report = f1_scores(&mapping.counts, &mapping.supports);
    Ok((mapping, report))
}
