//! Evaluation suite: group-level, mean-point and perfect-group score
//! families, 3D reconstruction error and back-projection error.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::AssociationGroup;
use crate::pipeline::{self, AssociationResult};
use crate::scene::{NodeId, Scene, SceneError};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("scene is missing ground truth: {0}")]
    MissingGroundTruth(#[from] SceneError),
    #[error("prediction references unknown observation {0}")]
    UnknownNode(NodeId),
}

/// Precision/recall family with its underlying counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub iou: f64,
}

fn ratio(num: f64, den: f64, what: &str) -> f64 {
    if den == 0.0 {
        log::warn!("{what}: zero denominator, score defined as 0");
        0.0
    } else {
        num / den
    }
}

impl ScoreSet {
    pub fn from_counts(tp: u32, fp: u32, fn_: u32) -> Self {
        let (tpf, fpf, fnf) = (tp as f64, fp as f64, fn_ as f64);
        Self {
            tp,
            fp,
            fn_,
            p: ratio(tpf, tpf + fpf, "precision"),
            r: ratio(tpf, tpf + fnf, "recall"),
            f1: ratio(2.0 * tpf, 2.0 * tpf + fpf + fnf, "f1"),
            iou: ratio(tpf, tpf + fpf + fnf, "iou"),
        }
    }
}

/// Matching between predicted groups and ground-truth instances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchAssignment {
    /// predicted group_id -> matched gt instance
    pub pairs: BTreeMap<u32, u32>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
}

/// Plurality label of a group's members; ties break to the lowest gt id.
/// Returns the label and how many members carry it.
fn plurality_label(group: &AssociationGroup, labels: &BTreeMap<NodeId, u32>) -> Option<(u32, u32)> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for m in &group.members {
        *counts.entry(*labels.get(m)?).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(label, count)| (label, count))
}

/// Assigns predicted groups (including singleton outliers promoted to
/// groups by the caller) to ground-truth instances.
///
/// A group's candidate is the plurality label of its members; the group
/// matches only when at least two members carry that label. When several
/// groups claim one instance, the one with the most correct members wins
/// (ties go to the lowest group id); the rest stay unmatched.
pub fn match_groups(
    groups: &[AssociationGroup],
    labels: &BTreeMap<NodeId, u32>,
) -> MatchAssignment {
    let gt_universe: BTreeSet<u32> = labels.values().copied().collect();
    // candidate claims: gt -> (correct_count, group_id)
    let mut claims: BTreeMap<u32, Vec<(u32, u32)>> = BTreeMap::new();
    for g in groups {
        let Some((label, correct)) = plurality_label(g, labels) else {
            continue;
        };
        if correct >= 2 {
            claims.entry(label).or_default().push((correct, g.group_id));
        }
    }

    let mut assignment = MatchAssignment::default();
    for (gt, mut claimants) in claims {
        claimants.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        assignment.pairs.insert(claimants[0].1, gt);
    }
    for g in groups {
        if !assignment.pairs.contains_key(&g.group_id) {
            assignment.unmatched_pred.push(g.group_id);
        }
    }
    let matched_gt: BTreeSet<u32> = assignment.pairs.values().copied().collect();
    assignment.unmatched_gt = gt_universe.difference(&matched_gt).copied().collect();
    assignment
}

/// Group-level scores over the match assignment.
pub fn group_scores(assignment: &MatchAssignment) -> ScoreSet {
    ScoreSet::from_counts(
        assignment.pairs.len() as u32,
        assignment.unmatched_pred.len() as u32,
        assignment.unmatched_gt.len() as u32,
    )
}

/// Per-group point-level precision/recall/F1/IoU averaged over predicted
/// groups whose members span at least two views.
pub fn mean_point_scores(
    groups: &[AssociationGroup],
    labels: &BTreeMap<NodeId, u32>,
) -> (f64, f64, f64, f64) {
    let mut label_totals: BTreeMap<u32, u32> = BTreeMap::new();
    for l in labels.values() {
        *label_totals.entry(*l).or_insert(0) += 1;
    }

    let (mut sp, mut sr, mut sf, mut si) = (0.0, 0.0, 0.0, 0.0);
    let mut n = 0u32;
    for g in groups {
        let views: BTreeSet<u32> = g.members.iter().map(|m| m.view).collect();
        if views.len() < 2 {
            continue;
        }
        let Some((label, tp)) = plurality_label(g, labels) else {
            continue;
        };
        let fp = g.len() as u32 - tp;
        let fn_ = label_totals[&label] - tp;
        let s = ScoreSet::from_counts(tp, fp, fn_);
        sp += s.p;
        sr += s.r;
        sf += s.f1;
        si += s.iou;
        n += 1;
    }
    if n == 0 {
        log::warn!("mean point scores: no groups span two views, reporting 0");
        return (0.0, 0.0, 0.0, 0.0);
    }
    let nf = n as f64;
    (sp / nf, sr / nf, sf / nf, si / nf)
}

/// Perfect-group scores. A true positive is a pure group (one label only)
/// of size >= 2 that is the designated pure group of its instance: the
/// largest, ties to the lowest group id. Everything else predicted is a
/// false positive; instances without a designated pure group are false
/// negatives. With `require_complete` a group must also contain every
/// observation of its instance to count.
pub fn perfect_group_scores(
    groups: &[AssociationGroup],
    labels: &BTreeMap<NodeId, u32>,
    require_complete: bool,
) -> ScoreSet {
    let mut label_totals: BTreeMap<u32, u32> = BTreeMap::new();
    for l in labels.values() {
        *label_totals.entry(*l).or_insert(0) += 1;
    }

    // candidate pure groups per instance: (size, group_id)
    let mut pure: BTreeMap<u32, Vec<(usize, u32)>> = BTreeMap::new();
    for g in groups {
        if g.len() < 2 {
            continue;
        }
        let group_labels: BTreeSet<Option<u32>> =
            g.members.iter().map(|m| labels.get(m).copied()).collect();
        if group_labels.len() != 1 {
            continue;
        }
        let Some(Some(label)) = group_labels.into_iter().next() else {
            continue;
        };
        if require_complete && (g.len() as u32) < label_totals[&label] {
            continue;
        }
        pure.entry(label).or_default().push((g.len(), g.group_id));
    }

    let mut designated: BTreeSet<u32> = BTreeSet::new();
    for (_, mut cands) in pure {
        cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        designated.insert(cands[0].1);
    }

    let tp = designated.len() as u32;
    let fp = groups.len() as u32 - tp;
    let fn_ = label_totals.len() as u32 - tp;
    ScoreSet::from_counts(tp, fp, fn_)
}

/// Mean 3D error over matched groups and mean squared back-projection
/// error over all triangulable predicted groups. NaN marks "no data", so
/// an empty prediction is not mistaken for a perfect one.
pub fn reconstruction_errors(
    pred: &AssociationResult,
    scene: &Scene,
    assignment: &MatchAssignment,
) -> (f64, f64) {
    let obs = scene.observation_map();
    let recon = pipeline::reconstruct_with_obs(pred, &scene.cameras, &obs);
    let by_group: BTreeMap<u32, &pipeline::ReconstructedPoint> =
        recon.iter().map(|r| (r.group_id, r)).collect();

    let mut err_sum = 0.0;
    let mut err_n = 0u32;
    for (&group_id, &gt_id) in &assignment.pairs {
        let (Some(r), Some(gt)) = (by_group.get(&group_id), scene.gt_point(gt_id)) else {
            continue;
        };
        err_sum += (r.point - gt.xyz).norm();
        err_n += 1;
    }
    let err3d = if err_n > 0 {
        err_sum / err_n as f64
    } else {
        f64::NAN
    };

    let skipped = pred.groups.len() - recon.len();
    if skipped > 0 {
        log::warn!("{skipped} group(s) could not be triangulated");
    }
    let bpe = if recon.is_empty() {
        f64::NAN
    } else {
        recon.iter().map(|r| r.bpe).sum::<f64>() / recon.len() as f64
    };
    (err3d, bpe)
}

/// Full per-scene report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub g: ScoreSet,
    pub mp_p: f64,
    pub mp_r: f64,
    pub mp_f1: f64,
    pub mp_iou: f64,
    pub pg: ScoreSet,
    /// Mean 3D error in world units; NaN when nothing was matched.
    pub err3d: f64,
    /// Mean squared back-projection error in squared pixels; NaN when
    /// nothing was triangulable.
    pub bpe: f64,
    pub bpe_rms: f64,
    pub time_ms: f64,
}

/// Evaluates a prediction against a fully labeled scene.
///
/// Group-level scores treat every outlier as its own singleton group;
/// the other families score the real groups only.
pub fn evaluate(
    pred: &AssociationResult,
    scene: &Scene,
    time_ms: f64,
) -> Result<MetricsReport, MetricsError> {
    let labels = scene.label_map()?;
    for node in pred.all_nodes() {
        if !labels.contains_key(&node) {
            return Err(MetricsError::UnknownNode(node));
        }
    }

    let mut with_singletons = pred.groups.clone();
    let mut next_id = with_singletons.iter().map(|g| g.group_id + 1).max().unwrap_or(0);
    for &o in &pred.outliers {
        with_singletons.push(AssociationGroup::new(next_id, BTreeSet::from([o])));
        next_id += 1;
    }

    let assignment = match_groups(&with_singletons, &labels);
    let g = group_scores(&assignment);
    let (mp_p, mp_r, mp_f1, mp_iou) = mean_point_scores(&pred.groups, &labels);
    let pg = perfect_group_scores(&pred.groups, &labels, false);
    let (err3d, bpe) = reconstruction_errors(pred, scene, &assignment);

    Ok(MetricsReport {
        g,
        mp_p,
        mp_r,
        mp_f1,
        mp_iou,
        pg,
        err3d,
        bpe,
        bpe_rms: bpe.sqrt(),
        time_ms,
    })
}

/// Builds the ground-truth grouping of a scene as an association result,
/// useful for self-evaluation and as an upper-bound reference.
pub fn ground_truth_prediction(scene: &Scene) -> Result<AssociationResult, MetricsError> {
    let labels = scene.label_map()?;
    let mut by_label: BTreeMap<u32, BTreeSet<NodeId>> = BTreeMap::new();
    for (node, label) in labels {
        by_label.entry(label).or_default().insert(node);
    }
    let mut groups = Vec::new();
    let mut outliers = Vec::new();
    let mut id = 0;
    for (_, members) in by_label {
        if members.len() >= 2 {
            groups.push(AssociationGroup::new(id, members));
            id += 1;
        } else {
            outliers.extend(members);
        }
    }
    Ok(AssociationResult {
        groups,
        outliers,
        timings: Default::default(),
    })
}
