//! Group-level refinement: per-node back-projection-error scoring, IQR
//! outlier removal iterated to a fixed point, and removal of whole groups
//! whose error jumps away from the rest of the scene.

use std::collections::BTreeMap;

use crate::geometry::{self, CameraPose};
use crate::graph::AssociationGroup;
use crate::scene::NodeId;
use crate::Vec2;

/// Mean back-projection error accrued by one node (squared pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeBpeScore {
    pub node: NodeId,
    pub mean_bpe: f64,
}

/// IQR bounds over a zero-padded score list. The lower bound is pinned to
/// zero since a perfect back-projection cannot go below it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqrBounds {
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub lb: f64,
    pub ub: f64,
}

/// Groups of fewer than three nodes have no held-out view to score
/// against, so the IQR stage skips them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkipGroup;

/// Scores below this (squared pixels, ~1e-3 px) are numerical jitter from
/// exact triangulations and never count as outliers.
const BPE_FLOOR: f64 = 1e-6;

fn camera_lookup<'a>(cams: &'a [CameraPose]) -> BTreeMap<u32, &'a CameraPose> {
    cams.iter().map(|c| (c.view_id, c)).collect()
}

/// Per-node mean BPE over all pairwise triangulations of the group.
///
/// For every cross-view node pair the 3D candidate is triangulated and
/// back-projected to every remaining view of the group. Each squared-pixel
/// error sample is attributed to all three participants: both pair members
/// and the held-out target, so a wrong node dominates its own score.
pub fn node_mean_bpe(
    group: &AssociationGroup,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
) -> Result<Vec<NodeBpeScore>, SkipGroup> {
    if group.len() < 3 {
        return Err(SkipGroup);
    }
    let by_view = camera_lookup(cams);
    let members: Vec<NodeId> = group.members.iter().copied().collect();
    let mut sums: BTreeMap<NodeId, (f64, usize)> =
        members.iter().map(|&n| (n, (0.0, 0))).collect();

    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let (u, v) = (members[i], members[j]);
            if u.view == v.view {
                continue;
            }
            let pair_cams = [by_view[&u.view], by_view[&v.view]];
            let pair_pts = [obs[&u], obs[&v]];
            let Ok(candidate) = geometry::triangulate(&pair_cams, &pair_pts) else {
                continue; // degenerate pair, contributes no samples
            };
            for &w in &members {
                if w.view == u.view || w.view == v.view {
                    continue;
                }
                let Ok(back) = geometry::project(by_view[&w.view], candidate) else {
                    continue;
                };
                let err = (obs[&w] - back).norm_squared();
                for target in [u, v, w] {
                    let e = sums.get_mut(&target).unwrap();
                    e.0 += err;
                    e.1 += 1;
                }
            }
        }
    }

    Ok(members
        .into_iter()
        .map(|node| {
            let (sum, n) = sums[&node];
            NodeBpeScore {
                node,
                mean_bpe: if n > 0 { sum / n as f64 } else { 0.0 },
            }
        })
        .collect())
}

/// Linear-interpolation percentile with inclusive endpoints over a sorted
/// slice: rank `h = p * (n - 1)`, value `x[lo] + frac * (x[hi] - x[lo])`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// IQR bounds of a nonnegative score list, padded with one zero before the
/// quartiles are taken.
pub fn iqr_bounds(scores: &[f64], alpha: f64) -> IqrBounds {
    assert!(!scores.is_empty());
    let mut padded = Vec::with_capacity(scores.len() + 1);
    padded.push(0.0);
    padded.extend_from_slice(scores);
    padded.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let q1 = percentile(&padded, 0.25);
    let q3 = percentile(&padded, 0.75);
    let iqr = q3 - q1;
    IqrBounds {
        q1,
        q3,
        iqr,
        lb: 0.0,
        ub: q3 + alpha * iqr,
    }
}

/// Iterates score -> IQR -> removal until no node exceeds the upper bound.
///
/// Same-view duplicates are resolved first: only the duplicate with the
/// lowest mean BPE stays (ties fall back to the lower mean epipolar
/// residual against the rest of the group, then the lower node id).
/// Groups that shrink below three nodes stop iterating.
pub fn remove_outliers(
    group: &AssociationGroup,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
    alpha: f64,
) -> (AssociationGroup, Vec<NodeId>) {
    let mut current = group.clone();
    let mut removed = Vec::new();

    loop {
        if current.len() < 3 {
            break;
        }
        let scores = match node_mean_bpe(&current, cams, obs) {
            Ok(s) => s,
            Err(SkipGroup) => break,
        };
        let score_of: BTreeMap<NodeId, f64> =
            scores.iter().map(|s| (s.node, s.mean_bpe)).collect();

        if !current.one_per_view() {
            let dups = resolve_duplicates(&current, &score_of, cams, obs);
            for n in dups {
                current.members.remove(&n);
                removed.push(n);
            }
            continue;
        }

        let values: Vec<f64> = scores.iter().map(|s| s.mean_bpe).collect();
        let bounds = iqr_bounds(&values, alpha);
        let outliers: Vec<NodeId> = scores
            .iter()
            .filter(|s| s.mean_bpe > bounds.ub && s.mean_bpe > BPE_FLOOR)
            .map(|s| s.node)
            .collect();
        if outliers.is_empty() {
            break;
        }
        for n in outliers {
            current.members.remove(&n);
            removed.push(n);
        }
    }

    (current, removed)
}

/// Picks the duplicates to drop so each view keeps exactly one node.
fn resolve_duplicates(
    group: &AssociationGroup,
    score_of: &BTreeMap<NodeId, f64>,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
) -> Vec<NodeId> {
    let cache = crate::geometry::FundamentalCache::new(cams).ok();
    let epi_residual = |n: NodeId| -> f64 {
        let Some(cache) = &cache else { return 0.0 };
        let mut sum = 0.0;
        let mut cnt = 0;
        for &m in &group.members {
            if m.view == n.view {
                continue;
            }
            if let Ok(d) = cache.symmetric_distance(n.view, obs[&n], m.view, obs[&m]) {
                sum += d;
                cnt += 1;
            }
        }
        if cnt > 0 {
            sum / cnt as f64
        } else {
            0.0
        }
    };

    let mut per_view: BTreeMap<u32, Vec<NodeId>> = BTreeMap::new();
    for &n in &group.members {
        per_view.entry(n.view).or_default().push(n);
    }
    let mut drop = Vec::new();
    for (_, nodes) in per_view {
        if nodes.len() < 2 {
            continue;
        }
        let keep = nodes
            .iter()
            .copied()
            .min_by(|&a, &b| {
                score_of[&a]
                    .partial_cmp(&score_of[&b])
                    .unwrap()
                    .then_with(|| epi_residual(a).partial_cmp(&epi_residual(b)).unwrap())
                    .then(a.cmp(&b))
            })
            .unwrap();
        drop.extend(nodes.into_iter().filter(|&n| n != keep));
    }
    drop
}

/// Mean back-projection error of one group after triangulating over all of
/// its members. `None` when the group cannot be triangulated.
pub fn group_mean_bpe(
    group: &AssociationGroup,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
) -> Option<f64> {
    let by_view = camera_lookup(cams);
    let members: Vec<NodeId> = group.members.iter().copied().collect();
    if members.len() < 2 {
        return None;
    }
    let g_cams: Vec<&CameraPose> = members.iter().map(|n| by_view[&n.view]).collect();
    let g_pts: Vec<Vec2> = members.iter().map(|n| obs[n]).collect();
    let r = geometry::triangulate(&g_cams, &g_pts).ok()?;
    geometry::back_projection_error(&g_cams, &g_pts, r).ok()
}

/// Parameters for the error-association-group gap rule.
#[derive(Debug, Clone, Copy)]
pub struct GapConfig {
    /// Multiple of the running median difference that counts as a jump.
    pub gamma: f64,
    /// A jump only triggers past `beta * tau^2` squared pixels.
    pub beta: f64,
    /// Floor for the median difference.
    pub epsilon: f64,
    pub tau: f64,
}

/// Sorts groups by mean BPE and discards everything from the first sudden
/// jump onward: the smallest `i >= 1` with `b_i - b_{i-1} > gamma *
/// max(median of previous differences, epsilon)` and `b_i > beta * tau^2`.
pub fn remove_error_groups(
    groups: Vec<AssociationGroup>,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
    cfg: &GapConfig,
) -> (Vec<AssociationGroup>, Vec<AssociationGroup>) {
    let mut scored: Vec<(f64, AssociationGroup)> = groups
        .into_iter()
        .map(|g| (group_mean_bpe(&g, cams, obs).unwrap_or(0.0), g))
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.group_id.cmp(&b.1.group_id))
    });

    let bpes: Vec<f64> = scored.iter().map(|(b, _)| *b).collect();
    let mut cut = bpes.len();
    let mut diffs: Vec<f64> = Vec::new();
    for i in 1..bpes.len() {
        let d = bpes[i] - bpes[i - 1];
        let med = median(&diffs);
        if d > cfg.gamma * med.max(cfg.epsilon) && bpes[i] > cfg.beta * cfg.tau * cfg.tau {
            cut = i;
            break;
        }
        diffs.push(d);
    }

    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for (i, (_, g)) in scored.into_iter().enumerate() {
        if i < cut {
            kept.push(g);
        } else {
            discarded.push(g);
        }
    }
    // restore deterministic group order
    kept.sort_by_key(|g| g.group_id);
    discarded.sort_by_key(|g| g.group_id);
    (kept, discarded)
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
