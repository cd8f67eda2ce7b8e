//! End-to-end association pipeline: threshold selection, graph
//! initialization, weak-edge pruning, group refinement and final
//! constraint enforcement, plus 3D reconstruction of the result.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::{self, CameraPose, FundamentalCache, GeometryError};
use crate::graph::{self, AssociationGroup};
use crate::refine::{self, GapConfig};
use crate::scene::{NodeId, Scene};
use crate::{Vec2, Vec3};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("association requires at least two views, scene has {0}")]
    NotEnoughViews(usize),
    #[error("geometry error: {0}")]
    Geometry(#[from] GeometryError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Tuning knobs of the four pipeline stages.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CdogConfig {
    /// Detection noise in pixels. Zero means unknown: the scene's recorded
    /// sigma is used when present, otherwise it is estimated.
    pub sigma: f64,
    /// Edge threshold scale: tau = tau_alpha * sqrt(2) * sigma.
    pub tau_alpha: f64,
    /// Lower bound on the edge threshold in pixels.
    pub tau_min: f64,
    /// Neighborhood-overlap cutoff; edges with score <= delta are pruned.
    pub delta: f64,
    /// IQR multiplier for per-node BPE outlier removal.
    pub iqr_alpha: f64,
    pub gap_gamma: f64,
    pub gap_beta: f64,
    pub gap_epsilon: f64,
    /// Disables the error-group gap filter when false.
    pub gap_enabled: bool,
}

impl Default for CdogConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            tau_alpha: 2.0,
            tau_min: 1.0,
            delta: 0.5,
            iqr_alpha: 2.0,
            gap_gamma: 10.0,
            gap_beta: 2.0,
            gap_epsilon: 1e-6,
            gap_enabled: true,
        }
    }
}

impl CdogConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [
            ("tau_alpha", self.tau_alpha),
            ("tau_min", self.tau_min),
            ("iqr_alpha", self.iqr_alpha),
            ("gap_gamma", self.gap_gamma),
            ("gap_beta", self.gap_beta),
            ("gap_epsilon", self.gap_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(PipelineError::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.sigma < 0.0 {
            return Err(PipelineError::InvalidConfig(format!(
                "sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(PipelineError::InvalidConfig(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Wall-clock milliseconds spent in each pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub init: f64,
    pub prune: f64,
    pub iqr: f64,
    pub gap: f64,
}

impl StageTimings {
    pub fn total(&self) -> f64 {
        self.init + self.prune + self.iqr + self.gap
    }
}

/// Final grouping: groups and leftover outlier nodes partition the input
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub groups: Vec<AssociationGroup>,
    pub outliers: Vec<NodeId>,
    pub timings: StageTimings,
}

#[derive(Serialize, Deserialize)]
struct MemberJson {
    view: u32,
    index: u32,
}

#[derive(Serialize, Deserialize)]
struct GroupJson {
    id: u32,
    members: Vec<MemberJson>,
}

#[derive(Serialize, Deserialize)]
struct ResultJson {
    groups: Vec<GroupJson>,
    outliers: Vec<MemberJson>,
    timings_ms: StageTimings,
}

impl From<NodeId> for MemberJson {
    fn from(n: NodeId) -> Self {
        Self {
            view: n.view,
            index: n.index,
        }
    }
}

impl AssociationResult {
    pub fn to_json(&self) -> Result<String, PipelineError> {
        let json = ResultJson {
            groups: self
                .groups
                .iter()
                .map(|g| GroupJson {
                    id: g.group_id,
                    members: g.members.iter().copied().map(MemberJson::from).collect(),
                })
                .collect(),
            outliers: self.outliers.iter().copied().map(MemberJson::from).collect(),
            timings_ms: self.timings,
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let json: ResultJson = serde_json::from_str(text)?;
        Ok(Self {
            groups: json
                .groups
                .into_iter()
                .map(|g| {
                    AssociationGroup::new(
                        g.id,
                        g.members
                            .into_iter()
                            .map(|m| NodeId::new(m.view, m.index))
                            .collect(),
                    )
                })
                .collect(),
            outliers: json
                .outliers
                .into_iter()
                .map(|m| NodeId::new(m.view, m.index))
                .collect(),
            timings: json.timings_ms,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PipelineError> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// All nodes referenced by the result, groups and outliers combined.
    pub fn all_nodes(&self) -> BTreeSet<NodeId> {
        let mut all: BTreeSet<NodeId> = self.outliers.iter().copied().collect();
        for g in &self.groups {
            all.extend(g.members.iter().copied());
        }
        all
    }
}

fn resolve_sigma(scene: &Scene, cfg: &CdogConfig) -> f64 {
    if cfg.sigma > 0.0 {
        return cfg.sigma;
    }
    match scene.sigma {
        Some(s) if s > 0.0 => s,
        Some(_) => 0.0, // recorded as exactly noise-free
        None => estimate_sigma(scene),
    }
}

/// The pixel threshold the pipeline would use on this scene: derived from
/// the configured sigma, the scene's recorded sigma, or an estimate, in
/// that order. Exposed so comparison methods run at the same operating
/// point.
pub fn resolve_threshold(scene: &Scene, cfg: &CdogConfig) -> f64 {
    graph::threshold_from_sigma(resolve_sigma(scene, cfg), cfg.tau_alpha, cfg.tau_min)
}

fn ms(from: Instant) -> f64 {
    from.elapsed().as_secs_f64() * 1e3
}

/// Runs the full association pipeline on one scene.
pub fn associate(scene: &Scene, cfg: &CdogConfig) -> Result<AssociationResult, PipelineError> {
    cfg.validate()?;
    let n_views = scene.view_ids().len();
    if n_views < 2 {
        return Err(PipelineError::NotEnoughViews(n_views));
    }

    let sigma = resolve_sigma(scene, cfg);
    let tau = graph::threshold_from_sigma(sigma, cfg.tau_alpha, cfg.tau_min);
    log::debug!("associate: sigma={sigma:.4} tau={tau:.4}");
    let obs = scene.observation_map();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let cache = FundamentalCache::new(&scene.cameras)?;
    let g = graph::init_graph(scene, &cache, tau);
    timings.init = ms(t);

    let t = Instant::now();
    let g = graph::prune_weak_edges(&g, cfg.delta);
    let components = graph::connected_components(&g);
    timings.prune = ms(t);

    let t = Instant::now();
    let mut outliers: Vec<NodeId> = Vec::new();
    let mut groups: Vec<AssociationGroup> = Vec::new();
    for group in components {
        if group.len() < 3 {
            groups.push(group);
            continue;
        }
        let (kept, removed) = refine::remove_outliers(&group, &scene.cameras, &obs, cfg.iqr_alpha);
        outliers.extend(removed);
        groups.push(kept);
    }
    timings.iqr = ms(t);

    if cfg.gap_enabled {
        let t = Instant::now();
        let (candidates, small): (Vec<_>, Vec<_>) = groups.into_iter().partition(|g| g.len() >= 2);
        let gap = GapConfig {
            gamma: cfg.gap_gamma,
            beta: cfg.gap_beta,
            epsilon: cfg.gap_epsilon,
            tau,
        };
        let (kept, discarded) = refine::remove_error_groups(candidates, &scene.cameras, &obs, &gap);
        for g in discarded {
            outliers.extend(g.members);
        }
        groups = kept;
        groups.extend(small);
        timings.gap = ms(t);
    }

    let result = finalize(groups, outliers, timings);

    debug_assert_eq!(
        result.all_nodes(),
        scene.observations.iter().map(|o| o.node()).collect(),
        "groups and outliers must partition the observations"
    );

    Ok(result)
}

/// Final constraint enforcement shared by all associators: emitted groups
/// span >= 2 views with one node per view; everything else degrades to
/// outliers. Groups are ordered and renumbered by their smallest member.
pub(crate) fn finalize(
    groups: Vec<AssociationGroup>,
    mut outliers: Vec<NodeId>,
    timings: StageTimings,
) -> AssociationResult {
    let mut emitted: Vec<AssociationGroup> = Vec::new();
    for g in groups {
        if g.len() < 2 || !g.one_per_view() {
            outliers.extend(g.members);
        } else {
            emitted.push(g);
        }
    }
    emitted.sort_by_key(|g| *g.members.iter().next().expect("non-empty group"));
    for (i, g) in emitted.iter_mut().enumerate() {
        g.group_id = i as u32;
    }
    outliers.sort();
    outliers.dedup();

    AssociationResult {
        groups: emitted,
        outliers,
        timings,
    }
}

/// One triangulated association group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructedPoint {
    pub group_id: u32,
    pub point: Vec3,
    /// Mean squared back-projection error over the group's views.
    pub bpe: f64,
}

/// Triangulates every group of a result over all of its members.
/// Degenerate groups are skipped and logged, never fatal.
pub fn reconstruct(result: &AssociationResult, cams: &[CameraPose]) -> Vec<ReconstructedPoint> {
    reconstruct_groups(&result.groups, cams, &BTreeMap::new())
}

/// Same as [`reconstruct`] but with explicit observations; `obs` wins over
/// nothing — callers supply the scene's observation map.
pub fn reconstruct_with_obs(
    result: &AssociationResult,
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
) -> Vec<ReconstructedPoint> {
    reconstruct_groups(&result.groups, cams, obs)
}

fn reconstruct_groups(
    groups: &[AssociationGroup],
    cams: &[CameraPose],
    obs: &BTreeMap<NodeId, Vec2>,
) -> Vec<ReconstructedPoint> {
    let by_view: BTreeMap<u32, &CameraPose> = cams.iter().map(|c| (c.view_id, c)).collect();
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let members: Vec<NodeId> = g.members.iter().copied().collect();
        let (mut g_cams, mut g_pts) = (Vec::new(), Vec::new());
        for n in &members {
            let (Some(cam), Some(&p)) = (by_view.get(&n.view), obs.get(n)) else {
                continue;
            };
            g_cams.push(*cam);
            g_pts.push(p);
        }
        if g_cams.len() < 2 {
            log::warn!("group {} lacks observations, skipped", g.group_id);
            continue;
        }
        match geometry::triangulate(&g_cams, &g_pts) {
            Ok(point) => {
                let bpe = geometry::back_projection_error(&g_cams, &g_pts, point).unwrap_or(f64::NAN);
                out.push(ReconstructedPoint {
                    group_id: g.group_id,
                    point,
                    bpe,
                });
            }
            Err(e) => log::warn!("group {} degenerate: {e}", g.group_id),
        }
    }
    out
}

/// Pixel-noise estimate from cross-view correspondences.
///
/// Candidate pairs are gated by a generous fixed epipolar distance in both
/// directions, triangulated, and verified by back-projection: a candidate
/// counts only when a supermajority of the remaining views has an
/// observation within a density-adaptive radius of the projection. The
/// verified pairs' epipolar residuals follow a half-normal law with scale
/// sigma * sqrt(2), so `1.4826 * median / sqrt(2)` recovers sigma. The
/// verification step keeps the sample nearly free of the selection bias an
/// argmin-based pairing would impose in dense scenes.
pub fn estimate_sigma(scene: &Scene) -> f64 {
    /// Epipolar gate in pixels; clips only the extreme tail up to sigma = 5.
    const GATE: f64 = 20.0;
    /// Fraction of the per-view median nearest-neighbor spacing used as the
    /// verification radius.
    const RADIUS_FACTOR: f64 = 0.4;
    const RADIUS_MIN: f64 = 3.0;

    let views = scene.view_ids();
    if views.len() < 2 {
        return 0.0;
    }
    let Ok(cache) = FundamentalCache::new(&scene.cameras) else {
        return 0.0;
    };
    let by_view: Vec<(u32, Vec<(NodeId, Vec2)>)> = views
        .iter()
        .map(|&v| {
            (
                v,
                scene
                    .observations_in_view(v)
                    .into_iter()
                    .map(|o| (o.node(), o.xy))
                    .collect(),
            )
        })
        .collect();
    let cams: BTreeMap<u32, &CameraPose> =
        scene.cameras.iter().map(|c| (c.view_id, c)).collect();

    let nn_median = |pts: &[(NodeId, Vec2)]| -> f64 {
        if pts.len() < 2 {
            return f64::INFINITY;
        }
        let mut nns: Vec<f64> = pts
            .iter()
            .map(|&(n, p)| {
                pts.iter()
                    .filter(|&&(m, _)| m != n)
                    .map(|&(_, q)| (p - q).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        nns.sort_by(|x, y| x.partial_cmp(y).unwrap());
        nns[nns.len() / 2]
    };
    let radii: Vec<f64> = by_view
        .iter()
        .map(|(_, o)| (RADIUS_FACTOR * nn_median(o)).max(RADIUS_MIN))
        .collect();

    let mut residuals: Vec<f64> = Vec::new();
    for i in 0..by_view.len() {
        for j in (i + 1)..by_view.len() {
            let (a, ref oa) = by_view[i];
            let (b, ref ob) = by_view[j];
            for &(_, pa) in oa {
                for &(_, pb) in ob {
                    let Ok(d_ab) = cache.distance(a, b, pa, pb) else {
                        continue;
                    };
                    if d_ab >= GATE {
                        continue;
                    }
                    let Ok(d_ba) = cache.distance(b, a, pb, pa) else {
                        continue;
                    };
                    if d_ba >= GATE {
                        continue;
                    }
                    let Ok(x) = geometry::triangulate(&[cams[&a], cams[&b]], &[pa, pb]) else {
                        continue;
                    };
                    let mut ok = 0usize;
                    let mut tot = 0usize;
                    for (k, &(c, ref oc)) in by_view.iter().enumerate() {
                        if c == a || c == b || oc.is_empty() {
                            continue;
                        }
                        tot += 1;
                        let Ok(proj) = geometry::project(cams[&c], x) else {
                            continue;
                        };
                        let nearest = oc
                            .iter()
                            .map(|&(_, q)| (q - proj).norm())
                            .fold(f64::INFINITY, f64::min);
                        if nearest < radii[k] {
                            ok += 1;
                        }
                    }
                    // 2-view scenes have no third-view evidence; accept on
                    // the epipolar gate alone
                    if tot == 0 || ok * 3 > tot * 2 {
                        residuals.push(d_ab);
                        residuals.push(d_ba);
                    }
                }
            }
        }
    }
    if residuals.is_empty() {
        return 0.0;
    }
    residuals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = residuals.len();
    let med = if n % 2 == 1 {
        residuals[n / 2]
    } else {
        0.5 * (residuals[n / 2 - 1] + residuals[n / 2])
    };
    1.4826 * med / std::f64::consts::SQRT_2
}
