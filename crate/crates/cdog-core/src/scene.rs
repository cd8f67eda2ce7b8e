//! Scene container and its JSON schema: calibrated cameras, per-view 2D
//! observations and optional ground truth (3D points plus per-observation
//! labels).

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

use crate::geometry::{CameraPose, GeometryError};
use crate::{Mat3, Vec2, Vec3};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scene json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    FormatVersion(u32),
    #[error("invalid camera {view}: {source}")]
    InvalidCamera { view: u32, source: GeometryError },
    #[error("observation references unknown view {0}")]
    UnknownView(u32),
    #[error("duplicate observation id (view {0}, index {1})")]
    DuplicateObservation(u32, u32),
    #[error("non-finite observation coordinates (view {0}, index {1})")]
    NonFinite(u32, u32),
    #[error("scene has no ground-truth labels")]
    MissingGroundTruth,
}

/// Identity of one 2D observation: `(view, index within view)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct NodeId {
    pub view: u32,
    pub index: u32,
}

impl NodeId {
    pub fn new(view: u32, index: u32) -> Self {
        Self { view, index }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.view, self.index)
    }
}

/// A single detected 2D point with optional ground-truth instance label.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub view: u32,
    pub index: u32,
    pub xy: Vec2,
    pub gt: Option<u32>,
}

impl Observation {
    pub fn node(&self) -> NodeId {
        NodeId::new(self.view, self.index)
    }
}

/// Ground-truth 3D point with its instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct GtPoint {
    pub id: u32,
    pub xyz: Vec3,
}

/// One multi-camera frame: cameras, observations and optional ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cameras: Vec<CameraPose>,
    pub observations: Vec<Observation>,
    pub gt_points: Option<Vec<GtPoint>>,
    /// Injected noise std in pixels, when known from generation metadata.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl Scene {
    pub fn view_ids(&self) -> Vec<u32> {
        self.cameras.iter().map(|c| c.view_id).collect()
    }

    pub fn camera(&self, view: u32) -> Option<&CameraPose> {
        self.cameras.iter().find(|c| c.view_id == view)
    }

    /// Observations of one view, ordered by index.
    pub fn observations_in_view(&self, view: u32) -> Vec<&Observation> {
        let mut obs: Vec<&Observation> =
            self.observations.iter().filter(|o| o.view == view).collect();
        obs.sort_by_key(|o| o.index);
        obs
    }

    /// Pixel-coordinate lookup keyed by node id.
    pub fn observation_map(&self) -> BTreeMap<NodeId, Vec2> {
        self.observations.iter().map(|o| (o.node(), o.xy)).collect()
    }

    /// Ground-truth label lookup; error when any observation is unlabeled.
    pub fn label_map(&self) -> Result<BTreeMap<NodeId, u32>, SceneError> {
        self.observations
            .iter()
            .map(|o| o.gt.map(|g| (o.node(), g)).ok_or(SceneError::MissingGroundTruth))
            .collect()
    }

    pub fn gt_point(&self, id: u32) -> Option<&GtPoint> {
        self.gt_points.as_ref()?.iter().find(|p| p.id == id)
    }

    /// Number of distinct ground-truth instances present in the labels.
    pub fn gt_instance_count(&self) -> usize {
        self.observations
            .iter()
            .filter_map(|o| o.gt)
            .collect::<BTreeSet<_>>()
            .len()
    }

    fn validate(&self) -> Result<(), SceneError> {
        let views: BTreeSet<u32> = self.cameras.iter().map(|c| c.view_id).collect();
        let mut seen = BTreeSet::new();
        for o in &self.observations {
            if !views.contains(&o.view) {
                return Err(SceneError::UnknownView(o.view));
            }
            if !o.xy.x.is_finite() || !o.xy.y.is_finite() {
                return Err(SceneError::NonFinite(o.view, o.index));
            }
            if !seen.insert((o.view, o.index)) {
                return Err(SceneError::DuplicateObservation(o.view, o.index));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SceneJson::from(self)).expect("scene serialization")
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let raw: SceneJson = serde_json::from_str(text)?;
        let scene = Scene::try_from(raw)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.to_json()).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    id: u32,
    #[serde(rename = "K")]
    k: [[f64; 3]; 3],
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    #[serde(rename = "T")]
    t: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct ObservationJson {
    view: u32,
    index: u32,
    xy: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct GtPointJson {
    id: u32,
    xyz: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SceneJson {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    seed: u64,
    cameras: Vec<CameraJson>,
    observations: Vec<ObservationJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_points: Option<Vec<GtPointJson>>,
}

fn mat3_to_rows(m: &Mat3) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m[(i, j)];
        }
    }
    out
}

fn rows_to_mat3(rows: &[[f64; 3]; 3]) -> Mat3 {
    Mat3::new(
        rows[0][0], rows[0][1], rows[0][2], rows[1][0], rows[1][1], rows[1][2], rows[2][0],
        rows[2][1], rows[2][2],
    )
}

impl From<&Scene> for SceneJson {
    fn from(s: &Scene) -> Self {
        SceneJson {
            format_version: FORMAT_VERSION,
            sigma: s.sigma,
            seed: s.seed,
            cameras: s
                .cameras
                .iter()
                .map(|c| CameraJson {
                    id: c.view_id,
                    k: mat3_to_rows(&c.k),
                    r: mat3_to_rows(&c.r),
                    t: [c.t.x, c.t.y, c.t.z],
                })
                .collect(),
            observations: s
                .observations
                .iter()
                .map(|o| ObservationJson {
                    view: o.view,
                    index: o.index,
                    xy: [o.xy.x, o.xy.y],
                    gt: o.gt,
                })
                .collect(),
            gt_points: s.gt_points.as_ref().map(|pts| {
                pts.iter()
                    .map(|p| GtPointJson {
                        id: p.id,
                        xyz: [p.xyz.x, p.xyz.y, p.xyz.z],
                    })
                    .collect()
            }),
        }
    }
}

impl TryFrom<SceneJson> for Scene {
    type Error = SceneError;

    fn try_from(raw: SceneJson) -> Result<Self, SceneError> {
        if raw.format_version != FORMAT_VERSION {
            return Err(SceneError::FormatVersion(raw.format_version));
        }
        let cameras = raw
            .cameras
            .into_iter()
            .map(|c| {
                CameraPose::new(
                    c.id,
                    rows_to_mat3(&c.k),
                    rows_to_mat3(&c.r),
                    Vec3::new(c.t[0], c.t[1], c.t[2]),
                )
                .map_err(|source| SceneError::InvalidCamera { view: c.id, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Scene {
            cameras,
            observations: raw
                .observations
                .into_iter()
                .map(|o| Observation {
                    view: o.view,
                    index: o.index,
                    xy: Vec2::new(o.xy[0], o.xy[1]),
                    gt: o.gt,
                })
                .collect(),
            gt_points: raw.gt_points.map(|pts| {
                pts.into_iter()
                    .map(|p| GtPoint {
                        id: p.id,
                        xyz: Vec3::new(p.xyz[0], p.xyz[1], p.xyz[2]),
                    })
                    .collect()
            }),
            sigma: raw.sigma,
            seed: raw.seed,
        })
    }
}
