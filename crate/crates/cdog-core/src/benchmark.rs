//! Deterministic synthetic benchmark: a circular camera rig, uniform 3D
//! point sampling, exact projection, per-axis Gaussian pixel noise, view
//! dropout, and batch sweeps over (count, batch, sigma).
//!
//! Every scene is a pure function of the benchmark seed and its
//! (count, batch, sigma) coordinates; regenerating a dataset with the same
//! spec yields byte-identical files.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::geometry::{self, CameraPose, FundamentalCache, GeometryError};
use crate::rng::{derive_seed, Rng};
use crate::scene::{GtPoint, Observation, Scene, SceneError};
use crate::{Mat3, Vec2, Vec3};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("could not place point {0} with the requested minimum separation")]
    SeparationExhausted(usize),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

/// Parameters of the synthetic circular camera rig.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigSpec {
    pub n_cameras: u32,
    /// Circle radius in world units.
    pub radius: f64,
    pub look_at: [f64; 3],
    pub focal_px: f64,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
    /// Max per-camera elevation offset in radians, drawn uniformly.
    pub elevation_jitter: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            n_cameras: 10,
            radius: 500.0,
            look_at: [0.0, 0.0, 0.0],
            focal_px: 800.0,
            principal_point: [640.0, 360.0],
            image_size: [1280, 720],
            elevation_jitter: 0.15,
        }
    }
}

/// Axis-aligned sampling box for ground-truth 3D points.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

/// Default point-sampling region, a cube well inside the rig circle.
pub fn default_bounds() -> Aabb {
    Aabb {
        min: Vec3::new(-100.0, -100.0, -100.0),
        max: Vec3::new(100.0, 100.0, 100.0),
    }
}

/// Sweep definition for a full dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub point_counts: Vec<u32>,
    pub sigmas: Vec<f64>,
    pub batches: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep_views: Option<u32>,
    /// Optional rejection-sampling floor on pairwise epipolar separation
    /// (pixels); excludes near-colinear point pairs when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_separation_px: Option<f64>,
}

/// 1..20 step 1, then 25..130 step 5 (42 counts, 1,915 points per batch).
pub fn default_point_counts() -> Vec<u32> {
    (1..=20).chain((25..=130).step_by(5)).collect()
}

/// 0.0 to 5.0 in steps of 0.25 (21 levels).
pub fn default_sigmas() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.25).collect()
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            point_counts: default_point_counts(),
            sigmas: default_sigmas(),
            batches: 5,
            seed: 0xC0D6,
            keep_views: None,
            min_separation_px: None,
        }
    }
}

/// Evenly spaced cameras on a circle, aimed at `look_at`, with a seeded
/// elevation jitter so centers are not exactly coplanar.
pub fn make_rig(spec: &RigSpec, seed: u64) -> Result<Vec<CameraPose>, BenchmarkError> {
    if spec.n_cameras < 2 {
        return Err(BenchmarkError::InvalidSpec("n_cameras must be >= 2".into()));
    }
    if spec.focal_px <= 0.0 {
        return Err(BenchmarkError::InvalidSpec("focal_px must be > 0".into()));
    }
    let mut rng = Rng::new(derive_seed(seed, &[u64::from_le_bytes(*b"rigspec\0")]));
    let look_at = Vec3::new(spec.look_at[0], spec.look_at[1], spec.look_at[2]);
    let k = Mat3::new(
        spec.focal_px,
        0.0,
        spec.principal_point[0],
        0.0,
        spec.focal_px,
        spec.principal_point[1],
        0.0,
        0.0,
        1.0,
    );
    let mut cams = Vec::with_capacity(spec.n_cameras as usize);
    for m in 0..spec.n_cameras {
        let phi = std::f64::consts::TAU * m as f64 / spec.n_cameras as f64;
        let elev = rng.uniform(-spec.elevation_jitter, spec.elevation_jitter);
        let pos = look_at
            + spec.radius * Vec3::new(phi.cos() * elev.cos(), phi.sin() * elev.cos(), elev.sin());
        let forward = (look_at - pos).normalize();
        let up_world = Vec3::new(0.0, 0.0, 1.0);
        let mut right = forward.cross(&up_world);
        if right.norm() < 1e-9 {
            right = Vec3::new(1.0, 0.0, 0.0);
        }
        right = right.normalize();
        let down = forward.cross(&right);
        let r = geometry::rotation_from_axes(right, down, forward);
        let t = -(r * pos);
        cams.push(CameraPose::new(m, k, r, t)?);
    }
    Ok(cams)
}

fn sample_point(rng: &mut Rng, bounds: &Aabb) -> Vec3 {
    Vec3::new(
        rng.uniform(bounds.min.x, bounds.max.x),
        rng.uniform(bounds.min.y, bounds.max.y),
        rng.uniform(bounds.min.z, bounds.max.z),
    )
}

/// True when `candidate` keeps at least `min_sep` pixels between every
/// epipolar line and every foreign projection, in both directions, against
/// all previously accepted points.
fn separated(
    cache: &FundamentalCache,
    cams: &[CameraPose],
    accepted: &[Vec<Vec2>],
    candidate: &[Vec2],
    min_sep: f64,
) -> Result<bool, GeometryError> {
    for (ai, a) in cams.iter().enumerate() {
        for (bi, b) in cams.iter().enumerate() {
            if ai == bi {
                continue;
            }
            for prev in accepted {
                let d1 = cache.distance(a.view_id, b.view_id, candidate[ai], prev[bi])?;
                let d2 = cache.distance(a.view_id, b.view_id, prev[ai], candidate[bi])?;
                if d1 < min_sep || d2 < min_sep {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Generates one scene: `n_points` uniform in `bounds`, projected to all
/// rig views, per-coordinate Gaussian noise of std `sigma`.
pub fn generate_scene(
    n_points: u32,
    rig: &[CameraPose],
    bounds: &Aabb,
    sigma: f64,
    seed: u64,
    min_separation_px: Option<f64>,
) -> Result<Scene, BenchmarkError> {
    let mut rng = Rng::new(seed);
    let cache = match min_separation_px {
        Some(_) => Some(FundamentalCache::new(rig)?),
        None => None,
    };

    let mut gt_points: Vec<GtPoint> = Vec::with_capacity(n_points as usize);
    let mut exact: Vec<Vec<Vec2>> = Vec::with_capacity(n_points as usize);
    for id in 0..n_points {
        let mut attempts = 0;
        loop {
            let p = sample_point(&mut rng, bounds);
            let projections = rig
                .iter()
                .map(|cam| geometry::project(cam, p))
                .collect::<Result<Vec<_>, _>>()?;
            let ok = match (&cache, min_separation_px) {
                (Some(cache), Some(min_sep)) => {
                    separated(cache, rig, &exact, &projections, min_sep)?
                }
                _ => true,
            };
            if ok {
                gt_points.push(GtPoint { id, xyz: p });
                exact.push(projections);
                break;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(BenchmarkError::SeparationExhausted(id as usize));
            }
        }
    }

    let mut observations = Vec::with_capacity(rig.len() * n_points as usize);
    for (vi, cam) in rig.iter().enumerate() {
        for (pi, projections) in exact.iter().enumerate() {
            let mut xy = projections[vi];
            if sigma > 0.0 {
                xy.x += sigma * rng.gaussian();
                xy.y += sigma * rng.gaussian();
            }
            observations.push(Observation {
                view: cam.view_id,
                index: pi as u32,
                xy,
                gt: Some(pi as u32),
            });
        }
    }

    Ok(Scene {
        cameras: rig.to_vec(),
        observations,
        gt_points: Some(gt_points),
        sigma: Some(sigma),
        seed,
    })
}

/// Retains a uniformly sampled subset of `keep` views; observation labels
/// and view ids are preserved.
pub fn drop_views(scene: &Scene, keep: u32, seed: u64) -> Scene {
    let n = scene.cameras.len() as u32;
    assert!(keep >= 2 && keep <= n, "keep must be in 2..=n_cameras");
    if keep == n {
        return scene.clone();
    }
    let mut rng = Rng::new(seed);
    let mut ids: Vec<u32> = scene.cameras.iter().map(|c| c.view_id).collect();
    // Partial Fisher-Yates: the first `keep` slots are the retained views.
    for i in 0..keep as usize {
        let j = i + rng.index(ids.len() - i);
        ids.swap(i, j);
    }
    let mut kept: Vec<u32> = ids[..keep as usize].to_vec();
    kept.sort_unstable();
    Scene {
        cameras: scene
            .cameras
            .iter()
            .filter(|c| kept.contains(&c.view_id))
            .cloned()
            .collect(),
        observations: scene
            .observations
            .iter()
            .filter(|o| kept.contains(&o.view))
            .cloned()
            .collect(),
        gt_points: scene.gt_points.clone(),
        sigma: scene.sigma,
        seed: scene.seed,
    }
}

/// Coordinates of one scene within a dataset sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub file: String,
    pub count: u32,
    pub batch: u32,
    pub sigma: f64,
    pub seed: u64,
}

/// Dataset index written next to the scene files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub rig: RigSpec,
    pub rig_seed: u64,
    pub scenes: Vec<SceneEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<(), BenchmarkError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization");
        std::fs::write(path, text).map_err(|source| BenchmarkError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchmarkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text).map_err(SceneError::Json)?)
    }
}

/// Scene coordinates for a sweep, with per-scene seeds derived from the
/// spec seed and the (count, batch, sigma) tuple.
pub fn scene_entries(spec: &BenchmarkSpec) -> Vec<SceneEntry> {
    let mut entries = Vec::new();
    for &sigma in &spec.sigmas {
        for &count in &spec.point_counts {
            for batch in 0..spec.batches {
                let seed = derive_seed(
                    spec.seed,
                    &[u64::from(count), u64::from(batch), sigma.to_bits()],
                );
                entries.push(SceneEntry {
                    file: format!("scene_n{count:03}_b{batch}_s{sigma:.2}.json"),
                    count,
                    batch,
                    sigma,
                    seed,
                });
            }
        }
    }
    entries
}

/// Builds the scene for one manifest entry.
pub fn build_scene(
    entry: &SceneEntry,
    rig: &[CameraPose],
    spec: &BenchmarkSpec,
) -> Result<Scene, BenchmarkError> {
    generate_scene(
        entry.count,
        rig,
        &default_bounds(),
        entry.sigma,
        entry.seed,
        spec.min_separation_px,
    )
}

/// Writes the full dataset (scene files plus `manifest.json`) under `out`.
pub fn generate_benchmark(
    spec: &BenchmarkSpec,
    rig_spec: &RigSpec,
    out: &Path,
) -> Result<Manifest, BenchmarkError> {
    if spec.batches < 1 || spec.point_counts.iter().any(|&c| c < 1) {
        return Err(BenchmarkError::InvalidSpec(
            "batches and point counts must be >= 1".into(),
        ));
    }
    if spec.sigmas.iter().any(|&s| s < 0.0) {
        return Err(BenchmarkError::InvalidSpec("sigmas must be >= 0".into()));
    }
    std::fs::create_dir_all(out).map_err(|source| BenchmarkError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let rig_seed = spec.seed;
    let rig = make_rig(rig_spec, rig_seed)?;
    let entries = scene_entries(spec);
    for entry in &entries {
        let mut scene = build_scene(entry, &rig, spec)?;
        if let Some(keep) = spec.keep_views {
            scene = drop_views(&scene, keep, derive_seed(entry.seed, &[0x7669657773]));
        }
        scene.save(&out.join(&entry.file))?;
    }
    let manifest = Manifest {
        format_version: 1,
        rig: rig_spec.clone(),
        rig_seed,
        scenes: entries,
    };
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

/// Returns the dataset path of a manifest entry.
pub fn entry_path(root: &Path, entry: &SceneEntry) -> PathBuf {
    root.join(&entry.file)
}
