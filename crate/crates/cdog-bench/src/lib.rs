//! Shared fixtures for the criterion benchmarks.

use cdog_core::benchmark::{default_bounds, generate_scene, make_rig, RigSpec};
use cdog_core::scene::Scene;

/// A default-rig scene with `n_points` instances at the given noise level.
pub fn fixture(n_points: u32, sigma: f64) -> Scene {
    let rig = make_rig(&RigSpec::default(), 3).expect("default rig");
    generate_scene(n_points, &rig, &default_bounds(), sigma, 7, None).expect("scene")
}
