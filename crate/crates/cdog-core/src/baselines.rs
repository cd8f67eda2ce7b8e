//! Geometry-only comparison methods sharing the pipeline's input/output
//! contract: greedy merging and connected component analysis (CCA).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::{FundamentalCache, GeometryError};
use crate::graph::AssociationGroup;
use crate::pipeline::{self, AssociationResult, StageTimings};
use crate::scene::{NodeId, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Greedy,
    Cca,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Distance threshold in pixels; must be positive.
    pub tau: f64,
}

pub fn baseline_associate(
    scene: &Scene,
    cfg: &BaselineConfig,
) -> Result<AssociationResult, GeometryError> {
    match cfg.method {
        BaselineMethod::Greedy => greedy_associate(scene, cfg.tau),
        BaselineMethod::Cca => cca_associate(scene, cfg.tau),
    }
}

/// All cross-view node pairs with symmetric epipolar distance below tau,
/// sorted ascending by (distance, node pair).
fn candidate_edges(
    scene: &Scene,
    cache: &FundamentalCache,
    tau: f64,
) -> Result<Vec<(NodeId, NodeId, f64)>, GeometryError> {
    let nodes: Vec<(NodeId, crate::Vec2)> = scene
        .observations
        .iter()
        .map(|o| (o.node(), o.xy))
        .collect();
    let mut edges = Vec::new();
    for (i, (a, pa)) in nodes.iter().enumerate() {
        for (b, pb) in nodes.iter().skip(i + 1) {
            if a.view == b.view {
                continue;
            }
            let d = cache.symmetric_distance(a.view, *pa, b.view, *pb)?;
            if d < tau {
                let (u, v) = if a < b { (*a, *b) } else { (*b, *a) };
                edges.push((u, v, d));
            }
        }
    }
    edges.sort_by(|x, y| x.2.total_cmp(&y.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    Ok(edges)
}

/// Disjoint-set forest over node ids with per-root view multisets, so a
/// merge can be vetoed when both sides observe the same view.
struct UnionFind {
    parent: BTreeMap<NodeId, NodeId>,
    views: BTreeMap<NodeId, BTreeSet<u32>>,
}

impl UnionFind {
    fn new(nodes: impl Iterator<Item = NodeId>) -> Self {
        let mut parent = BTreeMap::new();
        let mut views = BTreeMap::new();
        for n in nodes {
            parent.insert(n, n);
            views.insert(n, BTreeSet::from([n.view]));
        }
        Self { parent, views }
    }

    fn find(&mut self, n: NodeId) -> NodeId {
        let p = self.parent[&n];
        if p == n {
            return n;
        }
        let root = self.find(p);
        self.parent.insert(n, root);
        root
    }

    /// Merges the two sets unless they share a view. Returns whether a
    /// merge happened.
    fn try_union(&mut self, a: NodeId, b: NodeId) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb || !self.views[&ra].is_disjoint(&self.views[&rb]) {
            return false;
        }
        // keep the smaller node id as root for deterministic grouping
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent.insert(drop, keep);
        let moved = self.views.remove(&drop).expect("root views");
        self.views.get_mut(&keep).expect("root views").extend(moved);
        true
    }

    fn groups(mut self) -> Vec<AssociationGroup> {
        let nodes: Vec<NodeId> = self.parent.keys().copied().collect();
        let mut sets: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for n in nodes {
            let root = self.find(n);
            sets.entry(root).or_default().insert(n);
        }
        sets.into_values()
            .enumerate()
            .map(|(i, members)| AssociationGroup::new(i as u32, members))
            .collect()
    }
}

/// Greedy association: repeatedly commit the globally smallest remaining
/// symmetric epipolar distance below tau between nodes of different
/// groups, skipping merges that would put two nodes of one view into the
/// same group. Deterministic: ties break on the lower node pair.
pub fn greedy_associate(scene: &Scene, tau: f64) -> Result<AssociationResult, GeometryError> {
    let t = Instant::now();
    let cache = FundamentalCache::new(&scene.cameras)?;
    let mut uf = UnionFind::new(scene.observations.iter().map(|o| o.node()));
    for (a, b, _) in candidate_edges(scene, &cache, tau)? {
        uf.try_union(a, b);
    }
    let groups = uf.groups();
    let timings = StageTimings {
        init: t.elapsed().as_secs_f64() * 1e3,
        ..Default::default()
    };
    Ok(pipeline::finalize(groups, Vec::new(), timings))
}

/// Connected component analysis: every cross-view pair below tau becomes
/// an edge, connected components become groups. Components holding two
/// nodes of one view are split by dropping their highest-distance edges
/// (ties: highest node pair) until every component is valid.
pub fn cca_associate(scene: &Scene, tau: f64) -> Result<AssociationResult, GeometryError> {
    let t = Instant::now();
    let cache = FundamentalCache::new(&scene.cameras)?;
    let edges = candidate_edges(scene, &cache, tau)?;
    let all_nodes: BTreeSet<NodeId> = scene.observations.iter().map(|o| o.node()).collect();

    // worklist of components as (nodes, edges sorted ascending)
    let mut work: Vec<(BTreeSet<NodeId>, Vec<(NodeId, NodeId, f64)>)> =
        vec![(all_nodes, edges)];
    let mut done: Vec<BTreeSet<NodeId>> = Vec::new();

    while let Some((nodes, mut comp_edges)) = work.pop() {
        let parts = split_components(&nodes, &comp_edges);
        if parts.len() > 1 {
            for part in parts {
                let part_edges: Vec<_> = comp_edges
                    .iter()
                    .filter(|(a, _, _)| part.contains(a))
                    .copied()
                    .collect();
                work.push((part, part_edges));
            }
            continue;
        }
        if one_per_view(&nodes) {
            done.push(nodes);
            continue;
        }
        // Dropping edges in descending order cannot disconnect the
        // component until the bottleneck (the heaviest minimum-spanning-
        // tree edge) goes: everything above it is cycle surplus. Dropping
        // the surplus in one batch keeps this loop near-linear instead of
        // quadratic on dense components.
        if let Some(b) = bottleneck(&nodes, &comp_edges) {
            comp_edges.retain(|e| e.2 <= b);
        }
        comp_edges.pop();
        work.push((nodes, comp_edges));
    }

    let mut groups: Vec<AssociationGroup> = done
        .into_iter()
        .enumerate()
        .map(|(i, members)| AssociationGroup::new(i as u32, members))
        .collect();
    groups.sort_by_key(|g| *g.members.iter().next().expect("non-empty component"));
    let timings = StageTimings {
        init: t.elapsed().as_secs_f64() * 1e3,
        ..Default::default()
    };
    Ok(pipeline::finalize(groups, Vec::new(), timings))
}

/// Weight of the heaviest edge in a minimum spanning tree of the
/// component: the smallest w such that edges of weight <= w still connect
/// it. None when the edges do not span the node set.
fn bottleneck(nodes: &BTreeSet<NodeId>, edges: &[(NodeId, NodeId, f64)]) -> Option<f64> {
    let mut uf = UnionFind::new(nodes.iter().copied());
    // ignore the view bookkeeping; this is plain connectivity
    for (_, views) in uf.views.iter_mut() {
        views.clear();
    }
    let mut remaining = nodes.len().saturating_sub(1);
    for (a, b, w) in edges {
        if uf.try_union(*a, *b) {
            remaining -= 1;
            if remaining == 0 {
                return Some(*w);
            }
        }
    }
    None
}

fn one_per_view(nodes: &BTreeSet<NodeId>) -> bool {
    let mut seen = BTreeSet::new();
    nodes.iter().all(|n| seen.insert(n.view))
}

fn split_components(
    nodes: &BTreeSet<NodeId>,
    edges: &[(NodeId, NodeId, f64)],
) -> Vec<BTreeSet<NodeId>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (a, b, _) in edges {
        adj.entry(*a).or_default().push(*b);
        adj.entry(*b).or_default().push(*a);
    }
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for &m in adj.get(&n).into_iter().flatten() {
                if seen.insert(m) {
                    comp.insert(m);
                    stack.push(m);
                }
            }
        }
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{default_bounds, generate_scene, make_rig, RigSpec};
    use crate::metrics;
    use crate::pipeline::{associate, CdogConfig};

    fn bench_scene(n_pts: u32, sigma: f64, seed: u64) -> Scene {
        let rig = make_rig(&RigSpec::default(), 3).unwrap();
        generate_scene(n_pts, &rig, &default_bounds(), sigma, seed, None).unwrap()
    }

    fn check_partition(result: &AssociationResult, scene: &Scene) {
        let expected: BTreeSet<NodeId> = scene.observations.iter().map(|o| o.node()).collect();
        assert_eq!(result.all_nodes(), expected);
        for g in &result.groups {
            assert!(g.len() >= 2);
            assert!(g.one_per_view());
        }
    }

    #[test]
    fn single_instance_noise_free_is_one_group() {
        let scene = bench_scene(1, 0.0, 1);
        for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
            let r = baseline_associate(&scene, &BaselineConfig { method, tau: 1.0 }).unwrap();
            assert_eq!(r.groups.len(), 1, "{method:?}");
            assert_eq!(r.groups[0].len(), scene.observations.len());
            assert!(r.outliers.is_empty());
            check_partition(&r, &scene);
        }
    }

    #[test]
    fn empty_scene_gives_empty_result() {
        let mut scene = bench_scene(1, 0.0, 2);
        scene.observations.clear();
        for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
            let r = baseline_associate(&scene, &BaselineConfig { method, tau: 1.0 }).unwrap();
            assert!(r.groups.is_empty());
            assert!(r.outliers.is_empty());
        }
    }

    #[test]
    fn vanishing_tau_makes_everything_outliers() {
        // noise keeps every cross-view distance strictly positive
        let scene = bench_scene(5, 3.0, 3);
        for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
            let r = baseline_associate(&scene, &BaselineConfig { method, tau: 1e-12 }).unwrap();
            assert!(r.groups.is_empty(), "{method:?}");
            assert_eq!(r.outliers.len(), scene.observations.len());
        }
    }

    #[test]
    fn well_separated_noise_free_matches_cdog() {
        // sparse scene, min separation on: no ambiguity for any method
        let rig = make_rig(&RigSpec::default(), 3).unwrap();
        let scene =
            generate_scene(8, &rig, &default_bounds(), 0.0, 4, Some(5.0)).unwrap();
        let cdog = associate(&scene, &CdogConfig::default()).unwrap();
        for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
            let r = baseline_associate(&scene, &BaselineConfig { method, tau: 1.0 }).unwrap();
            let member_sets = |res: &AssociationResult| {
                res.groups
                    .iter()
                    .map(|g| g.members.clone())
                    .collect::<Vec<_>>()
            };
            assert_eq!(member_sets(&r), member_sets(&cdog), "{method:?}");
            check_partition(&r, &scene);
        }
    }

    #[test]
    fn greedy_degrades_under_noise_relative_to_cdog() {
        let mut cdog_sum = 0.0;
        let mut greedy_sum = 0.0;
        let n = 20;
        for seed in 0..n {
            let scene = bench_scene(50, 3.0, 1000 + seed);
            let cdog = associate(&scene, &CdogConfig::default()).unwrap();
            let tau = crate::graph::threshold_from_sigma(3.0, 2.0, 1.0);
            let greedy = greedy_associate(&scene, tau).unwrap();
            check_partition(&greedy, &scene);
            cdog_sum += metrics::evaluate(&cdog, &scene, 0.0).unwrap().pg.f1;
            greedy_sum += metrics::evaluate(&greedy, &scene, 0.0).unwrap().pg.f1;
        }
        let (cdog_f1, greedy_f1) = (cdog_sum / n as f64, greedy_sum / n as f64);
        assert!(
            cdog_f1 > greedy_f1 + 0.05,
            "cdog {cdog_f1:.3} vs greedy {greedy_f1:.3}"
        );
    }

    #[test]
    fn cca_merges_dense_scenes_lowering_precision() {
        let scene = bench_scene(130, 1.0, 77);
        let cdog = associate(&scene, &CdogConfig::default()).unwrap();
        let tau = crate::graph::threshold_from_sigma(1.0, 2.0, 1.0);
        let cca = cca_associate(&scene, tau).unwrap();
        check_partition(&cca, &scene);
        let cdog_pg = metrics::evaluate(&cdog, &scene, 0.0).unwrap().pg;
        let cca_pg = metrics::evaluate(&cca, &scene, 0.0).unwrap().pg;
        assert!(
            cca_pg.p < cdog_pg.p,
            "cca pg-p {:.3} vs cdog {:.3}",
            cca_pg.p,
            cdog_pg.p
        );
    }

    #[test]
    fn baselines_are_deterministic() {
        let scene = bench_scene(30, 3.0, 5);
        for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
            let cfg = BaselineConfig { method, tau: 8.49 };
            let a = baseline_associate(&scene, &cfg).unwrap();
            let b = baseline_associate(&scene, &cfg).unwrap();
            assert_eq!(a.groups, b.groups);
            assert_eq!(a.outliers, b.outliers);
        }
    }

    #[test]
    fn partition_invariant_under_noise() {
        for seed in 0..5 {
            let scene = bench_scene(40, 5.0, 50 + seed);
            for method in [BaselineMethod::Greedy, BaselineMethod::Cca] {
                let r =
                    baseline_associate(&scene, &BaselineConfig { method, tau: 14.14 }).unwrap();
                check_partition(&r, &scene);
            }
        }
    }
}
