//! Association graph: per-view argmin epipolar edges below a noise-derived
//! threshold, neighborhood-overlap scoring, weak-edge pruning and connected
//! components.

use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::FundamentalCache;
use crate::scene::{NodeId, Scene};

/// Threshold on the epipolar distance of a candidate pair: `alpha * sqrt(2)
/// * sigma`, floored at `tau_min` so exact matches survive at sigma = 0.
pub fn threshold_from_sigma(sigma: f64, alpha: f64, tau_min: f64) -> f64 {
    assert!(sigma >= 0.0 && alpha > 0.0);
    (alpha * std::f64::consts::SQRT_2 * sigma).max(tau_min)
}

/// Directed graph over 2D observations; edges carry epipolar distances.
/// The undirected adjacency (union of both directions) drives overlap
/// scoring and connectivity.
#[derive(Debug, Clone, Default)]
pub struct AssociationGraph {
    nodes: BTreeSet<NodeId>,
    edges: BTreeMap<(NodeId, NodeId), f64>,
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl AssociationGraph {
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Directed edges with their epipolar-distance weights.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.nodes.insert(n);
        self.adj.entry(n).or_default();
    }

    pub fn add_edge(&mut self, from: NodeId, to: NodeId, weight: f64) {
        assert_ne!(from.view, to.view, "edges must cross views");
        assert!(weight >= 0.0);
        self.add_node(from);
        self.add_node(to);
        self.edges.insert((from, to), weight);
        self.adj.get_mut(&from).unwrap().insert(to);
        self.adj.get_mut(&to).unwrap().insert(from);
    }

    /// True when at least one directional edge links `u` and `v`.
    pub fn connected(&self, u: NodeId, v: NodeId) -> bool {
        self.adj.get(&u).is_some_and(|n| n.contains(&v))
    }

    fn remove_undirected(&mut self, u: NodeId, v: NodeId) {
        self.edges.remove(&(u, v));
        self.edges.remove(&(v, u));
        if let Some(n) = self.adj.get_mut(&u) {
            n.remove(&v);
        }
        if let Some(n) = self.adj.get_mut(&v) {
            n.remove(&u);
        }
    }

    /// Undirected neighbor pairs `(u, v)` with `u < v`.
    pub fn undirected_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let mut pairs = BTreeSet::new();
        for &(a, b) in self.edges.keys() {
            pairs.insert(if a < b { (a, b) } else { (b, a) });
        }
        pairs.into_iter().collect()
    }
}

/// A set of nodes hypothesized to image one 3D point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationGroup {
    pub group_id: u32,
    pub members: BTreeSet<NodeId>,
}

impl AssociationGroup {
    pub fn new(group_id: u32, members: BTreeSet<NodeId>) -> Self {
        Self { group_id, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Isolated node kept out of any real group.
    pub fn is_singleton(&self) -> bool {
        self.members.len() == 1
    }

    /// True when no view contributes more than one member.
    pub fn one_per_view(&self) -> bool {
        let views: BTreeSet<u32> = self.members.iter().map(|n| n.view).collect();
        views.len() == self.members.len()
    }
}

/// Builds the initial graph: for every node and every other view, a
/// directional edge to the argmin-epipolar-distance node in that view, kept
/// only when the distance is strictly below `tau`. Ties break to the lowest
/// target index.
pub fn init_graph(scene: &Scene, cache: &FundamentalCache, tau: f64) -> AssociationGraph {
    let mut g = AssociationGraph::default();
    let views = scene.view_ids();
    let per_view: BTreeMap<u32, Vec<&crate::scene::Observation>> = views
        .iter()
        .map(|&v| (v, scene.observations_in_view(v)))
        .collect();

    for obs in &scene.observations {
        g.add_node(obs.node());
    }

    for &m in &views {
        for &mp in &views {
            if m == mp {
                continue;
            }
            let Ok(f) = cache.line_map(m, mp) else { continue };
            for src in &per_view[&m] {
                let Ok(line) = crate::geometry::epipolar_line(f, src.xy) else {
                    continue; // source sits on the epipole
                };
                let mut best: Option<(f64, NodeId)> = None;
                for dst in &per_view[&mp] {
                    let d = crate::geometry::epipolar_distance(&line, dst.xy);
                    // candidates are ordered by index, so strict `<` keeps
                    // the lowest-index argmin on ties
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, dst.node()));
                    }
                }
                if let Some((d, target)) = best {
                    if d < tau {
                        g.add_edge(src.node(), target, d);
                    }
                }
            }
        }
    }
    g
}

/// Szymkiewicz-Simpson-style overlap of closed neighborhoods, with the max
/// cardinality in the denominator: `|N[u] ∩ N[v]| / max(|N[u]|, |N[v]|)`.
pub fn overlap_score(g: &AssociationGraph, u: NodeId, v: NodeId) -> f64 {
    let nu = closed_neighborhood(g, u);
    let nv = closed_neighborhood(g, v);
    let inter = nu.intersection(&nv).count();
    inter as f64 / nu.len().max(nv.len()) as f64
}

fn closed_neighborhood(g: &AssociationGraph, n: NodeId) -> BTreeSet<NodeId> {
    let mut set: BTreeSet<NodeId> = g.adj.get(&n).cloned().unwrap_or_default();
    set.insert(n);
    set
}

/// Removes every undirected edge whose overlap score is `<= delta`. All
/// scores are computed on a frozen snapshot of the input graph, then the
/// weak edges are dropped in one batch, so the result is independent of
/// iteration order.
#[must_use]
pub fn prune_weak_edges(g: &AssociationGraph, delta: f64) -> AssociationGraph {
    assert!(delta > 0.0 && delta < 1.0);
    let weak: Vec<(NodeId, NodeId)> = g
        .undirected_pairs()
        .into_iter()
        .filter(|&(u, v)| overlap_score(g, u, v) <= delta)
        .collect();
    let mut out = g.clone();
    for (u, v) in weak {
        out.remove_undirected(u, v);
    }
    out
}

/// Partitions nodes by undirected connectivity. Groups are ordered by their
/// smallest member; isolated nodes come back as singleton groups.
pub fn connected_components(g: &AssociationGraph) -> Vec<AssociationGroup> {
    let mut visited = BTreeSet::new();
    let mut groups = Vec::new();
    for &start in &g.nodes {
        if visited.contains(&start) {
            continue;
        }
        let mut members = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if !visited.insert(n) {
                continue;
            }
            members.insert(n);
            if let Some(neigh) = g.adj.get(&n) {
                stack.extend(neigh.iter().copied());
            }
        }
        groups.push(members);
    }
    // BTreeSet iteration makes `groups` already ordered by smallest member.
    groups
        .into_iter()
        .enumerate()
        .map(|(i, members)| AssociationGroup::new(i as u32, members))
        .collect()
}
