//! Sensor topology, cloudlet partitioning and cross-cloudlet dependency closures.
//!
//! Nodes are addressed by their dense index into [`WeightedGraph::node_ids`].
//! Hop counting always uses the unweighted support of the adjacency matrix:
//! an edge exists iff its weight is strictly positive.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar coordinate in meters.
pub type Point = [f64; 2];

/// Gaussian distance kernel with a hard cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub sigma_m: f64,
    pub cutoff_m: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma_m: 10_000.0,
            cutoff_m: 20_000.0,
        }
    }
}

impl KernelConfig {
    pub fn weight(&self, distance_m: f64) -> f64 {
        if distance_m.is_finite() && distance_m <= self.cutoff_m {
            (-(distance_m * distance_m) / (self.sigma_m * self.sigma_m)).exp()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    node_ids: Vec<String>,
    positions: Option<Vec<Point>>,
    adjacency: DMatrix<f64>,
    /// Road distances in meters, `f64::INFINITY` where unknown.
    distances: DMatrix<f64>,
}

/// Assemble a symmetric distance matrix from `(from, to, meters)` records.
///
/// A pair listed in only one direction is mirrored. A pair listed in both
/// directions with different values is rejected.
pub fn distance_matrix<'a, I>(node_ids: &[String], records: I) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = (&'a str, &'a str, f64)>,
{
    let n = node_ids.len();
    let index = |id: &str| {
        node_ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))
    };
    let mut d = DMatrix::from_element(n, n, f64::INFINITY);
    for i in 0..n {
        d[(i, i)] = 0.0;
    }
    for (from, to, meters) in records {
        let (i, j) = (index(from)?, index(to)?);
        if i == j {
            continue;
        }
        if !(meters >= 0.0) || !meters.is_finite() {
            return Err(Error::InvalidDistance {
                from: from.to_string(),
                to: to.to_string(),
                value: meters,
            });
        }
        let existing = d[(j, i)];
        if existing.is_finite() && !close(existing, meters) {
            return Err(Error::AsymmetricDistance {
                from: from.to_string(),
                to: to.to_string(),
                forward: meters,
                backward: existing,
            });
        }
        d[(i, j)] = meters;
        d[(j, i)] = meters;
    }
    Ok(d)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Gaussian-kernel adjacency: `W[i][j] = exp(-d²/σ²)` when `d <= cutoff`, else 0.
pub fn build_adjacency(
    node_ids: Vec<String>,
    distances: &DMatrix<f64>,
    kernel: KernelConfig,
) -> Result<WeightedGraph> {
    let n = node_ids.len();
    if distances.nrows() != n || distances.ncols() != n {
        return Err(Error::Shape(format!(
            "distance matrix is {}x{}, expected {n}x{n}",
            distances.nrows(),
            distances.ncols()
        )));
    }
    if !(kernel.sigma_m > 0.0) || !(kernel.cutoff_m > 0.0) {
        return Err(Error::Config(format!(
            "kernel sigma and cutoff must be positive, got {} and {}",
            kernel.sigma_m, kernel.cutoff_m
        )));
    }
    let mut adjacency = DMatrix::zeros(n, n);
    let mut recorded = distances.clone();
    for i in 0..n {
        recorded[(i, i)] = 0.0;
        for j in (i + 1)..n {
            let (a, b) = (distances[(i, j)], distances[(j, i)]);
            if a.is_nan() || b.is_nan() || a < 0.0 || b < 0.0 {
                return Err(Error::InvalidDistance {
                    from: node_ids[i].clone(),
                    to: node_ids[j].clone(),
                    value: if a.is_nan() || a < 0.0 { a } else { b },
                });
            }
            if a != b && !(a.is_finite() && b.is_finite() && close(a, b)) {
                return Err(Error::AsymmetricDistance {
                    from: node_ids[i].clone(),
                    to: node_ids[j].clone(),
                    forward: a,
                    backward: b,
                });
            }
            let w = kernel.weight(a);
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
        }
    }
    Ok(WeightedGraph {
        node_ids,
        positions: None,
        adjacency,
        distances: recorded,
    })
}

impl WeightedGraph {
    /// Graph from an explicit weight matrix. Distances are recovered from the
    /// weights through the inverse of the default kernel so that every edge
    /// carries a finite distance.
    pub fn from_adjacency(node_ids: Vec<String>, adjacency: DMatrix<f64>) -> Result<Self> {
        let n = node_ids.len();
        if adjacency.nrows() != n || adjacency.ncols() != n {
            return Err(Error::Shape(format!(
                "adjacency is {}x{}, expected {n}x{n}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        let sigma = KernelConfig::default().sigma_m;
        let mut distances = DMatrix::from_element(n, n, f64::INFINITY);
        for i in 0..n {
            distances[(i, i)] = 0.0;
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Shape(format!("non-zero self loop at node {i}")));
            }
            for j in 0..n {
                let w = adjacency[(i, j)];
                if !(0.0..=1.0).contains(&w) || w != adjacency[(j, i)] {
                    return Err(Error::Shape(format!(
                        "weight at ({i}, {j}) must be symmetric and in [0, 1], got {w}"
                    )));
                }
                if w > 0.0 && i != j {
                    distances[(i, j)] = sigma * (-w.ln()).max(0.0).sqrt();
                }
            }
        }
        Ok(Self {
            node_ids,
            positions: None,
            adjacency,
            distances,
        })
    }

    /// Unit-weight graph over `n` nodes named `"0".."n-1"`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut w = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::UnknownNode(i.max(j).to_string()));
            }
            if i != j {
                w[(i, j)] = 1.0;
                w[(j, i)] = 1.0;
            }
        }
        Self::from_adjacency((0..n).map(|i| i.to_string()).collect(), w)
    }

    pub fn with_positions(mut self, positions: Vec<Point>) -> Result<Self> {
        if positions.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} positions for {} nodes",
                positions.len(),
                self.len()
            )));
        }
        self.positions = Some(positions);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|x| x == id)
    }

    pub fn positions(&self) -> Option<&[Point]> {
        self.positions.as_deref()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn distance(&self, i: usize, j: usize) -> Option<f64> {
        let d = self.distances[(i, j)];
        d.is_finite().then_some(d)
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    pub fn edge_count(&self) -> usize {
        let n = self.len();
        (0..n)
            .map(|i| ((i + 1)..n).filter(|&j| self.adjacency[(i, j)] > 0.0).count())
            .sum()
    }

    /// Checks the structural invariants; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        for i in 0..n {
            if self.adjacency[(i, i)] != 0.0 {
                return Err(Error::Shape(format!("self loop at {i}")));
            }
            for j in 0..n {
                let w = self.adjacency[(i, j)];
                if w != self.adjacency[(j, i)] || !(0.0..=1.0).contains(&w) {
                    return Err(Error::Shape(format!("bad weight at ({i}, {j})")));
                }
                if w > 0.0 && self.distance(i, j).is_none() {
                    return Err(Error::Shape(format!("edge ({i}, {j}) without distance")));
                }
            }
        }
        Ok(())
    }
}

/// All nodes reachable from `sources` within `hops` edges, sources included.
pub fn hop_ball(graph: &WeightedGraph, sources: &BTreeSet<usize>, hops: usize) -> BTreeSet<usize> {
    let mut depth = vec![usize::MAX; graph.len()];
    let mut queue = VecDeque::new();
    for &s in sources {
        depth[s] = 0;
        queue.push_back(s);
    }
    while let Some(u) = queue.pop_front() {
        if depth[u] == hops {
            continue;
        }
        for v in graph.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..graph.len()).filter(|&v| depth[v] != usize::MAX).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudletPartition {
    assignment: Vec<usize>,
    centers: Vec<Point>,
    radius_m: Option<f64>,
    l_hops: usize,
    dependencies: Vec<BTreeSet<usize>>,
    cloudlet_adjacency: Vec<BTreeSet<usize>>,
}

/// Assign every node to its nearest center; ties go to the lowest cloudlet id.
pub fn partition_by_radius(
    graph: &WeightedGraph,
    centers: &[Point],
    radius_m: f64,
) -> Result<CloudletPartition> {
    if centers.is_empty() {
        return Err(Error::Config("no cloudlet centers given".into()));
    }
    let positions = graph.positions().ok_or(Error::MissingPositions)?;
    let mut assignment = Vec::with_capacity(graph.len());
    let mut uncovered = Vec::new();
    for (node, p) in positions.iter().enumerate() {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d = (p[0] - center[0]).hypot(p[1] - center[1]);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        if best_d > radius_m {
            uncovered.push(graph.node_ids()[node].clone());
        }
        assignment.push(best);
    }
    if !uncovered.is_empty() {
        return Err(Error::UncoveredNodes(uncovered));
    }
    Ok(CloudletPartition::empty(assignment, centers.to_vec(), Some(radius_m), centers.len()))
}

/// Partition from an explicit `node -> cloudlet` assignment. Cloudlet ids must
/// be `0..C` with every id used.
pub fn partition_from_assignment(
    graph: &WeightedGraph,
    assignment: Vec<usize>,
) -> Result<CloudletPartition> {
    if assignment.len() != graph.len() {
        return Err(Error::Shape(format!(
            "assignment covers {} nodes, graph has {}",
            assignment.len(),
            graph.len()
        )));
    }
    let count = assignment.iter().max().map_or(0, |m| m + 1);
    let used: BTreeSet<usize> = assignment.iter().copied().collect();
    if used.len() != count {
        return Err(Error::Config(format!(
            "cloudlet ids must be contiguous from 0, got {used:?}"
        )));
    }
    Ok(CloudletPartition::empty(assignment, Vec::new(), None, count))
}

/// Fill in the ℓ-hop cross-cloudlet dependency sets and the cloudlet links.
pub fn dependency_closure(
    graph: &WeightedGraph,
    partition: &CloudletPartition,
    l_hops: usize,
) -> CloudletPartition {
    let mut out = partition.clone();
    out.l_hops = l_hops;
    let count = partition.num_cloudlets();
    out.dependencies = (0..count)
        .map(|c| {
            let local: BTreeSet<usize> = partition.local_nodes(c).into_iter().collect();
            hop_ball(graph, &local, l_hops)
                .difference(&local)
                .copied()
                .collect()
        })
        .collect();
    out.cloudlet_adjacency = vec![BTreeSet::new(); count];
    for c in 0..count {
        for &node in &out.dependencies[c] {
            let other = partition.assignment[node];
            out.cloudlet_adjacency[c].insert(other);
            out.cloudlet_adjacency[other].insert(c);
        }
    }
    out
}

impl CloudletPartition {
    fn empty(assignment: Vec<usize>, centers: Vec<Point>, radius_m: Option<f64>, count: usize) -> Self {
        Self {
            assignment,
            centers,
            radius_m,
            l_hops: 0,
            dependencies: vec![BTreeSet::new(); count],
            cloudlet_adjacency: vec![BTreeSet::new(); count],
        }
    }

    pub fn num_cloudlets(&self) -> usize {
        self.dependencies.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn cloudlet_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn radius_m(&self) -> Option<f64> {
        self.radius_m
    }

    pub fn l_hops(&self) -> usize {
        self.l_hops
    }

    /// Local nodes of cloudlet `c` in ascending index order.
    pub fn local_nodes(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&n| self.assignment[n] == c)
            .collect()
    }

    pub fn dependencies(&self, c: usize) -> &BTreeSet<usize> {
        &self.dependencies[c]
    }

    /// Cloudlets that exchange features with `c` in either direction.
    pub fn neighbors(&self, c: usize) -> &BTreeSet<usize> {
        &self.cloudlet_adjacency[c]
    }

    pub fn check_invariants(&self) -> Result<()> {
        let count = self.num_cloudlets();
        if let Some(bad) = self.assignment.iter().position(|&c| c >= count) {
            return Err(Error::Shape(format!("node {bad} assigned to unknown cloudlet")));
        }
        for c in 0..count {
            if let Some(&n) = self.dependencies[c]
                .iter()
                .find(|&&n| self.assignment[n] == c)
            {
                return Err(Error::OverlappingNodeSets(n));
            }
        }
        Ok(())
    }
}

/// A training subgraph together with the global index of each of its nodes.
#[derive(Debug, Clone)]
pub struct InducedSubgraph {
    pub graph: WeightedGraph,
    /// Global node index per subgraph position: local nodes first, then
    /// cross-cloudlet nodes, each group ascending.
    pub nodes: Vec<usize>,
    pub n_local: usize,
}

pub fn induced_subgraph(
    graph: &WeightedGraph,
    local_nodes: &BTreeSet<usize>,
    active_cross: &BTreeSet<usize>,
) -> Result<InducedSubgraph> {
    let n = graph.len();
    if let Some(&bad) = local_nodes.iter().chain(active_cross).find(|&&v| v >= n) {
        return Err(Error::UnknownNode(bad.to_string()));
    }
    if let Some(&shared) = local_nodes.intersection(active_cross).next() {
        return Err(Error::OverlappingNodeSets(shared));
    }
    let nodes: Vec<usize> = local_nodes.iter().chain(active_cross).copied().collect();
    let m = nodes.len();
    let adjacency = DMatrix::from_fn(m, m, |a, b| graph.adjacency[(nodes[a], nodes[b])]);
    let distances = DMatrix::from_fn(m, m, |a, b| graph.distances[(nodes[a], nodes[b])]);
    let positions = graph
        .positions
        .as_ref()
        .map(|p| nodes.iter().map(|&v| p[v]).collect());
    Ok(InducedSubgraph {
        graph: WeightedGraph {
            node_ids: nodes.iter().map(|&v| graph.node_ids[v].clone()).collect(),
            positions,
            adjacency,
            distances,
        },
        nodes,
        n_local: local_nodes.len(),
    })
}
