//! Independent oracles shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cloudlet_forecast::graph::WeightedGraph;
use cloudlet_forecast::metrics::{EventKind, EventRecord, SepaConfig};

/// Double loop over every step and every lookback offset.
pub fn brute_force_events(x: &[f64], node: usize, cfg: &SepaConfig) -> Vec<EventRecord> {
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    for t in 0..x.len() {
        if last.is_some_and(|l| t <= l + cfg.cooldown) {
            continue;
        }
        let mut drop: Option<f64> = None;
        let mut rise: Option<f64> = None;
        for k in t.saturating_sub(cfg.lookback)..t {
            if x[t] <= x[k] - cfg.delta_change {
                drop = Some(drop.map_or(x[k] - x[t], |d: f64| d.max(x[k] - x[t])));
            }
            if x[t] >= x[k] + cfg.delta_change {
                rise = Some(rise.map_or(x[t] - x[k], |r: f64| r.max(x[t] - x[k])));
            }
        }
        let found = match (drop, rise) {
            (Some(m), _) => Some((EventKind::Slowdown, m)),
            (None, Some(m)) => Some((EventKind::Recovery, m)),
            _ => None,
        };
        if let Some((kind, magnitude)) = found {
            out.push(EventRecord {
                node,
                t,
                kind,
                magnitude,
            });
            last = Some(t);
        }
    }
    out
}

/// Brute force over every column of `m`.
pub fn brute_force_all(m: &DMatrix<f64>, cfg: &SepaConfig) -> Vec<EventRecord> {
    (0..m.ncols())
        .flat_map(|j| brute_force_events(m.column(j).as_slice(), j, cfg))
        .collect()
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> WeightedGraph {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(density) {
                let v = rng.gen_range(0.05..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    WeightedGraph::from_adjacency((0..n).map(|i| i.to_string()).collect(), w).expect("valid graph")
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-2.0..2.0))
}

/// All-pairs hop distances by Floyd-Warshall; unreachable pairs are huge.
pub fn hop_distances(graph: &WeightedGraph) -> Vec<Vec<usize>> {
    let n = graph.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
        for (j, v) in row.iter_mut().enumerate() {
            if i != j && graph.weight(i, j) > 0.0 {
                *v = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Nodes outside cloudlet `c` within `l` hops of one of its nodes.
pub fn brute_force_dependencies(d: &[Vec<usize>], assignment: &[usize], c: usize, l: usize) -> BTreeSet<usize> {
    let n = assignment.len();
    (0..n)
        .filter(|&v| assignment[v] != c && (0..n).any(|u| assignment[u] == c && d[u][v] <= l))
        .collect()
}

/// Cloudlets other than `c` owning a node within `l` hops of `c`.
pub fn brute_force_links(d: &[Vec<usize>], assignment: &[usize], c: usize, l: usize) -> BTreeSet<usize> {
    brute_force_dependencies(d, assignment, c, l).into_iter().map(|v| assignment[v]).collect()
}
