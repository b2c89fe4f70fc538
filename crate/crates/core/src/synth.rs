//! Synthetic road networks with spatially propagating jams.
//!
//! Sensors sit on a jittered grid with road links between grid neighbours.
//! Speeds hover around free flow with a mild daily cycle and bounded noise.
//! Each jam starts at a source sensor with a one-step drop and spreads along
//! road links, each hop adding a random lag; every affected sensor stays
//! jammed for the same duration and then recovers in one step. Jams are kept
//! apart per sensor so every onset is a detectable sudden slowdown.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_speed_matrix, SpeedSeries, PEMS_INTERVAL_S};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, distance_matrix, KernelConfig, Point, WeightedGraph};
use crate::topology_io::{write_centers, write_distances, write_positions, DistanceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub nodes: usize,
    pub steps: usize,
    /// Expected jam starts per hour over the whole network.
    pub jam_rate: f64,
    pub seed: u64,
    pub rows: usize,
    pub spacing_m: f64,
    pub cloudlets: usize,
    pub radius_m: f64,
    pub free_flow: f64,
    pub noise_std: f64,
    /// Amplitude of the 24-hour speed cycle.
    pub daily_amplitude: f64,
    /// `[min, max]` speed drop while jammed.
    pub jam_drop: [f64; 2],
    /// `[min, max]` jam duration in steps.
    pub jam_duration: [usize; 2],
    /// `[min, max]` delay per hop in steps.
    pub lag: [usize; 2],
    pub spread_hops: usize,
    /// Free steps required around each jam at a sensor.
    pub min_gap: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            nodes: 30,
            steps: 2000,
            jam_rate: 0.5,
            seed: 0,
            rows: 3,
            spacing_m: 3000.0,
            cloudlets: 3,
            radius_m: 8000.0,
            free_flow: 60.0,
            noise_std: 1.0,
            daily_amplitude: 3.0,
            jam_drop: [30.0, 40.0],
            jam_duration: [12, 24],
            lag: [1, 2],
            spread_hops: 2,
            min_gap: 19,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic config: {m}")));
        if self.nodes < 2 || self.steps < 50 {
            return bad("need at least 2 nodes and 50 steps");
        }
        if self.rows == 0 || self.cloudlets == 0 || !(self.spacing_m > 0.0) {
            return bad("rows, cloudlets and spacing must be positive");
        }
        if !(self.jam_rate >= 0.0) || !(self.noise_std >= 0.0) || !(self.daily_amplitude >= 0.0) {
            return bad("jam rate, noise and daily amplitude must be non-negative");
        }
        if self.jam_drop[0] > self.jam_drop[1] || self.jam_duration[0] > self.jam_duration[1] || self.lag[0] > self.lag[1] {
            return bad("ranges must be given as [min, max]");
        }
        if self.jam_duration[0] == 0 || !(self.jam_drop[0] > 0.0) {
            return bad("jams need a positive drop and duration");
        }
        Ok(())
    }
}

/// One sensor's part in one jam. `end` is the first recovered step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JamRecord {
    pub jam: usize,
    pub source: usize,
    pub node: usize,
    pub hop: usize,
    pub start: usize,
    pub end: usize,
    pub drop: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub config: SynthConfig,
    pub graph: WeightedGraph,
    pub distances: Vec<DistanceRecord>,
    pub centers: Vec<Point>,
    /// Cloudlet radius, widened if needed so every sensor is covered.
    pub radius_m: f64,
    pub speeds: SpeedSeries,
    pub jams: Vec<JamRecord>,
    /// Jam starts dropped because they would crowd an existing jam.
    pub skipped_jams: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthPaths {
    pub speeds: PathBuf,
    pub distances: PathBuf,
    pub positions: PathBuf,
    pub centers: PathBuf,
    pub jams: PathBuf,
}

impl SynthPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            speeds: dir.join("speeds.csv"),
            distances: dir.join("distances.csv"),
            positions: dir.join("positions.csv"),
            centers: dir.join("centers.csv"),
            jams: dir.join("jams.csv"),
        }
    }
}

fn uniform_usize<R: Rng>(rng: &mut R, range: [usize; 2]) -> usize {
    rng.gen_range(range[0]..=range[1])
}

fn uniform_f64<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.nodes;
    let rows = cfg.rows.min(n);
    let cols = n.div_ceil(rows);
    let node_ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let cell = |i: usize| (i / rows, i % rows);

    let jitter = 0.15 * cfg.spacing_m;
    let positions: Vec<Point> = (0..n)
        .map(|i| {
            let (c, r) = cell(i);
            [
                c as f64 * cfg.spacing_m + rng.gen_range(-jitter..jitter),
                r as f64 * cfg.spacing_m + rng.gen_range(-jitter..jitter),
            ]
        })
        .collect();

    let mut distances = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let ((ci, ri), (cj, rj)) = (cell(i), cell(j));
            let grid_neighbours = (ci == cj && rj == ri + 1) || (ri == rj && cj == ci + 1);
            if grid_neighbours {
                let d = (positions[i][0] - positions[j][0]).hypot(positions[i][1] - positions[j][1]);
                distances.push(DistanceRecord {
                    from: node_ids[i].clone(),
                    to: node_ids[j].clone(),
                    distance_m: (1.1 * d).round(),
                });
            }
        }
    }
    let dmat = distance_matrix(
        &node_ids,
        distances.iter().map(|r| (r.from.as_str(), r.to.as_str(), r.distance_m)),
    )?;
    let graph = build_adjacency(node_ids.clone(), &dmat, KernelConfig::default())?.with_positions(positions.clone())?;

    let width = (cols - 1) as f64 * cfg.spacing_m;
    let mid_y = (rows - 1) as f64 * cfg.spacing_m / 2.0;
    let k = cfg.cloudlets;
    let centers: Vec<Point> = (0..k)
        .map(|i| {
            let x = if k == 1 { width / 2.0 } else { (i as f64 + 0.5) * width / k as f64 };
            [x, mid_y]
        })
        .collect();
    let needed = positions
        .iter()
        .map(|p| {
            centers
                .iter()
                .map(|c| (p[0] - c[0]).hypot(p[1] - c[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let radius_m = if needed <= cfg.radius_m { cfg.radius_m } else { (needed + 1.0).ceil() };

    let (jams, skipped_jams) = schedule_jams(cfg, &graph, &mut rng);

    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let bound = 3.0 * cfg.noise_std;
    let base: Vec<f64> = (0..n).map(|_| cfg.free_flow + rng.gen_range(-2.0..2.0)).collect();
    let phase: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let steps_per_day = 86_400.0 / PEMS_INTERVAL_S as f64;
    let mut drop = nalgebra::DMatrix::zeros(cfg.steps, n);
    for j in &jams {
        for t in j.start..j.end {
            drop[(t, j.node)] = j.drop;
        }
    }
    let values = nalgebra::DMatrix::from_fn(cfg.steps, n, |t, i| {
        let daily = cfg.daily_amplitude * (std::f64::consts::TAU * t as f64 / steps_per_day + phase[i]).sin();
        let e = if cfg.noise_std > 0.0 {
            noise.sample(&mut rng).clamp(-bound, bound)
        } else {
            0.0
        };
        (base[i] + daily + e - drop[(t, i)]).max(3.0)
    });
    let speeds = SpeedSeries::new(node_ids, values, PEMS_INTERVAL_S)?;
    Ok(SyntheticData {
        config: cfg.clone(),
        graph,
        distances,
        centers,
        radius_m,
        speeds,
        jams,
        skipped_jams,
    })
}

/// Draw jam starts and their spread; a jam is dropped if any sensor it would
/// reach is already jammed within `min_gap` steps or it would leave the series.
fn schedule_jams<R: Rng>(cfg: &SynthConfig, graph: &WeightedGraph, rng: &mut R) -> (Vec<JamRecord>, usize) {
    let n = graph.len();
    let p_start = (cfg.jam_rate * PEMS_INTERVAL_S as f64 / 3600.0).min(1.0);
    let mut per_node: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut jams = Vec::new();
    let mut skipped = 0;
    let mut next_id = 0;
    for t in 0..cfg.steps {
        if p_start == 0.0 || !rng.gen_bool(p_start) {
            continue;
        }
        let source = rng.gen_range(0..n);
        let drop = uniform_f64(rng, cfg.jam_drop);
        let duration = uniform_usize(rng, cfg.jam_duration);

        let mut start = vec![usize::MAX; n];
        let mut hop = vec![usize::MAX; n];
        start[source] = t;
        hop[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            if hop[u] == cfg.spread_hops {
                continue;
            }
            for v in graph.neighbors(u) {
                if hop[v] == usize::MAX {
                    hop[v] = hop[u] + 1;
                    start[v] = start[u] + uniform_usize(rng, cfg.lag);
                    queue.push_back(v);
                }
            }
        }
        let reached: Vec<usize> = (0..n).filter(|&v| hop[v] != usize::MAX).collect();
        let fits = reached.iter().all(|&v| {
            let (s, e) = (start[v], start[v] + duration);
            s >= cfg.min_gap
                && e + cfg.min_gap <= cfg.steps
                && per_node[v].iter().all(|&(os, oe)| s >= oe + cfg.min_gap || e + cfg.min_gap <= os)
        });
        if !fits {
            skipped += 1;
            continue;
        }
        for &v in &reached {
            let (s, e) = (start[v], start[v] + duration);
            per_node[v].push((s, e));
            jams.push(JamRecord {
                jam: next_id,
                source,
                node: v,
                hop: hop[v],
                start: s,
                end: e,
                drop,
            });
        }
        next_id += 1;
    }
    jams.sort_by_key(|j| (j.jam, j.node));
    (jams, skipped)
}

#[derive(Debug, Serialize)]
struct JamRow<'a> {
    jam: usize,
    source: &'a str,
    node: &'a str,
    hop: usize,
    start: usize,
    end: usize,
    drop: f64,
}

pub fn write_jams(path: &Path, jams: &[JamRecord], node_ids: &[String]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for j in jams {
        w.serialize(JamRow {
            jam: j.jam,
            source: &node_ids[j.source],
            node: &node_ids[j.node],
            hop: j.hop,
            start: j.start,
            end: j.end,
            drop: j.drop,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write speeds, distances, positions, centers and the jam log into `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = SynthPaths::in_dir(dir);
    write_speed_matrix(&data.speeds, &paths.speeds)?;
    write_distances(&paths.distances, &data.distances)?;
    write_positions(&paths.positions, &data.graph)?;
    write_centers(&paths.centers, &data.centers)?;
    write_jams(&paths.jams, &data.jams, data.graph.node_ids())?;
    Ok(paths)
}
