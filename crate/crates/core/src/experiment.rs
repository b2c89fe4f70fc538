//! End-to-end runs: configuration to dataset, partition, online loop, final
//! evaluation and report files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, RunConfig};
use crate::dataset::{fit_standardizer, load_speed_matrix, split_train_val, SpeedSeries, Standardizer};
use crate::error::{Error, Result};
use crate::federation::{ChebFactory, CommLedger, FinalEvaluation, OnlineData, Simulation, TransferKind, WindowRecord};
use crate::graph::{
    build_adjacency, dependency_closure, distance_matrix, partition_by_radius, partition_from_assignment,
    CloudletPartition, WeightedGraph,
};
use crate::synth::generate_synthetic;
use crate::topology_io::{read_assignment, read_centers, read_distances, read_positions};

/// Everything a run needs, loaded and preprocessed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub graph: WeightedGraph,
    pub partition: CloudletPartition,
    pub train_raw: SpeedSeries,
    pub train_z: SpeedSeries,
    pub val_raw: SpeedSeries,
    pub val_z: SpeedSeries,
    pub standardizer: Standardizer,
}

impl PreparedData {
    pub fn online_data(&self) -> OnlineData<'_> {
        OnlineData {
            graph: &self.graph,
            partition: &self.partition,
            train_raw: &self.train_raw,
            train_z: &self.train_z,
            val_raw: &self.val_raw,
            val_z: &self.val_z,
            standardizer: &self.standardizer,
        }
    }
}

/// Raw dataset before the dependency closure and the split.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub graph: WeightedGraph,
    /// Truncated to `max_steps` when set.
    pub speeds: SpeedSeries,
    pub partition: CloudletPartition,
}

pub fn load_dataset(cfg: &RunConfig, base_dir: &Path) -> Result<LoadedDataset> {
    let (graph, speeds, partition) = match &cfg.dataset {
        DatasetSource::Files(files) => {
            let files = files.resolved(base_dir);
            let speeds = load_speed_matrix(&files.speeds)?;
            let records = read_distances(&files.distances)?;
            let d = distance_matrix(
                speeds.node_ids(),
                records.iter().map(|r| (r.from.as_str(), r.to.as_str(), r.distance_m)),
            )?;
            let mut graph = build_adjacency(speeds.node_ids().to_vec(), &d, cfg.kernel)?;
            if let Some(p) = &files.positions {
                graph = graph.with_positions(read_positions(p, speeds.node_ids())?)?;
            }
            let partition = match (&files.assignment, &files.centers) {
                (Some(a), _) => partition_from_assignment(&graph, read_assignment(a, speeds.node_ids())?)?,
                (None, Some(c)) => partition_by_radius(&graph, &read_centers(c)?, cfg.radius_m)?,
                (None, None) => return Err(Error::Config("no assignment or centers file".into())),
            };
            (graph, speeds, partition)
        }
        DatasetSource::Synthetic(s) => {
            let data = generate_synthetic(s)?;
            let partition = partition_by_radius(&data.graph, &data.centers, data.radius_m)?;
            (data.graph, data.speeds, partition)
        }
    };
    let speeds = match cfg.max_steps {
        Some(m) if m < speeds.steps() => speeds.truncate(m),
        _ => speeds,
    };
    Ok(LoadedDataset {
        graph,
        speeds,
        partition,
    })
}

/// Load the dataset, build graph and partition, split and standardize.
pub fn prepare(cfg: &RunConfig, base_dir: &Path) -> Result<PreparedData> {
    let LoadedDataset {
        graph,
        speeds,
        partition,
    } = load_dataset(cfg, base_dir)?;
    let partition = dependency_closure(&graph, &partition, cfg.l_hops());
    partition.check_invariants()?;
    let (train_raw, val_raw) = split_train_val(&speeds, cfg.train_ratio);
    let standardizer = fit_standardizer(&train_raw, cfg.per_sensor_standardization)?;
    Ok(PreparedData {
        train_z: standardizer.standardize(&train_raw),
        val_z: standardizer.standardize(&val_raw),
        graph,
        partition,
        train_raw,
        val_raw,
        standardizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub nodes: usize,
    pub cloudlets: usize,
    pub local_nodes: Vec<usize>,
    pub dependencies: Vec<usize>,
    pub l_hops: usize,
    pub train_steps: usize,
    pub val_steps: usize,
    pub rounds: usize,
    pub total_feature_bytes: u64,
    pub total_model_bytes: u64,
    /// Final pruning rate per cloudlet.
    pub final_p: Vec<f64>,
    /// Cloudlets whose warm-up baseline SEPA was zero.
    pub sepa_base_zero: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTotals {
    pub round: usize,
    pub feature_bytes: u64,
    pub model_bytes: u64,
    pub cumulative_feature_bytes: u64,
    pub cumulative_model_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub summary: RunSummary,
    pub windows: Vec<WindowRecord>,
    pub rounds: Vec<RoundTotals>,
    pub final_evaluation: FinalEvaluation,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn final_feature_bytes(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.cumulative_feature_bytes)
    }

    pub fn final_model_bytes(&self) -> u64 {
        self.rounds.last().map_or(0, |r| r.cumulative_model_bytes)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub ledger: CommLedger,
}

pub fn run_experiment(cfg: &RunConfig, base_dir: &Path) -> Result<RunOutput> {
    cfg.validate(base_dir)?;
    let data = prepare(cfg, base_dir)?;
    run_prepared(cfg, &data)
}

/// Run on already prepared data, e.g. to share one dataset across configs.
pub fn run_prepared(cfg: &RunConfig, data: &PreparedData) -> Result<RunOutput> {
    let factory = ChebFactory {
        cfg: cfg.forecaster,
        horizon: cfg.horizon,
        seed: cfg.seed,
    };
    let sim = Simulation::new(data.online_data(), cfg.online(), &factory)?;
    let out = sim.run()?;
    let feat = out.ledger.cumulative(TransferKind::Features, out.rounds);
    let model = out.ledger.cumulative(TransferKind::Model, out.rounds);
    let rounds = (0..out.rounds)
        .map(|r| {
            let prev = |v: &[u64]| if r == 0 { 0 } else { v[r - 1] };
            RoundTotals {
                round: r,
                feature_bytes: feat[r] - prev(&feat),
                model_bytes: model[r] - prev(&model),
                cumulative_feature_bytes: feat[r],
                cumulative_model_bytes: model[r],
            }
        })
        .collect();
    let p = &data.partition;
    let summary = RunSummary {
        nodes: data.graph.len(),
        cloudlets: p.num_cloudlets(),
        local_nodes: (0..p.num_cloudlets()).map(|c| p.local_nodes(c).len()).collect(),
        dependencies: (0..p.num_cloudlets()).map(|c| p.dependencies(c).len()).collect(),
        l_hops: p.l_hops(),
        train_steps: data.train_raw.steps(),
        val_steps: data.val_raw.steps(),
        rounds: out.rounds,
        total_feature_bytes: out.ledger.total_bytes(TransferKind::Features),
        total_model_bytes: out.ledger.total_bytes(TransferKind::Model),
        final_p: out.states.iter().map(|s| s.pruning.p).collect(),
        sepa_base_zero: out.states.iter().filter(|s| s.pruning.base_zero).map(|s| s.id).collect(),
    };
    Ok(RunOutput {
        report: RunReport {
            config: cfg.clone(),
            summary,
            windows: out.records,
            rounds,
            final_evaluation: out.final_eval,
        },
        ledger: out.ledger,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub report: PathBuf,
    pub windows: PathBuf,
    pub rounds: PathBuf,
    pub pruning_trace: PathBuf,
    pub ledger: PathBuf,
    pub final_eval: PathBuf,
}

impl OutputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            report: dir.join("report.json"),
            windows: dir.join("windows.csv"),
            rounds: dir.join("rounds.csv"),
            pruning_trace: dir.join("pruning_trace.csv"),
            ledger: dir.join("ledger.csv"),
            final_eval: dir.join("final.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningTraceRow {
    pub cloudlet: usize,
    pub window: usize,
    pub p_t: f64,
    pub n_protected: usize,
    pub n_pruned: usize,
    pub n_masked: usize,
    pub delta_sepa: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub horizon: usize,
    /// Cloudlet id, or `all` for the node-weighted aggregate.
    pub cloudlet: String,
    pub local_nodes: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
    pub sepa: Option<f64>,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn final_rows(eval: &FinalEvaluation) -> Vec<FinalRow> {
    let mut rows = Vec::new();
    for h in &eval.horizons {
        for c in &h.cloudlets {
            rows.push(FinalRow {
                horizon: h.horizon,
                cloudlet: c.cloudlet.to_string(),
                local_nodes: c.local_nodes,
                mae: c.mae,
                rmse: c.rmse,
                wmape: c.wmape,
                sepa: c.sepa,
            });
        }
        rows.push(FinalRow {
            horizon: h.horizon,
            cloudlet: "all".into(),
            local_nodes: h.cloudlets.iter().map(|c| c.local_nodes).sum(),
            mae: h.mae,
            rmse: h.rmse,
            wmape: h.wmape,
            sepa: h.sepa,
        });
    }
    rows
}

/// Write `report.json` and its CSV mirrors into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<OutputPaths> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = OutputPaths::in_dir(dir);
    std::fs::write(&paths.report, out.report.to_json()).map_err(|e| Error::io(&paths.report, e))?;
    write_csv(&paths.windows, &out.report.windows)?;
    write_csv(&paths.rounds, &out.report.rounds)?;
    write_csv(
        &paths.pruning_trace,
        out.report.windows.iter().map(|w| PruningTraceRow {
            cloudlet: w.cloudlet,
            window: w.window,
            p_t: w.p_t,
            n_protected: w.n_protected,
            n_pruned: w.n_pruned,
            n_masked: w.n_masked,
            delta_sepa: w.delta_sepa,
            ratio: w.ratio,
        }),
    )?;
    out.ledger.write_csv(&paths.ledger)?;
    write_csv(&paths.final_eval, final_rows(&out.report.final_evaluation))?;
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub strategy: String,
    pub connectivity: String,
    pub horizon: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
    pub sepa: Option<f64>,
    pub feature_bytes: u64,
    pub model_bytes: u64,
    pub delta_mae: Option<f64>,
    pub delta_rmse: Option<f64>,
    pub delta_wmape: Option<f64>,
    pub delta_sepa: Option<f64>,
    pub delta_feature_bytes: i64,
    pub delta_model_bytes: i64,
}

/// Side-by-side final metrics per evaluated horizon; deltas are relative to
/// the first report.
pub fn compare_runs(reports: &[(String, RunReport)]) -> Result<Vec<ComparisonRow>> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Config("nothing to compare".into()));
    };
    if reports.len() < 2 {
        return Err(Error::Config("compare needs at least two reports".into()));
    }
    for (_, r) in reports {
        if r.config.horizon != first.config.horizon {
            return Err(Error::HorizonMismatch(first.config.horizon, r.config.horizon));
        }
    }
    let diff = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
    let mut rows = Vec::new();
    for (label, r) in reports {
        for h in &r.final_evaluation.horizons {
            let base = first.final_evaluation.at(h.horizon);
            rows.push(ComparisonRow {
                run: label.clone(),
                strategy: r.config.strategy.as_str().into(),
                connectivity: r.config.connectivity.as_str().into(),
                horizon: h.horizon,
                mae: h.mae,
                rmse: h.rmse,
                wmape: h.wmape,
                sepa: h.sepa,
                feature_bytes: r.final_feature_bytes(),
                model_bytes: r.final_model_bytes(),
                delta_mae: diff(h.mae, base.and_then(|b| b.mae)),
                delta_rmse: diff(h.rmse, base.and_then(|b| b.rmse)),
                delta_wmape: diff(h.wmape, base.and_then(|b| b.wmape)),
                delta_sepa: diff(h.sepa, base.and_then(|b| b.sepa)),
                delta_feature_bytes: r.final_feature_bytes() as i64 - first.final_feature_bytes() as i64,
                delta_model_bytes: r.final_model_bytes() as i64 - first.final_model_bytes() as i64,
            });
        }
    }
    Ok(rows)
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    write_csv(path, rows)
}
