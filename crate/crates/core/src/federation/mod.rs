//! Online semi-decentralized training across cloudlets.
//!
//! Every round consumes one window of the training stream. Cloudlets run in
//! parallel between barriers: each picks its active cross-cloudlet nodes,
//! trains on window `t`, validates on window `t + 1` and updates its pruning
//! state. After the barrier the chosen strategy exchanges models and the
//! round's transfers are appended to the ledger in canonical order.

mod eval;
mod ledger;
mod strategy;

pub use eval::{build_samples, instance_input, predict_window, WindowPredictions};
pub use ledger::{CommLedger, Endpoint, LedgerEntry, TransferKind, FEATURE_SCALAR_BYTES};
pub use strategy::{fedavg, pick_peers, serverfree_exchange, GossipBuffer};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_instances, window_stream, SpeedSeries, Standardizer, WindowBatch};
use crate::error::{Error, Result};
use crate::forecaster::{
    train_on_window, AdamState, ChebModel, Forecaster, ForecasterConfig, ForecasterParams,
};
use crate::graph::{induced_subgraph, CloudletPartition, InducedSubgraph, WeightedGraph};
use crate::metrics::{aggregate_weighted, detect_sudden_events, EventRecord, SepaConfig, SepaScore};
use crate::pruning::{
    controller_update, delta_sepa, mask_half, protected_set, sample_prune, update_scores, ControllerConfig,
    PruningState,
};

/// Horizons reported by the final evaluation, when within the trained horizon.
pub const REPORT_HORIZONS: [usize; 3] = [3, 6, 12];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TraditionalFl,
    ServerfreeFl,
    Gossip,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TraditionalFl => "traditional_fl",
            Strategy::ServerfreeFl => "serverfree_fl",
            Strategy::Gossip => "gossip",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traditional_fl" => Ok(Strategy::TraditionalFl),
            "serverfree_fl" => Ok(Strategy::ServerfreeFl),
            "gossip" => Ok(Strategy::Gossip),
            _ => Err(Error::Config(format!(
                "unknown strategy {s:?} (expected traditional_fl, serverfree_fl or gossip)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Full,
    None,
    Adaptive,
}

impl Connectivity {
    pub fn as_str(self) -> &'static str {
        match self {
            Connectivity::Full => "full",
            Connectivity::None => "none",
            Connectivity::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Connectivity::Full),
            "none" => Ok(Connectivity::None),
            "adaptive" => Ok(Connectivity::Adaptive),
            _ => Err(Error::Config(format!(
                "unknown connectivity {s:?} (expected full, none or adaptive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Windows between model exchanges.
    pub period: usize,
    /// Peers per gossip send.
    pub fanout: usize,
    pub seed: u64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TraditionalFl,
            period: 1,
            fanout: 1,
            seed: 0,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.fanout == 0 {
            return Err(Error::Config("aggregation period and gossip fanout must be at least 1".into()));
        }
        Ok(())
    }

    fn exchanges_after(&self, window: usize) -> bool {
        (window + 1).is_multiple_of(self.period)
    }
}

/// Builds a forecaster for a training subgraph and supplies its starting
/// parameters. Every model built by one factory must share a shape tag.
pub trait ModelFactory: Send + Sync {
    fn build(&self, graph: &WeightedGraph) -> Result<Box<dyn Forecaster>>;
    fn initial_params(&self) -> ForecasterParams;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebFactory {
    pub cfg: ForecasterConfig,
    pub horizon: usize,
    pub seed: u64,
}

impl ModelFactory for ChebFactory {
    fn build(&self, graph: &WeightedGraph) -> Result<Box<dyn Forecaster>> {
        Ok(Box::new(ChebModel::new(graph, self.cfg.order, self.cfg.lookback, self.horizon)?))
    }

    fn initial_params(&self) -> ForecasterParams {
        ChebModel::init_params(self.cfg.order, self.cfg.lookback, self.horizon, self.cfg.init_noise, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub strategy: StrategyConfig,
    pub connectivity: Connectivity,
    pub controller: ControllerConfig,
    pub sepa: SepaConfig,
    pub forecaster: ForecasterConfig,
    /// Trained horizon `T'`.
    pub horizon: usize,
    pub window_size: usize,
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.window_size == 0 {
            return Err(Error::Config("horizon and window size must be at least 1".into()));
        }
        self.strategy.validate()?;
        self.controller.validate()?;
        self.sepa.validate()?;
        self.forecaster.validate()
    }

    /// Horizons evaluated at the end: the standard set up to `T'`, plus `T'`.
    pub fn report_horizons(&self) -> Vec<usize> {
        let mut hs: Vec<usize> = REPORT_HORIZONS.iter().copied().filter(|&h| h <= self.horizon).collect();
        if !hs.contains(&self.horizon) {
            hs.push(self.horizon);
        }
        hs
    }
}

/// Read-only inputs shared by every cloudlet.
#[derive(Debug, Clone, Copy)]
pub struct OnlineData<'a> {
    pub graph: &'a WeightedGraph,
    /// Partition with its dependency closure computed.
    pub partition: &'a CloudletPartition,
    pub train_raw: &'a SpeedSeries,
    pub train_z: &'a SpeedSeries,
    pub val_raw: &'a SpeedSeries,
    pub val_z: &'a SpeedSeries,
    pub standardizer: &'a Standardizer,
}

/// One cloudlet's view of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: usize,
    pub cloudlet: usize,
    pub train_loss: Option<f64>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
    pub sepa: Option<f64>,
    pub sepa_masked: Option<f64>,
    /// Pruning rate in force during the window.
    pub p_t: f64,
    pub n_cross: usize,
    pub n_protected: usize,
    pub n_pruned: usize,
    pub n_masked: usize,
    pub delta_sepa: Option<f64>,
    pub ratio: Option<f64>,
    pub sepa_base_zero: bool,
    pub feature_bytes: u64,
    pub model_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct CloudletState {
    pub id: usize,
    pub local_nodes: BTreeSet<usize>,
    pub dependencies: BTreeSet<usize>,
    pub params: ForecasterParams,
    pub opt: AdamState,
    pub pruning: PruningState,
    pub gossip: GossipBuffer,
    pub last_pruned: BTreeSet<usize>,
    pub history: Vec<WindowRecord>,
    rng: ChaCha8Rng,
    /// Events on the training series, columns indexed like `local_nodes`.
    train_events: Vec<EventRecord>,
}

impl CloudletState {
    /// Cross-cloudlet nodes the cloudlet currently reads.
    pub fn active_cross(&self, connectivity: Connectivity) -> BTreeSet<usize> {
        match connectivity {
            Connectivity::Full => self.dependencies.clone(),
            Connectivity::None => BTreeSet::new(),
            Connectivity::Adaptive => self.dependencies.difference(&self.last_pruned).copied().collect(),
        }
    }
}

/// Independent stream per cloudlet so results do not depend on scheduling.
pub fn cloudlet_rng(seed: u64, cloudlet: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cloudlet as u64 + 1);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudletEval {
    pub cloudlet: usize,
    pub local_nodes: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
    pub sepa: Option<f64>,
    pub sepa_correct: usize,
    pub sepa_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonEval {
    pub horizon: usize,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
    pub sepa: Option<f64>,
    pub cloudlets: Vec<CloudletEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalEvaluation {
    pub horizons: Vec<HorizonEval>,
}

impl FinalEvaluation {
    pub fn at(&self, horizon: usize) -> Option<&HorizonEval> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    pub records: Vec<WindowRecord>,
    pub ledger: CommLedger,
    pub rounds: usize,
    pub states: Vec<CloudletState>,
    pub final_eval: FinalEvaluation,
}

struct RoundOutput {
    record: WindowRecord,
    entries: Vec<LedgerEntry>,
}

pub struct Simulation<'a> {
    data: OnlineData<'a>,
    cfg: OnlineConfig,
    factory: &'a dyn ModelFactory,
    windows: Vec<WindowBatch>,
}

impl<'a> Simulation<'a> {
    pub fn new(data: OnlineData<'a>, cfg: OnlineConfig, factory: &'a dyn ModelFactory) -> Result<Self> {
        cfg.validate()?;
        let n = data.graph.len();
        if data.partition.num_nodes() != n || data.train_z.num_nodes() != n || data.val_z.num_nodes() != n {
            return Err(Error::Shape(format!(
                "graph has {n} nodes, partition {}, series {} / {}",
                data.partition.num_nodes(),
                data.train_z.num_nodes(),
                data.val_z.num_nodes()
            )));
        }
        let instances = make_instances(data.train_z.steps(), cfg.forecaster.lookback, cfg.horizon);
        let windows = window_stream(&instances, cfg.window_size);
        Ok(Self {
            data,
            cfg,
            factory,
            windows,
        })
    }

    pub fn windows(&self) -> &[WindowBatch] {
        &self.windows
    }

    pub fn config(&self) -> &OnlineConfig {
        &self.cfg
    }

    pub fn init_states(&self) -> Vec<CloudletState> {
        let p = self.data.partition;
        let init = self.factory.initial_params();
        (0..p.num_cloudlets())
            .map(|c| {
                let local: Vec<usize> = p.local_nodes(c);
                let local_raw = self.data.train_raw.select_nodes(&local);
                let train_events = detect_sudden_events(local_raw.values().as_view(), 0, &self.cfg.sepa);
                CloudletState {
                    id: c,
                    local_nodes: local.into_iter().collect(),
                    dependencies: p.dependencies(c).clone(),
                    opt: AdamState::new(init.len()),
                    pruning: PruningState::new(&self.cfg.controller, p.dependencies(c)),
                    gossip: GossipBuffer::new(init.clone()),
                    params: init.clone(),
                    last_pruned: BTreeSet::new(),
                    history: Vec::new(),
                    rng: cloudlet_rng(self.cfg.strategy.seed, c),
                    train_events,
                }
            })
            .collect()
    }

    /// Run the whole stream and the final evaluation.
    pub fn run(&self) -> Result<OnlineOutcome> {
        let mut states = self.init_states();
        let mut ledger = CommLedger::new();
        let mut records = Vec::new();
        for t in 0..self.windows.len() {
            records.extend(self.run_round(&mut states, t, &mut ledger)?);
        }
        let final_eval = self.final_evaluation(&states)?;
        Ok(OnlineOutcome {
            records,
            ledger,
            rounds: self.windows.len(),
            states,
            final_eval,
        })
    }

    /// One barrier-separated round on window `t`; returns the per-cloudlet
    /// records of the round in cloudlet order.
    pub fn run_round(&self, states: &mut [CloudletState], t: usize, ledger: &mut CommLedger) -> Result<Vec<WindowRecord>> {
        let window = &self.windows[t];
        let next = self.windows.get(t + 1);
        let outputs = states
            .par_iter_mut()
            .map(|s| self.cloudlet_round(s, window, next))
            .collect::<Result<Vec<RoundOutput>>>()?;
        let mut entries = Vec::new();
        let mut records = Vec::with_capacity(outputs.len());
        for out in outputs {
            entries.extend(out.entries);
            records.push(out.record);
        }
        if self.cfg.strategy.exchanges_after(t) {
            self.exchange(states, t, &mut entries)?;
        }
        ledger.append_round(entries);
        for (s, r) in states.iter_mut().zip(records.iter_mut()) {
            r.feature_bytes = ledger.bytes_for(t, s.id, TransferKind::Features);
            r.model_bytes = ledger.bytes_for(t, s.id, TransferKind::Model);
            s.history.push(r.clone());
        }
        log::debug!(
            "round {t}: mean sepa {:?}",
            aggregate_weighted(&records.iter().map(|r| r.sepa).collect::<Vec<_>>(), &vec![1.0; records.len()])
        );
        Ok(records)
    }

    fn local_events_in(&self, s: &CloudletState, start: usize, end: usize) -> BTreeSet<usize> {
        let local: Vec<usize> = s.local_nodes.iter().copied().collect();
        s.train_events
            .iter()
            .filter(|e| e.t >= start && e.t < end)
            .map(|e| local[e.node])
            .collect()
    }

    fn subgraph(&self, s: &CloudletState, active: &BTreeSet<usize>) -> Result<(InducedSubgraph, Box<dyn Forecaster>)> {
        let sub = induced_subgraph(self.data.graph, &s.local_nodes, active)?;
        let model = self.factory.build(&sub.graph)?;
        Ok((sub, model))
    }

    /// Validation SEPA at `T'` and errors over all horizons on `window`.
    fn validate(
        &self,
        s: &CloudletState,
        model: &dyn Forecaster,
        sub: &InducedSubgraph,
        window: &WindowBatch,
    ) -> Result<(crate::metrics::ErrorAccumulator, SepaScore)> {
        let preds = predict_window(
            model,
            &s.params,
            sub,
            &window.instances,
            self.data.train_z,
            self.data.standardizer,
        )?;
        let horizons: Vec<usize> = (1..=self.cfg.horizon).collect();
        let errors = preds.errors(self.data.train_raw, &horizons);
        let score = preds.sepa(self.data.train_raw, self.cfg.horizon, &s.train_events, &self.cfg.sepa);
        Ok((errors, score))
    }

    fn cloudlet_round(
        &self,
        s: &mut CloudletState,
        window: &WindowBatch,
        next: Option<&WindowBatch>,
    ) -> Result<RoundOutput> {
        let t = window.window_index;
        let connectivity = self.cfg.connectivity;
        let (start, end) = window.span();
        let event_nodes = self.local_events_in(s, start, end);
        let protected = protected_set(self.data.graph, self.data.partition, s.id, &event_nodes);

        let p_t = match connectivity {
            Connectivity::Full => 0.0,
            Connectivity::None => 1.0,
            Connectivity::Adaptive => s.pruning.p,
        };
        let pruned: BTreeSet<usize> = match connectivity {
            Connectivity::Full => BTreeSet::new(),
            Connectivity::None => s.dependencies.clone(),
            Connectivity::Adaptive => {
                let candidates: Vec<usize> = s.dependencies.difference(&protected).copied().collect();
                sample_prune(&candidates, s.dependencies.len(), &s.pruning.scores, p_t, &mut s.rng)
            }
        };
        debug_assert!(connectivity == Connectivity::None || pruned.is_disjoint(&protected));
        s.last_pruned = pruned.clone();
        let active: BTreeSet<usize> = s.dependencies.difference(&pruned).copied().collect();

        let mut entries = Vec::new();
        let timesteps = window.timesteps() as u64;
        let partition = self.data.partition;
        for src in 0..partition.num_cloudlets() {
            let count = active.iter().filter(|&&n| partition.cloudlet_of(n) == src).count() as u64;
            if count > 0 {
                entries.push(LedgerEntry {
                    round: t,
                    src: Endpoint::Cloudlet(src),
                    dst: Endpoint::Cloudlet(s.id),
                    kind: TransferKind::Features,
                    bytes: count * timesteps * FEATURE_SCALAR_BYTES,
                });
            }
        }

        let (sub, model) = self.subgraph(s, &active)?;
        if self.cfg.strategy.strategy == Strategy::Gossip {
            s.params = s.gossip.average()?;
        }
        let samples = build_samples(self.data.train_z, &sub, &window.instances);
        let lr = self.cfg.forecaster.schedule().at(t);
        let train_loss = train_on_window(
            model.as_ref(),
            &mut s.params,
            &samples,
            &mut s.opt,
            &self.cfg.forecaster.train_config(),
            lr,
            &mut s.rng,
        )?;
        if self.cfg.strategy.strategy == Strategy::Gossip {
            s.gossip.push(s.params.clone());
        }

        let mut record = WindowRecord {
            window: t,
            cloudlet: s.id,
            train_loss,
            mae: None,
            rmse: None,
            wmape: None,
            sepa: None,
            sepa_masked: None,
            p_t,
            n_cross: s.dependencies.len(),
            n_protected: protected.len(),
            n_pruned: pruned.len(),
            n_masked: 0,
            delta_sepa: None,
            ratio: None,
            sepa_base_zero: s.pruning.base_zero,
            feature_bytes: 0,
            model_bytes: 0,
        };
        let Some(next) = next else {
            return Ok(RoundOutput { record, entries });
        };
        let (errors, score) = self.validate(s, model.as_ref(), &sub, next)?;
        record.mae = errors.mae();
        record.rmse = errors.rmse();
        record.wmape = errors.wmape();
        record.sepa = score.value();

        if connectivity == Connectivity::Adaptive {
            let masked = mask_half(&active, &mut s.rng);
            let kept: BTreeSet<usize> = active.difference(&masked).copied().collect();
            let (msub, mmodel) = self.subgraph(s, &kept)?;
            let (_, mscore) = self.validate(s, mmodel.as_ref(), &msub, next)?;
            record.sepa_masked = mscore.value();
            record.n_masked = masked.len();
            s.pruning = controller_update(&s.pruning, record.sepa, &self.cfg.controller);
            record.ratio = s.pruning.last_ratio;
            record.sepa_base_zero = s.pruning.base_zero;
            record.delta_sepa = delta_sepa(record.sepa, record.sepa_masked);
            if let Some(d) = record.delta_sepa {
                update_scores(&mut s.pruning.scores, &masked, d);
            }
        }
        Ok(RoundOutput { record, entries })
    }

    fn exchange(&self, states: &mut [CloudletState], t: usize, entries: &mut Vec<LedgerEntry>) -> Result<()> {
        let model_entry = |src, dst, bytes| LedgerEntry {
            round: t,
            src,
            dst,
            kind: TransferKind::Model,
            bytes,
        };
        match self.cfg.strategy.strategy {
            Strategy::TraditionalFl => {
                let params: Vec<ForecasterParams> = states.iter().map(|s| s.params.clone()).collect();
                let counts: Vec<usize> = states.iter().map(|s| s.local_nodes.len()).collect();
                let global = fedavg(&params, &counts)?;
                let bytes = global.wire_bytes();
                for s in states.iter_mut() {
                    entries.push(model_entry(Endpoint::Cloudlet(s.id), Endpoint::Server, bytes));
                    entries.push(model_entry(Endpoint::Server, Endpoint::Cloudlet(s.id), bytes));
                    s.params = global.clone();
                }
            }
            Strategy::ServerfreeFl => {
                let params: Vec<ForecasterParams> = states.iter().map(|s| s.params.clone()).collect();
                let adjacency: Vec<BTreeSet<usize>> =
                    (0..states.len()).map(|c| self.data.partition.neighbors(c).clone()).collect();
                let averaged = serverfree_exchange(&params, &adjacency)?;
                for (s, p) in states.iter_mut().zip(averaged) {
                    for &n in &adjacency[s.id] {
                        entries.push(model_entry(Endpoint::Cloudlet(n), Endpoint::Cloudlet(s.id), p.wire_bytes()));
                    }
                    s.params = p;
                }
            }
            Strategy::Gossip => {
                let n = states.len();
                let mut sends = Vec::new();
                for s in states.iter_mut() {
                    for peer in pick_peers(&mut s.rng, s.id, n, self.cfg.strategy.fanout) {
                        sends.push((s.id, peer, s.params.clone()));
                    }
                }
                for (src, dst, p) in sends {
                    entries.push(model_entry(Endpoint::Cloudlet(src), Endpoint::Cloudlet(dst), p.wire_bytes()));
                    states[dst].gossip.push(p);
                }
            }
        }
        Ok(())
    }

    /// Each cloudlet scores its own model on its local nodes over the whole
    /// validation split, reading the cross-cloudlet nodes it ended with.
    pub fn final_evaluation(&self, states: &[CloudletState]) -> Result<FinalEvaluation> {
        let horizons = self.cfg.report_horizons();
        let instances = make_instances(self.data.val_z.steps(), self.cfg.forecaster.lookback, self.cfg.horizon);
        let per_cloudlet = states
            .par_iter()
            .map(|s| -> Result<Vec<CloudletEval>> {
                let local: Vec<usize> = s.local_nodes.iter().copied().collect();
                let val_events = detect_sudden_events(
                    self.data.val_raw.select_nodes(&local).values().as_view(),
                    0,
                    &self.cfg.sepa,
                );
                let (sub, model) = self.subgraph(s, &s.active_cross(self.cfg.connectivity))?;
                let preds = predict_window(
                    model.as_ref(),
                    &s.params,
                    &sub,
                    &instances,
                    self.data.val_z,
                    self.data.standardizer,
                )?;
                Ok(horizons
                    .iter()
                    .map(|&h| {
                        let acc = preds.errors(self.data.val_raw, &[h]);
                        let score = if preds.is_empty() {
                            SepaScore::default()
                        } else {
                            preds.sepa(self.data.val_raw, h, &val_events, &self.cfg.sepa)
                        };
                        CloudletEval {
                            cloudlet: s.id,
                            local_nodes: local.len(),
                            mae: acc.mae(),
                            rmse: acc.rmse(),
                            wmape: acc.wmape(),
                            sepa: score.value(),
                            sepa_correct: score.correct,
                            sepa_total: score.total,
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = states.iter().map(|s| s.local_nodes.len() as f64).collect();
        let horizons = horizons
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let cloudlets: Vec<CloudletEval> = per_cloudlet.iter().map(|v| v[i].clone()).collect();
                let agg = |f: fn(&CloudletEval) -> Option<f64>| {
                    aggregate_weighted(&cloudlets.iter().map(f).collect::<Vec<_>>(), &weights)
                };
                HorizonEval {
                    horizon: h,
                    mae: agg(|c| c.mae),
                    rmse: agg(|c| c.rmse),
                    wmape: agg(|c| c.wmape),
                    sepa: agg(|c| c.sepa),
                    cloudlets,
                }
            })
            .collect();
        Ok(FinalEvaluation { horizons })
    }
}

/// Convenience wrapper: build a [`Simulation`] and run it.
pub fn run_online(data: OnlineData<'_>, cfg: OnlineConfig, factory: &dyn ModelFactory) -> Result<OnlineOutcome> {
    Simulation::new(data, cfg, factory)?.run()
}
