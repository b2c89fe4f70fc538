//! Adaptive cross-cloudlet pruning.
//!
//! Per window a cloudlet protects the cross-cloudlet neighbourhood of its
//! local event nodes, prunes a fraction `p_t` of the remaining cross nodes
//! with probability increasing in their score, validates with and without a
//! random half of the survivors, and feeds the difference back into the
//! scores. A ratio controller moves `p_t` from recent SEPA against a warm-up
//! baseline.
//!
//! Score orientation: the masked-minus-pruned SEPA difference is added to
//! the masked nodes, so nodes whose absence hurts drift negative and become
//! the least likely to be pruned.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{hop_ball, CloudletPartition, WeightedGraph};

/// Added to shifted scores so every candidate has a positive weight.
pub const WEIGHT_EPSILON: f64 = 1e-6;

/// Slack on the dead-band edges so ratios that equal a band edge in exact
/// arithmetic stay in the band.
const BAND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub p_start: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub w_init: usize,
    pub w: usize,
    pub delta_margin_up: f64,
    pub delta_margin_down: f64,
    pub delta_pruning_up: f64,
    pub delta_pruning_down: f64,
    pub e_settle: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            p_start: 0.10,
            p_min: 0.10,
            p_max: 0.70,
            w_init: 2,
            w: 3,
            delta_margin_up: 0.00,
            delta_margin_down: 0.03,
            delta_pruning_up: 0.05,
            delta_pruning_down: 0.05,
            e_settle: 3,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = 0.0 <= self.p_min
            && self.p_min <= self.p_start
            && self.p_start <= self.p_max
            && self.p_max <= 1.0;
        if !ordered {
            return Err(Error::Config(format!(
                "need 0 <= p_min <= p_start <= p_max <= 1, got {} / {} / {}",
                self.p_min, self.p_start, self.p_max
            )));
        }
        if self.w == 0 || self.w_init == 0 || self.e_settle == 0 {
            return Err(Error::Config("W, W_init and E_settle must be at least 1".into()));
        }
        let steps = [
            self.delta_margin_up,
            self.delta_margin_down,
            self.delta_pruning_up,
            self.delta_pruning_down,
        ];
        if steps.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("controller margins and steps must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningState {
    pub p: f64,
    /// Accumulated score per cross-cloudlet node.
    pub scores: BTreeMap<usize, f64>,
    pub sepa_base: Option<f64>,
    base_sum: f64,
    base_count: usize,
    pub sepa_buffer: VecDeque<f64>,
    /// Windows with a defined SEPA seen by the controller.
    pub windows_seen: usize,
    pub warmup_done: bool,
    since_settle: usize,
    /// Ratio computed by the latest update, if it computed one.
    pub last_ratio: Option<f64>,
    /// Set when a settle point found a zero baseline.
    pub base_zero: bool,
}

impl PruningState {
    pub fn new(cfg: &ControllerConfig, cross_nodes: &BTreeSet<usize>) -> Self {
        Self {
            p: cfg.p_start,
            scores: cross_nodes.iter().map(|&n| (n, 0.0)).collect(),
            sepa_base: None,
            base_sum: 0.0,
            base_count: 0,
            sepa_buffer: VecDeque::with_capacity(cfg.w),
            windows_seen: 0,
            warmup_done: false,
            since_settle: 0,
            last_ratio: None,
            base_zero: false,
        }
    }

    pub fn score(&self, node: usize) -> f64 {
        self.scores.get(&node).copied().unwrap_or(0.0)
    }
}

/// Cross-cloudlet nodes within ℓ hops of any local event node of `cloudlet`.
pub fn protected_set(
    graph: &WeightedGraph,
    partition: &CloudletPartition,
    cloudlet: usize,
    event_nodes: &BTreeSet<usize>,
) -> BTreeSet<usize> {
    if event_nodes.is_empty() {
        return BTreeSet::new();
    }
    hop_ball(graph, event_nodes, partition.l_hops())
        .intersection(partition.dependencies(cloudlet))
        .copied()
        .collect()
}

/// `round(p · cross_total)` with halves rounded up, capped at `candidates`.
pub fn prune_count(p: f64, cross_total: usize, candidates: usize) -> usize {
    let m = (p * cross_total as f64 + 0.5).floor().max(0.0) as usize;
    m.min(candidates)
}

/// Selection weights `NS_i − min NS + ε` over the candidates.
pub fn prune_weights(candidates: &[usize], scores: &BTreeMap<usize, f64>) -> Vec<f64> {
    let score = |n: &usize| scores.get(n).copied().unwrap_or(0.0);
    let min = candidates.iter().map(score).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .map(|n| score(n) - min + WEIGHT_EPSILON)
        .collect()
}

/// Weighted sampling without replacement of the nodes to prune.
///
/// `cross_total` is the size of the full cross-cloudlet set the rate refers
/// to (candidates plus protected nodes).
pub fn sample_prune<R: Rng + ?Sized>(
    candidates: &[usize],
    cross_total: usize,
    scores: &BTreeMap<usize, f64>,
    p: f64,
    rng: &mut R,
) -> BTreeSet<usize> {
    let m = prune_count(p, cross_total, candidates.len());
    if m == 0 {
        return BTreeSet::new();
    }
    let weights = prune_weights(candidates, scores);
    // Efraimidis-Spirakis keys `u^(1/w)` compared through their logarithm:
    // the raw keys underflow to zero when every weight is ε-sized.
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .zip(candidates)
        .map(|(&w, &node)| {
            let u: f64 = 1.0 - rng.gen::<f64>();
            (u.ln() / w, node)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().take(m).map(|(_, node)| node).collect()
}

/// `floor(|remaining| / 2)` nodes chosen uniformly without replacement.
pub fn mask_half<R: Rng + ?Sized>(remaining: &BTreeSet<usize>, rng: &mut R) -> BTreeSet<usize> {
    let nodes: Vec<usize> = remaining.iter().copied().collect();
    index::sample(rng, nodes.len(), nodes.len() / 2)
        .into_iter()
        .map(|i| nodes[i])
        .collect()
}

/// `SEPA_masked − SEPA_pruned`; `None` when either side is undefined.
pub fn delta_sepa(sepa_pruned: Option<f64>, sepa_masked: Option<f64>) -> Option<f64> {
    Some(sepa_masked? - sepa_pruned?)
}

pub fn update_scores(scores: &mut BTreeMap<usize, f64>, masked: &BTreeSet<usize>, delta: f64) {
    for &n in masked {
        *scores.entry(n).or_insert(0.0) += delta;
    }
}

/// The step rule: up when `ratio > 1 + margin_up`, down when
/// `ratio < 1 − margin_down`, clamped to `[p_min, p_max]`.
pub fn apply_rate_rule(p: f64, ratio: f64, cfg: &ControllerConfig) -> f64 {
    let next = if ratio > 1.0 + cfg.delta_margin_up + BAND_SLACK {
        p + cfg.delta_pruning_up
    } else if ratio < 1.0 - cfg.delta_margin_down - BAND_SLACK {
        p - cfg.delta_pruning_down
    } else {
        p
    };
    next.clamp(cfg.p_min, cfg.p_max)
}

/// Advance the controller by one window.
pub fn controller_update(state: &PruningState, sepa: Option<f64>, cfg: &ControllerConfig) -> PruningState {
    let mut next = state.clone();
    next.last_ratio = None;
    let Some(sepa) = sepa else {
        return next;
    };
    next.windows_seen += 1;
    if !next.warmup_done {
        next.base_sum += sepa;
        next.base_count += 1;
        next.p = cfg.p_start;
        if next.base_count >= cfg.w_init {
            next.sepa_base = Some(next.base_sum / next.base_count as f64);
            next.warmup_done = true;
        }
        return next;
    }
    if next.sepa_buffer.len() == cfg.w {
        next.sepa_buffer.pop_front();
    }
    next.sepa_buffer.push_back(sepa);
    next.since_settle += 1;
    if next.since_settle >= cfg.e_settle {
        next.since_settle = 0;
        let win = next.sepa_buffer.iter().sum::<f64>() / next.sepa_buffer.len() as f64;
        match next.sepa_base {
            Some(base) if base > 0.0 => {
                let ratio = win / base;
                next.last_ratio = Some(ratio);
                next.p = apply_rate_rule(next.p, ratio, cfg);
            }
            _ => next.base_zero = true,
        }
    }
    next
}
