//! Sample assembly and model evaluation on a cloudlet's subgraph.

use nalgebra::DMatrix;

use crate::dataset::{Instance, SpeedSeries, Standardizer};
use crate::error::Result;
use crate::forecaster::{Forecaster, ForecasterParams, Sample};
use crate::graph::InducedSubgraph;
use crate::metrics::{sepa, ErrorAccumulator, EventRecord, SepaConfig, SepaScore};

/// `lookback × subgraph` standardized input of one instance.
pub fn instance_input(z: &SpeedSeries, sub: &InducedSubgraph, inst: &Instance) -> DMatrix<f64> {
    DMatrix::from_fn(inst.lookback, sub.nodes.len(), |r, c| z.get(inst.t0 + r, sub.nodes[c]))
}

/// Training samples scored on the subgraph's local nodes.
pub fn build_samples(z: &SpeedSeries, sub: &InducedSubgraph, instances: &[Instance]) -> Vec<Sample> {
    instances
        .iter()
        .map(|inst| {
            let first = inst.t0 + inst.lookback;
            Sample {
                input: instance_input(z, sub, inst),
                target: DMatrix::from_fn(inst.horizon, sub.n_local, |r, c| z.get(first + r, sub.nodes[c])),
            }
        })
        .collect()
}

/// Raw-unit predictions of a run of stride-1 instances on the local nodes.
///
/// `by_horizon[h − 1]` has one row per instance; row `i` predicts absolute
/// step `first_target(h) + i`.
#[derive(Debug, Clone)]
pub struct WindowPredictions {
    pub by_horizon: Vec<DMatrix<f64>>,
    first_input_end: usize,
    local: Vec<usize>,
}

impl WindowPredictions {
    pub fn first_target(&self, h: usize) -> usize {
        self.first_input_end + h - 1
    }

    pub fn len(&self) -> usize {
        self.by_horizon.first().map_or(0, |m| m.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw truth aligned with `by_horizon[h − 1]`.
    pub fn truth(&self, raw: &SpeedSeries, h: usize) -> DMatrix<f64> {
        let start = self.first_target(h);
        DMatrix::from_fn(self.len(), self.local.len(), |r, c| raw.get(start + r, self.local[c]))
    }

    /// Errors accumulated over the given horizons.
    pub fn errors(&self, raw: &SpeedSeries, horizons: &[usize]) -> ErrorAccumulator {
        let mut acc = ErrorAccumulator::default();
        for &h in horizons {
            let truth = self.truth(raw, h);
            for (p, t) in self.by_horizon[h - 1].iter().zip(truth.iter()) {
                acc.push(*p, *t);
            }
        }
        acc
    }

    /// SEPA at horizon `h`; `events` use local column indices and absolute
    /// steps of `raw`.
    pub fn sepa(&self, raw: &SpeedSeries, h: usize, events: &[EventRecord], cfg: &SepaConfig) -> SepaScore {
        let truth = self.truth(raw, h);
        sepa(
            self.by_horizon[h - 1].as_view(),
            truth.as_view(),
            self.first_target(h),
            events,
            cfg,
        )
    }
}

pub fn predict_window(
    model: &dyn Forecaster,
    params: &ForecasterParams,
    sub: &InducedSubgraph,
    instances: &[Instance],
    z: &SpeedSeries,
    standardizer: &Standardizer,
) -> Result<WindowPredictions> {
    let horizon = instances.first().map_or(0, |i| i.horizon);
    debug_assert!(instances.windows(2).all(|w| w[1].t0 == w[0].t0 + 1), "instances must be stride 1");
    let local: Vec<usize> = sub.nodes[..sub.n_local].to_vec();
    let mut by_horizon = vec![DMatrix::zeros(instances.len(), local.len()); horizon];
    for (row, inst) in instances.iter().enumerate() {
        let pred = model.predict(params, &instance_input(z, sub, inst))?;
        for (h, m) in by_horizon.iter_mut().enumerate() {
            for (c, &node) in local.iter().enumerate() {
                m[(row, c)] = standardizer.destandardize_value(node, pred[(h, c)]);
            }
        }
    }
    Ok(WindowPredictions {
        by_horizon,
        first_input_end: instances.first().map_or(0, |i| i.t0 + i.lookback),
        local,
    })
}
