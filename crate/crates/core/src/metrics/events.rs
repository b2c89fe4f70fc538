//! Sudden slowdown / recovery detection on raw speeds.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SepaConfig {
    /// Lookback `H` in steps.
    pub lookback: usize,
    /// `δ_change`, mile/h.
    pub delta_change: f64,
    /// `δ_tol`, mile/h.
    pub delta_tol: f64,
    /// `τ_c`, steps.
    pub cooldown: usize,
}

impl Default for SepaConfig {
    fn default() -> Self {
        Self {
            lookback: 12,
            delta_change: 20.0,
            delta_tol: 10.0,
            cooldown: 6,
        }
    }
}

impl SepaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0
            || self.cooldown == 0
            || !(self.delta_change > 0.0)
            || !(self.delta_tol > 0.0)
        {
            return Err(Error::Config(format!("SEPA parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Slowdown,
    Recovery,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Slowdown => "slowdown",
            EventKind::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Column of the series the event was found in.
    pub node: usize,
    /// Absolute step index.
    pub t: usize,
    pub kind: EventKind,
    /// Largest qualifying speed difference, mile/h.
    pub magnitude: f64,
}

/// Scan every node of `truth` (rows are steps, first row is step `offset`).
///
/// At step `t` an event fires if some `k` in `[t-H, t-1]` satisfies
/// `X_t <= X_k - δ_change` (slowdown) or `X_t >= X_k + δ_change` (recovery).
/// Slowdown wins when both hold. After an event the node is silent for
/// `τ_c` steps. Events come out ordered by `(node, t)`.
pub fn detect_sudden_events(
    truth: DMatrixView<'_, f64>,
    offset: usize,
    cfg: &SepaConfig,
) -> Vec<EventRecord> {
    let mut events = Vec::new();
    for node in 0..truth.ncols() {
        detect_node(truth.column(node).iter().copied(), node, offset, cfg, &mut events);
    }
    events
}

fn detect_node<I>(series: I, node: usize, offset: usize, cfg: &SepaConfig, out: &mut Vec<EventRecord>)
where
    I: Iterator<Item = f64>,
{
    let x: Vec<f64> = series.collect();
    // Monotone deques over the trailing window, holding step indices.
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    let mut next_allowed = 1;
    for t in 0..x.len() {
        if t > cfg.lookback {
            let oldest = t - cfg.lookback;
            while maxq.front().is_some_and(|&k| k < oldest) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&k| k < oldest) {
                minq.pop_front();
            }
        }
        if t >= next_allowed {
            if let (Some(&hi), Some(&lo)) = (maxq.front(), minq.front()) {
                let kind = if x[t] <= x[hi] - cfg.delta_change {
                    Some((EventKind::Slowdown, x[hi] - x[t]))
                } else if x[t] >= x[lo] + cfg.delta_change {
                    Some((EventKind::Recovery, x[t] - x[lo]))
                } else {
                    None
                };
                if let Some((kind, magnitude)) = kind {
                    out.push(EventRecord {
                        node,
                        t: offset + t,
                        kind,
                        magnitude,
                    });
                    next_allowed = t + cfg.cooldown + 1;
                }
            }
        }
        while maxq.back().is_some_and(|&k| x[k] <= x[t]) {
            maxq.pop_back();
        }
        maxq.push_back(t);
        while minq.back().is_some_and(|&k| x[k] >= x[t]) {
            minq.pop_back();
        }
        minq.push_back(t);
    }
}

/// Debug dump as `node,t,kind,magnitude`.
pub fn write_events_csv(path: &Path, events: &[EventRecord], node_ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "t", "kind", "magnitude"])?;
    for e in events {
        w.write_record([
            node_ids.get(e.node).cloned().unwrap_or_else(|| e.node.to_string()),
            e.t.to_string(),
            e.kind.as_str().to_string(),
            format!("{}", e.magnitude),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn column(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn constant_series_is_quiet() {
        let m = column(&[60.0; 50]);
        assert!(detect_sudden_events(m.as_view(), 0, &SepaConfig::default()).is_empty());
    }

    #[test]
    fn single_drop() {
        let m = column(&[60.0, 60.0, 60.0, 35.0]);
        let ev = detect_sudden_events(m.as_view(), 0, &SepaConfig::default());
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].t, ev[0].kind), (3, EventKind::Slowdown));
        assert_eq!(ev[0].magnitude, 25.0);
    }

    #[test]
    fn cooldown_suppresses_recovery() {
        let m = column(&[60.0, 35.0, 60.0]);
        let ev = detect_sudden_events(m.as_view(), 100, &SepaConfig::default());
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].t, ev[0].kind), (101, EventKind::Slowdown));
    }

    #[test]
    fn recovery_after_cooldown() {
        let mut v = vec![60.0; 3];
        v.extend([30.0; 10]);
        v.extend([60.0; 8]);
        let m = column(&v);
        let ev = detect_sudden_events(m.as_view(), 0, &SepaConfig::default());
        // drop at 3, re-detected at 10 while 60 is still in the lookback;
        // the jump back at 13 is silenced until the cooldown ends at 17
        let got: Vec<_> = ev.iter().map(|e| (e.t, e.kind)).collect();
        assert_eq!(
            got,
            vec![(3, EventKind::Slowdown), (10, EventKind::Slowdown), (17, EventKind::Recovery)]
        );
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = column(&[60.0, 40.0]);
        assert_eq!(detect_sudden_events(m.as_view(), 0, &SepaConfig::default()).len(), 1);
        let m = column(&[60.0, 40.5]);
        assert!(detect_sudden_events(m.as_view(), 0, &SepaConfig::default()).is_empty());
    }

    #[test]
    fn lookback_limits_reach() {
        let cfg = SepaConfig {
            lookback: 2,
            ..SepaConfig::default()
        };
        // 60 at step 0 falls out of a 2-step lookback by step 3.
        let m = column(&[60.0, 50.0, 45.0, 39.0]);
        assert!(detect_sudden_events(m.as_view(), 0, &cfg).is_empty());
    }
}
