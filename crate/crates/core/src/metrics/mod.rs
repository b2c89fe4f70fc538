//! Regression metrics, the sudden-event accuracy score and its oracle baselines.

mod events;
mod oracle;

pub use events::{detect_sudden_events, write_events_csv, EventKind, EventRecord, SepaConfig};
pub use oracle::{event_blind_oracle, event_perfect_oracle, PERFECT_ORACLE_FRACTION};

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running sums behind MAE, RMSE and WMAPE.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorAccumulator {
    pub count: usize,
    pub abs_sum: f64,
    pub sq_sum: f64,
    pub truth_sum: f64,
}

impl ErrorAccumulator {
    pub fn push(&mut self, pred: f64, truth: f64) {
        let e = pred - truth;
        self.count += 1;
        self.abs_sum += e.abs();
        self.sq_sum += e * e;
        self.truth_sum += truth;
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        self.count += other.count;
        self.abs_sum += other.abs_sum;
        self.sq_sum += other.sq_sum;
        self.truth_sum += other.truth_sum;
    }

    pub fn mae(&self) -> Option<f64> {
        (self.count > 0).then(|| self.abs_sum / self.count as f64)
    }

    pub fn rmse(&self) -> Option<f64> {
        (self.count > 0).then(|| (self.sq_sum / self.count as f64).sqrt())
    }

    /// Percent.
    pub fn wmape(&self) -> Option<f64> {
        (self.count > 0 && self.truth_sum > 0.0).then(|| self.abs_sum / self.truth_sum * 100.0)
    }

    pub fn summary(&self) -> RegressionMetrics {
        RegressionMetrics {
            mae: self.mae(),
            rmse: self.rmse(),
            wmape: self.wmape(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub wmape: Option<f64>,
}

fn accumulate(pred: &[f64], truth: &[f64]) -> Result<ErrorAccumulator> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("no entries to score".into()));
    }
    let mut acc = ErrorAccumulator::default();
    for (&p, &t) in pred.iter().zip(truth) {
        acc.push(p, t);
    }
    Ok(acc)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok(accumulate(pred, truth)?.abs_sum / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    Ok((accumulate(pred, truth)?.sq_sum / pred.len() as f64).sqrt())
}

/// Weighted MAPE in percent.
pub fn wmape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    accumulate(pred, truth)?.wmape().ok_or(Error::ZeroTruthSum)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SepaScore {
    pub correct: usize,
    pub total: usize,
}

impl SepaScore {
    /// `correct / total`, absent when no event was seen.
    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    pub fn merge(&mut self, other: SepaScore) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

/// Score `pred` against `events` on the step-aligned slices `pred` / `truth`
/// whose first row is absolute step `offset`. Events outside the slice or on
/// columns it does not contain are ignored.
pub fn sepa(
    pred: DMatrixView<'_, f64>,
    truth: DMatrixView<'_, f64>,
    offset: usize,
    events: &[EventRecord],
    cfg: &SepaConfig,
) -> SepaScore {
    let mut score = SepaScore::default();
    for e in events {
        if e.t < offset || e.t - offset >= truth.nrows() || e.node >= truth.ncols() {
            continue;
        }
        let row = e.t - offset;
        score.total += 1;
        if (pred[(row, e.node)] - truth[(row, e.node)]).abs() <= cfg.delta_tol {
            score.correct += 1;
        }
    }
    score
}

/// `Σ wᵢvᵢ / Σ wᵢ` over present values; absent when nothing is present.
pub fn aggregate_weighted(values: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    debug_assert_eq!(values.len(), weights.len());
    let (num, den) = values
        .iter()
        .zip(weights)
        .filter_map(|(v, &w)| v.map(|v| (v * w, w)))
        .fold((0.0, 0.0), |(a, b), (vw, w)| (a + vw, b + w));
    (den > 0.0).then(|| num / den)
}
