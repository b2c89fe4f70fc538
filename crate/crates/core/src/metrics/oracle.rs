//! Two deliberately biased predictors built straight from ground truth.

use nalgebra::{DMatrix, DMatrixView};
use rand::Rng;

use super::events::{EventKind, EventRecord, SepaConfig};

/// Noise bound of the event-perfect oracle as a fraction of `δ_tol`.
pub const PERFECT_ORACLE_FRACTION: f64 = 0.99;

/// Exact everywhere except at event steps, which are pushed `δ_tol + 1`
/// mile/h away from the truth (back toward the pre-event level).
pub fn event_blind_oracle(
    truth: DMatrixView<'_, f64>,
    offset: usize,
    events: &[EventRecord],
    cfg: &SepaConfig,
) -> DMatrix<f64> {
    let mut pred = truth.into_owned();
    let shift = cfg.delta_tol + 1.0;
    for e in events {
        if e.t < offset || e.t - offset >= pred.nrows() || e.node >= pred.ncols() {
            continue;
        }
        let delta = match e.kind {
            EventKind::Slowdown => shift,
            EventKind::Recovery => -shift,
        };
        pred[(e.t - offset, e.node)] += delta;
    }
    pred
}

/// Truth plus independent uniform noise in `(-q·δ_tol, q·δ_tol)`.
pub fn event_perfect_oracle<R: Rng + ?Sized>(
    truth: DMatrixView<'_, f64>,
    cfg: &SepaConfig,
    rng: &mut R,
) -> DMatrix<f64> {
    let bound = cfg.delta_tol * PERFECT_ORACLE_FRACTION;
    let mut pred = truth.into_owned();
    for v in pred.iter_mut() {
        *v += rng.gen_range(-bound..bound);
    }
    pred
}
