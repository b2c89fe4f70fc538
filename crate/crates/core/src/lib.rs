//! Online traffic forecasting across cloudlets with adaptive pruning of
//! cross-cloudlet sensor features.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] builds the sensor graph, the cloudlet partition and its
//!   ℓ-hop dependency closure.
//! * [`dataset`] loads speed matrices, standardizes them and cuts them into
//!   instances and windows.
//! * [`metrics`] holds the regression metrics, the sudden-event detector and
//!   the SEPA score.
//! * [`forecaster`] defines the model interface and a linear Chebyshev
//!   graph-convolution model trained with Adam.
//! * [`pruning`] implements the per-cloudlet pruning controller.
//! * [`federation`] runs the online loop for the three collaboration
//!   strategies and meters communication.
//! * [`experiment`] wires a [`config::RunConfig`] into a full run.

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod forecaster;
pub mod graph;
pub mod metrics;
pub mod pruning;
pub mod synth;
pub mod topology_io;

pub use error::{Error, Result};
