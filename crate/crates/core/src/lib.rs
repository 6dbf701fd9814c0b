//! Max-min fair precoding for the multi-user MISO downlink with partial
//! channel knowledge at the transmitter, using a common (multicast) message
//! on top of the private per-user messages.
//!
//! The transmitter knows a channel estimate and the error statistics. It
//! maximizes the minimum average rate over Monte-Carlo realizations of the
//! channel by alternating between MMSE receivers ([`awmse`]), a
//! water-filling split of the common rate ([`partition`]) and a convex
//! precoder update solved by an in-crate interior-point method
//! ([`cone_solver`]); [`ao`] drives the loop and [`harness`] runs the
//! convergence and ergodic-rate experiments.

pub mod ao;
pub mod awmse;
pub mod cone_solver;
pub mod error;
pub mod harness;
pub mod mmse;
pub mod model;
pub mod partition;
pub mod reference;
mod sum;
pub mod verify;

pub use ao::{ao_solve, AoConfig, AoResult, Init, Mode};
pub use awmse::{AverageRates, AwmseComponents, EqualizerWeightSet};
pub use cone_solver::{ConvexQcqp, SolverReport, SolverSettings, SolverStatus};
pub use error::{Error, Result};
pub use harness::{
    achieved_min_rate, run_convergence, run_ergodic, ErRecord, ExperimentSpec, Instance, ScenarioTemplate,
};
pub use mmse::{LinkStats, Precoder, RatePair, UserPoint};
pub use model::{Channel, ErrorModel, RngStream, SampleSet, Scenario};
pub use partition::PartitionResult;
