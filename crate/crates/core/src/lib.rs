//! Successor-representation based general value functions.
//!
//! A shared successor matrix `M` is learned by TD(0) alongside, for each
//! prediction target, a one-step cumulant estimate `w`; their composition
//! `φᵀMw` predicts the discounted sum of the cumulant. A direct TD(0)
//! learner of the same quantity runs next to it for comparison.

pub mod error;
pub mod features;
pub mod gridworld;
pub mod gvf;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod replay;
pub mod signals;
pub mod srlearn;
pub mod tilecode;

pub use error::{Error, Result};
pub use features::{FeatureVector, OneHotEncoder};
pub use gridworld::GridMap;
pub use gvf::{PredictorSlot, Registry, SignalId, StepSize, Transition};
pub use metrics::Method;
pub use signals::SignalSpec;
pub use srlearn::{Discount, SuccessorMatrix};
pub use tilecode::{TileCoder, TileCoderConfig};
