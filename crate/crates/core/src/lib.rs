//! Harmonic-balance solver for driven nonlinear oscillators, with an
//! inverse engine that designs control parameters for a target
//! amplitude-frequency relation.

pub mod basis;
pub mod config;
pub mod error;
pub mod hb;
pub mod inverse;
pub mod magnus;
pub mod models;
pub mod newton;
pub mod oracles;
pub mod runner;

pub use basis::{CoefficientTable, FrequencyPair, HarmonicIndexSet, MdftOperator, SamplingGrid};
pub use error::{Error, Result};
pub use hb::{ForwardProblem, HbSolution};
pub use models::DriveModel;
