//! Mixed neighbourhood selection for multi-subject graphical models, with a
//! graphical lasso baseline, stability selection, a cohort simulator and
//! tuning and evaluation utilities.

pub mod cohort;
pub mod error;
pub mod glasso;
pub mod graph;
pub mod io;
pub mod lasso;
pub mod mns;
pub mod rng;
pub mod simulator;
pub mod stability;
pub mod tuning;

pub use cohort::CohortData;
pub use error::{Error, Result};
pub use graph::{EdgeSet, NodeSet, PrecisionMatrix, Rule, WeightedNetwork};
pub use mns::{fit_all, MnsConfig, MnsResult};
