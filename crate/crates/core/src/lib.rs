//! Joint offloading, model selection and resource allocation for
//! knowledge-distillation-assisted federated learning at the edge.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! scalar to `f64`, which the experiment harness uses.

// `!(x > 0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod error;
pub mod kd;
pub mod model;
pub mod oracle;
pub mod qlearn;
pub mod runner;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ScenarioF64 = model::Scenario<f64>;
pub type AllocationF64 = model::Allocation<f64>;
pub type QTableF64 = qlearn::QTable<f64>;
pub type QConfigF64 = qlearn::QConfig<f64>;
pub type NetParamsF64 = kd::NetParams<f64>;
pub type ToyDatasetF64 = kd::ToyDataset<f64>;
