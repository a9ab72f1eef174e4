//! Reverse-mode differentiation, the Adam optimizer, the direct-optimization
//! loop, and the finite-difference gradient checker.

pub mod adam;
pub mod gradcheck;
pub mod optimize;
pub mod tape;

pub use adam::{AdamHyper, AdamState, LrSchedule};
pub use gradcheck::{gradcheck_pipeline, GradcheckReport};
pub use optimize::{optimize, OptimizeError, RunResult, RunSettings, StepRecord};
pub use tape::{Dims, Gradients, NodeId, Tape};
