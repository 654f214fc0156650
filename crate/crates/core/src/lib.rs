//! Dense neural-network training with full, fixed top-k and adaptive
//! (TinyProp) sparse backpropagation, with exact multiply-accumulate
//! accounting for every backward pass.

pub mod adapt;
pub mod backprop;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod grid;
pub mod network;
pub mod par;
pub mod report;
pub mod tensor;
pub mod trainer;

pub use adapt::{TinyPropConfig, TinyPropState};
pub use backprop::{Engine, EngineKind, GradientSet};
pub use datasets::Dataset;
pub use error::{Error, Result};
pub use network::{Activation, LossKind, Network, NetworkSpec};
pub use tensor::{IndexSet, Matrix};
pub use trainer::{RunReport, StepMetrics, TrainConfig};
