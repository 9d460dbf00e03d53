//! A looped reasoning model: a small stack of transformer layers
//! applied repeatedly with shared weights, trained with truncated
//! backpropagation through the loops and per-token adaptive halting.
//!
//! Tensors and autodiff come from `urm-tensor`; tasks, tokenisation and
//! evaluation from `urm-tasks`.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod dump;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod predict;
pub mod reference;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use error::{CoreError, Result};
pub use model::{ActTrace, Batch, ForwardOptions, ForwardOutput, FrozenLoops, Urm};
pub use optim::{OptimConfig, Optimizer, OptimizerKind};
pub use params::{Layout, Param, ParamKind, ParamStore};
pub use predict::{predict_batch, UrmPredictor};
pub use train::{sample_batch, train_step, StepStats};
