//! Small synthetic reasoning tasks: mini-sudoku and ARC-style grid
//! transformations, with tokenisation, invertible augmentations, dataset
//! files and pass@n scoring.
//!
//! Every generator is seeded per instance, and every instance is checked by
//! an exact oracle (a backtracking solver or the family rule) before it is
//! returned.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod families;
pub mod grid;
pub mod instance;
pub mod sudoku;
pub mod tokens;

pub use augment::{Augmentation, Dihedral};
pub use dataset::{Dataset, DatasetSpec, Manifest};
pub use error::{Result, TaskError};
pub use eval::{evaluate_pass_n, EvalMetrics, Prediction, Predictor};
pub use grid::{Grid, NUM_COLORS};
pub use instance::{PuzzleInstance, TaskFamily};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent RNG stream for instance `index` under a dataset seed.
pub fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}
