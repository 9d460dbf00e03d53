//! One optimisation step and deterministic batch sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use urm_tasks::{Augmentation, PuzzleInstance};
use urm_tensor::{Scalar, Tape};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::model::{Batch, ForwardOptions, Urm};
use crate::optim::Optimizer;

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Supervised terms in forward order.
    pub loss_terms: Vec<f64>,
    pub mean_act_steps: f64,
    /// Learning-rate multiplier used for this update.
    pub lr_factor: f64,
}

/// Forward, backward and one optimizer update.
pub fn train_step<S: Scalar>(model: &mut Urm<S>, opt: &mut Optimizer<S>, batch: &Batch) -> Result<StepStats> {
    let tape = Tape::new();
    let p = model.bind(&tape);
    let out = model.forward(
        &tape,
        &p,
        batch,
        ForwardOptions {
            loss: true,
            record_attention: false,
        },
    )?;
    let loss = out.loss.expect("loss requested");
    let value = loss.item().as_f64();
    if !value.is_finite() {
        return Err(CoreError::NonFinite {
            what: "loss",
            name: "training loss".into(),
        });
    }
    let mut grads = tape.backward(&loss)?;
    let flat: Vec<Vec<S>> = p
        .iter()
        .map(|t| grads.take(t).unwrap_or_else(|| vec![S::zero(); t.numel()]))
        .collect();
    let lr_factor = opt.lr_factor();
    opt.step(&mut model.params, &flat)?;
    Ok(StepStats {
        loss: value,
        loss_terms: out.loss_terms,
        mean_act_steps: out.act.mean_steps(),
        lr_factor,
    })
}

/// Draws `size` training instances with replacement, each under a random
/// symmetry of its family when `augment` is set.
pub fn sample_batch(
    train: &[PuzzleInstance],
    size: usize,
    augment: bool,
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if train.is_empty() {
        return Err(CoreError::Batch("empty training set".into()));
    }
    let picked: Vec<PuzzleInstance> = (0..size)
        .map(|_| {
            let inst = &train[rng.random_range(0..train.len())];
            if augment {
                Augmentation::random(inst.family, inst.input.rows(), 0, rng).apply_instance(inst)
            } else {
                inst.clone()
            }
        })
        .collect();
    Batch::from_instances(&picked, cfg)
}
