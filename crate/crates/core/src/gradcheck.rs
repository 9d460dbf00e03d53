//! End-to-end finite-difference check of the whole model.

use urm_tensor::gradcheck::{check, GradCheckConfig, GradCheckResult};
use urm_tensor::{Tape, Tensor, TensorError};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::{Batch, ForwardOptions, FrozenLoops, Urm};

/// The tiny model used by the end-to-end check: two layers, width 16,
/// three inner loops of which one is forward-only, two outer steps.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        hidden: 16,
        heads: 2,
        inner_loops: 3,
        forward_only_loops: 1,
        act_max_steps: 2,
        max_seq_len: 6,
        puzzle_count: 2,
        unembed_init_scale: 1.0,
        ..ModelConfig::default()
    }
}

/// A batch of two length-6 sequences with a mix of supervised and ignored
/// positions.
pub fn tiny_batch(cfg: &ModelConfig) -> Result<Batch> {
    let tokens = vec![3, 7, 2, 5, 12, 1, 4, 4, 2, 9, 6, 1];
    let ignore = urm_tasks::tokens::IGNORE_INDEX;
    let targets = vec![5, 8, ignore, 3, 11, ignore, 6, 4, ignore, 10, 9, ignore];
    let second = usize::from(cfg.puzzle_count > 1);
    Batch::new(tokens, targets, vec![0, second], 6)
}

/// Compares the tape gradient of the training loss with central
/// differences over every parameter, in `f64`.
pub fn model_gradcheck(cfg: ModelConfig, seed: u64, gc: GradCheckConfig) -> Result<GradCheckResult> {
    let mut model = Urm::<f64>::new(cfg, seed)?;
    // the puzzle table starts at zero; perturb it so its gradient path is
    // exercised away from the trivial point
    if let Some(pz) = model.layout.puzzle {
        for (i, v) in model.params.param_mut(pz).value.data_mut().iter_mut().enumerate() {
            *v = ((i * 7919) % 13) as f64 / 13.0 - 0.5;
        }
    }
    let batch = tiny_batch(&model.cfg)?;
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.value.clone()).collect();
    let opts = ForwardOptions {
        loss: true,
        record_attention: false,
    };
    // forward-only loops are constants of the truncated objective, so
    // perturbed passes reuse their unperturbed outputs
    let mut record = FrozenLoops::record();
    model.forward_frozen(&Tape::inference(), &inputs, &batch, opts, Some(&mut record))?;
    let result = check(
        "urm-end-to-end",
        &inputs,
        |tape, p| {
            let mut frozen = FrozenLoops::replay(record.values.clone());
            let out = model
                .forward_frozen(tape, p, &batch, opts, Some(&mut frozen))
                .map_err(|e| TensorError::Invalid {
                    op: "urm.forward",
                    msg: e.to_string(),
                })?;
            Ok(out.loss.expect("loss requested"))
        },
        gc,
    )?;
    Ok(result)
}
