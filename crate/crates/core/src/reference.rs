//! Slow, independent reimplementations used as oracles by the tests and
//! the acceptance run. Nothing here is on the training path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use urm_tasks::tokens::{IGNORE_INDEX, VOCAB_SIZE};
use urm_tensor::{Tape, Tensor};

use crate::blocks::{transition_block, SeqCtx};
use crate::error::Result;
use crate::model::{Batch, Urm};

pub fn naive_matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|p| a[i * k + p] * b[p * m + j]).sum();
        }
    }
    out
}

/// Random tokens with a deterministic target map and every fourth token
/// ignored; sequence `s` uses puzzle row `s % puzzles`.
pub fn random_token_batch(rng: &mut ChaCha8Rng, seqs: usize, t: usize, puzzles: usize) -> Batch {
    let tokens: Vec<usize> = (0..seqs * t).map(|_| rng.random_range(1..VOCAB_SIZE)).collect();
    let targets = tokens
        .iter()
        .map(|&x| if x % 4 == 0 { IGNORE_INDEX } else { (x * 5) % VOCAB_SIZE })
        .collect();
    let rows = (0..seqs).map(|s| s % puzzles).collect();
    Batch::new(tokens, targets, rows, t).expect("consistent lengths")
}

/// Stage-by-stage convolutional gated block with a SiLU after the causal
/// convolution: up-projection, gate, per-channel convolution, down.
pub fn conv_swiglu_reference(
    x: &[f64],
    w_up: &[f64],
    kernel: &[f64],
    w_down: &[f64],
    (rows, t, d, m, k): (usize, usize, usize, usize, usize),
) -> Vec<f64> {
    let up = naive_matmul(x, w_up, rows, d, 2 * m);
    let silu = |z: f64| z / (1.0 + (-z).exp());
    let mut gated = vec![0.0; rows * m];
    for r in 0..rows {
        for c in 0..m {
            gated[r * m + c] = silu(up[r * 2 * m + c]) * up[r * 2 * m + m + c];
        }
    }
    let mut mixed = vec![0.0; rows * m];
    for r in 0..rows {
        let pos = r % t;
        for c in 0..m {
            let mut acc = 0.0;
            for j in 0..k {
                // tap k-1 sits on the current token, earlier taps look back
                let back = k - 1 - j;
                if back <= pos {
                    acc += kernel[c * k + j] * gated[(r - back) * m + c];
                }
            }
            mixed[r * m + c] = silu(acc);
        }
    }
    naive_matmul(&mixed, w_down, rows, m, d)
}

fn values(model: &Urm<f64>) -> Vec<Tensor<f64>> {
    model.params.iter().map(|p| p.value.clone()).collect()
}

/// Gradients of the truncated loss recomputed from scratch: the first `n`
/// loops run on a separate inference tape and their output re-enters as a
/// plain constant. Assumes a single outer step.
pub fn truncation_reference(model: &Urm<f64>, batch: &Batch, n: usize) -> Result<Vec<Vec<f64>>> {
    let ctx = SeqCtx {
        seq_len: batch.seq_len,
        key_mask: batch.key_mask(),
    };
    let values = values(model);
    let frozen = {
        let tape = Tape::inference();
        let e = model.embed(&tape, &values, batch)?;
        let mut z: Option<Tensor<f64>> = None;
        for step in 0..n {
            let x = model.loop_input(&tape, &e, z.as_ref(), step)?;
            z = Some(model.stack(&tape, &values, ctx, &x, None)?);
        }
        z.map(|z| Tensor::new(z.shape().to_vec(), z.to_vec())).transpose()?
    };
    let tape = Tape::new();
    let p = model.bind(&tape);
    let e = model.embed(&tape, &p, batch)?;
    let mut z = frozen;
    let mut loss: Option<Tensor<f64>> = None;
    for step in n..model.cfg.inner_loops {
        let x = model.loop_input(&tape, &e, z.as_ref(), step)?;
        let out = model.stack(&tape, &p, ctx, &x, None)?;
        let ce = tape.cross_entropy(&model.unembed(&tape, &p, &out)?, &batch.targets, IGNORE_INDEX)?;
        loss = Some(match loss {
            Some(l) => tape.add(&l, &ce)?,
            None => ce,
        });
        z = Some(out);
    }
    // the halting head receives gradient only through the output mixture,
    // which with a single outer step is the constant weight 1
    let loss = loss.expect("at least one trainable loop");
    let g = tape.backward(&loss)?;
    Ok(p.iter().map(|t| g.get_or_zeros(t)).collect())
}

/// Embedding, the layer stack once, unembedding: an ordinary transformer
/// written against the block API only.
pub fn vanilla_logits(model: &Urm<f64>, batch: &Batch) -> Result<Tensor<f64>> {
    let tape = Tape::inference();
    let p = values(model);
    let ctx = SeqCtx {
        seq_len: batch.seq_len,
        key_mask: batch.key_mask(),
    };
    let mut h = model.embed(&tape, &p, batch)?;
    for lp in &model.layout.layers {
        h = transition_block(&tape, &p, lp, &model.cfg, ctx, &h)?.0;
    }
    Ok(tape.matmul(&h, &p[model.layout.unembed])?)
}

/// Halting weights from recorded per-step probabilities, one token at a
/// time: each step adds its probability until the running total would
/// reach `1 − epsilon` or the cap is hit, and that step takes the
/// remainder.
pub fn act_deltas(probs: &[Vec<f64>], cap: usize, epsilon: f64) -> Vec<Vec<f64>> {
    let rows = probs.first().map_or(0, Vec::len);
    let mut cum = vec![0.0f64; rows];
    let mut done = vec![false; rows];
    probs
        .iter()
        .enumerate()
        .map(|(s, p)| {
            (0..rows)
                .map(|i| {
                    if done[i] {
                        0.0
                    } else if s + 1 == cap || cum[i] + p[i] >= 1.0 - epsilon {
                        done[i] = true;
                        1.0 - cum[i]
                    } else {
                        cum[i] += p[i];
                        p[i]
                    }
                })
                .collect()
        })
        .collect()
}
