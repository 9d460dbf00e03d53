//! Transformer building blocks: attention with optional short convolutions,
//! the gated convolutional feed-forward block and its variants, embeddings
//! and positional encodings.

use urm_tensor::{AttentionOptions, Scalar, Tape, Tensor};

use crate::config::{ConvActivation, ConvPosition, FfnKind, ModelConfig, NormPlacement, PositionalScheme};
use crate::error::Result;
use crate::params::LayerParams;

/// Per-call sequence information shared by all blocks.
#[derive(Clone, Copy, Debug)]
pub struct SeqCtx<'a> {
    pub seq_len: usize,
    /// `false` marks padding keys that must not be attended.
    pub key_mask: Option<&'a [bool]>,
}

/// `[len × d]` table with `sin(pos·ω_i)` in even and `cos(pos·ω_i)` in odd
/// columns, `ω_i = 10000^(−2i/d)`.
pub fn sinusoidal(len: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; len * d];
    for pos in 0..len {
        for j in 0..d {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * i / d as f64);
            out[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    out
}

/// Sinusoidal row for loop index `step`.
pub fn depth_row<S: Scalar>(step: usize, d: usize) -> Tensor<S> {
    let row = sinusoidal(step + 1, d);
    Tensor::from_f64(vec![d], &row[step * d..]).expect("length d")
}

fn conv_apply<S: Scalar>(
    tape: &Tape<S>,
    x: &Tensor<S>,
    kernel: &Tensor<S>,
    heads: usize,
    per_head: bool,
    seq_len: usize,
) -> Result<Tensor<S>> {
    let k = kernel.last_dim();
    let full = if per_head {
        tape.repeat_rows(kernel, heads)?
    } else {
        kernel.clone()
    };
    Ok(tape.dwconv1d(x, &full, k - 1, seq_len)?)
}

/// Multi-head self-attention without the residual and norm.
///
/// Returns the projected output `[rows × d]` and the mixing weights
/// `[batch × heads × T × T]`.
pub fn mhsa<S: Scalar>(
    tape: &Tape<S>,
    p: &[Tensor<S>],
    lp: &LayerParams,
    cfg: &ModelConfig,
    ctx: SeqCtx<'_>,
    x: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let pos = cfg.conv_position;
    let h = cfg.heads;
    let conv = |t: Tensor<S>, at: ConvPosition| -> Result<Tensor<S>> {
        match lp.attn_conv {
            Some(c) if pos == at => conv_apply(tape, &t, &p[c], h, at.per_head(), ctx.seq_len),
            _ => Ok(t),
        }
    };
    let mut q = conv(tape.matmul(x, &p[lp.wq])?, ConvPosition::AfterQuery)?;
    let mut k = conv(tape.matmul(x, &p[lp.wk])?, ConvPosition::AfterKey)?;
    let v = conv(tape.matmul(x, &p[lp.wv])?, ConvPosition::AfterValue)?;
    if cfg.positional == PositionalScheme::Rotary {
        q = tape.rope(&q, ctx.seq_len, h, cfg.rope_base)?;
        k = tape.rope(&k, ctx.seq_len, h, cfg.rope_base)?;
    }
    let opts = AttentionOptions {
        seq_len: ctx.seq_len,
        heads: h,
        scale: 1.0 / (cfg.head_dim() as f64).sqrt(),
        softmax: cfg.attention_softmax,
        causal: cfg.causal,
        key_mask: ctx.key_mask,
    };
    let (o, probs) = tape.attention(&q, &k, &v, opts)?;
    let o = conv(o, ConvPosition::AfterSdpa)?;
    let o = conv(o, ConvPosition::BeforeOutputProj)?;
    Ok((tape.matmul(&o, &p[lp.wo])?, probs))
}

/// `Y = σ(W_dwconv ∗ (SiLU(G) ⊙ U)) W_down` with `[G, U] = X W_up`.
///
/// Without a kernel this is the plain gated block `(SiLU(G) ⊙ U) W_down`.
pub fn conv_swiglu<S: Scalar>(
    tape: &Tape<S>,
    x: &Tensor<S>,
    w_up: &Tensor<S>,
    kernel: Option<&Tensor<S>>,
    w_down: &Tensor<S>,
    activation: ConvActivation,
    seq_len: usize,
) -> Result<Tensor<S>> {
    let m = w_down.rows();
    let up = tape.matmul(x, w_up)?;
    let gate = tape.slice_cols(&up, 0, m)?;
    let value = tape.slice_cols(&up, m, 2 * m)?;
    let hidden = tape.mul(&tape.silu(&gate)?, &value)?;
    let hidden = conv_then_act(tape, hidden, kernel, activation, seq_len)?;
    Ok(tape.matmul(&hidden, w_down)?)
}

fn conv_then_act<S: Scalar>(
    tape: &Tape<S>,
    hidden: Tensor<S>,
    kernel: Option<&Tensor<S>>,
    activation: ConvActivation,
    seq_len: usize,
) -> Result<Tensor<S>> {
    let Some(kernel) = kernel else {
        return Ok(hidden);
    };
    let mixed = tape.dwconv1d(&hidden, kernel, kernel.last_dim() - 1, seq_len)?;
    Ok(match activation {
        ConvActivation::Silu => tape.silu(&mixed)?,
        ConvActivation::Identity => mixed,
    })
}

/// The feed-forward block selected by `cfg.ffn`, with the (f) convolution
/// when configured.
pub fn ffn<S: Scalar>(
    tape: &Tape<S>,
    p: &[Tensor<S>],
    lp: &LayerParams,
    cfg: &ModelConfig,
    ctx: SeqCtx<'_>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let kernel = lp.ffn_conv.map(|i| &p[i]);
    match cfg.ffn {
        FfnKind::Swiglu => conv_swiglu(
            tape,
            x,
            &p[lp.w_up],
            kernel,
            &p[lp.w_down],
            cfg.conv_activation,
            ctx.seq_len,
        ),
        FfnKind::Silu | FfnKind::Relu => {
            let up = tape.matmul(x, &p[lp.w_up])?;
            let act = if cfg.ffn == FfnKind::Silu {
                tape.silu(&up)?
            } else {
                tape.relu(&up)?
            };
            let hidden = conv_then_act(tape, act, kernel, cfg.conv_activation, ctx.seq_len)?;
            Ok(tape.matmul(&hidden, &p[lp.w_down])?)
        }
    }
}

/// One shared layer: attention then feed-forward, each with a residual and
/// RMSNorm. Returns the output and the attention weights.
pub fn transition_block<S: Scalar>(
    tape: &Tape<S>,
    p: &[Tensor<S>],
    lp: &LayerParams,
    cfg: &ModelConfig,
    ctx: SeqCtx<'_>,
    x: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let eps = cfg.norm_eps;
    match cfg.norm {
        NormPlacement::Post => {
            let (a, probs) = mhsa(tape, p, lp, cfg, ctx, x)?;
            let h = tape.rmsnorm(&tape.add(x, &a)?, &p[lp.norm1], eps)?;
            let f = ffn(tape, p, lp, cfg, ctx, &h)?;
            let y = tape.rmsnorm(&tape.add(&h, &f)?, &p[lp.norm2], eps)?;
            Ok((y, probs))
        }
        NormPlacement::Pre => {
            let (a, probs) = mhsa(tape, p, lp, cfg, ctx, &tape.rmsnorm(x, &p[lp.norm1], eps)?)?;
            let h = tape.add(x, &a)?;
            let f = ffn(tape, p, lp, cfg, ctx, &tape.rmsnorm(&h, &p[lp.norm2], eps)?)?;
            Ok((tape.add(&h, &f)?, probs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_at_origin_alternates() {
        let row = sinusoidal(1, 6);
        assert_eq!(row, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let d1 = depth_row::<f64>(1, 4);
        assert!((d1.data()[0] - 1f64.sin()).abs() < 1e-15);
        assert!((d1.data()[1] - 1f64.cos()).abs() < 1e-15);
    }
}
