//! Model hyperparameters and ablation switches.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Where the depthwise short convolution sits inside a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvPosition {
    None,
    /// (a) on the per-head attention output.
    AfterSdpa,
    /// (b) on the per-head value projection.
    AfterValue,
    /// (c) on the per-head key projection.
    AfterKey,
    /// (d) on the per-head query projection.
    AfterQuery,
    /// (e) on the concatenated heads, before the output projection.
    BeforeOutputProj,
    /// (f) on the gated activation inside the feed-forward block.
    AfterMlpExpansion,
}

impl ConvPosition {
    pub const ALL: [ConvPosition; 7] = [
        ConvPosition::None,
        ConvPosition::AfterSdpa,
        ConvPosition::AfterValue,
        ConvPosition::AfterKey,
        ConvPosition::AfterQuery,
        ConvPosition::BeforeOutputProj,
        ConvPosition::AfterMlpExpansion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ConvPosition::None => "none",
            ConvPosition::AfterSdpa => "a",
            ConvPosition::AfterValue => "b",
            ConvPosition::AfterKey => "c",
            ConvPosition::AfterQuery => "d",
            ConvPosition::BeforeOutputProj => "e",
            ConvPosition::AfterMlpExpansion => "f",
        }
    }

    /// Positions whose kernel is shared across heads (one `head_dim`-channel
    /// kernel applied to every head).
    pub fn per_head(self) -> bool {
        matches!(
            self,
            ConvPosition::AfterSdpa | ConvPosition::AfterValue | ConvPosition::AfterKey | ConvPosition::AfterQuery
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnKind {
    /// Gated: `silu(x W_g) ⊙ (x W_u)`.
    Swiglu,
    Silu,
    Relu,
}

/// Activation applied right after the feed-forward convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvActivation {
    Silu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    /// `norm(x + f(x))`
    Post,
    /// `x + f(norm(x))`
    Pre,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionalScheme {
    Sinusoidal,
    Rotary,
    Learned,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PuzzleEmbeddingMode {
    PerInstance,
    PerFamily,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActMode {
    /// Every token halts on its own.
    Token,
    /// Halting probabilities are averaged over each sequence.
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossNormalization {
    /// Sum of per-loop cross-entropies.
    Sum,
    /// Sum divided by the number of supervised terms.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Applications of the shared layer stack per outer step (M).
    pub inner_loops: usize,
    /// Leading inner loops run without gradient (N).
    pub forward_only_loops: usize,
    pub act_max_steps: usize,
    pub halt_epsilon: f64,
    pub act_mode: ActMode,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub conv_position: ConvPosition,
    pub conv_kernel: usize,
    pub conv_activation: ConvActivation,
    pub ffn: FfnKind,
    pub attention_softmax: bool,
    /// Feed-forward width m; `None` means `4 * hidden`.
    pub expansion: Option<usize>,
    pub norm: NormPlacement,
    pub norm_eps: f64,
    pub positional: PositionalScheme,
    pub rope_base: f64,
    /// Adds a sinusoidal encoding of the loop index before every loop but
    /// the first.
    pub depth_encoding: bool,
    /// Re-adds the input embedding before every loop after the first.
    pub input_injection: bool,
    pub causal: bool,
    pub puzzle_embedding: PuzzleEmbeddingMode,
    /// Rows of the puzzle embedding table.
    pub puzzle_count: usize,
    pub loss_normalization: LossNormalization,
    /// Adds a cross-entropy term on the halting-weighted mixture when
    /// `act_max_steps > 1`; this is the only path that trains the halting head.
    pub supervise_mixture: bool,
    /// Weight of an optional ponder penalty on the halting remainders.
    pub ponder_cost: f64,
    pub halt_bias_init: f64,
    /// Unembedding weights are drawn with std `unembed_init_scale / sqrt(hidden)`.
    pub unembed_init_scale: f64,
}

impl Default for ModelConfig {
    /// Four layers, width 512, eight heads, eight inner loops of which two are
    /// forward-only, and at most sixteen outer steps.
    fn default() -> Self {
        Self {
            layers: 4,
            hidden: 512,
            heads: 8,
            inner_loops: 8,
            forward_only_loops: 2,
            act_max_steps: 16,
            halt_epsilon: 0.01,
            act_mode: ActMode::Token,
            vocab_size: urm_tasks::tokens::VOCAB_SIZE,
            max_seq_len: urm_tasks::tokens::seq_len(10, 10),
            conv_position: ConvPosition::AfterMlpExpansion,
            conv_kernel: 2,
            conv_activation: ConvActivation::Silu,
            ffn: FfnKind::Swiglu,
            attention_softmax: true,
            expansion: None,
            norm: NormPlacement::Post,
            norm_eps: 1e-5,
            positional: PositionalScheme::Sinusoidal,
            rope_base: 10_000.0,
            depth_encoding: true,
            input_injection: true,
            causal: false,
            puzzle_embedding: PuzzleEmbeddingMode::PerInstance,
            puzzle_count: 1,
            loss_normalization: LossNormalization::Sum,
            supervise_mixture: true,
            ponder_cost: 0.0,
            halt_bias_init: -2.0,
            unembed_init_scale: 0.1,
        }
    }
}

impl ModelConfig {
    /// Two layers of width 64, four inner loops with one forward-only, a
    /// single outer step.
    pub fn smoke() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 4,
            inner_loops: 4,
            forward_only_loops: 1,
            act_max_steps: 1,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn ffn_width(&self) -> usize {
        self.expansion.unwrap_or(4 * self.hidden)
    }

    pub fn trainable_loops(&self) -> usize {
        self.inner_loops.saturating_sub(self.forward_only_loops)
    }

    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.layers == 0 {
            v.push("layers must be at least 1".to_string());
        }
        if self.hidden == 0 || self.heads == 0 {
            v.push("hidden and heads must be positive".to_string());
        } else if !self.hidden.is_multiple_of(self.heads) {
            v.push(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if self.inner_loops == 0 {
            v.push("inner_loops must be at least 1".to_string());
        }
        if self.forward_only_loops >= self.inner_loops {
            v.push(format!(
                "forward_only_loops {} must be below inner_loops {}",
                self.forward_only_loops, self.inner_loops
            ));
        }
        if self.act_max_steps == 0 {
            v.push("act_max_steps must be at least 1".to_string());
        }
        if !(self.halt_epsilon > 0.0 && self.halt_epsilon < 0.5) {
            v.push(format!("halt_epsilon {} must lie in (0, 0.5)", self.halt_epsilon));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            v.push("vocab_size and max_seq_len must be positive".to_string());
        }
        if self.conv_kernel == 0 {
            v.push("conv_kernel must be at least 1".to_string());
        }
        if self.ffn_width() == 0 {
            v.push("expansion must be positive".to_string());
        }
        if self.positional == PositionalScheme::Rotary && !self.head_dim().is_multiple_of(2) {
            v.push("rotary positions need an even head dimension".to_string());
        }
        if self.puzzle_embedding != PuzzleEmbeddingMode::Off && self.puzzle_count == 0 {
            v.push("puzzle_count must be positive when puzzle embeddings are on".to_string());
        }
        if self.norm_eps.is_nan() || self.norm_eps <= 0.0 {
            v.push("norm_eps must be positive".to_string());
        }
        if self.ponder_cost < 0.0 {
            v.push("ponder_cost must be non-negative".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CoreError::Config(v))
        }
    }

    /// Multiply-accumulate count of one layer application per token at
    /// sequence length `t`, used to match compute budgets across ablations.
    pub fn layer_flops_per_token(&self, t: usize) -> usize {
        let d = self.hidden;
        let m = self.ffn_width();
        let up = match self.ffn {
            FfnKind::Swiglu => 2 * m,
            FfnKind::Silu | FfnKind::Relu => m,
        };
        4 * d * d + 2 * t * d + d * up + m * d
    }

    /// Layer applications per forward pass at the ACT cap.
    pub fn layer_applications(&self) -> usize {
        self.layers * self.inner_loops * self.act_max_steps
    }
}
