//! Named parameter storage and initialisation.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use urm_tensor::{Scalar, Tape, Tensor};

use crate::config::{ConvPosition, FfnKind, ModelConfig, PositionalScheme, PuzzleEmbeddingMode};
use crate::error::{CoreError, Result};

/// Coarse role of a parameter; optimizer groups are formed from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    /// Attention and feed-forward projection matrices.
    Matrix,
    /// Depthwise convolution kernels.
    Conv,
    /// Norm gains.
    Vector,
    /// Token and learned position tables.
    Embedding,
    PuzzleEmbedding,
    /// Unembedding and halting head.
    Head,
}

#[derive(Clone, Debug)]
pub struct Param<S: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<S>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<S>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let i = self.params.len();
        self.index.insert(name.clone(), i);
        self.params.push(Param { name, kind, value });
        i
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<S>> {
        self.params.iter_mut()
    }

    pub fn param(&self, i: usize) -> &Param<S> {
        &self.params[i]
    }

    pub fn param_mut(&mut self, i: usize) -> &mut Param<S> {
        &mut self.params[i]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.params[self.index_of(name)?].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        let i = self.index_of(name)?;
        Ok(&mut self.params[i].value)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers every parameter as a tracked leaf of `tape`, in store order.
    pub fn bind(&self, tape: &Tape<S>) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| tape.watch(&p.value)).collect()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Store indices of one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    /// Attention-path kernel for positions (a)–(e).
    pub attn_conv: Option<usize>,
    pub norm1: usize,
    pub norm2: usize,
    pub w_up: usize,
    /// Feed-forward kernel for position (f).
    pub ffn_conv: Option<usize>,
    pub w_down: usize,
}

/// Store indices of the whole model.
#[derive(Clone, Debug)]
pub struct Layout {
    pub layers: Vec<LayerParams>,
    pub tokens: usize,
    pub positions: Option<usize>,
    pub puzzle: Option<usize>,
    pub unembed: usize,
    pub halt_w: usize,
    pub halt_b: usize,
}

fn normal<R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn uniform<R: Rng>(rng: &mut R, shape: &[usize], bound: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn tensor<S: Scalar>(shape: &[usize], values: Vec<f64>) -> Tensor<S> {
    Tensor::from_f64(shape.to_vec(), &values).expect("shape matches generated values")
}

/// Creates and initialises all parameters. Values are drawn in `f64` so a
/// given seed yields the same model in either precision.
pub fn init_params<S: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (ParamStore<S>, Layout) {
    let d = cfg.hidden;
    let m = cfg.ffn_width();
    let k = cfg.conv_kernel;
    let hd = cfg.head_dim();
    let mut store = ParamStore::new();
    let mat = |store: &mut ParamStore<S>, rng: &mut R, name: String, rows: usize, cols: usize| {
        let std = 1.0 / (rows as f64).sqrt();
        store.push(name, ParamKind::Matrix, tensor(&[rows, cols], normal(rng, &[rows, cols], std)))
    };
    let conv = |store: &mut ParamStore<S>, rng: &mut R, name: String, channels: usize| {
        let bound = 1.0 / (k as f64).sqrt();
        store.push(name, ParamKind::Conv, tensor(&[channels, k], uniform(rng, &[channels, k], bound)))
    };
    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let wq = mat(&mut store, rng, format!("layer{l}.attn.wq"), d, d);
        let wk = mat(&mut store, rng, format!("layer{l}.attn.wk"), d, d);
        let wv = mat(&mut store, rng, format!("layer{l}.attn.wv"), d, d);
        let wo = mat(&mut store, rng, format!("layer{l}.attn.wo"), d, d);
        let attn_conv = match cfg.conv_position {
            p if p.per_head() => Some(conv(&mut store, rng, format!("layer{l}.attn.conv"), hd)),
            ConvPosition::BeforeOutputProj => Some(conv(&mut store, rng, format!("layer{l}.attn.conv"), d)),
            _ => None,
        };
        let norm1 = store.push(format!("layer{l}.norm1"), ParamKind::Vector, Tensor::full(vec![d], S::one()));
        let up_cols = match cfg.ffn {
            FfnKind::Swiglu => 2 * m,
            FfnKind::Silu | FfnKind::Relu => m,
        };
        let w_up = mat(&mut store, rng, format!("layer{l}.ffn.w_up"), d, up_cols);
        let ffn_conv = (cfg.conv_position == ConvPosition::AfterMlpExpansion)
            .then(|| conv(&mut store, rng, format!("layer{l}.ffn.conv"), m));
        let w_down = mat(&mut store, rng, format!("layer{l}.ffn.w_down"), m, d);
        let norm2 = store.push(format!("layer{l}.norm2"), ParamKind::Vector, Tensor::full(vec![d], S::one()));
        layers.push(LayerParams {
            wq,
            wk,
            wv,
            wo,
            attn_conv,
            norm1,
            norm2,
            w_up,
            ffn_conv,
            w_down,
        });
    }
    let v = cfg.vocab_size;
    let tokens = store.push(
        "embed.tokens",
        ParamKind::Embedding,
        tensor(&[v, d], normal(rng, &[v, d], 1.0)),
    );
    let positions = (cfg.positional == PositionalScheme::Learned).then(|| {
        let t = cfg.max_seq_len;
        store.push(
            "embed.positions",
            ParamKind::Embedding,
            tensor(&[t, d], normal(rng, &[t, d], 0.02)),
        )
    });
    let puzzle = (cfg.puzzle_embedding != PuzzleEmbeddingMode::Off).then(|| {
        store.push(
            "embed.puzzle",
            ParamKind::PuzzleEmbedding,
            Tensor::zeros(vec![cfg.puzzle_count, d]),
        )
    });
    let unembed_std = cfg.unembed_init_scale / (d as f64).sqrt();
    let unembed = store.push(
        "head.unembed",
        ParamKind::Head,
        tensor(&[d, v], normal(rng, &[d, v], unembed_std)),
    );
    let halt_w = store.push(
        "head.halt_w",
        ParamKind::Head,
        tensor(&[d], normal(rng, &[d], 0.1 / (d as f64).sqrt())),
    );
    let halt_b = store.push(
        "head.halt_b",
        ParamKind::Head,
        tensor(&[1], vec![cfg.halt_bias_init]),
    );
    (
        store,
        Layout {
            layers,
            tokens,
            positions,
            puzzle,
            unembed,
            halt_w,
            halt_b,
        },
    )
}
