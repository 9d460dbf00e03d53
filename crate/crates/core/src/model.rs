//! The looped model: a shared layer stack applied for `M` inner loops per
//! outer step, the first `N` of them without gradient, inside an adaptive
//! computation time (ACT) outer loop with per-token halting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use urm_tasks::tokens::{IGNORE_INDEX, PAD};
use urm_tasks::PuzzleInstance;
use urm_tensor::{Scalar, Tape, Tensor};

use crate::blocks::{depth_row, sinusoidal, transition_block, SeqCtx};
use crate::config::{ActMode, LossNormalization, ModelConfig, PositionalScheme, PuzzleEmbeddingMode};
use crate::error::{CoreError, Result};
use crate::params::{init_params, Layout, ParamStore};

/// A batch of equal-length token sequences packed row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    /// Per-position targets, [`IGNORE_INDEX`] where no loss applies.
    pub targets: Vec<usize>,
    /// Puzzle-embedding row per sequence.
    pub puzzle_rows: Vec<usize>,
    pub seq_len: usize,
    key_mask: Option<Vec<bool>>,
}

impl Batch {
    pub fn new(tokens: Vec<usize>, targets: Vec<usize>, puzzle_rows: Vec<usize>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 || !tokens.len().is_multiple_of(seq_len) || tokens.is_empty() {
            return Err(CoreError::Batch(format!(
                "{} tokens do not split into sequences of {seq_len}",
                tokens.len()
            )));
        }
        if targets.len() != tokens.len() || puzzle_rows.len() != tokens.len() / seq_len {
            return Err(CoreError::Batch("targets or puzzle rows have the wrong length".into()));
        }
        let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD).collect();
        let key_mask = mask.iter().any(|m| !m).then_some(mask);
        Ok(Self {
            tokens,
            targets,
            puzzle_rows,
            seq_len,
            key_mask,
        })
    }

    /// Tokenises instances to a common length (the longest one).
    pub fn from_instances(insts: &[PuzzleInstance], cfg: &ModelConfig) -> Result<Self> {
        let seq_len = insts.iter().map(PuzzleInstance::seq_len).max().unwrap_or(0);
        let mut tokens = Vec::with_capacity(insts.len() * seq_len);
        let mut targets = Vec::with_capacity(insts.len() * seq_len);
        let mut puzzle_rows = Vec::with_capacity(insts.len());
        for inst in insts {
            tokens.extend(inst.input_tokens(seq_len)?);
            targets.extend(inst.target_ids(seq_len)?);
            puzzle_rows.push(match cfg.puzzle_embedding {
                PuzzleEmbeddingMode::PerInstance => inst.id,
                PuzzleEmbeddingMode::PerFamily => inst.family.index(),
                PuzzleEmbeddingMode::Off => 0,
            });
        }
        Self::new(tokens, targets, puzzle_rows, seq_len)
    }

    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    pub fn sequences(&self) -> usize {
        self.tokens.len() / self.seq_len
    }

    pub fn key_mask(&self) -> Option<&[bool]> {
        self.key_mask.as_deref()
    }

    fn ctx(&self) -> SeqCtx<'_> {
        SeqCtx {
            seq_len: self.seq_len,
            key_mask: self.key_mask(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    /// Build the training loss from the batch targets.
    pub loss: bool,
    /// Keep every attention matrix, ordered by (outer step, inner loop, layer).
    pub record_attention: bool,
}

/// Halting bookkeeping of one forward pass. Per-step vectors have one entry
/// per token row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActTrace {
    pub steps_run: usize,
    /// Halting probabilities used at each outer step (after any sequence
    /// averaging).
    pub probs: Vec<Vec<f64>>,
    /// Mixture weights Δ at each outer step.
    pub deltas: Vec<Vec<f64>>,
    /// 1-based outer step at which each token halted.
    pub halt_step: Vec<usize>,
}

impl ActTrace {
    pub fn mean_steps(&self) -> f64 {
        if self.halt_step.is_empty() {
            return 0.0;
        }
        self.halt_step.iter().sum::<usize>() as f64 / self.halt_step.len() as f64
    }
}

pub struct ForwardOutput<S: Scalar> {
    pub loss: Option<Tensor<S>>,
    /// Value of every supervised term in order: the trainable inner loops of
    /// each outer step, then the mixture term when present.
    pub loss_terms: Vec<f64>,
    /// Halting-weighted hidden state.
    pub hidden: Tensor<S>,
    pub logits: Tensor<S>,
    pub act: ActTrace,
    pub attention: Vec<Tensor<S>>,
}

/// Output of one inner rollout.
pub struct Rollout<S: Scalar> {
    /// Top-layer output of every inner loop.
    pub states: Vec<Tensor<S>>,
    /// Cross-entropy of each trainable loop, when targets were given.
    pub losses: Vec<Tensor<S>>,
}

/// Outputs of the forward-only loops of one forward pass.
///
/// Truncation treats these outputs as constants, so a finite-difference
/// check of the truncated objective must hold them at their unperturbed
/// values: record them once, then replay them for every perturbed pass.
#[derive(Clone, Debug, Default)]
pub struct FrozenLoops<S: Scalar> {
    pub values: Vec<Tensor<S>>,
    replay: bool,
    cursor: usize,
}

impl<S: Scalar> FrozenLoops<S> {
    pub fn record() -> Self {
        Self {
            values: Vec::new(),
            replay: false,
            cursor: 0,
        }
    }

    /// Replays `values`; rewinds to the start.
    pub fn replay(values: Vec<Tensor<S>>) -> Self {
        Self {
            values,
            replay: true,
            cursor: 0,
        }
    }

    fn visit(&mut self, out: Tensor<S>) -> Result<Tensor<S>> {
        if !self.replay {
            self.values.push(out.detach());
            return Ok(out);
        }
        let v = self
            .values
            .get(self.cursor)
            .ok_or_else(|| CoreError::Batch("more forward-only loops than recorded".into()))?;
        self.cursor += 1;
        Ok(v.clone())
    }
}

#[derive(Clone, Debug)]
pub struct Urm<S: Scalar> {
    pub cfg: ModelConfig,
    pub params: ParamStore<S>,
    pub layout: Layout,
}

impl<S: Scalar> Urm<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (params, layout) = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { cfg, params, layout })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(cfg: ModelConfig, params: ParamStore<S>) -> Result<Self> {
        let fresh = Self::new(cfg, 0)?;
        if fresh.params.len() != params.len() {
            return Err(CoreError::Checkpoint(format!(
                "{} parameters given, configuration needs {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for (a, b) in fresh.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() || a.kind != b.kind {
                return Err(CoreError::Checkpoint(format!("parameter `{}` does not match the configuration", b.name)));
            }
        }
        Ok(Self {
            cfg: fresh.cfg,
            params,
            layout: fresh.layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<T: Scalar>(&self) -> Urm<T> {
        Urm {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn bind(&self, tape: &Tape<S>) -> Vec<Tensor<S>> {
        self.params.bind(tape)
    }

    /// Token embedding plus positional encoding plus puzzle embedding.
    pub fn embed(&self, tape: &Tape<S>, p: &[Tensor<S>], batch: &Batch) -> Result<Tensor<S>> {
        let (t, d) = (batch.seq_len, self.cfg.hidden);
        if t > self.cfg.max_seq_len {
            return Err(CoreError::Batch(format!(
                "sequence length {t} exceeds max_seq_len {}",
                self.cfg.max_seq_len
            )));
        }
        let mut e = tape.embedding(&p[self.layout.tokens], &batch.tokens)?;
        match self.cfg.positional {
            PositionalScheme::Sinusoidal => {
                let table = sinusoidal(t, d);
                let tiled: Vec<f64> = table.iter().copied().cycle().take(batch.rows() * d).collect();
                e = tape.add(&e, &Tensor::from_f64(vec![batch.rows(), d], &tiled)?)?;
            }
            PositionalScheme::Learned => {
                let pos = self.layout.positions.expect("learned positions allocated");
                let ids: Vec<usize> = (0..batch.rows()).map(|r| r % t).collect();
                e = tape.add(&e, &tape.embedding(&p[pos], &ids)?)?;
            }
            PositionalScheme::Rotary | PositionalScheme::None => {}
        }
        if let Some(pz) = self.layout.puzzle {
            let ids: Vec<usize> = (0..batch.rows()).map(|r| batch.puzzle_rows[r / t]).collect();
            e = tape.add(&e, &tape.embedding(&p[pz], &ids)?)?;
        }
        Ok(e)
    }

    /// Input of global loop `step`: the embedding for the very first loop,
    /// otherwise the previous output plus (optionally) the embedding again
    /// and the depth encoding of `step`. Loop 0 thus sees exactly what a
    /// plain stacked transformer would.
    pub fn loop_input(&self, tape: &Tape<S>, e: &Tensor<S>, prev: Option<&Tensor<S>>, step: usize) -> Result<Tensor<S>> {
        let base = match prev {
            None => e.clone(),
            Some(z) if self.cfg.input_injection => tape.add(z, e)?,
            Some(z) => z.clone(),
        };
        if self.cfg.depth_encoding && step > 0 {
            Ok(tape.add_row(&base, &depth_row(step, self.cfg.hidden))?)
        } else {
            Ok(base)
        }
    }

    /// One pass through the shared layer stack.
    pub fn stack(
        &self,
        tape: &Tape<S>,
        p: &[Tensor<S>],
        ctx: SeqCtx<'_>,
        x: &Tensor<S>,
        mut attention: Option<&mut Vec<Tensor<S>>>,
    ) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for lp in &self.layout.layers {
            let (out, probs) = transition_block(tape, p, lp, &self.cfg, ctx, &h)?;
            if let Some(sink) = attention.as_deref_mut() {
                sink.push(probs);
            }
            h = out;
        }
        Ok(h)
    }

    pub fn unembed(&self, tape: &Tape<S>, p: &[Tensor<S>], h: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(tape.matmul(h, &p[self.layout.unembed])?)
    }

    /// Per-token halting probability `σ(wᵀh + b)`, shape `[rows]`.
    pub fn halting_probs(&self, tape: &Tape<S>, p: &[Tensor<S>], h: &Tensor<S>) -> Result<Tensor<S>> {
        let d = self.cfg.hidden;
        let w = tape.reshape(&p[self.layout.halt_w], vec![d, 1])?;
        let logit = tape.add_row(&tape.matmul(h, &w)?, &p[self.layout.halt_b])?;
        let prob = tape.sigmoid(&logit)?;
        Ok(tape.reshape(&prob, vec![h.rows()])?)
    }

    /// Runs the `M` inner loops of one outer step starting at global loop
    /// index `step0`. The first `N` loops run with the tape paused, so their
    /// outputs reach later loops as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn inner_rollout(
        &self,
        tape: &Tape<S>,
        p: &[Tensor<S>],
        ctx: SeqCtx<'_>,
        e: &Tensor<S>,
        prev: Option<Tensor<S>>,
        step0: usize,
        targets: Option<&[usize]>,
        mut attention: Option<&mut Vec<Tensor<S>>>,
        mut frozen: Option<&mut FrozenLoops<S>>,
    ) -> Result<Rollout<S>> {
        let mut z = prev;
        let mut states = Vec::with_capacity(self.cfg.inner_loops);
        let mut losses = Vec::new();
        for t in 0..self.cfg.inner_loops {
            let step = step0 + t;
            let out = if t < self.cfg.forward_only_loops {
                let _paused = tape.pause();
                let x = self.loop_input(tape, e, z.as_ref(), step)?;
                let out = self.stack(tape, p, ctx, &x, attention.as_deref_mut())?;
                match frozen.as_deref_mut() {
                    Some(f) => f.visit(out)?,
                    None => out,
                }
            } else {
                let x = self.loop_input(tape, e, z.as_ref(), step)?;
                let out = self.stack(tape, p, ctx, &x, attention.as_deref_mut())?;
                if let Some(tg) = targets {
                    let logits = self.unembed(tape, p, &out)?;
                    losses.push(tape.cross_entropy(&logits, tg, IGNORE_INDEX)?);
                }
                out
            };
            states.push(out.clone());
            z = Some(out);
        }
        Ok(Rollout { states, losses })
    }

    /// Full forward pass with the ACT outer loop.
    ///
    /// At outer step `s` every still-running token gets a halting probability
    /// `p`. It halts when its accumulated probability plus `p` reaches
    /// `1 − ε`, or when `s` is the cap; a halting token's weight is the
    /// remainder `1 − accumulated`, a continuing token's weight is `p`, and a
    /// halted token's weight is zero from then on. The returned hidden state
    /// is the weighted sum of the per-step outputs.
    pub fn forward(&self, tape: &Tape<S>, p: &[Tensor<S>], batch: &Batch, opts: ForwardOptions) -> Result<ForwardOutput<S>> {
        self.forward_frozen(tape, p, batch, opts, None)
    }

    /// [`Urm::forward`] with the outputs of forward-only loops recorded or
    /// replayed through `frozen`.
    pub fn forward_frozen(
        &self,
        tape: &Tape<S>,
        p: &[Tensor<S>],
        batch: &Batch,
        opts: ForwardOptions,
        mut frozen: Option<&mut FrozenLoops<S>>,
    ) -> Result<ForwardOutput<S>> {
        let cfg = &self.cfg;
        let rows = batch.rows();
        let ctx = batch.ctx();
        let e = self.embed(tape, p, batch)?;
        let eps = cfg.halt_epsilon;

        let mut halted = vec![false; rows];
        let mut cum_val = vec![0.0f64; rows];
        let mut cum: Option<Tensor<S>> = None;
        let mut mixed: Option<Tensor<S>> = None;
        let mut z: Option<Tensor<S>> = None;
        let mut terms: Vec<Tensor<S>> = Vec::new();
        let mut ponder: Option<Tensor<S>> = None;
        let mut trace = ActTrace {
            halt_step: vec![0; rows],
            ..ActTrace::default()
        };
        let mut attention = Vec::new();

        for s in 1..=cfg.act_max_steps {
            let step_targets: Option<Vec<usize>> = opts.loss.then(|| {
                batch
                    .targets
                    .iter()
                    .zip(&halted)
                    .map(|(&t, &h)| if h { IGNORE_INDEX } else { t })
                    .collect()
            });
            let rollout = self.inner_rollout(
                tape,
                p,
                ctx,
                &e,
                z.take(),
                (s - 1) * cfg.inner_loops,
                step_targets.as_deref(),
                opts.record_attention.then_some(&mut attention),
                frozen.as_deref_mut(),
            )?;
            terms.extend(rollout.losses);
            let out = rollout.states.last().expect("at least one inner loop").clone();

            let mut prob = self.halting_probs(tape, p, &out)?;
            if cfg.act_mode == ActMode::Sequence {
                let col = tape.reshape(&prob, vec![rows, 1])?;
                let avg = tape.segment_mean_broadcast(&col, batch.seq_len)?;
                prob = tape.reshape(&avg, vec![rows])?;
            }
            let pv = prob.to_f64_vec();
            let mut cont = vec![0.0; rows];
            let mut stop = vec![0.0; rows];
            for i in 0..rows {
                if halted[i] {
                    continue;
                }
                if s == cfg.act_max_steps || cum_val[i] + pv[i] >= 1.0 - eps {
                    stop[i] = 1.0;
                    halted[i] = true;
                    trace.halt_step[i] = s;
                } else {
                    cont[i] = 1.0;
                    cum_val[i] += pv[i];
                }
            }
            let cont = Tensor::from_f64(vec![rows], &cont)?;
            let stop = Tensor::from_f64(vec![rows], &stop)?;
            let remainder = match &cum {
                Some(c) => tape.affine(c, -1.0, 1.0)?,
                None => Tensor::full(vec![rows], S::one()),
            };
            let kept = tape.mul(&prob, &cont)?;
            let final_share = tape.mul(&remainder, &stop)?;
            let delta = tape.add(&kept, &final_share)?;
            cum = Some(match cum {
                Some(c) => tape.add(&c, &kept)?,
                None => kept,
            });
            if cfg.ponder_cost > 0.0 {
                let r = tape.mean(&final_share)?;
                ponder = Some(match ponder {
                    Some(acc) => tape.add(&acc, &r)?,
                    None => r,
                });
            }
            let contribution = tape.mul_col(&out, &delta)?;
            mixed = Some(match mixed {
                Some(m) => tape.add(&m, &contribution)?,
                None => contribution,
            });
            trace.probs.push(pv);
            trace.deltas.push(delta.to_f64_vec());
            trace.steps_run = s;
            z = Some(out);
            if halted.iter().all(|&h| h) {
                break;
            }
        }

        let hidden = mixed.expect("at least one outer step");
        let logits = self.unembed(tape, p, &hidden)?;
        if opts.loss && cfg.supervise_mixture && cfg.act_max_steps > 1 {
            terms.push(tape.cross_entropy(&logits, &batch.targets, IGNORE_INDEX)?);
        }
        let loss_terms = terms.iter().map(|t| t.item().as_f64()).collect();
        let loss = if opts.loss {
            let n = terms.len();
            let mut total = terms
                .into_iter()
                .reduce(|a, b| tape.add(&a, &b).expect("scalar losses"))
                .unwrap_or_else(|| Tensor::scalar(S::zero()));
            if cfg.loss_normalization == LossNormalization::Mean && n > 0 {
                total = tape.scale(&total, 1.0 / n as f64)?;
            }
            if let Some(pc) = ponder {
                total = tape.add(&total, &tape.scale(&pc, cfg.ponder_cost)?)?;
            }
            Some(total)
        } else {
            None
        };
        Ok(ForwardOutput {
            loss,
            loss_terms,
            hidden,
            logits,
            act: trace,
            attention,
        })
    }

    /// Gradient-free forward on a fresh inference tape.
    pub fn infer(&self, batch: &Batch, record_attention: bool) -> Result<ForwardOutput<S>> {
        let tape = Tape::inference();
        let p: Vec<Tensor<S>> = self.params.iter().map(|q| q.value.clone()).collect();
        self.forward(
            &tape,
            &p,
            batch,
            ForwardOptions {
                loss: false,
                record_attention,
            },
        )
    }
}
