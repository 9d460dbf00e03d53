//! Neural-network specific ops: convolution, attention, embeddings, losses.

use std::rc::Rc;

use crate::error::{invalid, Result, TensorError};
use crate::kernels::{log_sum_exp, softmax_row};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Options for [`Tape::attention`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOptions<'a> {
    /// Tokens per sequence; rows of q/k/v are `batch · seq_len`.
    pub seq_len: usize,
    pub heads: usize,
    /// Multiplier applied to `q·kᵀ`.
    pub scale: f64,
    /// When false, scaled scores are used as mixing weights directly.
    pub softmax: bool,
    pub causal: bool,
    /// Per-row flag (length `batch · seq_len`); `false` keys are never attended.
    pub key_mask: Option<&'a [bool]>,
}

impl<S: Scalar> Tape<S> {
    /// Depthwise 1-D convolution along rows, independently per sequence.
    ///
    /// `x` is `[rows × m]` holding `rows / seq_len` sequences; `kernel` is
    /// `[m × k]`. Output row `t` mixes input rows `t−k+1 … t` of the same
    /// sequence with tap `k−1` on the current row; rows before the sequence
    /// start read as zero. `pad_left` must equal `k − 1`.
    pub fn dwconv1d(
        &self,
        x: &Tensor<S>,
        kernel: &Tensor<S>,
        pad_left: usize,
        seq_len: usize,
    ) -> Result<Tensor<S>> {
        let (rows, m) = x.dims2("dwconv1d")?;
        let (km, k) = kernel.dims2("dwconv1d")?;
        if km != m {
            return Err(TensorError::ShapeMismatch {
                op: "dwconv1d",
                lhs: x.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if k == 0 || pad_left != k - 1 {
            return Err(invalid("dwconv1d", format!("pad_left {pad_left} must equal kernel size {k} - 1")));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(invalid("dwconv1d", format!("{rows} rows not divisible by seq_len {seq_len}")));
        }
        let w = kernel.data();
        let xd = x.data();
        let mut out = vec![S::zero(); rows * m];
        for r in 0..rows {
            let t = r % seq_len;
            let orow = &mut out[r * m..(r + 1) * m];
            for j in 0..k {
                // tap j reads row t - (k-1) + j
                let back = k - 1 - j;
                if back > t {
                    continue;
                }
                let src = &xd[(r - back) * m..(r - back + 1) * m];
                for c in 0..m {
                    orow[c] += w[c * k + j] * src[c];
                }
            }
        }
        let (xr, wr) = (Rc::clone(x.data_rc()), Rc::clone(kernel.data_rc()));
        Ok(self.record("dwconv1d", &[x, kernel], vec![rows, m], out, move |g, needs| {
            let mut gx = needs[0].then(|| vec![S::zero(); rows * m]);
            let mut gw = needs[1].then(|| vec![S::zero(); m * k]);
            for r in 0..rows {
                let t = r % seq_len;
                let grow = &g[r * m..(r + 1) * m];
                for j in 0..k {
                    let back = k - 1 - j;
                    if back > t {
                        continue;
                    }
                    let src = r - back;
                    if let Some(gx) = gx.as_mut() {
                        for c in 0..m {
                            gx[src * m + c] += wr[c * k + j] * grow[c];
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        for c in 0..m {
                            gw[c * k + j] += xr[src * m + c] * grow[c];
                        }
                    }
                }
            }
            vec![gx, gw]
        }))
    }

    /// Row gather: `out[i] = table[ids[i]]`.
    pub fn embedding(&self, table: &Tensor<S>, ids: &[usize]) -> Result<Tensor<S>> {
        let (v, d) = table.dims2("embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "embedding",
                index: bad,
                bound: v,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        Ok(self.record("embedding", &[table], vec![ids.len(), d], out, move |g, _| {
            let mut gt = vec![S::zero(); v * d];
            for (&i, grow) in ids.iter().zip(g.chunks_exact(d.max(1))) {
                for (a, &b) in gt[i * d..(i + 1) * d].iter_mut().zip(grow) {
                    *a += b;
                }
            }
            vec![Some(gt)]
        }))
    }

    /// Mean token cross-entropy of `logits[rows × V]` against `targets`.
    ///
    /// Rows whose target equals `ignore_index` are skipped. When every row is
    /// ignored the loss is zero and so is its gradient.
    pub fn cross_entropy(&self, logits: &Tensor<S>, targets: &[usize], ignore_index: usize) -> Result<Tensor<S>> {
        let (rows, v) = logits.dims2("cross_entropy")?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: logits.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t != ignore_index && t >= v) {
            return Err(TensorError::IndexOutOfRange {
                op: "cross_entropy",
                index: bad,
                bound: v,
            });
        }
        let count = targets.iter().filter(|&&t| t != ignore_index).count();
        let mut total = S::zero();
        for (row, &t) in logits.data().chunks_exact(v.max(1)).zip(targets) {
            if t != ignore_index {
                total += log_sum_exp(row) - row[t];
            }
        }
        let loss = if count == 0 { S::zero() } else { total / S::of(count as f64) };
        let ld = Rc::clone(logits.data_rc());
        let targets = targets.to_vec();
        Ok(self.record("cross_entropy", &[logits], vec![1], vec![loss], move |g, _| {
            let mut gl = vec![S::zero(); rows * v];
            if count > 0 {
                let scale = g[0] / S::of(count as f64);
                for ((row, grow), &t) in ld.chunks_exact(v).zip(gl.chunks_exact_mut(v)).zip(&targets) {
                    if t == ignore_index {
                        continue;
                    }
                    softmax_row(row, grow);
                    grow[t] -= S::one();
                    for x in grow.iter_mut() {
                        *x *= scale;
                    }
                }
            }
            vec![Some(gl)]
        }))
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[batch·seq_len × heads·head_dim]` with heads laid out
    /// as contiguous column blocks. Returns the mixed values (same shape) and
    /// the untracked mixing weights `[batch × heads × seq_len × seq_len]`.
    pub fn attention(
        &self,
        q: &Tensor<S>,
        k: &Tensor<S>,
        v: &Tensor<S>,
        opts: AttentionOptions<'_>,
    ) -> Result<(Tensor<S>, Tensor<S>)> {
        let (rows, dm) = q.dims2("attention")?;
        for other in [k, v] {
            if other.shape() != q.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "attention",
                    lhs: q.shape().to_vec(),
                    rhs: other.shape().to_vec(),
                });
            }
        }
        let AttentionOptions {
            seq_len: t_len,
            heads,
            scale,
            softmax,
            causal,
            key_mask,
        } = opts;
        if heads == 0 || dm % heads != 0 {
            return Err(invalid("attention", format!("width {dm} not divisible by {heads} heads")));
        }
        if t_len == 0 || rows % t_len != 0 {
            return Err(invalid("attention", format!("{rows} rows not divisible by seq_len {t_len}")));
        }
        if let Some(mask) = key_mask {
            if mask.len() != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "attention mask",
                    lhs: vec![rows],
                    rhs: vec![mask.len()],
                });
            }
        }
        let hd = dm / heads;
        let batch = rows / t_len;
        let scale = S::of(scale);
        let allowed: Vec<bool> = (0..batch * t_len * t_len)
            .map(|idx| {
                let b = idx / (t_len * t_len);
                let i = (idx / t_len) % t_len;
                let j = idx % t_len;
                (!causal || j <= i) && key_mask.is_none_or(|m| m[b * t_len + j])
            })
            .collect();
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let mut probs = vec![S::zero(); batch * heads * t_len * t_len];
        let mut out = vec![S::zero(); rows * dm];
        let mut scores = vec![S::zero(); t_len];
        for b in 0..batch {
            for h in 0..heads {
                let col = h * hd;
                for i in 0..t_len {
                    let qi = &qd[(b * t_len + i) * dm + col..][..hd];
                    let mask_row = &allowed[(b * t_len + i) * t_len..][..t_len];
                    for j in 0..t_len {
                        let kj = &kd[(b * t_len + j) * dm + col..][..hd];
                        scores[j] = if mask_row[j] {
                            scale * qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<S>()
                        } else {
                            S::neg_infinity()
                        };
                    }
                    let prow = &mut probs[((b * heads + h) * t_len + i) * t_len..][..t_len];
                    if !mask_row.iter().any(|&a| a) {
                        // nothing to attend to: all-zero row
                    } else if softmax {
                        softmax_row(&scores, prow);
                    } else {
                        for (p, (&s, &a)) in prow.iter_mut().zip(scores.iter().zip(mask_row)) {
                            *p = if a { s } else { S::zero() };
                        }
                    }
                    let orow = &mut out[(b * t_len + i) * dm + col..][..hd];
                    for j in 0..t_len {
                        let p = prow[j];
                        if p == S::zero() {
                            continue;
                        }
                        let vj = &vd[(b * t_len + j) * dm + col..][..hd];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let probs = Rc::new(probs);
        let attn = Tensor::from_parts(vec![batch, heads, t_len, t_len], Rc::clone(&probs), None);
        let (qr, kr, vr) = (Rc::clone(q.data_rc()), Rc::clone(k.data_rc()), Rc::clone(v.data_rc()));
        let out = self.record("attention", &[q, k, v], vec![rows, dm], out, move |g, needs| {
            let mut gq = vec![S::zero(); rows * dm];
            let mut gk = vec![S::zero(); rows * dm];
            let mut gv = vec![S::zero(); rows * dm];
            let mut dp = vec![S::zero(); t_len];
            for b in 0..batch {
                for h in 0..heads {
                    let col = h * hd;
                    for i in 0..t_len {
                        let ri = (b * t_len + i) * dm + col;
                        let gi = &g[ri..ri + hd];
                        let prow = &probs[((b * heads + h) * t_len + i) * t_len..][..t_len];
                        let mask_row = &allowed[(b * t_len + i) * t_len..][..t_len];
                        for j in 0..t_len {
                            let rj = (b * t_len + j) * dm + col;
                            dp[j] = gi.iter().zip(&vr[rj..rj + hd]).map(|(&a, &c)| a * c).sum();
                            let p = prow[j];
                            if p != S::zero() {
                                for (a, &c) in gv[rj..rj + hd].iter_mut().zip(gi) {
                                    *a += p * c;
                                }
                            }
                        }
                        let dot: S = if softmax {
                            prow.iter().zip(&dp).map(|(&p, &d)| p * d).sum()
                        } else {
                            S::zero()
                        };
                        for j in 0..t_len {
                            if !mask_row[j] {
                                continue;
                            }
                            let ds = if softmax { prow[j] * (dp[j] - dot) } else { dp[j] } * scale;
                            if ds == S::zero() {
                                continue;
                            }
                            let rj = (b * t_len + j) * dm + col;
                            for c in 0..hd {
                                gq[ri + c] += ds * kr[rj + c];
                                gk[rj + c] += ds * qr[ri + c];
                            }
                        }
                    }
                }
            }
            vec![needs[0].then_some(gq), needs[1].then_some(gk), needs[2].then_some(gv)]
        });
        Ok((out, attn))
    }

    /// Rotary position embedding applied per head over packed sequences.
    ///
    /// Within each head the first and second halves of the head dimension are
    /// rotated as pairs by angle `pos · base^(−2i/head_dim)`.
    pub fn rope(&self, x: &Tensor<S>, seq_len: usize, heads: usize, base: f64) -> Result<Tensor<S>> {
        let (rows, dm) = x.dims2("rope")?;
        if heads == 0 || dm % heads != 0 || !(dm / heads).is_multiple_of(2) {
            return Err(invalid("rope", format!("width {dm} needs an even head dim across {heads} heads")));
        }
        if seq_len == 0 || rows % seq_len != 0 {
            return Err(invalid("rope", format!("{rows} rows not divisible by seq_len {seq_len}")));
        }
        let hd = dm / heads;
        let half = hd / 2;
        let mut cos = vec![S::zero(); seq_len * half];
        let mut sin = vec![S::zero(); seq_len * half];
        for p in 0..seq_len {
            for i in 0..half {
                let theta = p as f64 * base.powf(-2.0 * i as f64 / hd as f64);
                cos[p * half + i] = S::of(theta.cos());
                sin[p * half + i] = S::of(theta.sin());
            }
        }
        let rotate = move |src: &[S], inverse: bool| {
            let mut out = vec![S::zero(); src.len()];
            for r in 0..rows {
                let p = r % seq_len;
                for h in 0..heads {
                    let base_idx = r * dm + h * hd;
                    for i in 0..half {
                        let (c, s) = (cos[p * half + i], sin[p * half + i]);
                        let s = if inverse { -s } else { s };
                        let (a, b) = (src[base_idx + i], src[base_idx + half + i]);
                        out[base_idx + i] = a * c - b * s;
                        out[base_idx + half + i] = a * s + b * c;
                    }
                }
            }
            out
        };
        let out = rotate(x.data(), false);
        Ok(self.record("rope", &[x], vec![rows, dm], out, move |g, _| vec![Some(rotate(g, true))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let tape = Tape::new();
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let k = t(&[2, 1], &[1., 1.]);
        assert_eq!(tape.dwconv1d(&x, &k, 0, 3).unwrap().data(), x.data());
    }

    #[test]
    fn conv_two_tap_by_hand() {
        let (a, b) = (0.5, 2.0);
        let tape = Tape::new();
        let x = t(&[3, 1], &[1., 2., 3.]);
        let k = t(&[1, 2], &[a, b]);
        let y = tape.dwconv1d(&x, &k, 1, 3).unwrap();
        assert_eq!(y.data(), &[b * 1., a * 1. + b * 2., a * 2. + b * 3.]);
    }

    #[test]
    fn conv_rejects_bad_padding_and_channels() {
        let tape = Tape::new();
        let x = Tensor::<f64>::zeros(vec![4, 3]);
        assert!(tape.dwconv1d(&x, &Tensor::zeros(vec![3, 2]), 0, 4).is_err());
        let err = tape.dwconv1d(&x, &Tensor::zeros(vec![2, 2]), 1, 4).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn conv_does_not_cross_sequences() {
        let tape = Tape::new();
        let x = t(&[4, 1], &[1., 2., 3., 4.]);
        let k = t(&[1, 2], &[1., 1.]);
        let y = tape.dwconv1d(&x, &k, 1, 2).unwrap();
        assert_eq!(y.data(), &[1., 3., 3., 7.]);
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let tape = Tape::new();
        let uniform = Tensor::<f64>::zeros(vec![1, 4]);
        let l = tape.cross_entropy(&uniform, &[2], usize::MAX).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-15);
        let peaked = t(&[1, 3], &[0., 1e6, 0.]);
        assert!(tape.cross_entropy(&peaked, &[1], usize::MAX).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_all_ignored_is_zero() {
        let tape = Tape::new();
        let x = tape.watch(&t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let l = tape.cross_entropy(&x, &[9, 9], 9).unwrap();
        assert_eq!(l.item(), 0.0);
        let g = tape.backward(&l).unwrap();
        assert!(g.get(&x).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let tape = Tape::new();
        let x = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(tape.cross_entropy(&x, &[3], usize::MAX).is_err());
    }

    #[test]
    fn singleton_attention_is_one() {
        let tape = Tape::new();
        let q = t(&[1, 4], &[0.3, -0.1, 2.0, 0.5]);
        let opts = AttentionOptions {
            seq_len: 1,
            heads: 2,
            scale: 0.5,
            softmax: true,
            causal: false,
            key_mask: None,
        };
        let (out, attn) = tape.attention(&q, &q, &q, opts).unwrap();
        assert_eq!(attn.data(), &[1.0, 1.0]);
        assert_eq!(out.data(), q.data());
    }

    #[test]
    fn attention_mask_length_checked() {
        let tape = Tape::new();
        let q = Tensor::<f64>::zeros(vec![2, 2]);
        let mask = [true];
        let opts = AttentionOptions {
            seq_len: 2,
            heads: 1,
            scale: 1.0,
            softmax: true,
            causal: false,
            key_mask: Some(&mask),
        };
        assert!(tape.attention(&q, &q, &q, opts).is_err());
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let tape = Tape::new();
        let table = Tensor::<f64>::zeros(vec![3, 2]);
        assert!(tape.embedding(&table, &[0, 3]).is_err());
    }
}
