use std::rc::Rc;

use crate::error::{invalid, Result, TensorError};
use crate::kernels::softmax_row;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<S: Scalar> Tape<S> {
    pub fn sum(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let s: S = x.data().iter().copied().sum();
        let n = x.numel();
        Ok(self.record("sum", &[x], vec![1], vec![s], move |g, _| {
            vec![Some(vec![g[0]; n])]
        }))
    }

    pub fn mean(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let n = x.numel();
        if n == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        let inv = S::one() / S::of(n as f64);
        let s: S = x.data().iter().copied().sum::<S>() * inv;
        Ok(self.record("mean", &[x], vec![1], vec![s], move |g, _| {
            vec![Some(vec![g[0] * inv; n])]
        }))
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax_lastdim(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let c = x.last_dim();
        if c == 0 {
            return Err(invalid("softmax_lastdim", "last extent must be at least 1"));
        }
        let mut out = vec![S::zero(); x.numel()];
        for (row, o) in x.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
            softmax_row(row, o);
        }
        let yd = Rc::new(out.clone());
        Ok(self.record("softmax", &[x], x.shape().to_vec(), out, move |g, _| {
            let mut gx = vec![S::zero(); g.len()];
            for ((gr, yr), o) in g.chunks_exact(c).zip(yd.chunks_exact(c)).zip(gx.chunks_exact_mut(c)) {
                let dot: S = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((o, &gi), &yi) in o.iter_mut().zip(gr).zip(yr) {
                    *o = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// RMS normalisation over the last axis followed by a per-feature gain:
    /// `y = x / sqrt(mean(x²) + eps) · gain`.
    pub fn rmsnorm(&self, x: &Tensor<S>, gain: &Tensor<S>, eps: f64) -> Result<Tensor<S>> {
        let c = x.last_dim();
        if gain.numel() != c {
            return Err(TensorError::ShapeMismatch {
                op: "rmsnorm",
                lhs: x.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let eps = S::of(eps);
        let inv_c = S::one() / S::of(c as f64);
        let rows = x.rows();
        let mut inv_rms = Vec::with_capacity(rows);
        let mut xhat = vec![S::zero(); x.numel()];
        let mut out = vec![S::zero(); x.numel()];
        for ((xr, hr), or) in x
            .data()
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(out.chunks_exact_mut(c))
        {
            let ms: S = xr.iter().map(|&v| v * v).sum::<S>() * inv_c;
            let r = S::one() / (ms + eps).sqrt();
            inv_rms.push(r);
            for (((h, o), &v), &gn) in hr.iter_mut().zip(or.iter_mut()).zip(xr).zip(gain.data()) {
                *h = v * r;
                *o = *h * gn;
            }
        }
        let gd = Rc::clone(gain.data_rc());
        Ok(self.record("rmsnorm", &[x, gain], x.shape().to_vec(), out, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = vec![S::zero(); g.len()];
                for (((gr, hr), o), &r) in g
                    .chunks_exact(c)
                    .zip(xhat.chunks_exact(c))
                    .zip(gx.chunks_exact_mut(c))
                    .zip(&inv_rms)
                {
                    // dxhat = g ⊙ gain; dx = r · (dxhat − xhat · mean(dxhat ⊙ xhat))
                    let dot: S = gr
                        .iter()
                        .zip(hr)
                        .zip(gd.iter())
                        .map(|((&gi, &h), &gn)| gi * gn * h)
                        .sum::<S>()
                        * inv_c;
                    for (((o, &gi), &h), &gn) in o.iter_mut().zip(gr).zip(hr).zip(gd.iter()) {
                        *o = r * (gi * gn - h * dot);
                    }
                }
                gx
            });
            let ggain = needs[1].then(|| {
                let mut acc = vec![S::zero(); c];
                for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ((a, &gi), &h) in acc.iter_mut().zip(gr).zip(hr) {
                        *a += gi * h;
                    }
                }
                acc
            });
            vec![gx, ggain]
        }))
    }

    /// Replaces every block of `seg_len` consecutive rows by its column mean.
    pub fn segment_mean_broadcast(&self, x: &Tensor<S>, seg_len: usize) -> Result<Tensor<S>> {
        let (r, c) = (x.rows(), x.last_dim());
        if seg_len == 0 || r % seg_len != 0 {
            return Err(invalid(
                "segment_mean_broadcast",
                format!("{r} rows not divisible into segments of {seg_len}"),
            ));
        }
        let inv = S::one() / S::of(seg_len as f64);
        let reduce = move |src: &[S]| {
            let mut out = vec![S::zero(); src.len()];
            for (seg, oseg) in src.chunks_exact(seg_len * c).zip(out.chunks_exact_mut(seg_len * c)) {
                let mut acc = vec![S::zero(); c];
                for row in seg.chunks_exact(c) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                for orow in oseg.chunks_exact_mut(c) {
                    for (o, &a) in orow.iter_mut().zip(&acc) {
                        *o = a * inv;
                    }
                }
            }
            out
        };
        let out = reduce(x.data());
        Ok(self.record("segment_mean", &[x], x.shape().to_vec(), out, move |g, _| {
            vec![Some(reduce(g))]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn softmax_uniform_and_stable() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_f64(vec![3], &[0.0, 0.0, 0.0]).unwrap();
        let y = tape.softmax_lastdim(&x).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = Tensor::from_f64(vec![2], &[1000.0, 0.0]).unwrap();
        let y = tape.softmax_lastdim(&big).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let tape = Tape::<f64>::new();
        let v = [0.3, -1.2, 2.5, 0.05];
        let y = tape.softmax_lastdim(&Tensor::from_f64(vec![4], &v).unwrap()).unwrap();
        let z: f64 = v.iter().map(|x| x.exp()).sum();
        for (yi, xi) in y.data().iter().zip(v) {
            assert!((yi - xi.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn rmsnorm_constant_and_zero_rows() {
        let tape = Tape::<f64>::new();
        let gain = Tensor::full(vec![4], 1.0);
        let x = Tensor::from_f64(vec![2, 4], &[-3.0, -3.0, -3.0, -3.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let y = tape.rmsnorm(&x, &gain, 1e-12).unwrap();
        for &v in &y.data()[..4] {
            assert!((v + 1.0).abs() < 1e-9);
        }
        assert_eq!(&y.data()[4..], &[0.0; 4]);
    }

    #[test]
    fn rmsnorm_unit_rms() {
        let tape = Tape::<f64>::new();
        let gain = Tensor::full(vec![5], 1.0);
        let x = Tensor::from_f64(vec![5], &[0.1, -2.0, 3.3, 0.7, 1.1]).unwrap();
        let y = tape.rmsnorm(&x, &gain, 1e-6).unwrap();
        let rms = (y.data().iter().map(|v| v * v).sum::<f64>() / 5.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }
}
