use std::rc::Rc;

use super::same_shape;
use crate::error::{Result, TensorError};
use crate::kernels::sigmoid;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

fn row_vector<S: Scalar>(op: &'static str, x: &Tensor<S>, v: &Tensor<S>) -> Result<usize> {
    let c = x.last_dim();
    if v.numel() != c {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    Ok(c)
}

impl<S: Scalar> Tape<S> {
    pub fn add(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("add", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.record("add", &[a, b], a.shape().to_vec(), out, |g, needs| {
            vec![needs[0].then(|| g.to_vec()), needs[1].then(|| g.to_vec())]
        }))
    }

    pub fn sub(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("sub", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        Ok(self.record("sub", &[a, b], a.shape().to_vec(), out, |g, needs| {
            vec![
                needs[0].then(|| g.to_vec()),
                needs[1].then(|| g.iter().map(|&v| -v).collect()),
            ]
        }))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("mul", a, b)?;
        let out = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let (ad, bd) = (Rc::clone(a.data_rc()), Rc::clone(b.data_rc()));
        Ok(self.record("mul", &[a, b], a.shape().to_vec(), out, move |g, needs| {
            vec![
                needs[0].then(|| g.iter().zip(bd.iter()).map(|(&g, &y)| g * y).collect()),
                needs[1].then(|| g.iter().zip(ad.iter()).map(|(&g, &x)| g * x).collect()),
            ]
        }))
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&self, x: &Tensor<S>, scale: f64, shift: f64) -> Result<Tensor<S>> {
        let (a, b) = (S::of(scale), S::of(shift));
        let out = x.data().iter().map(|&v| a * v + b).collect();
        Ok(self.record("affine", &[x], x.shape().to_vec(), out, move |g, _| {
            vec![Some(g.iter().map(|&v| a * v).collect())]
        }))
    }

    pub fn scale(&self, x: &Tensor<S>, s: f64) -> Result<Tensor<S>> {
        self.affine(x, s, 0.0)
    }

    /// Adds a vector of length `last_dim` to every row.
    pub fn add_row(&self, x: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
        let c = row_vector("add_row", x, v)?;
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            for (o, &b) in row.iter_mut().zip(v.data()) {
                *o += b;
            }
        }
        Ok(self.record("add_row", &[x, v], x.shape().to_vec(), out, move |g, needs| {
            let gv = needs[1].then(|| {
                let mut acc = vec![S::zero(); c];
                for row in g.chunks_exact(c.max(1)) {
                    for (a, &gi) in acc.iter_mut().zip(row) {
                        *a += gi;
                    }
                }
                acc
            });
            vec![needs[0].then(|| g.to_vec()), gv]
        }))
    }

    /// Multiplies every row elementwise by a vector of length `last_dim`.
    pub fn mul_row(&self, x: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
        let c = row_vector("mul_row", x, v)?;
        let mut out = x.to_vec();
        for row in out.chunks_exact_mut(c.max(1)) {
            for (o, &b) in row.iter_mut().zip(v.data()) {
                *o *= b;
            }
        }
        let (xd, vd) = (Rc::clone(x.data_rc()), Rc::clone(v.data_rc()));
        Ok(self.record("mul_row", &[x, v], x.shape().to_vec(), out, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = g.to_vec();
                for row in gx.chunks_exact_mut(c.max(1)) {
                    for (o, &b) in row.iter_mut().zip(vd.iter()) {
                        *o *= b;
                    }
                }
                gx
            });
            let gv = needs[1].then(|| {
                let mut acc = vec![S::zero(); c];
                for (grow, xrow) in g.chunks_exact(c.max(1)).zip(xd.chunks_exact(c.max(1))) {
                    for ((a, &gi), &xi) in acc.iter_mut().zip(grow).zip(xrow) {
                        *a += gi * xi;
                    }
                }
                acc
            });
            vec![gx, gv]
        }))
    }

    /// Scales row `i` of `x[r×c]` by `w[i]`, where `w` has `r` elements.
    pub fn mul_col(&self, x: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
        let (r, c) = (x.rows(), x.last_dim());
        if w.numel() != r {
            return Err(TensorError::ShapeMismatch {
                op: "mul_col",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        let mut out = x.to_vec();
        for (row, &wi) in out.chunks_exact_mut(c.max(1)).zip(w.data()) {
            for o in row.iter_mut() {
                *o *= wi;
            }
        }
        let (xd, wd) = (Rc::clone(x.data_rc()), Rc::clone(w.data_rc()));
        Ok(self.record("mul_col", &[x, w], x.shape().to_vec(), out, move |g, needs| {
            let gx = needs[0].then(|| {
                let mut gx = g.to_vec();
                for (row, &wi) in gx.chunks_exact_mut(c.max(1)).zip(wd.iter()) {
                    for o in row.iter_mut() {
                        *o *= wi;
                    }
                }
                gx
            });
            let gw = needs[1].then(|| {
                g.chunks_exact(c.max(1))
                    .zip(xd.chunks_exact(c.max(1)))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                    .collect()
            });
            vec![gx, gw]
        }))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = x.data().iter().map(|&v| v * sigmoid(v)).collect();
        let xd = Rc::clone(x.data_rc());
        Ok(self.record("silu", &[x], x.shape().to_vec(), out, move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter())
                .map(|(&g, &x)| {
                    let s = sigmoid(x);
                    g * s * (S::one() + x * (S::one() - s))
                })
                .collect();
            vec![Some(gx)]
        }))
    }

    /// `max(x, 0)`. The derivative at exactly zero is taken to be zero.
    pub fn relu(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out = x.data().iter().map(|&v| v.max(S::zero())).collect();
        let xd = Rc::clone(x.data_rc());
        Ok(self.record("relu", &[x], x.shape().to_vec(), out, move |g, _| {
            let gx = g
                .iter()
                .zip(xd.iter())
                .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                .collect();
            vec![Some(gx)]
        }))
    }

    pub fn sigmoid(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let out: Vec<S> = x.data().iter().map(|&v| sigmoid(v)).collect();
        let yd = Rc::new(out.clone());
        Ok(self.record("sigmoid", &[x], x.shape().to_vec(), out, move |g, _| {
            let gx = g
                .iter()
                .zip(yd.iter())
                .map(|(&g, &y)| g * y * (S::one() - y))
                .collect();
            vec![Some(gx)]
        }))
    }
}
