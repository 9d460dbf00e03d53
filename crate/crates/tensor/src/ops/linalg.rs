use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{gemm, transpose};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<S: Scalar> Tape<S> {
    /// Matrix product of `a[m×k]` and `b[k×n]`.
    pub fn matmul(&self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (m, k) = a.dims2("matmul")?;
        let (k2, n) = b.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = gemm(a.data(), b.data(), m, k, n);
        let (ad, bd) = (Rc::clone(a.data_rc()), Rc::clone(b.data_rc()));
        Ok(self.record("matmul", &[a, b], vec![m, n], out, move |g, needs| {
            let ga = needs[0].then(|| gemm(g, &transpose(&bd, k, n), m, n, k));
            let gb = needs[1].then(|| gemm(&transpose(&ad, m, k), g, k, m, n));
            vec![ga, gb]
        }))
    }

    /// Transpose of a rank-2 tensor (copies).
    pub fn transpose(&self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let (r, c) = a.dims2("transpose")?;
        let out = transpose(a.data(), r, c);
        Ok(self.record("transpose", &[a], vec![c, r], out, move |g, _| {
            vec![Some(transpose(g, c, r))]
        }))
    }
}
