use std::rc::Rc;

use crate::error::{invalid, Result, TensorError};
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

impl<S: Scalar> Tape<S> {
    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, x: &Tensor<S>, shape: Vec<usize>) -> Result<Tensor<S>> {
        if shape.iter().product::<usize>() != x.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape,
            });
        }
        if !(self.is_recording() && x.requires_grad()) {
            return Ok(Tensor::from_parts(shape, Rc::clone(x.data_rc()), None));
        }
        Ok(self.record("reshape", &[x], shape, x.to_vec(), |g, _| vec![Some(g.to_vec())]))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, x: &Tensor<S>, start: usize, end: usize) -> Result<Tensor<S>> {
        let (r, c) = x.dims2("slice_cols")?;
        if start > end || end > c {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_cols",
                index: end,
                bound: c,
            });
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for row in x.data().chunks_exact(c.max(1)) {
            out.extend_from_slice(&row[start..end]);
        }
        Ok(self.record("slice_cols", &[x], vec![r, w], out, move |g, _| {
            let mut gx = vec![S::zero(); r * c];
            for (grow, src) in gx.chunks_exact_mut(c).zip(g.chunks_exact(w.max(1))) {
                grow[start..end].copy_from_slice(src);
            }
            vec![Some(gx)]
        }))
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| invalid("concat_cols", "no inputs"))?;
        let (r, _) = first.dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = p.dims2("concat_cols")?;
            if pr != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.record("concat_cols", parts, vec![r, total], out, move |g, needs| {
            let mut offset = 0;
            widths
                .iter()
                .zip(needs)
                .map(|(&w, &need)| {
                    let start = offset;
                    offset += w;
                    need.then(|| {
                        let mut gp = Vec::with_capacity(r * w);
                        for row in g.chunks_exact(total.max(1)) {
                            gp.extend_from_slice(&row[start..start + w]);
                        }
                        gp
                    })
                })
                .collect()
        }))
    }

    /// Rows `start..end` along the first axis of a rank-2 tensor.
    pub fn slice_rows(&self, x: &Tensor<S>, start: usize, end: usize) -> Result<Tensor<S>> {
        let (r, c) = x.dims2("slice_rows")?;
        if start > end || end > r {
            return Err(TensorError::IndexOutOfRange {
                op: "slice_rows",
                index: end,
                bound: r,
            });
        }
        let out = x.data()[start * c..end * c].to_vec();
        Ok(self.record("slice_rows", &[x], vec![end - start, c], out, move |g, _| {
            let mut gx = vec![S::zero(); r * c];
            gx[start * c..end * c].copy_from_slice(g);
            vec![Some(gx)]
        }))
    }

    /// Stacks rank-2 tensors with equal column counts along rows.
    pub fn concat_rows(&self, parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
        let first = parts.first().ok_or_else(|| invalid("concat_rows", "no inputs"))?;
        let (_, c) = first.dims2("concat_rows")?;
        let mut sizes = Vec::with_capacity(parts.len());
        let mut out = Vec::new();
        for p in parts {
            let (pr, pc) = p.dims2("concat_rows")?;
            if pc != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            sizes.push(pr * pc);
            out.extend_from_slice(p.data());
        }
        let rows = out.len() / c.max(1);
        Ok(self.record("concat_rows", parts, vec![rows, c], out, move |g, needs| {
            let mut offset = 0;
            sizes
                .iter()
                .zip(needs)
                .map(|(&n, &need)| {
                    let start = offset;
                    offset += n;
                    need.then(|| g[start..start + n].to_vec())
                })
                .collect()
        }))
    }

    /// Repeats a rank-2 tensor `times` times along rows.
    pub fn repeat_rows(&self, x: &Tensor<S>, times: usize) -> Result<Tensor<S>> {
        let (r, c) = x.dims2("repeat_rows")?;
        let mut out = Vec::with_capacity(r * c * times);
        for _ in 0..times {
            out.extend_from_slice(x.data());
        }
        let n = r * c;
        Ok(self.record("repeat_rows", &[x], vec![r * times, c], out, move |g, _| {
            let mut gx = vec![S::zero(); n];
            for block in g.chunks_exact(n.max(1)) {
                for (a, &b) in gx.iter_mut().zip(block) {
                    *a += b;
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use crate::{Tape, Tensor};

    #[test]
    fn slice_concat_inverse() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_f64(vec![2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let a = tape.slice_cols(&x, 0, 1).unwrap();
        let b = tape.slice_cols(&x, 1, 4).unwrap();
        assert_eq!(b.data(), &[2., 3., 4., 6., 7., 8.]);
        let y = tape.concat_cols(&[&a, &b]).unwrap();
        assert_eq!(y.data(), x.data());
        let top = tape.slice_rows(&x, 0, 1).unwrap();
        let bottom = tape.slice_rows(&x, 1, 2).unwrap();
        assert_eq!(tape.concat_rows(&[&top, &bottom]).unwrap().data(), x.data());
    }

    #[test]
    fn repeat_rows_tiles() {
        let tape = Tape::<f64>::new();
        let x = Tensor::from_f64(vec![1, 2], &[1., 2.]).unwrap();
        assert_eq!(tape.repeat_rows(&x, 3).unwrap().data(), &[1., 2., 1., 2., 1., 2.]);
    }
}
