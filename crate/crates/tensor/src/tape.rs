//! Operation tape and reverse traversal.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::OnceLock;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Identifier of a tracked tensor on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded op.
///
/// Receives the output gradient and a mask of which inputs need a gradient,
/// returns one optional gradient per input (same shape as that input).
pub(crate) type BackwardFn<S> = Box<dyn Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>>>;

struct Record<S: Scalar> {
    kind: &'static str,
    inputs: Vec<Option<NodeId>>,
    output: NodeId,
    backward: BackwardFn<S>,
}

/// Reverse-mode tape. Rebuilt for every training step.
///
/// Records are appended in execution order, so the tape is always
/// topologically sorted and backward is a single reverse sweep.
pub struct Tape<S: Scalar> {
    records: RefCell<Vec<Record<S>>>,
    next_id: Cell<usize>,
    recording: Cell<bool>,
}

/// Restores the previous recording flag on drop.
pub struct PauseGuard<'a, S: Scalar> {
    tape: &'a Tape<S>,
    prev: bool,
}

impl<S: Scalar> Drop for PauseGuard<'_, S> {
    fn drop(&mut self) {
        self.tape.recording.set(self.prev);
    }
}

fn nan_checks_enabled() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        std::env::var("URM_DEBUG_FINITE")
            .map(|v| v != "0" && !v.is_empty())
            .unwrap_or(false)
    })
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            records: RefCell::new(Vec::new()),
            next_id: Cell::new(0),
            recording: Cell::new(true),
        }
    }

    /// A tape that never records; every op result is a constant.
    pub fn inference() -> Self {
        let t = Self::new();
        t.recording.set(false);
        t
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Stops recording until the guard is dropped. Ops still compute values.
    pub fn pause(&self) -> PauseGuard<'_, S> {
        let prev = self.recording.replace(false);
        PauseGuard { tape: self, prev }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded operations of the given kind.
    pub fn count_kind(&self, kind: &str) -> usize {
        self.records
            .borrow()
            .iter()
            .filter(|r| r.kind == kind)
            .count()
    }

    fn fresh_id(&self) -> NodeId {
        let id = self.next_id.get();
        self.next_id.set(id + 1);
        NodeId(id)
    }

    /// Registers `t` as a tracked leaf (e.g. a parameter). Shares its buffer.
    pub fn watch(&self, t: &Tensor<S>) -> Tensor<S> {
        Tensor::from_parts(t.shape().to_vec(), Rc::clone(t.data_rc()), Some(self.fresh_id()))
    }

    /// Value-identical tensor with no gradient path to its input.
    pub fn detach(&self, t: &Tensor<S>) -> Tensor<S> {
        t.detach()
    }

    /// Appends an op. The backward closure is kept only if the op is tracked.
    pub(crate) fn record<F>(
        &self,
        kind: &'static str,
        inputs: &[&Tensor<S>],
        shape: Vec<usize>,
        data: Vec<S>,
        backward: F,
    ) -> Tensor<S>
    where
        F: Fn(&[S], &[bool]) -> Vec<Option<Vec<S>>> + 'static,
    {
        if nan_checks_enabled() && data.iter().any(|v| !v.is_finite()) {
            let finite_inputs = inputs.iter().all(|t| t.is_finite());
            assert!(!finite_inputs, "{kind} produced a non-finite value from finite inputs");
        }
        let tracked = self.recording.get() && inputs.iter().any(|t| t.requires_grad());
        if !tracked {
            return Tensor::from_parts(shape, Rc::new(data), None);
        }
        let output = self.fresh_id();
        self.records.borrow_mut().push(Record {
            kind,
            inputs: inputs.iter().map(|t| t.node_id()).collect(),
            output,
            backward: Box::new(backward),
        });
        Tensor::from_parts(shape, Rc::new(data), Some(output))
    }

    /// User-defined differentiable op with an explicit vector-Jacobian product.
    ///
    /// `backward` receives the output gradient and must return one gradient
    /// per input, each with that input's element count.
    pub fn custom<F>(
        &self,
        kind: &'static str,
        inputs: &[&Tensor<S>],
        shape: Vec<usize>,
        data: Vec<S>,
        backward: F,
    ) -> Result<Tensor<S>>
    where
        F: Fn(&[S]) -> Vec<Vec<S>> + 'static,
    {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(self.record(kind, inputs, shape, data, move |g, needs| {
            backward(g)
                .into_iter()
                .zip(needs)
                .map(|(gi, &n)| n.then_some(gi))
                .collect()
        }))
    }

    /// Reverse sweep from a single-element tracked tensor.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        let root = match (loss.node_id(), loss.numel()) {
            (Some(id), 1) => id,
            _ => return Err(TensorError::NotScalarLoss(loss.shape().to_vec())),
        };
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.next_id.get()];
        grads[root.0] = Some(vec![S::one()]);
        let records = self.records.borrow();
        let mut needs = Vec::new();
        for rec in records.iter().rev() {
            let Some(g_out) = grads[rec.output.0].take() else {
                continue;
            };
            needs.clear();
            needs.extend(rec.inputs.iter().map(Option::is_some));
            let in_grads = (rec.backward)(&g_out, &needs);
            debug_assert_eq!(in_grads.len(), rec.inputs.len(), "{}", rec.kind);
            for (input, g) in rec.inputs.iter().zip(in_grads) {
                let (Some(id), Some(g)) = (input, g) else {
                    continue;
                };
                match &mut grads[id.0] {
                    Some(acc) => {
                        debug_assert_eq!(acc.len(), g.len(), "{}", rec.kind);
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of a backward sweep, indexed by node.
///
/// Only leaves (watched tensors) keep their gradient after the sweep;
/// intermediate gradients are released as soon as they are consumed.
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a watched tensor, or `None` if no path reached it.
    pub fn get(&self, t: &Tensor<S>) -> Option<&[S]> {
        t.node_id()
            .and_then(|id| self.grads.get(id.0))
            .and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but returns zeros when nothing reached `t`.
    pub fn get_or_zeros(&self, t: &Tensor<S>) -> Vec<S> {
        self.get(t)
            .map(<[S]>::to_vec)
            .unwrap_or_else(|| vec![S::zero(); t.numel()])
    }

    pub fn take(&mut self, t: &Tensor<S>) -> Option<Vec<S>> {
        t.node_id()
            .and_then(|id| self.grads.get_mut(id.0))
            .and_then(Option::take)
    }
}
