use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{bail, Result};

use super::conv::{
    conv2d_backward_saved, conv2d_forward, conv2d_transpose_backward_geom, conv2d_transpose_forward,
    ConvGeometry, ConvSaved,
};
use super::ops;
use super::{Padding, Scalar, Tensor};

/// Identifies a trainable parameter across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, k: Var, b: Var, saved: ConvSaved<T> },
    ConvTranspose { x: Var, k: Var, b: Var, geometry: ConvGeometry },
    Relu(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Dropout { x: Var, mask: Option<Vec<T>> },
    Dense { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    Reshape(Var),
    Mse { pred: Var, target: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records executed ops with the inputs their backward passes need.
///
/// Ops are appended in execution order; [`GradTape::backward`] replays them
/// in reverse. A tape supports exactly one backward pass.
pub struct GradTape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T: Scalar = f32> {
    params: BTreeMap<ParamId, Tensor<T>>,
    inputs: BTreeMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// Gradient reaching a tape input, if any flowed back to it.
    pub fn input(&self, var: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&var.0)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Tensor::is_finite)
    }
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor<T>) -> Var {
        self.push(value, Op::Param(id))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (out, saved) =
            conv2d_forward(self.value(x), self.value(k), self.value(b), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { x, k, b, saved }))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let (out, geometry, _) =
            conv2d_transpose_forward(self.value(x), self.value(k), self.value(b), stride)?;
        Ok(self.push(out, Op::ConvTranspose { x, k, b, geometry }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = ops::max_pool2(self.value(x))?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        let (out, mask) = ops::dropout(self.value(x), rate, rng, training)?;
        Ok(self.push(out, Op::Dropout { x, mask }))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let out = ops::dense(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(out, Op::Dense { x, w, b }))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_last(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Mean squared error between two recorded values; produces a scalar.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Tensor::scalar(T::from_f64(loss)), Op::Mse { pred, target }))
    }

    /// Reverse-mode pass from a scalar `loss`.
    ///
    /// Every parameter registered on the tape gets a gradient; parameters
    /// the loss does not depend on get zeros. Fails on a second call.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            bail!(Usage, "backward already ran on this tape; record a fresh forward pass");
        }
        if self.value(loss).len() != 1 {
            bail!(Usage, "backward root must be a scalar, got shape {:?}", self.value(loss).shape());
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {
                    out.inputs.insert(i, g);
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => acc.add_assign(&g)?,
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                Op::Conv2d { x, k, b, saved } => {
                    let (dx, dk, db) =
                        conv2d_backward_saved(saved, self.value(*x).shape(), self.value(*k), &g)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *k, dk)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::ConvTranspose { x, k, b, geometry } => {
                    let (dx, dk, db) =
                        conv2d_transpose_backward_geom(geometry, self.value(*x), self.value(*k), &g)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *k, dk)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Relu(x) => {
                    let dx = ops::relu_backward(self.value(*x), &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::MaxPool { x, argmax } => {
                    let dx = ops::max_pool2_backward(self.value(*x).shape(), argmax, &g)?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Dropout { x, mask } => {
                    let dx = match mask {
                        Some(m) => {
                            let data = g.data().iter().zip(m).map(|(&a, &b)| a * b).collect();
                            Tensor::new(g.shape().to_vec(), data)?
                        }
                        None => g,
                    };
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(self.value(*x), self.value(*w), &g)?;
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Concat { a, b } => {
                    let at = *self.value(*a).shape().last().unwrap_or(&0);
                    let (da, db) = ops::split_last(&g, at)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Reshape(x) => {
                    let dx = g.reshape(self.value(*x).shape())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Mse { pred, target } => {
                    let scale = g.data()[0];
                    let dp = ops::mse_loss_grad(self.value(*pred), self.value(*target))?
                        .map(|v| v * scale);
                    let dt = dp.map(|v| -v);
                    accumulate(&mut grads, *pred, dp)?;
                    accumulate(&mut grads, *target, dt)?;
                }
            }
        }

        for node in &self.nodes {
            if let Op::Param(id) = node.op {
                out.params
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) -> Result<()> {
    match &mut grads[var.0] {
        Some(acc) => acc.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}
