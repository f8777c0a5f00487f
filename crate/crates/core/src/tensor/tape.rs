use super::backend::{self, Backend, Binary, Unary};
use super::fft;
use super::kernels::{self, Padding, PoolMode};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary { x: Var, op: Unary },
    Binary { a: Var, b: Var, op: Binary },
    Conv2d { x: Var, kernel: Var, bias: Var, padding: Padding },
    BoxMean3 { x: Var },
    Slice { x: Var, start: usize },
    Concat { parts: Vec<Var> },
    Pool { x: Var, mode: PoolMode, argmax: Vec<usize> },
    ScaleChannels { x: Var, w: Var },
    Rfft2 { x: Var },
    Irfft2 { x: Var },
    Mean { x: Var },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Whether any trainable leaf flows into this node.
    tracked: bool,
}

/// Append-only record of a forward computation. Nodes are stored in
/// execution order, so the record is topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the tracked leaves of a tape.
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` if `v` is not a tracked leaf reachable
    /// from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn add_into<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.tracked {
            return Err(Error::Usage("loss does not depend on any trainable parameter".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::ONE));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (target, grad) in self.node_backward(node, &g)? {
                if self.nodes[target.0].tracked {
                    add_into(&mut grads[target.0], grad);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Unary { x, op } => {
                vec![(*x, backend::unary_backward(self.val(*x), &node.value, g, *op))]
            }
            Op::Binary { a, b, op } => match op {
                Binary::Add => vec![(*a, g.clone()), (*b, g.clone())],
                Binary::Sub => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
                Binary::Mul => vec![
                    (*a, backend::binary_forward(g, self.val(*b), Binary::Mul)?),
                    (*b, backend::binary_forward(g, self.val(*a), Binary::Mul)?),
                ],
            },
            Op::Conv2d { x, kernel, bias, padding } => {
                let (gx, gk, gb) =
                    kernels::conv2d_backward(self.val(*x), self.val(*kernel), g, *padding)?;
                vec![(*x, gx), (*kernel, gk), (*bias, gb)]
            }
            Op::BoxMean3 { x } => vec![(*x, kernels::box_mean3_backward(g)?)],
            Op::Slice { x, start } => {
                let src = self.val(*x);
                let plane: usize = src.shape()[1..].iter().product();
                let mut gx = Tensor::zeros(src.shape());
                gx.data_mut()[start * plane..start * plane + g.len()].copy_from_slice(g.data());
                vec![(*x, gx)]
            }
            Op::Concat { parts } => {
                let mut out = Vec::with_capacity(parts.len());
                let mut offset = 0;
                for p in parts {
                    let shape = self.val(*p).shape();
                    let n = self.val(*p).len();
                    out.push((*p, Tensor::new(shape.to_vec(), g.data()[offset..offset + n].to_vec())?));
                    offset += n;
                }
                out
            }
            Op::Pool { x, mode, argmax } => {
                vec![(*x, kernels::global_pool_backward(self.val(*x).shape(), g, *mode, argmax))]
            }
            Op::ScaleChannels { x, w } => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let plane: usize = xv.shape()[1..].iter().product();
                let gw: Vec<T> = g
                    .data()
                    .chunks_exact(plane)
                    .zip(xv.data().chunks_exact(plane))
                    .map(|(a, b)| T::from_f64(a.iter().zip(b).map(|(p, q)| p.to_f64() * q.to_f64()).sum()))
                    .collect();
                vec![
                    (*x, kernels::scale_channels(g, wv)?),
                    (*w, Tensor::new(wv.shape().to_vec(), gw)?),
                ]
            }
            Op::Rfft2 { x } => {
                let width = self.val(*x).shape()[2];
                vec![(*x, fft::rfft2_adjoint(&backend::unstack(g)?, width)?)]
            }
            Op::Irfft2 { x } => {
                let adj = fft::irfft2_adjoint(g)?;
                vec![(*x, kernels::concat_channels(&[&adj.re, &adj.im])?)]
            }
            Op::Mean { x } => {
                let shape = self.val(*x).shape();
                let n = self.val(*x).len() as f64;
                vec![(*x, Tensor::full(shape, T::from_f64(g.data()[0].to_f64() / n)))]
            }
        })
    }
}

impl<T: Scalar> Backend<T> for Tape<T> {
    type Handle = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, tracked: false });
        Var(self.nodes.len() - 1)
    }

    fn param(&mut self, t: &Tensor<T>) -> Var {
        self.nodes.push(Node { value: t.clone(), op: Op::Leaf, tracked: true });
        Var(self.nodes.len() - 1)
    }

    fn value<'a>(&'a self, h: &'a Var) -> &'a Tensor<T> {
        &self.nodes[h.0].value
    }

    fn unary(&mut self, x: &Var, op: Unary) -> Result<Var> {
        let v = backend::unary_forward(self.val(*x), op);
        Ok(self.push(v, Op::Unary { x: *x, op }, &[*x]))
    }

    fn binary(&mut self, a: &Var, b: &Var, op: Binary) -> Result<Var> {
        let v = backend::binary_forward(self.val(*a), self.val(*b), op)?;
        Ok(self.push(v, Op::Binary { a: *a, b: *b, op }, &[*a, *b]))
    }

    fn conv2d(&mut self, x: &Var, kernel: &Var, bias: &Var, padding: Padding) -> Result<Var> {
        let v = kernels::conv2d(self.val(*x), self.val(*kernel), self.val(*bias), padding)?;
        let op = Op::Conv2d { x: *x, kernel: *kernel, bias: *bias, padding };
        Ok(self.push(v, op, &[*x, *kernel, *bias]))
    }

    fn box_mean3(&mut self, x: &Var) -> Result<Var> {
        let v = kernels::box_mean3(self.val(*x))?;
        Ok(self.push(v, Op::BoxMean3 { x: *x }, &[*x]))
    }

    fn slice_channels(&mut self, x: &Var, start: usize, len: usize) -> Result<Var> {
        let v = kernels::slice_channels(self.val(*x), start, len)?;
        Ok(self.push(v, Op::Slice { x: *x, start }, &[*x]))
    }

    fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| self.val(*p)).collect();
        let v = kernels::concat_channels(&refs)?;
        Ok(self.push(v, Op::Concat { parts: parts.to_vec() }, parts))
    }

    fn global_pool(&mut self, x: &Var, mode: PoolMode) -> Result<Var> {
        let (v, argmax) = kernels::global_pool(self.val(*x), mode)?;
        Ok(self.push(v, Op::Pool { x: *x, mode, argmax }, &[*x]))
    }

    fn scale_channels(&mut self, x: &Var, w: &Var) -> Result<Var> {
        let v = kernels::scale_channels(self.val(*x), self.val(*w))?;
        Ok(self.push(v, Op::ScaleChannels { x: *x, w: *w }, &[*x, *w]))
    }

    fn rfft2(&mut self, x: &Var) -> Result<Var> {
        let v = backend::rfft2_stacked(self.val(*x))?;
        Ok(self.push(v, Op::Rfft2 { x: *x }, &[*x]))
    }

    fn irfft2(&mut self, x: &Var, width: usize) -> Result<Var> {
        let v = backend::irfft2_stacked(self.val(*x), width)?;
        Ok(self.push(v, Op::Irfft2 { x: *x }, &[*x]))
    }

    fn mean(&mut self, x: &Var) -> Result<Var> {
        let v = Tensor::scalar(T::from_f64(self.val(*x).mean_f64()));
        Ok(self.push(v, Op::Mean { x: *x }, &[*x]))
    }
}
