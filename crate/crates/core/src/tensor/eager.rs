use std::rc::Rc;

use super::backend::{self, Backend, Binary, Unary};
use super::kernels::{self, Padding, PoolMode};
use super::{Scalar, Tensor};
use crate::error::Result;

/// Evaluates operations immediately without recording a graph.
/// Intermediates are freed when their handles drop.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<T: Scalar> Backend<T> for Eager {
    type Handle = Rc<Tensor<T>>;

    fn constant(&mut self, t: Tensor<T>) -> Self::Handle {
        Rc::new(t)
    }

    fn param(&mut self, t: &Tensor<T>) -> Self::Handle {
        Rc::new(t.clone())
    }

    fn value<'a>(&'a self, h: &'a Self::Handle) -> &'a Tensor<T> {
        h
    }

    fn unary(&mut self, x: &Self::Handle, op: Unary) -> Result<Self::Handle> {
        Ok(Rc::new(backend::unary_forward(x, op)))
    }

    fn binary(&mut self, a: &Self::Handle, b: &Self::Handle, op: Binary) -> Result<Self::Handle> {
        Ok(Rc::new(backend::binary_forward(a, b, op)?))
    }

    fn conv2d(
        &mut self,
        x: &Self::Handle,
        kernel: &Self::Handle,
        bias: &Self::Handle,
        padding: Padding,
    ) -> Result<Self::Handle> {
        Ok(Rc::new(kernels::conv2d(x, kernel, bias, padding)?))
    }

    fn box_mean3(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        Ok(Rc::new(kernels::box_mean3(x)?))
    }

    fn slice_channels(&mut self, x: &Self::Handle, start: usize, len: usize) -> Result<Self::Handle> {
        Ok(Rc::new(kernels::slice_channels(x, start, len)?))
    }

    fn concat_channels(&mut self, parts: &[Self::Handle]) -> Result<Self::Handle> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| p.as_ref()).collect();
        Ok(Rc::new(kernels::concat_channels(&refs)?))
    }

    fn global_pool(&mut self, x: &Self::Handle, mode: PoolMode) -> Result<Self::Handle> {
        Ok(Rc::new(kernels::global_pool(x, mode)?.0))
    }

    fn scale_channels(&mut self, x: &Self::Handle, w: &Self::Handle) -> Result<Self::Handle> {
        Ok(Rc::new(kernels::scale_channels(x, w)?))
    }

    fn rfft2(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        Ok(Rc::new(backend::rfft2_stacked(x)?))
    }

    fn irfft2(&mut self, x: &Self::Handle, width: usize) -> Result<Self::Handle> {
        Ok(Rc::new(backend::irfft2_stacked(x, width)?))
    }

    fn mean(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        Ok(Rc::new(Tensor::scalar(T::from_f64(x.mean_f64()))))
    }
}
