use super::fft::{self, ComplexTensor};
use super::kernels::{self, Padding, PoolMode};
use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

/// Elementwise single-input operations.
#[derive(Clone, Copy, Debug, PartialEq)]
#[doc(hidden)]
pub enum Unary {
    Square,
    Sqrt,
    Sigmoid,
    Relu,
    Abs,
    AddScalar(f64),
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[doc(hidden)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub(crate) fn unary_forward<T: Scalar>(x: &Tensor<T>, op: Unary) -> Tensor<T> {
    match op {
        Unary::Square => x.map(|v| v * v),
        Unary::Sqrt => x.map(|v| v.sqrt()),
        Unary::Sigmoid => x.map(sigmoid),
        Unary::Relu => x.map(|v| if v > T::ZERO { v } else { T::ZERO }),
        Unary::Abs => x.map(|v| v.abs()),
        Unary::AddScalar(s) => {
            let s = T::from_f64(s);
            x.map(|v| v + s)
        }
        Unary::Scale(s) => {
            let s = T::from_f64(s);
            x.map(|v| v * s)
        }
    }
}

/// Gradient of a unary op given its input `x`, output `y` and upstream `g`.
pub(crate) fn unary_backward<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, g: &Tensor<T>, op: Unary) -> Tensor<T> {
    let two = T::from_f64(2.0);
    let half = T::from_f64(0.5);
    let f = |i: usize| -> T {
        let (xv, yv, gv) = (x.data()[i], y.data()[i], g.data()[i]);
        match op {
            Unary::Square => gv * two * xv,
            Unary::Sqrt => gv * half / yv,
            Unary::Sigmoid => gv * yv * (T::ONE - yv),
            Unary::Relu if xv > T::ZERO => gv,
            Unary::Relu => T::ZERO,
            Unary::Abs if xv > T::ZERO => gv,
            Unary::Abs if xv < T::ZERO => -gv,
            Unary::Abs => T::ZERO,
            Unary::AddScalar(_) => gv,
            Unary::Scale(s) => gv * T::from_f64(s),
        }
    };
    Tensor::from_fn(x.shape(), f)
}

pub(crate) fn binary_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
    a.ensure_same_shape(b, "elementwise op")?;
    let f = |i: usize| -> T {
        let (x, y) = (a.data()[i], b.data()[i]);
        match op {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        }
    };
    Ok(Tensor::from_fn(a.shape(), f))
}

/// Real FFT with real and imaginary parts stacked along channels:
/// `[C, H, W] -> [2C, H, W/2+1]`.
pub(crate) fn rfft2_stacked<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let spec = fft::rfft2(x)?;
    kernels::concat_channels(&[&spec.re, &spec.im])
}

pub(crate) fn unstack<T: Scalar>(x: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (c2, _, _) = x.dims3()?;
    if c2 % 2 != 0 {
        return Err(dim_err!("stacked spectrum needs an even channel count, got {c2}"));
    }
    let c = c2 / 2;
    ComplexTensor::new(kernels::slice_channels(x, 0, c)?, kernels::slice_channels(x, c, c)?)
}

pub(crate) fn irfft2_stacked<T: Scalar>(x: &Tensor<T>, width: usize) -> Result<Tensor<T>> {
    fft::irfft2(&unstack(x)?, width)
}

/// Differentiable operations over some handle type. [`super::Tape`] records
/// them for backpropagation; [`super::Eager`] only evaluates.
pub trait Backend<T: Scalar> {
    type Handle: Clone;

    /// An input that never receives a gradient.
    fn constant(&mut self, t: Tensor<T>) -> Self::Handle;
    /// A trainable input; its gradient is reported by the backward pass.
    fn param(&mut self, t: &Tensor<T>) -> Self::Handle;
    fn value<'a>(&'a self, h: &'a Self::Handle) -> &'a Tensor<T>;

    #[doc(hidden)]
    fn unary(&mut self, x: &Self::Handle, op: Unary) -> Result<Self::Handle>;
    #[doc(hidden)]
    fn binary(&mut self, a: &Self::Handle, b: &Self::Handle, op: Binary) -> Result<Self::Handle>;

    fn conv2d(
        &mut self,
        x: &Self::Handle,
        kernel: &Self::Handle,
        bias: &Self::Handle,
        padding: Padding,
    ) -> Result<Self::Handle>;
    /// 3x3 window mean per channel, mirror padded.
    fn box_mean3(&mut self, x: &Self::Handle) -> Result<Self::Handle>;
    fn slice_channels(&mut self, x: &Self::Handle, start: usize, len: usize) -> Result<Self::Handle>;
    fn concat_channels(&mut self, parts: &[Self::Handle]) -> Result<Self::Handle>;
    fn global_pool(&mut self, x: &Self::Handle, mode: PoolMode) -> Result<Self::Handle>;
    /// `x[c] * w[c]` with `w` of shape `[C, 1, 1]`.
    fn scale_channels(&mut self, x: &Self::Handle, w: &Self::Handle) -> Result<Self::Handle>;
    /// `[C, H, W] -> [2C, H, W/2+1]`, real parts first.
    fn rfft2(&mut self, x: &Self::Handle) -> Result<Self::Handle>;
    /// Inverse of [`Backend::rfft2`].
    fn irfft2(&mut self, x: &Self::Handle, width: usize) -> Result<Self::Handle>;
    /// Mean over all elements, as a one-element tensor.
    fn mean(&mut self, x: &Self::Handle) -> Result<Self::Handle>;

    fn add(&mut self, a: &Self::Handle, b: &Self::Handle) -> Result<Self::Handle> {
        self.binary(a, b, Binary::Add)
    }
    fn sub(&mut self, a: &Self::Handle, b: &Self::Handle) -> Result<Self::Handle> {
        self.binary(a, b, Binary::Sub)
    }
    fn mul(&mut self, a: &Self::Handle, b: &Self::Handle) -> Result<Self::Handle> {
        self.binary(a, b, Binary::Mul)
    }
    fn square(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        self.unary(x, Unary::Square)
    }
    fn sqrt(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        self.unary(x, Unary::Sqrt)
    }
    fn sigmoid(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        self.unary(x, Unary::Sigmoid)
    }
    fn relu(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        self.unary(x, Unary::Relu)
    }
    fn abs(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        self.unary(x, Unary::Abs)
    }
    fn add_scalar(&mut self, x: &Self::Handle, s: f64) -> Result<Self::Handle> {
        self.unary(x, Unary::AddScalar(s))
    }
    fn scale(&mut self, x: &Self::Handle, s: f64) -> Result<Self::Handle> {
        self.unary(x, Unary::Scale(s))
    }
    fn sum(&mut self, x: &Self::Handle) -> Result<Self::Handle> {
        let n = self.value(x).len() as f64;
        let m = self.mean(x)?;
        self.scale(&m, n)
    }
}
