//! Real 2D FFT over the last two axes of a `[C, H, W]` tensor.
//!
//! Convention: the forward transform is unnormalized, the inverse carries
//! the `1/(H*W)` factor. The half spectrum keeps `W/2 + 1` columns. The
//! inverse ignores the imaginary part of the DC and (even `W`) Nyquist
//! columns after the column transform, exactly like a c2r transform.
//!
//! Transforms run in `f64` regardless of the tensor element type.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{Scalar, Tensor};
use crate::error::{dim_err, Result};

/// Complex tensor stored as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexTensor<T = f32> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Scalar> ComplexTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        re.ensure_same_shape(&im, "complex tensor")?;
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn norm_sqr(&self, i: usize) -> f64 {
        let (r, m) = (self.re.data()[i].to_f64(), self.im.data()[i].to_f64());
        r * r + m * m
    }
}

/// Number of stored columns of the half spectrum for a signal of width `w`.
pub fn half_width(w: usize) -> usize {
    w / 2 + 1
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// In-place transform of the first `cols` columns of an `h x stride` grid.
fn transform_columns(grid: &mut [Complex64], h: usize, stride: usize, cols: usize, inverse: bool) {
    let fft = plan(h, inverse);
    let mut col = vec![Complex64::default(); h];
    for v in 0..cols {
        for u in 0..h {
            col[u] = grid[u * stride + v];
        }
        fft.process(&mut col);
        for u in 0..h {
            grid[u * stride + v] = col[u];
        }
    }
}

fn check_spatial(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(dim_err!("FFT needs H, W >= 2, got {h}x{w}"));
    }
    Ok(())
}

/// Unnormalized real-to-complex 2D transform per channel.
pub fn rfft2<T: Scalar>(input: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (c, h, w) = input.dims3()?;
    check_spatial(h, w)?;
    let wr = half_width(w);
    let row_fft = plan(w, false);
    let mut re = Vec::with_capacity(c * h * wr);
    let mut im = Vec::with_capacity(c * h * wr);
    let mut row = vec![Complex64::default(); w];
    let mut grid = vec![Complex64::default(); h * wr];
    for ch in 0..c {
        let plane = input.channel(ch);
        for y in 0..h {
            for (dst, v) in row.iter_mut().zip(&plane[y * w..(y + 1) * w]) {
                *dst = Complex64::new(v.to_f64(), 0.0);
            }
            row_fft.process(&mut row);
            grid[y * wr..(y + 1) * wr].copy_from_slice(&row[..wr]);
        }
        transform_columns(&mut grid, h, wr, wr, false);
        re.extend(grid.iter().map(|z| T::from_f64(z.re)));
        im.extend(grid.iter().map(|z| T::from_f64(z.im)));
    }
    ComplexTensor::new(Tensor::new(vec![c, h, wr], re)?, Tensor::new(vec![c, h, wr], im)?)
}

/// Weight of half-spectrum column `v` when expanding to the full spectrum.
fn column_multiplicity(v: usize, w: usize) -> f64 {
    if v == 0 || (w % 2 == 0 && v == w / 2) {
        1.0
    } else {
        2.0
    }
}

/// Inverse of [`rfft2`], producing a `[C, H, width]` real tensor.
pub fn irfft2<T: Scalar>(spectrum: &ComplexTensor<T>, width: usize) -> Result<Tensor<T>> {
    let (c, h, wr) = spectrum.re.dims3()?;
    check_spatial(h, width)?;
    if wr != half_width(width) {
        return Err(dim_err!(
            "half spectrum has {wr} columns but width {width} needs {}",
            half_width(width)
        ));
    }
    let w = width;
    let row_ifft = plan(w, true);
    let scale = 1.0 / (h * w) as f64;
    let mut out = Vec::with_capacity(c * h * w);
    let mut grid = vec![Complex64::default(); h * wr];
    let mut row = vec![Complex64::default(); w];
    for ch in 0..c {
        let (rp, ip) = (spectrum.re.channel(ch), spectrum.im.channel(ch));
        for (i, z) in grid.iter_mut().enumerate() {
            *z = Complex64::new(rp[i].to_f64(), ip[i].to_f64());
        }
        transform_columns(&mut grid, h, wr, wr, true);
        for y in 0..h {
            let zr = &grid[y * wr..(y + 1) * wr];
            for v in 0..w {
                row[v] = if v < wr {
                    if column_multiplicity(v, w) == 1.0 {
                        Complex64::new(zr[v].re, 0.0)
                    } else {
                        zr[v]
                    }
                } else {
                    zr[w - v].conj()
                };
            }
            row_ifft.process(&mut row);
            out.extend(row.iter().map(|z| T::from_f64(z.re * scale)));
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Adjoint of [`rfft2`]: maps gradients on the real and imaginary parts of
/// the half spectrum back to the `[C, H, width]` input.
pub fn rfft2_adjoint<T: Scalar>(grad: &ComplexTensor<T>, width: usize) -> Result<Tensor<T>> {
    let (c, h, wr) = grad.re.dims3()?;
    let w = width;
    let row_ifft = plan(w, true);
    let mut out = Vec::with_capacity(c * h * w);
    let mut grid = vec![Complex64::default(); h * w];
    for ch in 0..c {
        let (rp, ip) = (grad.re.channel(ch), grad.im.channel(ch));
        grid.fill(Complex64::default());
        for u in 0..h {
            for v in 0..wr {
                grid[u * w + v] = Complex64::new(rp[u * wr + v].to_f64(), ip[u * wr + v].to_f64());
            }
        }
        transform_columns(&mut grid, h, w, wr, true);
        for y in 0..h {
            let row = &mut grid[y * w..(y + 1) * w];
            row_ifft.process(row);
            out.extend(row.iter().map(|z| T::from_f64(z.re)));
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Adjoint of [`irfft2`]: maps a gradient on the spatial output back onto
/// the real and imaginary parts of the half spectrum.
pub fn irfft2_adjoint<T: Scalar>(grad: &Tensor<T>) -> Result<ComplexTensor<T>> {
    let (_, h, w) = grad.dims3()?;
    let spec = rfft2(&grad.cast::<f64>())?;
    let wr = half_width(w);
    let scale = 1.0 / (h * w) as f64;
    let weight = |i: usize, v: f64| T::from_f64(v * column_multiplicity(i % wr, w) * scale);
    let re = spec.re.data().iter().enumerate().map(|(i, &v)| weight(i, v)).collect();
    let im = spec.im.data().iter().enumerate().map(|(i, &v)| weight(i, v)).collect();
    ComplexTensor::new(
        Tensor::new(spec.re.shape().to_vec(), re)?,
        Tensor::new(spec.im.shape().to_vec(), im)?,
    )
}
