//! Forward and adjoint kernels on `[C, H, W]` tensors.
//!
//! These are plain functions with no graph bookkeeping; [`super::Tape`] and
//! [`super::Eager`] both dispatch here.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{config_err, dim_err, Result};

/// Border handling for 3x3 convolutions. 1x1 convolutions take `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    None,
    Zero,
    /// Reflection without repeating the edge sample: index `-1` reads `1`.
    Mirror,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Reflect an index in `-1..=n` back into `0..n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Pads every channel by one pixel on each side.
pub fn pad1<T: Scalar>(input: &Tensor<T>, padding: Padding) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let (hp, wp) = (h + 2, w + 2);
    let mut out = vec![T::ZERO; c * hp * wp];
    let src = input.data();
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for py in 0..hp {
            let y = py as isize - 1;
            let sy = match padding {
                Padding::Mirror => Some(reflect(y, h)),
                Padding::Zero if (0..h as isize).contains(&y) => Some(y as usize),
                Padding::Zero => None,
                Padding::None => return Err(config_err!("pad1 requires zero or mirror padding")),
            };
            let Some(sy) = sy else { continue };
            let row = &plane[sy * w..(sy + 1) * w];
            let drow = &mut dst[py * wp..(py + 1) * wp];
            drow[1..=w].copy_from_slice(row);
            if padding == Padding::Mirror {
                drow[0] = row[reflect(-1, w)];
                drow[w + 1] = row[reflect(w as isize, w)];
            }
        }
    }
    Tensor::new(vec![c, hp, wp], out)
}

/// Adjoint of [`pad1`]: folds the gradient of a padded tensor back onto the
/// unpadded source positions.
pub fn unpad1_adjoint<T: Scalar>(grad_padded: &Tensor<T>, padding: Padding) -> Result<Tensor<T>> {
    let (c, hp, wp) = grad_padded.dims3()?;
    let (h, w) = (hp - 2, wp - 2);
    let mut out = vec![T::ZERO; c * h * w];
    let src = grad_padded.data();
    for ch in 0..c {
        let gp = &src[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for py in 0..hp {
            for px in 0..wp {
                let (y, x) = (py as isize - 1, px as isize - 1);
                let target = match padding {
                    Padding::Mirror => Some((reflect(y, h), reflect(x, w))),
                    _ if (0..h as isize).contains(&y) && (0..w as isize).contains(&x) => {
                        Some((y as usize, x as usize))
                    }
                    _ => None,
                };
                if let Some((sy, sx)) = target {
                    dst[sy * w + sx] += gp[py * wp + px];
                }
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (cin, h, w) = input.dims3()?;
    let [cout, kcin, kh, kw] = kernel.shape()[..] else {
        return Err(dim_err!("conv kernel must be [Cout, Cin, k, k], got {:?}", kernel.shape()));
    };
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(config_err!("unsupported conv kernel size {kh}x{kw}; expected 1x1 or 3x3"));
    }
    if kcin != cin {
        return Err(dim_err!("conv kernel expects {kcin} input channels, input has {cin}"));
    }
    if bias.shape() != [cout] {
        return Err(dim_err!("conv bias must be [{cout}], got {:?}", bias.shape()));
    }
    match (kh, padding) {
        (1, Padding::None) | (3, Padding::Zero | Padding::Mirror) => {}
        (k, p) => return Err(config_err!("padding {p:?} is not valid for a {k}x{k} kernel")),
    }
    Ok((cin, cout, h, w, kh))
}

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Same-size 2D convolution (cross-correlation, as in every deep learning
/// framework).
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (cin, cout, h, w, k) = check_conv(input, kernel, bias, padding)?;
    let plane = h * w;
    let kd = kernel.data();
    let mut out = vec![T::ZERO; cout * plane];
    for (co, dst) in out.chunks_exact_mut(plane).enumerate() {
        dst.fill(bias.data()[co]);
    }
    if k == 1 {
        let src = input.data();
        for (co, dst) in out.chunks_exact_mut(plane).enumerate() {
            for ci in 0..cin {
                axpy(dst, kd[co * cin + ci], &src[ci * plane..(ci + 1) * plane]);
            }
        }
    } else {
        let padded = pad1(input, padding)?;
        let (hp, wp) = (h + 2, w + 2);
        let src = padded.data();
        for (co, dst) in out.chunks_exact_mut(plane).enumerate() {
            for ci in 0..cin {
                let kc = &kd[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
                let sp = &src[ci * hp * wp..(ci + 1) * hp * wp];
                for y in 0..h {
                    let drow = &mut dst[y * w..(y + 1) * w];
                    for ky in 0..3 {
                        let srow = &sp[(y + ky) * wp..(y + ky + 1) * wp];
                        axpy(drow, kc[ky * 3], &srow[0..w]);
                        axpy(drow, kc[ky * 3 + 1], &srow[1..w + 1]);
                        axpy(drow, kc[ky * 3 + 2], &srow[2..w + 2]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let cout = kernel.shape()[0];
    let bias = Tensor::zeros(&[cout]);
    let (cin, cout, h, w, k) = check_conv(input, kernel, &bias, padding)?;
    let plane = h * w;
    let kd = kernel.data();
    let go = grad_out.data();

    let gbias: Vec<T> = go
        .chunks_exact(plane)
        .map(|p| T::from_f64(p.iter().map(|v| v.to_f64()).sum()))
        .collect();

    let mut gk = vec![T::ZERO; kernel.len()];
    if k == 1 {
        let src = input.data();
        let mut gin = vec![T::ZERO; cin * plane];
        for co in 0..cout {
            let g = &go[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let s = &src[ci * plane..(ci + 1) * plane];
                gk[co * cin + ci] = T::from_f64(
                    g.chunks(256).zip(s.chunks(256)).map(|(a, b)| dot(a, b).to_f64()).sum(),
                );
                axpy(&mut gin[ci * plane..(ci + 1) * plane], kd[co * cin + ci], g);
            }
        }
        return Ok((
            Tensor::new(vec![cin, h, w], gin)?,
            Tensor::new(kernel.shape().to_vec(), gk)?,
            Tensor::new(vec![cout], gbias)?,
        ));
    }

    let padded = pad1(input, padding)?;
    let (hp, wp) = (h + 2, w + 2);
    let src = padded.data();
    let mut gpad = vec![T::ZERO; cin * hp * wp];
    for co in 0..cout {
        let g = &go[co * plane..(co + 1) * plane];
        for ci in 0..cin {
            let base = (co * cin + ci) * 9;
            let kc = &kd[base..base + 9];
            let sp = &src[ci * hp * wp..(ci + 1) * hp * wp];
            let gp = &mut gpad[ci * hp * wp..(ci + 1) * hp * wp];
            let mut acc = [0.0f64; 9];
            for y in 0..h {
                let grow = &g[y * w..(y + 1) * w];
                for ky in 0..3 {
                    let off = (y + ky) * wp;
                    for kx in 0..3 {
                        acc[ky * 3 + kx] += dot(grow, &sp[off + kx..off + kx + w]).to_f64();
                        axpy(&mut gp[off + kx..off + kx + w], kc[ky * 3 + kx], grow);
                    }
                }
            }
            for (dst, a) in gk[base..base + 9].iter_mut().zip(acc) {
                *dst = T::from_f64(a);
            }
        }
    }
    let gin = unpad1_adjoint(&Tensor::new(vec![cin, hp, wp], gpad)?, padding)?;
    Ok((gin, Tensor::new(kernel.shape().to_vec(), gk)?, Tensor::new(vec![cout], gbias)?))
}

/// Per-channel 3x3 window mean with mirror padding.
pub fn box_mean3<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let padded = pad1(input, Padding::Mirror)?;
    let (hp, wp) = (h + 2, w + 2);
    let src = padded.data();
    let ninth = T::from_f64(1.0 / 9.0);
    let mut out = vec![T::ZERO; c * h * w];
    for ch in 0..c {
        let sp = &src[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let drow = &mut dst[y * w..(y + 1) * w];
            for ky in 0..3 {
                let srow = &sp[(y + ky) * wp..(y + ky + 1) * wp];
                for (x, d) in drow.iter_mut().enumerate() {
                    *d += srow[x] + srow[x + 1] + srow[x + 2];
                }
            }
            for d in drow.iter_mut() {
                *d *= ninth;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Adjoint of [`box_mean3`].
pub fn box_mean3_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = grad_out.dims3()?;
    let (hp, wp) = (h + 2, w + 2);
    let go = grad_out.data();
    let ninth = T::from_f64(1.0 / 9.0);
    let mut gpad = vec![T::ZERO; c * hp * wp];
    for ch in 0..c {
        let g = &go[ch * h * w..(ch + 1) * h * w];
        let gp = &mut gpad[ch * hp * wp..(ch + 1) * hp * wp];
        for y in 0..h {
            for x in 0..w {
                let v = g[y * w + x] * ninth;
                for ky in 0..3 {
                    let row = &mut gp[(y + ky) * wp + x..(y + ky) * wp + x + 3];
                    for r in row {
                        *r += v;
                    }
                }
            }
        }
    }
    unpad1_adjoint(&Tensor::new(vec![c, hp, wp], gpad)?, Padding::Mirror)
}

/// Global pooling to `[C, 1, 1]`. Returns the flat argmax index per channel
/// for max pooling (first occurrence in row-major order on ties).
pub fn global_pool<T: Scalar>(input: &Tensor<T>, mode: PoolMode) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    let plane = h * w;
    if plane == 0 {
        return Err(dim_err!("global pool over an empty {h}x{w} plane"));
    }
    let mut out = Vec::with_capacity(c);
    let mut argmax = Vec::new();
    for p in input.data().chunks_exact(plane) {
        match mode {
            PoolMode::Avg => {
                let s: f64 = p.iter().map(|v| v.to_f64()).sum();
                out.push(T::from_f64(s / plane as f64));
            }
            PoolMode::Max => {
                let mut best = 0;
                for (i, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = i;
                    }
                }
                argmax.push(best);
                out.push(p[best]);
            }
        }
    }
    Ok((Tensor::new(vec![c, 1, 1], out)?, argmax))
}

pub fn global_pool_backward<T: Scalar>(
    input_shape: &[usize],
    grad_out: &Tensor<T>,
    mode: PoolMode,
    argmax: &[usize],
) -> Tensor<T> {
    let plane: usize = input_shape[1..].iter().product();
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (ch, &go) in grad_out.data().iter().enumerate() {
        let dst = &mut gd[ch * plane..(ch + 1) * plane];
        match mode {
            PoolMode::Avg => {
                let v = go / T::from_f64(plane as f64);
                dst.fill(v);
            }
            PoolMode::Max => dst[argmax[ch]] = go,
        }
    }
    g
}

/// Multiplies channel `c` of `input` by `weights[c]`.
pub fn scale_channels<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if weights.len() != c {
        return Err(dim_err!("channel weights have {} entries for {c} channels", weights.len()));
    }
    let plane = h * w;
    let mut out = input.clone();
    for (p, &wt) in out.data_mut().chunks_exact_mut(plane).zip(weights.data()) {
        for v in p {
            *v *= wt;
        }
    }
    Ok(out)
}

pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    if start + len > c || len == 0 {
        return Err(dim_err!("channel slice {start}..{} out of range for {c} channels", start + len));
    }
    let plane = h * w;
    Tensor::new(vec![len, h, w], input.data()[start * plane..(start + len) * plane].to_vec())
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return Err(dim_err!("concat of zero tensors"));
    };
    let (_, h, w) = first.dims3()?;
    let mut c = 0;
    let mut data = Vec::new();
    for p in parts {
        let (pc, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(dim_err!("concat spatial mismatch: {h}x{w} vs {ph}x{pw}"));
        }
        c += pc;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![c, h, w], data)
}
