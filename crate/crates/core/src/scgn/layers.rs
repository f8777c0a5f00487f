use super::params::{BlockParams, Classifier, Conv, FbgwParams, FreqUnit, SdgwParams, Weights};
use super::ArchConfig;
use crate::error::{config_err, dim_err, Result};
use crate::tensor::{Backend, Padding, PoolMode, Scalar, Tensor};

/// Variance floor inside the local standard deviation.
pub const LOCAL_SD_EPS: f64 = 1e-5;

/// Intermediate values reported by [`forward_probed`].
#[derive(Debug)]
pub enum Probe<'a, T> {
    /// Per-pixel SDGW gate, `[Cb, H, W]`, values in `(0, 1)`.
    SpatialGate(&'a Tensor<T>),
    /// Per-channel band or attention weights, `[Cb, 1, 1]`, values in `[0, 2]`.
    BandWeights(&'a Tensor<T>),
}

fn conv<T: Scalar, B: Backend<T>>(b: &mut B, x: &B::Handle, p: &Conv<B::Handle>) -> Result<B::Handle> {
    let k = b.value(&p.kernel).shape()[2];
    let padding = if k == 1 { Padding::None } else { Padding::Zero };
    b.conv2d(x, &p.kernel, &p.bias, padding)
}

/// 3x3 windowed standard deviation per channel:
/// `sqrt(E[x^2] - E[x]^2 + eps)` with mirror padding. Rounding can push the
/// variance slightly below zero; it is clamped before adding `eps`.
pub fn local_sd<T: Scalar, B: Backend<T>>(b: &mut B, x: &B::Handle) -> Result<B::Handle> {
    let mean = b.box_mean3(x)?;
    let sq = b.square(x)?;
    let mean_sq = b.box_mean3(&sq)?;
    let mean2 = b.square(&mean)?;
    let var = b.sub(&mean_sq, &mean2)?;
    let var = b.relu(&var)?;
    let var = b.add_scalar(&var, LOCAL_SD_EPS)?;
    b.sqrt(&var)
}

/// `conv3x3(x) * sigmoid(conv1x1(local_sd(x)))`. Returns the output and the
/// gate (absent when the unit is a plain convolution).
pub fn sdgw_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Handle,
    p: &SdgwParams<B::Handle>,
) -> Result<(B::Handle, Option<B::Handle>)> {
    let feat = conv(b, x, &p.feat_conv)?;
    let Some(weight_conv) = &p.weight_conv else {
        return Ok((feat, None));
    };
    let sd = local_sd(b, x)?;
    let logits = conv(b, &sd, weight_conv)?;
    let gate = b.sigmoid(&logits)?;
    debug_assert!(b.value(&gate).data().iter().all(|&g| g >= T::ZERO && g <= T::ONE));
    let out = b.mul(&feat, &gate)?;
    Ok((out, Some(gate)))
}

/// Two channels of relative coordinates over an `h x wr` half-spectrum grid:
/// row index `/ (h-1)` and column index `/ (wr-1)`.
pub fn position_embedding<T: Scalar>(h: usize, wr: usize) -> Tensor<T> {
    let plane = h * wr;
    Tensor::from_fn(&[2, h, wr], |i| {
        let (c, y, x) = (i / plane, (i / wr) % h, i % wr);
        let v = if c == 0 { y as f64 / (h - 1) as f64 } else { x as f64 / (wr - 1) as f64 };
        T::from_f64(v)
    })
}

/// `sigmoid(chain(avgpool(x))) + sigmoid(chain(maxpool(x)))`, one weight per
/// channel in `[0, 2]`.
fn dual_pool_weights<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Handle,
    cls_avg: &Classifier<B::Handle>,
    cls_max: &Classifier<B::Handle>,
) -> Result<B::Handle> {
    let branch = |b: &mut B, mode: PoolMode, cls: &Classifier<B::Handle>| -> Result<B::Handle> {
        let pooled = b.global_pool(x, mode)?;
        let hidden = conv(b, &pooled, &cls.conv1)?;
        let hidden = b.relu(&hidden)?;
        let logits = conv(b, &hidden, &cls.conv2)?;
        b.sigmoid(&logits)
    };
    let wa = branch(b, PoolMode::Avg, cls_avg)?;
    let wm = branch(b, PoolMode::Max, cls_max)?;
    let w = b.add(&wa, &wm)?;
    debug_assert!(b.value(&w).data().iter().all(|&v| v >= T::ZERO && v <= T::from_f64(2.0)));
    Ok(w)
}

/// Frequency band-guided weighting. Returns the output and the band weights.
///
/// rfft2 -> (re, im, optional coordinates) -> 1x1 decouple -> per-band
/// weights from dual pooling -> reweight -> 1x1 recouple -> irfft2.
pub fn fbgw_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Handle,
    p: &FbgwParams<B::Handle>,
    use_position_embedding: bool,
) -> Result<(B::Handle, B::Handle)> {
    let (cb, h, w) = b.value(x).dims3()?;
    if h < 2 || w < 2 {
        return Err(dim_err!("frequency weighting needs H, W >= 2, got {h}x{w}"));
    }
    let decouple_in = b.value(&p.decouple_conv.kernel).shape()[1];
    let expected_in = 2 * cb + if use_position_embedding { 2 } else { 0 };
    if decouple_in != expected_in {
        return Err(config_err!(
            "decouple conv takes {decouple_in} channels, branch of width {cb} provides {expected_in}"
        ));
    }
    let spectrum = b.rfft2(x)?;
    let features = if use_position_embedding {
        let wr = b.value(&spectrum).shape()[2];
        let pe = b.constant(position_embedding(h, wr));
        b.concat_channels(&[spectrum, pe])?
    } else {
        spectrum
    };
    let bands = conv(b, &features, &p.decouple_conv)?;
    let weights = dual_pool_weights(b, &bands, &p.cls_avg, &p.cls_max)?;
    let weighted = b.scale_channels(&bands, &weights)?;
    let recoupled = conv(b, &weighted, &p.recouple_conv)?;
    let out = b.irfft2(&recoupled, w)?;
    Ok((out, weights))
}

/// Spatial-domain substitute for FBGW: 3x3 conv followed by channel
/// reweighting from the same dual-pool chains.
pub fn channel_attention_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Handle,
    conv_p: &Conv<B::Handle>,
    cls_avg: &Classifier<B::Handle>,
    cls_max: &Classifier<B::Handle>,
) -> Result<(B::Handle, B::Handle)> {
    let feat = conv(b, x, conv_p)?;
    let weights = dual_pool_weights(b, &feat, cls_avg, cls_max)?;
    let out = b.scale_channels(&feat, &weights)?;
    Ok((out, weights))
}

/// Residual block: split channels, two spatial units on the first half,
/// two frequency units on the second, concatenate, fuse, add the input.
pub fn sfe_block_forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    x: &B::Handle,
    p: &BlockParams<B::Handle>,
    arch: &ArchConfig,
    probe: &mut dyn FnMut(Probe<'_, T>),
) -> Result<B::Handle> {
    let (c, _, _) = b.value(x).dims3()?;
    if c % 2 != 0 {
        return Err(config_err!("block input needs an even channel count, got {c}"));
    }
    let half = c / 2;
    let mut spatial = b.slice_channels(x, 0, half)?;
    for unit in &p.sdgw {
        let (out, gate) = sdgw_forward(b, &spatial, unit)?;
        if let Some(g) = &gate {
            probe(Probe::SpatialGate(b.value(g)));
        }
        spatial = out;
    }
    let mut freq = b.slice_channels(x, half, half)?;
    for unit in &p.fbgw {
        freq = match unit {
            FreqUnit::Fbgw(fp) => {
                let (out, w) = fbgw_forward(b, &freq, fp, arch.position_embedding_enabled)?;
                probe(Probe::BandWeights(b.value(&w)));
                out
            }
            FreqUnit::Conv(cp) => conv(b, &freq, cp)?,
            FreqUnit::ChannelAttention { conv: cp, cls_avg, cls_max } => {
                let (out, w) = channel_attention_forward(b, &freq, cp, cls_avg, cls_max)?;
                probe(Probe::BandWeights(b.value(&w)));
                out
            }
        };
    }
    let joined = b.concat_channels(&[spatial, freq])?;
    let fused = conv(b, &joined, &p.fuse_conv)?;
    b.add(&fused, x)
}

/// Full network on a `[1, H, W]` input.
pub fn forward<T: Scalar, B: Backend<T>>(
    b: &mut B,
    image: &B::Handle,
    w: &Weights<B::Handle>,
    arch: &ArchConfig,
) -> Result<B::Handle> {
    forward_probed(b, image, w, arch, &mut |_| {})
}

pub fn forward_probed<T: Scalar, B: Backend<T>>(
    b: &mut B,
    image: &B::Handle,
    w: &Weights<B::Handle>,
    arch: &ArchConfig,
    probe: &mut dyn FnMut(Probe<'_, T>),
) -> Result<B::Handle> {
    let (c, _, _) = b.value(image).dims3()?;
    if c != 1 {
        return Err(dim_err!("network input must have one channel, got {c}"));
    }
    if w.blocks.len() != arch.blocks {
        return Err(config_err!("weights hold {} blocks, architecture declares {}", w.blocks.len(), arch.blocks));
    }
    let mut x = conv(b, image, &w.head_conv)?;
    for block in &w.blocks {
        x = sfe_block_forward(b, &x, block, arch, probe)?;
    }
    conv(b, &x, &w.tail_conv)
}
