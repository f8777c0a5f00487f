//! Parameter containers for the network.
//!
//! Every container is generic over the parameter handle `P`: `Tensor<T>` for
//! storage, a tape `Var` while training, an `Rc<Tensor>` for inference. The
//! `map` methods walk parameters in a fixed order and report dotted paths
//! such as `blocks.0.sdgw.1.feat_conv.kernel`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ArchConfig;
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

type MapFn<'a, 'p, P, Q> = &'a mut dyn FnMut(&str, &'p P) -> Result<Q>;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Kernel `[out, in, k, k]` and bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<P> {
    pub kernel: P,
    pub bias: P,
}

impl<P> Conv<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<Conv<Q>> {
        Ok(Conv { kernel: f(&join(path, "kernel"), &self.kernel)?, bias: f(&join(path, "bias"), &self.bias)? })
    }
}

/// Global-pool classification chain: 1x1 conv, ReLU, 1x1 conv.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<P> {
    pub conv1: Conv<P>,
    pub conv2: Conv<P>,
}

impl<P> Classifier<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<Classifier<Q>> {
        Ok(Classifier { conv1: self.conv1.map(&join(path, "conv1"), f)?, conv2: self.conv2.map(&join(path, "conv2"), f)? })
    }
}

/// Spatial deviation-guided weighting. Without `weight_conv` the unit is a
/// plain 3x3 convolution (gate fixed at 1).
#[derive(Clone, Debug, PartialEq)]
pub struct SdgwParams<P> {
    pub feat_conv: Conv<P>,
    pub weight_conv: Option<Conv<P>>,
}

impl<P> SdgwParams<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<SdgwParams<Q>> {
        Ok(SdgwParams {
            feat_conv: self.feat_conv.map(&join(path, "feat_conv"), f)?,
            weight_conv: match &self.weight_conv {
                Some(c) => Some(c.map(&join(path, "weight_conv"), f)?),
                None => None,
            },
        })
    }
}

/// Frequency band-guided weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct FbgwParams<P> {
    /// `2*Cb (+2 with position embedding) -> Cb`.
    pub decouple_conv: Conv<P>,
    pub cls_avg: Classifier<P>,
    pub cls_max: Classifier<P>,
    /// `Cb -> 2*Cb`.
    pub recouple_conv: Conv<P>,
}

impl<P> FbgwParams<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<FbgwParams<Q>> {
        Ok(FbgwParams {
            decouple_conv: self.decouple_conv.map(&join(path, "decouple_conv"), f)?,
            cls_avg: self.cls_avg.map(&join(path, "cls_avg"), f)?,
            cls_max: self.cls_max.map(&join(path, "cls_max"), f)?,
            recouple_conv: self.recouple_conv.map(&join(path, "recouple_conv"), f)?,
        })
    }
}

/// One enhancement unit of the frequency branch.
#[derive(Clone, Debug, PartialEq)]
pub enum FreqUnit<P> {
    Fbgw(FbgwParams<P>),
    /// FBGW ablated: plain 3x3 convolution.
    Conv(Conv<P>),
    /// FBGW replaced by spatial channel attention after a 3x3 convolution.
    ChannelAttention { conv: Conv<P>, cls_avg: Classifier<P>, cls_max: Classifier<P> },
}

impl<P> FreqUnit<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<FreqUnit<Q>> {
        Ok(match self {
            FreqUnit::Fbgw(p) => FreqUnit::Fbgw(p.map(path, f)?),
            FreqUnit::Conv(c) => FreqUnit::Conv(c.map(&join(path, "conv"), f)?),
            FreqUnit::ChannelAttention { conv, cls_avg, cls_max } => FreqUnit::ChannelAttention {
                conv: conv.map(&join(path, "conv"), f)?,
                cls_avg: cls_avg.map(&join(path, "cls_avg"), f)?,
                cls_max: cls_max.map(&join(path, "cls_max"), f)?,
            },
        })
    }
}

/// Spatial-frequency enhancement block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<P> {
    pub sdgw: [SdgwParams<P>; 2],
    pub fbgw: [FreqUnit<P>; 2],
    pub fuse_conv: Conv<P>,
}

impl<P> BlockParams<P> {
    pub fn map<'p, Q>(&'p self, path: &str, f: MapFn<'_, 'p, P, Q>) -> Result<BlockParams<Q>> {
        Ok(BlockParams {
            sdgw: [
                self.sdgw[0].map(&join(path, "sdgw.0"), f)?,
                self.sdgw[1].map(&join(path, "sdgw.1"), f)?,
            ],
            fbgw: [
                self.fbgw[0].map(&join(path, "fbgw.0"), f)?,
                self.fbgw[1].map(&join(path, "fbgw.1"), f)?,
            ],
            fuse_conv: self.fuse_conv.map(&join(path, "fuse_conv"), f)?,
        })
    }
}

/// All trainable parameters of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<P> {
    pub head_conv: Conv<P>,
    pub blocks: Vec<BlockParams<P>>,
    pub tail_conv: Conv<P>,
}

impl<P> Weights<P> {
    pub fn map<'p, Q>(&'p self, f: MapFn<'_, 'p, P, Q>) -> Result<Weights<Q>> {
        let head_conv = self.head_conv.map("head_conv", f)?;
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| b.map(&format!("blocks.{i}"), f))
            .collect::<Result<_>>()?;
        let tail_conv = self.tail_conv.map("tail_conv", f)?;
        Ok(Weights { head_conv, blocks, tail_conv })
    }

    /// `(path, parameter)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(&mut |name, p| {
            out.push((name.to_string(), p));
            Ok(())
        })
        .expect("collecting never fails");
        out
    }
}

/// Network weights together with the architecture they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    pub arch: ArchConfig,
    pub weights: Weights<Tensor<T>>,
}

/// Shapes of every declared parameter for an architecture, in canonical order.
pub fn layout(arch: &ArchConfig) -> Result<Weights<Vec<usize>>> {
    arch.validate()?;
    let c = arch.channels;
    let cb = c / 2;
    let cr = cb / arch.reduction;
    let conv = |cout: usize, cin: usize, k: usize| Conv { kernel: vec![cout, cin, k, k], bias: vec![cout] };
    let classifier = || Classifier { conv1: conv(cr, cb, 1), conv2: conv(cb, cr, 1) };
    let sdgw = || SdgwParams { feat_conv: conv(cb, cb, 3), weight_conv: arch.sdgw_enabled.then(|| conv(cb, cb, 1)) };
    let freq = || {
        if arch.fbgw_enabled {
            let extra = if arch.position_embedding_enabled { 2 } else { 0 };
            FreqUnit::Fbgw(FbgwParams {
                decouple_conv: conv(cb, 2 * cb + extra, 1),
                cls_avg: classifier(),
                cls_max: classifier(),
                recouple_conv: conv(2 * cb, cb, 1),
            })
        } else if arch.channel_attention_substitute {
            FreqUnit::ChannelAttention { conv: conv(cb, cb, 3), cls_avg: classifier(), cls_max: classifier() }
        } else {
            FreqUnit::Conv(conv(cb, cb, 3))
        }
    };
    Ok(Weights {
        head_conv: conv(c, 1, 3),
        blocks: (0..arch.blocks)
            .map(|_| BlockParams { sdgw: [sdgw(), sdgw()], fbgw: [freq(), freq()], fuse_conv: conv(c, c, 3) })
            .collect(),
        tail_conv: conv(1, c, 3),
    })
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform `[-b, b]` kernels with `b = sqrt(1 / fan_in)`, zero biases.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        let shapes = layout(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = shapes.map(&mut |name, shape| {
            if name.ends_with(".bias") {
                return Ok(Tensor::zeros(shape));
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            Ok(Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound))))
        })?;
        Ok(Self { arch: arch.clone(), weights })
    }

    pub fn param_count(&self) -> usize {
        self.weights.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let weights = self.weights.map(&mut |_, t| Ok(t.cast())).expect("cast never fails");
        ModelParams { arch: self.arch.clone(), weights }
    }

    /// Checks every stored tensor against the layout of `self.arch`.
    pub fn check_layout(&self) -> Result<()> {
        let expected = layout(&self.arch)?.named().into_iter().map(|(n, s)| (n, s.clone())).collect::<Vec<_>>();
        let actual = self.weights.named();
        if expected.len() != actual.len() {
            return Err(crate::error::config_err!(
                "model has {} parameter tensors, architecture declares {}",
                actual.len(),
                expected.len()
            ));
        }
        for ((en, es), (an, at)) in expected.iter().zip(&actual) {
            if en != an || es.as_slice() != at.shape() {
                return Err(crate::error::config_err!(
                    "parameter {an} {:?} does not match architecture slot {en} {es:?}",
                    at.shape()
                ));
            }
        }
        Ok(())
    }

    /// Rebuilds the model from flat tensors in canonical order.
    pub fn from_flat(arch: &ArchConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = layout(arch)?;
        let mut it = tensors.into_iter();
        let weights = shapes.map(&mut |name, shape| {
            let t = it.next().ok_or_else(|| crate::error::config_err!("missing tensor for {name}"))?;
            if t.shape() != shape.as_slice() {
                return Err(crate::error::config_err!("{name}: expected {shape:?}, got {:?}", t.shape()));
            }
            Ok(t)
        })?;
        if it.next().is_some() {
            return Err(crate::error::config_err!("more tensors than the architecture declares"));
        }
        Ok(Self { arch: arch.clone(), weights })
    }
}
