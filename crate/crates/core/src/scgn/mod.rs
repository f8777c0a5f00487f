//! Statistical characteristic-guided denoising network.
//!
//! A 3x3 head convolution lifts the image to `C` channels, `n` residual
//! spatial-frequency enhancement blocks refine the features and a 3x3 tail
//! convolution maps back to one channel. Each block splits its channels in
//! half: the spatial half passes through two deviation-gated convolutions,
//! the frequency half through two band-weighting units, and a 3x3
//! convolution fuses the concatenation.

mod layers;
mod params;

use serde::{Deserialize, Serialize};

pub use layers::{
    channel_attention_forward, fbgw_forward, forward, forward_probed, local_sd, position_embedding, sdgw_forward,
    sfe_block_forward, Probe, LOCAL_SD_EPS,
};
pub use params::{layout, BlockParams, Classifier, Conv, FbgwParams, FreqUnit, ModelParams, SdgwParams, Weights};

use crate::error::{config_err, Result};
use crate::tensor::{Eager, Scalar, Tensor};

/// Architecture hyperparameters and ablation switches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Number of enhancement blocks.
    pub blocks: usize,
    /// Feature channels; split in half between the two branches.
    pub channels: usize,
    /// Reduction ratio of the band classification chains.
    pub reduction: usize,
    pub sdgw_enabled: bool,
    pub fbgw_enabled: bool,
    pub position_embedding_enabled: bool,
    /// With FBGW disabled, use spatial channel attention instead of a plain
    /// convolution in the frequency branch.
    pub channel_attention_substitute: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            blocks: 8,
            channels: 64,
            reduction: 4,
            sdgw_enabled: true,
            fbgw_enabled: true,
            position_embedding_enabled: true,
            channel_attention_substitute: false,
        }
    }
}

/// Ablation variants of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// No SDGW, no FBGW.
    V1,
    /// FBGW with position embedding, no SDGW.
    V2,
    /// SDGW only.
    V3,
    /// SDGW with channel attention in place of FBGW.
    V4,
    /// SDGW and FBGW without position embedding.
    V5,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::V1, Variant::V2, Variant::V3, Variant::V4, Variant::V5, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::V1 => "SCGN-V1",
            Variant::V2 => "SCGN-V2",
            Variant::V3 => "SCGN-V3",
            Variant::V4 => "SCGN-V4",
            Variant::V5 => "SCGN-V5",
            Variant::Full => "SCGN",
        }
    }
}

impl ArchConfig {
    pub fn with_variant(mut self, v: Variant) -> Self {
        let (sdgw, fbgw, pe, ca) = match v {
            Variant::V1 => (false, false, false, false),
            Variant::V2 => (false, true, true, false),
            Variant::V3 => (true, false, false, false),
            Variant::V4 => (true, false, false, true),
            Variant::V5 => (true, true, false, false),
            Variant::Full => (true, true, true, false),
        };
        self.sdgw_enabled = sdgw;
        self.fbgw_enabled = fbgw;
        self.position_embedding_enabled = pe;
        self.channel_attention_substitute = ca;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c < 2 || c % 2 != 0 {
            return Err(config_err!("channel count must be even and >= 2, got {c}"));
        }
        let cb = c / 2;
        let needs_classifier = self.fbgw_enabled || self.channel_attention_substitute;
        if needs_classifier && (self.reduction == 0 || cb % self.reduction != 0) {
            return Err(config_err!("reduction ratio {} must divide the branch width {cb}", self.reduction));
        }
        if self.fbgw_enabled && self.channel_attention_substitute {
            return Err(config_err!("channel attention substitutes FBGW; enable at most one"));
        }
        Ok(())
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Denoises a `[1, H, W]` image without recording gradients.
    pub fn infer(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut eager = Eager;
        let weights = self.weights.map(&mut |_, t| Ok(std::rc::Rc::new(t.clone())))?;
        let x = std::rc::Rc::new(image.clone());
        let y = forward(&mut eager, &x, &weights, &self.arch)?;
        Ok(std::rc::Rc::try_unwrap(y).unwrap_or_else(|rc| (*rc).clone()))
    }
}

#[cfg(test)]
mod tests;
