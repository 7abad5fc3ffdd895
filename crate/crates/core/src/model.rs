//! The full bidirectional transform: stacked down-scale blocks, each a
//! wavelet (or squeeze) bijection followed by coupling blocks, and the
//! split of the final feature map into a low-resolution image and a latent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImagePatch;
use crate::invertible::{InvertibleBlock, TransformKind};
use crate::tensor::{self as t, dim_err, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub num_downscale_blocks: usize,
    pub blocks_per_scale: usize,
    pub hidden_channels: usize,
    pub input_channels: usize,
    pub transform: TransformKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_downscale_blocks: 2,
            blocks_per_scale: 8,
            hidden_channels: 32,
            input_channels: 3,
            transform: TransformKind::Haar,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.num_downscale_blocks >= 1, "num_downscale_blocks must be >= 1"),
            (self.num_downscale_blocks <= 8, "num_downscale_blocks must be <= 8"),
            (self.blocks_per_scale >= 1, "blocks_per_scale must be >= 1"),
            (self.hidden_channels >= 1, "hidden_channels must be >= 1"),
            (self.input_channels >= 1, "input_channels must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).to_string())),
            None => Ok(()),
        }
    }

    /// Spatial down-scaling factor `2^n`.
    pub fn scale_factor(&self) -> usize {
        1 << self.num_downscale_blocks
    }

    /// Channel count of the final feature map.
    pub fn output_channels(&self) -> usize {
        self.input_channels << (2 * self.num_downscale_blocks)
    }

    pub fn latent_channels(&self) -> usize {
        self.output_channels() - self.input_channels
    }

    /// Low-branch width of the coupling blocks at scale `s` (0-based).
    pub fn split_low(&self, s: usize) -> usize {
        self.input_channels << (2 * s)
    }

    /// Number of learnable scalars, summed in closed form over the subnets.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_channels;
        let subnet = |ci: usize, co: usize| 9 * ci * h + h + 9 * h * h + h + 9 * h * co + co;
        (0..self.num_downscale_blocks)
            .map(|s| {
                let c = self.split_low(s);
                self.blocks_per_scale * (subnet(3 * c, c) + 2 * subnet(c, 3 * c))
            })
            .sum()
    }
}

/// Output of the forward transform.
#[derive(Debug, Clone)]
pub struct LatentSplit {
    pub lr: Tensor,
    pub z: Tensor,
}

impl LatentSplit {
    pub fn concat(&self) -> Result<Tensor> {
        Ok(t::concat_channels(&[&self.lr, &self.z])?)
    }
}

#[derive(Debug, Clone)]
pub struct Scale {
    pub transform: TransformKind,
    pub blocks: Vec<InvertibleBlock>,
}

#[derive(Debug, Clone)]
pub struct InvDnModel {
    config: ModelConfig,
    scales: Vec<Scale>,
}

impl InvDnModel {
    /// Fresh model whose coupling blocks are all the identity.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales = (0..config.num_downscale_blocks)
            .map(|s| Scale {
                transform: config.transform,
                blocks: (0..config.blocks_per_scale)
                    .map(|_| InvertibleBlock::new(config.split_low(s), config.hidden_channels, &mut rng))
                    .collect(),
            })
            .collect();
        Ok(Self { config, scales })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn scales(&self) -> &[Scale] {
        &self.scales
    }

    pub fn scales_mut(&mut self) -> &mut [Scale] {
        &mut self.scales
    }

    /// Checks that an input of `shape` is `[input_channels, H, W]` with H
    /// and W divisible by the scale factor.
    pub fn check_input_shape(&self, shape: &[usize]) -> Result<()> {
        let f = self.config.scale_factor();
        match *shape {
            [c, h, w] if c == self.config.input_channels && h % f == 0 && w % f == 0 && h > 0 && w > 0 => {
                Ok(())
            }
            _ => Err(dim_err(
                "model_forward",
                format!(
                    "input {:?} must be [{}, H, W] with H and W divisible by {f}",
                    shape,
                    self.config.input_channels
                ),
            )
            .into()),
        }
    }

    /// Unsplit forward transform.
    pub fn forward_full(&self, y: &Tensor) -> Result<Tensor> {
        self.check_input_shape(y.shape())?;
        let mut u = y.clone();
        for scale in &self.scales {
            u = scale.transform.forward(&u)?;
            for blk in &scale.blocks {
                u = blk.forward(&u)?;
            }
        }
        Ok(u)
    }

    pub fn forward(&self, y: &Tensor) -> Result<LatentSplit> {
        let u = self.forward_full(y)?;
        let c = self.config.input_channels;
        Ok(LatentSplit {
            lr: t::slice_channels(&u, 0, c)?,
            z: t::slice_channels(&u, c, u.shape()[0])?,
        })
    }

    pub fn forward_image(&self, y: &ImagePatch) -> Result<LatentSplit> {
        self.forward(&y.to_tensor())
    }

    /// Inverse of [`InvDnModel::forward_full`].
    pub fn inverse_full(&self, u: &Tensor) -> Result<Tensor> {
        match *u.shape() {
            [c, h, w] if c == self.config.output_channels() && h > 0 && w > 0 => {}
            _ => {
                return Err(dim_err(
                    "model_inverse",
                    format!("expected [{}, h, w], got {:?}", self.config.output_channels(), u.shape()),
                )
                .into())
            }
        }
        let mut x = u.clone();
        for scale in self.scales.iter().rev() {
            for blk in scale.blocks.iter().rev() {
                x = blk.inverse(&x)?;
            }
            x = scale.transform.inverse(&x)?;
        }
        Ok(x)
    }

    pub fn inverse(&self, lr: &Tensor, z: &Tensor) -> Result<Tensor> {
        let (c, zc) = (self.config.input_channels, self.config.latent_channels());
        let ok = lr.shape().len() == 3
            && z.shape().len() == 3
            && lr.shape()[0] == c
            && z.shape()[0] == zc
            && lr.shape()[1..] == z.shape()[1..];
        if !ok {
            return Err(dim_err(
                "model_inverse",
                format!("lr {:?} and z {:?} must be [{c},h,w] and [{zc},h,w]", lr.shape(), z.shape()),
            )
            .into());
        }
        self.inverse_full(&t::concat_channels(&[lr, z])?)
    }

    /// Learnable tensors in a fixed order with stable names.
    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (si, scale) in self.scales.iter().enumerate() {
            for (bi, blk) in scale.blocks.iter().enumerate() {
                for (name, sub) in blk.subnets() {
                    for (ci, conv) in sub.convs().iter().enumerate() {
                        let p = format!("scale{si}.block{bi}.{name}.conv{ci}");
                        out.push((format!("{p}.weight"), conv.weight.clone()));
                        out.push((format!("{p}.bias"), conv.bias.clone()));
                    }
                }
            }
        }
        out
    }

    /// Mutable handles in the same order as [`InvDnModel::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for scale in &mut self.scales {
            for blk in &mut scale.blocks {
                for sub in blk.subnets_mut() {
                    for conv in sub.convs_mut() {
                        out.push(&mut conv.weight);
                        out.push(&mut conv.bias);
                    }
                }
            }
        }
        out
    }

    /// Replace every parameter, keeping shapes. Values must be listed in
    /// [`InvDnModel::parameters`] order.
    pub fn load_parameters(&mut self, values: Vec<Vec<f32>>) -> Result<()> {
        let slots = self.parameters_mut();
        if slots.len() != values.len() {
            return Err(Error::ConfigMismatch(format!(
                "model has {} parameter tensors, got {}",
                slots.len(),
                values.len()
            )));
        }
        for (slot, v) in slots.into_iter().zip(values) {
            if slot.numel() != v.len() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter of shape {:?} given {} values",
                    slot.shape(),
                    v.len()
                )));
            }
            *slot = Tensor::param(slot.shape().to_vec(), v)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.scales
            .iter()
            .flat_map(|s| &s.blocks)
            .map(|b| b.parameter_count())
            .sum()
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.parameters() {
            p.zero_grad();
        }
    }
}
