use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{self as t, dim_err, Result, Tensor};

/// Soft bound on the log-scale of the affine branch: `s = B * tanh(phi3 / B)`.
/// Keeps each block's scale within `[e^-B, e^B]` so a random latent cannot be
/// blown up by a near-zero divisor in the inverse.
pub const LOG_SCALE_BOUND: f32 = 1.0;
pub const LEAKY_SLOPE: f32 = 0.2;
const KERNEL: usize = 3;
/// Multiplier on the He-normal std of the non-final subnet convolutions.
const INIT_GAIN: f64 = 0.5;

/// A 3x3 "same" convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weight: Tensor::param([c_out, c_in, KERNEL, KERNEL], vec![0.0; c_out * c_in * 9])
                .expect("shape matches"),
            bias: Tensor::param([c_out], vec![0.0; c_out]).expect("shape matches"),
        }
    }

    /// He-normal weights scaled by `gain`, zero bias.
    pub fn he_normal<R: Rng + ?Sized>(c_in: usize, c_out: usize, gain: f64, rng: &mut R) -> Self {
        let fan_in = (c_in * KERNEL * KERNEL) as f64;
        let slope = LEAKY_SLOPE as f64;
        let std = gain * (2.0 / ((1.0 + slope * slope) * fan_in)).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let w = (0..c_out * c_in * 9).map(|_| dist.sample(rng) as f32).collect();
        Self {
            weight: Tensor::param([c_out, c_in, KERNEL, KERNEL], w).expect("shape matches"),
            bias: Tensor::param([c_out], vec![0.0; c_out]).expect("shape matches"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        t::conv2d(x, &self.weight, &self.bias, KERNEL / 2)
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

/// conv -> leaky-ReLU -> conv -> leaky-ReLU -> conv, with an identity skip
/// when input and output channel counts agree.
#[derive(Debug, Clone)]
pub struct ResidualSubnet {
    pub conv_in: Conv2d,
    pub conv_hidden: Conv2d,
    pub conv_out: Conv2d,
}

impl ResidualSubnet {
    /// Final convolution starts at zero, so a fresh subnet outputs zero
    /// (or its input, when the skip is active).
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            conv_in: Conv2d::he_normal(c_in, hidden, INIT_GAIN, rng),
            conv_hidden: Conv2d::he_normal(hidden, hidden, INIT_GAIN, rng),
            conv_out: Conv2d::zeros(hidden, c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv_in.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv_out.out_channels()
    }

    pub fn hidden_channels(&self) -> usize {
        self.conv_in.out_channels()
    }

    pub fn has_skip(&self) -> bool {
        self.in_channels() == self.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = t::leaky_relu(&self.conv_in.forward(x)?, LEAKY_SLOPE)?;
        let h = t::leaky_relu(&self.conv_hidden.forward(&h)?, LEAKY_SLOPE)?;
        let out = self.conv_out.forward(&h)?;
        if self.has_skip() {
            t::add(&out, x)
        } else {
            Ok(out)
        }
    }

    pub fn convs(&self) -> [&Conv2d; 3] {
        [&self.conv_in, &self.conv_hidden, &self.conv_out]
    }

    pub fn convs_mut(&mut self) -> [&mut Conv2d; 3] {
        [&mut self.conv_in, &mut self.conv_hidden, &mut self.conv_out]
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(|c| c.parameter_count()).sum()
    }
}

/// Affine coupling block on a `[4C, H, W]` feature map split into a
/// low-frequency branch of `C` channels and a high-frequency branch of `3C`.
///
/// forward: `a' = a + phi2(b)`, `b' = b * exp(phi3(a')) + phi4(a')`
/// inverse: `b = (b' - phi4(a')) / exp(phi3(a'))`, `a = a' - phi2(b)`
#[derive(Debug, Clone)]
pub struct InvertibleBlock {
    pub phi2: ResidualSubnet,
    pub phi3: ResidualSubnet,
    pub phi4: ResidualSubnet,
    pub split_low: usize,
}

impl InvertibleBlock {
    pub fn new<R: Rng + ?Sized>(split_low: usize, hidden: usize, rng: &mut R) -> Self {
        let high = 3 * split_low;
        Self {
            phi2: ResidualSubnet::new(high, split_low, hidden, rng),
            phi3: ResidualSubnet::new(split_low, high, hidden, rng),
            phi4: ResidualSubnet::new(split_low, high, hidden, rng),
            split_low,
        }
    }

    pub fn channels(&self) -> usize {
        4 * self.split_low
    }

    fn split(&self, op: &'static str, u: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = self.channels();
        if u.shape().len() != 3 || u.shape()[0] != c {
            return Err(dim_err(
                op,
                format!("block expects {c} channels, got shape {:?}", u.shape()),
            ));
        }
        Ok((
            t::slice_channels(u, 0, self.split_low)?,
            t::slice_channels(u, self.split_low, c)?,
        ))
    }

    fn log_scale(&self, a: &Tensor) -> Result<Tensor> {
        let raw = t::mul_scalar(&self.phi3.forward(a)?, 1.0 / LOG_SCALE_BOUND)?;
        t::mul_scalar(&t::tanh(&raw)?, LOG_SCALE_BOUND)
    }

    pub fn forward(&self, u: &Tensor) -> Result<Tensor> {
        let (a, b) = self.split("block_forward", u)?;
        let a2 = t::add(&a, &self.phi2.forward(&b)?)?;
        let scale = t::exp(&self.log_scale(&a2)?)?;
        let b2 = t::add(&t::mul(&b, &scale)?, &self.phi4.forward(&a2)?)?;
        t::concat_channels(&[&a2, &b2])
    }

    pub fn inverse(&self, u2: &Tensor) -> Result<Tensor> {
        let (a2, b2) = self.split("block_inverse", u2)?;
        let scale = t::exp(&self.log_scale(&a2)?)?;
        let b = t::div(&t::sub(&b2, &self.phi4.forward(&a2)?)?, &scale)?;
        let a = t::sub(&a2, &self.phi2.forward(&b)?)?;
        t::concat_channels(&[&a, &b])
    }

    pub fn subnets(&self) -> [(&'static str, &ResidualSubnet); 3] {
        [("phi2", &self.phi2), ("phi3", &self.phi3), ("phi4", &self.phi4)]
    }

    pub fn subnets_mut(&mut self) -> [&mut ResidualSubnet; 3] {
        [&mut self.phi2, &mut self.phi3, &mut self.phi4]
    }

    pub fn parameter_count(&self) -> usize {
        self.subnets().iter().map(|(_, s)| s.parameter_count()).sum()
    }
}
