//! Double-precision evaluation of a model's bijection, used by inference.
//!
//! Training runs in f32 on the tape. A trained inverse can amplify rounding
//! by a few times per block, which over a deep stack is enough to break
//! exact reconstruction, so inference evaluates the same parameters in f64
//! and keeps the latent in f64 between the two directions.

use crate::error::Result;
use crate::image::ImagePatch;
use crate::invertible::{Conv2d, InvertibleBlock, ResidualSubnet, LEAKY_SLOPE, LOG_SCALE_BOUND};
use crate::model::InvDnModel;
use crate::tensor::{conv2d_raw, dim_err};

/// A `[C, H, W]` feature map in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Map {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Map {
    pub fn new(shape: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(dim_err("map", format!("{} values for shape {shape:?}", data.len())).into());
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: [usize; 3], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f64).collect())
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self + eps * v`.
    pub fn add_scaled(&self, eps: f64, v: &Map) -> Result<Map> {
        if v.shape != self.shape {
            return Err(dim_err("map_add", format!("{:?} vs {:?}", self.shape, v.shape)).into());
        }
        let data = self.data.iter().zip(&v.data).map(|(a, b)| a + eps * b).collect();
        Ok(Map { shape: self.shape, data })
    }

    fn channels(&self, lo: usize, hi: usize) -> Map {
        let [_, h, w] = self.shape;
        Map { shape: [hi - lo, h, w], data: self.data[lo * h * w..hi * h * w].to_vec() }
    }

    fn concat(a: Map, b: Map) -> Map {
        let [ca, h, w] = a.shape;
        let mut data = a.data;
        data.extend(b.data);
        Map { shape: [ca + b.shape[0], h, w], data }
    }

    fn zip(&self, other: &Map, f: impl Fn(f64, f64) -> f64) -> Map {
        Map { shape: self.shape, data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect() }
    }
}

/// LR estimate and latent of one image, both in f64.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub lr: Map,
    pub z: Map,
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

fn conv(x: &Map, layer: &Conv2d) -> Map {
    let [c, h, w] = x.shape;
    let (c_out, k) = (layer.out_channels(), layer.weight.shape()[2]);
    let data = conv2d_raw(&x.data, (c, h, w), &widen(layer.weight.data()), &widen(layer.bias.data()), c_out, k, k / 2);
    Map { shape: [c_out, h, w], data }
}

fn leaky(mut m: Map) -> Map {
    let slope = LEAKY_SLOPE as f64;
    m.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v *= slope
        }
    });
    m
}

fn subnet(x: &Map, s: &ResidualSubnet) -> Map {
    let h = leaky(conv(x, &s.conv_in));
    let h = leaky(conv(&h, &s.conv_hidden));
    let out = conv(&h, &s.conv_out);
    if s.has_skip() {
        out.zip(x, |a, b| a + b)
    } else {
        out
    }
}

fn scale(a: &Map, blk: &InvertibleBlock) -> Map {
    let bound = LOG_SCALE_BOUND as f64;
    let mut s = subnet(a, &blk.phi3);
    s.data.iter_mut().for_each(|v| *v = (bound * (*v / bound).tanh()).exp());
    s
}

fn block_forward(u: &Map, blk: &InvertibleBlock) -> Map {
    let c = blk.split_low;
    let (a, b) = (u.channels(0, c), u.channels(c, 4 * c));
    let a2 = a.zip(&subnet(&b, &blk.phi2), |x, y| x + y);
    let b2 = b.zip(&scale(&a2, blk), |x, s| x * s).zip(&subnet(&a2, &blk.phi4), |x, y| x + y);
    Map::concat(a2, b2)
}

fn block_inverse(u2: &Map, blk: &InvertibleBlock) -> Map {
    let c = blk.split_low;
    let (a2, b2) = (u2.channels(0, c), u2.channels(c, 4 * c));
    let b = b2.zip(&subnet(&a2, &blk.phi4), |x, y| x - y).zip(&scale(&a2, blk), |x, s| x / s);
    let a = a2.zip(&subnet(&b, &blk.phi2), |x, y| x - y);
    Map::concat(a, b)
}

/// Forward transform of `img`, split into LR estimate and latent.
pub fn forward(model: &InvDnModel, img: &ImagePatch) -> Result<Encoded> {
    model.check_input_shape(&img.shape())?;
    let [c, h, w] = img.shape();
    let mut u = Map::from_f32([c, h, w], img.data())?;
    for scale in model.scales() {
        let [c, h, w] = u.shape;
        u = Map { shape: [4 * c, h / 2, w / 2], data: scale.transform.forward_raw(&u.data, c, h, w) };
        for blk in &scale.blocks {
            u = block_forward(&u, blk);
        }
    }
    let c = model.config().input_channels;
    Ok(Encoded { lr: u.channels(0, c), z: u.channels(c, u.shape[0]) })
}

/// Inverse transform of `(lr, z)` to image space, unclamped.
pub fn inverse(model: &InvDnModel, lr: &Map, z: &Map) -> Result<ImagePatch> {
    let cfg = model.config();
    let ([lc, h, w], [zc, zh, zw]) = (lr.shape, z.shape);
    if lc != cfg.input_channels || zc != cfg.latent_channels() || (h, w) != (zh, zw) {
        return Err(dim_err(
            "model_inverse",
            format!(
                "lr {:?} and z {:?} must be [{},h,w] and [{},h,w]",
                lr.shape,
                z.shape,
                cfg.input_channels,
                cfg.latent_channels()
            ),
        )
        .into());
    }
    let mut x = Map::concat(lr.clone(), z.clone());
    for scale in model.scales().iter().rev() {
        for blk in scale.blocks.iter().rev() {
            x = block_inverse(&x, blk);
        }
        let [c4, h, w] = x.shape;
        x = Map { shape: [c4 / 4, 2 * h, 2 * w], data: scale.transform.inverse_raw(&x.data, c4 / 4, h, w) };
    }
    let [c, h, w] = x.shape;
    ImagePatch::new(c, h, w, x.data.iter().map(|&v| v as f32).collect())
}
