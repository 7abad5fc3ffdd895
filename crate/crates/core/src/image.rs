use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-first floating image, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePatch {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::Config(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f32) -> Self {
        Self { channels, height, width, data: vec![v; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self { channels, height, width, data }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Self::new(c, h, w, t.data().to_vec()),
            _ => Err(Error::Config(format!("expected a [C,H,W] tensor, got {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([self.channels, self.height, self.width], self.data.clone())
            .expect("shape is consistent")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Config(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(self.channels, h, w, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    /// Edge-replicating pad on the bottom and right.
    pub fn pad_to(&self, h: usize, w: usize) -> Self {
        Self::from_fn(self.channels, h.max(self.height), w.max(self.width), |c, y, x| {
            self.get(c, y.min(self.height - 1), x.min(self.width - 1))
        })
    }

    /// Replicate a single-channel image to `channels` channels.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        if self.channels == channels {
            return Ok(self.clone());
        }
        if self.channels != 1 {
            return Err(Error::Config(format!(
                "cannot convert a {}-channel image to {channels} channels",
                self.channels
            )));
        }
        let mut data = Vec::with_capacity(channels * self.data.len());
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Self::new(channels, self.height, self.width, data)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }
}
