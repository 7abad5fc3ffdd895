//! Denoising, Monte Carlo self-ensembles, noise synthesis and tiling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImagePatch;
use crate::model::InvDnModel;
use crate::precise::{self, Encoded, Map};
use crate::tensor::Tensor;

pub const DEFAULT_OVERLAP: usize = 16;
pub const DEFAULT_EPSILON: f32 = 2e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseOptions {
    pub mc_samples: usize,
    pub seed: u64,
    pub tile: Option<usize>,
    pub overlap: usize,
}

impl Default for DenoiseOptions {
    fn default() -> Self {
        Self { mc_samples: 1, seed: 0, tile: None, overlap: DEFAULT_OVERLAP }
    }
}

impl DenoiseOptions {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseGenOptions {
    pub epsilon: f32,
    pub seed: u64,
    pub tile: Option<usize>,
    pub overlap: usize,
}

impl Default for NoiseGenOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, seed: 0, tile: None, overlap: DEFAULT_OVERLAP }
    }
}

impl NoiseGenOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Generator for Monte Carlo sample `sample` of tile `tile`. Sample `i`
/// is the same draw whatever the ensemble size.
fn sample_rng(seed: u64, tile: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tile as u64) << 32) | sample as u64);
    rng
}

/// Forward transform of an image, split into its LR part and latent.
/// Evaluated in f64 so that decoding the same latent reproduces the input.
pub fn encode(model: &InvDnModel, img: &ImagePatch) -> Result<Encoded> {
    precise::forward(model, img)
}

/// Invert `(lr, z)` back to image space without clamping.
pub fn decode(model: &InvDnModel, lr: &Map, z: &Map) -> Result<ImagePatch> {
    precise::inverse(model, lr, z)
}

fn gaussian_latent(shape: [usize; 3], seed: u64, tile: usize, sample: usize) -> Result<Map> {
    Map::from_f32(shape, Tensor::randn(shape.to_vec(), &mut sample_rng(seed, tile, sample)).data())
}

/// Reconstruction with the latent replaced by `z`, clamped to `[0, 1]`.
/// Passing the image's own latent reproduces the input.
pub fn denoise_with_latent(model: &InvDnModel, noisy: &ImagePatch, z: &Map) -> Result<ImagePatch> {
    let split = encode(model, noisy)?;
    Ok(decode(model, &split.lr, z)?.clamped())
}

fn samples_untiled(
    model: &InvDnModel,
    noisy: &ImagePatch,
    samples: usize,
    seed: u64,
    tile: usize,
) -> Result<Vec<ImagePatch>> {
    let split = encode(model, noisy)?;
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let z = gaussian_latent(split.z.shape(), seed, tile, i)?;
            Ok(decode(model, &split.lr, &z)?.clamped())
        })
        .collect()
}

/// Pixelwise mean accumulated in f64 in list order.
pub fn mean_images(images: &[ImagePatch]) -> Result<ImagePatch> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("cannot average an empty image list".into()))?;
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(Error::Config("cannot average images of different shapes".into()));
    }
    let n = images.len() as f64;
    let mut acc = vec![0f64; first.data().len()];
    for im in images {
        for (a, &v) in acc.iter_mut().zip(im.data()) {
            *a += v as f64;
        }
    }
    let [c, h, w] = first.shape();
    ImagePatch::new(c, h, w, acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Individual Monte Carlo reconstructions, each clamped to `[0, 1]`.
pub fn denoise_samples(model: &InvDnModel, noisy: &ImagePatch, opts: &DenoiseOptions) -> Result<Vec<ImagePatch>> {
    opts.validate()?;
    let noisy = noisy.with_channels(model.config().input_channels)?;
    match opts.tile {
        None => samples_untiled(model, &noisy, opts.mc_samples, opts.seed, 0),
        Some(tile) => (0..opts.mc_samples)
            .map(|i| {
                tile_process(model, &noisy, tile, opts.overlap, |patch, ti| {
                    samples_untiled(model, patch, i + 1, opts.seed, ti).map(|mut v| v.pop().unwrap())
                })
            })
            .collect(),
    }
}

/// Mean of `opts.mc_samples` reconstructions with fresh Gaussian latents.
pub fn denoise(model: &InvDnModel, noisy: &ImagePatch, opts: &DenoiseOptions) -> Result<ImagePatch> {
    opts.validate()?;
    let noisy = noisy.with_channels(model.config().input_channels)?;
    match opts.tile {
        None => mean_images(&samples_untiled(model, &noisy, opts.mc_samples, opts.seed, 0)?),
        Some(tile) => tile_process(model, &noisy, tile, opts.overlap, |patch, ti| {
            mean_images(&samples_untiled(model, patch, opts.mc_samples, opts.seed, ti)?)
        }),
    }
}

fn perturb_untiled(model: &InvDnModel, noisy: &ImagePatch, eps: f32, seed: u64, tile: usize) -> Result<ImagePatch> {
    let split = encode(model, noisy)?;
    let v = gaussian_latent(split.z.shape(), seed, tile, 0)?;
    let z = split.z.add_scaled(eps as f64, &v)?;
    Ok(decode(model, &split.lr, &z)?.clamped())
}

/// New noisy image sharing the input's LR content, made by nudging its
/// latent with `epsilon`-scaled Gaussian noise.
pub fn generate_noisy(model: &InvDnModel, noisy: &ImagePatch, opts: &NoiseGenOptions) -> Result<ImagePatch> {
    opts.validate()?;
    let noisy = noisy.with_channels(model.config().input_channels)?;
    match opts.tile {
        None => perturb_untiled(model, &noisy, opts.epsilon, opts.seed, 0),
        Some(tile) => tile_process(model, &noisy, tile, opts.overlap, |patch, ti| {
            perturb_untiled(model, patch, opts.epsilon, opts.seed, ti)
        }),
    }
}

/// Tile start offsets covering `len` with tiles of `tile` and step
/// `tile - overlap`; the last tile is flush with the end.
fn tile_starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut starts: Vec<usize> = (0..).map(|i| i * step).take_while(|&s| s + tile < len).collect();
    starts.push(len - tile);
    starts
}

/// Per-pixel blend weights along one axis of tile `i`: a linear ramp
/// over the overlap with each neighbour, 1 elsewhere.
fn axis_weights(starts: &[usize], i: usize, size: usize) -> Vec<f32> {
    let lead = if i > 0 { starts[i - 1] + size - starts[i] } else { 0 };
    let trail = if i + 1 < starts.len() { starts[i] + size - starts[i + 1] } else { 0 };
    (0..size)
        .map(|p| {
            let mut w = 1.0f32;
            if p < lead {
                w = w.min((p as f32 + 0.5) / lead as f32);
            }
            let q = size - 1 - p;
            if q < trail {
                w = w.min((q as f32 + 0.5) / trail as f32);
            }
            w
        })
        .collect()
}

/// Apply `f` to overlapping tiles and feather the results together.
/// Images whose sides are not multiples of the model's scale factor are
/// edge-padded first and cropped afterwards.
pub fn tile_process<F>(model: &InvDnModel, image: &ImagePatch, tile: usize, overlap: usize, f: F) -> Result<ImagePatch>
where
    F: Fn(&ImagePatch, usize) -> Result<ImagePatch> + Sync,
{
    let factor = model.config().scale_factor();
    if tile < factor || tile % factor != 0 {
        return Err(Error::Config(format!("tile size {tile} must be a positive multiple of {factor}")));
    }
    if overlap >= tile {
        return Err(Error::Config(format!("overlap {overlap} must be smaller than tile size {tile}")));
    }
    let [c, h, w] = image.shape();
    let round_up = |v: usize| v.div_ceil(factor) * factor;
    let (ph, pw) = (round_up(h), round_up(w));
    let padded = if (ph, pw) == (h, w) { image.clone() } else { image.pad_to(ph, pw) };
    let (th, tw) = (tile.min(ph), tile.min(pw));
    let ys = tile_starts(ph, th, overlap);
    let xs = tile_starts(pw, tw, overlap);
    let jobs: Vec<(usize, usize)> = (0..ys.len()).flat_map(|i| (0..xs.len()).map(move |j| (i, j))).collect();
    let outputs: Vec<ImagePatch> = jobs
        .par_iter()
        .enumerate()
        .map(|(k, &(i, j))| {
            let out = f(&padded.crop(ys[i], xs[j], th, tw)?, k)?;
            if out.shape() != [c, th, tw] {
                return Err(Error::Config(format!(
                    "tile function returned {:?}, expected {:?}",
                    out.shape(),
                    [c, th, tw]
                )));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    if outputs.len() == 1 {
        return outputs[0].crop(0, 0, h, w);
    }
    let mut acc = vec![0f32; c * ph * pw];
    let mut norm = vec![0f32; ph * pw];
    for (&(i, j), out) in jobs.iter().zip(&outputs) {
        let wy = axis_weights(&ys, i, th);
        let wx = axis_weights(&xs, j, tw);
        for y in 0..th {
            for x in 0..tw {
                let wgt = wy[y] * wx[x];
                let p = (ys[i] + y) * pw + xs[j] + x;
                norm[p] += wgt;
                for ch in 0..c {
                    acc[ch * ph * pw + p] += wgt * out.get(ch, y, x);
                }
            }
        }
    }
    let blended = ImagePatch::from_fn(c, ph, pw, |ch, y, x| acc[ch * ph * pw + y * pw + x] / norm[y * pw + x]);
    blended.crop(0, 0, h, w)
}
