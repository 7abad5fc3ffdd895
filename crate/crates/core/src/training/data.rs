//! Training pairs: procedural clean textures, synthetic noise, on-disk
//! clean/noisy folders, and flip/rotate augmentation.

use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::ImagePatch;
use crate::io;

/// An aligned (noisy, clean) pair of equal shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub noisy: ImagePatch,
    pub clean: ImagePatch,
}

/// One of the eight dihedral transforms of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Augment {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..=3.
    pub rot90: u8,
}

impl Augment {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, square: bool) -> Self {
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        let rot = rng.gen_range(0..4u8);
        Self { hflip, vflip, rot90: if square { rot } else { rot & 2 } }
    }

    pub fn apply(&self, img: &ImagePatch) -> ImagePatch {
        let [c, h, w] = img.shape();
        let mut out = ImagePatch::from_fn(c, h, w, |ch, y, x| {
            let sy = if self.vflip { h - 1 - y } else { y };
            let sx = if self.hflip { w - 1 - x } else { x };
            img.get(ch, sy, sx)
        });
        for _ in 0..self.rot90 % 4 {
            out = rotate90(&out);
        }
        out
    }

    pub fn apply_pair(&self, pair: &TrainPair) -> TrainPair {
        TrainPair { noisy: self.apply(&pair.noisy), clean: self.apply(&pair.clean) }
    }
}

/// Counter-clockwise quarter turn.
fn rotate90(img: &ImagePatch) -> ImagePatch {
    let [c, h, w] = img.shape();
    ImagePatch::from_fn(c, w, h, |ch, y, x| img.get(ch, x, w - 1 - y))
}

/// Draw a random dihedral transform and apply it to both members.
pub fn augment<R: Rng + ?Sized>(pair: &TrainPair, rng: &mut R) -> TrainPair {
    let square = pair.clean.height() == pair.clean.width();
    Augment::random(rng, square).apply_pair(pair)
}

/// Additive Gaussian noise with a per-image sigma drawn uniformly from
/// `[sigma_min, sigma_max]`, plus an optional `gain * sqrt(x)` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_min: f32,
    pub sigma_max: f32,
    pub signal_gain: f32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_min: 5.0 / 255.0, sigma_max: 50.0 / 255.0, signal_gain: 0.0 }
    }
}

impl NoiseModel {
    pub fn gaussian(sigma: f32) -> Self {
        Self { sigma_min: sigma, sigma_max: sigma, signal_gain: 0.0 }
    }

    pub fn apply<R: Rng + ?Sized>(&self, clean: &ImagePatch, rng: &mut R) -> ImagePatch {
        let sigma = if self.sigma_max > self.sigma_min {
            rng.gen_range(self.sigma_min..=self.sigma_max)
        } else {
            self.sigma_min
        };
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            let n: f32 = StandardNormal.sample(rng);
            let mut out = *v + sigma * n;
            if self.signal_gain > 0.0 {
                let s: f32 = StandardNormal.sample(rng);
                out += self.signal_gain * v.max(0.0).sqrt() * s;
            }
            *v = out.clamp(0.0, 1.0);
        }
        noisy
    }
}

fn smoothstep(edge: f32, x: f32) -> f32 {
    // logistic ramp about `edge`, roughly 3 px wide
    1.0 / (1.0 + (-(x - edge) * 1.5).exp())
}

/// A smooth synthetic texture: colour gradient, a few low-frequency
/// waves, and soft-edged discs and boxes.
pub fn procedural_texture<R: Rng + ?Sized>(channels: usize, size: usize, rng: &mut R) -> ImagePatch {
    let s = size as f32;
    let base: Vec<f32> = (0..channels).map(|_| rng.gen_range(0.2..0.8)).collect();
    let grad: Vec<(f32, f32)> = (0..channels)
        .map(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
        .collect();
    let waves: Vec<(f32, f32, f32, Vec<f32>)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let angle = rng.gen_range(0.0..PI);
            let period = rng.gen_range(16.0..48.0f32);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = (0..channels).map(|_| rng.gen_range(-0.12..0.12)).collect();
            (angle, 2.0 * PI / period, phase, amp)
        })
        .collect();
    enum Shape {
        Disc { cy: f32, cx: f32, r: f32 },
        Box { y0: f32, x0: f32, y1: f32, x1: f32 },
    }
    let shapes: Vec<(Shape, Vec<f32>)> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let shape = if rng.gen_bool(0.5) {
                Shape::Disc {
                    cy: rng.gen_range(0.0..s),
                    cx: rng.gen_range(0.0..s),
                    r: rng.gen_range(0.15 * s..0.4 * s),
                }
            } else {
                let (y0, x0) = (rng.gen_range(-0.2 * s..0.6 * s), rng.gen_range(-0.2 * s..0.6 * s));
                Shape::Box {
                    y0,
                    x0,
                    y1: y0 + rng.gen_range(0.3 * s..0.8 * s),
                    x1: x0 + rng.gen_range(0.3 * s..0.8 * s),
                }
            };
            let color = (0..channels).map(|_| rng.gen_range(-0.3..0.3)).collect();
            (shape, color)
        })
        .collect();
    ImagePatch::from_fn(channels, size, size, |c, y, x| {
        let (fy, fx) = (y as f32 / s - 0.5, x as f32 / s - 0.5);
        let mut v = base[c] + grad[c].0 * fy + grad[c].1 * fx;
        for (angle, k, phase, amp) in &waves {
            let t = (x as f32) * angle.cos() + (y as f32) * angle.sin();
            v += amp[c] * (k * t + phase).sin();
        }
        for (shape, color) in &shapes {
            let inside = match *shape {
                Shape::Disc { cy, cx, r } => {
                    let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
                    smoothstep(0.0, r - d)
                }
                Shape::Box { y0, x0, y1, x1 } => {
                    let (yf, xf) = (y as f32, x as f32);
                    smoothstep(y0, yf) * smoothstep(xf, x1) * smoothstep(x0, xf) * smoothstep(yf, y1)
                }
            };
            v += color[c] * inside;
        }
        v.clamp(0.0, 1.0)
    })
}

/// Something that yields aligned training pairs of a requested size.
pub trait PairSource: Send {
    fn sample(&mut self, patch: usize, rng: &mut dyn rand::RngCore) -> Result<TrainPair>;
}

fn random_crop(
    imgs: &[&ImagePatch],
    patch: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Vec<ImagePatch>> {
    let (h, w) = (imgs[0].height(), imgs[0].width());
    if h < patch || w < patch {
        return Err(Error::Config(format!("image {h}x{w} is smaller than patch {patch}")));
    }
    let y0 = rng.gen_range(0..=h - patch);
    let x0 = rng.gen_range(0..=w - patch);
    imgs.iter().map(|im| im.crop(y0, x0, patch, patch)).collect()
}

/// Clean images (procedural and/or user supplied) with synthetic noise.
pub struct SyntheticSource {
    pub channels: usize,
    pub images: Vec<ImagePatch>,
    /// Probability of drawing a procedural texture when images exist.
    pub procedural_fraction: f64,
    pub noise: NoiseModel,
}

impl SyntheticSource {
    pub fn procedural(channels: usize, noise: NoiseModel) -> Self {
        Self { channels, images: Vec::new(), procedural_fraction: 1.0, noise }
    }
}

impl PairSource for SyntheticSource {
    fn sample(&mut self, patch: usize, rng: &mut dyn rand::RngCore) -> Result<TrainPair> {
        let use_procedural = self.images.is_empty() || rng.gen_bool(self.procedural_fraction);
        let clean = if use_procedural {
            procedural_texture(self.channels, patch, rng)
        } else {
            let img = &self.images[rng.gen_range(0..self.images.len())];
            random_crop(&[img], patch, rng)?.remove(0)
        };
        let noisy = self.noise.apply(&clean, rng);
        Ok(augment(&TrainPair { noisy, clean }, rng))
    }
}

/// Real clean/noisy pairs matched by filename.
pub struct PairedSource {
    pub pairs: Vec<TrainPair>,
}

impl PairSource for PairedSource {
    fn sample(&mut self, patch: usize, rng: &mut dyn rand::RngCore) -> Result<TrainPair> {
        if self.pairs.is_empty() {
            return Err(Error::Config("paired dataset is empty".into()));
        }
        let p = &self.pairs[rng.gen_range(0..self.pairs.len())];
        let mut crops = random_crop(&[&p.noisy, &p.clean], patch, rng)?;
        let clean = crops.pop().expect("two crops");
        let noisy = crops.pop().expect("two crops");
        Ok(augment(&TrainPair { noisy, clean }, rng))
    }
}

/// Open `<root>/clean/*.png`, pairing with `<root>/noisy/<same name>` when
/// that folder exists, otherwise falling back to synthetic noise.
pub fn open_dataset(
    root: &Path,
    channels: usize,
    patch: usize,
    noise: NoiseModel,
) -> Result<Box<dyn PairSource>> {
    let clean_dir = root.join("clean");
    let noisy_dir = root.join("noisy");
    let files = io::list_pngs(&clean_dir)?;
    let fit = |img: &ImagePatch| img.height() >= patch && img.width() >= patch;
    if noisy_dir.is_dir() {
        let mut pairs = Vec::new();
        for f in &files {
            let name = f.file_name().expect("listed file has a name");
            let npath = noisy_dir.join(name);
            if !npath.is_file() {
                return Err(Error::Config(format!("no noisy counterpart for {}", f.display())));
            }
            let clean = io::load_image(f)?.with_channels(channels)?;
            let noisy = io::load_image(&npath)?.with_channels(channels)?;
            if !clean.same_shape(&noisy) {
                return Err(Error::Config(format!("{} and its noisy pair differ in shape", f.display())));
            }
            if fit(&clean) {
                pairs.push(TrainPair { noisy, clean });
            }
        }
        if pairs.is_empty() {
            return Err(Error::Config(format!("no pairs of at least {patch}x{patch} in {}", root.display())));
        }
        return Ok(Box::new(PairedSource { pairs }));
    }
    let mut images = Vec::new();
    for f in &files {
        let img = io::load_image(f)?.with_channels(channels)?;
        if fit(&img) {
            images.push(img);
        }
    }
    let procedural_fraction = if images.is_empty() { 1.0 } else { 0.5 };
    Ok(Box::new(SyntheticSource { channels, images, procedural_fraction, noise }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp() -> ImagePatch {
        ImagePatch::from_fn(2, 4, 4, |c, y, x| (c * 16 + y * 4 + x) as f32)
    }

    #[test]
    fn identity_augment() {
        let img = ramp();
        assert_eq!(Augment::default().apply(&img), img);
    }

    #[test]
    fn double_flip_and_four_rotations() {
        let img = ramp();
        let h = Augment { hflip: true, ..Default::default() };
        assert_eq!(h.apply(&h.apply(&img)), img);
        let r = Augment { rot90: 1, ..Default::default() };
        let mut x = img.clone();
        for _ in 0..4 {
            x = r.apply(&x);
        }
        assert_eq!(x, img);
        assert_ne!(r.apply(&img), img);
    }

    #[test]
    fn rotation_direction() {
        // [[0,1],[2,3]] turned counter-clockwise is [[1,3],[0,2]]
        let img = ImagePatch::from_fn(1, 2, 2, |_, y, x| (y * 2 + x) as f32);
        let r = Augment { rot90: 1, ..Default::default() }.apply(&img);
        assert_eq!(r.data(), &[1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn pair_members_transform_together() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let clean = ramp();
        let noisy = ImagePatch::from_fn(2, 4, 4, |c, y, x| clean.get(c, y, x) + 100.0);
        for _ in 0..16 {
            let out = augment(&TrainPair { noisy: noisy.clone(), clean: clean.clone() }, &mut rng);
            for (n, c) in out.noisy.data().iter().zip(out.clean.data()) {
                assert_eq!(*n, c + 100.0);
            }
        }
    }

    #[test]
    fn synthetic_pairs_are_aligned_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut src = SyntheticSource::procedural(3, NoiseModel::default());
        for _ in 0..4 {
            let p = src.sample(32, &mut rng).unwrap();
            assert_eq!(p.noisy.shape(), [3, 32, 32]);
            assert!(p.noisy.same_shape(&p.clean));
            assert!(p.noisy.data().iter().chain(p.clean.data()).all(|v| (0.0..=1.0).contains(v)));
            assert_ne!(p.noisy, p.clean);
        }
    }

    #[test]
    fn gaussian_noise_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let clean = ImagePatch::filled(1, 128, 128, 0.5);
        let noisy = NoiseModel::gaussian(0.1).apply(&clean, &mut rng);
        let var: f64 = noisy.data().iter().map(|&v| ((v - 0.5) as f64).powi(2)).sum::<f64>() / (128.0 * 128.0);
        assert!((var.sqrt() - 0.1).abs() < 0.005);
    }

    #[test]
    fn texture_is_deterministic_per_seed() {
        let a = procedural_texture(3, 16, &mut ChaCha8Rng::seed_from_u64(1));
        let b = procedural_texture(3, 16, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
    }
}
