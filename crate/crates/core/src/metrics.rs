//! Fidelity metrics and evaluation reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::ImagePatch;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub const AKLD_BINS: usize = 256;
pub const AKLD_ALPHA: f64 = 1e-6;

fn check_pair(a: &ImagePatch, b: &ImagePatch, what: &str) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Metric(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if a.data().is_empty() {
        return Err(Error::Metric(format!("{what}: empty image")));
    }
    Ok(())
}

pub fn mse(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    check_pair(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit peak; `+inf` for identical
/// images.
pub fn psnr(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable valid-mode Gaussian filter of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5) over
/// the valid region, averaged over pixels and channels.
pub fn ssim(a: &ImagePatch, b: &ImagePatch) -> Result<f64> {
    check_pair(a, b, "ssim")?;
    let [c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let k = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let mxx = filter_valid(&prod(&x, &x), h, w, &k);
        let myy = filter_valid(&prod(&y, &y), h, w, &k);
        let mxy = filter_valid(&prod(&x, &y), h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Smoothed histogram of `values` over `[-1, 1]`, normalised to sum to 1.
fn residual_histogram(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut hist = vec![0.0f64; AKLD_BINS];
    let mut n = 0.0;
    for v in values {
        let pos = (v + 1.0) / 2.0 * AKLD_BINS as f64;
        let bin = (pos.floor().max(0.0) as usize).min(AKLD_BINS - 1);
        hist[bin] += 1.0;
        n += 1.0;
    }
    let denom = n + AKLD_ALPHA * AKLD_BINS as f64;
    hist.iter_mut().for_each(|h| *h = (*h + AKLD_ALPHA) / denom);
    hist
}

/// KL divergence between two discrete distributions on the same support.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Per-image AKLD term: channel-averaged KL between the histograms of the
/// real and generated noise residuals.
pub fn akld_single(real: &ImagePatch, clean: &ImagePatch, generated: &ImagePatch) -> Result<f64> {
    check_pair(real, clean, "akld")?;
    check_pair(generated, clean, "akld")?;
    let channels = clean.channels();
    let mut sum = 0.0;
    for ch in 0..channels {
        let c = clean.plane(ch);
        let p = residual_histogram(real.plane(ch).iter().zip(c).map(|(&r, &c)| r as f64 - c as f64));
        let q = residual_histogram(generated.plane(ch).iter().zip(c).map(|(&g, &c)| g as f64 - c as f64));
        sum += kl_divergence(&p, &q);
    }
    Ok(sum / channels as f64)
}

/// Average KL divergence between real and generated noise over aligned
/// triplets.
pub fn akld(real: &[ImagePatch], clean: &[ImagePatch], generated: &[ImagePatch]) -> Result<f64> {
    if real.is_empty() {
        return Err(Error::Metric("akld: no images".into()));
    }
    if real.len() != clean.len() || real.len() != generated.len() {
        return Err(Error::Metric(format!(
            "akld: {} real, {} clean and {} generated images are not aligned",
            real.len(),
            clean.len(),
            generated.len()
        )));
    }
    let mut sum = 0.0;
    for ((r, c), g) in real.iter().zip(clean).zip(generated) {
        sum += akld_single(r, c, g)?;
    }
    Ok(sum / real.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub akld: Option<f64>,
}

impl ImageMetrics {
    pub fn compute(name: impl Into<String>, output: &ImagePatch, reference: &ImagePatch) -> Result<Self> {
        Ok(Self { name: name.into(), psnr: psnr(output, reference)?, ssim: ssim(output, reference)?, akld: None })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

impl MetricReport {
    pub fn push(&mut self, m: ImageMetrics) {
        self.images.push(m);
    }

    fn mean(&self, f: impl Fn(&ImageMetrics) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self.images.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        self.mean(|m| Some(m.psnr))
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        self.mean(|m| Some(m.ssim))
    }

    pub fn mean_akld(&self) -> Option<f64> {
        self.mean(|m| m.akld)
    }

    /// One `key=value` line per image followed by a summary line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for m in &self.images {
            let _ = write!(out, "image={} psnr={:.4} ssim={:.6}", m.name, m.psnr, m.ssim);
            if let Some(a) = m.akld {
                let _ = write!(out, " akld={a:.6}");
            }
            out.push('\n');
        }
        let _ = write!(
            out,
            "summary images={} psnr={:.4} ssim={:.6}",
            self.images.len(),
            self.mean_psnr().unwrap_or(f64::NAN),
            self.mean_ssim().unwrap_or(f64::NAN)
        );
        if let Some(a) = self.mean_akld() {
            let _ = write!(out, " akld={a:.6}");
        }
        out.push('\n');
        out
    }

    /// CSV table with a header row and a final `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr,ssim,akld\n");
        for m in &self.images {
            let _ = writeln!(out, "{},{:.6},{:.6},{}", m.name, m.psnr, m.ssim, fmt_opt(m.akld));
        }
        let _ = writeln!(
            out,
            "mean,{},{},{}",
            fmt_opt(self.mean_psnr()),
            fmt_opt(self.mean_ssim()),
            fmt_opt(self.mean_akld())
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize) -> ImagePatch {
        ImagePatch::from_fn(1, h, w, |_, y, x| {
            0.5 + 0.5 * ((0.7 * x as f64).sin() * (0.45 * y as f64).cos()) as f32
        })
    }

    #[test]
    fn psnr_values() {
        let a = ImagePatch::filled(3, 8, 8, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = ImagePatch::filled(3, 8, 8, 0.5 + 1.0 / 255.0);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-3);
        assert!(psnr(&a, &ImagePatch::filled(1, 8, 8, 0.5)).is_err());
    }

    #[test]
    fn psnr_symmetric_and_monotone() {
        let a = pattern(16, 16);
        let mut last = f64::INFINITY;
        for k in 1..6 {
            let b = ImagePatch::from_fn(1, 16, 16, |c, y, x| {
                a.get(c, y, x) + if (x + y) % 2 == 0 { 1.0 } else { -1.0 } * 0.01 * k as f32
            });
            let p = psnr(&a, &b).unwrap();
            assert_eq!(p, psnr(&b, &a).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_matches_reference_values() {
        // reference values from scikit-image structural_similarity with
        // gaussian_weights, sigma 1.5, population covariance, data_range 1
        let a = pattern(32, 40);
        let inv = ImagePatch::from_fn(1, 32, 40, |c, y, x| 1.0 - a.get(c, y, x));
        let s = ssim(&a, &inv).unwrap();
        assert!((s - -0.8868765169386803).abs() < 1e-5, "{s}");
        assert!(s < 0.5);
        let c = ImagePatch::from_fn(1, 32, 40, |ch, y, x| {
            0.8 * a.get(ch, y, x) + 0.1 + 0.05 * ((1.3 * x as f64 + 0.9 * y as f64).sin() as f32)
        });
        assert!((ssim(&a, &c).unwrap() - 0.9584889735999232).abs() < 1e-5);
        assert!((ssim(&a, &c).unwrap() - ssim(&c, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_trivial_cases() {
        let a = pattern(16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let k = ImagePatch::filled(3, 12, 12, 0.3);
        assert!((ssim(&k, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(ssim(&pattern(10, 16), &pattern(10, 16)), Err(Error::Metric(_))));
    }

    #[test]
    fn akld_trivial_cases() {
        let clean = pattern(16, 16);
        let real = ImagePatch::from_fn(1, 16, 16, |c, y, x| clean.get(c, y, x) + 0.02 * ((x * 7 + y * 3) % 5) as f32);
        assert_eq!(akld(&[real.clone()], &[clean.clone()], &[real.clone()]).unwrap(), 0.0);
        let flipped = ImagePatch::from_fn(1, 16, 16, |c, y, x| 2.0 * clean.get(c, y, x) - real.get(c, y, x));
        assert!(akld(&[real.clone()], &[clean.clone()], &[flipped]).unwrap() > 0.0);
        assert!(akld(&[], &[], &[]).is_err());
        assert!(akld(&[real.clone()], &[], &[real]).is_err());
    }

    #[test]
    fn report_formats() {
        let a = pattern(16, 16);
        let mut r = MetricReport::default();
        let mut m = ImageMetrics::compute("x.png", &a, &a).unwrap();
        m.akld = Some(0.25);
        r.push(m);
        let lines = r.to_lines();
        assert!(lines.starts_with("image=x.png psnr=inf ssim=1.000000 akld=0.250000\n"));
        assert!(lines.contains("summary images=1"));
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().last().unwrap().starts_with("mean,inf,1.000000,0.250000"));
    }
}
