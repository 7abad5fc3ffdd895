//! Anti-aliased bicubic down-sampling used to build low-resolution targets.

use crate::error::{Error, Result};
use crate::image::ImagePatch;

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps `(first_index, weights)` along one axis. The
/// kernel is stretched by the factor so it low-passes before decimation;
/// taps falling off the edge are clamped onto the border sample.
fn axis_taps(len: usize, factor: usize) -> Vec<Vec<(usize, f64)>> {
    let f = factor as f64;
    let support = 2.0 * f;
    (0..len / factor)
        .map(|o| {
            let center = (o as f64 + 0.5) * f - 0.5;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for i in lo..=hi {
                let w = cubic((i as f64 - center) / f);
                if w == 0.0 {
                    continue;
                }
                let idx = i.clamp(0, len as isize - 1) as usize;
                match taps.iter_mut().find(|(j, _)| *j == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable bicubic reduction by an integer `factor`; output clamped to
/// `[0, 1]`.
pub fn bicubic_downsample(img: &ImagePatch, factor: usize) -> Result<ImagePatch> {
    let [c, h, w] = img.shape();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Config(format!(
            "bicubic_downsample: {h}x{w} is not divisible by factor {factor}"
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let (ty, tx) = (axis_taps(h, factor), axis_taps(w, factor));
    let mut out = ImagePatch::filled(c, oh, ow, 0.0);
    let mut rows = vec![0f64; h * ow];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * ow + ox] = taps.iter().map(|&(i, wt)| wt * plane[y * w + i] as f64).sum();
            }
        }
        for (oy, taps) in ty.iter().enumerate() {
            for ox in 0..ow {
                let v: f64 = taps.iter().map(|&(i, wt)| wt * rows[i * ow + ox]).sum();
                out.set(ch, oy, ox, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(out)
}
