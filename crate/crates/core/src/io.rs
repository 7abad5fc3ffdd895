//! PNG codecs and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::image::ImagePatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), msg: msg.to_string() }
}

/// Load an 8- or 16-bit gray/RGB PNG (alpha dropped) scaled to `[0, 1]`.
pub fn load_image(path: &Path) -> Result<ImagePatch> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let planar = |channels: usize, raw: &dyn Fn(usize) -> f32, stride: usize| {
        ImagePatch::from_fn(channels, h, w, |c, y, x| raw((y * w + x) * stride + c))
    };
    let out = match &img {
        DynamicImage::ImageLuma8(b) => planar(1, &|i| b.as_raw()[i] as f32 / 255.0, 1),
        DynamicImage::ImageLumaA8(b) => planar(1, &|i| b.as_raw()[i] as f32 / 255.0, 2),
        DynamicImage::ImageRgb8(b) => planar(3, &|i| b.as_raw()[i] as f32 / 255.0, 3),
        DynamicImage::ImageRgba8(b) => planar(3, &|i| b.as_raw()[i] as f32 / 255.0, 4),
        DynamicImage::ImageLuma16(b) => planar(1, &|i| b.as_raw()[i] as f32 / 65535.0, 1),
        DynamicImage::ImageLumaA16(b) => planar(1, &|i| b.as_raw()[i] as f32 / 65535.0, 2),
        DynamicImage::ImageRgb16(b) => planar(3, &|i| b.as_raw()[i] as f32 / 65535.0, 3),
        DynamicImage::ImageRgba16(b) => planar(3, &|i| b.as_raw()[i] as f32 / 65535.0, 4),
        other => return Err(image_err(path, format!("unsupported pixel format {:?}", other.color()))),
    };
    Ok(out)
}

/// Clamp to `[0, 1]` and quantize with round-half-up.
pub fn quantize(v: f32, max: f32) -> u32 {
    (v.clamp(0.0, 1.0) * max + 0.5).floor() as u32
}

/// Encode a 1- or 3-channel image as PNG bytes.
pub fn encode_png(img: &ImagePatch, depth: BitDepth) -> std::result::Result<Vec<u8>, String> {
    let [c, h, w] = img.shape();
    let color = match (c, depth) {
        (1, BitDepth::Eight) => image::ExtendedColorType::L8,
        (3, BitDepth::Eight) => image::ExtendedColorType::Rgb8,
        (1, BitDepth::Sixteen) => image::ExtendedColorType::L16,
        (3, BitDepth::Sixteen) => image::ExtendedColorType::Rgb16,
        _ => return Err(format!("cannot encode a {c}-channel image")),
    };
    let mut raw = Vec::with_capacity(c * h * w * 2);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(ch, y, x);
                match depth {
                    BitDepth::Eight => raw.push(quantize(v, 255.0) as u8),
                    // the encoder takes 16-bit samples in native byte order
                    BitDepth::Sixteen => raw.extend_from_slice(&(quantize(v, 65535.0) as u16).to_ne_bytes()),
                }
            }
        }
    }
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&raw, w as u32, h as u32, color)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

pub fn save_image(img: &ImagePatch, path: &Path) -> Result<()> {
    save_image_with_depth(img, path, BitDepth::Eight)
}

pub fn save_image_with_depth(img: &ImagePatch, path: &Path, depth: BitDepth) -> Result<()> {
    let bytes = encode_png(img, depth).map_err(|e| image_err(path, e))?;
    write_atomic(path, &bytes)
}

/// Write through a temporary sibling file and rename over the target, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| image_err(path, "path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Sorted list of `*.png` files directly inside `dir`.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = p
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if p.is_file() && is_png {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(c: usize) -> ImagePatch {
        ImagePatch::from_fn(c, 7, 9, |ch, y, x| ((ch * 31 + y * 9 + x) as f32 * 0.0123) % 1.0)
    }

    #[test]
    fn eight_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = gradient(3);
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a16.png");
        let img = gradient(3);
        save_image_with_depth(&img, &p, BitDepth::Sixteen).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 1.0 / 131070.0 + 1e-7);
        }
    }

    #[test]
    fn gray_loads_single_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_image(&gradient(1), &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(back.with_channels(3).unwrap().channels(), 3);
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize(0.5 / 255.0, 255.0), 1);
        assert_eq!(quantize(-0.2, 255.0), 0);
        assert_eq!(quantize(1.7, 255.0), 255);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let bytes = encode_png(&gradient(3), BitDepth::Eight).unwrap();
        fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
        assert!(err.to_string().contains("t.png"));
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(Error::Io { .. })));
    }

    #[test]
    fn lists_only_pngs_sorted() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["b.png", "a.PNG", "c.txt"] {
            fs::write(dir.path().join(n), b"x").unwrap();
        }
        let names: Vec<String> = list_pngs(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a.PNG", "b.png"]);
    }
}
