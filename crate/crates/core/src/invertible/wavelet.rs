//! Parameter-free down-scaling bijections: orthonormal Haar and the
//! checkerboard squeeze. Both map `[C, H, W]` to `[4C, H/2, W/2]`.
//!
//! The transforms are orthogonal, so each one's adjoint is its inverse and
//! the backward pass of one direction is the other direction applied to
//! the incoming gradient.

use crate::tensor::{dim_err, Real, Result, Tensor};

fn check_forward(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok((c, h, w)),
        [_, h, w] => Err(dim_err(op, format!("spatial extents {h}x{w} must be even"))),
        _ => Err(dim_err(op, format!("expected [C,H,W], got {:?}", x.shape()))),
    }
}

fn check_inverse(op: &'static str, y: &Tensor) -> Result<(usize, usize, usize)> {
    match *y.shape() {
        [c4, h, w] if c4 % 4 == 0 => Ok((c4 / 4, h, w)),
        [c4, ..] if y.shape().len() == 3 => {
            Err(dim_err(op, format!("channel count {c4} is not divisible by 4")))
        }
        _ => Err(dim_err(op, format!("expected [4C,H,W], got {:?}", y.shape()))),
    }
}

/// `[C, H, W]` -> `[4C, H/2, W/2]`, grouped as all LL, then LH, HL, HH.
pub(crate) fn haar_analysis<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let band = c * oh * ow;
    let half = T::HALF;
    let mut y = vec![T::default(); 4 * band];
    for ch in 0..c {
        let src = &x[ch * h * w..][..h * w];
        for i in 0..oh {
            let top = &src[2 * i * w..][..w];
            let bot = &src[(2 * i + 1) * w..][..w];
            let base = ch * oh * ow + i * ow;
            for j in 0..ow {
                let (a, b) = (top[2 * j], top[2 * j + 1]);
                let (cc, d) = (bot[2 * j], bot[2 * j + 1]);
                y[base + j] = (a + b + cc + d) * half;
                y[band + base + j] = (a - b + cc - d) * half;
                y[2 * band + base + j] = (a + b - cc - d) * half;
                y[3 * band + base + j] = (a - b - cc + d) * half;
            }
        }
    }
    y
}

/// Inverse of [`haar_analysis`]; `c` is the channel count of the result.
pub(crate) fn haar_synthesis<T: Real>(y: &[T], c: usize, oh: usize, ow: usize) -> Vec<T> {
    let (h, w) = (2 * oh, 2 * ow);
    let band = c * oh * ow;
    let half = T::HALF;
    let mut x = vec![T::default(); c * h * w];
    for ch in 0..c {
        let dst = &mut x[ch * h * w..][..h * w];
        for i in 0..oh {
            let base = ch * oh * ow + i * ow;
            for j in 0..ow {
                let ll = y[base + j];
                let lh = y[band + base + j];
                let hl = y[2 * band + base + j];
                let hh = y[3 * band + base + j];
                dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                dst[2 * i * w + 2 * j + 1] = (ll - lh + hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j] = (ll + lh - hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    x
}

/// Channel `4c + q` holds phase `q` of input channel `c`, phases ordered
/// (even,even), (even,odd), (odd,even), (odd,odd).
pub(crate) fn squeeze_raw<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![T::default(); c * h * w];
    for ch in 0..c {
        for q in 0..4 {
            let (di, dj) = (q / 2, q % 2);
            let dst = &mut y[(4 * ch + q) * oh * ow..][..oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    dst[i * ow + j] = x[ch * h * w + (2 * i + di) * w + 2 * j + dj];
                }
            }
        }
    }
    y
}

pub(crate) fn unsqueeze_raw<T: Real>(y: &[T], c: usize, oh: usize, ow: usize) -> Vec<T> {
    let (h, w) = (2 * oh, 2 * ow);
    let mut x = vec![T::default(); c * h * w];
    for ch in 0..c {
        for q in 0..4 {
            let (di, dj) = (q / 2, q % 2);
            let src = &y[(4 * ch + q) * oh * ow..][..oh * ow];
            for i in 0..oh {
                for j in 0..ow {
                    x[ch * h * w + (2 * i + di) * w + 2 * j + dj] = src[i * ow + j];
                }
            }
        }
    }
    x
}

pub fn haar_forward(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_forward("haar_forward", x)?;
    let y = haar_analysis(x.data(), c, h, w);
    Tensor::from_op("haar_forward", vec![4 * c, h / 2, w / 2], y, &[x], move |g| {
        vec![Some(haar_synthesis(g, c, h / 2, w / 2))]
    })
}

pub fn haar_inverse(y: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = check_inverse("haar_inverse", y)?;
    let x = haar_synthesis(y.data(), c, oh, ow);
    Tensor::from_op("haar_inverse", vec![c, 2 * oh, 2 * ow], x, &[y], move |g| {
        vec![Some(haar_analysis(g, c, 2 * oh, 2 * ow))]
    })
}

pub fn squeeze_forward(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = check_forward("squeeze_forward", x)?;
    let y = squeeze_raw(x.data(), c, h, w);
    Tensor::from_op("squeeze_forward", vec![4 * c, h / 2, w / 2], y, &[x], move |g| {
        vec![Some(unsqueeze_raw(g, c, h / 2, w / 2))]
    })
}

pub fn squeeze_inverse(y: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = check_inverse("squeeze_inverse", y)?;
    let x = unsqueeze_raw(y.data(), c, oh, ow);
    Tensor::from_op("squeeze_inverse", vec![c, 2 * oh, 2 * ow], x, &[y], move |g| {
        vec![Some(squeeze_raw(g, c, 2 * oh, 2 * ow))]
    })
}

/// Which bijection a down-scale block starts with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformKind {
    #[default]
    Haar,
    Squeeze,
}

impl TransformKind {
    pub fn forward(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Self::Haar => haar_forward(x),
            Self::Squeeze => squeeze_forward(x),
        }
    }

    pub fn inverse(self, y: &Tensor) -> Result<Tensor> {
        match self {
            Self::Haar => haar_inverse(y),
            Self::Squeeze => squeeze_inverse(y),
        }
    }

    /// Tape-free forward on a `[c, h, w]` buffer with even `h` and `w`.
    pub(crate) fn forward_raw<T: Real>(self, x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
        match self {
            Self::Haar => haar_analysis(x, c, h, w),
            Self::Squeeze => squeeze_raw(x, c, h, w),
        }
    }

    /// Tape-free inverse; `c` is the channel count of the result.
    pub(crate) fn inverse_raw<T: Real>(self, y: &[T], c: usize, oh: usize, ow: usize) -> Vec<T> {
        match self {
            Self::Haar => haar_synthesis(y, c, oh, ow),
            Self::Squeeze => unsqueeze_raw(y, c, oh, ow),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::Squeeze => "squeeze",
        }
    }
}

impl std::str::FromStr for TransformKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::Haar),
            "squeeze" => Ok(Self::Squeeze),
            other => Err(format!("unknown transform `{other}` (expected haar or squeeze)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor {
        Tensor::new(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn haar_single_block() {
        let y = haar_forward(&t(&[1, 2, 2], vec![1.0, 3.0, 5.0, 7.0])).unwrap();
        assert_eq!(y.shape(), &[4, 1, 1]);
        assert_eq!(y.data(), &[8.0, -2.0, -4.0, 0.0]);
        let x = haar_inverse(&y).unwrap();
        assert_eq!(x.data(), &[1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn haar_constant_image() {
        let y = haar_forward(&Tensor::full([2, 4, 6], 0.3)).unwrap();
        assert_eq!(y.shape(), &[8, 2, 3]);
        let band = 2 * 2 * 3;
        assert!(y.data()[..band].iter().all(|&v| (v - 0.6).abs() < 1e-7));
        assert!(y.data()[band..].iter().all(|&v| v == 0.0));
        let mut ll_only = vec![0.0; 4 * 6];
        ll_only[..6].fill(1.4);
        let x = haar_inverse(&t(&[4, 2, 3], ll_only)).unwrap();
        assert!(x.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
    }

    #[test]
    fn haar_groups_ll_first() {
        // channel 0 constant 1, channel 1 constant 2
        let mut v = vec![1.0; 4];
        v.extend([2.0; 4]);
        let y = haar_forward(&t(&[2, 2, 2], v)).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_extent_rejected() {
        let e = haar_forward(&Tensor::zeros([1, 3, 4])).unwrap_err();
        assert!(matches!(e, TensorError::Dimension { .. }));
        assert!(squeeze_forward(&Tensor::zeros([1, 4, 5])).is_err());
        assert!(haar_inverse(&Tensor::zeros([6, 2, 2])).is_err());
        assert!(squeeze_inverse(&Tensor::zeros([3, 2, 2])).is_err());
    }

    #[test]
    fn squeeze_checkerboard() {
        let y = squeeze_forward(&t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(y.shape(), &[4, 1, 1]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn squeeze_round_trip_bit_exact() {
        let v: Vec<f32> = (0..3 * 4 * 6).map(|i| (i as f32).sin()).collect();
        let x = t(&[3, 4, 6], v);
        let y = squeeze_forward(&x).unwrap();
        assert_eq!(y.shape(), &[12, 2, 3]);
        assert_eq!(squeeze_inverse(&y).unwrap().data(), x.data());
        let mut a: Vec<f32> = x.data().to_vec();
        let mut b: Vec<f32> = y.data().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn transform_kind_parses() {
        assert_eq!("Haar".parse::<TransformKind>().unwrap(), TransformKind::Haar);
        assert_eq!("squeeze".parse::<TransformKind>().unwrap(), TransformKind::Squeeze);
        assert!("db4".parse::<TransformKind>().is_err());
    }
}
