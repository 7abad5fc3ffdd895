//! Exactly-invertible building blocks.

mod coupling;
mod wavelet;

pub use coupling::{Conv2d, InvertibleBlock, ResidualSubnet, LEAKY_SLOPE, LOG_SCALE_BOUND};
pub use wavelet::{
    haar_forward, haar_inverse, squeeze_forward, squeeze_inverse, TransformKind,
};
