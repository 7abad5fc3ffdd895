use super::{dim_err, Real, Result, Tensor};

struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn cols(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `[C, H, W]` into a `[C*k*k, out_h*out_w]` patch matrix.
fn im2col<T: Real>(x: &[T], g: &Geometry) -> Vec<T> {
    let p = g.pixels();
    let mut col = vec![T::default(); g.cols() * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &mut col[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..][..g.w];
                    let dst = &mut row[oy * g.out_w..][..g.out_w];
                    let shift = kj as isize - g.pad as isize;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((g.w as isize - shift).min(g.out_w as isize)).max(0) as usize;
                    if lo < hi {
                        let s0 = (lo as isize + shift) as usize;
                        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
fn col2im(col: &[f32], g: &Geometry) -> Vec<f32> {
    let p = g.pixels();
    let mut x = vec![0.0f32; g.c_in * g.h * g.w];
    for c in 0..g.c_in {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &col[((c * g.k + ki) * g.k + kj) * p..][..p];
                for oy in 0..g.out_h {
                    let iy = oy as isize + ki as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..][..g.w];
                    let src = &row[oy * g.out_w..][..g.out_w];
                    let shift = kj as isize - g.pad as isize;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((g.w as isize - shift).min(g.out_w as isize)).max(0) as usize;
                    for ox in lo..hi {
                        dst[(ox as isize + shift) as usize] += src[ox];
                    }
                }
            }
        }
    }
    x
}

/// `c[m,n] = a[m,k] * b[k,n]` with explicit strides on a and b.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices cover every index addressed by the given extents
    // and strides, and `c` does not alias `a` or `b`.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            n as isize,
            false,
            a.as_ptr(),
            csa as isize,
            rsa as isize,
            b.as_ptr(),
            csb as isize,
            rsb as isize,
            T::default(),
            T::ONE,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

fn geometry(c_in: usize, h: usize, w: usize, k: usize, pad: usize) -> Geometry {
    Geometry { c_in, h, w, k, pad, out_h: h + 2 * pad - k + 1, out_w: w + 2 * pad - k + 1 }
}

fn forward_raw<T: Real>(x: &[T], g: &Geometry, weight: &[T], c_out: usize, bias: &[T]) -> Vec<T> {
    let (kk, p) = (g.cols(), g.pixels());
    let col = im2col(x, g);
    let mut out = vec![T::default(); c_out * p];
    gemm(c_out, kk, p, weight, (kk, 1), &col, (p, 1), &mut out);
    for (row, &b) in out.chunks_mut(p).zip(bias) {
        row.iter_mut().for_each(|v| *v = *v + b);
    }
    out
}

/// Tape-free convolution on raw buffers, for any [`Real`] element type.
/// `x` is `[c_in, h, w]`, `weight` is `[c_out, c_in, k, k]`; shapes are
/// the caller's responsibility.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_raw<T: Real>(
    x: &[T],
    (c_in, h, w): (usize, usize, usize),
    weight: &[T],
    bias: &[T],
    c_out: usize,
    k: usize,
    pad: usize,
) -> Vec<T> {
    assert_eq!(x.len(), c_in * h * w, "conv2d_raw input length");
    assert_eq!(weight.len(), c_out * c_in * k * k, "conv2d_raw weight length");
    assert_eq!(bias.len(), c_out, "conv2d_raw bias length");
    forward_raw(x, &geometry(c_in, h, w, k, pad), weight, c_out, bias)
}

/// Zero-padded 2-D cross-correlation of a `[C_in, H, W]` input with a
/// `[C_out, C_in, k, k]` kernel plus per-channel bias.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 3 || ws.len() != 4 {
        return Err(dim_err(
            "conv2d",
            format!("expected [C,H,W] input and [O,C,k,k] weight, got {is:?} and {ws:?}"),
        ));
    }
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != is[0] {
        return Err(dim_err(
            "conv2d",
            format!("weight expects {} input channels, input has {}", ws[1], is[0]),
        ));
    }
    if ws[3] != k || k % 2 == 0 {
        return Err(dim_err("conv2d", format!("kernel must be square and odd, got {ws:?}")));
    }
    if bias.shape() != [c_out] {
        return Err(dim_err("conv2d", format!("bias shape {:?} for {c_out} outputs", bias.shape())));
    }
    let (h, w) = (is[1], is[2]);
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(dim_err("conv2d", format!("input {h}x{w} too small for kernel {k}")));
    }
    let g = geometry(is[0], h, w, k, pad);
    let (kk, p) = (g.cols(), g.pixels());
    let out = forward_raw(input.data(), &g, weight.data(), c_out, bias.data());
    let out_shape = vec![c_out, g.out_h, g.out_w];
    let (x, wt) = (input.clone(), weight.clone());
    let needs = (input.requires_grad(), weight.requires_grad(), bias.requires_grad());
    Tensor::from_op("conv2d", out_shape, out, &[input, weight, bias], move |gout| {
        let gx = needs.0.then(|| {
            let mut gcol = vec![0.0f32; kk * p];
            // W^T [kk, c_out] * gout [c_out, p]
            gemm(kk, c_out, p, wt.data(), (1, kk), gout, (p, 1), &mut gcol);
            col2im(&gcol, &g)
        });
        let gw = needs.1.then(|| {
            let col = im2col(x.data(), &g);
            let mut gw = vec![0.0f32; c_out * kk];
            // gout [c_out, p] * col^T [p, kk]
            gemm(c_out, p, kk, gout, (p, 1), &col, (1, p), &mut gw);
            gw
        });
        let gb = needs.2.then(|| {
            gout.chunks(p)
                .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
                .collect()
        });
        vec![gx, gw, gb]
    })
}
