//! Shared test helpers: an f64 reference implementation of the network
//! written directly from the layer definitions, and finite-difference
//! gradient checking on top of it.
#![allow(dead_code)]

pub mod gradients;

use invdn::model::InvDnModel;
use invdn::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const SLOPE: f64 = 0.2;
pub const LOG_SCALE_BOUND: f64 = 1.0;

/// Signs of every non-smooth point visited during a forward pass. Two
/// evaluations with the same record lie on the same smooth piece.
#[derive(Default, Debug, Clone, PartialEq)]
pub struct Kinks(pub Vec<bool>);

pub fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Zero-padded "same" convolution, weight `[cout, cin, k, k]`.
pub fn conv2d(x: &[f64], cin: usize, h: usize, w: usize, wt: &[f64], b: &[f64], cout: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut s = b[o];
                for i in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - r;
                            let sx = xx as isize + kx as isize - r;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            s += wt[((o * cin + i) * k + ky) * k + kx] * x[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = s;
            }
        }
    }
    out
}

pub fn leaky(x: &mut [f64], kinks: &mut Kinks) {
    for v in x.iter_mut() {
        kinks.0.push(*v > 0.0);
        if *v < 0.0 {
            *v *= SLOPE;
        }
    }
}

/// 2x2 block transform `H = 1/2 [[1,1,1,1],[1,-1,1,-1],[1,1,-1,-1],[1,-1,-1,1]]`
/// on (top-left, top-right, bottom-left, bottom-right), bands stacked
/// LL, LH, HL, HH with all channels of a band together.
pub const HAAR: [[f64; 4]; 4] =
    [[0.5, 0.5, 0.5, 0.5], [0.5, -0.5, 0.5, -0.5], [0.5, 0.5, -0.5, -0.5], [0.5, -0.5, -0.5, 0.5]];

pub fn haar(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut y = vec![0.0; 4 * c * oh * ow];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let px = [
                    x[(ch * h + 2 * i) * w + 2 * j],
                    x[(ch * h + 2 * i) * w + 2 * j + 1],
                    x[(ch * h + 2 * i + 1) * w + 2 * j],
                    x[(ch * h + 2 * i + 1) * w + 2 * j + 1],
                ];
                for (band, row) in HAAR.iter().enumerate() {
                    y[((band * c + ch) * oh + i) * ow + j] = (0..4).map(|q| row[q] * px[q]).sum();
                }
            }
        }
    }
    y
}

/// Inverse of [`haar`] via the transpose of `HAAR`.
pub fn haar_inv(y: &[f64], c: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (2 * oh, 2 * ow);
    let mut x = vec![0.0; c * h * w];
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let bands: Vec<f64> = (0..4).map(|b| y[((b * c + ch) * oh + i) * ow + j]).collect();
                let pos = [(2 * i, 2 * j), (2 * i, 2 * j + 1), (2 * i + 1, 2 * j), (2 * i + 1, 2 * j + 1)];
                for (q, &(py, px)) in pos.iter().enumerate() {
                    x[(ch * h + py) * w + px] = (0..4).map(|b| HAAR[b][q] * bands[b]).sum();
                }
            }
        }
    }
    x
}

#[derive(Clone, Debug)]
pub struct RefSubnet {
    pub cin: usize,
    pub hidden: usize,
    pub cout: usize,
    /// conv_in, conv_hidden, conv_out as (weight, bias)
    pub convs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl RefSubnet {
    pub fn forward(&self, x: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let (w0, b0) = &self.convs[0];
        let (w1, b1) = &self.convs[1];
        let (w2, b2) = &self.convs[2];
        let mut a = conv2d(x, self.cin, h, w, w0, b0, self.hidden, 3);
        leaky(&mut a, kinks);
        let mut a = conv2d(&a, self.hidden, h, w, w1, b1, self.hidden, 3);
        leaky(&mut a, kinks);
        let mut out = conv2d(&a, self.hidden, h, w, w2, b2, self.cout, 3);
        if self.cin == self.cout {
            out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RefBlock {
    pub split: usize,
    pub phi: Vec<RefSubnet>,
}

impl RefBlock {
    fn log_scale(&self, a: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let mut s = self.phi[1].forward(a, h, w, kinks);
        for v in s.iter_mut() {
            *v = LOG_SCALE_BOUND * (*v / LOG_SCALE_BOUND).tanh();
        }
        s
    }

    pub fn forward(&self, u: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let n = self.split * h * w;
        let (a, b) = u.split_at(n);
        let p2 = self.phi[0].forward(b, h, w, kinks);
        let a2: Vec<f64> = a.iter().zip(&p2).map(|(x, y)| x + y).collect();
        let s = self.log_scale(&a2, h, w, kinks);
        let p4 = self.phi[2].forward(&a2, h, w, kinks);
        let mut out = a2;
        out.extend(b.iter().zip(&s).zip(&p4).map(|((bv, sv), pv)| bv * sv.exp() + pv));
        out
    }

    pub fn inverse(&self, u: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let n = self.split * h * w;
        let (a2, b2) = u.split_at(n);
        let s = self.log_scale(a2, h, w, kinks);
        let p4 = self.phi[2].forward(a2, h, w, kinks);
        let b: Vec<f64> = b2.iter().zip(&s).zip(&p4).map(|((bv, sv), pv)| (bv - pv) / sv.exp()).collect();
        let p2 = self.phi[0].forward(&b, h, w, kinks);
        let mut out: Vec<f64> = a2.iter().zip(&p2).map(|(x, y)| x - y).collect();
        out.extend(b);
        out
    }
}

/// Haar-only reference model assembled from a flat parameter list in the
/// library's parameter order.
#[derive(Clone, Debug)]
pub struct RefModel {
    pub input_channels: usize,
    pub scales: Vec<Vec<RefBlock>>,
}

impl RefModel {
    pub fn from_params(model: &InvDnModel, params: &[Vec<f64>]) -> Self {
        let cfg = model.config();
        let mut it = params.iter();
        let mut scales = Vec::new();
        for s in 0..cfg.num_downscale_blocks {
            let split = cfg.split_low(s);
            let mut blocks = Vec::new();
            for _ in 0..cfg.blocks_per_scale {
                let dims = [(3 * split, split), (split, 3 * split), (split, 3 * split)];
                let phi = dims
                    .iter()
                    .map(|&(cin, cout)| RefSubnet {
                        cin,
                        hidden: cfg.hidden_channels,
                        cout,
                        convs: (0..3)
                            .map(|_| (it.next().unwrap().clone(), it.next().unwrap().clone()))
                            .collect(),
                    })
                    .collect();
                blocks.push(RefBlock { split, phi });
            }
            scales.push(blocks);
        }
        assert!(it.next().is_none());
        Self { input_channels: cfg.input_channels, scales }
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let (mut u, mut c, mut h, mut w) = (x.to_vec(), self.input_channels, h, w);
        for blocks in &self.scales {
            u = haar(&u, c, h, w);
            c *= 4;
            h /= 2;
            w /= 2;
            for b in blocks {
                u = b.forward(&u, h, w, kinks);
            }
        }
        u
    }

    pub fn inverse(&self, u: &[f64], h: usize, w: usize, kinks: &mut Kinks) -> Vec<f64> {
        let (mut x, mut h, mut w) = (u.to_vec(), h, w);
        let mut c = self.input_channels * 4usize.pow(self.scales.len() as u32);
        for blocks in self.scales.iter().rev() {
            for b in blocks.iter().rev() {
                x = b.inverse(&x, h, w, kinks);
            }
            c /= 4;
            x = haar_inv(&x, c, h, w);
            h *= 2;
            w *= 2;
        }
        x
    }
}

pub fn l1(a: &[f64], b: &[f64], kinks: &mut Kinks) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            kinks.0.push(x > y);
            (x - y).abs()
        })
        .sum::<f64>()
        / a.len() as f64
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Relative error of `a` against `b`, with errors on entries far below
/// the gradient's scale measured against `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `eval` at every coordinate of `point` (or a
/// seeded subset of at most `max_coords`), compared with `analytic`.
/// Coordinates whose perturbation crosses a non-smooth point are skipped.
pub fn grad_check(
    point: &[Vec<f64>],
    analytic: &[Vec<f64>],
    max_coords: usize,
    seed: u64,
    mut eval: impl FnMut(&[Vec<f64>]) -> (f64, Kinks),
) -> GradCheck {
    let mut coords: Vec<(usize, usize)> =
        point.iter().enumerate().flat_map(|(t, v)| (0..v.len()).map(move |i| (t, i))).collect();
    if coords.len() > max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..max_coords {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }
    let (_, base) = eval(point);
    let mut p = point.to_vec();
    let mut fd = Vec::new();
    let mut skipped = 0;
    for &(t, i) in &coords {
        let orig = p[t][i];
        p[t][i] = orig + FD_STEP;
        let (fp, kp) = eval(&p);
        p[t][i] = orig - FD_STEP;
        let (fm, km) = eval(&p);
        p[t][i] = orig;
        if kp != base || km != base {
            skipped += 1;
            continue;
        }
        fd.push(((fp - fm) / (2.0 * FD_STEP), analytic[t][i]));
    }
    let scale = fd.iter().map(|(f, _)| f.abs()).fold(0.0, f64::max);
    let floor = (1e-2 * scale).max(1e-10);
    let max_rel_err = fd.iter().map(|&(f, a)| rel_err(a, f, floor)).fold(0.0, f64::max);
    GradCheck { max_rel_err, checked: fd.len(), skipped }
}

pub fn param_values(model: &InvDnModel) -> Vec<Vec<f64>> {
    model.parameters().iter().map(|(_, t)| to_f64(t.data())).collect()
}

pub fn param_grads(model: &InvDnModel) -> Vec<Vec<f64>> {
    model
        .parameters()
        .iter()
        .map(|(_, t)| t.grad().map(|g| to_f64(&g)).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect()
}

/// Overwrite every parameter with `N(0, std)` draws.
pub fn randomize(model: &mut InvDnModel, std: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.parameters_mut() {
        let v: Vec<f32> = Tensor::randn(p.shape().to_vec(), &mut rng).data().iter().map(|x| x * std).collect();
        *p = Tensor::param(p.shape().to_vec(), v).unwrap();
    }
}

/// Random weights with std `gain / sqrt(fan_in)`, so every subnet has
/// roughly the same gain whatever its width; biases get `0.1 * gain`. This
/// includes the final convolutions, which are zero at initialisation.
pub fn randomize_scaled(model: &mut InvDnModel, gain: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.parameters_mut() {
        let shape = p.shape().to_vec();
        let std = match shape.as_slice() {
            [_, rest @ ..] if !rest.is_empty() => gain / (rest.iter().product::<usize>() as f32).sqrt(),
            _ => 0.1 * gain,
        };
        let v: Vec<f32> = Tensor::randn(shape.clone(), &mut rng).data().iter().map(|x| x * std).collect();
        *p = Tensor::param(shape, v).unwrap();
    }
}

pub fn uniform(n: usize, lo: f32, hi: f32, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}
