//! Gradient cases checked against finite differences of the f64
//! reference. Each returns the worst relative error over the checked
//! coordinates.

use invdn::invertible::{haar_forward, InvertibleBlock};
use invdn::model::{InvDnModel, ModelConfig};
use invdn::tensor::{self as t, Tensor};
use invdn::training::{loss_backward, loss_forward, Norm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Vec<f32> {
    uniform(shape.iter().product(), lo, hi, seed)
}

/// Linear read-out weights so that a tensor-valued map becomes a scalar.
fn readout(n: usize, seed: u64) -> Vec<f32> {
    uniform(n, -1.0, 1.0, seed)
}

fn dot(a: &[f64], r: &[f64]) -> f64 {
    a.iter().zip(r).map(|(x, y)| x * y).sum()
}

pub fn conv2d_case() -> GradCheck {
    let (cin, cout, h, w) = (3, 4, 6, 7);
    let x = Tensor::param([cin, h, w], random_tensor(&[cin, h, w], -1.0, 1.0, 1)).unwrap();
    let wt = Tensor::param([cout, cin, 3, 3], random_tensor(&[cout, cin, 3, 3], -0.5, 0.5, 2)).unwrap();
    let b = Tensor::param([cout], random_tensor(&[cout], -0.5, 0.5, 3)).unwrap();
    let r = readout(cout * h * w, 4);
    let y = t::conv2d(&x, &wt, &b, 1).unwrap();
    let loss = t::sum(&t::mul(&y, &Tensor::new([cout, h, w], r.clone()).unwrap()).unwrap()).unwrap();
    loss.backward().unwrap();
    let point = vec![to_f64(x.data()), to_f64(wt.data()), to_f64(b.data())];
    let analytic = vec![to_f64(&x.grad().unwrap()), to_f64(&wt.grad().unwrap()), to_f64(&b.grad().unwrap())];
    let r = to_f64(&r);
    grad_check(&point, &analytic, usize::MAX, 0, |p| {
        (dot(&conv2d(&p[0], cin, h, w, &p[1], &p[2], cout, 3), &r), Kinks::default())
    })
}

pub fn leaky_relu_case() -> GradCheck {
    let n = 64;
    // keep inputs away from the kink at zero
    let raw = uniform(n, 0.05, 1.0, 5);
    let signs = uniform(n, -1.0, 1.0, 6);
    let xs: Vec<f32> = raw.iter().zip(&signs).map(|(v, s)| if *s < 0.0 { -v } else { *v }).collect();
    let x = Tensor::param([n], xs).unwrap();
    let r = readout(n, 7);
    let y = t::leaky_relu(&x, SLOPE as f32).unwrap();
    t::sum(&t::mul(&y, &Tensor::new([n], r.clone()).unwrap()).unwrap()).unwrap().backward().unwrap();
    let r = to_f64(&r);
    grad_check(&[to_f64(x.data())], &[to_f64(&x.grad().unwrap())], usize::MAX, 0, |p| {
        let mut k = Kinks::default();
        let mut v = p[0].clone();
        leaky(&mut v, &mut k);
        (dot(&v, &r), k)
    })
}

pub fn loss_case(norm: Norm) -> GradCheck {
    let shape = [3, 5, 5];
    let target = random_tensor(&shape, 0.0, 1.0, 8);
    // predictions offset from the target so no residual sits near zero
    let offs = uniform(75, 0.02, 0.3, 9);
    let signs = uniform(75, -1.0, 1.0, 10);
    let pred: Vec<f32> = target
        .iter()
        .zip(offs.iter().zip(&signs))
        .map(|(t, (o, s))| if *s < 0.0 { t - o } else { t + o })
        .collect();
    let p = Tensor::param(shape, pred).unwrap();
    let tt = Tensor::new(shape, target.clone()).unwrap();
    let loss = match norm {
        Norm::L1 => loss_backward(&p, &tt, norm).unwrap(),
        Norm::L2 => loss_forward(&p, &tt, norm).unwrap(),
    };
    loss.backward().unwrap();
    let target = to_f64(&target);
    grad_check(&[to_f64(p.data())], &[to_f64(&p.grad().unwrap())], usize::MAX, 0, |q| {
        let mut k = Kinks::default();
        let v = match norm {
            Norm::L1 => l1(&q[0], &target, &mut k),
            Norm::L2 => l2(&q[0], &target),
        };
        (v, k)
    })
}

fn block_params(block: &InvertibleBlock) -> Vec<Tensor> {
    block
        .subnets()
        .iter()
        .flat_map(|(_, s)| s.convs().into_iter().flat_map(|c| [c.weight.clone(), c.bias.clone()]))
        .collect()
}

fn ref_block(split: usize, hidden: usize, params: &[Vec<f64>]) -> RefBlock {
    let dims = [(3 * split, split), (split, 3 * split), (split, 3 * split)];
    let phi = dims
        .iter()
        .enumerate()
        .map(|(i, &(cin, cout))| RefSubnet {
            cin,
            hidden,
            cout,
            convs: (0..3).map(|c| (params[i * 6 + 2 * c].clone(), params[i * 6 + 2 * c + 1].clone())).collect(),
        })
        .collect();
    RefBlock { split, phi }
}

/// Gradients through one coupling block, with respect to its input and
/// every parameter, of a random linear read-out of its output.
pub fn block_case() -> GradCheck {
    let (split, hidden, h, w) = (2, 4, 5, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut block = InvertibleBlock::new(split, hidden, &mut rng);
    for (k, sub) in block.subnets_mut().into_iter().enumerate() {
        for (j, conv) in sub.convs_mut().into_iter().enumerate() {
            let seed = 100 + 10 * k as u64 + j as u64;
            conv.weight = Tensor::param(conv.weight.shape().to_vec(), random_tensor(conv.weight.shape(), -0.3, 0.3, seed)).unwrap();
            conv.bias = Tensor::param(conv.bias.shape().to_vec(), random_tensor(conv.bias.shape(), -0.2, 0.2, seed + 50)).unwrap();
        }
    }
    let c = 4 * split;
    let u = Tensor::param([c, h, w], random_tensor(&[c, h, w], -1.0, 1.0, 12)).unwrap();
    let r = readout(c * h * w, 13);
    let y = block.forward(&u).unwrap();
    t::sum(&t::mul(&y, &Tensor::new([c, h, w], r.clone()).unwrap()).unwrap()).unwrap().backward().unwrap();
    let params = block_params(&block);
    let mut point = vec![to_f64(u.data())];
    point.extend(params.iter().map(|p| to_f64(p.data())));
    let mut analytic = vec![to_f64(&u.grad().unwrap())];
    analytic.extend(params.iter().map(|p| to_f64(&p.grad().unwrap())));

    // the reference must compute the same function before its
    // differences mean anything
    let refb = ref_block(split, hidden, &point[1..]);
    let ry = refb.forward(&point[0], h, w, &mut Kinks::default());
    let dev = ry.iter().zip(y.data()).map(|(a, b)| (a - *b as f64).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-4, "reference block deviates from library by {dev}");

    let r = to_f64(&r);
    grad_check(&point, &analytic, 1500, 14, |p| {
        let mut k = Kinks::default();
        let out = ref_block(split, hidden, &p[1..]).forward(&p[0], h, w, &mut k);
        (dot(&out, &r), k)
    })
}

/// Gradients of the full training objective of a one-scale model with
/// respect to the noisy input and every parameter. The latent sample is
/// held fixed.
pub fn model_case() -> GradCheck {
    let cfg = ModelConfig { num_downscale_blocks: 1, blocks_per_scale: 2, hidden_channels: 4, ..Default::default() };
    let mut model = InvDnModel::new(cfg, 0).unwrap();
    randomize(&mut model, 0.15, 21);
    let (h, w) = (6, 6);
    let noisy = Tensor::param([3, h, w], random_tensor(&[3, h, w], 0.0, 1.0, 22)).unwrap();
    let clean = random_tensor(&[3, h, w], 0.0, 1.0, 23);
    let lr_gt = random_tensor(&[3, h / 2, w / 2], 0.0, 1.0, 24);
    let z = random_tensor(&[9, h / 2, w / 2], -1.0, 1.0, 25);

    let split = model.forward(&noisy).unwrap();
    let lf = loss_forward(&split.lr, &Tensor::new([3, h / 2, w / 2], lr_gt.clone()).unwrap(), Norm::L2).unwrap();
    let rec = model.inverse(&split.lr, &Tensor::new([9, h / 2, w / 2], z.clone()).unwrap()).unwrap();
    let lb = loss_backward(&rec, &Tensor::new([3, h, w], clean.clone()).unwrap(), Norm::L1).unwrap();
    t::add(&lf, &lb).unwrap().backward().unwrap();

    let mut point = vec![to_f64(noisy.data())];
    point.extend(param_values(&model));
    let mut analytic = vec![to_f64(&noisy.grad().unwrap())];
    analytic.extend(param_grads(&model));

    let (clean, lr_gt, z) = (to_f64(&clean), to_f64(&lr_gt), to_f64(&z));
    let full = model.forward_full(&noisy).unwrap();
    let rm = RefModel::from_params(&model, &point[1..]);
    let ru = rm.forward(&point[0], h, w, &mut Kinks::default());
    let dev = ru.iter().zip(full.data()).map(|(a, b)| (a - *b as f64).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-4, "reference model deviates from library by {dev}");
    let haar_dev = max_abs_diff(
        &haar_forward(&noisy).unwrap().data().to_vec(),
        &haar(&point[0], 3, h, w).iter().map(|&v| v as f32).collect::<Vec<_>>(),
    );
    assert!(haar_dev < 1e-6);

    let n_lr = 3 * (h / 2) * (w / 2);
    grad_check(&point, &analytic, 1500, 26, |p| {
        let rm = RefModel::from_params(&model, &p[1..]);
        let mut k = Kinks::default();
        let u = rm.forward(&p[0], h, w, &mut k);
        let lf = l2(&u[..n_lr], &lr_gt);
        let mut v = u[..n_lr].to_vec();
        v.extend_from_slice(&z);
        let rec = rm.inverse(&v, h / 2, w / 2, &mut k);
        let lb = l1(&rec, &clean, &mut k);
        (lf + lb, k)
    })
}
