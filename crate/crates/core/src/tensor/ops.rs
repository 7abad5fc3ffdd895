use super::{dim_err, Result, Tensor};

/// Output shape plus the repeat periods of each operand. The smaller operand
/// may only differ from the larger by leading size-1 extents.
fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (big, small) = if a.iter().product::<usize>() >= b.iter().product() {
        (a, b)
    } else {
        (b, a)
    };
    if small.len() > big.len() {
        return Err(dim_err(op, format!("cannot broadcast {a:?} with {b:?}")));
    }
    let pad = big.len() - small.len();
    let padded: Vec<usize> = std::iter::repeat(1).take(pad).chain(small.iter().copied()).collect();
    // leading ones, then an exact match of the trailing extents
    let first_match = padded
        .iter()
        .zip(big)
        .position(|(s, g)| s != &1 || g == &1)
        .unwrap_or(big.len());
    let ok = padded[first_match..] == big[first_match..];
    if !ok {
        return Err(dim_err(op, format!("cannot broadcast {a:?} with {b:?}")));
    }
    Ok(big.to_vec())
}

/// Sums `g` into a buffer of length `len`, folding repeats.
fn fold(g: &[f32], len: usize) -> Vec<f32> {
    if g.len() == len {
        return g.to_vec();
    }
    let mut acc = vec![0f64; len];
    for chunk in g.chunks(len) {
        acc.iter_mut().zip(chunk).for_each(|(a, &v)| *a += v as f64);
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn zip_map(a: &Tensor, b: &Tensor, n: usize, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    let (ad, bd) = (a.data(), b.data());
    let (la, lb) = (ad.len(), bd.len());
    if la == n && lb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % la], bd[i % lb])).collect()
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast("add", a.shape(), b.shape())?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x + y);
    let (la, lb) = (a.numel(), b.numel());
    Tensor::from_op("add", shape, data, &[a, b], move |g| {
        vec![Some(fold(g, la)), Some(fold(g, lb))]
    })
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast("sub", a.shape(), b.shape())?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x - y);
    let (la, lb) = (a.numel(), b.numel());
    Tensor::from_op("sub", shape, data, &[a, b], move |g| {
        let neg: Vec<f32> = g.iter().map(|v| -v).collect();
        vec![Some(fold(g, la)), Some(fold(&neg, lb))]
    })
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast("mul", a.shape(), b.shape())?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x * y);
    let (ac, bc) = (a.clone(), b.clone());
    let (ta, tb) = (a.requires_grad(), b.requires_grad());
    Tensor::from_op("mul", shape, data, &[a, b], move |g| {
        let (ad, bd) = (ac.data(), bc.data());
        let ga = ta.then(|| {
            let prod: Vec<f32> = g.iter().enumerate().map(|(i, v)| v * bd[i % bd.len()]).collect();
            fold(&prod, ad.len())
        });
        let gb = tb.then(|| {
            let prod: Vec<f32> = g.iter().enumerate().map(|(i, v)| v * ad[i % ad.len()]).collect();
            fold(&prod, bd.len())
        });
        vec![ga, gb]
    })
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = broadcast("div", a.shape(), b.shape())?;
    let n = shape.iter().product();
    let data = zip_map(a, b, n, |x, y| x / y);
    let (ac, bc) = (a.clone(), b.clone());
    let (ta, tb) = (a.requires_grad(), b.requires_grad());
    Tensor::from_op("div", shape, data, &[a, b], move |g| {
        let (ad, bd) = (ac.data(), bc.data());
        let (la, lb) = (ad.len(), bd.len());
        let ga = ta.then(|| {
            let q: Vec<f32> = g.iter().enumerate().map(|(i, v)| v / bd[i % lb]).collect();
            fold(&q, la)
        });
        let gb = tb.then(|| {
            let q: Vec<f32> = g
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let y = bd[i % lb];
                    -v * ad[i % la] / (y * y)
                })
                .collect();
            fold(&q, lb)
        });
        vec![ga, gb]
    })
}

fn unary(
    op: &'static str,
    a: &Tensor,
    f: impl Fn(f32) -> f32,
    df: impl Fn(f32) -> f32 + Send + Sync + 'static,
) -> Result<Tensor> {
    let data: Vec<f32> = a.data().iter().map(|&x| f(x)).collect();
    let src = a.clone();
    Tensor::from_op(op, a.shape().to_vec(), data, &[a], move |g| {
        let gi = g.iter().zip(src.data()).map(|(gv, &x)| gv * df(x)).collect();
        vec![Some(gi)]
    })
}

pub fn neg(a: &Tensor) -> Result<Tensor> {
    mul_scalar(a, -1.0)
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    unary("exp", a, f32::exp, f32::exp)
}

pub fn tanh(a: &Tensor) -> Result<Tensor> {
    unary("tanh", a, f32::tanh, |x| 1.0 - x.tanh().powi(2))
}

pub fn abs(a: &Tensor) -> Result<Tensor> {
    unary("abs", a, f32::abs, |x| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

pub fn square(a: &Tensor) -> Result<Tensor> {
    unary("square", a, |x| x * x, |x| 2.0 * x)
}

/// `a` where `a >= 0`, `slope * a` otherwise. The derivative at zero is 1.
pub fn leaky_relu(a: &Tensor, slope: f32) -> Result<Tensor> {
    unary(
        "leaky_relu",
        a,
        move |x| if x >= 0.0 { x } else { slope * x },
        move |x| if x >= 0.0 { 1.0 } else { slope },
    )
}

/// Clamp to `[lo, hi]`; gradient passes only inside the interval.
pub fn clamp(a: &Tensor, lo: f32, hi: f32) -> Result<Tensor> {
    unary(
        "clamp",
        a,
        move |x| x.clamp(lo, hi),
        move |x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
    )
}

pub fn add_scalar(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x + s).collect();
    Tensor::from_op("add_scalar", a.shape().to_vec(), data, &[a], |g| vec![Some(g.to_vec())])
}

pub fn mul_scalar(a: &Tensor, s: f32) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * s).collect();
    Tensor::from_op("mul_scalar", a.shape().to_vec(), data, &[a], move |g| {
        vec![Some(g.iter().map(|v| v * s).collect())]
    })
}

/// Sum of all elements, accumulated in f64.
pub fn sum(a: &Tensor) -> Result<Tensor> {
    let s: f64 = a.data().iter().map(|&v| v as f64).sum();
    let n = a.numel();
    Tensor::from_op("sum", Vec::new(), vec![s as f32], &[a], move |g| vec![Some(vec![g[0]; n])])
}

pub fn mean(a: &Tensor) -> Result<Tensor> {
    if a.numel() == 0 {
        return Err(dim_err("mean", "empty tensor"));
    }
    let n = a.numel();
    let s: f64 = a.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op("mean", Vec::new(), vec![(s / n as f64) as f32], &[a], move |g| {
        vec![Some(vec![g[0] / n as f32; n])]
    })
}

pub fn reshape(a: &Tensor, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
    let shape = shape.into();
    if shape.iter().product::<usize>() != a.numel() {
        return Err(dim_err("reshape", format!("{:?} -> {shape:?}", a.shape())));
    }
    Tensor::from_op("reshape", shape, a.data().to_vec(), &[a], |g| vec![Some(g.to_vec())])
}

/// Channels `[start, end)` of a `[C, ...]` tensor.
pub fn slice_channels(a: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let shape = a.shape();
    if shape.is_empty() || start > end || end > shape[0] {
        return Err(dim_err(
            "slice_channels",
            format!("range {start}..{end} out of bounds for {shape:?}"),
        ));
    }
    let plane: usize = shape[1..].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[0] = end - start;
    let data = a.data()[start * plane..end * plane].to_vec();
    let total = a.numel();
    Tensor::from_op("slice_channels", out_shape, data, &[a], move |g| {
        let mut gi = vec![0.0; total];
        gi[start * plane..end * plane].copy_from_slice(g);
        vec![Some(gi)]
    })
}

/// Concatenate `[C_i, ...]` tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| dim_err("concat_channels", "no inputs"))?;
    if first.shape().is_empty() {
        return Err(dim_err("concat_channels", "scalar input"));
    }
    let tail = &first.shape()[1..];
    let mut channels = 0;
    for p in parts {
        if p.shape().is_empty() || &p.shape()[1..] != tail {
            return Err(dim_err(
                "concat_channels",
                format!("{:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        channels += p.shape()[0];
    }
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
    for p in parts {
        data.extend_from_slice(p.data());
    }
    let mut shape = first.shape().to_vec();
    shape[0] = channels;
    let lens: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
    Tensor::from_op("concat_channels", shape, data, parts, move |g| {
        let mut off = 0;
        lens.iter()
            .map(|&l| {
                let s = g[off..off + l].to_vec();
                off += l;
                Some(s)
            })
            .collect()
    })
}
