use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ADAM_EPS: f32 = 1e-8;

/// First/second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zeroed moments shaped like `sizes`.
    pub fn new(sizes: &[usize], betas: (f32, f32)) -> Self {
        Self {
            beta1: betas.0,
            beta2: betas.1,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_params(params: &[&mut Tensor], betas: (f32, f32)) -> Self {
        let sizes: Vec<usize> = params.iter().map(|p| p.numel()).collect();
        Self::new(&sizes, betas)
    }

    fn check(&self, params: usize, grads: &[Vec<f32>]) -> Result<()> {
        if self.m.len() != params || grads.len() != params {
            return Err(Error::Config(format!(
                "adam state has {} buffers for {params} parameters and {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        Ok(())
    }

    /// One bias-corrected Adam update of raw parameter buffers.
    pub fn update(&mut self, params: &mut [Vec<f32>], grads: &[Vec<f32>], lr: f32) -> Result<()> {
        self.check(params.len(), grads)?;
        self.step += 1;
        let (b1, b2) = (self.beta1 as f64, self.beta2 as f64);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || m.len() != p.len() {
                return Err(Error::Config("adam buffer length mismatch".into()));
            }
            for i in 0..p.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p[i] -= (lr as f64 * m_hat / (v_hat.sqrt() + ADAM_EPS as f64)) as f32;
            }
        }
        Ok(())
    }

    /// Update parameter tensors in place by swapping in fresh leaves.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f32>], lr: f32) -> Result<()> {
        let mut raw: Vec<Vec<f32>> = params.iter().map(|p| p.data().to_vec()).collect();
        self.update(&mut raw, grads, lr)?;
        for (p, v) in params.iter_mut().zip(raw) {
            **p = Tensor::param(p.shape().to_vec(), v)?;
        }
        Ok(())
    }
}

/// Learning rate halved every `halve_every` iterations.
pub fn learning_rate(lr0: f32, halve_every: u64, iteration: u64) -> f32 {
    if halve_every == 0 {
        return lr0;
    }
    let halvings = (iteration / halve_every).min(1000) as i32;
    lr0 * 0.5f32.powi(halvings)
}

/// Rescale gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f32>], max_norm: f32) -> f32 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt() as f32;
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_square() {
        let mut st = AdamState::new(&[1], (0.9, 0.999));
        let mut w = vec![vec![1.0f32]];
        let g = vec![vec![2.0 * w[0][0]]];
        st.update(&mut w, &g, 0.1).unwrap();
        assert!((w[0][0] - 0.9).abs() < 1e-6);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_no_change() {
        let mut st = AdamState::new(&[3], (0.9, 0.999));
        let mut w = vec![vec![0.5, -1.0, 2.0]];
        st.update(&mut w, &[vec![0.0; 3]], 0.1).unwrap();
        assert_eq!(w[0], vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn constant_gradient_is_sign_update() {
        let mut st = AdamState::new(&[1], (0.9, 0.999));
        let mut w = vec![vec![0.0f32]];
        st.update(&mut w, &[vec![1.0]], 0.01).unwrap();
        assert!((w[0][0] + 0.01).abs() < 1e-7);
        st.update(&mut w, &[vec![1.0]], 0.01).unwrap();
        assert!((w[0][0] + 0.02).abs() < 1e-7);
    }

    #[test]
    fn mismatched_buffers() {
        let mut st = AdamState::new(&[2], (0.9, 0.999));
        assert!(st.update(&mut [vec![0.0; 2], vec![0.0]], &[vec![0.0; 2]], 0.1).is_err());
    }

    #[test]
    fn schedule_halves() {
        assert_eq!(learning_rate(2e-4, 50_000, 0), 2e-4);
        assert_eq!(learning_rate(2e-4, 50_000, 49_999), 2e-4);
        assert_eq!(learning_rate(2e-4, 50_000, 50_000), 1e-4);
        assert_eq!(learning_rate(2e-4, 50_000, 150_000), 2.5e-5);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0, 4.0]];
        assert_eq!(clip_grad_norm(&mut g, 10.0), 5.0);
        assert_eq!(g[0], vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-6 && (g[0][1] - 0.8).abs() < 1e-6);
    }
}
