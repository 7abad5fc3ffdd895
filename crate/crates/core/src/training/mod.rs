//! Dual-objective training: the low-resolution slice of the forward output
//! is pulled towards the bicubic-reduced clean image, and the inverse run on
//! that slice plus a fresh Gaussian latent is pulled towards the clean
//! image. Both terms are summed and minimised with Adam.

mod adam;
mod bicubic;
mod data;
mod loss;

pub use adam::{clip_grad_norm, learning_rate, AdamState, ADAM_EPS};
pub use bicubic::{bicubic_downsample, cubic};
pub use data::{
    augment, open_dataset, procedural_texture, Augment, NoiseModel, PairSource, PairedSource,
    SyntheticSource, TrainPair,
};
pub use loss::{loss_backward, loss_forward, Norm};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::InvDnModel;
use crate::tensor::{self as t, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f32,
    pub betas: (f32, f32),
    pub batch_size: usize,
    pub patch: usize,
    pub lr_halve_every: u64,
    pub m_forw: Norm,
    pub m_back: Norm,
    /// `(w_forw, w_back)`
    pub loss_weights: (f32, f32),
    pub grad_clip: f32,
    pub noise: NoiseModel,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            betas: (0.9, 0.999),
            batch_size: 14,
            patch: 144,
            lr_halve_every: 50_000,
            m_forw: Norm::L2,
            m_back: Norm::L1,
            loss_weights: (1.0, 1.0),
            grad_clip: 10.0,
            noise: NoiseModel::default(),
            seed: 0,
            checkpoint_every: 1000,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, scale_factor: usize) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patch == 0 || self.patch % scale_factor != 0 {
            return Err(Error::Config(format!(
                "patch {} must be a positive multiple of {scale_factor}",
                self.patch
            )));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        let (wf, wb) = self.loss_weights;
        if wf < 0.0 || wb < 0.0 || wf + wb <= 0.0 {
            return Err(Error::Config(format!("invalid loss weights {:?}", self.loss_weights)));
        }
        if self.noise.sigma_min < 0.0 || self.noise.sigma_max < self.noise.sigma_min {
            return Err(Error::Config("noise sigma range is invalid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub iteration: u64,
    pub loss_forw: f32,
    pub loss_back: f32,
    pub total: f32,
    pub grad_norm: f32,
    pub lr: f32,
}

/// Deterministic generator for a given seed, purpose and iteration.
pub fn stream_rng(seed: u64, purpose: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(iteration);
    rng
}

const STREAM_LATENT: u64 = 1;
const STREAM_DATA: u64 = 2;

fn training_error(iteration: u64, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op }) => Error::Training {
            iteration,
            msg: format!("non-finite value produced by {op}"),
        },
        other => other,
    }
}

/// One optimisation step over `batch`. Gradients of each item are
/// accumulated, clipped to the configured global norm, and applied with
/// Adam at the scheduled learning rate.
pub fn train_step(
    model: &mut InvDnModel,
    batch: &[TrainPair],
    cfg: &TrainConfig,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
    iteration: u64,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let factor = model.config().scale_factor();
    let (wf, wb) = cfg.loss_weights;
    let scale = 1.0 / batch.len() as f32;
    let (mut sum_f, mut sum_b) = (0f64, 0f64);
    model.zero_grad();
    for pair in batch {
        let clean = pair.clean.to_tensor();
        let lr_gt = bicubic_downsample(&pair.clean, factor)?.to_tensor();
        let split = model
            .forward(&pair.noisy.to_tensor())
            .map_err(|e| training_error(iteration, e))?;
        let lf = loss_forward(&split.lr, &lr_gt, cfg.m_forw)?;
        let z_hf = Tensor::randn(split.z.shape().to_vec(), rng);
        let back = |lr: &Tensor| -> Result<Tensor> {
            let x_rec = model.inverse(lr, &z_hf)?;
            loss_backward(&x_rec, &clean, cfg.m_back)
        };
        let lb = if wb > 0.0 {
            back(&split.lr)
        } else {
            t::no_grad(|| back(&split.lr.detach()))
        }
        .map_err(|e| training_error(iteration, e))?;
        let (vf, vb) = (lf.item()?, lb.item()?);
        if !vf.is_finite() || !vb.is_finite() {
            return Err(Error::Training {
                iteration,
                msg: format!("non-finite loss (forward {vf}, backward {vb})"),
            });
        }
        sum_f += vf as f64;
        sum_b += vb as f64;
        let mut total: Option<Tensor> = None;
        for (w, l) in [(wf, &lf), (wb, &lb)] {
            if w > 0.0 && l.requires_grad() {
                let term = t::mul_scalar(l, w * scale)?;
                total = Some(match total {
                    Some(acc) => t::add(&acc, &term)?,
                    None => term,
                });
            }
        }
        if let Some(total) = total {
            total.backward().map_err(|e| training_error(iteration, e.into()))?;
        }
    }
    let mut grads: Vec<Vec<f32>> = model
        .parameters()
        .iter()
        .map(|(_, p)| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::Training { iteration, msg: "non-finite gradient norm".into() });
    }
    let lr = learning_rate(cfg.lr0, cfg.lr_halve_every, iteration);
    adam.step(&mut model.parameters_mut(), &grads, lr)?;
    let n = batch.len() as f64;
    let (loss_forw, loss_back) = ((sum_f / n) as f32, (sum_b / n) as f32);
    Ok(StepStats {
        iteration,
        loss_forw,
        loss_back,
        total: wf * loss_forw + wb * loss_back,
        grad_norm,
        lr,
    })
}

/// Owns the model, optimiser state and iteration counter of a run.
pub struct Trainer {
    pub model: InvDnModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(mut model: InvDnModel, config: TrainConfig) -> Result<Self> {
        config.validate(model.config().scale_factor())?;
        let adam = AdamState::for_params(&model.parameters_mut(), config.betas);
        Ok(Self { model, adam, config, iteration: 0 })
    }

    /// Resume from saved state.
    pub fn resume(model: InvDnModel, adam: AdamState, config: TrainConfig, iteration: u64) -> Result<Self> {
        config.validate(model.config().scale_factor())?;
        let n = model.parameters().len();
        if adam.m.len() != n || adam.v.len() != n {
            return Err(Error::ConfigMismatch(format!(
                "optimizer state has {} buffers, model has {n} parameters",
                adam.m.len()
            )));
        }
        Ok(Self { model, adam, config, iteration })
    }

    pub fn sample_batch(&self, source: &mut dyn PairSource) -> Result<Vec<TrainPair>> {
        let mut rng = stream_rng(self.config.seed, STREAM_DATA, self.iteration);
        (0..self.config.batch_size)
            .map(|_| source.sample(self.config.patch, &mut rng))
            .collect()
    }

    pub fn step(&mut self, batch: &[TrainPair]) -> Result<StepStats> {
        let mut rng = stream_rng(self.config.seed, STREAM_LATENT, self.iteration);
        let stats = train_step(&mut self.model, batch, &self.config, &mut self.adam, &mut rng, self.iteration)?;
        self.iteration += 1;
        Ok(stats)
    }

    /// Run `iters` steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        source: &mut dyn PairSource,
        iters: u64,
        mut on_step: impl FnMut(&Trainer, &StepStats) -> Result<()>,
    ) -> Result<()> {
        for _ in 0..iters {
            let batch = self.sample_batch(source)?;
            let stats = self.step(&batch)?;
            on_step(self, &stats)?;
        }
        Ok(())
    }
}
