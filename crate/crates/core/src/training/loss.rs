use crate::error::{Error, Result};
use crate::tensor::{self as t, dim_err, Tensor};

/// Which pixel norm a reconstruction loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn from_order(m: u32) -> Result<Self> {
        match m {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            other => Err(Error::Config(format!("loss norm must be 1 or 2, got {other}"))),
        }
    }

    pub fn order(self) -> u32 {
        match self {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

fn mean_norm(op: &'static str, pred: &Tensor, target: &Tensor, norm: Norm) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(dim_err(op, format!("{:?} vs {:?}", pred.shape(), target.shape())).into());
    }
    let d = t::sub(pred, target)?;
    let per = match norm {
        Norm::L1 => t::abs(&d)?,
        Norm::L2 => t::square(&d)?,
    };
    Ok(t::mean(&per)?)
}

/// Mean per-pixel distance between the predicted low-resolution slice and
/// the down-sampled clean target.
pub fn loss_forward(lr_pred: &Tensor, lr_gt: &Tensor, norm: Norm) -> Result<Tensor> {
    mean_norm("loss_forward", lr_pred, lr_gt, norm)
}

/// Mean per-pixel distance between the reconstruction from a resampled
/// latent and the clean image.
pub fn loss_backward(x_rec: &Tensor, x_clean: &Tensor, norm: Norm) -> Result<Tensor> {
    mean_norm("loss_backward", x_rec, x_clean, norm)
}
