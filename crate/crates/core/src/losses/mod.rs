//! Distillation losses. Every loss returns its value together with the
//! gradient with respect to the student input.
//!
//! CKA-based losses use `1 − S_CKA`, so they are bounded in `[0, 1]` (before
//! weighting) and vanish when student and teacher representations align.

mod kd;
mod mimic;
mod patch;
mod rcka;

pub use kd::{kd_kl_loss, log_softmax, softmax};
pub use mimic::{mimic_mse_loss, MimicReport};
pub use patch::{
    patchify, pcka_loss, pcka_loss_with, unpatchify, AveragingDim, PatchConfig, PatchTensor,
    PckaReport,
};
pub use rcka::{fcka_loss, inter_lcka_loss, intra_lcka_loss, rcka_total};

use crate::error::{Error, Result};

/// Scalar loss with the gradient w.r.t. the student input and a breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport<G> {
    pub value: f64,
    pub grad: G,
    pub components: Vec<(&'static str, f64)>,
}

impl<G> LossReport<G> {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, v)| v)
    }
}

/// Loss weights: `alpha` on feature terms, `beta` on logit terms, `gamma` on
/// PCKA and `tau` the softmax temperature for vanilla KD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 5.0,
            beta: 5.0,
            gamma: 10.0,
            tau: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.tau];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tau must be > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// `1 − s`, floored at zero against round-off just above one.
#[inline]
pub(crate) fn dissimilarity(s: f64) -> f64 {
    (1.0 - s).max(0.0)
}
