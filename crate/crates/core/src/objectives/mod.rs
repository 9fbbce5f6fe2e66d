//! Training objectives with exact gradients.
//!
//! Off-policy: SFT (token NLL on expert data) and KD (forward KL
//! `teacher || student` on expert prefixes). On-policy: GRPO (clipped
//! importance-ratio surrogate with group-normalised advantages), OPD
//! (reverse KL `student || teacher` on sampled prefixes) and dGRPO (GRPO
//! minus `beta` times the OPD term).
//!
//! Every objective returns an [`ObjectiveResult`] whose `grad` is the
//! gradient of `value`. GRPO and dGRPO report an objective to maximise, the
//! others a loss to minimise; [`ObjectiveResult::descent_grad`] always gives
//! the gradient of the quantity the trainer minimises.

mod advantages;
pub mod gradcheck;
mod offpolicy;
mod onpolicy;

pub use advantages::{group_advantages, GroupRollout, ZERO_STD};
pub use gradcheck::{finite_diff_check, FiniteDiff, GradCheckReport, Probe};
pub use offpolicy::{kd_loss, sft_loss};
pub use onpolicy::{clipped_surrogate, dgrpo_objective, grpo_objective, opd_loss, token_reverse_kl};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `value` is an objective to maximise.
    Objective,
    /// `value` is a loss to minimise.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub convention: Convention,
    /// Share of token positions with ratio outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    /// Length-normalised mean per-token KL to the teacher, when one is used.
    pub mean_kl: Option<f64>,
    pub tokens: usize,
}

impl Diagnostics {
    fn loss(tokens: usize) -> Self {
        Self {
            convention: Convention::Loss,
            clip_fraction: 0.0,
            mean_ratio: 1.0,
            mean_kl: None,
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveResult {
    pub value: f64,
    pub grad: Vec<f64>,
    pub diagnostics: Diagnostics,
}

impl ObjectiveResult {
    /// The minimised quantity.
    pub fn loss(&self) -> f64 {
        match self.diagnostics.convention {
            Convention::Loss => self.value,
            Convention::Objective => -self.value,
        }
    }

    /// Gradient of [`ObjectiveResult::loss`].
    pub fn descent_grad(&self) -> Vec<f64> {
        match self.diagnostics.convention {
            Convention::Loss => self.grad.clone(),
            Convention::Objective => self.grad.iter().map(|g| -g).collect(),
        }
    }
}

/// Mean of several results of the same objective, e.g. one per prompt
/// group. Ratio and clip statistics are token-weighted.
pub fn average_results(mut results: Vec<ObjectiveResult>) -> crate::Result<ObjectiveResult> {
    match results.len() {
        0 => return Err(crate::Error::input("no objective results to average")),
        1 => return Ok(results.pop().expect("one result")),
        _ => {}
    }
    let n = results.len() as f64;
    let tokens: usize = results.iter().map(|r| r.diagnostics.tokens).sum();
    let tw = tokens.max(1) as f64;
    let mut grad = vec![0.0; results[0].grad.len()];
    for r in &results {
        for (g, x) in grad.iter_mut().zip(&r.grad) {
            *g += x / n;
        }
    }
    let kls: Vec<f64> = results.iter().filter_map(|r| r.diagnostics.mean_kl).collect();
    let diagnostics = Diagnostics {
        convention: results[0].diagnostics.convention,
        clip_fraction: results.iter().map(|r| r.diagnostics.clip_fraction * r.diagnostics.tokens as f64).sum::<f64>() / tw,
        mean_ratio: results.iter().map(|r| r.diagnostics.mean_ratio * r.diagnostics.tokens as f64).sum::<f64>() / tw,
        mean_kl: (!kls.is_empty()).then(|| kls.iter().sum::<f64>() / kls.len() as f64),
        tokens,
    };
    Ok(ObjectiveResult {
        value: results.iter().map(|r| r.value).sum::<f64>() / n,
        grad,
        diagnostics,
    })
}
