//! Differentiable autoregressive policies.
//!
//! A [`Policy`] maps a [`State`] to next-token logits and can back-propagate
//! logit coefficients into its flat parameter vector. Everything else here
//! (log-probabilities, sampling, gradient accumulation) is written once on
//! top of that interface.

pub mod categorical;
pub mod checkpoint;
pub mod features;
mod models;
pub mod teacher;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{FeatureConfig, FeatureExtractor};
pub use models::{LinearSoftmax, TabularPolicy};
pub use teacher::{make_oracle_teacher, OracleTeacher, Teacher, TeacherPolicy};

use crate::error::{Error, Result};
use crate::mdp::{State, Token, Vocabulary};
use crate::rng::LabRng;
use categorical::{argmax, log_softmax, logit_coefficients};

pub trait Policy: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Unnormalised next-token scores at `state`.
    fn logits(&self, state: State<'_>) -> Vec<f64>;

    fn params(&self) -> &[f64];

    /// `grad += d(sum_b dlogits[b] * z_b(state)) / d theta`.
    fn backprop_logits(&self, state: State<'_>, dlogits: &[f64], grad: &mut [f64]);

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Normalised log-probabilities `log pi(. | state)`.
pub fn log_probs<P: Policy + ?Sized>(policy: &P, state: State<'_>) -> Result<Vec<f64>> {
    log_softmax(&policy.logits(state))
}

pub fn log_prob<P: Policy + ?Sized>(policy: &P, state: State<'_>, token: Token) -> Result<f64> {
    let v = policy.vocab().size();
    if token as usize >= v {
        return Err(Error::input(format!("token {token} out of vocabulary of size {v}")));
    }
    Ok(log_probs(policy, state)?[token as usize])
}

/// `grad += sum_a w[a] * grad log pi(a | state)`.
pub fn accumulate_grad<P: Policy + ?Sized>(
    policy: &P,
    state: State<'_>,
    weights: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(());
    }
    let logp = log_probs(policy, state)?;
    accumulate_grad_at(policy, state, &logp, weights, grad);
    Ok(())
}

/// As [`accumulate_grad`] with the log-probabilities at `state` supplied.
pub fn accumulate_grad_at<P: Policy + ?Sized>(
    policy: &P,
    state: State<'_>,
    logp: &[f64],
    weights: &[f64],
    grad: &mut [f64],
) {
    if weights.iter().all(|&w| w == 0.0) {
        return;
    }
    let dz = logit_coefficients(logp, weights);
    policy.backprop_logits(state, &dz, grad);
}

/// Decoding knobs. Training rollouts use [`DecodeConfig::training`]; the
/// truncation options are meant for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub max_new_tokens: usize,
}

impl DecodeConfig {
    /// Untruncated temperature-1 sampling.
    pub fn training(max_new_tokens: usize) -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
            top_p: None,
            max_new_tokens,
        }
    }

    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            top_k: Some(1),
            ..Self::training(max_new_tokens)
        }
    }

    /// Temperature 0.6, top-p 0.95, top-k 20.
    pub fn stochastic_eval(max_new_tokens: usize) -> Self {
        Self {
            temperature: 0.6,
            top_k: Some(20),
            top_p: Some(0.95),
            max_new_tokens,
        }
    }

    pub fn is_untransformed(&self) -> bool {
        self.temperature == 1.0 && self.top_k.is_none() && self.top_p.is_none()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::input(format!("temperature {} must be > 0", self.temperature)));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > vocab_size {
                return Err(Error::input(format!("top_k {k} must be in [1, {vocab_size}]")));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::input(format!("top_p {p} must be in (0, 1]")));
            }
        }
        if self.max_new_tokens == 0 {
            return Err(Error::input("max_new_tokens must be >= 1"));
        }
        Ok(())
    }
}

/// Log-probabilities of the temperature/top-k/top-p transformed
/// distribution. Removed tokens get `-inf`; the argmax always survives.
pub fn transformed_log_probs(logits: &[f64], decode: &DecodeConfig) -> Result<Vec<f64>> {
    if decode.is_untransformed() {
        return log_softmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|z| z / decode.temperature).collect();
    let lp = log_softmax(&scaled)?;
    let mut order: Vec<usize> = (0..lp.len()).collect();
    order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    let mut keep = order.len();
    if let Some(k) = decode.top_k {
        keep = keep.min(k);
    }
    if let Some(p) = decode.top_p {
        let mut cum = 0.0;
        for (i, &a) in order.iter().enumerate().take(keep) {
            cum += lp[a].exp();
            if cum >= p {
                keep = i + 1;
                break;
            }
        }
    }
    let keep = keep.max(1);
    if keep == lp.len() {
        return Ok(lp);
    }
    let kept = &order[..keep];
    let max = lp[kept[0]];
    let lse = kept.iter().map(|&a| (lp[a] - max).exp()).sum::<f64>().ln() + max;
    let mut out = vec![f64::NEG_INFINITY; lp.len()];
    for &a in kept {
        out[a] = lp[a] - lse;
    }
    Ok(out)
}

/// Draw one token; returns it with its log-probability under the
/// distribution it was actually drawn from.
pub fn sample_token<P: Policy + ?Sized>(
    policy: &P,
    state: State<'_>,
    decode: &DecodeConfig,
    rng: &mut LabRng,
) -> Result<(Token, f64)> {
    sample_from_logits(&policy.logits(state), decode, rng)
}

/// Draw one token from `logits` under `decode`.
pub fn sample_from_logits(logits: &[f64], decode: &DecodeConfig, rng: &mut LabRng) -> Result<(Token, f64)> {
    let lp = transformed_log_probs(logits, decode)?;
    let support = lp.iter().filter(|l| **l > f64::NEG_INFINITY).count();
    if support == 1 {
        let a = argmax(&lp);
        return Ok((a as Token, lp[a]));
    }
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    let mut last = 0;
    for (a, &l) in lp.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        cum += l.exp();
        last = a;
        if u < cum {
            return Ok((a as Token, l));
        }
    }
    Ok((last as Token, lp[last]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Linear,
    Tabular,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "tabular" => Ok(Self::Tabular),
            _ => Err(Error::config(format!("unknown policy kind `{s}` (linear|tabular)"))),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::Tabular => "tabular",
        })
    }
}

/// The concrete policies the trainer works with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyModel {
    Linear(LinearSoftmax),
    Tabular(TabularPolicy),
}

impl PolicyModel {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Self::Linear(_) => PolicyKind::Linear,
            Self::Tabular(_) => PolicyKind::Tabular,
        }
    }

    /// Freeze a copy of the current parameters.
    pub fn snapshot(&self) -> Frozen {
        Frozen(Arc::new(self.clone()))
    }

    /// Same architecture and parameter layout.
    pub fn same_shape(&self, other: &PolicyModel) -> bool {
        match (self, other) {
            (Self::Linear(a), Self::Linear(b)) => a.features() == b.features(),
            (Self::Tabular(a), Self::Tabular(b)) => a.vocab() == b.vocab(),
            _ => false,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Self::Linear(p) => p.params_mut(),
            Self::Tabular(p) => p.params_mut(),
        }
    }

    fn inner(&self) -> &dyn Policy {
        match self {
            Self::Linear(p) => p,
            Self::Tabular(p) => p,
        }
    }
}

impl Policy for PolicyModel {
    fn vocab(&self) -> &Vocabulary {
        self.inner().vocab()
    }

    fn logits(&self, state: State<'_>) -> Vec<f64> {
        self.inner().logits(state)
    }

    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn backprop_logits(&self, state: State<'_>, dlogits: &[f64], grad: &mut [f64]) {
        self.inner().backprop_logits(state, dlogits, grad)
    }
}

/// An immutable, cheaply clonable policy snapshot (`pi_theta_old`, the
/// self-teacher). Its outputs never change after creation.
#[derive(Debug, Clone)]
pub struct Frozen(Arc<PolicyModel>);

impl Frozen {
    pub fn snapshot(&self) -> Frozen {
        self.clone()
    }

    pub fn model(&self) -> &PolicyModel {
        &self.0
    }
}

impl Policy for Frozen {
    fn vocab(&self) -> &Vocabulary {
        self.0.vocab()
    }

    fn logits(&self, state: State<'_>) -> Vec<f64> {
        self.0.logits(state)
    }

    fn params(&self) -> &[f64] {
        self.0.params()
    }

    fn backprop_logits(&self, state: State<'_>, dlogits: &[f64], grad: &mut [f64]) {
        self.0.backprop_logits(state, dlogits, grad)
    }
}
