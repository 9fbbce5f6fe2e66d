use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureConfig, FeatureExtractor};
use super::Policy;
use crate::error::Result;
use crate::mdp::{State, Vocabulary};
use crate::rng::LabRng;

/// `pi(a | s) = softmax(W phi(s))_a` over binary features `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmax {
    features: FeatureExtractor,
    /// Row-major `V x D`.
    weights: Vec<f64>,
}

impl LinearSoftmax {
    pub fn zeros(vocab: Vocabulary, config: FeatureConfig) -> Result<Self> {
        let features = FeatureExtractor::new(vocab, config)?;
        let n = vocab.size() * features.dim();
        Ok(Self {
            features,
            weights: vec![0.0; n],
        })
    }

    /// Weights uniform in `[-scale, scale]`.
    pub fn random(vocab: Vocabulary, config: FeatureConfig, scale: f64, rng: &mut LabRng) -> Result<Self> {
        let mut p = Self::zeros(vocab, config)?;
        if scale > 0.0 {
            for w in &mut p.weights {
                *w = rng.gen_range(-scale..=scale);
            }
        }
        Ok(p)
    }

    pub fn from_params(vocab: Vocabulary, config: FeatureConfig, weights: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(vocab, config)?;
        if weights.len() != p.weights.len() {
            return Err(crate::error::Error::Format(format!(
                "linear policy expects {} parameters, got {}",
                p.weights.len(),
                weights.len()
            )));
        }
        p.weights = weights;
        Ok(p)
    }

    pub fn features(&self) -> &FeatureExtractor {
        &self.features
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }
}

impl Policy for LinearSoftmax {
    fn vocab(&self) -> &Vocabulary {
        self.features.vocab()
    }

    fn logits(&self, state: State<'_>) -> Vec<f64> {
        let d = self.features.dim();
        let active = self.features.active(state);
        (0..self.vocab().size())
            .map(|a| {
                let row = &self.weights[a * d..(a + 1) * d];
                active.iter().map(|&j| row[j]).sum()
            })
            .collect()
    }

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn backprop_logits(&self, state: State<'_>, dlogits: &[f64], grad: &mut [f64]) {
        let d = self.features.dim();
        let active = self.features.active(state);
        for (a, &c) in dlogits.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let row = &mut grad[a * d..(a + 1) * d];
            for &j in &active {
                row[j] += c;
            }
        }
    }
}

/// Tabular policy conditioned on the last token of the state:
/// `logits = T[s[-1], :]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    vocab: Vocabulary,
    table: Vec<f64>,
}

impl TabularPolicy {
    pub fn zeros(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            table: vec![0.0; vocab.size() * vocab.size()],
        }
    }

    pub fn random(vocab: Vocabulary, scale: f64, rng: &mut LabRng) -> Self {
        let mut p = Self::zeros(vocab);
        if scale > 0.0 {
            for w in &mut p.table {
                *w = rng.gen_range(-scale..=scale);
            }
        }
        p
    }

    pub fn from_params(vocab: Vocabulary, table: Vec<f64>) -> Result<Self> {
        let n = vocab.size() * vocab.size();
        if table.len() != n {
            return Err(crate::error::Error::Format(format!(
                "tabular policy expects {n} parameters, got {}",
                table.len()
            )));
        }
        Ok(Self { vocab, table })
    }

    fn row(&self, state: State<'_>) -> usize {
        state.tokens.last().map_or(Vocabulary::BOS, |&t| t) as usize
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    /// Set the logits used after token `prev`.
    pub fn set_row(&mut self, prev: usize, logits: &[f64]) {
        let v = self.vocab.size();
        self.table[prev * v..(prev + 1) * v].copy_from_slice(logits);
    }
}

impl Policy for TabularPolicy {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn logits(&self, state: State<'_>) -> Vec<f64> {
        let v = self.vocab.size();
        let r = self.row(state);
        self.table[r * v..(r + 1) * v].to_vec()
    }

    fn params(&self) -> &[f64] {
        &self.table
    }

    fn backprop_logits(&self, state: State<'_>, dlogits: &[f64], grad: &mut [f64]) {
        let v = self.vocab.size();
        let r = self.row(state);
        for (g, &c) in grad[r * v..(r + 1) * v].iter_mut().zip(dlogits) {
            *g += c;
        }
    }
}
