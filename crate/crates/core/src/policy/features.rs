//! Binary state features for the linear-softmax policy.
//!
//! Each slot is a one-hot block of width `V + 1`; the last entry of a block
//! means "absent". Layout, in order:
//!
//! | block            | width                 | meaning                                      |
//! |------------------|-----------------------|----------------------------------------------|
//! | bias             | 1                     | always on                                    |
//! | window           | `window * (V + 1)`    | `s[-1]`, `s[-2]`, ... of the whole state     |
//! | marker registers | `4 * (V + 1)`         | token after the latest KEY / QUERY / SEP / ARROW |
//! | successor chain  | `2 * (V + 1)`         | `succ(q)`, `succ(succ(q))` for query `q`     |
//! | arithmetic       | `V + 1`               | sum of the digits of an arithmetic prompt    |
//! | phase            | `5 * buckets`         | last prompt marker x output-position bucket  |
//!
//! The successor map is read from `a ARROW b` facts in the prompt; the query
//! is the token after the latest QUERY marker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{State, Token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub window: usize,
    pub position_buckets: usize,
    pub arith_base: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: 2,
            position_buckets: 8,
            arith_base: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    vocab: Vocabulary,
    config: FeatureConfig,
}

impl FeatureExtractor {
    pub fn new(vocab: Vocabulary, config: FeatureConfig) -> Result<Self> {
        if config.window == 0 || config.position_buckets == 0 {
            return Err(Error::config("feature window and position buckets must be >= 1"));
        }
        if config.arith_base == 0 || config.arith_base > vocab.answer_count() {
            return Err(Error::config(format!(
                "arithmetic base {} must be in [1, {}]",
                config.arith_base,
                vocab.answer_count()
            )));
        }
        Ok(Self { vocab, config })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    fn slot(&self) -> usize {
        self.vocab.size() + 1
    }

    fn window_offset(&self) -> usize {
        1
    }

    fn marker_offset(&self) -> usize {
        self.window_offset() + self.config.window * self.slot()
    }

    fn succ_offset(&self) -> usize {
        self.marker_offset() + Vocabulary::MARKERS.len() * self.slot()
    }

    fn sum_offset(&self) -> usize {
        self.succ_offset() + 2 * self.slot()
    }

    fn phase_offset(&self) -> usize {
        self.sum_offset() + self.slot()
    }

    pub fn dim(&self) -> usize {
        self.phase_offset() + (Vocabulary::MARKERS.len() + 1) * self.config.position_buckets
    }

    /// Indices of the active (value 1) features of `state`, one per block
    /// slot, in increasing order.
    pub fn active(&self, state: State<'_>) -> Vec<usize> {
        let v = self.vocab.size();
        let slot = self.slot();
        let none = v;
        let toks = state.tokens;
        let prompt = state.prompt();
        let mut out = Vec::with_capacity(2 + self.config.window + 8);
        out.push(0);

        for j in 0..self.config.window {
            let val = toks
                .len()
                .checked_sub(j + 1)
                .map_or(none, |i| toks[i] as usize);
            out.push(self.window_offset() + j * slot + val);
        }

        let mut after = [none; 4];
        for (i, &t) in toks.iter().enumerate() {
            if let Some(m) = Vocabulary::MARKERS.iter().position(|&mk| mk == t) {
                after[m] = toks.get(i + 1).map_or(none, |&n| n as usize);
            }
        }
        for (m, &val) in after.iter().enumerate() {
            out.push(self.marker_offset() + m * slot + val);
        }

        let query = after[1];
        let succ = |x: usize| -> usize {
            if x == none {
                return none;
            }
            let mut found = none;
            for i in 1..prompt.len().saturating_sub(1) {
                if prompt[i] == Vocabulary::ARROW && prompt[i - 1] as usize == x {
                    found = prompt[i + 1] as usize;
                }
            }
            found
        };
        let s1 = succ(query);
        let s2 = succ(s1);
        out.push(self.succ_offset() + s1);
        out.push(self.succ_offset() + slot + s2);

        out.push(self.sum_offset() + self.arith_register(prompt));

        let last_marker = prompt
            .iter()
            .rev()
            .find_map(|&t| Vocabulary::MARKERS.iter().position(|&mk| mk == t))
            .unwrap_or(Vocabulary::MARKERS.len());
        let bucket = state.position().min(self.config.position_buckets - 1);
        out.push(self.phase_offset() + last_marker * self.config.position_buckets + bucket);
        out
    }

    /// Digit sum register: set only for prompts shaped `[BOS, d.., QUERY]`.
    fn arith_register(&self, prompt: &[Token]) -> usize {
        let none = self.vocab.size();
        let base = self.config.arith_base;
        if prompt.len() < 3
            || prompt[0] != Vocabulary::BOS
            || *prompt.last().unwrap() != Vocabulary::QUERY
        {
            return none;
        }
        let mut sum = 0usize;
        for &t in &prompt[1..prompt.len() - 1] {
            let d = (t as usize).wrapping_sub(Vocabulary::RESERVED);
            if !self.vocab.is_answer(t) || d >= base {
                return none;
            }
            sum += d;
        }
        self.vocab.answer(sum % base) as usize
    }
}
