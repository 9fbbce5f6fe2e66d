//! Synthetic verifiable tasks.
//!
//! Three long-context families (retrieval, multi-hop lookup, long-form
//! pattern continuation) plus a short arithmetic family, binary rewards, and
//! a sampler that mixes short and long tasks at a fixed token share.

mod generate;
mod mixture;
mod reward;

pub use generate::{generate_task, generate_task_seeded, TaskKind, TaskParams};
pub use mixture::{MixtureAccounts, MixtureConfig, MixtureSampler, TaskSource};
pub use reward::{judge_reward, parse_verdict, render_verdict, score, verify_reward};

use serde::{Deserialize, Serialize};

use crate::mdp::Token;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    /// Seed the instance was generated from.
    pub seed: u64,
    pub fillers: usize,
    pub hops: usize,
    pub period: usize,
    pub length: usize,
    pub decoy: bool,
}

/// One task: a prompt `x` and its gold answer `y` (ending in EOS).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub prompt: Vec<Token>,
    pub gold: Vec<Token>,
    /// Filler count `H`, or the target length `L` for long-form tasks.
    pub horizon: usize,
    pub meta: TaskMeta,
}

impl TaskInstance {
    pub fn token_count(&self) -> usize {
        self.prompt.len() + self.gold.len()
    }

    /// Answer content without the trailing EOS.
    pub fn answer(&self) -> &[Token] {
        &self.gold[..self.gold.len() - 1]
    }

    pub fn to_record(&self) -> TaskRecord {
        TaskRecord {
            kind: self.kind,
            prompt: self.prompt.clone(),
            gold: self.gold.clone(),
            horizon: self.horizon,
            seed: self.meta.seed,
        }
    }
}

/// Line-delimited corpus record written by `make-data`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub kind: TaskKind,
    pub prompt: Vec<Token>,
    pub gold: Vec<Token>,
    pub horizon: usize,
    pub seed: u64,
}
