use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{generate_task_seeded, TaskInstance, TaskKind, TaskParams};
use crate::error::{Error, Result};
use crate::mdp::Vocabulary;
use crate::rng::LabRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    /// Target share of prompt+gold tokens coming from long-context tasks.
    pub long_fraction: f64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self { long_fraction: 0.9 }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.long_fraction) {
            return Err(Error::config(format!(
                "mixture.long_fraction = {} outside [0, 1]",
                self.long_fraction
            )));
        }
        Ok(())
    }
}

/// An endless generator over a set of task kinds and horizons, drawn
/// uniformly.
#[derive(Debug, Clone)]
pub struct TaskSource {
    kinds: Vec<TaskKind>,
    horizons: Vec<usize>,
    params: TaskParams,
    vocab: Vocabulary,
    rng: LabRng,
}

impl TaskSource {
    pub fn new(
        kinds: Vec<TaskKind>,
        horizons: Vec<usize>,
        params: TaskParams,
        vocab: Vocabulary,
        rng: LabRng,
    ) -> Result<Self> {
        if kinds.is_empty() {
            return Err(Error::config("task source needs at least one kind"));
        }
        if horizons.is_empty() {
            return Err(Error::config("task source needs at least one horizon"));
        }
        Ok(Self {
            kinds,
            horizons,
            params,
            vocab,
            rng,
        })
    }

    pub fn next_task(&mut self) -> Result<TaskInstance> {
        let kind = self.kinds[self.rng.gen_range(0..self.kinds.len())];
        let horizon = self.horizons[self.rng.gen_range(0..self.horizons.len())];
        let seed = self.rng.gen();
        generate_task_seeded(kind, &self.params.with_horizon(horizon), &self.vocab, seed)
    }
}

/// Running token accounts of a mixture, exposed for audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureAccounts {
    pub long_tokens: u64,
    pub short_tokens: u64,
    pub long_tasks: u64,
    pub short_tasks: u64,
}

impl MixtureAccounts {
    pub fn total_tokens(&self) -> u64 {
        self.long_tokens + self.short_tokens
    }

    pub fn long_share(&self) -> f64 {
        match self.total_tokens() {
            0 => 0.0,
            n => self.long_tokens as f64 / n as f64,
        }
    }
}

/// Interleaves a short and a long stream so that the cumulative long-token
/// share tracks `long_fraction`: a long task is emitted whenever the long
/// account is at or below its target.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    short: TaskSource,
    long: TaskSource,
    config: MixtureConfig,
    accounts: MixtureAccounts,
}

impl MixtureSampler {
    pub fn new(short: TaskSource, long: TaskSource, config: MixtureConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            short,
            long,
            config,
            accounts: MixtureAccounts::default(),
        })
    }

    pub fn accounts(&self) -> MixtureAccounts {
        self.accounts
    }

    pub fn next_task(&mut self) -> Result<TaskInstance> {
        let f = self.config.long_fraction;
        let a = &self.accounts;
        let pick_long = f > 0.0 && (a.long_tokens as f64) <= f * a.total_tokens() as f64;
        let task = if pick_long {
            self.long.next_task()?
        } else {
            self.short.next_task()?
        };
        let n = task.token_count() as u64;
        if pick_long {
            self.accounts.long_tokens += n;
            self.accounts.long_tasks += 1;
        } else {
            self.accounts.short_tokens += n;
            self.accounts.short_tasks += 1;
        }
        Ok(task)
    }
}
