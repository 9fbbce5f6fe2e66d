use crate::error::{Error, Result};
use crate::mdp::{Token, Trajectory};

/// Groups whose population std falls below this get all-zero advantages.
pub const ZERO_STD: f64 = 1e-8;

/// `(r_i - mean) / std` with the population (divide-by-G) std; all zeros
/// when the group has no spread.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let g = rewards.len();
    if g < 2 {
        return Err(Error::input(format!("group size {g} < 2")));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::input(format!("non-finite reward {r}")));
    }
    let n = g as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < ZERO_STD {
        return Ok(vec![0.0; g]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `G` scored completions of one prompt with their advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub prompt: Vec<Token>,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    /// Build from scored trajectories of a shared prompt.
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let prompt = trajectories
            .first()
            .map(|t| t.prompt.clone())
            .ok_or_else(|| Error::input("empty group"))?;
        if trajectories.iter().any(|t| t.prompt != prompt) {
            return Err(Error::input("group trajectories must share one prompt"));
        }
        let rewards = trajectories
            .iter()
            .map(|t| t.reward.ok_or_else(|| Error::input("trajectory reward not assigned")))
            .collect::<Result<Vec<_>>>()?;
        let advantages = group_advantages(&rewards)?;
        Ok(Self {
            prompt,
            trajectories,
            rewards,
            advantages,
        })
    }

    pub fn size(&self) -> usize {
        self.trajectories.len()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    pub fn token_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.prompt.len() + t.output.len()).sum()
    }
}
