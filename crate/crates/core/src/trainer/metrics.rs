use serde::{Deserialize, Serialize};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// One optimizer update. Serialized as one line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    /// Update index, monotone across the whole run.
    pub step: u64,
    pub stage: Stage,
    /// Update index within the stage.
    pub stage_step: u64,
    pub method: String,
    /// Objective value as reported by the objective (loss or maximised value).
    pub value: f64,
    /// Mean sampled reward of the update's rollouts (stage 2).
    pub mean_reward: Option<f64>,
    /// Teacher-forced next-token accuracy on the batch (stage 1).
    pub token_accuracy: Option<f64>,
    pub mean_kl: Option<f64>,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
    pub grad_norm: f64,
    /// Tokens processed by this update.
    pub tokens: u64,
    /// Cumulative long-context token share of the stage's task stream.
    pub long_token_share: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}
