use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stats::{aggregate_seeds, SeedStats};
use super::sweep::{long_horizon_accuracy, sampled_reward, short_accuracy};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::trainer::{continue_pipeline, init_policy, run_stage1, stage1_update_count, MetricsRecord, Stage, StageOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Beta,
    Teacher,
    Mixture,
    Coldstart,
    Method,
}

impl FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "beta" => Self::Beta,
            "teacher" => Self::Teacher,
            "mixture" => Self::Mixture,
            "coldstart" => Self::Coldstart,
            "method" => Self::Method,
            _ => {
                return Err(Error::config(format!(
                    "ablation kind `{s}` is not beta|teacher|mixture|coldstart|method"
                )))
            }
        })
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::Teacher => "teacher",
            Self::Mixture => "mixture",
            Self::Coldstart => "coldstart",
            Self::Method => "method",
        })
    }
}

/// One grid point: config overrides applied on top of the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub label: String,
    pub overrides: Vec<String>,
    /// Skip stage 1 and add its update count to the stage-2 step budget.
    pub matched_budget: bool,
}

impl AblationPoint {
    fn new(label: impl Into<String>, overrides: Vec<String>) -> Self {
        Self {
            label: label.into(),
            overrides,
            matched_budget: false,
        }
    }
}

/// Translate a comma-separated grid into points.
///
/// `beta`, `mixture`: numbers. `teacher`: `oracle`, `oracle:<lambda>`,
/// `self`. `coldstart`: `sft`, `kd`, `none` (stage 1 skipped, equal total
/// updates). `method`: `grpo`, `opd`, `dgrpo`.
pub fn ablation_points(kind: AblationKind, grid: &str) -> Result<Vec<AblationPoint>> {
    let values: Vec<&str> = grid.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::config("empty ablation grid"));
    }
    values
        .into_iter()
        .map(|v| {
            Ok(match kind {
                AblationKind::Beta => {
                    let b: f64 = v.parse().map_err(|_| Error::config(format!("beta grid value `{v}`")))?;
                    if !(b >= 0.0) {
                        return Err(Error::config(format!("beta grid value {b} must be >= 0")));
                    }
                    AblationPoint::new(v, vec!["stage2.method=dgrpo".into(), format!("stage2.beta={v}")])
                }
                AblationKind::Mixture => {
                    let f: f64 = v.parse().map_err(|_| Error::config(format!("mixture grid value `{v}`")))?;
                    if !(0.0..=1.0).contains(&f) {
                        return Err(Error::config(format!("mixture grid value {f} outside [0, 1]")));
                    }
                    AblationPoint::new(v, vec![format!("mixture.long_fraction={v}")])
                }
                AblationKind::Teacher => match v.split_once(':') {
                    Some(("oracle", l)) => AblationPoint::new(
                        v,
                        vec!["stage2.teacher=oracle".into(), format!("stage2.teacher_lambda={l}")],
                    ),
                    None if matches!(v, "oracle" | "self" | "none") => {
                        AblationPoint::new(v, vec![format!("stage2.teacher={v}")])
                    }
                    _ => return Err(Error::config(format!("teacher grid value `{v}`"))),
                },
                AblationKind::Coldstart => match v {
                    "sft" | "kd" => AblationPoint::new(v, vec![format!("stage1.method={v}")]),
                    "none" => AblationPoint {
                        label: v.into(),
                        overrides: vec!["stage1.skip=true".into()],
                        matched_budget: true,
                    },
                    _ => return Err(Error::config(format!("coldstart grid value `{v}`"))),
                },
                AblationKind::Method => match v {
                    "grpo" | "opd" | "dgrpo" => AblationPoint::new(v, vec![format!("stage2.method={v}")]),
                    _ => return Err(Error::config(format!("method grid value `{v}`"))),
                },
            })
        })
        .collect()
}

/// Per-seed results of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub long_accuracy: f64,
    pub short_accuracy: f64,
    /// Mean stage-2 group reward over the final reward window.
    pub final_reward: f64,
    /// Std of the per-step group reward over the final reward window.
    pub reward_noise: f64,
    /// Mean group reward of the first stage-2 step.
    pub initial_reward: f64,
    /// Sampled reward of the final checkpoint on held-out mixture prompts.
    pub probe_reward: f64,
    /// The same probe on the stage-2 starting checkpoint.
    pub start_probe_reward: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: AblationKind,
    pub label: String,
    pub overrides: Vec<String>,
    pub long_accuracy: SeedStats,
    pub short_accuracy: SeedStats,
    pub final_reward: SeedStats,
    /// Mean over seeds of the per-seed reward noise.
    pub reward_noise: f64,
    pub probe_reward: SeedStats,
    pub start_probe_reward: SeedStats,
    pub outcomes: Vec<SeedOutcome>,
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub label: String,
    pub seed: u64,
    pub config: Config,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationOptions {
    pub reward_window: usize,
    pub probe_prompts: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            reward_window: 100,
            probe_prompts: 64,
        }
    }
}

/// Keys that determine the stage-1 result.
fn stage1_key(cfg: &Config) -> String {
    cfg.entries()
        .into_iter()
        .filter(|(k, _)| {
            *k == "seed"
                || ["vocab.", "policy.", "tasks.", "mixture.", "stage1."]
                    .iter()
                    .any(|p| k.starts_with(p))
        })
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

fn reward_window(metrics: &[MetricsRecord], window: usize) -> (f64, f64, f64) {
    let rewards: Vec<f64> = metrics
        .iter()
        .filter(|m| m.stage == Stage::Stage2)
        .filter_map(|m| m.mean_reward)
        .collect();
    if rewards.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let tail = &rewards[rewards.len().saturating_sub(window)..];
    let st = aggregate_seeds(tail).expect("nonempty");
    (st.mean, st.std, rewards[0])
}

/// Train every grid point for every seed and summarise.
///
/// Grid points whose stage-1 configuration coincides share one stage-1 run
/// per seed.
pub fn run_ablation(
    kind: AblationKind,
    points: &[AblationPoint],
    base: &Config,
    seeds: &[u64],
    opts: AblationOptions,
) -> Result<AblationReport> {
    if points.is_empty() || seeds.is_empty() {
        return Err(Error::config("ablation needs at least one grid point and one seed"));
    }
    let mut cache: HashMap<String, (PolicyModel, Vec<MetricsRecord>, Option<String>)> = HashMap::new();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for point in points {
        let mut outcomes = Vec::new();
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            if point.matched_budget {
                let mut full = cfg.clone();
                full.stage1.skip = false;
                cfg.stage2.steps += stage1_update_count(&full)?;
            }
            cfg.apply_overrides(&point.overrides)?;
            cfg.validate()?;
            let key = stage1_key(&cfg);
            let s1 = match cache.get(&key) {
                Some((policy, metrics, failure)) => StageOutput {
                    policy: policy.clone(),
                    metrics: metrics.clone(),
                    failure: failure.clone().map(Error::Numeric),
                },
                None => {
                    let init = init_policy(&cfg)?;
                    let s = if cfg.stage1.skip {
                        StageOutput {
                            policy: init,
                            metrics: Vec::new(),
                            failure: None,
                        }
                    } else {
                        run_stage1(&cfg, init)?
                    };
                    let failure = s.failure.as_ref().map(ToString::to_string);
                    cache.insert(key, (s.policy.clone(), s.metrics.clone(), failure));
                    s
                }
            };
            let start = s1.policy.clone();
            let run = continue_pipeline(&cfg, s1)?;
            let (final_reward, reward_noise, initial_reward) = reward_window(&run.metrics, opts.reward_window);
            outcomes.push(SeedOutcome {
                seed,
                long_accuracy: long_horizon_accuracy(&run.stage2, &cfg, seed)?,
                short_accuracy: short_accuracy(&run.stage2, &cfg, seed)?,
                final_reward,
                reward_noise,
                initial_reward,
                probe_reward: sampled_reward(&run.stage2, &cfg, opts.probe_prompts, seed)?,
                start_probe_reward: sampled_reward(&start, &cfg, opts.probe_prompts, seed)?,
                failure: run.failure.as_ref().map(ToString::to_string),
            });
            runs.push(AblationRun {
                label: point.label.clone(),
                seed,
                config: cfg,
                metrics: run.metrics,
            });
        }
        let col = |f: fn(&SeedOutcome) -> f64| aggregate_seeds(&outcomes.iter().map(f).collect::<Vec<_>>());
        rows.push(AblationRow {
            kind,
            label: point.label.clone(),
            overrides: point.overrides.clone(),
            long_accuracy: col(|o| o.long_accuracy)?,
            short_accuracy: col(|o| o.short_accuracy)?,
            final_reward: col(|o| o.final_reward)?,
            reward_noise: col(|o| o.reward_noise)?.mean,
            probe_reward: col(|o| o.probe_reward)?,
            start_probe_reward: col(|o| o.start_probe_reward)?,
            outcomes: outcomes.clone(),
        });
    }
    Ok(AblationReport { rows, runs })
}
