use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsRecord;
use super::stages::{init_policy, run_stage1, run_stage2, StageOutput};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::policy::{checkpoint, PolicyModel};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// A finished (or diverged) two-stage run.
#[derive(Debug)]
pub struct PipelineRun {
    pub stage1: PolicyModel,
    pub stage2: PolicyModel,
    pub metrics: Vec<MetricsRecord>,
    /// Set when a stage diverged; the checkpoints are then the last good ones.
    pub failure: Option<Error>,
}

/// Stage 1 (unless skipped) followed by stage 2 from its checkpoint.
pub fn train_pipeline(cfg: &Config) -> Result<PipelineRun> {
    cfg.validate()?;
    let init = init_policy(cfg)?;
    let s1 = if cfg.stage1.skip {
        StageOutput {
            policy: init,
            metrics: Vec::new(),
            failure: None,
        }
    } else {
        run_stage1(cfg, init)?
    };
    continue_pipeline(cfg, s1)
}

/// Stage 2 from an existing stage-1 result.
pub fn continue_pipeline(cfg: &Config, s1: StageOutput) -> Result<PipelineRun> {
    if let Some(e) = s1.failure {
        return Ok(PipelineRun {
            stage2: s1.policy.clone(),
            stage1: s1.policy,
            metrics: s1.metrics,
            failure: Some(e),
        });
    }
    let offset = s1.metrics.last().map_or(0, |m| m.step + 1);
    let s2 = run_stage2(cfg, s1.policy.clone(), offset)?;
    let mut metrics = s1.metrics;
    metrics.extend(s2.metrics);
    Ok(PipelineRun {
        stage1: s1.policy,
        stage2: s2.policy,
        metrics,
        failure: s2.failure,
    })
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub tool_version: String,
    pub seed: u64,
    /// Artifact name -> path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    /// Every configuration key with its value.
    pub config: BTreeMap<String, String>,
    pub stage1_updates: usize,
    pub stage2_updates: usize,
    pub failure: Option<String>,
}

impl Manifest {
    pub fn new(cfg: &Config, run: Option<&PipelineRun>) -> Self {
        let count = |stage| run.map_or(0, |r| r.metrics.iter().filter(|m| m.stage == stage).count());
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            run_id: cfg.run.id.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            artifacts: [
                ("metrics", METRICS_FILE),
                ("stage1_checkpoint", STAGE1_CKPT),
                ("stage2_checkpoint", STAGE2_CKPT),
                ("reports", REPORTS_DIR),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
            config: cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            stage1_updates: count(super::Stage::Stage1),
            stage2_updates: count(super::Stage::Stage2),
            failure: run.and_then(|r| r.failure.as_ref().map(ToString::to_string)),
        }
    }

    /// Artifacts listed in the manifest that are missing under `dir`.
    pub fn missing_artifacts(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .values()
            .filter(|p| !dir.join(p).exists())
            .cloned()
            .collect()
    }

    /// The configuration recorded in the manifest.
    pub fn config(&self) -> Result<Config> {
        let mut c = Config::default();
        for (k, v) in &self.config {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STAGE1_CKPT: &str = "ckpt-stage1";
pub const STAGE2_CKPT: &str = "ckpt-stage2";
pub const REPORTS_DIR: &str = "reports";

/// Writes `manifest.json`, `metrics.jsonl` and both checkpoints into `dir`.
pub fn write_run(dir: &Path, cfg: &Config, run: &PipelineRun) -> Result<()> {
    let reports = dir.join(REPORTS_DIR);
    fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    Manifest::new(cfg, Some(run)).save(&dir.join(MANIFEST_FILE))?;
    jsonl::write(&dir.join(METRICS_FILE), &run.metrics)?;
    checkpoint::save(&dir.join(STAGE1_CKPT), &run.stage1)?;
    checkpoint::save(&dir.join(STAGE2_CKPT), &run.stage2)
}
