//! Optimizer, the two training stages and run persistence.

mod adam;
mod metrics;
mod pipeline;
mod stages;

pub use adam::{adam_step, global_norm, AdamConfig, AdamState, StepStats};
pub use metrics::{MetricsRecord, Stage, METRICS_SCHEMA_VERSION};
pub use pipeline::{
    continue_pipeline, train_pipeline, write_run, Manifest, PipelineRun, MANIFEST_FILE, MANIFEST_SCHEMA_VERSION,
    METRICS_FILE, REPORTS_DIR, STAGE1_CKPT, STAGE2_CKPT,
};
pub use stages::{
    init_policy, run_stage1, run_stage2, run_stage2_observed, stage1_batches, stage1_corpus, stage1_update_count, task_stream, StageOutput,
};
