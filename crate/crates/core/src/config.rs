//! Flat `key=value` configuration.
//!
//! One key per line, `#` starts a comment, keys are namespaced
//! (`stage1.lr`, `stage2.beta`, `mixture.long_fraction`, ...). Unknown keys
//! are errors. Later assignments win, so command-line overrides applied
//! after the file take precedence over file values.
//!
//! Defaults follow the reference recipe: SFT at `1e-5` for two epochs with
//! weight decay `0.01`, then RL at `1e-6` with Adam `(0.9, 0.95)`, gradient
//! clipping `1.0`, clip threshold `0.2`, 8 samples per prompt, `beta = 0.5`
//! and a 90% long-token mixture.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Vocabulary;
use crate::policy::{DecodeConfig, FeatureConfig, PolicyKind};
use crate::tasks::{MixtureConfig, TaskKind, TaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdStart {
    Sft,
    Kd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlMethod {
    Grpo,
    Opd,
    Dgrpo,
}

/// How on-policy distillation draws its rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpdSampling {
    /// `group_size` prompts with one rollout each.
    Stream,
    /// One prompt with `group_size` rollouts, like GRPO.
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMode {
    Oracle,
    /// Frozen stage-1 checkpoint.
    #[serde(rename = "self")]
    SelfSnapshot,
    None,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $variant:expr),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::config(format!(
                        "`{s}` is not one of {}", [$($name),+].join("|")
                    ))),
                }
            }
        }
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(ColdStart { "sft" => ColdStart::Sft, "kd" => ColdStart::Kd });
keyword_enum!(RlMethod { "grpo" => RlMethod::Grpo, "opd" => RlMethod::Opd, "dgrpo" => RlMethod::Dgrpo });
keyword_enum!(OpdSampling { "stream" => OpdSampling::Stream, "group" => OpdSampling::Group });
keyword_enum!(TeacherMode {
    "oracle" => TeacherMode::Oracle,
    "self" => TeacherMode::SelfSnapshot,
    "none" => TeacherMode::None,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub window: usize,
    pub position_buckets: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    /// Long-context families drawn by the long stream.
    pub long_kinds: Vec<TaskKind>,
    /// Horizons drawn by the long stream.
    pub horizons: Vec<usize>,
    pub params: TaskParams,
    pub max_new_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Config {
    /// Skip the cold start entirely (RL from the initial policy).
    pub skip: bool,
    pub method: ColdStart,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_tokens: usize,
    /// Number of tasks in the cold-start corpus.
    pub corpus_size: usize,
    /// Teacher smoothing for KD.
    pub kd_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub method: RlMethod,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub clip_eps: f64,
    pub group_size: usize,
    pub beta: f64,
    pub teacher: TeacherMode,
    pub teacher_lambda: f64,
    pub inner_epochs: usize,
    pub steps: usize,
    /// Prompts per update; GRPO and dGRPO roll out a group for each.
    pub prompts_per_step: usize,
    pub opd_sampling: OpdSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub long_kinds: Vec<TaskKind>,
    pub horizons: Vec<usize>,
    pub n_per_cell: usize,
    pub seeds: usize,
    /// `greedy` or `stochastic` (temperature 0.6, top-p 0.95, top-k 20).
    pub decode: String,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dir: String,
    pub id: String,
    /// Record wall-clock time in metrics (makes metrics non-reproducible).
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub count: usize,
    pub out: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblateConfig {
    pub kind: String,
    pub grid: String,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub seed: u64,
    pub vocab_size: usize,
    pub policy: PolicyConfig,
    pub tasks: TaskConfig,
    pub mixture: MixtureConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub eval: EvalConfig,
    pub run: RunConfig,
    pub data: DataConfig,
    pub ablate: AblateConfig,
}

impl Default for Config {
    fn default() -> Self {
        let ladder = vec![8, 16, 32, 64, 128, 256];
        Self {
            seed: 0,
            vocab_size: 32,
            policy: PolicyConfig {
                kind: PolicyKind::Linear,
                window: 2,
                position_buckets: 8,
                init_scale: 0.01,
            },
            tasks: TaskConfig {
                long_kinds: vec![TaskKind::KeyRetrieval, TaskKind::MultiHop],
                horizons: ladder.clone(),
                params: TaskParams::default(),
                max_new_tokens: 16,
            },
            mixture: MixtureConfig::default(),
            stage1: Stage1Config {
                skip: false,
                method: ColdStart::Sft,
                epochs: 2,
                lr: 1e-5,
                weight_decay: 0.01,
                batch_tokens: 512,
                corpus_size: 512,
                kd_lambda: 0.1,
            },
            stage2: Stage2Config {
                method: RlMethod::Dgrpo,
                lr: 1e-6,
                adam_beta1: 0.9,
                adam_beta2: 0.95,
                adam_eps: 1e-8,
                grad_clip: 1.0,
                clip_eps: 0.2,
                group_size: 8,
                beta: 0.5,
                teacher: TeacherMode::Oracle,
                teacher_lambda: 0.1,
                inner_epochs: 1,
                steps: 400,
                prompts_per_step: 1,
                opd_sampling: OpdSampling::Stream,
            },
            eval: EvalConfig {
                long_kinds: vec![TaskKind::KeyRetrieval, TaskKind::MultiHop],
                horizons: ladder,
                n_per_cell: 100,
                seeds: 5,
                decode: "greedy".into(),
                checkpoint: String::new(),
            },
            run: RunConfig {
                dir: "runs/default".into(),
                id: "default".into(),
                wall_clock: false,
            },
            data: DataConfig {
                count: 1000,
                out: String::new(),
            },
            ablate: AblateConfig {
                kind: "beta".into(),
                grid: "0,0.1,0.25,0.4,0.5".into(),
                seeds: 5,
            },
        }
    }
}

/// The desk-scale experiment recipe, as a config file.
pub const DESK_PRESET: &str = include_str!("../configs/desk.conf");

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse_kinds(key: &str, value: &str) -> Result<Vec<TaskKind>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: Error| Error::config(format!("{key}: {e}"))))
        .collect()
}

impl Config {
    /// Assign one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let tp = &mut self.tasks.params;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "vocab.size" => self.vocab_size = parse(key, v)?,
            "policy.kind" => self.policy.kind = v.parse()?,
            "policy.window" => self.policy.window = parse(key, v)?,
            "policy.position_buckets" => self.policy.position_buckets = parse(key, v)?,
            "policy.init_scale" => self.policy.init_scale = parse(key, v)?,
            "tasks.long_kinds" => self.tasks.long_kinds = parse_kinds(key, v)?,
            "tasks.horizons" => self.tasks.horizons = parse_list(key, v)?,
            "tasks.hops" => tp.hops = parse(key, v)?,
            "tasks.long_form_length" => tp.length = parse(key, v)?,
            "tasks.period" => tp.period = parse(key, v)?,
            "tasks.decoy_prob" => tp.decoy_prob = parse(key, v)?,
            "tasks.collide_prob" => tp.collide_prob = parse(key, v)?,
            "tasks.arith_base" => tp.arith_base = parse(key, v)?,
            "tasks.max_new_tokens" => self.tasks.max_new_tokens = parse(key, v)?,
            "mixture.long_fraction" => self.mixture.long_fraction = parse(key, v)?,
            "stage1.skip" => self.stage1.skip = parse(key, v)?,
            "stage1.method" => self.stage1.method = v.parse()?,
            "stage1.epochs" => self.stage1.epochs = parse(key, v)?,
            "stage1.lr" => self.stage1.lr = parse(key, v)?,
            "stage1.weight_decay" => self.stage1.weight_decay = parse(key, v)?,
            "stage1.batch_tokens" => self.stage1.batch_tokens = parse(key, v)?,
            "stage1.corpus_size" => self.stage1.corpus_size = parse(key, v)?,
            "stage1.kd_lambda" => self.stage1.kd_lambda = parse(key, v)?,
            "stage2.method" => self.stage2.method = v.parse()?,
            "stage2.lr" => self.stage2.lr = parse(key, v)?,
            "stage2.adam_beta1" => self.stage2.adam_beta1 = parse(key, v)?,
            "stage2.adam_beta2" => self.stage2.adam_beta2 = parse(key, v)?,
            "stage2.adam_eps" => self.stage2.adam_eps = parse(key, v)?,
            "stage2.grad_clip" => self.stage2.grad_clip = parse(key, v)?,
            "stage2.clip_eps" => self.stage2.clip_eps = parse(key, v)?,
            "stage2.group_size" => self.stage2.group_size = parse(key, v)?,
            "stage2.beta" => self.stage2.beta = parse(key, v)?,
            "stage2.teacher" => self.stage2.teacher = v.parse()?,
            "stage2.teacher_lambda" => self.stage2.teacher_lambda = parse(key, v)?,
            "stage2.inner_epochs" => self.stage2.inner_epochs = parse(key, v)?,
            "stage2.steps" => self.stage2.steps = parse(key, v)?,
            "stage2.prompts_per_step" => self.stage2.prompts_per_step = parse(key, v)?,
            "stage2.opd_sampling" => self.stage2.opd_sampling = v.parse()?,
            "eval.long_kinds" => self.eval.long_kinds = parse_kinds(key, v)?,
            "eval.horizons" => self.eval.horizons = parse_list(key, v)?,
            "eval.n_per_cell" => self.eval.n_per_cell = parse(key, v)?,
            "eval.seeds" => self.eval.seeds = parse(key, v)?,
            "eval.decode" => self.eval.decode = v.to_string(),
            "eval.checkpoint" => self.eval.checkpoint = v.to_string(),
            "run.dir" => self.run.dir = v.to_string(),
            "run.id" => self.run.id = v.to_string(),
            "run.wall_clock" => self.run.wall_clock = parse(key, v)?,
            "data.count" => self.data.count = parse(key, v)?,
            "data.out" => self.data.out = v.to_string(),
            "ablate.kind" => self.ablate.kind = v.to_string(),
            "ablate.grid" => self.ablate.grid = v.to_string(),
            "ablate.seeds" => self.ablate.seeds = parse(key, v)?,
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let tp = &self.tasks.params;
        vec![
            ("seed", self.seed.to_string()),
            ("vocab.size", self.vocab_size.to_string()),
            ("policy.kind", self.policy.kind.to_string()),
            ("policy.window", self.policy.window.to_string()),
            ("policy.position_buckets", self.policy.position_buckets.to_string()),
            ("policy.init_scale", self.policy.init_scale.to_string()),
            ("tasks.long_kinds", join(&self.tasks.long_kinds)),
            ("tasks.horizons", join(&self.tasks.horizons)),
            ("tasks.hops", tp.hops.to_string()),
            ("tasks.long_form_length", tp.length.to_string()),
            ("tasks.period", tp.period.to_string()),
            ("tasks.decoy_prob", tp.decoy_prob.to_string()),
            ("tasks.collide_prob", tp.collide_prob.to_string()),
            ("tasks.arith_base", tp.arith_base.to_string()),
            ("tasks.max_new_tokens", self.tasks.max_new_tokens.to_string()),
            ("mixture.long_fraction", self.mixture.long_fraction.to_string()),
            ("stage1.skip", self.stage1.skip.to_string()),
            ("stage1.method", self.stage1.method.to_string()),
            ("stage1.epochs", self.stage1.epochs.to_string()),
            ("stage1.lr", self.stage1.lr.to_string()),
            ("stage1.weight_decay", self.stage1.weight_decay.to_string()),
            ("stage1.batch_tokens", self.stage1.batch_tokens.to_string()),
            ("stage1.corpus_size", self.stage1.corpus_size.to_string()),
            ("stage1.kd_lambda", self.stage1.kd_lambda.to_string()),
            ("stage2.method", self.stage2.method.to_string()),
            ("stage2.lr", self.stage2.lr.to_string()),
            ("stage2.adam_beta1", self.stage2.adam_beta1.to_string()),
            ("stage2.adam_beta2", self.stage2.adam_beta2.to_string()),
            ("stage2.adam_eps", self.stage2.adam_eps.to_string()),
            ("stage2.grad_clip", self.stage2.grad_clip.to_string()),
            ("stage2.clip_eps", self.stage2.clip_eps.to_string()),
            ("stage2.group_size", self.stage2.group_size.to_string()),
            ("stage2.beta", self.stage2.beta.to_string()),
            ("stage2.teacher", self.stage2.teacher.to_string()),
            ("stage2.teacher_lambda", self.stage2.teacher_lambda.to_string()),
            ("stage2.inner_epochs", self.stage2.inner_epochs.to_string()),
            ("stage2.steps", self.stage2.steps.to_string()),
            ("stage2.prompts_per_step", self.stage2.prompts_per_step.to_string()),
            ("stage2.opd_sampling", self.stage2.opd_sampling.to_string()),
            ("eval.long_kinds", join(&self.eval.long_kinds)),
            ("eval.horizons", join(&self.eval.horizons)),
            ("eval.n_per_cell", self.eval.n_per_cell.to_string()),
            ("eval.seeds", self.eval.seeds.to_string()),
            ("eval.decode", self.eval.decode.clone()),
            ("eval.checkpoint", self.eval.checkpoint.clone()),
            ("run.dir", self.run.dir.clone()),
            ("run.id", self.run.id.clone()),
            ("run.wall_clock", self.run.wall_clock.to_string()),
            ("data.count", self.data.count.to_string()),
            ("data.out", self.data.out.clone()),
            ("ablate.kind", self.ablate.kind.clone()),
            ("ablate.grid", self.ablate.grid.clone()),
            ("ablate.seeds", self.ablate.seeds.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Apply `key=value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults with [`DESK_PRESET`] applied.
    pub fn desk() -> Self {
        Self::parse_text(DESK_PRESET).expect("bundled preset parses")
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Apply `key=value` overrides.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            c.apply_text(&text)?;
        }
        c.apply_overrides(overrides)?;
        c.validate()?;
        Ok(c)
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.vocab_size)
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            window: self.policy.window,
            position_buckets: self.policy.position_buckets,
            arith_base: self.tasks.params.arith_base,
        }
    }

    pub fn training_decode(&self) -> DecodeConfig {
        DecodeConfig::training(self.tasks.max_new_tokens)
    }

    pub fn eval_decode(&self) -> Result<DecodeConfig> {
        match self.eval.decode.as_str() {
            "greedy" => Ok(DecodeConfig::greedy(self.tasks.max_new_tokens)),
            "stochastic" => Ok(DecodeConfig::stochastic_eval(self.tasks.max_new_tokens)),
            d => Err(Error::config(format!("eval.decode `{d}` is not greedy|stochastic"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vocab = self.vocab()?;
        self.mixture.validate()?;
        let pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {x} must be > 0")))
            }
        };
        pos("stage1.lr", self.stage1.lr)?;
        pos("stage2.lr", self.stage2.lr)?;
        pos("stage2.grad_clip", self.stage2.grad_clip)?;
        pos("stage2.adam_eps", self.stage2.adam_eps)?;
        for (name, b) in [("stage2.adam_beta1", self.stage2.adam_beta1), ("stage2.adam_beta2", self.stage2.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.stage2.clip_eps > 0.0 && self.stage2.clip_eps < 1.0) {
            return Err(Error::config("stage2.clip_eps must lie in (0, 1)"));
        }
        if !(self.stage2.beta >= 0.0) {
            return Err(Error::config("stage2.beta must be >= 0"));
        }
        if self.stage2.group_size < 2 {
            return Err(Error::config("stage2.group_size must be >= 2"));
        }
        if self.stage2.prompts_per_step == 0 {
            return Err(Error::config("stage2.prompts_per_step must be >= 1"));
        }
        if self.stage2.inner_epochs == 0 {
            return Err(Error::config("stage2.inner_epochs must be >= 1"));
        }
        if self.stage1.weight_decay < 0.0 {
            return Err(Error::config("stage1.weight_decay must be >= 0"));
        }
        if self.stage1.batch_tokens == 0 {
            return Err(Error::config("stage1.batch_tokens must be >= 1"));
        }
        for (name, l) in [("stage1.kd_lambda", self.stage1.kd_lambda), ("stage2.teacher_lambda", self.stage2.teacher_lambda)] {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::config(format!("{name} = {l} outside [0, 1]")));
            }
        }
        if self.stage2.method != RlMethod::Grpo && self.stage2.teacher == TeacherMode::None {
            return Err(Error::config(format!(
                "stage2.method={} needs a teacher (stage2.teacher=oracle|self)",
                self.stage2.method
            )));
        }
        if self.tasks.long_kinds.iter().any(|k| !k.is_long()) {
            return Err(Error::config("tasks.long_kinds may only list long-context kinds"));
        }
        if self.tasks.long_kinds.is_empty() || self.tasks.horizons.is_empty() {
            return Err(Error::config("tasks.long_kinds and tasks.horizons must be nonempty"));
        }
        if self.tasks.max_new_tokens == 0 {
            return Err(Error::config("tasks.max_new_tokens must be >= 1"));
        }
        if self.eval.n_per_cell == 0 || self.eval.seeds == 0 {
            return Err(Error::config("eval.n_per_cell and eval.seeds must be >= 1"));
        }
        self.eval_decode()?;
        crate::policy::FeatureExtractor::new(vocab, self.features())?;
        Ok(())
    }
}
