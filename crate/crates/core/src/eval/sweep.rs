use serde::{Deserialize, Serialize};

use super::stats::aggregate_seeds;
use super::Responder;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::mdp::Vocabulary;
use crate::policy::DecodeConfig;
use crate::rng::substream;
use crate::tasks::{generate_task_seeded, score, TaskInstance, TaskKind, TaskParams};
use rand::Rng;

/// `n` fresh tasks of one cell. Each cell has its own substream, so the set
/// does not depend on which other cells are evaluated.
pub fn eval_tasks(
    kind: TaskKind,
    horizon: usize,
    params: &TaskParams,
    vocab: &Vocabulary,
    n: usize,
    seed: u64,
) -> Result<Vec<TaskInstance>> {
    let mut rng = substream(seed, "eval-tasks", &[kind as u64, horizon as u64]);
    let p = params.with_horizon(horizon);
    (0..n).map(|_| generate_task_seeded(kind, &p, vocab, rng.gen())).collect()
}

/// Mean reward of `responder` over `tasks`; the `i`-th task is decoded with
/// its own substream of `seed`.
pub fn task_accuracy<R: Responder + ?Sized>(
    responder: &R,
    tasks: &[TaskInstance],
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::input("no tasks to evaluate"));
    }
    let mut total = 0.0;
    for (i, task) in tasks.iter().enumerate() {
        let mut rng = substream(seed, "eval-rollout", &[task.meta.seed, i as u64]);
        let out = responder.respond(task, &[], decode, &mut rng)?;
        total += score(task, &out, vocab);
    }
    Ok(total / tasks.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kinds: Vec<TaskKind>,
    pub horizons: Vec<usize>,
    pub n_per_cell: usize,
    pub seeds: Vec<u64>,
    pub decode: DecodeConfig,
    pub params: TaskParams,
}

impl SweepSpec {
    /// The configured evaluation ladder with seeds `seed, seed + 1, ...`.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            kinds: cfg.eval.long_kinds.clone(),
            horizons: cfg.eval.horizons.clone(),
            n_per_cell: cfg.eval.n_per_cell,
            seeds: (0..cfg.eval.seeds as u64).map(|i| cfg.seed + i).collect(),
            decode: cfg.eval_decode()?,
            params: cfg.tasks.params,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub kind: TaskKind,
    pub horizon: usize,
    pub mean: f64,
    pub std: f64,
    pub n_per_cell: usize,
    pub per_seed: Vec<f64>,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    pub fn cell(&self, kind: TaskKind, horizon: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.kind == kind && c.horizon == horizon)
    }

    /// Unweighted mean of the cell means.
    pub fn mean_accuracy(&self) -> f64 {
        self.cells.iter().map(|c| c.mean).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

pub fn horizon_sweep<R: Responder + ?Sized>(responder: &R, vocab: &Vocabulary, spec: &SweepSpec) -> Result<SweepReport> {
    if spec.kinds.is_empty() || spec.horizons.is_empty() {
        return Err(Error::input("empty horizon ladder"));
    }
    if spec.n_per_cell == 0 || spec.seeds.is_empty() {
        return Err(Error::input("sweep needs n_per_cell >= 1 and at least one seed"));
    }
    let mut cells = Vec::new();
    for &kind in &spec.kinds {
        for &h in &spec.horizons {
            let per_seed = spec
                .seeds
                .iter()
                .map(|&s| {
                    let tasks = eval_tasks(kind, h, &spec.params, vocab, spec.n_per_cell, s)?;
                    task_accuracy(responder, &tasks, vocab, &spec.decode, s)
                })
                .collect::<Result<Vec<_>>>()?;
            let st = aggregate_seeds(&per_seed)?;
            cells.push(SweepCell {
                kind,
                horizon: h,
                mean: st.mean,
                std: st.std,
                n_per_cell: spec.n_per_cell,
                per_seed,
                decode: spec.decode,
            });
        }
    }
    Ok(SweepReport { cells })
}

/// Mean accuracy over the configured long-context ladder for one seed.
pub fn long_horizon_accuracy<R: Responder + ?Sized>(responder: &R, cfg: &Config, seed: u64) -> Result<f64> {
    let mut spec = SweepSpec::from_config(cfg)?;
    spec.seeds = vec![seed];
    Ok(horizon_sweep(responder, &cfg.vocab()?, &spec)?.mean_accuracy())
}

/// Accuracy on short arithmetic for one seed.
pub fn short_accuracy<R: Responder + ?Sized>(responder: &R, cfg: &Config, seed: u64) -> Result<f64> {
    let vocab = cfg.vocab()?;
    let tasks = eval_tasks(TaskKind::ShortArith, 0, &cfg.tasks.params, &vocab, cfg.eval.n_per_cell, seed)?;
    task_accuracy(responder, &tasks, &vocab, &cfg.eval_decode()?, seed)
}

/// Mean sampled reward on `n` prompts drawn from the RL task mixture, with
/// `group_size` training-decode samples each.
pub fn sampled_reward<R: Responder + ?Sized>(responder: &R, cfg: &Config, n: usize, seed: u64) -> Result<f64> {
    let vocab = cfg.vocab()?;
    let mut probe_cfg = cfg.clone();
    probe_cfg.seed = seed;
    let mut stream = crate::trainer::task_stream(&probe_cfg, "reward-probe")?;
    let decode = cfg.training_decode();
    let g = cfg.stage2.group_size;
    let mut total = 0.0;
    for i in 0..n {
        let task = stream.next_task()?;
        for j in 0..g {
            let mut rng = substream(seed, "reward-probe-rollout", &[i as u64, j as u64]);
            total += score(&task, &responder.respond(&task, &[], &decode, &mut rng)?, &vocab);
        }
    }
    Ok(total / (n * g).max(1) as f64)
}
