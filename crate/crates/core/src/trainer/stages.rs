use std::time::Instant;

use rand::seq::SliceRandom;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::metrics::{MetricsRecord, Stage, METRICS_SCHEMA_VERSION};
use crate::config::{ColdStart, Config, OpdSampling, RlMethod, TeacherMode};
use crate::error::{Error, Result};
use crate::eval::teacher_forced_accuracy;
use crate::mdp::{rollout, Trajectory};
use crate::objectives::{average_results, dgrpo_objective, grpo_objective, kd_loss, opd_loss, sft_loss, GroupRollout, ObjectiveResult};
use crate::policy::{LinearSoftmax, Policy, PolicyKind, PolicyModel, TabularPolicy, Teacher, TeacherPolicy};
use crate::rng::substream;
use crate::tasks::{score, MixtureAccounts, MixtureSampler, TaskInstance, TaskKind, TaskSource};

/// Result of one training stage.
///
/// On divergence `failure` is set and `policy` is the last parameters that
/// produced finite values.
#[derive(Debug)]
pub struct StageOutput {
    pub policy: PolicyModel,
    pub metrics: Vec<MetricsRecord>,
    pub failure: Option<Error>,
}

pub fn init_policy(cfg: &Config) -> Result<PolicyModel> {
    let vocab = cfg.vocab()?;
    let mut rng = substream(cfg.seed, "init", &[]);
    let scale = cfg.policy.init_scale;
    Ok(match cfg.policy.kind {
        PolicyKind::Linear => PolicyModel::Linear(LinearSoftmax::random(vocab, cfg.features(), scale, &mut rng)?),
        PolicyKind::Tabular => PolicyModel::Tabular(TabularPolicy::random(vocab, scale, &mut rng)),
    })
}

/// The training mixture: short arithmetic interleaved with the configured
/// long-context families.
pub fn task_stream(cfg: &Config, tag: &str) -> Result<MixtureSampler> {
    let vocab = cfg.vocab()?;
    let p = cfg.tasks.params;
    let short = TaskSource::new(vec![TaskKind::ShortArith], vec![0], p, vocab, substream(cfg.seed, tag, &[0]))?;
    let long = TaskSource::new(
        cfg.tasks.long_kinds.clone(),
        cfg.tasks.horizons.clone(),
        p,
        vocab,
        substream(cfg.seed, tag, &[1]),
    )?;
    MixtureSampler::new(short, long, cfg.mixture)
}

/// The fixed cold-start corpus and the mixture accounts after drawing it.
pub fn stage1_corpus(cfg: &Config) -> Result<(Vec<TaskInstance>, MixtureAccounts)> {
    let mut stream = task_stream(cfg, "stage1-data")?;
    let corpus = (0..cfg.stage1.corpus_size)
        .map(|_| stream.next_task())
        .collect::<Result<Vec<_>>>()?;
    Ok((corpus, stream.accounts()))
}

/// Batches of task indices for every epoch, each closed once it holds at
/// least `batch_tokens` tokens.
pub fn stage1_batches(cfg: &Config, corpus: &[TaskInstance]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for epoch in 0..cfg.stage1.epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "stage1-shuffle", &[epoch as u64]));
        let mut batch = Vec::new();
        let mut tokens = 0;
        for i in order {
            batch.push(i);
            tokens += corpus[i].token_count();
            if tokens >= cfg.stage1.batch_tokens {
                out.push(std::mem::take(&mut batch));
                tokens = 0;
            }
        }
        if !batch.is_empty() {
            out.push(batch);
        }
    }
    out
}

/// Number of stage-1 optimizer updates `cfg` performs.
pub fn stage1_update_count(cfg: &Config) -> Result<usize> {
    if cfg.stage1.skip {
        return Ok(0);
    }
    let (corpus, _) = stage1_corpus(cfg)?;
    Ok(stage1_batches(cfg, &corpus).len())
}

fn adam_config(cfg: &Config, lr: f64, weight_decay: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: cfg.stage2.adam_beta1,
        beta2: cfg.stage2.adam_beta2,
        eps: cfg.stage2.adam_eps,
        weight_decay,
        grad_clip: Some(cfg.stage2.grad_clip),
    }
}

fn check_finite(res: &ObjectiveResult) -> Result<()> {
    if res.value.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("objective value {} is not finite", res.value)))
    }
}

fn elapsed(cfg: &Config, t0: Instant) -> Option<f64> {
    cfg.run.wall_clock.then(|| t0.elapsed().as_secs_f64() * 1e3)
}

/// Cold start: SFT or KD over a fixed corpus drawn from the mixture.
pub fn run_stage1(cfg: &Config, init: PolicyModel) -> Result<StageOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let (corpus, accounts) = stage1_corpus(cfg)?;
    let batches = stage1_batches(cfg, &corpus);
    let teacher = TeacherPolicy::Oracle {
        lambda: cfg.stage1.kd_lambda,
    };
    let opt = adam_config(cfg, cfg.stage1.lr, cfg.stage1.weight_decay);
    let mut state = AdamState::new(init.num_params());
    let mut policy = init;
    let mut metrics = Vec::new();
    for (k, idx) in batches.iter().enumerate() {
        let batch: Vec<TaskInstance> = idx.iter().map(|&i| corpus[i].clone()).collect();
        let step = (|| {
            let res = match cfg.stage1.method {
                ColdStart::Sft => sft_loss(&policy, &batch)?,
                ColdStart::Kd => kd_loss(&policy, &teacher, &batch)?,
            };
            check_finite(&res)?;
            let acc = teacher_forced_accuracy(&policy, &batch)?;
            let mut next = policy.clone();
            let stats = adam_step(next.params_mut(), &res.descent_grad(), &mut state, &opt)?;
            if next.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::numeric("parameters became non-finite"));
            }
            Ok((res, acc, stats, next))
        })();
        let (res, acc, stats, next) = match step {
            Ok(s) => s,
            Err(e) => {
                return Ok(StageOutput {
                    policy,
                    metrics,
                    failure: Some(e),
                })
            }
        };
        policy = next;
        metrics.push(MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            step: k as u64,
            stage: Stage::Stage1,
            stage_step: k as u64,
            method: cfg.stage1.method.to_string(),
            value: res.value,
            mean_reward: None,
            token_accuracy: Some(acc),
            mean_kl: res.diagnostics.mean_kl,
            clip_fraction: 0.0,
            mean_ratio: 1.0,
            grad_norm: stats.grad_norm,
            tokens: batch.iter().map(|t| t.token_count() as u64).sum(),
            long_token_share: accounts.long_share(),
            seed: cfg.seed,
            wall_time_ms: elapsed(cfg, t0),
        });
    }
    Ok(StageOutput {
        policy,
        metrics,
        failure: None,
    })
}

fn teacher_policy(cfg: &Config, start: &PolicyModel) -> Option<TeacherPolicy> {
    match cfg.stage2.teacher {
        TeacherMode::Oracle => Some(TeacherPolicy::Oracle {
            lambda: cfg.stage2.teacher_lambda,
        }),
        TeacherMode::SelfSnapshot => Some(TeacherPolicy::Snapshot(start.snapshot())),
        TeacherMode::None => None,
    }
}

struct Update {
    first: ObjectiveResult,
    clip_fraction: f64,
    mean_ratio: f64,
    grad_norm: f64,
    next: PolicyModel,
}

/// Runs `inner_epochs` Adam updates of the objective `f` against the data
/// collected under the frozen behavior policy.
fn inner_updates<F>(cfg: &Config, policy: &PolicyModel, state: &mut AdamState, opt: &AdamConfig, mut f: F) -> Result<Update>
where
    F: FnMut(&PolicyModel) -> Result<ObjectiveResult>,
{
    let mut next = policy.clone();
    let mut first = None;
    let (mut clip, mut ratio) = (0.0, 0.0);
    let mut grad_norm = 0.0;
    let epochs = cfg.stage2.inner_epochs;
    for e in 0..epochs {
        let res = f(&next)?;
        check_finite(&res)?;
        clip += res.diagnostics.clip_fraction;
        ratio += res.diagnostics.mean_ratio;
        let stats = adam_step(next.params_mut(), &res.descent_grad(), state, opt)?;
        if next.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("parameters became non-finite"));
        }
        if e == 0 {
            grad_norm = stats.grad_norm;
            first = Some(res);
        }
    }
    Ok(Update {
        first: first.expect("inner_epochs >= 1"),
        clip_fraction: clip / epochs as f64,
        mean_ratio: ratio / epochs as f64,
        grad_norm,
        next,
    })
}

/// RL stage: GRPO, on-policy distillation or dGRPO, per `cfg.stage2.method`.
///
/// `step_offset` is added to the run-wide step index in the metrics.
pub fn run_stage2(cfg: &Config, start: PolicyModel, step_offset: u64) -> Result<StageOutput> {
    run_stage2_observed(cfg, start, step_offset, &mut |_, _| {})
}

/// [`run_stage2`], calling `observe(stage_step, &policy)` after every update.
pub fn run_stage2_observed(
    cfg: &Config,
    start: PolicyModel,
    step_offset: u64,
    observe: &mut dyn FnMut(u64, &PolicyModel),
) -> Result<StageOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let vocab = cfg.vocab()?;
    let s2 = &cfg.stage2;
    let teacher = teacher_policy(cfg, &start);
    let decode = cfg.training_decode();
    let mut stream = task_stream(cfg, "stage2-data")?;
    let opt = adam_config(cfg, s2.lr, 0.0);
    let mut state = AdamState::new(start.num_params());
    let mut policy = start;
    let mut metrics = Vec::new();
    for step in 0..s2.steps {
        let behavior = policy.snapshot();
        let outcome = (|| -> Result<(Update, f64, u64)> {
            let roll = |prompt: &[u32], i: usize| -> Result<Trajectory> {
                let mut rng = substream(cfg.seed, "stage2-rollout", &[step as u64, i as u64]);
                rollout(&behavior, prompt, &decode, &mut rng)
            };
            let (g, per) = (s2.group_size, s2.prompts_per_step);
            match s2.method {
                RlMethod::Grpo | RlMethod::Dgrpo => {
                    let mut groups = Vec::with_capacity(per);
                    for p in 0..per {
                        let task = stream.next_task()?;
                        let mut trajs = (0..g)
                            .map(|j| roll(&task.prompt, p * g + j))
                            .collect::<Result<Vec<_>>>()?;
                        for t in &mut trajs {
                            t.reward = Some(score(&task, &t.output, &vocab));
                        }
                        let teacher = match (&teacher, s2.method) {
                            (Some(tp), RlMethod::Dgrpo) => Some(tp.for_task(&task, &vocab)?),
                            _ => None,
                        };
                        groups.push((GroupRollout::new(trajs)?, teacher));
                    }
                    let tokens = groups.iter().map(|(gr, _)| gr.token_count() as u64).sum();
                    let reward = groups.iter().map(|(gr, _)| gr.mean_reward()).sum::<f64>() / per as f64;
                    let up = inner_updates(cfg, &policy, &mut state, &opt, |p| {
                        let results = groups
                            .iter()
                            .map(|(gr, t)| match t {
                                Some(t) => dgrpo_objective(p, t, gr, s2.clip_eps, s2.beta),
                                None => grpo_objective(p, gr, s2.clip_eps),
                            })
                            .collect::<Result<Vec<_>>>()?;
                        average_results(results)
                    })?;
                    Ok((up, reward, tokens))
                }
                RlMethod::Opd => {
                    let tp = teacher.as_ref().expect("validated");
                    let n = g * per;
                    let mut pairs: Vec<(Teacher, Trajectory)> = Vec::with_capacity(n);
                    let mut reward = 0.0;
                    let mut task = None;
                    for i in 0..n {
                        let fresh = match s2.opd_sampling {
                            OpdSampling::Stream => true,
                            OpdSampling::Group => i % g == 0,
                        };
                        if fresh {
                            task = Some(stream.next_task()?);
                        }
                        let task = task.as_ref().expect("drawn above");
                        let mut t = roll(&task.prompt, i)?;
                        let r = score(task, &t.output, &vocab);
                        t.reward = Some(r);
                        reward += r;
                        pairs.push((tp.for_task(task, &vocab)?, t));
                    }
                    let reward = reward / n as f64;
                    let tokens = pairs.iter().map(|(_, t)| (t.prompt.len() + t.output.len()) as u64).sum();
                    let batch: Vec<(&Teacher, &Trajectory)> = pairs.iter().map(|(a, b)| (a, b)).collect();
                    let up = inner_updates(cfg, &policy, &mut state, &opt, |p| opd_loss(p, &batch))?;
                    Ok((up, reward, tokens))
                }
            }
        })();
        let (up, reward, tokens) = match outcome {
            Ok(o) => o,
            Err(e) => {
                return Ok(StageOutput {
                    policy,
                    metrics,
                    failure: Some(e),
                })
            }
        };
        policy = up.next;
        observe(step as u64, &policy);
        metrics.push(MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            step: step_offset + step as u64,
            stage: Stage::Stage2,
            stage_step: step as u64,
            method: s2.method.to_string(),
            value: up.first.value,
            mean_reward: Some(reward),
            token_accuracy: None,
            mean_kl: up.first.diagnostics.mean_kl,
            clip_fraction: up.clip_fraction,
            mean_ratio: up.mean_ratio,
            grad_norm: up.grad_norm,
            tokens,
            long_token_share: stream.accounts().long_share(),
            seed: cfg.seed,
            wall_time_ms: elapsed(cfg, t0),
        });
    }
    Ok(StageOutput {
        policy,
        metrics,
        failure: None,
    })
}
