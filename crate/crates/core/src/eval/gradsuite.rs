use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{rollout, Trajectory, Vocabulary};
use crate::error::Result;
use crate::objectives::{
    dgrpo_objective, finite_diff_check, grpo_objective, kd_loss, opd_loss, sft_loss, FiniteDiff, GroupRollout,
    ObjectiveResult, Probe,
};
use crate::policy::{
    log_prob, DecodeConfig, FeatureConfig, LinearSoftmax, Policy, PolicyKind, PolicyModel, TabularPolicy, Teacher,
    TeacherPolicy,
};
use crate::rng::{substream, LabRng};
use crate::tasks::{generate_task, TaskInstance, TaskKind, TaskParams};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const CLIP_EPS: f64 = 0.2;
/// Instances with a ratio this close to a clip boundary are redrawn: the
/// surrogate has a kink there.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteRow {
    pub objective: String,
    pub policy: PolicyKind,
    pub instances: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn tiny_vocab() -> Vocabulary {
    Vocabulary::new(16).expect("valid size")
}

fn tiny_params(rng: &mut LabRng) -> TaskParams {
    TaskParams {
        horizon: rng.gen_range(0..4),
        hops: rng.gen_range(1..=2),
        length: 4,
        period: 2,
        decoy_prob: 0.3,
        collide_prob: 0.1,
        arith_base: 4,
    }
}

fn tiny_task(rng: &mut LabRng) -> Result<TaskInstance> {
    let kind = TaskKind::ALL[rng.gen_range(0..TaskKind::ALL.len())];
    let p = tiny_params(rng);
    generate_task(kind, &p, &tiny_vocab(), rng)
}

fn random_model(kind: PolicyKind, scale: f64, rng: &mut LabRng) -> Result<PolicyModel> {
    let vocab = tiny_vocab();
    let fc = FeatureConfig {
        window: 1,
        position_buckets: 3,
        arith_base: 4,
    };
    Ok(match kind {
        PolicyKind::Linear => PolicyModel::Linear(LinearSoftmax::random(vocab, fc, scale, rng)?),
        PolicyKind::Tabular => PolicyModel::Tabular(TabularPolicy::random(vocab, scale, rng)),
    })
}

fn with_params(model: &PolicyModel, theta: &[f64]) -> PolicyModel {
    let mut m = model.clone();
    m.params_mut().copy_from_slice(theta);
    m
}

fn perturbed(model: &PolicyModel, scale: f64, rng: &mut LabRng) -> PolicyModel {
    let mut m = model.clone();
    for p in m.params_mut() {
        *p += rng.gen_range(-scale..=scale);
    }
    m
}

fn decode() -> DecodeConfig {
    DecodeConfig::training(4)
}

fn near_kink(policy: &PolicyModel, group: &GroupRollout) -> Result<bool> {
    for t in &group.trajectories {
        let mut kink = false;
        let mut k = 0;
        t.for_each_step(|_, state, tok| {
            let rho = (log_prob(policy, state, tok)? - t.behavior_logprobs[k]).exp();
            k += 1;
            kink |= (rho - (1.0 - CLIP_EPS)).abs() < KINK_MARGIN || (rho - (1.0 + CLIP_EPS)).abs() < KINK_MARGIN;
            Ok(())
        })?;
        if kink {
            return Ok(true);
        }
    }
    Ok(false)
}

fn random_group(behavior: &PolicyModel, rng: &mut LabRng) -> Result<(TaskInstance, GroupRollout)> {
    let task = tiny_task(rng)?;
    let g = rng.gen_range(2..=5);
    let mut trajs: Vec<Trajectory> = (0..g)
        .map(|_| rollout(behavior, &task.prompt, &decode(), rng))
        .collect::<Result<_>>()?;
    for t in &mut trajs {
        t.reward = Some(f64::from(rng.gen_range(0..=1u8)));
    }
    Ok((task, GroupRollout::new(trajs)?))
}

fn random_teacher(kind: PolicyKind, rng: &mut LabRng) -> Result<TeacherPolicy> {
    Ok(if rng.gen_bool(0.5) {
        TeacherPolicy::Oracle {
            lambda: rng.gen_range(0.05..0.6),
        }
    } else {
        TeacherPolicy::Snapshot(random_model(kind, 1.0, rng)?.snapshot())
    })
}

type Objective = Box<dyn Fn(&PolicyModel) -> Result<ObjectiveResult>>;

/// One randomized instance: the objective as a function of the policy.
fn instance(name: &str, kind: PolicyKind, policy: &PolicyModel, rng: &mut LabRng) -> Result<Objective> {
    let vocab = tiny_vocab();
    let batch = |rng: &mut LabRng| -> Result<Vec<TaskInstance>> { (0..rng.gen_range(1..=3)).map(|_| tiny_task(rng)).collect() };
    Ok(match name {
        "sft" => {
            let b = batch(rng)?;
            Box::new(move |p| sft_loss(p, &b))
        }
        "kd" => {
            let b = batch(rng)?;
            let t = random_teacher(kind, rng)?;
            Box::new(move |p| kd_loss(p, &t, &b))
        }
        "opd" => {
            let tp = random_teacher(kind, rng)?;
            let mut pairs = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                let task = tiny_task(rng)?;
                let traj = rollout(policy, &task.prompt, &decode(), rng)?;
                pairs.push((tp.for_task(&task, &vocab)?, traj));
            }
            Box::new(move |p| {
                let b: Vec<(&Teacher, &Trajectory)> = pairs.iter().map(|(a, b)| (a, b)).collect();
                opd_loss(p, &b)
            })
        }
        "grpo" | "dgrpo" => loop {
            let behavior = perturbed(policy, 0.3, rng);
            let (task, group) = random_group(&behavior, rng)?;
            if near_kink(policy, &group)? {
                continue;
            }
            if name == "grpo" {
                break Box::new(move |p| grpo_objective(p, &group, CLIP_EPS));
            }
            let teacher = random_teacher(kind, rng)?.for_task(&task, &vocab)?;
            let beta = rng.gen_range(0.05..1.0);
            break Box::new(move |p| dgrpo_objective(p, &teacher, &group, CLIP_EPS, beta));
        },
        _ => unreachable!("unknown objective {name}"),
    })
}

pub const SUITE_OBJECTIVES: [&str; 5] = ["sft", "kd", "grpo", "opd", "dgrpo"];

/// Central-difference check of every objective on `instances` random tiny
/// instances per policy family.
pub fn gradcheck_suite(instances: usize, seed: u64) -> Result<Vec<GradSuiteRow>> {
    let mut rows = Vec::new();
    for (oi, name) in SUITE_OBJECTIVES.iter().enumerate() {
        for (ki, kind) in [PolicyKind::Linear, PolicyKind::Tabular].into_iter().enumerate() {
            let mut worst: f64 = 0.0;
            for i in 0..instances {
                let mut rng = substream(seed, "gradcheck", &[oi as u64, ki as u64, i as u64]);
                let policy = random_model(kind, 1.0, &mut rng)?;
                let f = instance(name, kind, &policy, &mut rng)?;
                let res = f(&policy)?;
                let cfg = FiniteDiff {
                    probe: match kind {
                        PolicyKind::Tabular => Probe::Coordinates,
                        PolicyKind::Linear => Probe::Directions {
                            count: 6,
                            seed: rng.gen(),
                        },
                    },
                    ..FiniteDiff::default()
                };
                let report = finite_diff_check(
                    |theta| f(&with_params(&policy, theta)).map(|r| r.value),
                    policy.params(),
                    &res.grad,
                    &cfg,
                )?;
                worst = worst.max(report.max_rel_error);
            }
            rows.push(GradSuiteRow {
                objective: name.to_string(),
                policy: kind,
                instances,
                max_rel_error: worst,
                passed: worst <= GRADCHECK_TOLERANCE,
            });
        }
    }
    Ok(rows)
}
