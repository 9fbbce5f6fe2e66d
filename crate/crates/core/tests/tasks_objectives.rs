use dgrpo_lab::mdp::{rollout, State, Token, Trajectory, Vocabulary};
use dgrpo_lab::objectives::{
    clipped_surrogate, dgrpo_objective, finite_diff_check, grpo_objective, kd_loss, opd_loss, sft_loss,
    token_reverse_kl, Convention, FiniteDiff, GroupRollout,
};
use dgrpo_lab::policy::categorical::kl_divergence;
use dgrpo_lab::policy::{
    log_probs, DecodeConfig, FeatureConfig, LinearSoftmax, Policy, PolicyModel, TabularPolicy, Teacher,
    TeacherPolicy,
};
use dgrpo_lab::rng::{from_seed, substream};
use dgrpo_lab::tasks::{
    generate_task_seeded, judge_reward, verify_reward, MixtureConfig, MixtureSampler, TaskInstance, TaskKind,
    TaskParams, TaskSource,
};
use dgrpo_lab::Error;
use rand::Rng;

fn v32() -> Vocabulary {
    Vocabulary::new(32).unwrap()
}

fn task(kind: TaskKind, params: &TaskParams, seed: u64) -> TaskInstance {
    generate_task_seeded(kind, params, &v32(), seed).unwrap()
}

#[test]
fn retrieval_with_zero_filler() {
    let p = TaskParams {
        decoy_prob: 0.0,
        ..TaskParams::default().with_horizon(0)
    };
    for seed in 0..20 {
        let t = task(TaskKind::KeyRetrieval, &p, seed);
        let k = t.prompt[2];
        assert_eq!(t.prompt, vec![Vocabulary::BOS, Vocabulary::KEY, k, Vocabulary::QUERY]);
        assert_eq!(t.gold, vec![k, Vocabulary::EOS]);
    }
}

#[test]
fn long_form_period_two_length_four() {
    let p = TaskParams {
        length: 4,
        period: 2,
        ..TaskParams::default()
    };
    let t = task(TaskKind::LongForm, &p, 3);
    let (x, y) = (t.gold[0], t.gold[1]);
    assert_ne!(x, y);
    assert_eq!(t.gold, vec![x, y, x, y, Vocabulary::EOS]);
}

#[test]
fn multi_hop_follows_two_facts() {
    let p = TaskParams {
        decoy_prob: 0.0,
        ..TaskParams::default().with_horizon(4)
    };
    let t = task(TaskKind::MultiHop, &p, 9);
    let facts: Vec<(Token, Token)> = t
        .prompt
        .windows(3)
        .filter(|w| w[1] == Vocabulary::ARROW)
        .map(|w| (w[0], w[2]))
        .collect();
    let q = t.prompt[t.prompt.iter().position(|&x| x == Vocabulary::QUERY).unwrap() + 1];
    let hop = |a: Token| facts.iter().find(|f| f.0 == a).unwrap().1;
    assert_eq!(t.gold, vec![hop(hop(q)), Vocabulary::EOS]);
}

#[test]
fn out_of_range_params_are_input_errors() {
    let bad = TaskParams {
        hops: 3,
        ..TaskParams::default()
    };
    let err = generate_task_seeded(TaskKind::MultiHop, &bad, &v32(), 0).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
    let bad = TaskParams {
        length: 5,
        period: 2,
        ..TaskParams::default()
    };
    assert!(generate_task_seeded(TaskKind::LongForm, &bad, &v32(), 0).is_err());
}

#[test]
fn every_task_is_solved_by_its_gold() {
    let vocab = v32();
    let mut rng = from_seed(77);
    for i in 0..10_000u64 {
        let kind = TaskKind::ALL[(i % 4) as usize];
        let h = [0, 8, 16, 32, 64, 128, 256][rng.gen_range(0..7)];
        let t = task(kind, &TaskParams::default().with_horizon(h), rng.gen());
        assert_eq!(t.prompt[0], Vocabulary::BOS);
        assert_eq!(*t.gold.last().unwrap(), Vocabulary::EOS);
        assert_eq!(verify_reward(&t, &t.gold), 1);
        assert_eq!(judge_reward(&t, &t.gold, &vocab), 1);
    }
}

#[test]
fn judge_is_at_least_as_permissive_as_verification() {
    let vocab = v32();
    let mut rng = from_seed(78);
    for i in 0..2_000u64 {
        let kind = TaskKind::ALL[(i % 4) as usize];
        let t = task(kind, &TaskParams::default(), rng.gen());
        let mut out = t.gold.clone();
        match rng.gen_range(0..4) {
            0 => out.insert(0, vocab.filler(rng.gen_range(0..vocab.filler_count()))),
            1 => out[0] = rng.gen_range(0..32),
            2 => {
                out.pop();
            }
            _ => {}
        }
        assert!(judge_reward(&t, &out, &vocab) >= verify_reward(&t, &out));
    }
}

#[test]
fn prompt_length_grows_linearly_in_the_horizon() {
    for kind in [TaskKind::KeyRetrieval, TaskKind::MultiHop] {
        let p = TaskParams {
            decoy_prob: 0.0,
            ..TaskParams::default()
        };
        let lens: Vec<usize> = [0, 8, 16, 32]
            .iter()
            .map(|&h| task(kind, &p.with_horizon(h), 1).prompt.len())
            .collect();
        assert_eq!(lens[1] - lens[0], 8, "{kind:?}");
        assert_eq!(lens[2] - lens[1], 8, "{kind:?}");
        assert_eq!(lens[3] - lens[2], 16, "{kind:?}");
    }
    for l in [2, 4, 8] {
        let p = TaskParams {
            length: l,
            ..TaskParams::default()
        };
        assert_eq!(task(TaskKind::LongForm, &p, 2).gold.len(), l + 1);
    }
}

#[test]
fn mixture_share_over_a_hundred_thousand_tokens() {
    let vocab = v32();
    let short = TaskSource::new(vec![TaskKind::ShortArith], vec![0], TaskParams::default(), vocab, from_seed(1)).unwrap();
    let long = TaskSource::new(
        vec![TaskKind::KeyRetrieval, TaskKind::MultiHop],
        vec![8, 16, 32, 64, 128, 256],
        TaskParams::default(),
        vocab,
        from_seed(2),
    )
    .unwrap();
    let mut m = MixtureSampler::new(short, long, MixtureConfig { long_fraction: 0.9 }).unwrap();
    let mut counted = 0u64;
    while m.accounts().total_tokens() < 100_000 {
        let t = m.next_task().unwrap();
        counted += t.token_count() as u64;
    }
    let a = m.accounts();
    assert_eq!(counted, a.total_tokens());
    assert!((a.long_share() - 0.9).abs() <= 0.02, "{a:?}");
}

// objectives

fn kr_batch(n: u64) -> Vec<TaskInstance> {
    (0..n).map(|s| task(TaskKind::KeyRetrieval, &TaskParams::default(), s)).collect()
}

fn linear(seed: u64, scale: f64) -> LinearSoftmax {
    LinearSoftmax::random(v32(), FeatureConfig::default(), scale, &mut from_seed(seed)).unwrap()
}

#[test]
fn sft_of_a_perfect_policy_is_zero() {
    let p = TaskParams {
        decoy_prob: 0.0,
        ..TaskParams::default().with_horizon(0)
    };
    let t = task(TaskKind::KeyRetrieval, &p, 4);
    let mut pol = TabularPolicy::zeros(v32());
    let mut row = vec![-1e6; 32];
    row[t.gold[0] as usize] = 0.0;
    pol.set_row(Vocabulary::QUERY as usize, &row);
    let mut row = vec![-1e6; 32];
    row[Vocabulary::EOS as usize] = 0.0;
    pol.set_row(t.gold[0] as usize, &row);
    let res = sft_loss(&pol, &[t]).unwrap();
    assert_eq!(res.value, 0.0);
}

#[test]
fn sft_of_a_uniform_policy_is_length_times_log_v() {
    let p = TaskParams {
        length: 2,
        period: 2,
        ..TaskParams::default()
    };
    let t = task(TaskKind::LongForm, &p, 1);
    assert_eq!(t.gold.len(), 3);
    let res = sft_loss(&TabularPolicy::zeros(v32()), &[t]).unwrap();
    assert!((res.value - 3.0 * 32f64.ln()).abs() < 1e-12);
    assert_eq!(res.diagnostics.convention, Convention::Loss);
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let pol = linear(3, 0.3);
    let batch = kr_batch(1);
    let res = sft_loss(&pol, &batch).unwrap();
    let report = finite_diff_check(
        |theta| Ok(sft_loss(&LinearSoftmax::from_params(v32(), FeatureConfig::default(), theta.to_vec())?, &batch)?.value),
        pol.params(),
        &res.grad,
        &FiniteDiff::default(),
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn kd_against_itself_is_stationary() {
    let pol = PolicyModel::Linear(linear(4, 0.5));
    let res = kd_loss(&pol, &TeacherPolicy::Snapshot(pol.snapshot()), &kr_batch(3)).unwrap();
    assert_eq!(res.value, 0.0);
    // the teacher weights sum to one only up to rounding
    let worst = res.grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-14, "{worst}");
}

#[test]
fn kd_with_one_hot_teacher_on_uniform_student() {
    let res = kd_loss(
        &TabularPolicy::zeros(v32()),
        &TeacherPolicy::Oracle { lambda: 0.0 },
        &kr_batch(1),
    )
    .unwrap();
    assert!((res.value - 2.0 * 32f64.ln()).abs() < 1e-12);
}

#[test]
fn two_point_forward_kl() {
    let t = [0.7f64.ln(), 0.3f64.ln()];
    let s = [0.5f64.ln(), 0.5f64.ln()];
    let direct = 0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln();
    assert!((kl_divergence(&t, &s).unwrap() - direct).abs() < 1e-15);
    assert!((direct - 0.0823).abs() < 1e-4);
}

#[test]
fn forward_kl_reports_student_support_violations() {
    let student = [f64::NEG_INFINITY, 0.0];
    let teacher = [0.5f64.ln(), 0.5f64.ln()];
    assert!(matches!(kl_divergence(&teacher, &student), Err(Error::Numeric(_))));
}

#[test]
fn clipped_surrogate_examples() {
    for a in [-2.0, -0.3, 0.0, 0.7, 3.0] {
        assert_eq!(clipped_surrogate(1.0, a, 0.2), a);
    }
    assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
    assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
}

#[test]
fn clipped_surrogate_is_a_lower_bound() {
    let mut rng = from_seed(5);
    for _ in 0..10_000 {
        let rho = rng.gen_range(0.01..3.0);
        let a = rng.gen_range(-3.0..3.0);
        let eps = rng.gen_range(0.01..0.99);
        let v = clipped_surrogate(rho, a, eps);
        assert!(v <= rho * a);
        if (1.0 - eps..=1.0 + eps).contains(&rho) {
            assert_eq!(v, rho * a);
        }
    }
}

#[test]
fn reverse_kl_examples() {
    let p = [0.2, 0.3, 0.5];
    assert_eq!(token_reverse_kl(&p, &p).unwrap(), 0.0);
    assert!((token_reverse_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
    let kl = token_reverse_kl(&[0.7, 0.3], &[0.5, 0.5]).unwrap();
    assert!((kl - (0.7 * 1.4f64.ln() + 0.3 * 0.6f64.ln())).abs() < 1e-15);
    assert!(matches!(token_reverse_kl(&[0.5, 0.5], &[1.0, 0.0]), Err(Error::Numeric(_))));
}

#[test]
fn reverse_kl_is_nonnegative() {
    let mut rng = from_seed(6);
    for _ in 0..2_000 {
        let mut p: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..1.0)).collect();
        let mut q: Vec<f64> = (0..8).map(|_| rng.gen_range(0.01..1.0)).collect();
        let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
        p.iter_mut().for_each(|x| *x /= sp);
        q.iter_mut().for_each(|x| *x /= sq);
        assert!(token_reverse_kl(&p, &q).unwrap() >= 0.0);
    }
}

fn group(policy: &impl Policy, t: &TaskInstance, rewards: &[f64], seed: u64) -> GroupRollout {
    let trajs = rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            let mut tr = rollout(policy, &t.prompt, &DecodeConfig::training(6), &mut substream(seed, "g", &[i as u64])).unwrap();
            tr.reward = Some(r);
            tr
        })
        .collect();
    GroupRollout::new(trajs).unwrap()
}

const MIXED: [f64; 8] = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0];

#[test]
fn first_pass_grpo_value_is_exactly_zero() {
    for seed in 0..20 {
        let pol = PolicyModel::Linear(linear(seed, 0.5));
        let t = &kr_batch(seed + 1)[seed as usize];
        let g = group(&pol.snapshot(), t, &MIXED, seed);
        let res = grpo_objective(&pol, &g, 0.2).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.diagnostics.clip_fraction, 0.0);
        assert!(res.grad.iter().any(|x| *x != 0.0));
    }
}

#[test]
fn zero_variance_grpo_has_exactly_zero_gradient() {
    let pol = PolicyModel::Linear(linear(1, 0.5));
    let g = group(&pol.snapshot(), &kr_batch(1)[0], &[1.0; 8], 2);
    let res = grpo_objective(&pol, &g, 0.2).unwrap();
    assert_eq!(res.value, 0.0);
    assert!(res.grad.iter().all(|x| *x == 0.0));
}

#[test]
fn missing_behavior_logprobs_are_input_errors() {
    let pol = PolicyModel::Linear(linear(1, 0.5));
    let mut g = group(&pol.snapshot(), &kr_batch(1)[0], &MIXED, 2);
    g.trajectories[0].behavior_logprobs.clear();
    assert!(matches!(grpo_objective(&pol, &g, 0.2), Err(Error::Input(_))));
}

/// Group-baselined REINFORCE for the tabular policy, written out by hand:
/// `d log pi(a | prev) / d T[prev, b] = [a == b] - pi(b | prev)`.
fn reinforce_tabular(pol: &TabularPolicy, g: &GroupRollout) -> Vec<f64> {
    let v = 32;
    let table = pol.params();
    let mut grad = vec![0.0; v * v];
    for (tr, &adv) in g.trajectories.iter().zip(&g.advantages) {
        let all = tr.tokens();
        let m = tr.prompt.len();
        let scale = adv / (tr.output.len() as f64 * g.size() as f64);
        for t in 0..tr.output.len() {
            let prev = all[m + t - 1] as usize;
            let row = &table[prev * v..(prev + 1) * v];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            for b in 0..v {
                let pb = (row[b] - mx).exp() / z;
                let ind = if b == tr.output[t] as usize { 1.0 } else { 0.0 };
                grad[prev * v + b] += scale * (ind - pb);
            }
        }
    }
    grad
}

#[test]
fn first_pass_grpo_gradient_is_group_baselined_reinforce() {
    for seed in 0..10 {
        let pol = TabularPolicy::random(v32(), 1.0, &mut from_seed(seed));
        let model = PolicyModel::Tabular(pol.clone());
        let g = group(&model.snapshot(), &kr_batch(1)[0], &MIXED, seed);
        let res = grpo_objective(&pol, &g, 0.2).unwrap();
        let oracle = reinforce_tabular(&pol, &g);
        for (a, b) in res.grad.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

fn oracle_teacher(t: &TaskInstance, lambda: f64) -> Teacher {
    TeacherPolicy::Oracle { lambda }.for_task(t, &v32()).unwrap()
}

#[test]
fn opd_value_is_the_mean_of_per_position_kl() {
    let pol = PolicyModel::Linear(linear(2, 0.5));
    let tasks = kr_batch(4);
    let teachers: Vec<Teacher> = tasks.iter().map(|t| oracle_teacher(t, 0.1)).collect();
    let trajs: Vec<Trajectory> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| rollout(&pol, &t.prompt, &DecodeConfig::training(6), &mut from_seed(i as u64)).unwrap())
        .collect();
    let batch: Vec<(&Teacher, &Trajectory)> = teachers.iter().zip(&trajs).collect();
    let res = opd_loss(&pol, &batch).unwrap();
    let mut direct = 0.0;
    for (teacher, tr) in &batch {
        let mut s = 0.0;
        tr.for_each_step(|_, state, _| {
            let p: Vec<f64> = log_probs(&pol, state)?.iter().map(|l| l.exp()).collect();
            let q: Vec<f64> = teacher.log_probs(state)?.iter().map(|l| l.exp()).collect();
            s += token_reverse_kl(&p, &q)?;
            Ok(())
        })
        .unwrap();
        direct += s / tr.output.len() as f64;
    }
    direct /= batch.len() as f64;
    assert!((res.value - direct).abs() <= 1e-12, "{} vs {direct}", res.value);
}

#[test]
fn opd_against_itself_is_zero() {
    let pol = PolicyModel::Linear(linear(3, 0.5));
    let teacher = Teacher::Snapshot(pol.snapshot());
    let tasks = kr_batch(2);
    let trajs: Vec<Trajectory> = tasks
        .iter()
        .map(|t| rollout(&pol, &t.prompt, &DecodeConfig::training(6), &mut from_seed(1)).unwrap())
        .collect();
    let batch: Vec<(&Teacher, &Trajectory)> = trajs.iter().map(|t| (&teacher, t)).collect();
    let res = opd_loss(&pol, &batch).unwrap();
    assert_eq!(res.value, 0.0);
    assert!(res.grad.iter().all(|g| *g == 0.0));
}

#[test]
fn dgrpo_without_distillation_is_grpo_bitwise() {
    for seed in 0..10 {
        let pol = PolicyModel::Linear(linear(seed, 0.5));
        let t = &kr_batch(1)[0];
        let g = group(&pol.snapshot(), t, &MIXED, seed);
        let a = grpo_objective(&pol, &g, 0.2).unwrap();
        let b = dgrpo_objective(&pol, &oracle_teacher(t, 0.1), &g, 0.2, 0.0).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert!(a.grad.iter().zip(&b.grad).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn dgrpo_with_equal_rewards_is_the_scaled_kl_gradient() {
    let pol = PolicyModel::Linear(linear(5, 0.5));
    let t = &kr_batch(1)[0];
    let teacher = oracle_teacher(t, 0.1);
    let g = group(&pol.snapshot(), t, &[1.0; 8], 5);
    let d = dgrpo_objective(&pol, &teacher, &g, 0.2, 0.5).unwrap();
    let batch: Vec<(&Teacher, &Trajectory)> = g.trajectories.iter().map(|tr| (&teacher, tr)).collect();
    let kl = opd_loss(&pol, &batch).unwrap();
    assert!(d.grad.iter().zip(&kl.grad).all(|(x, y)| *x == -0.5 * y));
    assert_eq!(d.value, -0.5 * kl.value);
}

#[test]
fn negative_beta_is_rejected() {
    let pol = PolicyModel::Linear(linear(5, 0.5));
    let t = &kr_batch(1)[0];
    let g = group(&pol.snapshot(), t, &MIXED, 5);
    let err = dgrpo_objective(&pol, &oracle_teacher(t, 0.1), &g, 0.2, -0.1).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn dgrpo_gradient_matches_finite_differences() {
    let vocab = v32();
    let t = &kr_batch(1)[0];
    let teacher = oracle_teacher(t, 0.1);
    let behavior = TabularPolicy::random(vocab, 0.5, &mut from_seed(8));
    let g = group(&behavior, t, &MIXED, 8);
    let mut live = behavior.clone();
    let mut rng = from_seed(9);
    live.params_mut().iter_mut().for_each(|w| *w += rng.gen_range(-0.05..0.05));
    let res = dgrpo_objective(&live, &teacher, &g, 0.2, 0.5).unwrap();
    let report = finite_diff_check(
        |theta| Ok(dgrpo_objective(&TabularPolicy::from_params(vocab, theta.to_vec())?, &teacher, &g, 0.2, 0.5)?.value),
        live.params(),
        &res.grad,
        &FiniteDiff::default(),
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn student_states_see_prompt_and_output() {
    // the oracle teacher aligns on output position, not on absolute length
    let t = &kr_batch(1)[0];
    let teacher = oracle_teacher(t, 0.0);
    let mut tokens = t.prompt.clone();
    tokens.push(t.gold[0]);
    let lp = teacher.log_probs(State::new(&tokens, t.prompt.len())).unwrap();
    assert_eq!(lp[Vocabulary::EOS as usize], 0.0);
}
