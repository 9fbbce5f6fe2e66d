use dgrpo_lab::config::{Config, RlMethod};
use dgrpo_lab::eval::{
    ablation_points, aggregate_seeds, eval_tasks, exposure_bias_probe, horizon_sweep, run_ablation,
    task_accuracy, teacher_forced_accuracy, AblationKind, AblationOptions, OracleResponder, SweepSpec,
};
use dgrpo_lab::jsonl;
use dgrpo_lab::mdp::Vocabulary;
use dgrpo_lab::policy::{DecodeConfig, Policy, TabularPolicy};
use dgrpo_lab::rng::from_seed;
use dgrpo_lab::tasks::{TaskKind, TaskParams};
use dgrpo_lab::trainer::{
    adam_step, global_norm, init_policy, run_stage1, run_stage2, train_pipeline, AdamConfig, AdamState, Stage,
};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn adam(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.0,
        grad_clip: Some(1.0),
    }
}

#[test]
fn zero_gradient_leaves_params_unchanged() {
    let mut p = vec![0.3, -1.2, 4.0];
    let mut st = AdamState::new(3);
    adam_step(&mut p, &[0.0; 3], &mut st, &adam(1e-3)).unwrap();
    assert_eq!(p, vec![0.3, -1.2, 4.0]);
}

#[test]
fn norm_ten_gradient_is_clipped_to_one() {
    let g = [6.0, 8.0];
    let mut p = vec![0.0; 2];
    let stats = adam_step(&mut p, &g, &mut AdamState::new(2), &adam(1e-3)).unwrap();
    assert_eq!(stats.grad_norm, 10.0);
    assert!((stats.clip_scale * global_norm(&g) - 1.0).abs() < 1e-15);
}

#[test]
fn first_step_moves_each_coordinate_by_about_lr() {
    let mut p = vec![0.0; 3];
    adam_step(&mut p, &[0.2, -0.01, 0.5], &mut AdamState::new(3), &adam(1e-2)).unwrap();
    for x in p {
        assert!((x.abs() - 1e-2).abs() < 1e-7);
    }
}

fn quick() -> Config {
    let mut c = Config::desk();
    c.stage1.corpus_size = 40;
    c.stage2.steps = 20;
    c.stage2.prompts_per_step = 2;
    c.eval.n_per_cell = 20;
    c
}

#[test]
fn zero_epochs_return_the_initial_policy() {
    let mut c = quick();
    c.stage1.epochs = 0;
    let init = init_policy(&c).unwrap();
    let out = run_stage1(&c, init.clone()).unwrap();
    assert_eq!(out.policy, init);
    assert!(out.metrics.is_empty());
}

#[test]
fn stage1_is_reproducible() {
    let c = quick();
    let a = run_stage1(&c, init_policy(&c).unwrap()).unwrap();
    let b = run_stage1(&c, init_policy(&c).unwrap()).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(jsonl::to_string(&a.metrics).unwrap(), jsonl::to_string(&b.metrics).unwrap());
}

#[test]
fn stage1_learns_short_retrieval() {
    let mut accs = Vec::new();
    for seed in SEEDS {
        let mut c = Config::desk();
        c.seed = seed;
        c.set("tasks.long_kinds", "key_retrieval").unwrap();
        c.set("tasks.horizons", "8").unwrap();
        c.stage1.corpus_size = Config::default().stage1.corpus_size;
        let out = run_stage1(&c, init_policy(&c).unwrap()).unwrap();
        let tasks = eval_tasks(TaskKind::KeyRetrieval, 8, &c.tasks.params, &c.vocab().unwrap(), 100, seed + 100).unwrap();
        accs.push(teacher_forced_accuracy(&out.policy, &tasks).unwrap());
    }
    let mean = aggregate_seeds(&accs).unwrap().mean;
    assert!(mean > 0.9, "{accs:?}");
}

#[test]
fn zero_steps_keep_the_stage1_checkpoint() {
    let mut c = quick();
    c.stage2.steps = 0;
    let run = train_pipeline(&c).unwrap();
    assert_eq!(run.stage1, run.stage2);
    assert!(run.metrics.iter().all(|m| m.stage == Stage::Stage1));
}

#[test]
fn pipeline_is_reproducible() {
    let c = quick();
    let a = train_pipeline(&c).unwrap();
    let b = train_pipeline(&c).unwrap();
    assert_eq!(a.stage2, b.stage2);
    assert_eq!(jsonl::to_string(&a.metrics).unwrap(), jsonl::to_string(&b.metrics).unwrap());
}

#[test]
fn metrics_are_well_formed() {
    let mut c = quick();
    c.stage2.inner_epochs = 2;
    let run = train_pipeline(&c).unwrap();
    let mut last = None;
    for m in &run.metrics {
        assert!(last.is_none_or(|s| m.step > s));
        last = Some(m.step);
        assert!(m.value.is_finite() && m.grad_norm.is_finite());
        assert!((0.0..=1.0).contains(&m.clip_fraction));
        if let Some(r) = m.mean_reward {
            assert!((0.0..=1.0).contains(&r));
        }
        assert!(m.wall_time_ms.is_none());
    }
    let line = jsonl::to_string(&run.metrics[..1]).unwrap();
    assert!(line.starts_with("{\"schema_version\":1,"), "{line}");
}

#[test]
fn reused_rollouts_exercise_the_clip_path() {
    let mut c = quick();
    c.stage2.method = RlMethod::Grpo;
    c.stage2.inner_epochs = 4;
    c.stage2.lr = 0.2;
    let run = train_pipeline(&c).unwrap();
    let s2: Vec<_> = run.metrics.iter().filter(|m| m.stage == Stage::Stage2).collect();
    assert!(s2.iter().any(|m| m.mean_ratio != 1.0));
}

#[test]
fn distillation_raises_reward_over_its_first_step() {
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut c = Config::desk();
        c.seed = seed;
        c.set("tasks.long_kinds", "key_retrieval").unwrap();
        let s1 = run_stage1(&c, init_policy(&c).unwrap()).unwrap();
        let s2 = run_stage2(&c, s1.policy, 0).unwrap();
        let r: Vec<f64> = s2.metrics.iter().filter_map(|m| m.mean_reward).collect();
        assert_eq!(r.len(), 400);
        first.push(r[0]);
        last.push(aggregate_seeds(&r[300..]).unwrap().mean);
    }
    let (a, b) = (aggregate_seeds(&first).unwrap().mean, aggregate_seeds(&last).unwrap().mean);
    assert!(b > a, "final {b} vs first {a}");
}

#[test]
fn stochastic_training_decode_is_untruncated() {
    assert!(Config::default().training_decode().is_untransformed());
}

// eval

fn spec(kinds: Vec<TaskKind>, decode: DecodeConfig) -> SweepSpec {
    SweepSpec {
        kinds,
        horizons: vec![8, 16, 32, 64, 128, 256],
        n_per_cell: 50,
        seeds: SEEDS.to_vec(),
        decode,
        params: TaskParams::default(),
    }
}

#[test]
fn hard_oracle_solves_every_cell() {
    let vocab = Vocabulary::new(32).unwrap();
    let r = horizon_sweep(
        &OracleResponder { lambda: 0.0, vocab },
        &vocab,
        &spec(vec![TaskKind::KeyRetrieval, TaskKind::MultiHop, TaskKind::LongForm], DecodeConfig::greedy(16)),
    )
    .unwrap();
    assert_eq!(r.cells.len(), 18);
    assert!(r.cells.iter().all(|c| c.mean == 1.0 && c.std == 0.0));
}

#[test]
fn uniform_policy_is_at_chance_on_retrieval() {
    let vocab = Vocabulary::new(32).unwrap();
    let r = horizon_sweep(
        &TabularPolicy::zeros(vocab),
        &vocab,
        &spec(vec![TaskKind::KeyRetrieval], DecodeConfig::training(16)),
    )
    .unwrap();
    for c in &r.cells {
        assert!(c.mean <= 0.01, "H={} acc {}", c.horizon, c.mean);
    }
}

#[test]
fn identical_seeds_have_zero_spread() {
    let c = quick();
    let policy = train_pipeline(&c).unwrap().stage2;
    let vocab = c.vocab().unwrap();
    let mut s = spec(vec![TaskKind::KeyRetrieval, TaskKind::MultiHop], DecodeConfig::greedy(16));
    s.seeds = vec![3; 5];
    let r = horizon_sweep(&policy, &vocab, &s).unwrap();
    assert!(r.cells.iter().all(|c| c.std == 0.0));
}

#[test]
fn sweep_cells_do_not_depend_on_evaluation_order() {
    let c = quick();
    let policy = train_pipeline(&c).unwrap().stage2;
    let vocab = c.vocab().unwrap();
    let mut s = spec(vec![TaskKind::KeyRetrieval, TaskKind::MultiHop], DecodeConfig::greedy(16));
    s.n_per_cell = 20;
    let a = horizon_sweep(&policy, &vocab, &s).unwrap();
    s.kinds.reverse();
    s.horizons.reverse();
    let b = horizon_sweep(&policy, &vocab, &s).unwrap();
    for cell in &a.cells {
        assert_eq!(b.cell(cell.kind, cell.horizon), Some(cell));
    }
}

#[test]
fn probe_rates_bracket_standard_accuracy() {
    let mut c = quick();
    c.tasks.long_kinds.push(TaskKind::LongForm);
    let policy = train_pipeline(&c).unwrap().stage1;
    let vocab = c.vocab().unwrap();
    let decode = c.eval_decode().unwrap();
    let tasks = eval_tasks(TaskKind::LongForm, 32, &c.tasks.params, &vocab, 100, 7).unwrap();
    let report = exposure_bias_probe(&policy, "sft", &[0.0, 0.2, 1.0], &tasks, &vocab, &decode, 7).unwrap();
    let greedy = task_accuracy(&policy, &tasks, &vocab, &decode, 7).unwrap();
    // a correct greedy answer has a gold prefix, so the uncorrupted probe can only do better
    assert!(report.accuracy_at(0.0).unwrap() >= greedy);
    assert!(report.accuracy_at(1.0).unwrap() <= report.accuracy_at(0.0).unwrap());
    assert_eq!(report.points[0].corrupted_share, 0.0);
    assert_eq!(report.points[2].corrupted_share, 1.0);
}

#[test]
fn probe_at_zero_equals_greedy_accuracy_for_the_oracle() {
    let vocab = Vocabulary::new(32).unwrap();
    let oracle = OracleResponder { lambda: 0.0, vocab };
    let tasks = eval_tasks(TaskKind::LongForm, 16, &TaskParams::default(), &vocab, 50, 1).unwrap();
    let decode = DecodeConfig::greedy(16);
    let report = exposure_bias_probe(&oracle, "oracle", &[0.0], &tasks, &vocab, &decode, 1).unwrap();
    assert_eq!(report.accuracy_at(0.0), Some(task_accuracy(&oracle, &tasks, &vocab, &decode, 1).unwrap()));
}

fn small_ablation_base() -> Config {
    let mut c = quick();
    c.stage2.steps = 15;
    c
}

#[test]
fn zero_beta_arm_is_plain_grpo() {
    let base = small_ablation_base();
    let opts = AblationOptions {
        reward_window: 10,
        probe_prompts: 8,
    };
    let seeds = [0, 1];
    let beta = run_ablation(AblationKind::Beta, &ablation_points(AblationKind::Beta, "0,0.5").unwrap(), &base, &seeds, opts).unwrap();
    let grpo = run_ablation(AblationKind::Method, &ablation_points(AblationKind::Method, "grpo").unwrap(), &base, &seeds, opts).unwrap();
    let (a, b) = (beta.row("0").unwrap(), grpo.row("grpo").unwrap());
    for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
        assert_eq!(x.long_accuracy.to_bits(), y.long_accuracy.to_bits());
        assert_eq!(x.final_reward.to_bits(), y.final_reward.to_bits());
        assert_eq!(x.probe_reward.to_bits(), y.probe_reward.to_bits());
    }
    let runs = |r: &dgrpo_lab::eval::AblationReport, l: &str| -> Vec<(u64, u64)> {
        r.runs
            .iter()
            .filter(|x| x.label == l)
            .flat_map(|x| x.metrics.iter().map(|m| (m.value.to_bits(), m.grad_norm.to_bits())))
            .collect()
    };
    assert_eq!(runs(&beta, "0"), runs(&grpo, "grpo"));
    assert_eq!(beta.rows.len(), 2);
}

#[test]
fn teacher_rows_differ_only_in_the_teacher() {
    let base = small_ablation_base();
    let opts = AblationOptions {
        reward_window: 10,
        probe_prompts: 8,
    };
    let r = run_ablation(
        AblationKind::Teacher,
        &ablation_points(AblationKind::Teacher, "oracle:0.1,self").unwrap(),
        &base,
        &[0],
        opts,
    )
    .unwrap();
    assert_eq!(r.rows.len(), 2);
    let (a, b) = (&r.runs[0].config, &r.runs[1].config);
    let diff: Vec<&str> = a
        .entries()
        .into_iter()
        .zip(b.entries())
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0)
        .collect();
    assert!(diff.iter().all(|k| k.starts_with("stage2.teacher")), "{diff:?}");
    assert!(diff.contains(&"stage2.teacher"));
}

#[test]
fn aggregate_matches_the_direct_formula() {
    let mut rng = from_seed(4);
    for _ in 0..100 {
        let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        let s = aggregate_seeds(&xs).unwrap();
        assert!((s.mean - mean).abs() < 1e-15);
        assert!((s.std - var.sqrt()).abs() < 1e-15);
        assert_eq!(s.n, 5);
    }
}

#[test]
fn policies_expose_parameters() {
    let c = quick();
    assert_eq!(init_policy(&c).unwrap().num_params(), 32 * 338);
}
