use super::{Convention, Diagnostics, GroupRollout, ObjectiveResult};
use crate::error::{Error, Result};
use crate::mdp::Trajectory;
use crate::policy::categorical::{kl_divergence, reverse_kl_with_weights};
use crate::policy::{accumulate_grad_at, log_probs, Policy, Teacher};

/// `min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

/// `D_KL(student || teacher)` for two distributions given as probabilities.
pub fn token_reverse_kl(student: &[f64], teacher: &[f64]) -> Result<f64> {
    if student.len() != teacher.len() {
        return Err(Error::input("distributions over different vocabularies"));
    }
    let ls: Vec<f64> = student.iter().map(|p| p.ln()).collect();
    let lt: Vec<f64> = teacher.iter().map(|p| p.ln()).collect();
    kl_divergence(&ls, &lt)
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::input(format!("clip epsilon {eps} outside (0, 1)")));
    }
    Ok(())
}

fn check_behavior(traj: &Trajectory) -> Result<()> {
    if traj.output.is_empty() {
        return Err(Error::input("trajectory with empty output"));
    }
    if traj.behavior_logprobs.len() != traj.output.len() {
        return Err(Error::input(format!(
            "missing behavior logprobs: {} for {} output tokens",
            traj.behavior_logprobs.len(),
            traj.output.len()
        )));
    }
    Ok(())
}

struct SurrogatePass {
    value: f64,
    grad: Vec<f64>,
    clipped: usize,
    ratio_sum: f64,
    tokens: usize,
}

/// The clipped policy-gradient term, with advantages and behavior
/// log-probabilities held constant.
///
/// Uses `min(rho A, rho_bar A) = A + min((rho - 1) A, (rho_bar - 1) A)` and
/// drops the parameter-free term `(1/G) sum_i A_i`, which vanishes because
/// advantages are mean-centred. The reported value is therefore exactly 0
/// whenever every ratio is exactly 1.
fn surrogate_pass<P: Policy + ?Sized>(policy: &P, group: &GroupRollout, eps: f64) -> Result<SurrogatePass> {
    check_eps(eps)?;
    let g = group.size();
    if g == 0 || group.advantages.len() != g {
        return Err(Error::input("group advantages do not match trajectories"));
    }
    let v = policy.vocab().size();
    let mut pass = SurrogatePass {
        value: 0.0,
        grad: vec![0.0; policy.num_params()],
        clipped: 0,
        ratio_sum: 0.0,
        tokens: 0,
    };
    let mut w = vec![0.0; v];
    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        check_behavior(traj)?;
        let scale = 1.0 / (g as f64 * traj.output.len() as f64);
        let mut excess = 0.0;
        traj.for_each_step(|t, state, tok| {
            let lp = log_probs(policy, state)?;
            let ratio = (lp[tok as usize] - traj.behavior_logprobs[t]).exp();
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            if clipped != ratio {
                pass.clipped += 1;
            }
            pass.ratio_sum += ratio;
            pass.tokens += 1;
            let free = (ratio - 1.0) * adv;
            let held = (clipped - 1.0) * adv;
            excess += free.min(held);
            if free <= held && adv != 0.0 {
                w[tok as usize] = scale * ratio * adv;
                accumulate_grad_at(policy, state, &lp, &w, &mut pass.grad);
                w[tok as usize] = 0.0;
            }
            Ok(())
        })?;
        pass.value += scale * excess;
    }
    Ok(pass)
}

/// Length-normalised reverse KL summed over trajectories, each scaled by
/// `1 / (n |o_i|)`. Returns (value, gradient).
fn reverse_kl_pass<P: Policy + ?Sized>(
    policy: &P,
    batch: &[(&Teacher, &Trajectory)],
) -> Result<(f64, Vec<f64>, usize)> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut value = 0.0;
    let mut tokens = 0;
    for (teacher, traj) in batch {
        if traj.output.is_empty() {
            return Err(Error::input("trajectory with empty output"));
        }
        let scale = 1.0 / (n * traj.output.len() as f64);
        let mut kl_sum = 0.0;
        traj.for_each_step(|_, state, _| {
            let lp = log_probs(policy, state)?;
            let lq = teacher.log_probs(state)?;
            let (kl, mut w) = reverse_kl_with_weights(&lp, &lq)?;
            kl_sum += kl;
            for x in &mut w {
                *x *= scale;
            }
            accumulate_grad_at(policy, state, &lp, &w, &mut grad);
            tokens += 1;
            Ok(())
        })?;
        value += scale * kl_sum;
    }
    Ok((value, grad, tokens))
}

/// GRPO objective
/// `(1/G) sum_i (1/|o_i|) sum_t min(rho_it A_i, clip(rho_it) A_i)`
/// with `rho_it = exp(log pi(o_it) - behavior logprob)`.
pub fn grpo_objective<P: Policy + ?Sized>(policy: &P, group: &GroupRollout, eps: f64) -> Result<ObjectiveResult> {
    let pass = surrogate_pass(policy, group, eps)?;
    Ok(ObjectiveResult {
        value: pass.value,
        grad: pass.grad,
        diagnostics: Diagnostics {
            convention: Convention::Objective,
            clip_fraction: pass.clipped as f64 / pass.tokens as f64,
            mean_ratio: pass.ratio_sum / pass.tokens as f64,
            mean_kl: None,
            tokens: pass.tokens,
        },
    })
}

/// On-policy distillation loss: mean over trajectories of the
/// length-normalised reverse KL to the teacher at the visited prefixes.
pub fn opd_loss<P: Policy + ?Sized>(policy: &P, batch: &[(&Teacher, &Trajectory)]) -> Result<ObjectiveResult> {
    if batch.is_empty() {
        return Err(Error::input("empty OPD batch"));
    }
    let (value, grad, tokens) = reverse_kl_pass(policy, batch)?;
    let mut diagnostics = Diagnostics::loss(tokens);
    diagnostics.mean_kl = Some(value);
    Ok(ObjectiveResult {
        value,
        grad,
        diagnostics,
    })
}

/// dGRPO: the GRPO surrogate minus `beta` times the reverse KL to the
/// teacher, evaluated exactly at the sampled prefixes (not importance
/// weighted, outside the min).
pub fn dgrpo_objective<P: Policy + ?Sized>(
    policy: &P,
    teacher: &Teacher,
    group: &GroupRollout,
    eps: f64,
    beta: f64,
) -> Result<ObjectiveResult> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::input(format!("beta = {beta} must be >= 0")));
    }
    let mut res = grpo_objective(policy, group, eps)?;
    let batch: Vec<(&Teacher, &Trajectory)> = group.trajectories.iter().map(|t| (teacher, t)).collect();
    if beta == 0.0 {
        // the KL only feeds diagnostics; a teacher without support is not an error here
        res.diagnostics.mean_kl = reverse_kl_pass(policy, &batch).ok().map(|(kl, _, _)| kl);
        return Ok(res);
    }
    let (kl, kl_grad, _) = reverse_kl_pass(policy, &batch)?;
    res.value -= beta * kl;
    for (g, k) in res.grad.iter_mut().zip(&kl_grad) {
        *g -= beta * k;
    }
    res.diagnostics.mean_kl = Some(kl);
    Ok(res)
}
