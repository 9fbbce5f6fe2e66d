use super::{Diagnostics, ObjectiveResult};
use crate::error::{Error, Result};
use crate::mdp::State;
use crate::policy::categorical::{kl_divergence, probs};
use crate::policy::{accumulate_grad_at, log_probs, Policy, TeacherPolicy};
use crate::tasks::TaskInstance;

/// Visit every gold prefix `(x, y_<t)` of `task` with its target `y_t`.
fn for_each_gold_prefix<F>(task: &TaskInstance, mut f: F) -> Result<()>
where
    F: FnMut(State<'_>, usize) -> Result<()>,
{
    let m = task.prompt.len();
    let mut buf = task.prompt.clone();
    buf.extend_from_slice(&task.gold);
    for t in 0..task.gold.len() {
        f(State::new(&buf[..m + t], m), task.gold[t] as usize)?;
    }
    Ok(())
}

/// Mean over examples of `sum_t -log pi(y_t | x, y_<t)`.
pub fn sft_loss<P: Policy + ?Sized>(policy: &P, batch: &[TaskInstance]) -> Result<ObjectiveResult> {
    if batch.is_empty() {
        return Err(Error::input("empty SFT batch"));
    }
    let v = policy.vocab().size();
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut value = 0.0;
    let mut tokens = 0;
    let mut w = vec![0.0; v];
    for task in batch {
        let mut nll = 0.0;
        for_each_gold_prefix(task, |state, y| {
            let lp = log_probs(policy, state)?;
            nll -= lp[y];
            w[y] = -scale;
            accumulate_grad_at(policy, state, &lp, &w, &mut grad);
            w[y] = 0.0;
            tokens += 1;
            Ok(())
        })?;
        value += scale * nll;
    }
    Ok(ObjectiveResult {
        value,
        grad,
        diagnostics: Diagnostics::loss(tokens),
    })
}

/// Mean over examples of `sum_t KL(teacher(.|x, y_<t) || student(.|x, y_<t))`.
/// The teacher is held constant.
pub fn kd_loss<P: Policy + ?Sized>(
    policy: &P,
    teacher: &TeacherPolicy,
    batch: &[TaskInstance],
) -> Result<ObjectiveResult> {
    if batch.is_empty() {
        return Err(Error::input("empty KD batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; policy.num_params()];
    let mut value = 0.0;
    let mut tokens = 0;
    let mut kl_total = 0.0;
    for task in batch {
        let teacher = teacher.for_task(task, policy.vocab())?;
        let mut kl_sum = 0.0;
        for_each_gold_prefix(task, |state, _| {
            let lp = log_probs(policy, state)?;
            let lq = teacher.log_probs(state)?;
            kl_sum += kl_divergence(&lq, &lp)?;
            let w: Vec<f64> = probs(&lq).iter().map(|q| -scale * q).collect();
            accumulate_grad_at(policy, state, &lp, &w, &mut grad);
            tokens += 1;
            Ok(())
        })?;
        value += scale * kl_sum;
        kl_total += kl_sum;
    }
    let mut diagnostics = Diagnostics::loss(tokens);
    diagnostics.mean_kl = Some(kl_total / tokens.max(1) as f64);
    Ok(ObjectiveResult {
        value,
        grad,
        diagnostics,
    })
}
