//! Horizon-ladder evaluation, the exposure-bias probe, ablation runners,
//! seed statistics and the finite-difference gradient suite.

mod ablation;
mod gradsuite;
mod probe;
mod stats;
mod sweep;

pub use ablation::{
    ablation_points, run_ablation, AblationKind, AblationOptions, AblationPoint, AblationReport, AblationRow, AblationRun,
    SeedOutcome,
};
pub use gradsuite::{gradcheck_suite, GradSuiteRow, GRADCHECK_TOLERANCE};
pub use probe::{corrupt_prefix, exposure_bias_probe, probe_prefix_len, ProbePoint, ProbeReport};
pub use stats::{aggregate_seeds, SeedStats};
pub use sweep::{
    eval_tasks, horizon_sweep, long_horizon_accuracy, sampled_reward, short_accuracy, task_accuracy, SweepCell,
    SweepReport, SweepSpec,
};

use crate::error::Result;
use crate::mdp::{State, Token, Vocabulary};
use crate::policy::categorical::argmax;
use crate::policy::{sample_from_logits, sample_token, DecodeConfig, OracleTeacher, Policy};
use crate::rng::LabRng;
use crate::tasks::TaskInstance;

/// Anything that can answer a task: a policy, or the oracle itself.
pub trait Responder {
    /// Continue `task.prompt ++ prefix` until EOS or `decode.max_new_tokens`
    /// new tokens; returns only the newly generated tokens.
    fn respond(&self, task: &TaskInstance, prefix: &[Token], decode: &DecodeConfig, rng: &mut LabRng) -> Result<Vec<Token>>;
}

impl<P: Policy> Responder for P {
    fn respond(&self, task: &TaskInstance, prefix: &[Token], decode: &DecodeConfig, rng: &mut LabRng) -> Result<Vec<Token>> {
        let m = task.prompt.len();
        let mut tokens = task.prompt.clone();
        tokens.extend_from_slice(prefix);
        let start = tokens.len();
        for _ in 0..decode.max_new_tokens {
            let (tok, _) = sample_token(self, State::new(&tokens, m), decode, rng)?;
            tokens.push(tok);
            if tok == Vocabulary::EOS {
                break;
            }
        }
        Ok(tokens.split_off(start))
    }
}

/// Samples from the positional oracle teacher of each task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResponder {
    pub lambda: f64,
    pub vocab: Vocabulary,
}

impl Responder for OracleResponder {
    fn respond(&self, task: &TaskInstance, prefix: &[Token], decode: &DecodeConfig, rng: &mut LabRng) -> Result<Vec<Token>> {
        let teacher = OracleTeacher::new(task.gold.clone(), self.lambda, self.vocab.size())?;
        let m = task.prompt.len();
        let mut tokens = task.prompt.clone();
        tokens.extend_from_slice(prefix);
        let start = tokens.len();
        for _ in 0..decode.max_new_tokens {
            let state = State::new(&tokens, m);
            let tok = if self.lambda == 0.0 {
                teacher.target(state.position())
            } else {
                sample_from_logits(&teacher.log_probs(state), decode, rng)?.0
            };
            tokens.push(tok);
            if tok == Vocabulary::EOS {
                break;
            }
        }
        Ok(tokens.split_off(start))
    }
}

/// Share of gold positions where the policy's most likely next token is the
/// gold token, with the gold prefix fed in.
pub fn teacher_forced_accuracy<P: Policy + ?Sized>(policy: &P, tasks: &[TaskInstance]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for task in tasks {
        let m = task.prompt.len();
        let mut tokens = task.prompt.clone();
        for &g in &task.gold {
            let a = argmax(&policy.logits(State::new(&tokens, m)));
            hit += usize::from(a as Token == g);
            total += 1;
            tokens.push(g);
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}
