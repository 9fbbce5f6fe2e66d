use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Responder;
use crate::error::{Error, Result};
use crate::mdp::{Token, Vocabulary};
use crate::policy::DecodeConfig;
use crate::rng::{substream, LabRng};
use crate::tasks::{score, TaskInstance};

/// Length of the teacher-forced prefix: half of the answer, rounded down.
pub fn probe_prefix_len(task: &TaskInstance) -> usize {
    task.answer().len() / 2
}

/// The first `len` gold tokens, each independently replaced with
/// probability `q` by a uniformly drawn answer token other than the gold one.
///
/// Two draws are consumed per position whatever `q` is, so for a fixed rng
/// state the corrupted positions at rate `q` are a subset of those at any
/// larger rate.
pub fn corrupt_prefix(task: &TaskInstance, len: usize, q: f64, vocab: &Vocabulary, rng: &mut LabRng) -> Vec<Token> {
    task.gold[..len]
        .iter()
        .map(|&g| {
            let u: f64 = rng.gen();
            let r: f64 = rng.gen();
            let choices: Vec<Token> = (0..vocab.answer_count()).map(|i| vocab.answer(i)).filter(|&a| a != g).collect();
            if u < q && !choices.is_empty() {
                choices[((r * choices.len() as f64) as usize).min(choices.len() - 1)]
            } else {
                g
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub q: f64,
    pub accuracy: f64,
    /// Share of prefix tokens actually corrupted.
    pub corrupted_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub label: String,
    pub tasks: usize,
    pub points: Vec<ProbePoint>,
}

impl ProbeReport {
    pub fn accuracy_at(&self, q: f64) -> Option<f64> {
        self.points.iter().find(|p| p.q == q).map(|p| p.accuracy)
    }
}

/// For each corruption rate, force a (possibly corrupted) gold prefix and
/// score the policy's completion against the rest of the gold answer.
///
/// The corruption pattern for task `i` is drawn from its own substream and
/// shared across rates, so a rate sweep compares like with like.
pub fn exposure_bias_probe<R: Responder + ?Sized>(
    responder: &R,
    label: &str,
    qs: &[f64],
    tasks: &[TaskInstance],
    vocab: &Vocabulary,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<ProbeReport> {
    if tasks.is_empty() {
        return Err(Error::input("exposure probe needs tasks"));
    }
    let mut points = Vec::with_capacity(qs.len());
    for &q in qs {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::input(format!("corruption rate {q} outside [0, 1]")));
        }
        let mut hits = 0.0;
        let (mut corrupted, mut forced) = (0usize, 0usize);
        for (i, task) in tasks.iter().enumerate() {
            let p = probe_prefix_len(task);
            let mut crng = substream(seed, "probe-corrupt", &[i as u64]);
            let prefix = corrupt_prefix(task, p, q, vocab, &mut crng);
            corrupted += prefix.iter().zip(&task.gold).filter(|(a, b)| a != b).count();
            forced += p;
            let mut suffix = task.clone();
            suffix.gold = task.gold[p..].to_vec();
            let mut d = *decode;
            d.max_new_tokens = d.max_new_tokens.saturating_sub(p).max(1);
            let mut rng = substream(seed, "probe-rollout", &[i as u64]);
            let out = responder.respond(task, &prefix, &d, &mut rng)?;
            hits += score(&suffix, &out, vocab);
        }
        points.push(ProbePoint {
            q,
            accuracy: hits / tasks.len() as f64,
            corrupted_share: if forced == 0 { 0.0 } else { corrupted as f64 / forced as f64 },
        });
    }
    Ok(ProbeReport {
        label: label.to_string(),
        tasks: tasks.len(),
        points,
    })
}
