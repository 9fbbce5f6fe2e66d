use super::TaskInstance;
use crate::error::{Error, Result};
use crate::mdp::{Token, Vocabulary};

/// Binary exact match: 1 iff `output == gold`, EOS included.
pub fn verify_reward(task: &TaskInstance, output: &[Token]) -> u8 {
    u8::from(output == task.gold.as_slice())
}

/// Reference-conditioned judge.
///
/// Truncates the response at its first EOS, strips leading and trailing
/// filler tokens, and answers 1 iff what remains equals the gold answer
/// content. Any out-of-vocabulary token makes the response malformed (0).
pub fn judge_reward(task: &TaskInstance, response: &[Token], vocab: &Vocabulary) -> u8 {
    if vocab.check_all(response).is_err() {
        return 0;
    }
    let end = response
        .iter()
        .position(|&t| t == Vocabulary::EOS)
        .unwrap_or(response.len());
    let body = &response[..end];
    let start = body.iter().position(|&t| !vocab.is_filler(t)).unwrap_or(body.len());
    let stop = body.iter().rposition(|&t| !vocab.is_filler(t)).map_or(start, |i| i + 1);
    u8::from(&body[start..stop] == task.answer())
}

/// Reward used during training: judged for long-form tasks, exact match
/// otherwise.
pub fn score(task: &TaskInstance, output: &[Token], vocab: &Vocabulary) -> f64 {
    let r = if task.kind.judged() {
        judge_reward(task, output, vocab)
    } else {
        verify_reward(task, output)
    };
    r as f64
}

/// The judge's reply: a single integer, optionally after `Answer:`.
pub fn render_verdict(verdict: u8) -> String {
    format!("Answer: {verdict}")
}

pub fn parse_verdict(reply: &str) -> Result<u8> {
    let body = reply.trim();
    let body = body.strip_prefix("Answer:").unwrap_or(body).trim();
    match body {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::input(format!("judge reply `{reply}` is not a single 0/1 integer"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::tasks::{generate_task, TaskKind, TaskParams};

    fn task() -> (TaskInstance, Vocabulary) {
        let v = Vocabulary::new(32).unwrap();
        let t = generate_task(TaskKind::KeyRetrieval, &TaskParams::default(), &v, &mut from_seed(1)).unwrap();
        (t, v)
    }

    #[test]
    fn exact_match_requires_eos_and_nothing_extra() {
        let (t, _) = task();
        let k = t.gold[0];
        assert_eq!(verify_reward(&t, &t.gold), 1);
        assert_eq!(verify_reward(&t, &[k]), 0);
        assert_eq!(verify_reward(&t, &[k, k, Vocabulary::EOS]), 0);
    }

    #[test]
    fn judge_normalises_filler() {
        let (t, v) = task();
        let k = t.gold[0];
        let f = v.filler(0);
        assert_eq!(judge_reward(&t, &t.gold, &v), 1);
        assert_eq!(judge_reward(&t, &[f, f, k, Vocabulary::EOS], &v), 1);
        assert_eq!(judge_reward(&t, &[k, f], &v), 1);
        let wrong = if k == v.answer(0) { v.answer(1) } else { v.answer(0) };
        assert_eq!(judge_reward(&t, &[wrong, Vocabulary::EOS], &v), 0);
        assert_eq!(judge_reward(&t, &[k, 999], &v), 0);
        assert_eq!(judge_reward(&t, &[], &v), 0);
    }

    #[test]
    fn verdict_contract() {
        assert_eq!(parse_verdict(&render_verdict(1)).unwrap(), 1);
        assert_eq!(parse_verdict("0").unwrap(), 0);
        assert!(parse_verdict("Answer: 1 because").is_err());
        assert!(parse_verdict("2").is_err());
    }
}
