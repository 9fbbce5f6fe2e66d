use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{TaskInstance, TaskMeta};
use crate::error::{Error, Result};
use crate::mdp::{Token, Vocabulary};
use crate::rng::{from_seed, LabRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    KeyRetrieval,
    MultiHop,
    LongForm,
    ShortArith,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::KeyRetrieval,
        TaskKind::MultiHop,
        TaskKind::LongForm,
        TaskKind::ShortArith,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::KeyRetrieval => "key_retrieval",
            TaskKind::MultiHop => "multi_hop",
            TaskKind::LongForm => "long_form",
            TaskKind::ShortArith => "short_arith",
        }
    }

    pub fn is_long(self) -> bool {
        self != TaskKind::ShortArith
    }

    /// Long-form answers are scored by the judge, everything else exactly.
    pub fn judged(self) -> bool {
        self == TaskKind::LongForm
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task kind `{s}`")))
    }
}

/// Generator parameters. `horizon` is the filler count `H`; long-form tasks
/// use `length` and `period` for the answer and `horizon` for the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub horizon: usize,
    pub hops: usize,
    pub length: usize,
    pub period: usize,
    /// Probability of a distractor pair (retrieval) or distractor fact.
    pub decoy_prob: f64,
    /// Per-filler probability of drawing an answer token instead.
    pub collide_prob: f64,
    pub arith_base: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            horizon: 8,
            hops: 2,
            length: 6,
            period: 2,
            decoy_prob: 0.25,
            collide_prob: 0.05,
            arith_base: 10,
        }
    }
}

impl TaskParams {
    pub fn with_horizon(self, horizon: usize) -> Self {
        Self { horizon, ..self }
    }

    fn validate(&self, kind: TaskKind, vocab: &Vocabulary) -> Result<()> {
        let prob_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !prob_ok(self.decoy_prob) || !prob_ok(self.collide_prob) {
            return Err(Error::input("decoy and collision probabilities must lie in [0, 1]"));
        }
        let answers = vocab.answer_count();
        match kind {
            TaskKind::KeyRetrieval if answers < 2 && self.decoy_prob > 0.0 => {
                Err(Error::input("retrieval decoys need at least 2 answer tokens"))
            }
            TaskKind::MultiHop if !(1..=2).contains(&self.hops) => {
                Err(Error::input(format!("hops = {} must be 1 or 2", self.hops)))
            }
            TaskKind::MultiHop if answers < 5 => {
                Err(Error::input("multi-hop tasks need at least 5 answer tokens"))
            }
            TaskKind::LongForm
                if self.period == 0
                    || self.length == 0
                    || self.length % self.period != 0
                    || self.period > answers =>
            {
                Err(Error::input(format!(
                    "long-form length {} must be a positive multiple of period {} (<= {answers})",
                    self.length, self.period
                )))
            }
            TaskKind::ShortArith if self.arith_base == 0 || self.arith_base > answers => {
                Err(Error::input(format!(
                    "arithmetic base {} must be in [1, {answers}]",
                    self.arith_base
                )))
            }
            _ => Ok(()),
        }
    }
}

fn answer_token(vocab: &Vocabulary, rng: &mut LabRng) -> Token {
    vocab.answer(rng.gen_range(0..vocab.answer_count()))
}

fn distinct_answers(vocab: &Vocabulary, n: usize, rng: &mut LabRng) -> Vec<Token> {
    let mut ids: Vec<usize> = (0..vocab.answer_count()).collect();
    ids.shuffle(rng);
    ids[..n].iter().map(|&i| vocab.answer(i)).collect()
}

fn fillers(vocab: &Vocabulary, n: usize, collide: f64, rng: &mut LabRng) -> Vec<Token> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(collide) {
                answer_token(vocab, rng)
            } else {
                vocab.filler(rng.gen_range(0..vocab.filler_count()))
            }
        })
        .collect()
}

fn insert_at_random(body: &mut Vec<Token>, block: &[Token], rng: &mut LabRng) {
    let at = rng.gen_range(0..=body.len());
    body.splice(at..at, block.iter().copied());
}

/// Generate one task.
///
/// * `key_retrieval`: `[BOS, KEY, k, filler x H, QUERY]` -> `[k, EOS]`
/// * `multi_hop`: facts `a ARROW b SEP b ARROW c` among `H` fillers, then
///   `QUERY a` -> `[c, EOS]` (or `[b, EOS]` with one hop)
/// * `long_form`: `[BOS, filler x H, SEP, pattern, pattern]` -> the pattern
///   repeated to length `L`, then EOS
/// * `short_arith`: `[BOS, d1, d2, d3, QUERY]` -> `[(d1+d2+d3) mod base, EOS]`
pub fn generate_task(
    kind: TaskKind,
    params: &TaskParams,
    vocab: &Vocabulary,
    rng: &mut LabRng,
) -> Result<TaskInstance> {
    params.validate(kind, vocab)?;
    let h = params.horizon;
    let mut meta = TaskMeta {
        seed: 0,
        fillers: h,
        hops: 0,
        period: 0,
        length: 0,
        decoy: false,
    };
    let (prompt, gold, horizon) = match kind {
        TaskKind::KeyRetrieval => {
            let k = answer_token(vocab, rng);
            let mut body = fillers(vocab, h, params.collide_prob, rng);
            if h > 0 && rng.gen_bool(params.decoy_prob) {
                let d = loop {
                    let d = answer_token(vocab, rng);
                    if d != k {
                        break d;
                    }
                };
                insert_at_random(&mut body, &[Vocabulary::SEP, d], rng);
                meta.decoy = true;
            }
            let mut prompt = vec![Vocabulary::BOS, Vocabulary::KEY, k];
            prompt.extend(body);
            prompt.push(Vocabulary::QUERY);
            (prompt, vec![k, Vocabulary::EOS], h)
        }
        TaskKind::MultiHop => {
            let e = distinct_answers(vocab, 5, rng);
            let (a, b, c) = (e[0], e[1], e[2]);
            let mut body = fillers(vocab, h, params.collide_prob, rng);
            if rng.gen_bool(params.decoy_prob) {
                insert_at_random(&mut body, &[e[3], Vocabulary::ARROW, e[4]], rng);
                meta.decoy = true;
            }
            let (facts, answer) = if params.hops == 2 {
                (vec![a, Vocabulary::ARROW, b, Vocabulary::SEP, b, Vocabulary::ARROW, c], c)
            } else {
                (vec![a, Vocabulary::ARROW, b], b)
            };
            insert_at_random(&mut body, &facts, rng);
            meta.hops = params.hops;
            let mut prompt = vec![Vocabulary::BOS];
            prompt.extend(body);
            prompt.extend([Vocabulary::QUERY, a]);
            (prompt, vec![answer, Vocabulary::EOS], h)
        }
        TaskKind::LongForm => {
            let pattern = distinct_answers(vocab, params.period, rng);
            let mut prompt = vec![Vocabulary::BOS];
            prompt.extend(fillers(vocab, h, params.collide_prob, rng));
            prompt.push(Vocabulary::SEP);
            prompt.extend(&pattern);
            prompt.extend(&pattern);
            let mut gold: Vec<Token> = pattern.iter().cycle().take(params.length).copied().collect();
            gold.push(Vocabulary::EOS);
            meta.period = params.period;
            meta.length = params.length;
            (prompt, gold, params.length)
        }
        TaskKind::ShortArith => {
            let base = params.arith_base;
            let digits: Vec<usize> = (0..3).map(|_| rng.gen_range(0..base)).collect();
            let sum = digits.iter().sum::<usize>() % base;
            let mut prompt = vec![Vocabulary::BOS];
            prompt.extend(digits.iter().map(|&d| vocab.answer(d)));
            prompt.push(Vocabulary::QUERY);
            meta.fillers = 0;
            (prompt, vec![vocab.answer(sum), Vocabulary::EOS], 0)
        }
    };
    Ok(TaskInstance {
        kind,
        prompt,
        gold,
        horizon,
        meta,
    })
}

/// [`generate_task`] from its own seed, recorded in `meta.seed`.
pub fn generate_task_seeded(
    kind: TaskKind,
    params: &TaskParams,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<TaskInstance> {
    let mut task = generate_task(kind, params, vocab, &mut from_seed(seed))?;
    task.meta.seed = seed;
    Ok(task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(32).unwrap()
    }

    #[test]
    fn retrieval_without_filler() {
        let v = vocab();
        let t = generate_task(TaskKind::KeyRetrieval, &TaskParams::default().with_horizon(0), &v, &mut from_seed(3))
            .unwrap();
        let k = t.gold[0];
        assert_eq!(t.prompt, vec![Vocabulary::BOS, Vocabulary::KEY, k, Vocabulary::QUERY]);
        assert_eq!(t.gold, vec![k, Vocabulary::EOS]);
    }

    #[test]
    fn two_hop_answer_follows_the_chain() {
        let v = vocab();
        for seed in 0..50 {
            let t = generate_task(TaskKind::MultiHop, &TaskParams::default(), &v, &mut from_seed(seed)).unwrap();
            let p = &t.prompt;
            let a = p[p.len() - 1];
            let succ = |x: Token| {
                (1..p.len() - 1)
                    .filter(|&i| p[i] == Vocabulary::ARROW && p[i - 1] == x)
                    .map(|i| p[i + 1])
                    .last()
            };
            assert_eq!(t.gold, vec![succ(succ(a).unwrap()).unwrap(), Vocabulary::EOS]);
        }
    }

    #[test]
    fn long_form_repeats_pattern() {
        let v = vocab();
        let params = TaskParams { length: 4, period: 2, horizon: 0, ..Default::default() };
        let t = generate_task(TaskKind::LongForm, &params, &v, &mut from_seed(9)).unwrap();
        let (x, y) = (t.prompt[2], t.prompt[3]);
        assert_eq!(t.gold, vec![x, y, x, y, Vocabulary::EOS]);
        assert_eq!(t.horizon, 4);
    }

    #[test]
    fn arithmetic_gold_is_the_sum() {
        let v = vocab();
        let t = generate_task(TaskKind::ShortArith, &TaskParams::default(), &v, &mut from_seed(5)).unwrap();
        let d: u32 = t.prompt[1..4].iter().map(|&x| x - 6).sum();
        assert_eq!(t.gold, vec![6 + d % 10, Vocabulary::EOS]);
    }

    #[test]
    fn rejects_bad_params() {
        let v = vocab();
        let mut rng = from_seed(0);
        let bad_hops = TaskParams { hops: 3, ..Default::default() };
        assert!(generate_task(TaskKind::MultiHop, &bad_hops, &v, &mut rng).is_err());
        let bad_len = TaskParams { length: 5, period: 2, ..Default::default() };
        assert!(generate_task(TaskKind::LongForm, &bad_len, &v, &mut rng).is_err());
        let bad_base = TaskParams { arith_base: 40, ..Default::default() };
        assert!(generate_task(TaskKind::ShortArith, &bad_base, &v, &mut rng).is_err());
    }

    #[test]
    fn fillers_never_contain_markers() {
        let v = vocab();
        for seed in 0..200 {
            let t = generate_task(TaskKind::KeyRetrieval, &TaskParams::default().with_horizon(64), &v, &mut from_seed(seed))
                .unwrap();
            let markers = t.prompt.iter().filter(|&&x| v.is_reserved(x)).count();
            assert_eq!(markers, 3 + usize::from(t.meta.decoy));
        }
    }
}
