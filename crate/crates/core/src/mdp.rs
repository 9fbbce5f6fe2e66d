//! Token-level MDP: states are token prefixes, actions are next tokens and
//! transitions append the chosen token.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{categorical::kl_divergence, log_probs, sample_token, DecodeConfig, Policy};
use crate::rng::LabRng;

pub type Token = u32;

/// Vocabulary layout: six reserved markers at ids `0..6`, then answer tokens
/// (keys, entities, digits, pattern symbols), then filler tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
    answer_count: usize,
}

impl Vocabulary {
    pub const BOS: Token = 0;
    pub const EOS: Token = 1;
    pub const KEY: Token = 2;
    pub const QUERY: Token = 3;
    pub const SEP: Token = 4;
    pub const ARROW: Token = 5;
    pub const RESERVED: usize = 6;

    /// Markers that own a "token after the most recent occurrence" register.
    pub const MARKERS: [Token; 4] = [Self::KEY, Self::QUERY, Self::SEP, Self::ARROW];

    /// Default split: roughly one third of the content ids are fillers.
    pub fn new(size: usize) -> Result<Self> {
        if size < 8 {
            return Err(Error::input(format!("vocabulary size {size} < 8")));
        }
        let content = size - Self::RESERVED;
        let fillers = (content / 3).max(1);
        Self::with_answer_count(size, content - fillers)
    }

    pub fn with_answer_count(size: usize, answer_count: usize) -> Result<Self> {
        if size < 8 {
            return Err(Error::input(format!("vocabulary size {size} < 8")));
        }
        let content = size - Self::RESERVED;
        if answer_count == 0 || answer_count >= content {
            return Err(Error::input(format!(
                "answer token count {answer_count} must be in [1, {content})"
            )));
        }
        Ok(Self { size, answer_count })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn answer_count(&self) -> usize {
        self.answer_count
    }

    pub fn filler_count(&self) -> usize {
        self.size - Self::RESERVED - self.answer_count
    }

    /// The `i`-th answer token.
    pub fn answer(&self, i: usize) -> Token {
        debug_assert!(i < self.answer_count);
        (Self::RESERVED + i) as Token
    }

    pub fn filler(&self, i: usize) -> Token {
        debug_assert!(i < self.filler_count());
        (Self::RESERVED + self.answer_count + i) as Token
    }

    pub fn is_reserved(&self, t: Token) -> bool {
        (t as usize) < Self::RESERVED
    }

    pub fn is_answer(&self, t: Token) -> bool {
        let t = t as usize;
        t >= Self::RESERVED && t < Self::RESERVED + self.answer_count
    }

    pub fn is_filler(&self, t: Token) -> bool {
        let t = t as usize;
        t >= Self::RESERVED + self.answer_count && t < self.size
    }

    pub fn contains(&self, t: Token) -> bool {
        (t as usize) < self.size
    }

    pub fn check_all(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| !self.contains(t)) {
            Some(t) => Err(Error::input(format!(
                "token id {t} out of vocabulary of size {}",
                self.size
            ))),
            None => Ok(()),
        }
    }
}

/// A state `s_t`: the prompt followed by the output generated so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct State<'a> {
    pub tokens: &'a [Token],
    pub prompt_len: usize,
}

impl<'a> State<'a> {
    pub fn new(tokens: &'a [Token], prompt_len: usize) -> Self {
        debug_assert!(prompt_len <= tokens.len());
        Self { tokens, prompt_len }
    }

    pub fn prompt(&self) -> &'a [Token] {
        &self.tokens[..self.prompt_len]
    }

    pub fn output(&self) -> &'a [Token] {
        &self.tokens[self.prompt_len..]
    }

    /// Zero-based index of the next output token.
    pub fn position(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Eos,
    Budget,
}

/// A sampled episode `(p, o)` with the log-probabilities of the policy that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt: Vec<Token>,
    pub output: Vec<Token>,
    pub behavior_logprobs: Vec<f64>,
    pub terminal: Terminal,
    pub reward: Option<f64>,
}

impl Trajectory {
    /// Prompt and output concatenated; states are prefixes of this buffer.
    pub fn tokens(&self) -> Vec<Token> {
        let mut all = Vec::with_capacity(self.prompt.len() + self.output.len());
        all.extend_from_slice(&self.prompt);
        all.extend_from_slice(&self.output);
        all
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    /// Visit `(s_t, o_t)` for every output position.
    pub fn for_each_step<F>(&self, mut f: F) -> Result<()>
    where
        F: FnMut(usize, State<'_>, Token) -> Result<()>,
    {
        let all = self.tokens();
        let m = self.prompt.len();
        for (t, &tok) in self.output.iter().enumerate() {
            f(t, State::new(&all[..m + t], m), tok)?;
        }
        Ok(())
    }
}

/// Roll out one episode from `prompt`.
///
/// Ends at the first EOS or after `decode.max_new_tokens` tokens. Every
/// sampled token's log-probability under the distribution it was drawn from
/// is recorded in `behavior_logprobs`.
pub fn rollout<P: Policy + ?Sized>(
    policy: &P,
    prompt: &[Token],
    decode: &DecodeConfig,
    rng: &mut LabRng,
) -> Result<Trajectory> {
    if prompt.is_empty() {
        return Err(Error::input("empty prompt"));
    }
    policy.vocab().check_all(prompt)?;
    decode.validate(policy.vocab().size())?;
    let m = prompt.len();
    let mut tokens = prompt.to_vec();
    let mut logprobs = Vec::new();
    let mut terminal = Terminal::Budget;
    for _ in 0..decode.max_new_tokens {
        let (tok, lp) = sample_token(policy, State::new(&tokens, m), decode, rng)?;
        tokens.push(tok);
        logprobs.push(lp);
        if tok == Vocabulary::EOS {
            terminal = Terminal::Eos;
            break;
        }
    }
    let output = tokens.split_off(m);
    Ok(Trajectory {
        prompt: tokens,
        output,
        behavior_logprobs: logprobs,
        terminal,
        reward: None,
    })
}

/// KL regularisation of the return against a reference policy.
#[derive(Clone, Default)]
pub struct ReturnConfig<'a> {
    pub beta_ref: f64,
    pub reference: Option<&'a dyn Policy>,
}

/// `R(p, o) - beta_ref * sum_t KL(live(.|s_t) || reference(.|s_t))`.
///
/// The per-step reward is zero except at the final step, so `R` is the
/// trajectory's terminal reward.
pub fn trajectory_return<P: Policy + ?Sized>(
    traj: &Trajectory,
    rcfg: &ReturnConfig<'_>,
    live: &P,
) -> Result<f64> {
    let reward = traj
        .reward
        .ok_or_else(|| Error::input("trajectory reward not assigned"))?;
    if rcfg.beta_ref < 0.0 || !rcfg.beta_ref.is_finite() {
        return Err(Error::config(format!("beta_ref = {} must be >= 0", rcfg.beta_ref)));
    }
    if rcfg.beta_ref == 0.0 {
        return Ok(reward);
    }
    let reference = rcfg
        .reference
        .ok_or_else(|| Error::config("beta_ref > 0 requires a reference policy"))?;
    let mut kl_sum = 0.0;
    traj.for_each_step(|_, state, _| {
        let p = log_probs(live, state)?;
        let q = log_probs(reference, state)?;
        kl_sum += kl_divergence(&p, &q)?;
        Ok(())
    })?;
    Ok(reward - rcfg.beta_ref * kl_sum)
}
