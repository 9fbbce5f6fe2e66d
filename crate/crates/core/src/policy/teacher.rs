//! Teachers for distillation: a positional oracle built from a task's gold
//! answer, or a frozen policy snapshot.

use super::{log_probs, Frozen};
use crate::error::{Error, Result};
use crate::mdp::{State, Token, Vocabulary};
use crate::tasks::TaskInstance;

/// Puts `(1 - lambda) + lambda / V` on the gold token aligned with the
/// output position (EOS past the end of the gold answer) and `lambda / V` on
/// every other token.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTeacher {
    gold: Vec<Token>,
    lambda: f64,
    vocab_size: usize,
}

impl OracleTeacher {
    pub fn new(gold: Vec<Token>, lambda: f64, vocab_size: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::input(format!("teacher smoothing {lambda} outside [0, 1]")));
        }
        Ok(Self {
            gold,
            lambda,
            vocab_size,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn target(&self, position: usize) -> Token {
        self.gold.get(position).copied().unwrap_or(Vocabulary::EOS)
    }

    pub fn log_probs(&self, state: State<'_>) -> Vec<f64> {
        let v = self.vocab_size as f64;
        let off = (self.lambda / v).ln();
        let on = ((1.0 - self.lambda) + self.lambda / v).ln();
        let mut lp = vec![off; self.vocab_size];
        lp[self.target(state.position()) as usize] = on;
        lp
    }
}

pub fn make_oracle_teacher(task: &TaskInstance, lambda: f64, vocab: &Vocabulary) -> Result<OracleTeacher> {
    OracleTeacher::new(task.gold.clone(), lambda, vocab.size())
}

/// A teacher bound to one task.
#[derive(Debug, Clone)]
pub enum Teacher {
    Oracle(OracleTeacher),
    Snapshot(Frozen),
}

impl Teacher {
    pub fn log_probs(&self, state: State<'_>) -> Result<Vec<f64>> {
        match self {
            Teacher::Oracle(o) => Ok(o.log_probs(state)),
            Teacher::Snapshot(f) => log_probs(f, state),
        }
    }
}

/// Where teachers come from during training.
#[derive(Debug, Clone)]
pub enum TeacherPolicy {
    Oracle { lambda: f64 },
    Snapshot(Frozen),
}

impl TeacherPolicy {
    pub fn for_task(&self, task: &TaskInstance, vocab: &Vocabulary) -> Result<Teacher> {
        match self {
            TeacherPolicy::Oracle { lambda } => {
                Ok(Teacher::Oracle(make_oracle_teacher(task, *lambda, vocab)?))
            }
            TeacherPolicy::Snapshot(f) => Ok(Teacher::Snapshot(f.clone())),
        }
    }
}
