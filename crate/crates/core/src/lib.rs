pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod mdp;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/tasks.md")]
    pub mod tasks {}
    #[doc = include_str!("../../../book/src/policies.md")]
    pub mod policies {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    pub mod objectives {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
