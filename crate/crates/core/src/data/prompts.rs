//! Grammar-generated evaluation prompts.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::scene::{Mention, SceneSpec};
use crate::error::{invalid, Result};
use crate::prompt::{tokenize, PromptSpec};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptCategory {
    Person,
    Background,
    Combined,
}

impl PromptCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptCategory::Person => "person",
            PromptCategory::Background => "background",
            PromptCategory::Combined => "combined",
        }
    }
}

/// One evaluation subject, renderable as a single-token, multi-token or
/// plain scoring prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPrompt {
    pub category: PromptCategory,
    /// Content phrase, e.g. `a man in blue near a house`.
    pub content: String,
}

impl EvalPrompt {
    /// `a photo of [V] style, <content>`.
    pub fn single(&self) -> Result<PromptSpec> {
        tokenize(&format!("a photo of [V] style, {}", self.content))
    }

    /// Persons use `[V]`, backgrounds `[W]`, combined scenes both.
    pub fn multi(&self) -> Result<PromptSpec> {
        let ids = match self.category {
            PromptCategory::Person => "[V] style",
            PromptCategory::Background => "[W] style",
            PromptCategory::Combined => "[V] style, [W] style",
        };
        tokenize(&format!("a photo of {ids}, {}", self.content))
    }

    /// The identifier-free text used for alignment scoring.
    pub fn scoring(&self) -> Result<PromptSpec> {
        tokenize(&format!("a photo of {}", self.content))
    }
}

/// `n` subjects: `floor(2n/5)` person-only, `floor(2n/5)` background-only and
/// the rest combined, in that order.
pub fn eval_prompt_grid(n: usize, seed: u64) -> Result<Vec<EvalPrompt>> {
    if n == 0 {
        return Err(invalid!("the evaluation prompt set needs n >= 1"));
    }
    let n_person = 2 * n / 5;
    let n_background = 2 * n / 5;
    let mut r = rng::derive(seed, "eval-prompts");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (category, content) = if i < n_person {
            (PromptCategory::Person, SceneSpec::random_person(&mut r).phrase(Mention::Subject))
        } else if i < n_person + n_background {
            (PromptCategory::Background, SceneSpec::random_background(&mut r).phrase(Mention::Subject))
        } else {
            (PromptCategory::Combined, SceneSpec::random_person(&mut r).phrase(Mention::Everything))
        };
        out.push(EvalPrompt { category, content });
    }
    Ok(out)
}

/// The single-token prompts of [`eval_prompt_grid`].
pub fn eval_prompt_set(n: usize, seed: u64) -> Result<Vec<PromptSpec>> {
    eval_prompt_grid(n, seed)?.iter().map(EvalPrompt::single).collect()
}
