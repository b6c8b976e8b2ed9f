//! Generation and scoring helpers shared by the commands and the harness.

use stylebind_core::data::{eval_prompt_grid, EvalPrompt};
use stylebind_core::evaluation::{Evaluator, MetricReport};
use stylebind_core::nets::TrainableWeights;
use stylebind_core::prompt::PromptSpec;
use stylebind_core::rng;
use stylebind_core::sampler::{sample_images, SamplerConfig};
use stylebind_core::Image;

use crate::error::{CliError, Result};

/// Which identifier form evaluation prompts take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptForm {
    Single,
    Multi,
}

impl std::str::FromStr for PromptForm {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(PromptForm::Single),
            "multi" => Ok(PromptForm::Multi),
            other => Err(CliError::Config(format!("unknown prompt form `{other}`, expected single or multi"))),
        }
    }
}

/// A prompt to sample from and, optionally, the text its alignment is
/// scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptJob {
    pub prompt: PromptSpec,
    pub scoring: Option<PromptSpec>,
}

pub fn prompt_jobs(grid: &[EvalPrompt], form: PromptForm) -> Result<Vec<PromptJob>> {
    grid.iter()
        .map(|p| {
            let prompt = match form {
                PromptForm::Single => p.single()?,
                PromptForm::Multi => p.multi()?,
            };
            Ok(PromptJob { prompt, scoring: Some(p.scoring()?) })
        })
        .collect()
}

pub fn prompt_set_jobs(n: usize, seed: u64, form: PromptForm) -> Result<Vec<PromptJob>> {
    prompt_jobs(&eval_prompt_grid(n, seed)?, form)
}

/// Generated images with the prompt each came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub images: Vec<Image>,
    pub prompts: Vec<PromptSpec>,
    pub scoring: Vec<Option<PromptSpec>>,
}

/// `per_prompt` samples for each job, prompt-major. Job `j` samples with
/// seed `derive(seed, "prompt-j")`.
pub fn generate(
    weights: &TrainableWeights,
    jobs: &[PromptJob],
    per_prompt: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Generated> {
    let mut out = Generated { images: Vec::new(), prompts: Vec::new(), scoring: Vec::new() };
    for (j, job) in jobs.iter().enumerate() {
        let imgs = sample_images(weights, &job.prompt, per_prompt, sampler, rng::derive_seed(seed, &format!("prompt-{j}")))?;
        for img in imgs {
            out.images.push(img);
            out.prompts.push(job.prompt.clone());
            out.scoring.push(job.scoring.clone());
        }
    }
    Ok(out)
}

impl Generated {
    /// Scoring prompts when every image has one.
    pub fn scoring_prompts(&self) -> Option<Vec<PromptSpec>> {
        self.scoring.iter().cloned().collect()
    }
}

/// Metric report for one set of generated images.
pub fn score(
    evaluator: &Evaluator<'_>,
    generated: &Generated,
    reference: &[Image],
    checkpoint_id: &str,
    step: usize,
    style_id: &str,
    prompt_set_id: &str,
) -> Result<MetricReport> {
    let scoring = generated.scoring_prompts();
    let (fid, kid, clip) = evaluator.evaluate(&generated.images, scoring.as_deref(), reference)?;
    Ok(MetricReport {
        checkpoint_id: checkpoint_id.to_string(),
        step,
        style_id: style_id.to_string(),
        prompt_set_id: prompt_set_id.to_string(),
        fid,
        kid,
        clip_score: clip,
        n_generated: generated.images.len(),
        n_reference: reference.len(),
    })
}
