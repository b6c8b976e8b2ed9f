//! Metrics, embedders, attention inspection and stylization.

pub mod features;
pub mod inspect;
pub mod metrics;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::prompt::PromptSpec;

pub use features::{retrieval_accuracy, scoring_prompt, train_alignment_tower, AlignmentTower, FeatureExtractor};
pub use inspect::{attention_report, stylize, AttentionReport};
pub use metrics::{clip_score_from_embeddings, fid, fid_from_stats, kid, poly_kernel};

/// Mean clamped-cosine alignment (x100) of each image with its prompt.
pub fn clip_score(images: &[Image], prompts: &[PromptSpec], tower: &AlignmentTower) -> Result<f64> {
    if images.len() != prompts.len() {
        return Err(invalid!("{} images but {} prompts", images.len(), prompts.len()));
    }
    let ie = images.iter().map(|i| tower.embed_image(i)).collect::<Result<Vec<_>>>()?;
    let te = prompts.iter().map(|p| tower.embed_text(p)).collect::<Result<Vec<_>>>()?;
    clip_score_from_embeddings(&ie, &te)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub checkpoint_id: String,
    pub step: usize,
    pub style_id: String,
    pub prompt_set_id: String,
    pub fid: f64,
    /// Raw unbiased estimate; reports print it multiplied by 1000.
    pub kid: f64,
    pub clip_score: Option<f64>,
    pub n_generated: usize,
    pub n_reference: usize,
}

/// Generated images scored against a reference set, plus alignment with
/// their scoring prompts when both a tower and prompts are given.
pub struct Evaluator<'e> {
    pub extractor: &'e FeatureExtractor,
    pub tower: Option<&'e AlignmentTower>,
}

impl Evaluator<'_> {
    pub fn evaluate(
        &self,
        generated: &[Image],
        scoring_prompts: Option<&[PromptSpec]>,
        reference: &[Image],
    ) -> Result<(f64, f64, Option<f64>)> {
        let fg = self.extractor.features_batch(generated)?;
        let fr = self.extractor.features_batch(reference)?;
        let clip = match (self.tower, scoring_prompts) {
            (Some(t), Some(p)) => Some(clip_score(generated, p, t)?),
            _ => None,
        };
        Ok((fid(&fg, &fr)?, kid(&fg, &fr)?, clip))
    }
}
