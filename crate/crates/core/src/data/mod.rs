//! Synthetic corpora: procedural scenes, target styles, datasets and
//! evaluation prompts.

pub mod dataset;
pub mod prompts;
pub mod scene;
pub mod style;

pub use dataset::{
    build_aux_corpus, build_base_corpus, build_style_corpus, CaptionedImage, ContentKind, Provenance, Record, Role,
    StyleDataset,
};
pub use prompts::{eval_prompt_grid, eval_prompt_set, EvalPrompt, PromptCategory};
pub use scene::downsample_mask;
pub use style::{Idempotence, StyleName, StyleTransformSpec};
