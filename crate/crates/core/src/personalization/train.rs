//! Fine-tuning loops: single-token, multi-token and the prior-preservation
//! baseline.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::{ContentKind, Provenance, Record, Role, StyleDataset};
use crate::error::{invalid, Error, Result};
use crate::nets::{encode_image, TrainableWeights};
use crate::personalization::loss::{draw_pair, pair_loss, LossParts, ModelPredictor, PairDraw};
use crate::personalization::optimizer::Adam;
use crate::prompt::{tokenize, PromptSpec, AUX_TEMPLATE};
use crate::rng;
use crate::sampler::{sample_images, SamplerConfig};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    DreamBooth,
    SingleStyleForge,
    MultiStyleForge,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::DreamBooth => "dreambooth",
            TrainMode::SingleStyleForge => "single",
            TrainMode::MultiStyleForge => "multi",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dreambooth" => Ok(TrainMode::DreamBooth),
            "single" | "single_styleforge" => Ok(TrainMode::SingleStyleForge),
            "multi" | "multi_styleforge" => Ok(TrainMode::MultiStyleForge),
            _ => Err(invalid!("unknown training mode `{}`", s)),
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_STEPS: usize = 500;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;
pub const DEFAULT_PRIOR_IMAGES: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lambda: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Observer interval in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::SingleStyleForge,
            lambda: DEFAULT_LAMBDA,
            steps: DEFAULT_STEPS,
            learning_rate: DEFAULT_LEARNING_RATE,
            seed: 0,
            batch_size: 1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Configuration(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Configuration(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Configuration("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Component datasets (`D1` persons with `[V]`, `D2` backgrounds with `[W]`)
/// and the shared base configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiTrainConfig {
    pub datasets: Vec<StyleDataset>,
    pub base: TrainConfig,
}

impl MultiTrainConfig {
    /// `|D1| / (|D1| + |D2| + ...)`, the probability of selecting `D1`.
    pub fn q(&self) -> Result<f64> {
        let total: usize = self.datasets.iter().map(StyleDataset::len).sum();
        if total == 0 {
            return Err(Error::Configuration("every component dataset is empty".into()));
        }
        let first = self.datasets.first().map_or(0, StyleDataset::len);
        Ok(first as f64 / total as f64)
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub total: f64,
    pub styleref: f64,
    pub aux: f64,
    /// Component chosen in multi-token mode (0 for `D1`).
    pub selected: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub weights: TrainableWeights,
    pub trace: Vec<LossRow>,
    /// Every component selection, in order (multi-token mode only).
    pub selections: Vec<usize>,
}

/// Called with `(step, weights)` before the first update and after every
/// `checkpoint_every` updates.
pub type Observer<'o> = dyn FnMut(usize, &TrainableWeights) -> Result<()> + 'o;

struct Encoded {
    latents: Vec<Tensor>,
    prompts: Vec<PromptSpec>,
}

fn encode(weights: &TrainableWeights, d: &StyleDataset) -> Result<Encoded> {
    let mut latents = Vec::with_capacity(d.len());
    for r in d.records() {
        latents.push(encode_image(&weights.frozen_autoencoder, &r.image)?.data);
    }
    Ok(Encoded { latents, prompts: d.records().iter().map(|r| r.prompt.clone()).collect() })
}

fn check_aux(config: &TrainConfig, aux: &StyleDataset) -> Result<()> {
    if config.lambda != 0.0 || !aux.is_empty() {
        aux.require_role(Role::Aux)?;
    }
    Ok(())
}

/// Shared loop; `select` picks the component for each pair.
fn run(
    config: &TrainConfig,
    components: &[Encoded],
    aux: &Encoded,
    init: &TrainableWeights,
    mut select: impl FnMut() -> usize,
    multi: bool,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut weights = init.clone();
    let mut adam = Adam::new(config.learning_rate)?;
    let mut data = rng::derive(config.seed, "train");
    let mut trace = Vec::with_capacity(config.steps);
    let mut selections = Vec::new();
    let horizon = weights.schedule.steps();
    if config.checkpoint_every > 0 {
        observer(0, &weights)?;
    }
    for step in 1..=config.steps {
        let mut draws: Vec<PairDraw> = Vec::with_capacity(config.batch_size);
        let mut selected = 0;
        for _ in 0..config.batch_size {
            selected = select();
            if multi {
                selections.push(selected);
            }
            let comp = &components[selected];
            let i = rng::index(&mut data, comp.latents.len());
            let a = (!aux.latents.is_empty()).then(|| rng::index(&mut data, aux.latents.len()));
            draws.push(draw_pair(
                &mut data,
                horizon,
                (&comp.latents[i], &comp.prompts[i]),
                a.map(|j| (&aux.latents[j], &aux.prompts[j])),
            ));
        }
        let (LossParts { total, styleref, aux: aux_term }, grads) =
            pair_loss(&ModelPredictor, &weights, &draws, config.lambda).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("step {step}: {m}")),
                other => other,
            })?;
        adam.step(&mut weights, &grads)?;
        trace.push(LossRow { step, total, styleref, aux: aux_term, selected: multi.then_some(selected) });
        if config.checkpoint_every > 0 && (step % config.checkpoint_every == 0 || step == config.steps) {
            observer(step, &weights)?;
        }
    }
    if !weights.all_finite() {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok(TrainOutcome { weights, trace, selections })
}

/// Binds `[V]` to the reference set and `style` to the auxiliary set.
pub fn train_single(
    config: &TrainConfig,
    styleref: &StyleDataset,
    aux: &StyleDataset,
    init: &TrainableWeights,
) -> Result<TrainOutcome> {
    train_single_observed(config, styleref, aux, init, &mut |_, _| Ok(()))
}

pub fn train_single_observed(
    config: &TrainConfig,
    styleref: &StyleDataset,
    aux: &StyleDataset,
    init: &TrainableWeights,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    styleref.require_role(Role::StyleRef)?;
    check_aux(config, aux)?;
    let comps = [encode(init, styleref)?];
    let aux = encode(init, aux)?;
    run(config, &comps, &aux, init, || 0, false, observer)
}

/// Draws `Q ~ U[0, 1)` per pair from a dedicated stream and takes `D1` iff
/// `Q < q`; the data and noise stream is the one of [`train_single`].
pub fn train_multi(config: &MultiTrainConfig, aux: &StyleDataset, init: &TrainableWeights) -> Result<TrainOutcome> {
    train_multi_observed(config, aux, init, &mut |_, _| Ok(()))
}

pub fn train_multi_observed(
    config: &MultiTrainConfig,
    aux: &StyleDataset,
    init: &TrainableWeights,
    observer: &mut Observer<'_>,
) -> Result<TrainOutcome> {
    if config.datasets.len() != 2 {
        return Err(Error::Configuration(format!(
            "multi-token training takes two component datasets, got {}",
            config.datasets.len()
        )));
    }
    let q = config.q()?;
    for d in config.datasets.iter().filter(|d| !d.is_empty()) {
        d.require_role(Role::StyleRef)?;
    }
    check_aux(&config.base, aux)?;
    let comps = config.datasets.iter().map(|d| encode(init, d)).collect::<Result<Vec<_>>>()?;
    let aux = encode(init, aux)?;
    let mut sel = rng::derive(config.base.seed, "select");
    run(&config.base, &comps, &aux, init, || usize::from(rng::uniform(&mut sel) >= q), true, observer)
}

/// Selection draws alone: the component chosen at each of `n` iterations.
pub fn selection_sequence(q: f64, n: usize, seed: u64) -> Vec<usize> {
    let mut sel = rng::derive(seed, "select");
    (0..n).map(|_| usize::from(rng::uniform(&mut sel) >= q)).collect()
}

/// Samples `n` images from frozen weights and captions them with `prompt`
/// as an auxiliary set.
pub fn generate_prior_images(
    frozen_weights: &TrainableWeights,
    prompt: &PromptSpec,
    n: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<StyleDataset> {
    if n == 0 {
        return Err(invalid!("prior generation needs n >= 1"));
    }
    let images = sample_images(frozen_weights, prompt, n, sampler, rng::derive_seed(seed, "prior"))?;
    let records = images
        .into_iter()
        .map(|image| Record { image, prompt: prompt.clone(), role: Role::Aux, content_kind: ContentKind::Mixed, person_mask: None })
        .collect();
    StyleDataset::new("prior", Provenance::Generated, records)
}

/// The prior-preservation baseline: the single-token loop with an auxiliary
/// set sampled from `init` under `a photo of style`.
pub fn train_dreambooth(
    config: &TrainConfig,
    styleref: &StyleDataset,
    init: &TrainableWeights,
    sampler: &SamplerConfig,
) -> Result<(TrainOutcome, StyleDataset)> {
    let prior = generate_prior_images(init, &tokenize(AUX_TEMPLATE)?, DEFAULT_PRIOR_IMAGES, sampler, config.seed)?;
    let out = train_single(config, styleref, &prior, init)?;
    Ok((out, prior))
}

/// Mean of `total` over the first and last `window` rows.
pub fn loss_window_means(trace: &[LossRow], window: usize) -> Option<(f64, f64)> {
    if window == 0 || trace.len() < window {
        return None;
    }
    let mean = |rows: &[LossRow]| rows.iter().map(|r| r.total).sum::<f64>() / rows.len() as f64;
    Some((mean(&trace[..window]), mean(&trace[trace.len() - window..])))
}
