//! Pretraining of the frozen autoencoder and the base text-to-image model on
//! the unstyled corpus.

use alloc::vec::Vec;

use crate::data::CaptionedImage;
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::nets::autoencoder::{self, decode_graph, encode_graph, LATENT_SCALE};
use crate::nets::{encode_image, Binder, TrainableWeights};
use crate::params::TensorTable;
use crate::personalization::loss::{draw_pair, pair_loss, ModelPredictor};
use crate::personalization::optimizer::Adam;
use crate::personalization::train::LossRow;
use crate::prompt::tokenize;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

/// Reconstruction training of a fresh autoencoder, then `latent_scale` set so
/// that corpus latents have unit standard deviation.
pub fn pretrain_autoencoder(images: &[Image], config: &PretrainConfig) -> Result<(TensorTable, Vec<f64>)> {
    if images.is_empty() {
        return Err(invalid!("autoencoder pretraining needs images"));
    }
    let mut ae = autoencoder::init_params(rng::derive_seed(config.seed, "autoencoder"));
    let mut adam = Adam::new(config.learning_rate)?;
    let mut r = rng::derive(config.seed, "autoencoder-batches");
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<&Image> = (0..config.batch_size.max(1)).map(|_| &images[rng::index(&mut r, images.len())]).collect();
        let (loss, grads) = {
            let mut g = Graph::new();
            let mut p = Binder::trainable(&ae);
            let mut acc: Option<Var> = None;
            for img in &batch {
                let x = g.constant(img.tensor().clone());
                let z = encode_graph(&mut g, &mut p, x)?;
                let y = decode_graph(&mut g, &mut p, z)?;
                let l = g.mean_squared(y, img.tensor())?;
                acc = Some(match acc {
                    None => l,
                    Some(a) => g.add(a, l)?,
                });
            }
            let loss = g.scale(acc.expect("non-empty batch"), 1.0 / batch.len() as f64);
            let grads = g.backward(loss)?;
            (g.value(loss).data()[0], p.collect(&grads)?)
        };
        trace.push(loss);
        adam.begin_step();
        let mut grads = grads;
        // The scale is a normalization constant, not a learned weight.
        grads.insert(LATENT_SCALE, Tensor::zeros(&[1]));
        adam.update_table("ae", &mut ae, &grads)?;
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0.0;
    for img in images {
        for v in encode_image(&ae, img)?.data.data() {
            sum += v;
            sq += v * v;
            n += 1.0;
        }
    }
    let mean = sum / n;
    let std = libm::sqrt((sq / n - mean * mean).max(1e-12));
    let scale = ae.get(LATENT_SCALE)?.data()[0] / std;
    ae.insert(LATENT_SCALE, Tensor::scalar(scale));
    if !ae.all_finite() {
        return Err(Error::Numeric("autoencoder pretraining diverged".into()));
    }
    Ok((ae, trace))
}

/// Plain conditional denoising on captioned images; each caption is replaced
/// by the empty prompt with probability `null_prob` so the model also learns
/// the unconditional prediction that guidance needs.
pub fn pretrain_base(
    init: &TrainableWeights,
    corpus: &[CaptionedImage],
    config: &PretrainConfig,
    null_prob: f64,
) -> Result<(TrainableWeights, Vec<LossRow>)> {
    if corpus.is_empty() {
        return Err(invalid!("base pretraining needs a corpus"));
    }
    let latents =
        corpus.iter().map(|c| Ok(encode_image(&init.frozen_autoencoder, &c.image)?.data)).collect::<Result<Vec<_>>>()?;
    let null = tokenize("")?;
    let mut weights = init.clone();
    let mut adam = Adam::new(config.learning_rate)?;
    let mut r = rng::derive(config.seed, "pretrain");
    let mut trace = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let draws: Vec<_> = (0..config.batch_size.max(1))
            .map(|_| {
                let i = rng::index(&mut r, corpus.len());
                let prompt = if rng::uniform(&mut r) < null_prob { &null } else { &corpus[i].prompt };
                draw_pair(&mut r, weights.schedule.steps(), (&latents[i], prompt), None)
            })
            .collect();
        let (parts, grads) = pair_loss(&ModelPredictor, &weights, &draws, 0.0)?;
        adam.step(&mut weights, &grads)?;
        trace.push(LossRow { step, total: parts.total, styleref: parts.styleref, aux: 0.0, selected: None });
    }
    // Pretraining updates are not fine-tuning steps.
    weights.version = 0;
    Ok((weights, trace))
}
