//! Image embedders: a fixed random convolutional feature network for the
//! distribution metrics and a contrastively trained two-tower model for
//! text-image alignment.

use alloc::format;
use alloc::vec::Vec;

use crate::data::CaptionedImage;
use crate::error::{invalid, Error, Result};
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::nets::layers::{conv, linear};
use crate::nets::{Binder, Init};
use crate::params::TensorTable;
use crate::personalization::{Adam, PretrainConfig};
use crate::prompt::{tokenize, PromptSpec, Vocabulary};
use crate::rng;

pub const FEATURE_DIM: usize = 64;

/// Three He-initialized convolution stages with ReLU, then global average
/// pooling to a 64-dimensional feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    weights: TensorTable,
}

impl FeatureExtractor {
    pub fn new(seed: u64) -> Self {
        let mut init = Init::new(rng::derive_seed(seed, "feature-extractor"));
        init.conv_he("f1", 16, 3, 3);
        init.conv_he("f2", 32, 16, 3);
        init.conv_he("f3", FEATURE_DIM, 32, 3);
        Self { seed, weights: init.finish() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &TensorTable {
        &self.weights
    }

    pub fn features(&self, image: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut p = Binder::frozen(&self.weights);
        let x = g.constant(image.tensor().clone());
        let h = conv(&mut g, &mut p, "f1", x, 1, 1)?;
        let h = g.relu(h);
        let h = conv(&mut g, &mut p, "f2", h, 2, 1)?;
        let h = g.relu(h);
        let h = conv(&mut g, &mut p, "f3", h, 2, 1)?;
        let h = g.relu(h);
        let f = g.global_avg_pool(h)?;
        Ok(g.value(f).data().to_vec())
    }

    pub fn features_batch(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|i| self.features(i)).collect()
    }
}

pub const EMBED_DIM: usize = 32;
const TOWER_HIDDEN: usize = 64;
const TEMPERATURE: f64 = 0.07;

/// Image and text encoders mapped into a shared embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentTower {
    pub weights: TensorTable,
}

impl AlignmentTower {
    pub fn init(seed: u64) -> Self {
        let mut init = Init::with_std(rng::derive_seed(seed, "tower"), 0.05);
        init.conv_he("img.c1", 16, 3, 3);
        init.conv_he("img.c2", 32, 16, 3);
        init.conv_he("img.c3", 32, 32, 3);
        init.linear("img.l1", TOWER_HIDDEN, 32 * 16, true);
        init.linear("img.l2", EMBED_DIM, TOWER_HIDDEN, true);
        init.embedding("txt.embedding", Vocabulary::standard().len(), EMBED_DIM);
        init.linear("txt.l1", TOWER_HIDDEN, EMBED_DIM, true);
        init.linear("txt.l2", EMBED_DIM, TOWER_HIDDEN, true);
        Self { weights: init.finish() }
    }

    fn image_graph<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, image: &Image) -> Result<Var> {
        let x = g.constant(image.tensor().clone());
        let h = conv(g, p, "img.c1", x, 2, 1)?;
        let h = g.relu(h);
        let h = conv(g, p, "img.c2", h, 2, 1)?;
        let h = g.relu(h);
        let h = conv(g, p, "img.c3", h, 2, 1)?;
        let h = g.relu(h);
        let h = g.reshape(h, &[1, 32 * 16])?;
        let h = linear(g, p, "img.l1", h)?;
        let h = g.relu(h);
        linear(g, p, "img.l2", h)
    }

    fn text_graph<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, prompt: &PromptSpec) -> Result<Var> {
        let table = p.get(g, "txt.embedding")?;
        let e = g.gather(table, &prompt.encoder_tokens())?;
        let h = g.mean_rows(e)?;
        let h = linear(g, p, "txt.l1", h)?;
        let h = g.relu(h);
        linear(g, p, "txt.l2", h)
    }

    pub fn embed_image(&self, image: &Image) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut p = Binder::frozen(&self.weights);
        let v = Self::image_graph(&mut g, &mut p, image)?;
        Ok(g.value(v).data().to_vec())
    }

    pub fn embed_text(&self, prompt: &PromptSpec) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut p = Binder::frozen(&self.weights);
        let v = Self::text_graph(&mut g, &mut p, prompt)?;
        Ok(g.value(v).data().to_vec())
    }
}

/// Text the tower is trained and scored on: `a photo of <content>`.
pub fn scoring_prompt(content: &str) -> Result<PromptSpec> {
    tokenize(&format!("a photo of {content}"))
}

/// Symmetric InfoNCE over batches of (image, scoring prompt) pairs.
pub fn train_alignment_tower(corpus: &[CaptionedImage], config: &PretrainConfig) -> Result<(AlignmentTower, Vec<f64>)> {
    if corpus.len() < 2 || config.batch_size < 2 {
        return Err(invalid!("contrastive training needs at least two pairs per batch"));
    }
    let prompts = corpus.iter().map(|c| scoring_prompt(&c.content)).collect::<Result<Vec<_>>>()?;
    let mut tower = AlignmentTower::init(config.seed);
    let mut adam = Adam::new(config.learning_rate)?;
    let mut r = rng::derive(config.seed, "tower-batches");
    let mut trace = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        // Distinct captions per batch so no negative is secretly a positive.
        let mut batch: Vec<usize> = Vec::with_capacity(config.batch_size);
        let mut guard = 0;
        while batch.len() < config.batch_size && guard < 100 * config.batch_size {
            guard += 1;
            let i = rng::index(&mut r, corpus.len());
            if !batch.iter().any(|&j| prompts[j] == prompts[i]) {
                batch.push(i);
            }
        }
        let (loss, grads) = {
            let mut g = Graph::new();
            let mut p = Binder::trainable(&tower.weights);
            let mut imgs = Vec::with_capacity(batch.len());
            let mut txts = Vec::with_capacity(batch.len());
            for &i in &batch {
                imgs.push(AlignmentTower::image_graph(&mut g, &mut p, &corpus[i].image)?);
                txts.push(AlignmentTower::text_graph(&mut g, &mut p, &prompts[i])?);
            }
            let imgs = g.concat_rows(&imgs)?;
            let txts = g.concat_rows(&txts)?;
            let imgs = g.l2_normalize_rows(imgs)?;
            let txts = g.l2_normalize_rows(txts)?;
            let targets: Vec<usize> = (0..batch.len()).collect();
            let li = g.matmul_bt(imgs, txts)?;
            let li = g.scale(li, 1.0 / TEMPERATURE);
            let lt = g.matmul_bt(txts, imgs)?;
            let lt = g.scale(lt, 1.0 / TEMPERATURE);
            let a = g.cross_entropy_rows(li, &targets)?;
            let b = g.cross_entropy_rows(lt, &targets)?;
            let s = g.add(a, b)?;
            let loss = g.scale(s, 0.5);
            let grads = g.backward(loss)?;
            (g.value(loss).data()[0], p.collect(&grads)?)
        };
        trace.push(loss);
        adam.begin_step();
        adam.update_table("tower", &mut tower.weights, &grads)?;
    }
    if !tower.weights.all_finite() {
        return Err(Error::Numeric("alignment tower training diverged".into()));
    }
    Ok((tower, trace))
}

/// Top-1 retrieval accuracy of images against their own captions among
/// `candidates`.
pub fn retrieval_accuracy(tower: &AlignmentTower, pairs: &[(Image, PromptSpec)]) -> Result<f64> {
    let texts = pairs.iter().map(|(_, p)| tower.embed_text(p)).collect::<Result<Vec<_>>>()?;
    let mut hits = 0;
    for (i, (img, _)) in pairs.iter().enumerate() {
        let e = tower.embed_image(img)?;
        let best = (0..texts.len())
            .max_by(|&a, &b| {
                let sa = super::metrics::clamped_cosine_score(&e, &texts[a]);
                let sb = super::metrics::clamped_cosine_score(&e, &texts[b]);
                sa.total_cmp(&sb)
            })
            .expect("non-empty");
        if pairs[best].1 == pairs[i].1 {
            hits += 1;
        }
    }
    Ok(f64::from(hits) / pairs.len() as f64)
}
