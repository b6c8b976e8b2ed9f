//! Cross-attention inspection and partial-noising stylization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::downsample_mask;
use crate::error::{invalid, Result};
use crate::image::Image;
use crate::nets::text::text_encode;
use crate::nets::unet::{denoise, AttentionMap};
use crate::nets::{decode_latent, encode_image, latent_shape, TrainableWeights};
use crate::prompt::{PromptSpec, Vocabulary};
use crate::rng;
use crate::sampler::{reverse_from, SamplerConfig};
use crate::schedule::{forward_diffuse, NoiseSample};

/// Attention maps of one prompt on one image at several timesteps.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionReport {
    /// Word of each encoder token.
    pub tokens: Vec<String>,
    pub maps: Vec<AttentionMap>,
    /// Per token: share of its attention mass (summed over timesteps) that
    /// falls on person cells. `None` without a person mask.
    pub person_fraction: Option<Vec<f64>>,
    /// Share of the 8x8 grid covered by the person, the value a spatially
    /// uniform map would score.
    pub person_baseline: Option<f64>,
}

impl AttentionReport {
    pub fn token_index(&self, word: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == word)
    }

    /// Attention of `token` averaged over the captured timesteps.
    pub fn mean_map(&self, token: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; 64];
        for m in &self.maps {
            for (o, v) in out.iter_mut().zip(m.token_map(token)) {
                *o += v / self.maps.len() as f64;
            }
        }
        out
    }
}

/// Encodes `image`, diffuses it to each timestep with noise from `seed` and
/// captures the cross-attention of `prompt`.
pub fn attention_report(
    weights: &TrainableWeights,
    prompt: &PromptSpec,
    image: &Image,
    person_mask: Option<&[f64]>,
    timesteps: &[usize],
    seed: u64,
) -> Result<AttentionReport> {
    if !prompt.has_identifier() {
        return Err(invalid!("attention inspection needs a prompt with an identifier, got `{}`", prompt.text()));
    }
    if timesteps.is_empty() {
        return Err(invalid!("attention inspection needs at least one timestep"));
    }
    if let Some(m) = person_mask {
        if m.len() != 32 * 32 {
            return Err(invalid!("person mask must have 1024 values, got {}", m.len()));
        }
    }
    let vocab = Vocabulary::standard();
    let tokens = prompt.encoder_tokens().iter().map(|&t| String::from(vocab.word(t).unwrap_or("?"))).collect();
    let z0 = encode_image(&weights.frozen_autoencoder, image)?;
    let c = text_encode(weights, prompt)?;
    let mut r = rng::derive(seed, "attention");
    let mut maps = Vec::with_capacity(timesteps.len());
    for &t in timesteps {
        weights.schedule.check_timestep(t)?;
        let eps = NoiseSample { data: rng::normal_tensor(&mut r, &latent_shape()) };
        let z_t = forward_diffuse(&z0, t, &eps, &weights.schedule)?;
        let (_, map) = denoise(weights, &z_t, t, &c, true)?;
        maps.push(map.expect("captured"));
    }
    let (person_fraction, person_baseline) = match person_mask {
        Some(m) => {
            let cells = downsample_mask(m);
            let ntok = maps[0].tokens();
            let fractions = (0..ntok)
                .map(|k| {
                    let (mut inside, mut total) = (0.0, 0.0);
                    for map in &maps {
                        for (a, w) in map.token_map(k).iter().zip(&cells) {
                            inside += a * w;
                            total += a;
                        }
                    }
                    if total > 0.0 {
                        inside / total
                    } else {
                        0.0
                    }
                })
                .collect();
            (Some(fractions), Some(cells.iter().sum::<f64>() / cells.len() as f64))
        }
        None => (None, None),
    };
    Ok(AttentionReport { tokens, maps, person_fraction, person_baseline })
}

/// Partial noising to `round(t0_fraction * T)` followed by guided reverse
/// sampling under `prompt`.
pub fn stylize(
    weights: &TrainableWeights,
    input: &Image,
    prompt: &PromptSpec,
    t0_fraction: f64,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Image> {
    if !(0.0..=1.0).contains(&t0_fraction) {
        return Err(invalid!("t0 fraction must lie in [0, 1], got {}", t0_fraction));
    }
    let horizon = weights.schedule.steps();
    let t0 = libm::round(t0_fraction * horizon as f64) as usize;
    let z0 = encode_image(&weights.frozen_autoencoder, input)?;
    let mut r = rng::derive(seed, &format!("stylize-{t0}"));
    let eps = NoiseSample { data: rng::normal_tensor(&mut r, &latent_shape()) };
    let z_t = forward_diffuse(&z0, t0, &eps, &weights.schedule)?;
    let z = reverse_from(weights, &z_t.data, t0, prompt, sampler)?;
    decode_latent(&weights.frozen_autoencoder, &z)
}
