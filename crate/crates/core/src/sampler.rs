//! Deterministic DDIM sampling with classifier-free guidance.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::image::Image;
use crate::nets::text::{text_encode, ConditioningVector};
use crate::nets::unet::denoise;
use crate::nets::{decode_latent, latent_shape, TrainableWeights};
use crate::prompt::{tokenize, PromptSpec};
use crate::rng::{self, Rng};
use crate::schedule::LatentCode;
use crate::tensor::Tensor;

pub const DEFAULT_INFERENCE_STEPS: usize = 30;
pub const DEFAULT_CFG_SCALE: f64 = 7.5;
/// Bound on the predicted clean latent, in units of the normalized latent
/// scale.
pub const X0_CLIP: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_INFERENCE_STEPS, cfg_scale: DEFAULT_CFG_SCALE }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(invalid!("sampler needs at least one step"));
        }
        if !self.cfg_scale.is_finite() {
            return Err(invalid!("guidance scale must be finite"));
        }
        Ok(())
    }
}

/// `steps` timesteps evenly spaced over `1..=horizon`, in descending order
/// and starting at `horizon`.
pub fn ddim_timesteps(horizon: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > horizon {
        return Err(invalid!("cannot take {} sampler steps over {} timesteps", steps, horizon));
    }
    Ok((1..=steps).rev().map(|i| (i * horizon + steps / 2) / steps).collect())
}

/// The conditional and null encodings of a prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidancePair {
    pub cond: ConditioningVector,
    pub uncond: ConditioningVector,
}

impl GuidancePair {
    pub fn new(weights: &TrainableWeights, prompt: &PromptSpec) -> Result<Self> {
        Ok(Self { cond: text_encode(weights, prompt)?, uncond: text_encode(weights, &tokenize("")?)? })
    }
}

/// `eps_uncond + s (eps_cond - eps_uncond)`; exactly `eps_cond` at `s = 1`
/// and exactly `eps_uncond` at `s = 0`.
pub fn guided_eps(weights: &TrainableWeights, z: &LatentCode, t: usize, c: &GuidancePair, scale: f64) -> Result<Tensor> {
    if scale == 0.0 {
        return Ok(denoise(weights, z, t, &c.uncond, false)?.0.data);
    }
    let (cond, _) = denoise(weights, z, t, &c.cond, false)?;
    if scale == 1.0 {
        return Ok(cond.data);
    }
    let (uncond, _) = denoise(weights, z, t, &c.uncond, false)?;
    uncond.data.lincomb(1.0, &cond.data.lincomb(1.0, &uncond.data, -1.0)?, scale)
}

/// One deterministic step from `(alpha, sigma)` to `(alpha_prev, sigma_prev)`.
/// The predicted clean latent is clamped to `[-X0_CLIP, X0_CLIP]` and the
/// noise estimate re-derived from it.
pub fn ddim_step(z: &Tensor, eps: &Tensor, alpha: f64, sigma: f64, alpha_prev: f64, sigma_prev: f64) -> Result<Tensor> {
    let x0 = z.lincomb(1.0 / alpha, eps, -sigma / alpha)?;
    if x0.data().iter().all(|v| v.abs() <= X0_CLIP) {
        return x0.lincomb(alpha_prev, eps, sigma_prev);
    }
    let x0 = x0.map(|v| v.clamp(-X0_CLIP, X0_CLIP));
    let eps = z.lincomb(1.0 / sigma, &x0, -alpha / sigma)?;
    x0.lincomb(alpha_prev, &eps, sigma_prev)
}

/// Runs the reverse process from `z_start` at timestep `t_start` down to a
/// clean latent, visiting the sampler grid below `t_start`.
pub fn reverse_from(
    weights: &TrainableWeights,
    z_start: &Tensor,
    t_start: usize,
    prompt: &PromptSpec,
    cfg: &SamplerConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    z_start.expect_shape(&latent_shape())?;
    let sched = &weights.schedule;
    sched.check_timestep(t_start)?;
    if t_start == 0 {
        return Ok(z_start.clone());
    }
    let pair = GuidancePair::new(weights, prompt)?;
    let steps = cfg.steps.min(sched.steps());
    let mut grid: Vec<usize> = ddim_timesteps(sched.steps(), steps)?.into_iter().filter(|&t| t < t_start).collect();
    grid.insert(0, t_start);
    let mut z = z_start.clone();
    for (i, &t) in grid.iter().enumerate() {
        let t_prev = grid.get(i + 1).copied().unwrap_or(0);
        let eps = guided_eps(weights, &LatentCode { data: z.clone(), timestep: t }, t, &pair, cfg.cfg_scale)?;
        z = ddim_step(&z, &eps, sched.alpha(t), sched.sigma(t), sched.alpha(t_prev), sched.sigma(t_prev))?;
    }
    if !z.is_finite() {
        return Err(crate::Error::Numeric(alloc::format!(
            "sampler produced a non-finite latent for `{}`",
            prompt.text()
        )));
    }
    Ok(z)
}

/// Draws `z_T ~ N(0, I)` and samples a clean latent.
pub fn sample_latent(weights: &TrainableWeights, prompt: &PromptSpec, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Tensor> {
    let z_t = rng::normal_tensor(rng, &latent_shape());
    reverse_from(weights, &z_t, weights.schedule.steps(), prompt, cfg)
}

/// `n` decoded samples for one prompt; the `i`-th draw depends only on
/// `(seed, i)`.
pub fn sample_images(
    weights: &TrainableWeights,
    prompt: &PromptSpec,
    n: usize,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<Image>> {
    (0..n)
        .map(|i| {
            let mut r = rng::derive(seed, &alloc::format!("sample-{i}"));
            let z = sample_latent(weights, prompt, cfg, &mut r)?;
            decode_latent(&weights.frozen_autoencoder, &z)
        })
        .collect()
}
