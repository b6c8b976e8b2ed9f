//! The two-term denoising objective over (reference, auxiliary) pairs.

use alloc::vec::Vec;

use crate::data::Record;
use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::nets::{self, encode_image, latent_shape, text, unet, GradTable, ModelVars, TrainableWeights};
use crate::prompt::PromptSpec;
use crate::rng::{self, Rng};
use crate::schedule::{forward_diffuse, LatentCode, NoiseSample};
use crate::tensor::Tensor;

/// Noise prediction on the graph. The model implementation encodes the
/// prompt with `phi` and runs the noise predictor; tests substitute doubles.
pub trait NoisePredictor {
    fn predict<'a>(
        &self,
        g: &mut Graph<'a>,
        vars: &mut ModelVars<'a>,
        z_t: Var,
        t: usize,
        prompt: &PromptSpec,
    ) -> Result<Var>;
}

pub struct ModelPredictor;

impl NoisePredictor for ModelPredictor {
    fn predict<'a>(
        &self,
        g: &mut Graph<'a>,
        vars: &mut ModelVars<'a>,
        z_t: Var,
        t: usize,
        prompt: &PromptSpec,
    ) -> Result<Var> {
        let c = text::forward(g, &mut vars.phi, &prompt.encoder_tokens())?;
        Ok(unet::forward(g, &mut vars.theta, z_t, t, c)?.eps)
    }
}

/// A clean latent, its noise draw and its prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct TermDraw {
    pub z0: LatentCode,
    pub eps: NoiseSample,
    pub prompt: PromptSpec,
}

/// Everything random about one (reference, auxiliary) pair: a single shared
/// timestep and independent noise for the two terms.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDraw {
    pub t: usize,
    pub styleref: TermDraw,
    pub aux: Option<TermDraw>,
}

/// Values of the objective and its two terms, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub styleref: f64,
    pub aux: f64,
}

/// Draws `t ~ U{1..T}`, then `eps`, then `eps'`. The auxiliary noise is drawn
/// even without an auxiliary latent so the stream does not depend on it.
pub fn draw_pair(
    rng: &mut Rng,
    horizon: usize,
    styleref: (&Tensor, &PromptSpec),
    aux: Option<(&Tensor, &PromptSpec)>,
) -> PairDraw {
    let t = rng::uniform_int(rng, 1, horizon);
    let eps = NoiseSample { data: rng::normal_tensor(rng, &latent_shape()) };
    let eps_aux = NoiseSample { data: rng::normal_tensor(rng, &latent_shape()) };
    PairDraw {
        t,
        styleref: TermDraw { z0: LatentCode::clean(styleref.0.clone()), eps, prompt: styleref.1.clone() },
        aux: aux.map(|(z, p)| TermDraw { z0: LatentCode::clean(z.clone()), eps: eps_aux, prompt: p.clone() }),
    }
}

fn term<'a, P: NoisePredictor>(
    predictor: &P,
    g: &mut Graph<'a>,
    vars: &mut ModelVars<'a>,
    t: usize,
    d: &TermDraw,
) -> Result<Var> {
    let z_t = forward_diffuse(&d.z0, t, &d.eps, vars.schedule)?;
    let z = g.constant(z_t.data);
    let pred = predictor.predict(g, vars, z, t, &d.prompt)?;
    g.mean_squared(pred, &d.eps.data)
}

/// `mean_b [ |eps - eps_theta(z_t, t, c)|^2 + lambda |eps' - eps_theta(z'_t, t, c')|^2 ]`
/// with per-element mean squares, and its gradient. With `lambda = 0` the
/// auxiliary term is not built at all.
pub fn pair_loss<P: NoisePredictor>(
    predictor: &P,
    weights: &TrainableWeights,
    draws: &[PairDraw],
    lambda: f64,
) -> Result<(LossParts, GradTable)> {
    if draws.is_empty() {
        return Err(invalid!("empty batch"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid!("lambda must be a finite non-negative number, got {}", lambda));
    }
    let mut parts = LossParts { total: 0.0, styleref: 0.0, aux: 0.0 };
    let n = draws.len() as f64;
    let (total, grads) = nets::gradients(weights, |g, vars| {
        let mut acc: Option<Var> = None;
        for d in draws {
            let s = term(predictor, g, vars, d.t, &d.styleref)?;
            parts.styleref += g.value(s).data()[0] / n;
            let mut l = s;
            if lambda != 0.0 {
                let a = d.aux.as_ref().ok_or_else(|| invalid!("lambda > 0 needs an auxiliary draw"))?;
                let a = term(predictor, g, vars, d.t, a)?;
                parts.aux += g.value(a).data()[0] / n;
                let a = g.scale(a, lambda);
                l = g.add(l, a)?;
            }
            acc = Some(match acc {
                None => l,
                Some(prev) => g.add(prev, l)?,
            });
        }
        let sum = acc.expect("non-empty batch");
        Ok(if draws.len() == 1 { sum } else { g.scale(sum, 1.0 / n) })
    })?;
    parts.total = total;
    Ok((parts, grads))
}

/// The objective on records: encodes the images with the frozen
/// autoencoder, draws one pair per index and evaluates [`pair_loss`].
/// `aux_batch` may be empty only when `lambda = 0`.
pub fn ssf_loss(
    weights: &TrainableWeights,
    styleref_batch: &[Record],
    aux_batch: &[Record],
    lambda: f64,
    rng: &mut Rng,
) -> Result<(LossParts, GradTable)> {
    if styleref_batch.is_empty() {
        return Err(invalid!("empty styleref batch"));
    }
    if lambda != 0.0 && aux_batch.len() != styleref_batch.len() {
        return Err(invalid!(
            "styleref and aux batches must pair up, got {} and {}",
            styleref_batch.len(),
            aux_batch.len()
        ));
    }
    let ae = &weights.frozen_autoencoder;
    let mut draws = Vec::with_capacity(styleref_batch.len());
    for (i, s) in styleref_batch.iter().enumerate() {
        let zs = encode_image(ae, &s.image)?.data;
        let za = match aux_batch.get(i) {
            Some(a) => Some((encode_image(ae, &a.image)?.data, a.prompt.clone())),
            None => None,
        };
        draws.push(draw_pair(rng, weights.schedule.steps(), (&zs, &s.prompt), za.as_ref().map(|(z, p)| (z, p))));
    }
    pair_loss(&ModelPredictor, weights, &draws, lambda)
}
