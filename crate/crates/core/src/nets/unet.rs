//! Conditional noise predictor: a small U-Net over `[4,8,8]` latents with two
//! downsampling stages (widths 32/64), a sinusoidal time embedding injected
//! into every residual block and a single cross-attention layer at 8x8.

use alloc::format;
use alloc::vec;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nets::layers::{conv, group_norm, linear};
use crate::nets::text::{ConditioningVector, TEXT_DIM};
use crate::nets::{latent_shape, Binder, Init, TrainableWeights, LATENT_CHANNELS, LATENT_SIZE};
use crate::schedule::{LatentCode, NoiseSample};
use crate::tensor::Tensor;

const WIDTH_HIGH: usize = 32;
const WIDTH_LOW: usize = 64;
const GROUPS: usize = 8;
const TIME_FEATURES: usize = 32;
const TIME_DIM: usize = 64;
const ATTN_DIM: usize = 32;

pub fn init_params(init: &mut Init) {
    init.linear("time.l1", TIME_DIM, TIME_FEATURES, true);
    init.linear("time.l2", TIME_DIM, TIME_DIM, true);
    init.conv("in", WIDTH_HIGH, LATENT_CHANNELS, 3);
    res_block_params(init, "down8", WIDTH_HIGH, WIDTH_HIGH);
    init.norm("attn.norm", WIDTH_HIGH);
    init.linear("attn.q", ATTN_DIM, WIDTH_HIGH, false);
    init.linear("attn.k", ATTN_DIM, TEXT_DIM, false);
    init.linear("attn.v", WIDTH_HIGH, TEXT_DIM, false);
    init.linear("attn.o", WIDTH_HIGH, WIDTH_HIGH, true);
    init.conv("down1", WIDTH_LOW, WIDTH_HIGH, 3);
    res_block_params(init, "down4", WIDTH_LOW, WIDTH_LOW);
    init.conv("down2", WIDTH_LOW, WIDTH_LOW, 3);
    res_block_params(init, "mid", WIDTH_LOW, WIDTH_LOW);
    res_block_params(init, "up4", 2 * WIDTH_LOW, WIDTH_LOW);
    res_block_params(init, "up8", WIDTH_LOW + WIDTH_HIGH, WIDTH_HIGH);
    init.norm("out_norm", WIDTH_HIGH);
    init.zero_conv("out", LATENT_CHANNELS, WIDTH_HIGH, 3);
}

fn res_block_params(init: &mut Init, name: &str, cin: usize, cout: usize) {
    init.norm(&format!("{name}.norm1"), cin);
    init.conv(&format!("{name}.conv1"), cout, cin, 3);
    init.linear(&format!("{name}.temb"), cout, TIME_DIM, true);
    init.norm(&format!("{name}.norm2"), cout);
    init.conv(&format!("{name}.conv2"), cout, cout, 3);
    if cin != cout {
        init.conv(&format!("{name}.skip"), cout, cin, 1);
    }
}

/// Sinusoidal features of an integer timestep.
pub fn timestep_features(t: usize) -> Tensor {
    let half = TIME_FEATURES / 2;
    let mut v = vec![0.0; TIME_FEATURES];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half as f64);
        let arg = t as f64 * freq;
        v[i] = libm::sin(arg);
        v[half + i] = libm::cos(arg);
    }
    Tensor::new(&[1, TIME_FEATURES], v).expect("static shape")
}

fn res_block<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, name: &str, x: Var, temb: Var) -> Result<Var> {
    let h = group_norm(g, p, &format!("{name}.norm1"), x, GROUPS)?;
    let h = g.silu(h);
    let h = conv(g, p, &format!("{name}.conv1"), h, 1, 1)?;
    let tb = linear(g, p, &format!("{name}.temb"), temb)?;
    let h = g.add_channel_vec(h, tb)?;
    let h = group_norm(g, p, &format!("{name}.norm2"), h, GROUPS)?;
    let h = g.silu(h);
    let h = conv(g, p, &format!("{name}.conv2"), h, 1, 1)?;
    let skip_name = format!("{name}.skip.w");
    let skip = if p.table().contains(&skip_name) { conv(g, p, &format!("{name}.skip"), x, 1, 0)? } else { x };
    g.add(skip, h)
}

/// Graph outputs of one noise-predictor evaluation.
pub struct UNetOutput {
    pub eps: Var,
    /// Softmax cross-attention weights `[64 positions, tokens]`.
    pub attention: Var,
}

/// `eps_theta(z_t, t, c)` on the graph.
pub fn forward<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, z_t: Var, t: usize, c: Var) -> Result<UNetOutput> {
    g.value(z_t).expect_shape(&latent_shape())?;
    let tf = g.constant(timestep_features(t));
    let temb = linear(g, p, "time.l1", tf)?;
    let temb = g.silu(temb);
    let temb = linear(g, p, "time.l2", temb)?;
    let temb = g.silu(temb);

    let x = conv(g, p, "in", z_t, 1, 1)?;
    let h8 = res_block(g, p, "down8", x, temb)?;

    // Cross-attention from spatial positions to prompt tokens.
    let n = group_norm(g, p, "attn.norm", h8, GROUPS)?;
    let rows = g.channels_to_rows(n)?;
    let q = linear(g, p, "attn.q", rows)?;
    let k = linear(g, p, "attn.k", c)?;
    let v = linear(g, p, "attn.v", c)?;
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(ATTN_DIM as f64));
    let attention = g.softmax_rows(scores)?;
    let mixed = g.matmul(attention, v)?;
    let o = linear(g, p, "attn.o", mixed)?;
    let o = g.rows_to_channels(o, LATENT_SIZE, LATENT_SIZE)?;
    let h8 = g.add(h8, o)?;

    let d4 = conv(g, p, "down1", h8, 2, 1)?;
    let h4 = res_block(g, p, "down4", d4, temb)?;
    let d2 = conv(g, p, "down2", h4, 2, 1)?;
    let m = res_block(g, p, "mid", d2, temb)?;

    let u4 = g.upsample2x(m)?;
    let u4 = g.concat_channels(u4, h4)?;
    let u4 = res_block(g, p, "up4", u4, temb)?;
    let u8 = g.upsample2x(u4)?;
    let u8 = g.concat_channels(u8, h8)?;
    let u8 = res_block(g, p, "up8", u8, temb)?;

    let o = group_norm(g, p, "out_norm", u8, GROUPS)?;
    let o = g.silu(o);
    let eps = conv(g, p, "out", o, 1, 1)?;
    Ok(UNetOutput { eps, attention })
}

/// Per-token cross-attention weights at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// `[tokens, 8, 8]`; at every position the weights over tokens sum to 1.
    pub per_token: Tensor,
    pub timestep: usize,
}

impl AttentionMap {
    fn from_rows(rows: &Tensor, timestep: usize) -> Self {
        let (npos, ntok) = (rows.shape()[0], rows.shape()[1]);
        let d = rows.data();
        let per_token = Tensor::from_fn(&[ntok, LATENT_SIZE, LATENT_SIZE], |i| {
            let (tok, pos) = (i / npos, i % npos);
            d[pos * ntok + tok]
        });
        Self { per_token, timestep }
    }

    pub fn tokens(&self) -> usize {
        self.per_token.shape()[0]
    }

    pub fn token_map(&self, token: usize) -> &[f64] {
        let n = LATENT_SIZE * LATENT_SIZE;
        &self.per_token.data()[token * n..(token + 1) * n]
    }
}

/// Noise prediction for one latent; optionally returns the attention map.
pub fn denoise(
    weights: &TrainableWeights,
    z_t: &LatentCode,
    t: usize,
    c: &ConditioningVector,
    capture_attention: bool,
) -> Result<(NoiseSample, Option<AttentionMap>)> {
    weights.schedule.check_timestep(t)?;
    let mut g = Graph::new();
    let mut p = Binder::frozen(&weights.theta);
    let z = g.frozen(&z_t.data);
    let cv = g.frozen(&c.tokens_embedded);
    let out = forward(&mut g, &mut p, z, t, cv)?;
    let eps = NoiseSample { data: g.value(out.eps).clone() };
    let attn = capture_attention.then(|| AttentionMap::from_rows(g.value(out.attention), t));
    Ok((eps, attn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{autoencoder, text};
    use crate::prompt::tokenize;
    use crate::rng;
    use crate::schedule::DiffusionSchedule;

    fn randomized_weights() -> TrainableWeights {
        let mut w = TrainableWeights::init(11, autoencoder::init_params(1), DiffusionSchedule::default());
        // Non-zero output layer so the prediction depends on everything upstream.
        let mut r = rng::seeded(99);
        for (_, t) in w.theta.iter_mut() {
            for v in t.data_mut() {
                *v += 0.05 * rng::normal(&mut r);
            }
        }
        w
    }

    #[test]
    fn output_shape_and_attention_normalization() {
        let w = randomized_weights();
        let c = text::text_encode(&w, &tokenize("a photo of [V] style").unwrap()).unwrap();
        let z = LatentCode { data: rng::normal_tensor(&mut rng::seeded(1), &latent_shape()), timestep: 50 };
        let (eps, attn) = denoise(&w, &z, 50, &c, true).unwrap();
        assert_eq!(eps.data.shape(), z.data.shape());
        let attn = attn.unwrap();
        assert_eq!(attn.tokens(), 5);
        for pos in 0..64 {
            let s: f64 = (0..attn.tokens()).map(|k| attn.token_map(k)[pos]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert!(attn.per_token.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_value_projection_removes_conditioning() {
        let mut w = randomized_weights();
        let v = w.theta.get_mut("attn.v.w").unwrap();
        v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let z = LatentCode { data: rng::normal_tensor(&mut rng::seeded(2), &latent_shape()), timestep: 10 };
        let c1 = text::text_encode(&w, &tokenize("a photo of [V] style").unwrap()).unwrap();
        let c2 = text::text_encode(&w, &tokenize("a photo of a woman in red").unwrap()).unwrap();
        let (a, _) = denoise(&w, &z, 10, &c1, false).unwrap();
        let (b, _) = denoise(&w, &z, 10, &c2, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_weights_predict_zero() {
        let w = TrainableWeights::init(1, autoencoder::init_params(1), DiffusionSchedule::default());
        let c = text::text_encode(&w, &tokenize("").unwrap()).unwrap();
        let z = LatentCode { data: rng::normal_tensor(&mut rng::seeded(2), &latent_shape()), timestep: 3 };
        let (eps, _) = denoise(&w, &z, 3, &c, false).unwrap();
        assert!(eps.data.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes_and_timesteps() {
        let w = randomized_weights();
        let c = text::text_encode(&w, &tokenize("a photo").unwrap()).unwrap();
        let bad = LatentCode { data: Tensor::zeros(&[4, 4, 4]), timestep: 0 };
        assert!(denoise(&w, &bad, 1, &c, false).is_err());
        let z = LatentCode { data: Tensor::zeros(&latent_shape()), timestep: 0 };
        assert!(denoise(&w, &z, 10_000, &c, false).is_err());
    }
}
