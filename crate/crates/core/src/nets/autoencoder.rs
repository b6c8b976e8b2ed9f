//! Convolutional image autoencoder: `[3,32,32]` images to `[4,8,8]` latents.
//! Trained once with a reconstruction loss and frozen afterwards.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::image::Image;
use crate::nets::layers::conv;
use crate::nets::{image_shape, latent_shape, Binder, Init};
use crate::params::TensorTable;
use crate::schedule::LatentCode;
use crate::tensor::Tensor;

/// Name of the scalar multiplying encoder outputs to give unit-scale latents.
pub const LATENT_SCALE: &str = "latent_scale";

pub fn init_params(seed: u64) -> TensorTable {
    let mut init = Init::new(seed);
    init.conv("enc.c1", 16, 3, 3);
    init.conv("enc.c2", 32, 16, 3);
    init.conv("enc.c3", 32, 32, 3);
    init.conv("enc.out", 4, 32, 1);
    init.conv("dec.in", 32, 4, 3);
    init.conv("dec.c1", 16, 32, 3);
    init.conv("dec.c2", 16, 16, 3);
    init.conv("dec.out", 3, 16, 3);
    init.constant(LATENT_SCALE, Tensor::scalar(1.0));
    init.finish()
}

fn scale_of(p: &Binder<'_>) -> Result<f64> {
    Ok(p.table().get(LATENT_SCALE)?.data()[0])
}

pub fn encode_graph<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, x: Var) -> Result<Var> {
    let h = conv(g, p, "enc.c1", x, 1, 1)?;
    let h = g.silu(h);
    let h = conv(g, p, "enc.c2", h, 2, 1)?;
    let h = g.silu(h);
    let h = conv(g, p, "enc.c3", h, 2, 1)?;
    let h = g.silu(h);
    let z = conv(g, p, "enc.out", h, 1, 0)?;
    let s = scale_of(p)?;
    Ok(if s == 1.0 { z } else { g.scale(z, s) })
}

pub fn decode_graph<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, z: Var) -> Result<Var> {
    let s = scale_of(p)?;
    let z = if s == 1.0 { z } else { g.scale(z, 1.0 / s) };
    let h = conv(g, p, "dec.in", z, 1, 1)?;
    let h = g.silu(h);
    let h = g.upsample2x(h)?;
    let h = conv(g, p, "dec.c1", h, 1, 1)?;
    let h = g.silu(h);
    let h = g.upsample2x(h)?;
    let h = conv(g, p, "dec.c2", h, 1, 1)?;
    let h = g.silu(h);
    let h = conv(g, p, "dec.out", h, 1, 1)?;
    Ok(g.sigmoid(h))
}

/// Deterministic encoding of an image into a clean latent.
pub fn encode_image(autoencoder: &TensorTable, image: &Image) -> Result<LatentCode> {
    image.tensor().expect_shape(&image_shape())?;
    let mut g = Graph::new();
    let mut p = Binder::frozen(autoencoder);
    let x = g.constant(image.tensor().clone());
    let z = encode_graph(&mut g, &mut p, x)?;
    Ok(LatentCode::clean(g.value(z).clone()))
}

pub fn decode_latent(autoencoder: &TensorTable, z: &Tensor) -> Result<Image> {
    z.expect_shape(&latent_shape())?;
    let mut g = Graph::new();
    let mut p = Binder::frozen(autoencoder);
    let x = g.constant(z.clone());
    let y = decode_graph(&mut g, &mut p, x)?;
    Image::from_clamped(g.value(y).clone())
}

/// `decode(encode(x))`.
pub fn reconstruct(autoencoder: &TensorTable, image: &Image) -> Result<Image> {
    let z = encode_image(autoencoder, image)?;
    decode_latent(autoencoder, &z.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let ae = init_params(3);
        let img = Image::new(Tensor::from_fn(&image_shape(), |i| (i % 7) as f64 / 7.0)).unwrap();
        let a = encode_image(&ae, &img).unwrap();
        let b = encode_image(&ae, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.shape(), &latent_shape());
        let out = decode_latent(&ae, &a.data).unwrap();
        assert_eq!(out.tensor().shape(), &image_shape());
    }

    #[test]
    fn black_image_gives_finite_latent() {
        let ae = init_params(3);
        let z = encode_image(&ae, &Image::black()).unwrap();
        assert!(z.data.is_finite());
    }

    #[test]
    fn wrong_shape_rejected() {
        let ae = init_params(3);
        let z = Tensor::zeros(&[4, 4, 4]);
        assert!(decode_latent(&ae, &z).is_err());
        assert!(Image::new(Tensor::zeros(&[3, 16, 16])).is_err());
    }
}
