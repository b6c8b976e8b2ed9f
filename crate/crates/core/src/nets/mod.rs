//! The three parameterized functions: the frozen image autoencoder, the text
//! encoder and the conditional noise predictor, plus gradient computation.

pub mod autoencoder;
pub mod layers;
pub mod text;
pub mod unet;

use alloc::collections::BTreeMap;
use alloc::format;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::TensorTable;
use crate::rng;
use crate::schedule::DiffusionSchedule;
use crate::tensor::Tensor;

pub use autoencoder::{decode_latent, encode_image};
pub use text::{text_encode, ConditioningVector};
pub use unet::{denoise, AttentionMap};

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIZE: usize = 32;
pub const LATENT_CHANNELS: usize = 4;
pub const LATENT_SIZE: usize = 8;

pub fn image_shape() -> [usize; 3] {
    [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE]
}

pub fn latent_shape() -> [usize; 3] {
    [LATENT_CHANNELS, LATENT_SIZE, LATENT_SIZE]
}

/// The jointly optimized parameters (`theta`: noise predictor, `phi`: text
/// encoder) together with the frozen autoencoder and the noise schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableWeights {
    pub theta: TensorTable,
    pub phi: TensorTable,
    pub frozen_autoencoder: TensorTable,
    pub schedule: DiffusionSchedule,
    /// Number of optimizer updates applied since initialization.
    pub version: u64,
}

impl TrainableWeights {
    /// Fresh weights: fan-in scaled Gaussian layers, unit Gaussian
    /// embeddings, zero biases, unit norm gains
    /// and a zero-initialized output layer for the noise predictor.
    pub fn init(seed: u64, frozen_autoencoder: TensorTable, schedule: DiffusionSchedule) -> Self {
        let mut init = Init::fan_in(rng::derive_seed(seed, "theta"));
        unet::init_params(&mut init);
        let theta = init.finish();
        let mut init = Init::fan_in(rng::derive_seed(seed, "phi"));
        text::init_params(&mut init);
        let phi = init.finish();
        Self { theta, phi, frozen_autoencoder, schedule, version: 0 }
    }

    pub fn all_finite(&self) -> bool {
        self.theta.all_finite() && self.phi.all_finite() && self.frozen_autoencoder.all_finite()
    }
}

/// Binds named tensors of one table into a graph, once per name.
pub struct Binder<'a> {
    table: &'a TensorTable,
    trainable: bool,
    vars: BTreeMap<&'a str, Var>,
}

impl<'a> Binder<'a> {
    pub fn trainable(table: &'a TensorTable) -> Self {
        Self { table, trainable: true, vars: BTreeMap::new() }
    }

    pub fn frozen(table: &'a TensorTable) -> Self {
        Self { table, trainable: false, vars: BTreeMap::new() }
    }

    pub fn get(&mut self, g: &mut Graph<'a>, name: &str) -> Result<Var> {
        if let Some(v) = self.vars.get(name) {
            return Ok(*v);
        }
        let (key, t) = self.table.get_entry(name)?;
        let v = if self.trainable { g.param(t) } else { g.frozen(t) };
        self.vars.insert(key, v);
        Ok(v)
    }

    pub fn table(&self) -> &'a TensorTable {
        self.table
    }

    /// Gradient for every tensor in the table; zeros for unused entries.
    pub fn collect(&self, grads: &crate::graph::Grads) -> Result<TensorTable> {
        let mut out = TensorTable::new();
        for (name, t) in self.table.iter() {
            let g = match self.vars.get(name).and_then(|v| grads.get(*v)) {
                Some(g) => Tensor::new(t.shape(), g.to_vec())?,
                None => Tensor::zeros(t.shape()),
            };
            out.insert(name, g);
        }
        Ok(out)
    }
}

/// Graph bindings for a full model.
pub struct ModelVars<'a> {
    pub theta: Binder<'a>,
    pub phi: Binder<'a>,
    pub autoencoder: Binder<'a>,
    pub schedule: &'a DiffusionSchedule,
}

impl<'a> ModelVars<'a> {
    pub fn trainable(w: &'a TrainableWeights) -> Self {
        Self {
            theta: Binder::trainable(&w.theta),
            phi: Binder::trainable(&w.phi),
            autoencoder: Binder::frozen(&w.frozen_autoencoder),
            schedule: &w.schedule,
        }
    }

    pub fn frozen(w: &'a TrainableWeights) -> Self {
        Self {
            theta: Binder::frozen(&w.theta),
            phi: Binder::frozen(&w.phi),
            autoencoder: Binder::frozen(&w.frozen_autoencoder),
            schedule: &w.schedule,
        }
    }
}

/// Gradient of a scalar loss with respect to `theta` and `phi`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradTable {
    pub theta: TensorTable,
    pub phi: TensorTable,
}

/// Builds the loss with `loss_closure` over trainable bindings of `weights`
/// and returns d(loss)/d(omega) for every tensor of `theta` and `phi`.
pub fn gradients<'a, F>(weights: &'a TrainableWeights, loss_closure: F) -> Result<(f64, GradTable)>
where
    F: FnOnce(&mut Graph<'a>, &mut ModelVars<'a>) -> Result<Var>,
{
    let mut g = Graph::new();
    let mut vars = ModelVars::trainable(weights);
    let loss = loss_closure(&mut g, &mut vars)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "loss evaluated to {} over a graph of {} nodes",
            value,
            g.len()
        )));
    }
    let grads = g.backward(loss)?;
    Ok((value, GradTable { theta: vars.theta.collect(&grads)?, phi: vars.phi.collect(&grads)? }))
}

/// Parameter initializer backed by one seeded generator.
pub struct Init {
    rng: rng::Rng,
    std: f64,
    fan_in: bool,
    table: TensorTable,
}

impl Init {
    pub const DEFAULT_STD: f64 = 0.02;

    pub fn new(seed: u64) -> Self {
        Self::with_std(seed, Self::DEFAULT_STD)
    }

    pub fn with_std(seed: u64, std: f64) -> Self {
        Self { rng: rng::seeded(seed), std, fan_in: false, table: TensorTable::new() }
    }

    /// Convolutions and linear layers drawn with std `1/sqrt(fan_in)`,
    /// embeddings with unit std.
    pub fn fan_in(seed: u64) -> Self {
        Self { fan_in: true, ..Self::new(seed) }
    }

    fn weight_std(&self, fan_in: usize) -> f64 {
        if self.fan_in {
            1.0 / libm::sqrt(fan_in as f64)
        } else {
            self.std
        }
    }

    fn gaussian(&mut self, shape: &[usize], std: f64) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| std * rng::normal(rng))
    }

    pub fn conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) {
        let w = self.gaussian(&[out_ch, in_ch, k, k], self.weight_std(in_ch * k * k));
        self.table.insert(format!("{name}.w"), w);
        self.table.insert(format!("{name}.b"), Tensor::zeros(&[out_ch]));
    }

    /// He-scaled convolution, for the fixed random feature network.
    pub fn conv_he(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) {
        let std = libm::sqrt(2.0 / (in_ch * k * k) as f64);
        let w = self.gaussian(&[out_ch, in_ch, k, k], std);
        self.table.insert(format!("{name}.w"), w);
        self.table.insert(format!("{name}.b"), Tensor::zeros(&[out_ch]));
    }

    pub fn zero_conv(&mut self, name: &str, out_ch: usize, in_ch: usize, k: usize) {
        self.table.insert(format!("{name}.w"), Tensor::zeros(&[out_ch, in_ch, k, k]));
        self.table.insert(format!("{name}.b"), Tensor::zeros(&[out_ch]));
    }

    pub fn linear(&mut self, name: &str, out_dim: usize, in_dim: usize, bias: bool) {
        let w = self.gaussian(&[out_dim, in_dim], self.weight_std(in_dim));
        self.table.insert(format!("{name}.w"), w);
        if bias {
            self.table.insert(format!("{name}.b"), Tensor::zeros(&[out_dim]));
        }
    }

    pub fn norm(&mut self, name: &str, dim: usize) {
        self.table.insert(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        self.table.insert(format!("{name}.beta"), Tensor::zeros(&[dim]));
    }

    pub fn embedding(&mut self, name: &str, rows: usize, dim: usize) {
        let std = if self.fan_in { 1.0 } else { self.std };
        let w = self.gaussian(&[rows, dim], std);
        self.table.insert(name, w);
    }

    pub fn constant(&mut self, name: &str, t: Tensor) {
        self.table.insert(name, t);
    }

    pub fn finish(self) -> TensorTable {
        self.table
    }
}
