//! Named-parameter layer helpers shared by the networks.

use alloc::format;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nets::Binder;

pub fn conv<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, name: &str, x: Var, stride: usize, pad: usize) -> Result<Var> {
    let w = p.get(g, &format!("{name}.w"))?;
    let b = p.get(g, &format!("{name}.b"))?;
    g.conv2d(x, w, Some(b), stride, pad)
}

pub fn linear<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, name: &str, x: Var) -> Result<Var> {
    let w = p.get(g, &format!("{name}.w"))?;
    let bias_name = format!("{name}.b");
    let b = if p.table().contains(&bias_name) { Some(p.get(g, &bias_name)?) } else { None };
    g.linear(x, w, b)
}

pub fn group_norm<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, name: &str, x: Var, groups: usize) -> Result<Var> {
    let gamma = p.get(g, &format!("{name}.gamma"))?;
    let beta = p.get(g, &format!("{name}.beta"))?;
    g.group_norm(x, gamma, beta, groups)
}

pub fn layer_norm<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, name: &str, x: Var) -> Result<Var> {
    let gamma = p.get(g, &format!("{name}.gamma"))?;
    let beta = p.get(g, &format!("{name}.beta"))?;
    g.layer_norm(x, gamma, beta)
}
