//! Text encoder: token + position embeddings, one single-head self-attention
//! block and a per-token output projection.

use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::graph::{Graph, Var};
use crate::nets::layers::{layer_norm, linear};
use crate::nets::{Binder, Init, TrainableWeights};
use crate::prompt::{PromptSpec, Vocabulary};
use crate::tensor::Tensor;

pub const TEXT_DIM: usize = 32;
pub const MAX_TOKENS: usize = 24;

pub fn init_params(init: &mut Init) {
    let vocab = Vocabulary::standard().len();
    init.embedding("token_embedding", vocab, TEXT_DIM);
    init.embedding("position_embedding", MAX_TOKENS, TEXT_DIM);
    init.norm("ln1", TEXT_DIM);
    init.linear("attn.q", TEXT_DIM, TEXT_DIM, false);
    init.linear("attn.k", TEXT_DIM, TEXT_DIM, false);
    init.linear("attn.v", TEXT_DIM, TEXT_DIM, false);
    init.linear("attn.o", TEXT_DIM, TEXT_DIM, true);
    init.norm("ln2", TEXT_DIM);
    init.linear("proj", TEXT_DIM, TEXT_DIM, true);
}

/// The encoded prompt `c`: one row per token.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningVector {
    pub tokens_embedded: Tensor,
}

impl ConditioningVector {
    pub fn sequence_length(&self) -> usize {
        self.tokens_embedded.shape()[0]
    }
}

/// Graph-level encoder over raw token ids (the null sequence for an empty
/// prompt must already be substituted).
pub fn forward<'a>(g: &mut Graph<'a>, p: &mut Binder<'a>, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(invalid!("text encoder needs at least one token"));
    }
    if tokens.len() > MAX_TOKENS {
        return Err(invalid!("prompt has {} tokens, limit is {}", tokens.len(), MAX_TOKENS));
    }
    let table = p.get(g, "token_embedding")?;
    let pos_table = p.get(g, "position_embedding")?;
    let tok = g.gather(table, tokens)?;
    let positions: Vec<usize> = (0..tokens.len()).collect();
    let pos = g.gather(pos_table, &positions)?;
    let h = g.add(tok, pos)?;

    let a = layer_norm(g, p, "ln1", h)?;
    let q = linear(g, p, "attn.q", a)?;
    let k = linear(g, p, "attn.k", a)?;
    let v = linear(g, p, "attn.v", a)?;
    let scores = g.matmul_bt(q, k)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(TEXT_DIM as f64));
    let attn = g.softmax_rows(scores)?;
    let mixed = g.matmul(attn, v)?;
    let o = linear(g, p, "attn.o", mixed)?;
    let h = g.add(h, o)?;

    let n = layer_norm(g, p, "ln2", h)?;
    linear(g, p, "proj", n)
}

/// `c = Gamma_phi(p)`.
pub fn text_encode(weights: &TrainableWeights, prompt: &PromptSpec) -> Result<ConditioningVector> {
    let mut g = Graph::new();
    let mut p = Binder::frozen(&weights.phi);
    let c = forward(&mut g, &mut p, &prompt.encoder_tokens())?;
    Ok(ConditioningVector { tokens_embedded: g.value(c).clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::autoencoder;
    use crate::prompt::tokenize;
    use crate::schedule::DiffusionSchedule;

    fn weights() -> TrainableWeights {
        TrainableWeights::init(5, autoencoder::init_params(1), DiffusionSchedule::default())
    }

    #[test]
    fn identifier_changes_its_position() {
        let w = weights();
        let a = text_encode(&w, &tokenize("a photo of [V] style").unwrap()).unwrap();
        let b = text_encode(&w, &tokenize("a photo of [W] style").unwrap()).unwrap();
        assert_eq!(a.sequence_length(), 5);
        let row = |c: &ConditioningVector, i: usize| c.tokens_embedded.data()[i * TEXT_DIM..(i + 1) * TEXT_DIM].to_vec();
        assert_ne!(row(&a, 3), row(&b, 3));
    }

    #[test]
    fn deterministic_and_null_prompt() {
        let w = weights();
        let p = tokenize("a photo of style").unwrap();
        assert_eq!(text_encode(&w, &p).unwrap(), text_encode(&w, &p).unwrap());
        let null = text_encode(&w, &tokenize("").unwrap()).unwrap();
        assert_eq!(null.sequence_length(), 1);
        assert!(null.tokens_embedded.is_finite());
    }
}
