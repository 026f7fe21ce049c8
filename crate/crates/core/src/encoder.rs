//! Shared token encoder for queries and category text.
//!
//! Token plus position embeddings followed by `encoder_layers` post-norm
//! transformer blocks (masked multi-head self-attention and a ReLU
//! feed-forward). No classification token is prepended: one output row per
//! input position. Padding positions are masked out as attention keys.

use rand::Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{CategorySet, TokenSequence};

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new<R: Rng + ?Sized>(params: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Linear {
            weight: params.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng),
            bias: params.add_uniform(format!("{name}.bias"), &[1, fan_out], fan_in, rng),
        }
    }

    fn apply(&self, tape: &mut Tape, p: &BoundParams, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.weight))?;
        tape.add_row(y, p.var(self.bias))
    }
}

#[derive(Debug, Clone)]
struct LayerNormIds {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNormIds {
    fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNormIds {
            gamma: params.add(format!("{name}.gamma"), Tensor::ones(&[dim])),
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    attn_norm: LayerNormIds,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNormIds,
}

/// Parameter handles of the encoder inside a model's [`ParamSet`].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<EncoderLayer>,
    dim: usize,
    heads: usize,
    eps: f64,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, params: &mut ParamSet, rng: &mut R) -> Self {
        let d = cfg.dim;
        let max_len = cfg.query_len.max(cfg.category_len);
        let token_embedding = params.add_uniform("encoder.token_embedding", &[cfg.vocab_size, d], d, rng);
        let position_embedding = params.add_uniform("encoder.position_embedding", &[max_len, d], d, rng);
        let layers = (0..cfg.encoder_layers)
            .map(|i| {
                let n = |s: &str| format!("encoder.layer{i}.{s}");
                EncoderLayer {
                    query: Linear::new(params, &n("query"), d, d, rng),
                    key: Linear::new(params, &n("key"), d, d, rng),
                    value: Linear::new(params, &n("value"), d, d, rng),
                    output: Linear::new(params, &n("output"), d, d, rng),
                    attn_norm: LayerNormIds::new(params, &n("attn_norm"), d),
                    ffn_in: Linear::new(params, &n("ffn_in"), d, cfg.ffn_width, rng),
                    ffn_out: Linear::new(params, &n("ffn_out"), cfg.ffn_width, d, rng),
                    ffn_norm: LayerNormIds::new(params, &n("ffn_norm"), d),
                }
            })
            .collect();
        EncoderParams {
            token_embedding,
            position_embedding,
            layers,
            dim: d,
            heads: cfg.heads,
            eps: cfg.layer_norm_eps,
        }
    }

    pub fn token_embedding(&self) -> ParamId {
        self.token_embedding
    }

    pub fn position_embedding(&self) -> ParamId {
        self.position_embedding
    }

    /// Contextual embeddings `[L×d]` for `tokens`.
    pub fn encode(&self, tape: &mut Tape, p: &BoundParams, tokens: &TokenSequence) -> Result<Var> {
        let len = tokens.len();
        let max_len = tape.shape(p.var(self.position_embedding))[0];
        if len > max_len {
            return Err(Error::Contract(format!(
                "sequence of length {len} exceeds position table of {max_len}"
            )));
        }
        let tok = tape.gather_rows(p.var(self.token_embedding), &tokens.ids)?;
        let pos = tape.narrow(p.var(self.position_embedding), 0, 0, len)?;
        let mut x = tape.add(tok, pos)?;
        let mask = tokens.mask();
        for layer in &self.layers {
            x = self.layer_forward(tape, p, layer, x, &mask)?;
        }
        Ok(x)
    }

    fn layer_forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        layer: &EncoderLayer,
        x: Var,
        mask: &[bool],
    ) -> Result<Var> {
        let q = layer.query.apply(tape, p, x)?;
        let k = layer.key.apply(tape, p, x)?;
        let v = layer.value.apply(tape, p, x)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.narrow(q, 1, h * head_dim, head_dim)?;
            let kh = tape.narrow(k, 1, h * head_dim, head_dim)?;
            let vh = tape.narrow(v, 1, h * head_dim, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.masked_softmax(scores, 1, Some(mask))?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat(&heads, 1)?
        };
        let attended = layer.output.apply(tape, p, joined)?;
        let res = tape.add(x, attended)?;
        let x = tape.layer_norm(res, p.var(layer.attn_norm.gamma), p.var(layer.attn_norm.beta), self.eps)?;

        let hidden = layer.ffn_in.apply(tape, p, x)?;
        let hidden = tape.relu(hidden);
        let ff = layer.ffn_out.apply(tape, p, hidden)?;
        let res = tape.add(x, ff)?;
        tape.layer_norm(res, p.var(layer.ffn_norm.gamma), p.var(layer.ffn_norm.beta), self.eps)
    }

    /// Encodes every category with the same parameters as queries.
    pub fn encode_all_categories(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        cats: &CategorySet,
        max_len: usize,
    ) -> Result<Vec<Var>> {
        cats.assembled(max_len)
            .iter()
            .map(|seq| self.encode(tape, p, seq))
            .collect()
    }

    /// Forward-only encoding on a scratch tape.
    pub fn encode_value(&self, params: &ParamSet, tokens: &TokenSequence) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let out = self.encode(&mut tape, &p, tokens)?;
        Ok(tape.value(out).clone())
    }
}
