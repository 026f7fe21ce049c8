//! The multi-granularity matching attention network.
//!
//! Three views of a query feed one fusion head:
//! - self-matching: attention pooling of the query over its own tokens;
//! - char-level matching: a bilinear query × category interaction map per
//!   category, run through a shared conv/pool stack and projected to `d`;
//! - semantic-level matching: mean-pooled categories attending over query
//!   tokens.
//!
//! Category encodings are shared across all queries on a tape, so a training
//! batch encodes the label space once.

mod char_match;
mod fusion;
mod self_match;
mod semantic;

pub use char_match::{char_interaction, char_match, stack_maps, ConvBlockVars};
pub use fusion::{fuse_and_score, multilabel_loss, FusionInputs};
pub use self_match::self_match;
pub use semantic::{category_means, semantic_match, semantic_match_from_means};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Variant};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::text::{CategorySet, LabeledQuery, TokenSequence};

#[derive(Debug, Clone)]
pub struct SelfMatchParams {
    pub w_q: ParamId,
    pub v: ParamId,
}

#[derive(Debug, Clone)]
pub struct ConvBlockParams {
    pub kernels: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct CharMatchParams {
    pub w_qc: ParamId,
    pub blocks: Vec<ConvBlockParams>,
    pub projection: ParamId,
}

#[derive(Debug, Clone)]
pub struct SemanticMatchParams {
    pub w_qs: ParamId,
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    pub w_qf: Option<ParamId>,
    pub w_z: Option<ParamId>,
    pub w_x: ParamId,
}

/// Per-tape category state shared by every query forwarded on that tape.
#[derive(Debug, Clone)]
pub struct CategoryContext {
    /// Encodings `[L_c×d]` with their true lengths.
    encodings: Vec<(Var, usize)>,
    /// Transposed encodings with pad rows zeroed, `[d×L_c]`.
    masked_transposed: Vec<Var>,
    means: Option<Var>,
}

impl CategoryContext {
    pub fn encodings(&self) -> &[(Var, usize)] {
        &self.encodings
    }
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[1×|C|]`
    pub logits: Var,
    /// Query token encodings `[L_q×d]`.
    pub query_tokens: Var,
    /// `(q [1×d], α [1×L_q])`
    pub self_match: Option<(Var, Var)>,
    /// `M [|C|×L_q×L_c]`
    pub interaction: Option<Var>,
    pub z1: Option<Var>,
    pub z2: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct MmanModel {
    config: ModelConfig,
    params: ParamSet,
    encoder: EncoderParams,
    self_match: Option<SelfMatchParams>,
    char_match: Option<CharMatchParams>,
    semantic: Option<SemanticMatchParams>,
    fusion: FusionParams,
}

impl MmanModel {
    /// Builds a model with parameters drawn uniformly in
    /// `±√(1/fan_in)` from a seeded generator.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = config.dim;
        let n_cats = config.num_categories;
        let variant = config.variant;

        let encoder = EncoderParams::new(&config, &mut params, &mut rng);

        let self_match = variant.uses_self().then(|| SelfMatchParams {
            w_q: params.add_uniform("self_match.w_q", &[d, d], d, &mut rng),
            v: params.add_uniform("self_match.v", &[1, d], d, &mut rng),
        });

        let char_match = if variant.uses_char() {
            let w_qc = params.add_uniform("char_match.w_qc", &[d, d], d, &mut rng);
            let [kh, kw] = config.conv_window;
            let blocks = (0..config.conv_blocks)
                .map(|b| {
                    let c_in = if b == 0 { 1 } else { config.conv_filters };
                    let fan_in = c_in * kh * kw;
                    ConvBlockParams {
                        kernels: params.add_uniform(
                            format!("char_match.block{b}.kernels"),
                            &[config.conv_filters, c_in, kh, kw],
                            fan_in,
                            &mut rng,
                        ),
                        bias: params.add_uniform(
                            format!("char_match.block{b}.bias"),
                            &[config.conv_filters],
                            fan_in,
                            &mut rng,
                        ),
                    }
                })
                .collect();
            let flat = config.flat_dim()?;
            let projection = params.add_uniform("char_match.projection", &[flat, d], flat, &mut rng);
            Some(CharMatchParams {
                w_qc,
                blocks,
                projection,
            })
        } else {
            None
        };

        let semantic = variant.uses_semantic().then(|| SemanticMatchParams {
            w_qs: params.add_uniform("semantic.w_qs", &[d, d], d, &mut rng),
        });

        let branches = usize::from(char_match.is_some()) + usize::from(semantic.is_some());
        let fusion = FusionParams {
            w_qf: self_match
                .is_some()
                .then(|| params.add_uniform("fusion.w_qf", &[d, n_cats], d, &mut rng)),
            w_z: (branches > 0).then(|| params.add_uniform("fusion.w_z", &[branches * d, 1], branches * d, &mut rng)),
            w_x: params.add_uniform("fusion.w_x", &[n_cats, n_cats], n_cats, &mut rng),
        };

        Ok(MmanModel {
            config,
            params,
            encoder,
            self_match,
            char_match,
            semantic,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn encoder(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn self_match_params(&self) -> Option<&SelfMatchParams> {
        self.self_match.as_ref()
    }

    pub fn char_match_params(&self) -> Option<&CharMatchParams> {
        self.char_match.as_ref()
    }

    pub fn semantic_params(&self) -> Option<&SemanticMatchParams> {
        self.semantic.as_ref()
    }

    pub fn fusion_params(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Sets every fusion-head weight to zero, so all logits start at 0.
    pub fn zero_fusion_head(&mut self) {
        let ids = [self.fusion.w_qf, self.fusion.w_z, Some(self.fusion.w_x)];
        for id in ids.into_iter().flatten() {
            self.params.get_mut(id).data_mut().fill(0.0);
        }
    }

    fn check_categories(&self, cats: &CategorySet) -> Result<()> {
        if cats.len() != self.config.num_categories {
            return Err(Error::LabelCount {
                expected: self.config.num_categories,
                found: cats.len(),
            });
        }
        Ok(())
    }

    /// Encodes the label space once for every query forwarded on `tape`.
    pub fn prepare_categories(&self, tape: &mut Tape, p: &BoundParams, cats: &CategorySet) -> Result<CategoryContext> {
        self.check_categories(cats)?;
        let sequences = cats.assembled(self.config.category_len);
        let mut encodings = Vec::with_capacity(sequences.len());
        let mut masked_transposed = Vec::new();
        for seq in &sequences {
            let enc = self.encoder.encode(tape, p, seq)?;
            encodings.push((enc, seq.true_length));
            if self.char_match.is_some() {
                let masked = mask_rows(tape, enc, seq)?;
                masked_transposed.push(tape.transpose(masked)?);
            }
        }
        let means = match self.semantic {
            Some(_) => Some(category_means(tape, &encodings)?),
            None => None,
        };
        Ok(CategoryContext {
            encodings,
            masked_transposed,
            means,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ctx: &CategoryContext,
        query: &TokenSequence,
    ) -> Result<ForwardOutput> {
        if query.len() != self.config.query_len {
            return Err(Error::Contract(format!(
                "query has {} positions, model expects {}",
                query.len(),
                self.config.query_len
            )));
        }
        let q_tokens = self.encoder.encode(tape, p, query)?;

        let self_out = match &self.self_match {
            Some(sm) => Some(self_match(
                tape,
                q_tokens,
                p.var(sm.w_q),
                p.var(sm.v),
                query.true_length,
            )?),
            None => None,
        };

        let (interaction, z1) = match &self.char_match {
            Some(cm) => {
                // Pad rows and columns of every interaction map are zero.
                let masked_q = mask_rows(tape, q_tokens, query)?;
                let qw = tape.matmul(masked_q, p.var(cm.w_qc))?;
                let maps = ctx
                    .masked_transposed
                    .iter()
                    .map(|&ct| tape.matmul(qw, ct))
                    .collect::<Result<Vec<_>>>()?;
                let stacked = stack_maps(tape, &maps)?;
                let blocks: Vec<ConvBlockVars> = cm
                    .blocks
                    .iter()
                    .map(|b| ConvBlockVars {
                        kernels: p.var(b.kernels),
                        bias: p.var(b.bias),
                    })
                    .collect();
                let z1 = char_match(tape, stacked, &blocks, p.var(cm.projection), &self.config)?;
                (Some(stacked), Some(z1))
            }
            None => (None, None),
        };

        let z2 = match (&self.semantic, ctx.means) {
            (Some(sm), Some(means)) => Some(semantic_match_from_means(
                tape,
                q_tokens,
                means,
                p.var(sm.w_qs),
                query.true_length,
            )?),
            (Some(_), None) => return Err(Error::Contract("category context lacks semantic means".into())),
            _ => None,
        };

        let logits = fuse_and_score(
            tape,
            FusionInputs {
                query: self_out.zip(self.fusion.w_qf).map(|((q, _), w)| (q, p.var(w))),
                z1,
                z2,
                w_z: self.fusion.w_z.map(|w| p.var(w)),
                w_x: p.var(self.fusion.w_x),
            },
        )?;
        Ok(ForwardOutput {
            logits,
            query_tokens: q_tokens,
            self_match: self_out,
            interaction,
            z1,
            z2,
        })
    }

    /// `scale · Σ loss(example)` recorded on `tape`.
    pub fn batch_loss(
        &self,
        tape: &mut Tape,
        p: &BoundParams,
        ctx: &CategoryContext,
        batch: &[&LabeledQuery],
        scale: f64,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut losses = Vec::with_capacity(batch.len());
        for ex in batch {
            if ex.labels.len() != self.config.num_categories {
                return Err(Error::LabelCount {
                    expected: self.config.num_categories,
                    found: ex.labels.len(),
                });
            }
            let out = self.forward(tape, p, ctx, &ex.query)?;
            let l = multilabel_loss(tape, out.logits, &ex.targets())?;
            losses.push(tape.reshape(l, &[1, 1])?);
        }
        let all = if losses.len() == 1 {
            losses[0]
        } else {
            tape.concat(&losses, 0)?
        };
        let total = tape.sum_all(all);
        Ok(tape.scale(total, scale))
    }

    /// Loss value and parameter gradients of `scale · Σ loss` over `batch`.
    /// Does not touch the model's own gradient buffers.
    pub fn batch_gradients(
        &self,
        cats: &CategorySet,
        batch: &[&LabeledQuery],
        scale: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let ctx = self.prepare_categories(&mut tape, &p, cats)?;
        let loss = self.batch_loss(&mut tape, &p, &ctx, batch, scale)?;
        tape.backward(loss)?;
        let value = tape.value(loss).data()[0];
        Ok((value, self.params.tape_grads(&tape, &p)))
    }

    /// Mean loss over `batch` without recording gradients.
    pub fn mean_loss(&self, cats: &CategorySet, batch: &[&LabeledQuery]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let ctx = self.prepare_categories(&mut tape, &p, cats)?;
        let loss = self.batch_loss(&mut tape, &p, &ctx, batch, 1.0 / batch.len().max(1) as f64)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Inference handle with the category encodings computed once.
    pub fn predictor<'a>(&'a self, cats: &CategorySet) -> Result<Predictor<'a>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let ctx = self.prepare_categories(&mut tape, &bound, cats)?;
        let base = tape.len();
        Ok(Predictor {
            model: self,
            tape,
            bound,
            ctx,
            base,
        })
    }
}

/// Zeroes the rows of `x [L×d]` past the sequence's true length.
fn mask_rows(tape: &mut Tape, x: Var, seq: &TokenSequence) -> Result<Var> {
    if seq.true_length == seq.len() {
        return Ok(x);
    }
    let d = tape.shape(x)[1];
    let mut mask = Tensor::zeros(&[seq.len(), d]);
    mask.data_mut()[..seq.true_length * d].fill(1.0);
    let m = tape.constant(mask);
    tape.mul(x, m)
}

/// Forward-only scorer reusing one set of category encodings.
#[derive(Debug)]
pub struct Predictor<'a> {
    model: &'a MmanModel,
    tape: Tape,
    bound: BoundParams,
    ctx: CategoryContext,
    base: usize,
}

impl Predictor<'_> {
    pub fn logits(&mut self, query: &TokenSequence) -> Result<Vec<f64>> {
        let out = self.model.forward(&mut self.tape, &self.bound, &self.ctx, query);
        let logits = out.map(|o| self.tape.value(o.logits).data().to_vec());
        self.tape.truncate(self.base);
        logits
    }
}
