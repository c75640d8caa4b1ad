//! Stacked attention-diffusion blocks.
//!
//! One block computes
//!
//! ```text
//! H^ = MultiHead(LN(X)) + X
//! out = W_2 ReLU(W_1 LN(H^) + b_1) + b_2 + H^
//! ```
//!
//! where `X` is the block input after feature dropout. The ablation flags
//! drop the diffusion (one-hop `A H`), the layer norms (identity) or the
//! feed-forward sub-layer (replaced by `elu(H^)`). With all three set the
//! block is a multi-head one-hop attention layer with a residual.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::attention::{multi_head_diffusion, Aggregation, DiffusionConfig, HeadParams, MultiHead, LAYER_NORM_EPS};
use crate::graph::Graph;
use crate::numerics::{Matrix, Tape, Var};
use crate::params::{glorot, Bindings};
use crate::{Error, ParamId, ParamStore, Result};

/// Architecture hyperparameters shared by every block.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NetworkConfig {
    pub num_blocks: usize,
    pub model_dim: usize,
    pub heads: usize,
    /// Hidden width of the feed-forward sub-layer; `None` means `model_dim`.
    pub ffn_dim: Option<usize>,
    pub relation_dim: usize,
    pub diffusion: DiffusionConfig,
    pub attention_dropout: f64,
    pub feature_dropout: f64,
    pub no_diffusion: bool,
    pub no_layernorm: bool,
    pub no_feedforward: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            model_dim: 64,
            heads: 8,
            ffn_dim: None,
            relation_dim: 100,
            diffusion: DiffusionConfig { alpha: 0.1, hops: 6 },
            attention_dropout: 0.0,
            feature_dropout: 0.0,
            no_diffusion: false,
            no_layernorm: false,
            no_feedforward: false,
        }
    }
}

impl NetworkConfig {
    pub fn ffn_width(&self) -> usize {
        self.ffn_dim.unwrap_or(self.model_dim)
    }

    /// Classic one-hop graph attention: all three ablation flags set.
    pub fn gat(mut self) -> Self {
        self.no_diffusion = true;
        self.no_layernorm = true;
        self.no_feedforward = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(Error::InvalidConfig("num_blocks must be >= 1".into()));
        }
        if self.model_dim == 0 || self.heads == 0 || self.relation_dim == 0 {
            return Err(Error::InvalidConfig(
                "model_dim, heads and relation_dim must be positive".into(),
            ));
        }
        if self.ffn_width() == 0 {
            return Err(Error::InvalidConfig("ffn_dim must be positive".into()));
        }
        self.diffusion.validate()?;
        for (name, p) in [
            ("attention_dropout", self.attention_dropout),
            ("feature_dropout", self.feature_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn aggregation(&self) -> Aggregation {
        if self.no_diffusion {
            Aggregation::OneHop
        } else {
            Aggregation::Diffusion(self.diffusion)
        }
    }
}

/// Where node representations come from before the first block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InputSpec {
    /// Fixed node features of width `dim`, projected to the model width.
    Features { dim: usize },
    /// Trainable embeddings (`count x dim`), projected to the model width.
    Embeddings { count: usize, dim: usize },
}

/// Task-specific output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum HeadSpec {
    /// Linear map to class logits.
    Classifier { classes: usize },
    /// One diagonal bilinear vector per relation (reverses included).
    DistMult { relations: usize },
}

/// Everything needed to rebuild a network's parameter layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    pub network: NetworkConfig,
    pub input: InputSpec,
    pub head: HeadSpec,
    /// Rows of the relation table used by edge attention.
    pub graph_relations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForwardParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub ln_attention: Option<LayerNormParams>,
    pub ln_ffn: Option<LayerNormParams>,
    pub ffn: Option<FeedForwardParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadParamIds {
    Classifier { weight: ParamId, bias: ParamId },
    DistMult { relations: ParamId },
}

/// Output of [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Final node representations, `N x d`.
    pub repr: Var,
    /// Per-edge attention (before dropout), indexed `[block][head]`.
    pub attention: Vec<Vec<Var>>,
}

/// Parameter layout of a model; values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: ModelSpec,
    input_weight: ParamId,
    input_entity: Option<ParamId>,
    relations: ParamId,
    blocks: Vec<BlockParams>,
    head: HeadParamIds,
}

fn add_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) -> Result<LayerNormParams> {
    Ok(LayerNormParams {
        gamma: store.add(format!("{prefix}.gamma"), Matrix::filled(1, d, 1.0))?,
        beta: store.add(format!("{prefix}.beta"), Matrix::zeros(1, d))?,
    })
}

impl Network {
    /// Builds the layout and a freshly initialized parameter store.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<(Self, ParamStore)> {
        let cfg = &spec.network;
        cfg.validate()?;
        if spec.graph_relations == 0 {
            return Err(Error::InvalidConfig("graph_relations must be >= 1".into()));
        }
        let d = cfg.model_dim;
        let dr = cfg.relation_dim;
        let mut store = ParamStore::new();

        let (input_weight, input_entity) = match spec.input {
            InputSpec::Features { dim } => {
                if dim == 0 {
                    return Err(Error::InvalidConfig("feature dim must be positive".into()));
                }
                (store.add("input.weight", glorot(dim, d, rng))?, None)
            }
            InputSpec::Embeddings { count, dim } => {
                if dim == 0 || count == 0 {
                    return Err(Error::InvalidConfig("embedding count and dim must be positive".into()));
                }
                let e = store.add("input.entity", glorot(count, dim, rng))?;
                (store.add("input.weight", glorot(dim, d, rng))?, Some(e))
            }
        };
        let relations = store.add("relations", glorot(spec.graph_relations, dr, rng))?;

        let mut blocks = Vec::with_capacity(cfg.num_blocks);
        for l in 0..cfg.num_blocks {
            let mut heads = Vec::with_capacity(cfg.heads);
            for m in 0..cfg.heads {
                let p = format!("block{l}.head{m}");
                heads.push(HeadParams {
                    w_h: store.add(format!("{p}.w_h"), glorot(d, d, rng))?,
                    w_t: store.add(format!("{p}.w_t"), glorot(d, d, rng))?,
                    w_r: store.add(format!("{p}.w_r"), glorot(dr, d, rng))?,
                    v_a: store.add(format!("{p}.v_a"), glorot(1, 3 * d, rng))?,
                });
            }
            let w_o = store.add(format!("block{l}.w_o"), glorot(cfg.heads * d, d, rng))?;
            let ln_attention = if cfg.no_layernorm {
                None
            } else {
                Some(add_layer_norm(&mut store, &format!("block{l}.ln1"), d)?)
            };
            let (ln_ffn, ffn) = if cfg.no_feedforward {
                (None, None)
            } else {
                let ln = if cfg.no_layernorm {
                    None
                } else {
                    Some(add_layer_norm(&mut store, &format!("block{l}.ln2"), d)?)
                };
                let f = cfg.ffn_width();
                let ffn = FeedForwardParams {
                    w1: store.add(format!("block{l}.ffn.w1"), glorot(d, f, rng))?,
                    b1: store.add(format!("block{l}.ffn.b1"), Matrix::zeros(1, f))?,
                    w2: store.add(format!("block{l}.ffn.w2"), glorot(f, d, rng))?,
                    b2: store.add(format!("block{l}.ffn.b2"), Matrix::zeros(1, d))?,
                };
                (ln, Some(ffn))
            };
            blocks.push(BlockParams {
                heads,
                w_o,
                ln_attention,
                ln_ffn,
                ffn,
            });
        }

        let head = match spec.head {
            HeadSpec::Classifier { classes } => {
                if classes == 0 {
                    return Err(Error::InvalidConfig("classifier needs >= 1 class".into()));
                }
                HeadParamIds::Classifier {
                    weight: store.add("head.weight", glorot(d, classes, rng))?,
                    bias: store.add("head.bias", Matrix::zeros(1, classes))?,
                }
            }
            HeadSpec::DistMult { relations } => {
                if relations == 0 {
                    return Err(Error::InvalidConfig("DistMult needs >= 1 relation".into()));
                }
                HeadParamIds::DistMult {
                    relations: store.add("head.relations", glorot(relations, d, rng))?,
                }
            }
        };

        Ok((
            Self {
                spec,
                input_weight,
                input_entity,
                relations,
                blocks,
                head,
            },
            store,
        ))
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.spec.network
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    pub fn head(&self) -> HeadParamIds {
        self.head
    }

    pub fn relation_table(&self) -> ParamId {
        self.relations
    }

    /// Projects the input to the model width.
    ///
    /// `features` is required for [`InputSpec::Features`] and ignored for
    /// embeddings.
    pub fn input_projection(&self, tape: &mut Tape, b: &Bindings, features: Option<Var>) -> Result<Var> {
        let x = match (self.input_entity, features) {
            (Some(e), _) => b.var(e),
            (None, Some(f)) => f,
            (None, None) => return Err(Error::InvalidConfig("feature input required for this model".into())),
        };
        tape.matmul(x, b.var(self.input_weight))
    }

    /// One block applied to `h_in` (`N x d`).
    #[allow(clippy::too_many_arguments)]
    pub fn block_forward(
        &self,
        index: usize,
        tape: &mut Tape,
        b: &Bindings,
        graph: &Arc<Graph>,
        h_in: Var,
        train: bool,
        rng: &mut dyn RngCore,
        trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let cfg = &self.spec.network;
        let block = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::OutOfRange(format!("block {index} of {}", self.blocks.len())))?;
        let shape = tape.shape(h_in);
        if shape != (graph.num_nodes(), cfg.model_dim) {
            return Err(Error::ShapeMismatch {
                op: "block_forward",
                lhs: shape,
                rhs: (graph.num_nodes(), cfg.model_dim),
            });
        }
        let x = tape.dropout(h_in, cfg.feature_dropout, train, rng)?;
        let heads: Vec<_> = block.heads.iter().map(|h| h.bind(b)).collect();
        let layer = MultiHead {
            heads: &heads,
            relations: b.var(self.relations),
            w_o: b.var(block.w_o),
            layer_norm: block.ln_attention.map(|p| (b.var(p.gamma), b.var(p.beta))),
            aggregation: cfg.aggregation(),
            attention_dropout: cfg.attention_dropout,
        };
        let mh = multi_head_diffusion(tape, x, graph, &layer, train, rng, trace)?;
        let hat = tape.add(mh, x)?;

        let Some(ffn) = block.ffn else {
            return tape.elu(hat);
        };
        let normed = match block.ln_ffn {
            Some(p) => tape.layer_norm(hat, b.var(p.gamma), b.var(p.beta), LAYER_NORM_EPS)?,
            None => hat,
        };
        let hidden = tape.matmul(normed, b.var(ffn.w1))?;
        let hidden = tape.add_row(hidden, b.var(ffn.b1))?;
        let hidden = tape.relu(hidden)?;
        let hidden = tape.dropout(hidden, cfg.feature_dropout, train, rng)?;
        let out = tape.matmul(hidden, b.var(ffn.w2))?;
        let out = tape.add_row(out, b.var(ffn.b2))?;
        tape.add(out, hat)
    }

    /// Input projection followed by every block.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Bindings,
        graph: &Arc<Graph>,
        features: Option<Var>,
        train: bool,
        rng: &mut dyn RngCore,
    ) -> Result<ForwardOutput> {
        let mut h = self.input_projection(tape, b, features)?;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for l in 0..self.blocks.len() {
            let mut trace = Vec::new();
            h = self.block_forward(l, tape, b, graph, h, train, rng, Some(&mut trace))?;
            attention.push(trace);
        }
        Ok(ForwardOutput { repr: h, attention })
    }
}
