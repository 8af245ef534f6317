//! The full two-branch forecaster: conditional embedding, expert selection,
//! siamese encoders and fusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{backbone_forward, BackboneKind, BackboneVars, GruVars, MixerVars, Readout};
use crate::data::WindowSample;
use crate::error::{Error, Result};
use crate::fusion::{
    bottleneck_width, context_balance, fuse_attention, fuse_learnable, fuse_simple, AttentionVars, BalancerVars,
    FusionKind,
};
use crate::graph::{
    adaptive_adjacency, adaptive_adjacency_directed, pearson_topk_adjacency, with_self_loops_normalized, GraphKind,
    DEFAULT_TOP_K,
};
use crate::params::{Bound, ParamId, ParamStore};
use crate::select::{conditional_embed, moe_gate, moe_select, pad_time, Activation, Branch, EmbedOptions, EmbedVars};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub experts: usize,
    pub backbone: BackboneKind,
    /// Inner width of the mixer backbone.
    pub mixer_width: usize,
    pub graph: GraphKind,
    pub top_k: usize,
    /// Node-embedding width for adaptive graphs.
    pub embed_dim: usize,
    pub activation: Activation,
    pub keep_prob: f64,
    pub fusion: FusionKind,
    /// Pass the conditional embedding straight to the encoder.
    pub no_selector: bool,
    /// Replace fusion with a plain sum of the branches.
    pub no_balancer: bool,
    /// One balancing weight per sample instead of one per horizon step.
    pub alpha_per_sample: bool,
    pub reduction: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            experts: 4,
            backbone: BackboneKind::Grugcn,
            mixer_width: 64,
            graph: GraphKind::Pearson,
            top_k: DEFAULT_TOP_K,
            embed_dim: 8,
            activation: Activation::Relu,
            keep_prob: 0.9,
            fusion: FusionKind::Context,
            no_selector: false,
            no_balancer: false,
            alpha_per_sample: false,
            reduction: 4,
        }
    }
}

impl ModelConfig {
    /// Small preset for desk-scale runs and tests.
    pub fn tiny() -> Self {
        Self {
            hidden: 16,
            experts: 4,
            backbone: BackboneKind::MlpMixer,
            mixer_width: 32,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.experts == 0 || self.mixer_width == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "hidden, experts, mixer width and embedding width must be positive".into(),
            ));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!(
                "keep probability {} outside (0, 1]",
                self.keep_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub nodes: usize,
    pub t_past: usize,
    pub t_future: usize,
    pub past_channels: usize,
    pub future_channels: usize,
}

impl ModelDims {
    pub fn from_sample(s: &WindowSample) -> Self {
        Self {
            nodes: s.x.shape()[0],
            t_past: s.t_past,
            t_future: s.t_future(),
            past_channels: s.e_past.shape()[2],
            future_channels: s.e_future.shape()[2],
        }
    }

    /// Length of the embedded sequence once both streams are aligned. A
    /// shared encoder sees both branches at the longer of the two lengths.
    fn seq_len(&self, branch: Branch, shared: bool) -> usize {
        match branch {
            Branch::Past if !shared => self.t_past,
            _ => self.t_past.max(self.t_future),
        }
    }
}

#[derive(Debug, Clone)]
struct BranchIds {
    w_x: ParamId,
    w_e: ParamId,
    b: ParamId,
    gate: Option<ParamId>,
    experts: Vec<ParamId>,
}

#[derive(Debug, Clone)]
enum BackboneIds {
    Grugcn {
        w_s: ParamId,
        w_zr: ParamId,
        b_zr: ParamId,
        w_c: ParamId,
        b_c: ParamId,
        lift: ParamId,
        lift_b: ParamId,
        w_out: ParamId,
        b_out: ParamId,
    },
    Mixer {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
        w_out: ParamId,
        b_out: ParamId,
    },
}

#[derive(Debug, Clone)]
enum GraphIds {
    None,
    Fixed(ParamId),
    Adaptive(ParamId),
    Directed(ParamId, ParamId),
}

#[derive(Debug, Clone)]
enum FusionIds {
    Sum,
    Context {
        w1: ParamId,
        b1: ParamId,
        w2: ParamId,
        b2: ParamId,
    },
    Simple,
    Learnable(ParamId),
    Attention {
        w_q: ParamId,
        w_k: ParamId,
        w_v: ParamId,
    },
}

/// Archived next to the parameters so a model can be rebuilt from its file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub config: ModelConfig,
    pub dims: ModelDims,
}

#[derive(Debug, Clone)]
pub struct ExoStModel {
    config: ModelConfig,
    dims: ModelDims,
    params: ParamStore,
    branches: [BranchIds; 2],
    /// One entry under shared parameters, otherwise past then future.
    backbones: Vec<BackboneIds>,
    graph: GraphIds,
    fusion: FusionIds,
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `[B, N, T_f, 1]`.
    pub y_hat: Var,
    /// Balancing weights when the context balancer is active.
    pub alpha: Option<Var>,
    pub y_past: Var,
    pub y_future: Var,
}

/// Stacked inputs `[B, N, T, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub e_past: Tensor,
    pub e_future: Tensor,
    pub y: Tensor,
}

impl Batch {
    pub fn from_samples(samples: &[&WindowSample]) -> Result<Batch> {
        let stack = |f: fn(&WindowSample) -> &Tensor| Tensor::stack(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
        Ok(Batch {
            x: stack(|s| &s.x)?,
            e_past: stack(|s| &s.e_past)?,
            e_future: stack(|s| &s.e_future)?,
            y: stack(|s| &s.y)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed adjacency for the configured graph kind, built from training
/// target histories (`N` rows). `k` is capped at `N − 1`.
pub fn fixed_graph(config: &ModelConfig, train_targets: &[Vec<f64>]) -> Result<Option<Tensor>> {
    if !config.backbone.needs_graph() {
        return Ok(None);
    }
    let n = train_targets.len();
    Ok(match config.graph {
        GraphKind::Pearson => {
            let g = pearson_topk_adjacency(train_targets, config.top_k.min(n.saturating_sub(1)))?;
            Some(with_self_loops_normalized(&g.adjacency))
        }
        GraphKind::Identity => Some(Tensor::eye(n)),
        GraphKind::Adaptive | GraphKind::AdaptiveDirected => None,
    })
}

impl ExoStModel {
    /// Initializes parameters from `seed`. `graph` is the fixed adjacency for
    /// pearson or identity graphs (see [`fixed_graph`]).
    pub fn new(config: ModelConfig, dims: ModelDims, graph: Option<Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (h, k) = (config.hidden, config.experts);

        let branches = [Branch::Past, Branch::Future].map(|br| {
            let tag = br.tag();
            let channels = match br {
                Branch::Past => dims.past_channels,
                Branch::Future => dims.future_channels,
            };
            let fan_in = 1 + channels;
            let w_x = p.add_uniform(&format!("{tag}.embed.w_x"), &[1, h], fan_in, &mut rng);
            let w_e = p.add_uniform(&format!("{tag}.embed.w_e"), &[channels, h], fan_in, &mut rng);
            let b = p.add_zeros(&format!("{tag}.embed.b"), &[h]);
            let (gate, experts) = if config.no_selector {
                (None, Vec::new())
            } else {
                let gate = p.add_uniform(&format!("{tag}.gate.w"), &[h, k], h, &mut rng);
                let experts = (0..k)
                    .map(|i| p.add_uniform(&format!("{tag}.expert{i}.w"), &[h, h], h, &mut rng))
                    .collect();
                (Some(gate), experts)
            };
            BranchIds {
                w_x,
                w_e,
                b,
                gate,
                experts,
            }
        });

        let n_backbones = if config.fusion == FusionKind::Shared { 1 } else { 2 };
        let prefixes: &[&str] = if n_backbones == 1 {
            &["shared"]
        } else {
            &["past", "future"]
        };
        let backbones = prefixes
            .iter()
            .zip([Branch::Past, Branch::Future])
            .map(|(tag, br)| {
                init_backbone(
                    &mut p,
                    &config,
                    &dims,
                    tag,
                    dims.seq_len(br, n_backbones == 1),
                    &mut rng,
                )
            })
            .collect::<Vec<_>>();

        let graph = if !config.backbone.needs_graph() {
            GraphIds::None
        } else {
            match config.graph {
                GraphKind::Pearson | GraphKind::Identity => {
                    let adj = graph.ok_or(Error::MissingGraph(config.backbone.label()))?;
                    if adj.shape() != [dims.nodes, dims.nodes] {
                        return Err(Error::Config(format!(
                            "adjacency {:?} does not match {} nodes",
                            adj.shape(),
                            dims.nodes
                        )));
                    }
                    GraphIds::Fixed(p.add_fixed("graph.adjacency", adj))
                }
                GraphKind::Adaptive => {
                    GraphIds::Adaptive(p.add_uniform("graph.emb", &[dims.nodes, config.embed_dim], 1, &mut rng))
                }
                GraphKind::AdaptiveDirected => GraphIds::Directed(
                    p.add_uniform("graph.emb_src", &[dims.nodes, config.embed_dim], 1, &mut rng),
                    p.add_uniform("graph.emb_tgt", &[dims.nodes, config.embed_dim], 1, &mut rng),
                ),
            }
        };

        let t_f = dims.t_future;
        let fusion = if config.no_balancer {
            FusionIds::Sum
        } else {
            match config.fusion {
                FusionKind::Context => {
                    let r = bottleneck_width(t_f, config.reduction);
                    let out = if config.alpha_per_sample { 1 } else { t_f };
                    FusionIds::Context {
                        w1: p.add_uniform("balancer.w1", &[t_f, r], t_f, &mut rng),
                        b1: p.add_zeros("balancer.b1", &[r]),
                        w2: p.add_uniform("balancer.w2", &[r, out], r, &mut rng),
                        b2: p.add_zeros("balancer.b2", &[out]),
                    }
                }
                FusionKind::Shared | FusionKind::Simple => FusionIds::Simple,
                FusionKind::Learnable => FusionIds::Learnable(p.add_zeros("fusion.w_init", &[2])),
                FusionKind::Attention => FusionIds::Attention {
                    w_q: p.add_uniform("attention.w_q", &[h, h], h, &mut rng),
                    w_k: p.add_uniform("attention.w_k", &[h, h], h, &mut rng),
                    w_v: p.add_uniform("attention.w_v", &[h, h], h, &mut rng),
                },
            }
        };

        Ok(Self {
            config,
            dims,
            params: p,
            branches,
            backbones,
            graph,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn meta(&self) -> ModelMeta {
        ModelMeta {
            config: self.config.clone(),
            dims: self.dims,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(self.params.to_bytes(&serde_json::to_string(&self.meta())?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, store) = ParamStore::from_bytes(bytes)?;
        let meta: ModelMeta = serde_json::from_str(&meta)?;
        let graph = store.find("graph.adjacency").map(|id| store.get(id).clone());
        let mut model = Self::new(meta.config, meta.dims, graph, 0)?;
        model.params.load_values(&store)?;
        Ok(model)
    }

    fn adjacency(&self, tape: &mut Tape, bound: &Bound) -> Result<Option<Var>> {
        Ok(match self.graph {
            GraphIds::None => None,
            GraphIds::Fixed(id) => Some(bound[id]),
            GraphIds::Adaptive(e) => Some(adaptive_adjacency(tape, bound[e])?),
            GraphIds::Directed(s, t) => Some(adaptive_adjacency_directed(tape, bound[s], bound[t])?),
        })
    }

    /// Full forward pass on `[B, N, T, C]` inputs bound to `tape`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        e_past: Var,
        e_future: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Forward> {
        let opts = EmbedOptions {
            activation: self.config.activation,
            keep: self.config.keep_prob,
            train,
        };
        let adj = self.adjacency(tape, bound)?;
        let mut outs = Vec::with_capacity(2);
        for (i, (branch, e)) in [(Branch::Past, e_past), (Branch::Future, e_future)]
            .into_iter()
            .enumerate()
        {
            let ids = &self.branches[i];
            let vars = EmbedVars {
                w_x: bound[ids.w_x],
                w_e: bound[ids.w_e],
                b: bound[ids.b],
            };
            let len = self.dims.seq_len(branch, self.backbones.len() == 1);
            let x = pad_time(tape, x, len, branch)?;
            let emb = conditional_embed(tape, x, e, &vars, branch, opts, rng)?;
            let selected = match ids.gate {
                Some(g) => {
                    let gate = moe_gate(tape, emb, bound[g])?;
                    let experts: Vec<Var> = ids.experts.iter().map(|&id| bound[id]).collect();
                    moe_select(tape, emb, &experts, gate)?
                }
                None => emb,
            };
            let bb = bind_backbone(&self.backbones[i.min(self.backbones.len() - 1)], bound);
            outs.push((backbone_forward(tape, selected, adj, &bb, self.dims.t_future)?, bb));
        }
        let (past, bb_p) = outs[0];
        let (future, bb_f) = outs[1];
        let (y_p, y_f) = (past.y, future.y);
        let (y_hat, alpha) = match &self.fusion {
            FusionIds::Sum => (tape.add(y_p, y_f)?, None),
            FusionIds::Context { w1, b1, w2, b2 } => {
                let vars = BalancerVars {
                    w1: bound[*w1],
                    b1: bound[*b1],
                    w2: bound[*w2],
                    b2: bound[*b2],
                };
                let (y, a) = context_balance(tape, y_p, y_f, &vars)?;
                (y, Some(a))
            }
            FusionIds::Simple => (fuse_simple(tape, y_p, y_f)?, None),
            FusionIds::Learnable(w) => (fuse_learnable(tape, y_p, y_f, bound[*w])?, None),
            FusionIds::Attention { w_q, w_k, w_v } => {
                let vars = AttentionVars {
                    w_q: bound[*w_q],
                    w_k: bound[*w_k],
                    w_v: bound[*w_v],
                };
                let y = fuse_attention(
                    tape,
                    past.features,
                    future.features,
                    &vars,
                    &bb_p.readout(),
                    &bb_f.readout(),
                )?;
                (y, None)
            }
        };
        Ok(Forward {
            y_hat,
            alpha,
            y_past: y_p,
            y_future: y_f,
        })
    }

    /// Evaluation-mode prediction `[B, N, T_f, 1]` in normalized units.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(batch.x.clone());
        let ep = tape.constant(batch.e_past.clone());
        let ef = tape.constant(batch.e_future.clone());
        // Dropout is off in evaluation, so the generator is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, x, ep, ef, false, &mut rng)?;
        Ok(tape.value(out.y_hat).clone())
    }
}

fn init_backbone(
    p: &mut ParamStore,
    config: &ModelConfig,
    dims: &ModelDims,
    tag: &str,
    seq_len: usize,
    rng: &mut ChaCha8Rng,
) -> BackboneIds {
    let h = config.hidden;
    let t_f = dims.t_future;
    let name = |s: &str| format!("{tag}.backbone.{s}");
    match config.backbone {
        BackboneKind::Grugcn => BackboneIds::Grugcn {
            w_s: p.add_uniform(&name("w_s"), &[h, h], h, rng),
            w_zr: p.add_uniform(&name("w_zr"), &[2 * h, 2 * h], 2 * h, rng),
            b_zr: p.add_zeros(&name("b_zr"), &[2 * h]),
            w_c: p.add_uniform(&name("w_c"), &[2 * h, h], 2 * h, rng),
            b_c: p.add_zeros(&name("b_c"), &[h]),
            lift: p.add_uniform(&name("lift"), &[h, t_f * h], h, rng),
            lift_b: p.add_zeros(&name("lift_b"), &[t_f * h]),
            w_out: p.add_uniform(&name("w_out"), &[h, 1], h, rng),
            b_out: p.add_zeros(&name("b_out"), &[1]),
        },
        BackboneKind::MlpMixer => {
            let d = config.mixer_width;
            BackboneIds::Mixer {
                w1: p.add_uniform(&name("w1"), &[seq_len * h, d], seq_len * h, rng),
                b1: p.add_zeros(&name("b1"), &[d]),
                w2: p.add_uniform(&name("w2"), &[d, t_f * h], d, rng),
                b2: p.add_zeros(&name("b2"), &[t_f * h]),
                w_out: p.add_uniform(&name("w_out"), &[h, 1], h, rng),
                b_out: p.add_zeros(&name("b_out"), &[1]),
            }
        }
    }
}

fn bind_backbone(ids: &BackboneIds, bound: &Bound) -> BackboneVars {
    match *ids {
        BackboneIds::Grugcn {
            w_s,
            w_zr,
            b_zr,
            w_c,
            b_c,
            lift,
            lift_b,
            w_out,
            b_out,
        } => BackboneVars::Grugcn {
            cell: GruVars {
                w_s: bound[w_s],
                w_zr: bound[w_zr],
                b_zr: bound[b_zr],
                w_c: bound[w_c],
                b_c: bound[b_c],
            },
            lift: bound[lift],
            lift_b: bound[lift_b],
            readout: Readout {
                w: bound[w_out],
                b: bound[b_out],
            },
        },
        BackboneIds::Mixer {
            w1,
            b1,
            w2,
            b2,
            w_out,
            b_out,
        } => BackboneVars::Mixer {
            mixer: MixerVars {
                w1: bound[w1],
                b1: bound[b1],
                w2: bound[w2],
                b2: bound[b2],
            },
            readout: Readout {
                w: bound[w_out],
                b: bound[b_out],
            },
        },
    }
}
