//! Engine-versus-oracle comparisons and finite-difference checks, shared by
//! the integration tests and the acceptance runner. Every function returns
//! the worst error it saw so callers can apply their own tolerance.

use exost::backbone::{backbone_forward, BackboneKind, BackboneVars, GruVars, MixerVars, Readout};
use exost::fusion::{
    attend, balance_weights, bottleneck_width, context_balance, fuse_attention, fuse_learnable, fuse_simple,
    AttentionVars, BalancerVars, FusionKind,
};
use exost::graph::{
    adaptive_adjacency, adaptive_adjacency_directed, pearson_topk_adjacency, with_self_loops_normalized, GraphKind,
};
use exost::params::Bound;
use exost::select::{conditional_embed, moe_gate, moe_select, Activation, Branch, EmbedOptions, EmbedVars};
use exost::tensor::{grad_check_many, Tape, Tensor, Var};
use exost::{ExoStModel, ModelConfig, ModelDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;

pub const INSTANCES: u64 = 20;
pub const ORACLE_TOL: f64 = 1e-9;
pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn eval_rng() -> ChaCha8Rng {
    rng(0)
}

fn activation(rng: &mut ChaCha8Rng) -> (Activation, fn(f64) -> f64) {
    match rng.random_range(0..3) {
        0 => (Activation::Relu, oracle::relu),
        1 => (Activation::Tanh, f64::tanh),
        _ => (Activation::Identity, |v| v),
    }
}

pub fn embed_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (b, n, h) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..5));
        let (tx, te) = (r.random_range(1..5), r.random_range(1..5));
        let (f, c) = (r.random_range(1..3), r.random_range(0..4));
        let (act, act_fn) = activation(&mut r);
        let branch = if r.random_bool(0.5) {
            Branch::Past
        } else {
            Branch::Future
        };
        let (xv, ev) = (random(&mut r, &[b, n, tx, f]), random(&mut r, &[b, n, te, c]));
        let (wx, we, bv) = (random(&mut r, &[f, h]), random(&mut r, &[c, h]), random(&mut r, &[h]));
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let e = tape.constant(ev.clone());
        let vars = EmbedVars {
            w_x: tape.constant(wx.clone()),
            w_e: tape.constant(we.clone()),
            b: tape.constant(bv.clone()),
        };
        let opts = EmbedOptions {
            activation: act,
            keep: 0.7,
            train: false,
        };
        let out = conditional_embed(&mut tape, x, e, &vars, branch, opts, &mut eval_rng()).unwrap();
        let want = oracle::embed(&xv, &ev, &wx, &we, &bv, act_fn, branch == Branch::Past, 0);
        worst = worst.max(max_diff(tape.value(out), &want));
    }
    worst
}

pub fn gate_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let (b, n, t, h, k) = (
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..5),
            r.random_range(1..5),
        );
        let xv = random(&mut r, &[b, n, t, h]).map(|v| 3.0 * v);
        let wg = random(&mut r, &[h, k]);
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = tape.constant(wg.clone());
        let g = moe_gate(&mut tape, x, w).unwrap();
        worst = worst.max(max_diff(tape.value(g), &oracle::gate(&xv, &wg)));
    }
    worst
}

pub fn select_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let (b, n, t, h, k) = (
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..4),
            r.random_range(1..5),
            r.random_range(1..5),
        );
        let xv = random(&mut r, &[b, n, t, h]);
        let wg = random(&mut r, &[h, k]);
        let experts: Vec<Tensor> = (0..k).map(|_| random(&mut r, &[h, h])).collect();
        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let w = tape.constant(wg.clone());
        let ws: Vec<Var> = experts.iter().map(|e| tape.constant(e.clone())).collect();
        let g = moe_gate(&mut tape, x, w).unwrap();
        let y = moe_select(&mut tape, x, &ws, g).unwrap();
        let want = oracle::select(&xv, &experts, &oracle::gate(&xv, &wg));
        worst = worst.max(max_diff(tape.value(y), &want));
    }
    worst
}

struct BalancerCase {
    y_p: Tensor,
    y_f: Tensor,
    w: [Tensor; 4],
}

fn balancer_case(r: &mut ChaCha8Rng, per_sample: bool) -> BalancerCase {
    let (b, n, t) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..9));
    let width = bottleneck_width(t, r.random_range(1..5));
    let out = if per_sample { 1 } else { t };
    BalancerCase {
        y_p: random(r, &[b, n, t, 1]),
        y_f: random(r, &[b, n, t, 1]),
        w: [
            random(r, &[t, width]),
            random(r, &[width]),
            random(r, &[width, out]),
            random(r, &[out]),
        ],
    }
}

fn bind_balancer(tape: &mut Tape, w: &[Tensor; 4]) -> BalancerVars {
    BalancerVars {
        w1: tape.constant(w[0].clone()),
        b1: tape.constant(w[1].clone()),
        w2: tape.constant(w[2].clone()),
        b2: tape.constant(w[3].clone()),
    }
}

/// Balancing weights and the balanced combination, per-step and per-sample.
pub fn balancer_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let c = balancer_case(&mut r, seed % 2 == 1);
        let mut tape = Tape::new();
        let p = tape.constant(c.y_p.clone());
        let f = tape.constant(c.y_f.clone());
        let vars = bind_balancer(&mut tape, &c.w);
        let (y, alpha) = context_balance(&mut tape, p, f, &vars).unwrap();
        let want_alpha = oracle::balance_weights(&c.y_p, &c.y_f, &c.w[0], &c.w[1], &c.w[2], &c.w[3]);
        let flat: Vec<f64> = want_alpha.iter().flatten().copied().collect();
        let got = tape.value(alpha).data();
        assert_eq!(got.len(), flat.len());
        worst = worst.max(got.iter().zip(&flat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        worst = worst.max(max_diff(
            tape.value(y),
            &oracle::context_balance(&c.y_p, &c.y_f, &want_alpha),
        ));
    }
    worst
}

/// Simple, learnable and attention fusion against their formulas.
pub fn strategies_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let (b, n, t, h) = (
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..5),
            r.random_range(1..4),
        );
        let (yp, yf) = (random(&mut r, &[b, n, t, 1]), random(&mut r, &[b, n, t, 1]));
        let w_init = random(&mut r, &[2]);
        let (zp, zf) = (random(&mut r, &[b, n, t, h]), random(&mut r, &[b, n, t, h]));
        let (wq, wk, wv) = (
            random(&mut r, &[h, h]),
            random(&mut r, &[h, h]),
            random(&mut r, &[h, h]),
        );
        let ro_p = (random(&mut r, &[h, 1]), random(&mut r, &[1]));
        let ro_f = (random(&mut r, &[h, 1]), random(&mut r, &[1]));

        let mut tape = Tape::new();
        let p = tape.constant(yp.clone());
        let f = tape.constant(yf.clone());
        let s = fuse_simple(&mut tape, p, f).unwrap();
        worst = worst.max(max_diff(tape.value(s), &oracle::fuse_simple(&yp, &yf)));
        let wi = tape.constant(w_init.clone());
        let l = fuse_learnable(&mut tape, p, f, wi).unwrap();
        worst = worst.max(max_diff(tape.value(l), &oracle::fuse_learnable(&yp, &yf, &w_init)));

        let zpv = tape.constant(zp.clone());
        let zfv = tape.constant(zf.clone());
        let vars = AttentionVars {
            w_q: tape.constant(wq.clone()),
            w_k: tape.constant(wk.clone()),
            w_v: tape.constant(wv.clone()),
        };
        let one = attend(&mut tape, zfv, zpv, &vars).unwrap();
        worst = worst.max(max_diff(tape.value(one), &oracle::attend(&zf, &zp, &wq, &wk, &wv)));
        let rp = Readout {
            w: tape.constant(ro_p.0.clone()),
            b: tape.constant(ro_p.1.clone()),
        };
        let rf = Readout {
            w: tape.constant(ro_f.0.clone()),
            b: tape.constant(ro_f.1.clone()),
        };
        let y = fuse_attention(&mut tape, zpv, zfv, &vars, &rp, &rf).unwrap();
        let aw = oracle::AttentionWeights {
            w_q: &wq,
            w_k: &wk,
            w_v: &wv,
        };
        let want = oracle::fuse_attention(&zp, &zf, &aw, (&ro_p.0, &ro_p.1), (&ro_f.0, &ro_f.1));
        worst = worst.max(max_diff(tape.value(y), &want));
    }
    worst
}

/// Adaptive (both forms), Pearson top-k and self-loop normalization.
pub fn adjacency_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(500 + seed);
        let (n, d) = (r.random_range(2..7), r.random_range(1..5));
        let (es, et) = (
            random(&mut r, &[n, d]).map(|v| 2.0 * v),
            random(&mut r, &[n, d]).map(|v| 2.0 * v),
        );
        let mut tape = Tape::new();
        let s = tape.constant(es.clone());
        let t = tape.constant(et.clone());
        let a = adaptive_adjacency(&mut tape, s).unwrap();
        worst = worst.max(max_diff(tape.value(a), &oracle::adaptive_adjacency(&es, &es)));
        let a = adaptive_adjacency_directed(&mut tape, s, t).unwrap();
        worst = worst.max(max_diff(tape.value(a), &oracle::adaptive_adjacency(&es, &et)));

        let len = r.random_range(3..20);
        let series: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..len).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let k = r.random_range(1..n);
        let got = pearson_topk_adjacency(&series, k).unwrap().adjacency;
        let want = oracle::pearson_topk(&series, k);
        worst = worst.max(max_diff(&got, &want));
        worst = worst.max(max_diff(
            &with_self_loops_normalized(&got),
            &oracle::self_loops_normalized(&want),
        ));
    }
    worst
}

/// GRUGCN and mixer backbones, features and read-out.
pub fn backbone_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(600 + seed);
        let (b, n, t, h, t_f) = (
            r.random_range(1..3),
            r.random_range(1..4),
            r.random_range(1..5),
            r.random_range(1..4),
            r.random_range(1..4),
        );
        let xv = random(&mut r, &[b, n, t, h]);
        let adjv = random(&mut r, &[n, n]);
        let gru = [
            random(&mut r, &[h, h]),
            random(&mut r, &[2 * h, 2 * h]),
            random(&mut r, &[2 * h]),
            random(&mut r, &[2 * h, h]),
            random(&mut r, &[h]),
        ];
        let lift = (random(&mut r, &[h, t_f * h]), random(&mut r, &[t_f * h]));
        let dm = r.random_range(1..6);
        let mix = [
            random(&mut r, &[t * h, dm]),
            random(&mut r, &[dm]),
            random(&mut r, &[dm, t_f * h]),
            random(&mut r, &[t_f * h]),
        ];
        let ro = (random(&mut r, &[h, 1]), random(&mut r, &[1]));

        let mut tape = Tape::new();
        let x = tape.constant(xv.clone());
        let adj = tape.constant(adjv.clone());
        let c = |tape: &mut Tape, v: &Tensor| tape.constant(v.clone());
        let readout = Readout {
            w: c(&mut tape, &ro.0),
            b: c(&mut tape, &ro.1),
        };
        let cell = GruVars {
            w_s: c(&mut tape, &gru[0]),
            w_zr: c(&mut tape, &gru[1]),
            b_zr: c(&mut tape, &gru[2]),
            w_c: c(&mut tape, &gru[3]),
            b_c: c(&mut tape, &gru[4]),
        };
        let vars = BackboneVars::Grugcn {
            cell,
            lift: c(&mut tape, &lift.0),
            lift_b: c(&mut tape, &lift.1),
            readout,
        };
        let out = backbone_forward(&mut tape, x, Some(adj), &vars, t_f).unwrap();
        let w = oracle::GruWeights {
            w_s: &gru[0],
            w_zr: &gru[1],
            b_zr: &gru[2],
            w_c: &gru[3],
            b_c: &gru[4],
        };
        let feats = oracle::lift(&oracle::grugcn_encode(&xv, &adjv, &w), &lift.0, &lift.1, t_f);
        worst = worst.max(max_diff(tape.value(out.features), &feats));
        worst = worst.max(max_diff(tape.value(out.y), &oracle::readout(&feats, &ro.0, &ro.1)));

        let mixer = MixerVars {
            w1: c(&mut tape, &mix[0]),
            b1: c(&mut tape, &mix[1]),
            w2: c(&mut tape, &mix[2]),
            b2: c(&mut tape, &mix[3]),
        };
        let vars = BackboneVars::Mixer { mixer, readout };
        let out = backbone_forward(&mut tape, x, None, &vars, t_f).unwrap();
        let mw = oracle::MixerWeights {
            w1: &mix[0],
            b1: &mix[1],
            w2: &mix[2],
            b2: &mix[3],
        };
        let feats = oracle::mixer(&xv, &mw, t_f);
        worst = worst.max(max_diff(tape.value(out.features), &feats));
        worst = worst.max(max_diff(tape.value(out.y), &oracle::readout(&feats, &ro.0, &ro.1)));
    }
    worst
}

/// A small random model; `seed` picks backbone, graph and fusion too.
pub fn random_model(seed: u64, dims: ModelDims, mut config: ModelConfig) -> ExoStModel {
    let mut r = rng(700 + seed);
    config.backbone = if r.random_bool(0.5) {
        BackboneKind::Grugcn
    } else {
        BackboneKind::MlpMixer
    };
    config.graph = [
        GraphKind::Pearson,
        GraphKind::Adaptive,
        GraphKind::AdaptiveDirected,
        GraphKind::Identity,
    ][r.random_range(0..4)];
    config.fusion = FusionKind::ALL[r.random_range(0..FusionKind::ALL.len())];
    config.no_selector = r.random_bool(0.2);
    config.no_balancer = r.random_bool(0.1);
    config.alpha_per_sample = r.random_bool(0.3);
    model_with(seed, dims, config)
}

/// Builds `config` on `dims` with a random fixed graph when one is needed,
/// then randomizes every parameter so zero-initialized biases matter.
pub fn model_with(seed: u64, dims: ModelDims, config: ModelConfig) -> ExoStModel {
    let mut r = rng(800 + seed);
    let graph = match config.graph {
        GraphKind::Identity => Some(Tensor::eye(dims.nodes)),
        _ => Some(random(&mut r, &[dims.nodes, dims.nodes])),
    };
    let graph = if config.backbone.needs_graph() { graph } else { None };
    let mut model = ExoStModel::new(config, dims, graph, seed).unwrap();
    let ids: Vec<_> = model.params().ids().collect();
    for id in ids {
        if model.params().param(id).trainable {
            let t = model.params_mut().get_mut(id);
            *t = random(&mut r, t.shape());
        }
    }
    model
}

pub struct ModelInputs {
    pub x: Tensor,
    pub e_past: Tensor,
    pub e_future: Tensor,
    pub y: Tensor,
}

pub fn model_inputs(r: &mut ChaCha8Rng, batch: usize, dims: &ModelDims) -> ModelInputs {
    let n = dims.nodes;
    ModelInputs {
        x: random(r, &[batch, n, dims.t_past, 1]),
        e_past: random(r, &[batch, n, dims.t_past, dims.past_channels]),
        e_future: random(r, &[batch, n, dims.t_future, dims.future_channels]),
        y: random(r, &[batch, n, dims.t_future, 1]),
    }
}

/// Full forward pass against the composed scalar oracles over random
/// configurations.
pub fn model_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(900 + seed);
        let dims = ModelDims {
            nodes: r.random_range(1..4),
            t_past: r.random_range(1..5),
            t_future: r.random_range(1..5),
            past_channels: r.random_range(0..3),
            future_channels: r.random_range(0..3),
        };
        let config = ModelConfig {
            hidden: r.random_range(1..4),
            experts: r.random_range(1..4),
            mixer_width: r.random_range(1..5),
            embed_dim: r.random_range(1..4),
            reduction: r.random_range(1..5),
            ..ModelConfig::default()
        };
        let model = random_model(seed, dims, config);
        let batch = r.random_range(1..3);
        let inputs = model_inputs(&mut r, batch, &dims);
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let x = tape.constant(inputs.x.clone());
        let ep = tape.constant(inputs.e_past.clone());
        let ef = tape.constant(inputs.e_future.clone());
        let out = model
            .forward(&mut tape, &bound, x, ep, ef, false, &mut eval_rng())
            .unwrap_or_else(|e| panic!("seed {seed} {:?} {:?}: {e}", model.config(), dims));
        let want = oracle::model_forward(&model, &inputs.x, &inputs.e_past, &inputs.e_future);
        worst = worst.max(max_diff(tape.value(out.y_hat), &want));
    }
    worst
}

/// Weighted sum with fixed random weights, so every output coordinate
/// carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> exost::tensor::Result<Var> {
    let mut r = rng(seed ^ 0xfeed);
    let w = random(&mut r, tape.shape(v));
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum_all(p)
}

/// Embedding, gate and expert selection, differentiated with respect to the
/// input and every weight.
pub fn selector_grad_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1000 + seed);
        let (b, n, t, h, k, c) = (2, 2, 3, 3, 2, 2);
        let points = vec![
            random(&mut r, &[b, n, t, 1]),
            random(&mut r, &[b, n, t - 1, c]),
            random(&mut r, &[1, h]),
            random(&mut r, &[c, h]),
            random(&mut r, &[h]),
            random(&mut r, &[h, k]),
            random(&mut r, &[h, h]),
            random(&mut r, &[h, h]),
        ];
        let branch = if seed % 2 == 0 { Branch::Past } else { Branch::Future };
        let err = grad_check_many(
            |tape, v| {
                let vars = EmbedVars {
                    w_x: v[2],
                    w_e: v[3],
                    b: v[4],
                };
                let opts = EmbedOptions {
                    activation: Activation::Tanh,
                    keep: 1.0,
                    train: false,
                };
                let emb = conditional_embed(tape, v[0], v[1], &vars, branch, opts, &mut eval_rng())?;
                let g = moe_gate(tape, emb, v[5])?;
                let y = moe_select(tape, emb, &v[6..8], g)?;
                weighted_sum(tape, y, seed)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Each backbone, differentiated with respect to input, graph and weights.
pub fn backbone_grad_error(kind: BackboneKind) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1100 + seed);
        let (b, n, t, h, t_f) = (2, 2, 3, 2, 2);
        let mut points = vec![
            random(&mut r, &[b, n, t, h]),
            random(&mut r, &[h, 1]),
            random(&mut r, &[1]),
        ];
        match kind {
            BackboneKind::Grugcn => points.extend([
                random(&mut r, &[n, n]),
                random(&mut r, &[h, h]),
                random(&mut r, &[2 * h, 2 * h]),
                random(&mut r, &[2 * h]),
                random(&mut r, &[2 * h, h]),
                random(&mut r, &[h]),
                random(&mut r, &[h, t_f * h]),
                random(&mut r, &[t_f * h]),
            ]),
            BackboneKind::MlpMixer => points.extend([
                random(&mut r, &[t * h, 3]),
                random(&mut r, &[3]),
                random(&mut r, &[3, t_f * h]),
                random(&mut r, &[t_f * h]),
            ]),
        }
        let err = grad_check_many(
            |tape, v| {
                let readout = Readout { w: v[1], b: v[2] };
                let (vars, adj) = match kind {
                    BackboneKind::Grugcn => (
                        BackboneVars::Grugcn {
                            cell: GruVars {
                                w_s: v[4],
                                w_zr: v[5],
                                b_zr: v[6],
                                w_c: v[7],
                                b_c: v[8],
                            },
                            lift: v[9],
                            lift_b: v[10],
                            readout,
                        },
                        Some(v[3]),
                    ),
                    BackboneKind::MlpMixer => (
                        BackboneVars::Mixer {
                            mixer: MixerVars {
                                w1: v[3],
                                b1: v[4],
                                w2: v[5],
                                b2: v[6],
                            },
                            readout,
                        },
                        None,
                    ),
                };
                let out = backbone_forward(tape, v[0], adj, &vars, t_f).map_err(|e| match e {
                    exost::Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                weighted_sum(tape, out.y, seed)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// Each fusion strategy, differentiated with respect to its branch inputs
/// and parameters. `Shared` fuses like `Simple`; its distinct part (one
/// encoder for both branches) is covered by the full-model check.
pub fn fusion_grad_error(kind: FusionKind) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1200 + seed);
        let (b, n, t, h) = (2, 2, 4, 2);
        let width = bottleneck_width(t, 2);
        let points: Vec<Tensor> = match kind {
            FusionKind::Context => vec![
                random(&mut r, &[b, n, t, 1]),
                random(&mut r, &[b, n, t, 1]),
                random(&mut r, &[t, width]),
                random(&mut r, &[width]),
                random(&mut r, &[width, t]),
                random(&mut r, &[t]),
            ],
            FusionKind::Shared | FusionKind::Simple => {
                vec![random(&mut r, &[b, n, t, 1]), random(&mut r, &[b, n, t, 1])]
            }
            FusionKind::Learnable => vec![
                random(&mut r, &[b, n, t, 1]),
                random(&mut r, &[b, n, t, 1]),
                random(&mut r, &[2]),
            ],
            FusionKind::Attention => vec![
                random(&mut r, &[b, n, t, h]),
                random(&mut r, &[b, n, t, h]),
                random(&mut r, &[h, h]),
                random(&mut r, &[h, h]),
                random(&mut r, &[h, h]),
                random(&mut r, &[h, 1]),
                random(&mut r, &[1]),
                random(&mut r, &[h, 1]),
                random(&mut r, &[1]),
            ],
        };
        let err = grad_check_many(
            |tape, v| {
                let y = match kind {
                    FusionKind::Context => {
                        let vars = BalancerVars {
                            w1: v[2],
                            b1: v[3],
                            w2: v[4],
                            b2: v[5],
                        };
                        let alpha = balance_weights(tape, v[0], v[1], &vars)?;
                        exost::fusion::balance_combine(tape, v[0], v[1], alpha)?
                    }
                    FusionKind::Shared | FusionKind::Simple => fuse_simple(tape, v[0], v[1])?,
                    FusionKind::Learnable => fuse_learnable(tape, v[0], v[1], v[2])?,
                    FusionKind::Attention => {
                        let vars = AttentionVars {
                            w_q: v[2],
                            w_k: v[3],
                            w_v: v[4],
                        };
                        let rp = Readout { w: v[5], b: v[6] };
                        let rf = Readout { w: v[7], b: v[8] };
                        fuse_attention(tape, v[0], v[1], &vars, &rp, &rf)?
                    }
                };
                weighted_sum(tape, y, seed)
            },
            &points,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(err);
    }
    worst
}

/// The two-node toy: `N=2, T=3, H=2, K=2`, every parameter checked through
/// the full forward pass and the MAE loss.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        nodes: 2,
        t_past: 3,
        t_future: 3,
        past_channels: 1,
        future_channels: 1,
    }
}

pub fn toy_config(backbone: BackboneKind, fusion: FusionKind) -> ModelConfig {
    ModelConfig {
        hidden: 2,
        experts: 2,
        backbone,
        mixer_width: 3,
        graph: GraphKind::Adaptive,
        embed_dim: 2,
        activation: Activation::Tanh,
        keep_prob: 1.0,
        fusion,
        reduction: 1,
        ..ModelConfig::default()
    }
}

pub fn model_grad_error(backbone: BackboneKind, fusion: FusionKind, seed: u64) -> f64 {
    let dims = toy_dims();
    let model = model_with(seed, dims, toy_config(backbone, fusion));
    let mut r = rng(1300 + seed);
    let inputs = model_inputs(&mut r, 2, &dims);
    let points: Vec<Tensor> = model.params().iter().map(|p| p.value.clone()).collect();
    grad_check_many(
        |tape, v| {
            let bound = Bound::from_vars(v.to_vec());
            let x = tape.constant(inputs.x.clone());
            let ep = tape.constant(inputs.e_past.clone());
            let ef = tape.constant(inputs.e_future.clone());
            let y = tape.constant(inputs.y.clone());
            let out = model
                .forward(tape, &bound, x, ep, ef, false, &mut eval_rng())
                .map_err(|e| match e {
                    exost::Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
            let d = tape.sub(out.y_hat, y)?;
            let a = tape.abs(d);
            tape.mean_all(a)
        },
        &points,
        FD_STEP,
    )
    .unwrap()
}

/// Worst `|Σ_k g_k − 1|` and the smallest gate entry over random inputs.
pub fn gate_simplex() -> (f64, f64) {
    let (mut worst, mut min) = (0.0f64, f64::INFINITY);
    for seed in 0..INSTANCES {
        let mut r = rng(1400 + seed);
        let (h, k) = (r.random_range(1..6), r.random_range(1..6));
        let xv = random(&mut r, &[2, 3, 4, h]).map(|v| 5.0 * v);
        let mut tape = Tape::new();
        let x = tape.constant(xv);
        let w = tape.constant(random(&mut r, &[h, k]));
        let g = moe_gate(&mut tape, x, w).unwrap();
        for row in tape.value(g).data().chunks(k) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            min = min.min(row.iter().cloned().fold(f64::INFINITY, f64::min));
        }
    }
    (worst, min)
}

/// Range of `α` over random branch outputs and balancer weights.
pub fn alpha_range() -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..INSTANCES {
        let mut r = rng(1500 + seed);
        let c = balancer_case(&mut r, seed % 2 == 0);
        let mut tape = Tape::new();
        let p = tape.constant(c.y_p);
        let f = tape.constant(c.y_f);
        let vars = bind_balancer(&mut tape, &c.w);
        let a = balance_weights(&mut tape, p, f, &vars).unwrap();
        for &v in tape.value(a).data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    (lo, hi)
}

/// Worst deviation of `Ŷ` from `3·Y₀` when both branches equal `Y₀`.
pub fn equal_branch_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1600 + seed);
        let c = balancer_case(&mut r, false);
        let mut tape = Tape::new();
        let p = tape.constant(c.y_p.clone());
        let vars = bind_balancer(&mut tape, &c.w);
        let (y, _) = context_balance(&mut tape, p, p, &vars).unwrap();
        worst = worst.max(max_diff(tape.value(y), &c.y_p.map(|v| 3.0 * v)));
    }
    worst
}

/// With one expert the selector is exactly `X·W₁`.
pub fn single_expert_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1700 + seed);
        let h = r.random_range(1..6);
        let xv = random(&mut r, &[2, 2, 3, h]);
        let wv = random(&mut r, &[h, h]);
        let mut tape = Tape::new();
        let x = tape.constant(xv);
        let wg = tape.constant(random(&mut r, &[h, 1]));
        let w = tape.constant(wv);
        let g = moe_gate(&mut tape, x, wg).unwrap();
        let y = moe_select(&mut tape, x, &[w], g).unwrap();
        let direct = tape.matmul(x, w).unwrap();
        worst = worst.max(max_diff(tape.value(y), tape.value(direct)));
    }
    worst
}

/// Zero balancer weights give `α ≡ 0.5` and `Ŷ = 1.5(Y_p + Y_f)`; returns the
/// worst deviation of either.
pub fn zero_balancer_error() -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        let mut r = rng(1800 + seed);
        let mut c = balancer_case(&mut r, seed % 2 == 0);
        for w in c.w.iter_mut() {
            *w = Tensor::zeros(w.shape());
        }
        let mut tape = Tape::new();
        let p = tape.constant(c.y_p.clone());
        let f = tape.constant(c.y_f.clone());
        let vars = bind_balancer(&mut tape, &c.w);
        let (y, a) = context_balance(&mut tape, p, f, &vars).unwrap();
        worst = tape
            .value(a)
            .data()
            .iter()
            .map(|v| (v - 0.5).abs())
            .fold(worst, f64::max);
        let want = Tensor::from_fn(c.y_p.shape(), |i| 1.5 * (c.y_p.data()[i] + c.y_f.data()[i]));
        worst = worst.max(max_diff(tape.value(y), &want));
    }
    worst
}

/// Over random forecasts: whether RMSE ≥ MAE always held, and the worst
/// relative gap between MRE and `100·n·MAE / Σ|y|`.
pub fn metric_identities() -> (bool, f64) {
    let (mut ordered, mut worst) = (true, 0.0f64);
    for seed in 0..INSTANCES {
        let mut r = rng(1900 + seed);
        let n = r.random_range(1..200);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let y_hat: Vec<f64> = y.iter().map(|v| v + r.random_range(-2.0..2.0)).collect();
        let m = exost::train::metrics(&y, &y_hat).unwrap();
        ordered &= m.rmse >= m.mae;
        let l1: f64 = y.iter().map(|v| v.abs()).sum();
        let want = 100.0 * n as f64 * m.mae / l1;
        worst = worst.max((m.mre.unwrap() - want).abs() / want);
    }
    (ordered, worst)
}
