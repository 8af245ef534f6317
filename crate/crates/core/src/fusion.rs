//! Combining the past and future branch forecasts.

use serde::{Deserialize, Serialize};

use crate::backbone::{apply_readout, Readout};
use crate::tensor::{Result, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionKind {
    /// Context-aware balancer with residual.
    Context,
    /// One encoder reused by both branches, outputs averaged.
    Shared,
    /// Fixed equal weights.
    Simple,
    /// Softmax-normalized learned pair of weights plus residual.
    Learnable,
    /// Cross-branch attention on pre-read-out features.
    Attention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Context,
        FusionKind::Shared,
        FusionKind::Simple,
        FusionKind::Learnable,
        FusionKind::Attention,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionKind::Context => "context",
            FusionKind::Shared => "shared",
            FusionKind::Simple => "simple",
            FusionKind::Learnable => "learnable",
            FusionKind::Attention => "attention",
        }
    }
}

/// Bottleneck width for a horizon of `t_future` steps.
pub fn bottleneck_width(t_future: usize, reduction: usize) -> usize {
    (t_future / reduction.max(1)).max(4)
}

/// `w1: [T_f, R]`, `b1: [R]`, `w2: [R, T_f]` (or `[R, 1]` per sample), `b2`.
#[derive(Debug, Clone, Copy)]
pub struct BalancerVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `α = σ(W₂·ReLU(W₁·d + b₁) + b₂)` from the node-averaged sum of both
/// branches. Returns `α` shaped `[B, 1, T_f, 1]` (or `[B, 1, 1, 1]`).
pub fn balance_weights(tape: &mut Tape, y_p: Var, y_f: Var, vars: &BalancerVars) -> Result<Var> {
    let shape = tape.shape(y_p).to_vec();
    let (b, t_f) = (shape[0], shape[2]);
    let sum = tape.add(y_p, y_f)?;
    let d = tape.mean(sum, 1)?;
    let d = tape.reshape(d, &[b, t_f])?;
    let hid = tape.linear(d, vars.w1, Some(vars.b1))?;
    let hid = tape.relu(hid);
    let a = tape.linear(hid, vars.w2, Some(vars.b2))?;
    let a = tape.sigmoid(a);
    let width = tape.shape(a)[1];
    tape.reshape(a, &[b, 1, width, 1])
}

/// `α⊙Y_p + (1−α)⊙Y_f + (Y_p + Y_f)`, evaluated as
/// `Y_f + α⊙(Y_p − Y_f) + (Y_p + Y_f)`.
pub fn balance_combine(tape: &mut Tape, y_p: Var, y_f: Var, alpha: Var) -> Result<Var> {
    let diff = tape.sub(y_p, y_f)?;
    let weighted = tape.mul(alpha, diff)?;
    let blend = tape.add(y_f, weighted)?;
    let residual = tape.add(y_p, y_f)?;
    tape.add(blend, residual)
}

/// Context-aware balancing; returns `(Ŷ, α)`.
pub fn context_balance(tape: &mut Tape, y_p: Var, y_f: Var, vars: &BalancerVars) -> Result<(Var, Var)> {
    let alpha = balance_weights(tape, y_p, y_f, vars)?;
    let y = balance_combine(tape, y_p, y_f, alpha)?;
    Ok((y, alpha))
}

pub fn fuse_simple(tape: &mut Tape, y_p: Var, y_f: Var) -> Result<Var> {
    let s = tape.add(y_p, y_f)?;
    Ok(tape.scale(s, 0.5))
}

/// `w = softmax(w_init)`, `Ŷ = w₀Y_p + w₁Y_f + (Y_p + Y_f)`.
pub fn fuse_learnable(tape: &mut Tape, y_p: Var, y_f: Var, w_init: Var) -> Result<Var> {
    let w = tape.softmax(w_init, 0)?;
    let w0 = tape.slice(w, 0, 0, 1)?;
    let w1 = tape.slice(w, 0, 1, 1)?;
    let a = tape.mul(y_p, w0)?;
    let b = tape.mul(y_f, w1)?;
    let ab = tape.add(a, b)?;
    let residual = tape.add(y_p, y_f)?;
    tape.add(ab, residual)
}

/// Shared `[H, H]` projections.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
}

/// Enhances `keys` with attention driven by `queries`:
/// `keys + softmax_t(Σ_{n,h} Q⊙K / √H) ⊙ V`, with `Q` from `queries` and
/// `K`, `V` from `keys`. Inputs are `[B, N, T, H]`.
pub fn attend(tape: &mut Tape, queries: Var, keys: Var, vars: &AttentionVars) -> Result<Var> {
    let shape = tape.shape(keys).to_vec();
    let (b, t, h) = (shape[0], shape[2], shape[3]);
    let q = tape.matmul(queries, vars.w_q)?;
    let k = tape.matmul(keys, vars.w_k)?;
    let v = tape.matmul(keys, vars.w_v)?;
    let qk = tape.mul(q, k)?;
    let score = tape.sum(qk, 3)?;
    let score = tape.sum(score, 1)?;
    let score = tape.scale(score, 1.0 / (h as f64).sqrt());
    let weights = tape.softmax(score, 1)?;
    let weights = tape.reshape(weights, &[b, 1, t, 1])?;
    let a = tape.mul(weights, v)?;
    tape.add(keys, a)
}

/// Bidirectional attention on branch features, each branch read out by its
/// own read-out, then averaged.
pub fn fuse_attention(
    tape: &mut Tape,
    z_p: Var,
    z_f: Var,
    vars: &AttentionVars,
    readout_p: &Readout,
    readout_f: &Readout,
) -> Result<Var> {
    let enh_p = attend(tape, z_f, z_p, vars)?;
    let enh_f = attend(tape, z_p, z_f, vars)?;
    let y_p = apply_readout(tape, enh_p, readout_p)?;
    let y_f = apply_readout(tape, enh_f, readout_f)?;
    fuse_simple(tape, y_p, y_f)
}
