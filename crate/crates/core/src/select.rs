//! Exogenous-conditioned embedding and the mixture-of-experts selector.
//!
//! Tensors carry arbitrary leading axes; time is the second-to-last axis and
//! features the last.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    Past,
    Future,
}

impl Branch {
    pub fn tag(self) -> &'static str {
        match self {
            Branch::Past => "past",
            Branch::Future => "future",
        }
    }
}

/// `w_x: [F, H]`, `w_e: [F_τ, H]`, `b: [H]`.
#[derive(Debug, Clone, Copy)]
pub struct EmbedVars {
    pub w_x: Var,
    pub w_e: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedOptions {
    pub activation: Activation,
    pub keep: f64,
    pub train: bool,
}

/// Zero-pads the time axis of `x` to `len`; the past branch pads at the
/// head, the future branch at the tail.
pub fn pad_time(tape: &mut Tape, x: Var, len: usize, branch: Branch) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let axis = shape.len() - 2;
    if shape[axis] >= len {
        return Ok(x);
    }
    let mut pad_shape = shape;
    pad_shape[axis] = len - pad_shape[axis];
    let pad = tape.constant(Tensor::zeros(&pad_shape));
    match branch {
        Branch::Past => tape.concat(&[pad, x], axis),
        Branch::Future => tape.concat(&[x, pad], axis),
    }
}

/// `Dropout(Act(X·W_x + E·W_e + b))`.
pub fn conditional_embed<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    e: Var,
    vars: &EmbedVars,
    branch: Branch,
    opts: EmbedOptions,
    rng: &mut R,
) -> Result<Var> {
    let axis = tape.shape(x).len() - 2;
    let len = tape.shape(x)[axis].max(tape.shape(e)[axis]);
    let x = pad_time(tape, x, len, branch)?;
    let e = pad_time(tape, e, len, branch)?;
    let px = tape.matmul(x, vars.w_x)?;
    let pe = tape.matmul(e, vars.w_e)?;
    let s = tape.add(px, pe)?;
    let s = tape.add(s, vars.b)?;
    let a = opts.activation.apply(tape, s);
    tape.dropout(a, opts.keep, opts.train, rng)
}

/// Gate `softmax(X·W_g)` over the expert axis; `w_g: [H, K]`.
pub fn moe_gate(tape: &mut Tape, x: Var, w_g: Var) -> Result<Var> {
    let logits = tape.matmul(x, w_g)?;
    let axis = tape.shape(logits).len() - 1;
    tape.softmax(logits, axis)
}

/// `Σ_k g_k · (X·W_k)` with each `W_k: [H, H]`.
pub fn moe_select(tape: &mut Tape, x: Var, experts: &[Var], gate: Var) -> Result<Var> {
    let axis = tape.shape(gate).len() - 1;
    let mut acc: Option<Var> = None;
    for (k, &w) in experts.iter().enumerate() {
        let proj = tape.matmul(x, w)?;
        let g = tape.slice(gate, axis, k, 1)?;
        let term = tape.mul(proj, g)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one expert"))
}
