//! Spatio-temporal encoders mapping `[B, N, T, H]` to a `[B, N, T_f, 1]`
//! forecast. Both expose their width-`H` features just before the final
//! per-step read-out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    Grugcn,
    MlpMixer,
}

impl BackboneKind {
    pub fn needs_graph(self) -> bool {
        matches!(self, BackboneKind::Grugcn)
    }

    pub fn label(self) -> &'static str {
        match self {
            BackboneKind::Grugcn => "grugcn",
            BackboneKind::MlpMixer => "mlp-mixer",
        }
    }
}

/// Graph-convolutional GRU cell. `w_s: [H, H]`, `w_zr: [2H, 2H]`,
/// `b_zr: [2H]`, `w_c: [2H, H]`, `b_c: [H]`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_s: Var,
    pub w_zr: Var,
    pub b_zr: Var,
    pub w_c: Var,
    pub b_c: Var,
}

/// `w1: [T·H, D]`, `b1: [D]`, `w2: [D, T_f·H]`, `b2: [T_f·H]`.
#[derive(Debug, Clone, Copy)]
pub struct MixerVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Per-step read-out `[H] → [1]`.
#[derive(Debug, Clone, Copy)]
pub struct Readout {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub enum BackboneVars {
    /// `lift: [H, T_f·H]` and `lift_b: [T_f·H]` expand the last hidden state.
    Grugcn {
        cell: GruVars,
        lift: Var,
        lift_b: Var,
        readout: Readout,
    },
    Mixer {
        mixer: MixerVars,
        readout: Readout,
    },
}

impl BackboneVars {
    pub fn readout(&self) -> Readout {
        match self {
            BackboneVars::Grugcn { readout, .. } | BackboneVars::Mixer { readout, .. } => *readout,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackboneOut {
    /// `[B, N, T_f, 1]`.
    pub y: Var,
    /// `[B, N, T_f, H]` features before the read-out.
    pub features: Var,
}

/// One recurrent update on `h, x_t: [B, N, H]` with `adj: [N, N]`.
pub fn grugcn_step(tape: &mut Tape, h: Var, x_t: Var, adj: Var, cell: &GruVars) -> tensor::Result<Var> {
    let hidden = *tape.shape(h).last().unwrap();
    let mixed = tape.matmul(adj, x_t)?;
    let s = tape.matmul(mixed, cell.w_s)?;
    let sh = tape.concat(&[s, h], 2)?;
    let zr = tape.linear(sh, cell.w_zr, Some(cell.b_zr))?;
    let zr = tape.sigmoid(zr);
    let z = tape.slice(zr, 2, 0, hidden)?;
    let r = tape.slice(zr, 2, hidden, hidden)?;
    let rh = tape.mul(r, h)?;
    let srh = tape.concat(&[s, rh], 2)?;
    let c = tape.linear(srh, cell.w_c, Some(cell.b_c))?;
    let c = tape.tanh(c);
    // z⊙h + (1−z)⊙c
    let diff = tape.sub(h, c)?;
    let zd = tape.mul(z, diff)?;
    tape.add(c, zd)
}

/// Runs the cell over every step from a zero state, returning the last state.
pub fn grugcn_encode(tape: &mut Tape, x: Var, adj: Var, cell: &GruVars) -> tensor::Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, n, t, h) = (shape[0], shape[1], shape[2], shape[3]);
    let mut state = tape.constant(crate::tensor::Tensor::zeros(&[b, n, h]));
    for step in 0..t {
        let xt = tape.slice(x, 2, step, 1)?;
        let xt = tape.reshape(xt, &[b, n, h])?;
        state = grugcn_step(tape, state, xt, adj, cell)?;
    }
    Ok(state)
}

/// Two-layer per-node map over the flattened time × feature block.
pub fn mlp_mixer_features(tape: &mut Tape, x: Var, mixer: &MixerVars) -> tensor::Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (b, n) = (shape[0], shape[1]);
    let flat = tape.reshape(x, &[b, n, shape[2] * shape[3]])?;
    let u = tape.linear(flat, mixer.w1, Some(mixer.b1))?;
    let u = tape.relu(u);
    tape.linear(u, mixer.w2, Some(mixer.b2))
}

pub fn apply_readout(tape: &mut Tape, features: Var, readout: &Readout) -> tensor::Result<Var> {
    tape.linear(features, readout.w, Some(readout.b))
}

/// `x: [B, N, T, H]`; `adj: [N, N]` is required by the graph backbone.
pub fn backbone_forward(
    tape: &mut Tape,
    x: Var,
    adj: Option<Var>,
    vars: &BackboneVars,
    t_future: usize,
) -> Result<BackboneOut> {
    let shape = tape.shape(x).to_vec();
    let (b, n, h) = (shape[0], shape[1], shape[3]);
    let lifted = match vars {
        BackboneVars::Grugcn { cell, lift, lift_b, .. } => {
            let adj = adj.ok_or(Error::MissingGraph(BackboneKind::Grugcn.label()))?;
            let last = grugcn_encode(tape, x, adj, cell)?;
            tape.linear(last, *lift, Some(*lift_b))?
        }
        BackboneVars::Mixer { mixer, .. } => mlp_mixer_features(tape, x, mixer)?,
    };
    let features = tape.reshape(lifted, &[b, n, t_future, h])?;
    let y = apply_readout(tape, features, &vars.readout())?;
    Ok(BackboneOut { y, features })
}
