//! Adjacency construction: learned (adaptive), correlation-based, identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TOP_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    Pearson,
    Adaptive,
    AdaptiveDirected,
    Identity,
}

impl GraphKind {
    pub fn label(self) -> &'static str {
        match self {
            GraphKind::Pearson => "pearson-topk",
            GraphKind::Adaptive => "adaptive",
            GraphKind::AdaptiveDirected => "adaptive-directed",
            GraphKind::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    /// `[N, N]`.
    pub adjacency: Tensor,
    pub kind: GraphKind,
}

impl Graph {
    pub fn identity(n: usize) -> Graph {
        Graph {
            adjacency: Tensor::eye(n),
            kind: GraphKind::Identity,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.shape()[0]
    }

    /// Delimited dump, one row per line.
    pub fn to_delimited(&self) -> String {
        let n = self.n_nodes();
        self.adjacency
            .data()
            .chunks(n.max(1))
            .map(|row| row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

/// `softmax(ReLU(E·Eᵀ))` over rows, on the tape.
pub fn adaptive_adjacency(tape: &mut Tape, emb: Var) -> Result<Var> {
    adaptive_adjacency_directed(tape, emb, emb)
}

/// `softmax(ReLU(E_s·E_tᵀ))` over rows, on the tape.
pub fn adaptive_adjacency_directed(tape: &mut Tape, source: Var, target: Var) -> Result<Var> {
    let t = tape.transpose(target)?;
    let sim = tape.matmul(source, t)?;
    let sim = tape.relu(sim);
    Ok(tape.softmax(sim, 1)?)
}

/// Pearson correlation matrix of the rows of `series`. Rows with zero
/// variance correlate 0 with everything, themselves included.
pub fn pearson_matrix(series: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = series.len();
    let len = series.first().map_or(0, Vec::len);
    if len < 2 || series.iter().any(|s| s.len() != len) {
        return Err(Error::Config(
            "correlation graph needs equal-length series of at least 2 steps".into(),
        ));
    }
    let centered: Vec<(Vec<f64>, f64)> = series
        .iter()
        .map(|s| {
            let mean = s.iter().sum::<f64>() / len as f64;
            let c: Vec<f64> = s.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut rho = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (ci, ni) = &centered[i];
            let (cj, nj) = &centered[j];
            if *ni > 0.0 && *nj > 0.0 {
                let dot: f64 = ci.iter().zip(cj).map(|(a, b)| a * b).sum();
                rho[i][j] = (dot / (ni * nj)).clamp(-1.0, 1.0);
            }
        }
    }
    Ok(rho)
}

/// Keeps, per row, the `k` largest off-diagonal correlations (signed values
/// retained); ties go to the lower node index.
pub fn pearson_topk_adjacency(series: &[Vec<f64>], k: usize) -> Result<Graph> {
    let n = series.len();
    if k >= n {
        return Err(Error::Config(format!("top-k needs k < N, got k={k}, N={n}")));
    }
    let rho = pearson_matrix(series)?;
    let mut adj = Tensor::zeros(&[n, n]);
    for (i, row) in rho.iter().enumerate() {
        let mut cand: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        cand.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &j in &cand[..k] {
            adj.set(&[i, j], row[j]);
        }
    }
    Ok(Graph {
        adjacency: adj,
        kind: GraphKind::Pearson,
    })
}

/// Adds self-loops and divides each row by its absolute sum, so signed
/// weights keep their sign while the row's total magnitude is one.
pub fn with_self_loops_normalized(adj: &Tensor) -> Tensor {
    let n = adj.shape()[0];
    let mut out = adj.clone();
    for i in 0..n {
        let d = out.at(&[i, i]);
        out.set(&[i, i], d + 1.0);
        let row = &mut out.data_mut()[i * n..(i + 1) * n];
        let total: f64 = row.iter().map(|v| v.abs()).sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
    out
}
