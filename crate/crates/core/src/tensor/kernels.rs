//! Row-major GEMM loops. All kernels accumulate into `c`.
//!
//! The three public layouts share one register-blocked kernel over strided
//! operands: `c[i][j] += Σ_p A(i, p) · B(p, j)` with
//! `A(i, p) = a[i·ars + p·acs]` and `B(p, j) = b[p·brs + j·bcs]`.

const MR: usize = 4;
const NR: usize = 4;

#[derive(Clone, Copy)]
struct Strided<'a> {
    data: &'a [f64],
    row: usize,
    col: usize,
}

impl Strided<'_> {
    #[inline(always)]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row + c * self.col]
    }
}

fn kernel(m: usize, n: usize, depth: usize, a: Strided, b: Strided, c: &mut [f64]) {
    if m == 0 || n == 0 || depth == 0 {
        return;
    }
    // Pack B into column panels of width NR (zero-padded), p-major.
    let n_blocks = n.div_ceil(NR);
    let mut bp = vec![0.0; n_blocks * depth * NR];
    for jb in 0..n_blocks {
        let panel = &mut bp[jb * depth * NR..(jb + 1) * depth * NR];
        for q in 0..NR.min(n - jb * NR) {
            let j = jb * NR + q;
            for p in 0..depth {
                panel[p * NR + q] = b.at(p, j);
            }
        }
    }
    let mut ap = vec![0.0; depth * MR];
    for i0 in (0..m).step_by(MR) {
        let rows = MR.min(m - i0);
        ap.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..rows {
            for p in 0..depth {
                ap[p * MR + r] = a.at(i0 + r, p);
            }
        }
        for jb in 0..n_blocks {
            let panel = &bp[jb * depth * NR..(jb + 1) * depth * NR];
            let mut acc = [[0.0f64; NR]; MR];
            for (av, bv) in ap.chunks_exact(MR).zip(panel.chunks_exact(NR)) {
                for r in 0..MR {
                    for q in 0..NR {
                        acc[r][q] += av[r] * bv[q];
                    }
                }
            }
            let cols = NR.min(n - jb * NR);
            for (r, acc_row) in acc.iter().enumerate().take(rows) {
                let base = (i0 + r) * n + jb * NR;
                for (cv, v) in c[base..base + cols].iter_mut().zip(acc_row) {
                    *cv += v;
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let a = Strided {
        data: a,
        row: k,
        col: 1,
    };
    let b = Strided {
        data: b,
        row: n,
        col: 1,
    };
    kernel(m, n, k, a, b, c);
}

/// `c[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let a = Strided {
        data: a,
        row: n,
        col: 1,
    };
    let b = Strided {
        data: b,
        row: 1,
        col: n,
    };
    kernel(m, k, n, a, b, c);
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    let a = Strided {
        data: a,
        row: 1,
        col: k,
    };
    let b = Strided {
        data: b,
        row: n,
        col: 1,
    };
    kernel(k, n, m, a, b, c);
}
