//! Finite-difference checks of every tape primitive over 20 seeds.

use exost::tensor::{grad_check, grad_check_many, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checks::{FD_STEP, INSTANCES};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.5..1.5))
}

/// Entries bounded away from zero so kinked primitives are differentiable.
fn away_from_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let mag = rng.random_range(0.05..1.5);
        if rng.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::from_fn(tape.shape(v), |_| rng.random_range(-1.0..1.0));
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    tape.sum_all(p)
}

type Unary = fn(&mut Tape, Var) -> Var;

fn unary(kinked: bool, op: Unary) -> f64 {
    (0..INSTANCES)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = if kinked {
                away_from_kink(&mut rng, &[3, 4])
            } else {
                random(&mut rng, &[3, 4])
            };
            grad_check(
                |t, v| {
                    let y = op(t, v);
                    weighted_sum(t, y, seed)
                },
                &x,
                FD_STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

fn pair(sa: &[usize], sb: &[usize], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    (0..INSTANCES)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = [random(&mut rng, sa), random(&mut rng, sb)];
            grad_check_many(
                |t, v| {
                    let y = f(t, v)?;
                    weighted_sum(t, y, seed)
                },
                &points,
                FD_STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

fn dropout() -> f64 {
    (0..INSTANCES)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, &[4, 4]);
            // Re-seeded inside so every evaluation draws the same mask.
            grad_check(
                |t, v| {
                    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed + 100);
                    let d = t.dropout(v, 0.7, true, &mut mask_rng)?;
                    weighted_sum(t, d, seed)
                },
                &x,
                FD_STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

fn composite() -> f64 {
    (0..INSTANCES)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let points = [
                random(&mut rng, &[5, 3]),
                random(&mut rng, &[3, 4]),
                random(&mut rng, &[4, 4]),
                random(&mut rng, &[4, 2]),
            ];
            grad_check_many(
                |t, v| {
                    let h = t.matmul(v[0], v[1])?;
                    let h = t.tanh(h);
                    let h = t.matmul(h, v[2])?;
                    let h = t.sigmoid(h);
                    let h = t.matmul(h, v[3])?;
                    let h = t.softmax(h, 1)?;
                    weighted_sum(t, h, seed)
                },
                &points,
                FD_STEP,
            )
            .unwrap()
        })
        .fold(0.0, f64::max)
}

/// Worst relative error per primitive (and one three-layer composite).
pub fn primitive_grad_errors() -> Vec<(&'static str, f64)> {
    let mut out: Vec<(&'static str, f64)> = vec![
        ("relu", unary(true, |t, v| t.relu(v))),
        ("leaky-relu", unary(true, |t, v| t.leaky_relu(v, 0.1))),
        ("sigmoid", unary(false, |t, v| t.sigmoid(v))),
        ("tanh", unary(false, |t, v| t.tanh(v))),
        ("abs", unary(true, |t, v| t.abs(v))),
        ("scale", unary(false, |t, v| t.scale(v, -2.5))),
        ("add-scalar", unary(false, |t, v| t.add_scalar(v, 0.75))),
    ];
    let matmul = [
        (&[3usize, 4][..], &[4usize, 2][..]),
        (&[2, 3, 4], &[4, 5]),
        (&[3, 3], &[2, 3, 4]),
        (&[2, 3, 4], &[2, 4, 2]),
    ]
    .iter()
    .map(|(a, b)| pair(a, b, &|t, v| t.matmul(v[0], v[1])))
    .fold(0.0, f64::max);
    out.push(("matmul", matmul));
    let shapes = [
        (&[2usize, 3][..], &[2usize, 3][..]),
        (&[2, 3], &[3]),
        (&[2, 1, 3], &[4, 1]),
    ];
    let binary = |op: fn(&mut Tape, Var, Var) -> Result<Var>| {
        shapes
            .iter()
            .map(|(a, b)| pair(a, b, &|t, v| op(t, v[0], v[1])))
            .fold(0.0, f64::max)
    };
    out.push(("add", binary(|t, a, b| t.add(a, b))));
    out.push(("sub", binary(|t, a, b| t.sub(a, b))));
    out.push(("mul", binary(|t, a, b| t.mul(a, b))));
    let (x, y) = (&[2usize, 3, 4][..], &[2usize, 2, 4][..]);
    out.push((
        "softmax",
        pair(x, y, &|t, v| t.softmax(v[0], 1)).max(pair(x, y, &|t, v| t.softmax(v[0], 2))),
    ));
    out.push(("sum", pair(x, y, &|t, v| t.sum(v[0], 1))));
    out.push(("mean", pair(x, y, &|t, v| t.mean(v[0], 0))));
    out.push(("concat", pair(x, y, &|t, v| t.concat(&[v[0], v[1]], 1))));
    out.push(("slice", pair(x, y, &|t, v| t.slice(v[0], 2, 1, 2))));
    out.push(("reshape", pair(x, y, &|t, v| t.reshape(v[0], &[6, 4]))));
    out.push(("transpose", pair(x, y, &|t, v| t.transpose(v[0]))));
    out.push((
        "broadcast",
        pair(x, y, &|t, v| {
            let s = t.slice(v[0], 1, 0, 1)?;
            t.broadcast_to(s, &[3, 2, 5, 4])
        }),
    ));
    out.push(("dropout", dropout()));
    out.push(("composite", composite()));
    out
}
