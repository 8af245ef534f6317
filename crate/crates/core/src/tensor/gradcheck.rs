use super::{Result, Tape, Tensor, TensorError, Var};

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(point), step)
}

/// [`grad_check`] over several inputs at once (e.g. every model parameter).
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|p| tape.leaf(p.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base = tape.value(root).data()[0];
    if !base.is_finite() {
        return Err(TensorError::NonFinite(format!("f(point) = {base}")));
    }
    tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad_tensor(v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|p| tape.leaf(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0])
    };

    let mut inputs = points.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..inputs[p].len() {
            let original = inputs[p].data()[i];
            inputs[p].data_mut()[i] = original + step;
            let up = eval(&inputs)?;
            inputs[p].data_mut()[i] = original - step;
            let down = eval(&inputs)?;
            inputs[p].data_mut()[i] = original;
            if !up.is_finite() || !down.is_finite() {
                return Err(TensorError::NonFinite(format!(
                    "perturbed evaluation of input {p} coordinate {i}"
                )));
            }
            let numeric = (up - down) / (2.0 * step);
            let err = (grad.data()[i] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
