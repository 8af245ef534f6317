/// Cosine annealing from `lr_max` at epoch 0 to `lr_min` at `epochs − 1`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr_max: f64, lr_min: f64) -> f64 {
    if epochs <= 1 {
        return lr_max;
    }
    let progress = epoch.min(epochs - 1) as f64 / (epochs - 1) as f64;
    let w = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    // Written as a blend so both endpoints come out exactly.
    lr_max * w + lr_min * (1.0 - w)
}
