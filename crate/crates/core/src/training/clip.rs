use super::TrainingError;
use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipOutcome {
    /// Global norm before clipping.
    pub norm: f64,
    /// Factor applied to every gradient (1 when not clipped).
    pub scale: f64,
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. `names` labels the gradients for error messages.
pub fn clip_global_norm(grads: &mut [Tensor], names: &[String], max_norm: f64) -> Result<ClipOutcome, TrainingError> {
    if !(max_norm > 0.0) {
        return Err(TrainingError::Config(format!("max_norm must be positive, got {max_norm}")));
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.all_finite() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(TrainingError::NonFiniteGradient(name));
        }
    }
    let norm = global_norm(grads);
    if norm <= max_norm {
        return Ok(ClipOutcome { norm, scale: 1.0 });
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        g.scale_in_place(scale);
    }
    Ok(ClipOutcome { norm, scale })
}
