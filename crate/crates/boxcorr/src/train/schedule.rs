//! Learning-rate schedule: linear warmup into cosine decay.

/// Shape of the learning-rate curve over one run.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    /// Peak learning rate follows the linear batch scaling rule.
    pub fn new(base_lr: f64, batch_size: usize, warmup_steps: usize, total_steps: usize) -> Self {
        Schedule {
            peak_lr: base_lr * batch_size as f64 / 256.0,
            warmup_steps,
            total_steps,
        }
    }
}

/// Learning rate at `step`. Ramps linearly from 0 to the peak over the
/// warmup, then decays as `peak * 0.5 * (1 + cos(pi * progress))`, reaching
/// exactly 0 at `total_steps` and staying there.
pub fn cosine_lr(step: usize, s: &Schedule) -> f64 {
    if s.warmup_steps > 0 && step < s.warmup_steps {
        return s.peak_lr * step as f64 / s.warmup_steps as f64;
    }
    let span = s.total_steps.saturating_sub(s.warmup_steps);
    if span == 0 {
        return if step >= s.total_steps { 0.0 } else { s.peak_lr };
    }
    let progress = ((step - s.warmup_steps) as f64 / span as f64).min(1.0);
    s.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
