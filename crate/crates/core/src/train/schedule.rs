use std::f64::consts::PI;

use crate::config::{ScheduleConfig, ScheduleKind};

/// Learning rate for optimizer step `step` (0-based) of `total_steps`, in
/// epoch `epoch` (0-based). Linear warm-up from `base / warmup` applies to
/// both kinds.
pub fn learning_rate(cfg: &ScheduleConfig, base: f64, step: usize, total_steps: usize, epoch: usize) -> f64 {
    if step < cfg.warmup_steps {
        return base * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    match cfg.kind {
        ScheduleKind::Cosine => {
            let span = total_steps.saturating_sub(cfg.warmup_steps).max(1);
            let progress = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
            let floor = cfg.min_lr_ratio;
            base * (floor + (1.0 - floor) * 0.5 * (1.0 + (PI * progress).cos()))
        }
        ScheduleKind::Step => base * cfg.gamma.powi((epoch / cfg.step_epochs.max(1)) as i32),
    }
}
