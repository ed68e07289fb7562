//! Learning-rate schedules.

/// Multiplier applied to the base learning rate at each step.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warm-up over `ceil(ratio · total)` steps from 0, then cosine
    /// decay to 0 at `total`.
    CosineWarmup { warmup_ratio: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::CosineWarmup { warmup_ratio } => {
                let warmup = (warmup_ratio * total as f64).ceil() as usize;
                if step < warmup {
                    return base * step as f64 / warmup as f64;
                }
                let span = total.saturating_sub(warmup).max(1);
                let progress = ((step - warmup) as f64 / span as f64).min(1.0);
                base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_warmup_shape() {
        let s = LrSchedule::CosineWarmup { warmup_ratio: 0.03 };
        // warmup = ceil(3.0) = 3 steps
        assert_eq!(s.lr_at(1.0, 0, 100), 0.0);
        assert!((s.lr_at(1.0, 1, 100) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.lr_at(1.0, 3, 100), 1.0);
        assert!(s.lr_at(1.0, 99, 100) < 0.001);
        let mid = s.lr_at(1.0, 3 + 97 / 2, 100);
        assert!((mid - 0.5).abs() < 0.02, "{mid}");
    }

    #[test]
    fn constant_is_constant() {
        assert_eq!(LrSchedule::Constant.lr_at(0.3, 17, 20), 0.3);
    }
}
