use std::f64::consts::PI;

use super::NumError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    StepLr { step_size: usize, gamma: f64 },
    Cosine { t_max: usize, eta_min: f64 },
}

/// Per-epoch learning rate as a closed form of the epoch index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub kind: ScheduleKind,
}

impl LrSchedule {
    pub fn new(base_lr: f64, kind: ScheduleKind) -> Result<Self, NumError> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(NumError::Invalid(format!("base learning rate {base_lr}")));
        }
        match kind {
            ScheduleKind::StepLr { step_size, gamma } => {
                if step_size == 0 || !(gamma.is_finite() && gamma > 0.0) {
                    return Err(NumError::Invalid(format!("StepLr({step_size}, {gamma})")));
                }
            }
            ScheduleKind::Cosine { t_max, eta_min } => {
                if t_max == 0 || !(eta_min.is_finite() && eta_min >= 0.0) {
                    return Err(NumError::Invalid(format!("Cosine({t_max}, {eta_min})")));
                }
            }
        }
        Ok(Self { base_lr, kind })
    }

    /// lr 1e-3 halved every 10 epochs.
    pub fn default_step_lr() -> Self {
        Self {
            base_lr: 1e-3,
            kind: ScheduleKind::StepLr {
                step_size: 10,
                gamma: 0.5,
            },
        }
    }

    /// lr 1e-3 annealed to 1e-6 over 100 epochs.
    pub fn default_cosine() -> Self {
        Self {
            base_lr: 1e-3,
            kind: ScheduleKind::Cosine {
                t_max: 100,
                eta_min: 1e-6,
            },
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(self, epoch)
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    let base = schedule.base_lr;
    match schedule.kind {
        ScheduleKind::StepLr { step_size, gamma } => base * gamma.powi((epoch / step_size) as i32),
        ScheduleKind::Cosine { t_max, eta_min } => {
            eta_min + (base - eta_min) * (1.0 + (PI * epoch as f64 / t_max as f64).cos()) / 2.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_lr_values() {
        let s = LrSchedule::default_step_lr();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(9), 1e-3);
        assert_eq!(s.lr_at(10), 5e-4);
        assert_eq!(s.lr_at(25), 2.5e-4);
    }

    #[test]
    fn cosine_values() {
        let s = LrSchedule::default_cosine();
        assert_eq!(s.lr_at(0), 1e-3);
        assert_eq!(s.lr_at(100), 1e-6);
        assert!((s.lr_at(50) - 5.005e-4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LrSchedule::new(0.0, ScheduleKind::Cosine { t_max: 1, eta_min: 0.0 }).is_err());
        assert!(LrSchedule::new(1e-3, ScheduleKind::StepLr { step_size: 0, gamma: 0.5 }).is_err());
        assert!(LrSchedule::new(1e-3, ScheduleKind::Cosine { t_max: 10, eta_min: -1.0 }).is_err());
    }
}
