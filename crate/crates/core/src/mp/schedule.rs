use serde::{Deserialize, Serialize};

use super::MpError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Trigger {
    /// Fires after every `k`-th optimizer step.
    EveryKSteps { k: usize },
    /// Fires when the loss improved by less than `rel_tol` (relative) over
    /// the last `window` steps of the current rung.
    Plateau { window: usize, rel_tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySchedule {
    pub mu_min: f64,
    #[serde(default = "default_growth")]
    pub growth_factor: f64,
    pub trigger: Trigger,
    pub mu_max: f64,
}

fn default_growth() -> f64 {
    10.0
}

impl PenaltySchedule {
    pub fn every_k(mu_min: f64, k: usize, mu_max: f64) -> Self {
        Self {
            mu_min,
            growth_factor: 10.0,
            trigger: Trigger::EveryKSteps { k },
            mu_max,
        }
    }

    /// A schedule that never changes μ.
    pub fn constant(mu: f64) -> Self {
        Self {
            mu_min: mu,
            growth_factor: 10.0,
            trigger: Trigger::EveryKSteps { k: usize::MAX },
            mu_max: mu,
        }
    }

    pub fn validate(&self) -> Result<(), MpError> {
        let bad = |m: &str| Err(MpError::InvalidSchedule(m.to_string()));
        if !(self.mu_min >= 0.0 && self.mu_min.is_finite()) {
            return bad("mu_min must be finite and non-negative");
        }
        if !(self.mu_max >= self.mu_min) {
            return bad("mu_max must be at least mu_min");
        }
        if !(self.growth_factor > 1.0) {
            return bad("growth_factor must exceed 1");
        }
        match self.trigger {
            Trigger::EveryKSteps { k } if k == 0 => bad("trigger.k must be positive"),
            Trigger::Plateau { window, rel_tol } if window == 0 || !(rel_tol > 0.0) => {
                bad("plateau window and rel_tol must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Number of distinct μ values on the ladder.
    pub fn rungs(&self) -> usize {
        if self.mu_min <= 0.0 {
            return 1;
        }
        let mut n = 1;
        let mut mu = self.mu_min;
        while mu < self.mu_max {
            mu = (mu * self.growth_factor).min(self.mu_max);
            n += 1;
        }
        n
    }
}

/// Whether the trigger fires after optimizer step `step` (1-based), given
/// the losses recorded since the current rung began.
pub fn trigger_fires(trigger: &Trigger, step: usize, rung_history: &[f64]) -> bool {
    match *trigger {
        Trigger::EveryKSteps { k } => step > 0 && step % k == 0,
        Trigger::Plateau { window, rel_tol } => {
            let n = rung_history.len();
            if n < window {
                return false;
            }
            let first = rung_history[n - window];
            let last = rung_history[n - 1];
            let improvement = (first - last) / first.abs().max(f64::MIN_POSITIVE);
            improvement < rel_tol
        }
    }
}

/// μ after optimizer step `step`: multiplied by the growth factor when the
/// trigger fires, clamped at `mu_max`, never decreased.
pub fn schedule_step(schedule: &PenaltySchedule, mu: f64, step: usize, rung_history: &[f64]) -> f64 {
    if trigger_fires(&schedule.trigger, step, rung_history) {
        (mu * schedule.growth_factor).min(schedule.mu_max).max(mu)
    } else {
        mu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_k_ladder() {
        let s = PenaltySchedule::every_k(1e-5, 170, 1e10);
        let mut mu = s.mu_min;
        for step in 1..=340 {
            mu = schedule_step(&s, mu, step, &[]);
            if step == 169 {
                assert_eq!(mu, 1e-5);
            }
            if step == 170 {
                assert!((mu - 1e-4).abs() < 1e-18);
            }
        }
        assert!((mu - 1e-3).abs() < 1e-17);
    }

    #[test]
    fn no_fire_no_change() {
        let s = PenaltySchedule::every_k(1e-3, 10, 1.0);
        assert_eq!(schedule_step(&s, 0.01, 7, &[]), 0.01);
    }

    #[test]
    fn plateau_fires_exactly_at_window() {
        let s = PenaltySchedule {
            mu_min: 1e-4,
            growth_factor: 10.0,
            trigger: Trigger::Plateau {
                window: 10000,
                rel_tol: 1e-3,
            },
            mu_max: 1.0,
        };
        let mut mu = s.mu_min;
        let mut hist = Vec::new();
        let mut fired_at = None;
        for step in 1..=20000 {
            hist.push(0.5);
            let next = schedule_step(&s, mu, step, &hist);
            if next > mu {
                fired_at = Some(step);
                break;
            }
            mu = next;
        }
        assert_eq!(fired_at, Some(10000));
    }

    #[test]
    fn plateau_waits_while_improving() {
        let t = Trigger::Plateau {
            window: 10,
            rel_tol: 1e-3,
        };
        let hist: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(!trigger_fires(&t, 50, &hist));
    }

    #[test]
    fn clamps_and_never_decreases() {
        let s = PenaltySchedule::every_k(1e-2, 1, 0.5);
        let mut mu = s.mu_min;
        for step in 1..10 {
            let next = schedule_step(&s, mu, step, &[]);
            assert!(next >= mu);
            mu = next;
        }
        assert_eq!(mu, 0.5);
        assert_eq!(s.rungs(), 3);
    }

    #[test]
    fn validation() {
        assert!(PenaltySchedule::every_k(1.0, 10, 0.1).validate().is_err());
        assert!(PenaltySchedule::every_k(1e-5, 0, 1.0).validate().is_err());
        let mut s = PenaltySchedule::every_k(1e-5, 3, 1.0);
        s.growth_factor = 1.0;
        assert!(s.validate().is_err());
    }
}
