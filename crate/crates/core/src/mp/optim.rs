use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineSchedule {
    /// Steps over which the rate decays from `lr` to `min_lr`.
    pub total_steps: usize,
    #[serde(default)]
    pub min_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub cosine: Option<CosineSchedule>,
    /// Rescales the joint gradient to at most this Euclidean norm.
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            cosine: None,
            grad_clip: None,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Learning rate at global step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.cosine {
            None => self.lr,
            Some(c) => {
                let frac = (step as f64 / c.total_steps.max(1) as f64).min(1.0);
                c.min_lr + 0.5 * (self.lr - c.min_lr) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// First and second moment estimates for one block of parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn update(&mut self, cfg: &AdamConfig, lr: f64, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::with_lr(0.1);
        let mut s = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        s.update(&cfg, cfg.lr, &mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn minimizes_quadratic() {
        let cfg = AdamConfig::with_lr(0.05);
        let mut s = AdamState::new(1);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            s.update(&cfg, cfg.lr, &mut p, &g);
        }
        assert!((p[0] - 1.5).abs() < 1e-3);
    }

    #[test]
    fn cosine_endpoints() {
        let cfg = AdamConfig {
            cosine: Some(CosineSchedule {
                total_steps: 100,
                min_lr: 1e-5,
            }),
            ..AdamConfig::with_lr(1e-3)
        };
        assert!((cfg.lr_at(0) - 1e-3).abs() < 1e-15);
        assert!((cfg.lr_at(100) - 1e-5).abs() < 1e-15);
        assert!(cfg.lr_at(50) < 1e-3 && cfg.lr_at(50) > 1e-5);
    }
}
