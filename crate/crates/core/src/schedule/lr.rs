//! Learning-rate schedules.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKind {
    Constant,
    WarmupCosine,
}

impl FromStr for LrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" | "const" => Ok(LrKind::Constant),
            "warmup_cosine" | "warmup-cosine" | "cosine" => Ok(LrKind::WarmupCosine),
            _ => Err(Error::Config(format!("unknown lr schedule `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub kind: LrKind,
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub decay_end_step: u64,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig {
            kind: LrKind::WarmupCosine,
            base_lr: 6e-4,
            min_lr: 6e-5,
            warmup_steps: 100,
            decay_end_step: 2000,
        }
    }
}

impl LrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr > 0.0 && self.min_lr <= self.base_lr && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "need 0 < min_lr <= base_lr, got {} and {}",
                self.min_lr, self.base_lr
            )));
        }
        if self.warmup_steps >= self.decay_end_step {
            return Err(Error::Config(format!(
                "warmup_steps {} must be below decay_end_step {}",
                self.warmup_steps, self.decay_end_step
            )));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        match self.kind {
            LrKind::Constant => self.base_lr,
            LrKind::WarmupCosine => {
                if step <= self.warmup_steps {
                    if self.warmup_steps == 0 {
                        return self.base_lr;
                    }
                    self.base_lr * step as f64 / self.warmup_steps as f64
                } else if step >= self.decay_end_step {
                    self.min_lr
                } else {
                    let p = (step - self.warmup_steps) as f64
                        / (self.decay_end_step - self.warmup_steps) as f64;
                    self.min_lr + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (PI * p).cos())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let c = LrConfig::default();
        assert_eq!(c.lr_at(0), 0.0);
        assert_eq!(c.lr_at(100), 6e-4);
        assert_eq!(c.lr_at(2000), 6e-5);
        assert_eq!(c.lr_at(5000), 6e-5);
        assert!((c.lr_at(50) - 3e-4).abs() < 1e-15);
        assert!((c.lr_at(1050) - 3.3e-4).abs() < 1e-15);
        let k = LrConfig {
            kind: LrKind::Constant,
            ..c
        };
        assert_eq!(k.lr_at(7), 6e-4);
    }

    #[test]
    fn continuity() {
        let c = LrConfig::default();
        // the formula switches branches between these adjacent steps
        for s in [100, 1999] {
            assert!((c.lr_at(s + 1) - c.lr_at(s)).abs() < c.base_lr / 100.0);
        }
        for s in 0..2100 {
            assert!((c.lr_at(s + 1) - c.lr_at(s)).abs() <= c.base_lr / 100.0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn validation() {
        let c = LrConfig::default();
        assert!(c.validate().is_ok());
        assert!(LrConfig { min_lr: 1e-3, ..c }.validate().is_err());
        assert!(LrConfig { warmup_steps: 2000, ..c }.validate().is_err());
    }
}
