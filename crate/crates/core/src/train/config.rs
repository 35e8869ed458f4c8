//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use super::optimizer::OptimizerConfig;
use crate::error::{Error, Result};
use crate::norm::DEFAULT_PROMPTS;
use crate::schedule::LrConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub micro_batch_size: usize,
    pub grad_accum: usize,
    pub seq_len: usize,
    pub total_steps: u64,
    pub lr: LrConfig,
    pub optimizer: OptimizerConfig,
    /// Validate after every `eval_every` steps and after the last one.
    pub eval_every: u64,
    /// Predicted tokens per validation pass.
    pub eval_tokens: usize,
    pub seed: u64,
    pub divergence_threshold: f64,
    /// Consecutive steps above the threshold tolerated once events stop.
    pub divergence_patience: u64,
    /// Recollect sigma statistics before every step that freezes a site.
    pub recollect_sigma: bool,
    pub sigma_prompts: usize,
    /// Write `step_<s>.ckpt` at evaluation steps.
    pub save_step_checkpoints: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            micro_batch_size: 16,
            grad_accum: 1,
            seq_len: 256,
            total_steps: 2000,
            lr: LrConfig::default(),
            optimizer: OptimizerConfig::default(),
            eval_every: 100,
            eval_tokens: 32 * 256,
            seed: 0,
            divergence_threshold: 20.0,
            divergence_patience: 50,
            recollect_sigma: false,
            sigma_prompts: DEFAULT_PROMPTS,
            save_step_checkpoints: true,
        }
    }
}

impl TrainConfig {
    /// The large preset: 48 sequences of 1024 tokens, 10 accumulation steps.
    pub fn large() -> Self {
        TrainConfig {
            micro_batch_size: 48,
            grad_accum: 10,
            seq_len: 1024,
            ..Default::default()
        }
    }

    pub fn tokens_per_step(&self) -> usize {
        self.micro_batch_size * self.seq_len * self.grad_accum
    }

    pub fn validate(&self) -> Result<()> {
        if self.micro_batch_size == 0 || self.grad_accum == 0 || self.seq_len == 0 {
            return Err(Error::Config(
                "micro_batch_size, grad_accum and seq_len must be positive".into(),
            ));
        }
        if self.eval_every == 0 || self.sigma_prompts == 0 {
            return Err(Error::Config("eval_every and sigma_prompts must be positive".into()));
        }
        if self.eval_tokens < self.seq_len {
            return Err(Error::Config(format!(
                "eval_tokens {} must be at least seq_len {}",
                self.eval_tokens, self.seq_len
            )));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence_threshold must be positive".into()));
        }
        self.lr.validate()?;
        self.optimizer.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_tokens_per_step() {
        assert_eq!(TrainConfig::large().tokens_per_step(), 491_520);
        assert_eq!(TrainConfig::default().tokens_per_step(), 16 * 256);
    }
}
