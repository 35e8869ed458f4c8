//! Per-site normalization configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RowDivisor, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Divide by the per-token standard deviation.
    Standard,
    /// Divide by a collected constant; the site is affine in its input.
    Frozen,
    /// Divide by `(1 - w) * sigma + w * constant`.
    Interpolating(f64),
}

/// Per-position flags that select the special-case divisor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TokenFlags {
    pub is_bos: bool,
    pub is_eot: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenClass {
    Bos,
    Eot,
    Regular,
}

impl TokenFlags {
    /// Position 0 wins over EOT: an EOT token at position 0 counts as BOS.
    pub fn class(self) -> TokenClass {
        if self.is_bos {
            TokenClass::Bos
        } else if self.is_eot {
            TokenClass::Eot
        } else {
            TokenClass::Regular
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormState<F> {
    pub mode: NormMode,
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub sigma_bar: f64,
    pub sigma0_bar: f64,
    pub special_bos_active: bool,
    pub special_eot_active: bool,
    pub center_mean: bool,
}

impl<F: Scalar> NormState<F> {
    /// Standard LayerNorm with a neutral affine.
    pub fn new(width: usize) -> Self {
        NormState {
            mode: NormMode::Standard,
            gamma: Tensor::ones(&[width]),
            beta: Tensor::zeros(&[width]),
            sigma_bar: 0.0,
            sigma0_bar: 0.0,
            special_bos_active: false,
            special_eot_active: false,
            center_mean: true,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_fully_frozen(&self) -> bool {
        self.mode == NormMode::Frozen && !self.special_bos_active && !self.special_eot_active
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.beta.len() {
            return Err(Error::Dimension(format!(
                "gamma has {} entries, beta {}",
                self.gamma.len(),
                self.beta.len()
            )));
        }
        if let NormMode::Interpolating(w) = self.mode {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Argument(format!("interpolation weight {w} outside [0, 1]")));
            }
        }
        if self.mode != NormMode::Standard {
            if !(self.sigma_bar > 0.0) {
                return Err(Error::Argument(format!(
                    "non-standard mode needs sigma_bar > 0, got {}",
                    self.sigma_bar
                )));
            }
            if (self.special_bos_active || self.special_eot_active) && !(self.sigma0_bar > 0.0) {
                return Err(Error::Argument(format!(
                    "active special case needs sigma0_bar > 0, got {}",
                    self.sigma0_bar
                )));
            }
        }
        Ok(())
    }

    /// The constant a non-standard site divides a token of this class by.
    pub fn frozen_divisor(&self, class: TokenClass) -> f64 {
        let special = match class {
            TokenClass::Bos => self.special_bos_active,
            TokenClass::Eot => self.special_eot_active,
            TokenClass::Regular => false,
        };
        if special {
            self.sigma0_bar
        } else {
            self.sigma_bar
        }
    }

    pub fn row_divisors(&self, flags: &[TokenFlags]) -> Vec<RowDivisor> {
        flags
            .iter()
            .map(|f| match self.mode {
                NormMode::Standard => RowDivisor::STANDARD,
                NormMode::Frozen => RowDivisor::frozen(self.frozen_divisor(f.class())),
                NormMode::Interpolating(w) if w >= 1.0 => {
                    RowDivisor::frozen(self.frozen_divisor(f.class()))
                }
                NormMode::Interpolating(w) => RowDivisor {
                    sigma_weight: 1.0 - w,
                    fixed: w * self.frozen_divisor(f.class()),
                },
            })
            .collect()
    }
}
