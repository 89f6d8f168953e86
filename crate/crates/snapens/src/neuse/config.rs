use serde::{Deserialize, Serialize};

use crate::error::SnapError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative as a function of the preactivation.
    #[inline]
    pub fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - pre.tanh() * pre.tanh(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuSEConfig {
    /// Per-entity embedding size; the pair embedding has D = 2d entries.
    pub d: usize,
    /// Memory hops H; hops beyond the first add attention and transfer maps.
    pub hops: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    /// Soft-label sharpness: larger alpha concentrates mass on the optimum.
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub init_std: f64,
    pub max_epochs: u32,
    pub seed: u64,
}

impl Default for NeuSEConfig {
    fn default() -> Self {
        NeuSEConfig {
            d: 16,
            hops: 2,
            activation: Activation::Relu,
            dropout_rate: 0.5,
            alpha: 1.0,
            lr: 0.01,
            batch_size: 128,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            init_std: 0.01,
            max_epochs: 10,
            seed: 0,
        }
    }
}

impl NeuSEConfig {
    pub fn validate(&self) -> Result<(), SnapError> {
        if self.d < 1 {
            return Err(SnapError::Config("d must be >= 1".into()));
        }
        if self.hops < 1 {
            return Err(SnapError::Config("hops must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(SnapError::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.alpha <= 0.0 {
            return Err(SnapError::Config("alpha must be > 0".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(SnapError::Config("lr must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(SnapError::Config("batch_size must be >= 1".into()));
        }
        if self.init_std < 0.0 {
            return Err(SnapError::Config("init_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Tensor dimensions shared by parameters, gradients, and optimizer state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub num_users: usize,
    pub num_items: usize,
    /// Snapshot count.
    pub n_m: usize,
    pub d: usize,
    pub hops: usize,
}

impl Dims {
    /// Pair-embedding and memory width D = 2d.
    #[inline]
    pub fn dd(&self) -> usize {
        2 * self.d
    }

    /// Width of the attention input [three memory outputs, snapshot
    /// predictions, three scalar biases].
    #[inline]
    pub fn concat(&self) -> usize {
        self.n_m + 3 * self.dd() + 3
    }
}
