//! Residual tanh networks and the boundary-enforcing surface ansätze.
//!
//! Derivatives with respect to the inputs are propagated analytically
//! layer by layer (value, d/dt, d/dk, d2/dk2 travel together through every
//! layer), and parameter gradients come from a hand-written reverse pass over
//! that propagation. This is exact second-order differentiation without a
//! general autodiff tape.

mod ansatz;
mod head;
mod mlp;
mod params;

pub use ansatz::{
    param_gradient, JetObjective, Objective, PriceSurfaceModel, PriceTape, SquaredNorm, ValueObjective,
    VolSurfaceModel, VolTape,
};
pub use mlp::net_forward;
pub use params::{init_params, Layout, LinearSlot, NetParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HiddenActivation {
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Softplus,
}

/// Optional per-layer normalization inside residual blocks.
///
/// `PerLayerAffine` is an elementwise `scale * z + shift` after each block
/// sub-layer: an inference-mode batch normalization whose running statistics
/// have been folded into the affine parameters. It keeps every jet pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    None,
    PerLayerAffine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub blocks: usize,
    pub width: usize,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
    pub normalization: Normalization,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            blocks: 3,
            width: 64,
            hidden_activation: HiddenActivation::Tanh,
            output_activation: OutputActivation::Softplus,
            normalization: Normalization::None,
        }
    }
}

impl NetConfig {
    pub fn new(blocks: usize, width: usize) -> Result<Self> {
        let cfg = NetConfig {
            blocks,
            width,
            ..NetConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(format!(
                "network needs blocks >= 1 and width >= 1, got {} x {}",
                self.blocks, self.width
            )));
        }
        Ok(())
    }
}

/// Overflow-safe `log(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(0.0), std::f64::consts::LN_2);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(1.0) - (1.0f64 + 1f64.exp()).ln()).abs() < 1e-15);
        assert!((sigmoid(-3.0) + sigmoid(3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(NetConfig::new(0, 64).is_err());
        assert!(NetConfig::new(3, 0).is_err());
        assert_eq!(NetConfig::new(3, 64).unwrap(), NetConfig::default());
    }
}
