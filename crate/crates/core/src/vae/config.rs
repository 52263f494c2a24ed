use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    BetaVae,
    BetaTcvae,
    FactorVae,
    DipVaeI,
    SupervisedOnly,
}

impl Method {
    pub const UNSUPERVISED: [Method; 4] = [Method::BetaVae, Method::BetaTcvae, Method::FactorVae, Method::DipVaeI];

    pub fn name(self) -> &'static str {
        match self {
            Method::BetaVae => "beta-vae",
            Method::BetaTcvae => "beta-tcvae",
            Method::FactorVae => "factor-vae",
            Method::DipVaeI => "dip-vae-i",
            Method::SupervisedOnly => "supervised-only",
        }
    }

    /// Default sweep of the method's regularization strength.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            Method::BetaVae => vec![1.0, 2.0, 4.0, 6.0, 8.0, 16.0],
            Method::BetaTcvae => vec![1.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            Method::FactorVae => vec![10.0, 20.0, 30.0, 40.0, 50.0, 100.0],
            Method::DipVaeI => vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            Method::SupervisedOnly => vec![],
        }
    }

    /// Default sweep of the supervised weight in semi-supervised cohorts.
    pub fn default_sup_grid(self) -> Vec<f64> {
        match self {
            Method::SupervisedOnly => vec![1.0],
            m => m.default_grid(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::BetaVae,
            Method::BetaTcvae,
            Method::FactorVae,
            Method::DipVaeI,
            Method::SupervisedOnly,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Fully connected 256-128 encoder with a mirrored decoder, any input size.
    MlpSmall,
    /// Four strided convolutions and two dense layers; 64x64 inputs only.
    Conv64,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::MlpSmall => "mlp-small",
            Architecture::Conv64 => "conv-64",
        }
    }

    pub fn default_discriminator_width(self) -> usize {
        match self {
            Architecture::MlpSmall => 256,
            Architecture::Conv64 => 1000,
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp-small" => Ok(Architecture::MlpSmall),
            "conv-64" => Ok(Architecture::Conv64),
            _ => Err(Error::Config(format!("unknown architecture '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_od: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_d: Option<f64>,
    pub gamma_sup: f64,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub architecture: Architecture,
    pub learning_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discriminator_width: Option<usize>,
}

pub const DEFAULT_STEPS: usize = 10_000;
pub const DEFAULT_BATCH: usize = 64;
pub const DEFAULT_LATENT: usize = 10;
pub const DEFAULT_LR: f64 = 1e-4;

impl MethodConfig {
    /// A config with `strength` assigned to the method's own hyperparameter
    /// (ignored for the supervised-only baseline) and desk-scale defaults.
    pub fn new(method: Method, strength: f64, gamma_sup: f64, seed: u64) -> Self {
        let mut cfg = Self {
            method,
            beta: None,
            gamma: None,
            lambda_od: None,
            lambda_d: None,
            gamma_sup,
            seed,
            steps: DEFAULT_STEPS,
            batch_size: DEFAULT_BATCH,
            latent_dim: DEFAULT_LATENT,
            architecture: Architecture::MlpSmall,
            learning_rate: DEFAULT_LR,
            discriminator_width: None,
        };
        match method {
            Method::BetaVae | Method::BetaTcvae => cfg.beta = Some(strength),
            Method::FactorVae => {
                cfg.gamma = Some(strength);
                cfg.discriminator_width = Some(cfg.architecture.default_discriminator_width());
            }
            Method::DipVaeI => {
                cfg.lambda_od = Some(strength);
                cfg.lambda_d = Some(10.0 * strength);
            }
            Method::SupervisedOnly => cfg.gamma_sup = gamma_sup.max(1.0),
        }
        cfg
    }

    pub fn with_architecture(mut self, arch: Architecture) -> Self {
        self.architecture = arch;
        if self.method == Method::FactorVae {
            self.discriminator_width = Some(arch.default_discriminator_width());
        }
        self
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    /// The method's own regularization strength, if it has one.
    pub fn strength(&self) -> Option<f64> {
        match self.method {
            Method::BetaVae | Method::BetaTcvae => self.beta,
            Method::FactorVae => self.gamma,
            Method::DipVaeI => self.lambda_od,
            Method::SupervisedOnly => None,
        }
    }

    pub fn is_semi_supervised(&self) -> bool {
        self.gamma_sup > 0.0
    }

    pub fn has_decoder(&self) -> bool {
        self.method != Method::SupervisedOnly
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let set = [
            ("beta", self.beta.is_some()),
            ("gamma", self.gamma.is_some()),
            ("lambda_od", self.lambda_od.is_some()),
            ("lambda_d", self.lambda_d.is_some()),
        ];
        let wanted: &[&str] = match self.method {
            Method::BetaVae | Method::BetaTcvae => &["beta"],
            Method::FactorVae => &["gamma"],
            Method::DipVaeI => &["lambda_od", "lambda_d"],
            Method::SupervisedOnly => &[],
        };
        for (name, present) in set {
            if present != wanted.contains(&name) {
                return bad(format!(
                    "{} {} field '{name}'",
                    self.method,
                    if present { "does not use" } else { "requires" }
                ));
            }
        }
        if let (Some(od), Some(d)) = (self.lambda_od, self.lambda_d) {
            if (d - 10.0 * od).abs() > 1e-9 * od.abs().max(1.0) {
                return bad(format!("lambda_d must be 10 * lambda_od, got {d} vs {od}"));
            }
        }
        if self.strength().is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return bad("regularization strength must be finite and nonnegative".into());
        }
        if !(self.gamma_sup >= 0.0 && self.gamma_sup.is_finite()) {
            return bad(format!("gamma_sup must be finite and nonnegative, got {}", self.gamma_sup));
        }
        if self.method == Method::SupervisedOnly && self.gamma_sup <= 0.0 {
            return bad("supervised-only training needs gamma_sup > 0".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.latent_dim == 0 {
            return bad("latent dimension must be positive".into());
        }
        if self.method == Method::FactorVae && self.discriminator_width.unwrap_or(0) == 0 {
            return bad("factor-vae needs a positive discriminator width".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(Method::BetaVae.default_grid(), [1.0, 2.0, 4.0, 6.0, 8.0, 16.0]);
        assert_eq!(Method::BetaTcvae.default_grid(), [1.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(Method::FactorVae.default_grid(), [10.0, 20.0, 30.0, 40.0, 50.0, 100.0]);
        assert_eq!(Method::DipVaeI.default_grid(), [1.0, 2.0, 5.0, 10.0, 20.0, 50.0]);
        for m in Method::UNSUPERVISED {
            assert_eq!(m.default_sup_grid(), m.default_grid());
        }
    }

    #[test]
    fn fixed_defaults() {
        let c = MethodConfig::new(Method::BetaVae, 1.0, 0.0, 0);
        assert_eq!((c.batch_size, c.latent_dim, c.learning_rate), (64, 10, 1e-4));
        assert_eq!(c.steps, 10_000);
    }

    #[test]
    fn only_relevant_fields() {
        for m in Method::UNSUPERVISED {
            MethodConfig::new(m, 2.0, 0.0, 1).validate().unwrap();
        }
        let mut c = MethodConfig::new(Method::DipVaeI, 5.0, 0.0, 1);
        assert_eq!(c.lambda_d, Some(50.0));
        c.beta = Some(1.0);
        assert!(c.validate().is_err());
        let mut c = MethodConfig::new(Method::DipVaeI, 5.0, 0.0, 1);
        c.lambda_d = Some(5.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for m in Method::UNSUPERVISED.into_iter().chain([Method::SupervisedOnly]) {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("annealed-vae".parse::<Method>().is_err());
    }
}
