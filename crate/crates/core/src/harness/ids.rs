//! Model and label-condition identifiers. Cohort membership is encoded in
//! the id so that every report can be rebuilt from `scores.csv` alone.
//!
//! ```text
//! us.beta-vae.g0.s3                 U/S member: grid index 0, seed index 3
//! s2s.beta-vae.n100.perfect.l0.g2.u1  S2/S member: grid 2, gamma_sup index 1
//! base.n100.perfect.l0.s0           supervised-only baseline, seed index 0
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::spec::CorruptionKind;
use crate::vae::Method;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelKey {
    pub budget: usize,
    pub corruption: CorruptionKind,
    pub seed: usize,
}

impl LabelKey {
    /// The key without its label seed, naming a (budget, corruption) condition.
    pub fn condition(self) -> (usize, CorruptionKind) {
        (self.budget, self.corruption)
    }

    /// Split name for validation on the whole labeled set (U/S).
    pub fn labels_split(self) -> String {
        format!("labels.{self}")
    }

    /// Split name for the held-out part of the labeled set (S2/S, baseline).
    pub fn val_split(self) -> String {
        format!("val.{self}")
    }

    fn parse_parts(parts: &[&str]) -> Result<Self> {
        let bad = || Error::Config(format!("malformed label key '{}'", parts.join(".")));
        let [n, c, l] = parts else { return Err(bad()) };
        Ok(LabelKey {
            budget: n.strip_prefix('n').and_then(|v| v.parse().ok()).ok_or_else(bad)?,
            corruption: c.parse().map_err(|_| bad())?,
            seed: l.strip_prefix('l').and_then(|v| v.parse().ok()).ok_or_else(bad)?,
        })
    }
}

impl fmt::Display for LabelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}.{}.l{}", self.budget, self.corruption.name(), self.seed)
    }
}

impl FromStr for LabelKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LabelKey::parse_parts(&s.split('.').collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Us { method: Method, grid: usize, seed: usize },
    S2s { method: Method, key: LabelKey, grid: usize, sup: usize },
    Base { key: LabelKey, seed: usize },
}

impl ModelId {
    pub fn method(self) -> Method {
        match self {
            ModelId::Us { method, .. } | ModelId::S2s { method, .. } => method,
            ModelId::Base { .. } => Method::SupervisedOnly,
        }
    }

    pub fn label_key(self) -> Option<LabelKey> {
        match self {
            ModelId::Us { .. } => None,
            ModelId::S2s { key, .. } | ModelId::Base { key, .. } => Some(key),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelId::Us { method, grid, seed } => write!(f, "us.{method}.g{grid}.s{seed}"),
            ModelId::S2s { method, key, grid, sup } => write!(f, "s2s.{method}.{key}.g{grid}.u{sup}"),
            ModelId::Base { key, seed } => write!(f, "base.{key}.s{seed}"),
        }
    }
}

fn indexed(part: &str, prefix: char) -> Option<usize> {
    part.strip_prefix(prefix)?.parse().ok()
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed model id '{s}'"));
        let parts: Vec<&str> = s.split('.').collect();
        match parts.as_slice() {
            ["us", m, g, sd] => Ok(ModelId::Us {
                method: m.parse().map_err(|_| bad())?,
                grid: indexed(g, 'g').ok_or_else(bad)?,
                seed: indexed(sd, 's').ok_or_else(bad)?,
            }),
            ["s2s", m, n, c, l, g, u] => Ok(ModelId::S2s {
                method: m.parse().map_err(|_| bad())?,
                key: LabelKey::parse_parts(&[n, c, l])?,
                grid: indexed(g, 'g').ok_or_else(bad)?,
                sup: indexed(u, 'u').ok_or_else(bad)?,
            }),
            ["base", n, c, l, sd] => Ok(ModelId::Base {
                key: LabelKey::parse_parts(&[n, c, l])?,
                seed: indexed(sd, 's').ok_or_else(bad)?,
            }),
            _ => Err(bad()),
        }
    }
}
