//! On-disk form of learned beliefs.
//!
//! A posterior document lists, per bandit, its name, its domain and one
//! `[alpha, beta]` pair per arm. Floats are written in shortest round-trip
//! form, so save followed by load reproduces counts bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{ArmDomain, Bandit, BetaBelief};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditRecord {
    pub name: String,
    pub domain: ArmDomain,
    pub beliefs: Vec<[f64; 2]>,
}

impl BanditRecord {
    pub fn from_bandit(name: &str, bandit: &Bandit) -> Self {
        Self {
            name: name.to_owned(),
            domain: bandit.domain().clone(),
            beliefs: bandit
                .beliefs()
                .iter()
                .map(|b| [b.alpha(), b.beta()])
                .collect(),
        }
    }

    /// Rebuilds the bandit, requiring the stored name and domain to equal
    /// the expected ones.
    pub fn to_bandit(&self, name: &str, domain: &ArmDomain) -> Result<Bandit> {
        if self.name != name {
            return Err(Error::Schema(format!(
                "expected `{name}`, posterior has `{}`",
                self.name
            )));
        }
        if &self.domain != domain {
            return Err(Error::Schema(format!("domain of `{name}` differs from the posterior")));
        }
        let beliefs = self
            .beliefs
            .iter()
            .map(|&[a, b]| BetaBelief::new(a, b))
            .collect::<Result<Vec<_>>>()?;
        Bandit::from_beliefs(domain.clone(), beliefs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPosterior {
    pub id: String,
    pub params: Vec<BanditRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorDocument {
    pub fidelity: Vec<BanditRecord>,
    #[serde(default)]
    pub scenarios: Vec<ScenarioPosterior>,
}

impl PosteriorDocument {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read posterior {}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
