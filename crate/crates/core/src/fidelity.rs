//! Scenario-agnostic learner over low-fidelity simulator settings.
//!
//! Each fidelity setting is an independent [`Bandit`]. A trial succeeds for
//! this learner when the low- and high-fidelity verdicts agree and the
//! low-fidelity run stayed within the compute budget; every sampled arm of
//! the trial is credited with that one bit.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmDomain, Bandit, BetaBelief, Scale, Value};
use crate::error::{Error, Result};
use crate::orchestrator::Outcome;
use crate::posterior::BanditRecord;

/// Bins used for continuous domains when the config leaves `bins` out.
pub const DEFAULT_BINS: usize = 5;

/// One named value picked from a bandit, with the arm it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmChoice {
    pub name: String,
    pub value: Value,
    pub arm: usize,
}

/// A concrete fidelity vector, one entry per setting in space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FidelityAssignment {
    pub entries: Vec<ArmChoice>,
}

impl FidelityAssignment {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces the value of `name`, keeping the arm index in sync with `space`.
    pub fn with_value(mut self, space: &FidelitySpace, name: &str, value: Value) -> Result<Self> {
        let setting = space
            .setting(name)
            .ok_or_else(|| Error::Consistency(format!("no setting named `{name}`")))?;
        let arm = setting
            .domain
            .arm_of(&value)
            .ok_or_else(|| Error::Consistency(format!("`{value}` is outside `{name}`")))?;
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Consistency(format!("assignment lacks `{name}`")))?;
        entry.value = value;
        entry.arm = arm;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelitySetting {
    pub name: String,
    pub domain: ArmDomain,
    pub high_fidelity: Value,
    pub prior: BetaBelief,
}

/// The declared fidelity settings and the fixed high-fidelity reference.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelitySpace {
    settings: Vec<FidelitySetting>,
}

impl FidelitySpace {
    pub fn new(settings: Vec<FidelitySetting>) -> Result<Self> {
        let mut names = HashSet::new();
        for s in &settings {
            s.domain.validate()?;
            if !names.insert(s.name.as_str()) {
                return Err(Error::Config(format!("duplicate setting `{}`", s.name)));
            }
            if !s.domain.contains(&s.high_fidelity) {
                return Err(Error::Config(format!(
                    "high-fidelity value `{}` of `{}` is outside its domain",
                    s.high_fidelity, s.name
                )));
            }
        }
        Ok(Self { settings })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawFidelityFile = toml::from_str(text)?;
        let settings = raw
            .setting
            .into_iter()
            .map(|r| {
                let domain = build_domain(
                    &r.name, &r.kind, r.values, r.lo, r.hi, r.bins, r.scale,
                )?;
                Ok(FidelitySetting {
                    prior: build_prior(&r.name, r.prior)?,
                    name: r.name,
                    domain,
                    high_fidelity: r.high_fidelity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(settings)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn settings(&self) -> &[FidelitySetting] {
        &self.settings
    }

    pub fn setting(&self, name: &str) -> Option<&FidelitySetting> {
        self.settings.iter().find(|s| s.name == name)
    }

    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }

    /// θ_HF as an assignment.
    pub fn high_fidelity(&self) -> FidelityAssignment {
        FidelityAssignment {
            entries: self
                .settings
                .iter()
                .map(|s| ArmChoice {
                    name: s.name.clone(),
                    value: s.high_fidelity.clone(),
                    arm: s.domain.arm_of(&s.high_fidelity).expect("checked in new"),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFidelityFile {
    #[serde(default)]
    setting: Vec<RawSetting>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetting {
    name: String,
    kind: String,
    values: Option<Vec<Value>>,
    lo: Option<f64>,
    hi: Option<f64>,
    bins: Option<usize>,
    scale: Option<Scale>,
    high_fidelity: Value,
    prior: Option<[f64; 2]>,
}

/// Builds a domain from the flat config fields shared by fidelity settings
/// and scenario parameters.
pub(crate) fn build_domain(
    name: &str,
    kind: &str,
    values: Option<Vec<Value>>,
    lo: Option<f64>,
    hi: Option<f64>,
    bins: Option<usize>,
    scale: Option<Scale>,
) -> Result<ArmDomain> {
    let wrap = |e: Error| Error::Config(format!("`{name}`: {e}"));
    match kind {
        "discrete" => {
            if lo.is_some() || hi.is_some() || bins.is_some() || scale.is_some() {
                return Err(Error::Config(format!(
                    "`{name}`: discrete domains take only `values`"
                )));
            }
            let values = values
                .ok_or_else(|| Error::Config(format!("`{name}`: discrete domain needs `values`")))?;
            ArmDomain::discrete(values).map_err(wrap)
        }
        "continuous" => {
            if values.is_some() {
                return Err(Error::Config(format!(
                    "`{name}`: continuous domains take `lo`/`hi`, not `values`"
                )));
            }
            let (Some(lo), Some(hi)) = (lo, hi) else {
                return Err(Error::Config(format!(
                    "`{name}`: continuous domain needs `lo` and `hi`"
                )));
            };
            let scale = scale.unwrap_or(if lo > 0.0 && hi / lo >= 100.0 {
                Scale::LogUniform
            } else {
                Scale::Uniform
            });
            ArmDomain::continuous(lo, hi, bins.unwrap_or(DEFAULT_BINS), scale).map_err(wrap)
        }
        other => Err(Error::Config(format!(
            "`{name}`: unknown kind `{other}` (expected discrete or continuous)"
        ))),
    }
}

pub(crate) fn build_prior(name: &str, prior: Option<[f64; 2]>) -> Result<BetaBelief> {
    match prior {
        None => Ok(BetaBelief::uniform()),
        Some([s, l]) if s >= 1.0 && l >= 1.0 => BetaBelief::new(s, l),
        Some([s, l]) => Err(Error::Config(format!(
            "`{name}`: prior counts must be at least 1, got [{s}, {l}]"
        ))),
    }
}

/// Checks `0 < budget <= 1`.
pub fn validate_budget(budget: f64) -> Result<f64> {
    if budget > 0.0 && budget <= 1.0 {
        Ok(budget)
    } else {
        Err(Error::Budget(budget))
    }
}

/// Success bit for the fidelity learner: verdicts agree (TP or TN) and
/// `t_lf / t_hf <= budget`.
pub fn classify_fidelity_trial(outcome: Outcome, t_lf: f64, t_hf: f64, budget: f64) -> Result<bool> {
    if !(t_hf > 0.0 && t_hf.is_finite()) {
        return Err(Error::NonPositiveRuntime(t_hf));
    }
    let agrees = matches!(outcome, Outcome::TP | Outcome::TN);
    Ok(agrees && t_lf / t_hf <= budget)
}

/// The learned distribution over low-fidelity settings plus its budget.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityModel {
    space: FidelitySpace,
    bandits: Vec<Bandit>,
    budget: f64,
}

impl FidelityModel {
    /// Fresh model with each setting's configured prior.
    pub fn new(space: FidelitySpace, budget: f64) -> Result<Self> {
        let budget = validate_budget(budget)?;
        let bandits = space
            .settings()
            .iter()
            .map(|s| Bandit::with_prior(s.domain.clone(), s.prior))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            bandits,
            budget,
        })
    }

    /// Model initialised from a stored posterior. Names and domains must
    /// match `space` exactly, in order.
    pub fn warm_start(space: FidelitySpace, posterior: &[BanditRecord], budget: f64) -> Result<Self> {
        let budget = validate_budget(budget)?;
        if posterior.len() != space.len() {
            return Err(Error::Schema(format!(
                "posterior has {} setting(s), space has {}",
                posterior.len(),
                space.len()
            )));
        }
        let bandits = space
            .settings()
            .iter()
            .zip(posterior)
            .map(|(setting, record)| record.to_bandit(&setting.name, &setting.domain))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            space,
            bandits,
            budget,
        })
    }

    pub fn space(&self) -> &FidelitySpace {
        &self.space
    }

    pub fn bandits(&self) -> &[Bandit] {
        &self.bandits
    }

    pub fn bandit(&self, name: &str) -> Option<&Bandit> {
        let idx = self.space.settings().iter().position(|s| s.name == name)?;
        Some(&self.bandits[idx])
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn set_budget(&mut self, budget: f64) -> Result<()> {
        self.budget = validate_budget(budget)?;
        Ok(())
    }

    /// Draws θ_LF, one Thompson sample per setting.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> FidelityAssignment {
        let entries = self
            .space
            .settings()
            .iter()
            .zip(&self.bandits)
            .map(|(s, b)| {
                let (arm, value) = b.sample_value(rng);
                ArmChoice {
                    name: s.name.clone(),
                    value,
                    arm,
                }
            })
            .collect();
        FidelityAssignment { entries }
    }

    /// Credits every sampled arm of `assignment` with the same trial bit.
    /// Nothing is updated if the assignment does not fit the space.
    pub fn credit(&mut self, assignment: &FidelityAssignment, success: bool) -> Result<()> {
        self.check(assignment)?;
        for (bandit, entry) in self.bandits.iter_mut().zip(&assignment.entries) {
            bandit.update(entry.arm, success)?;
        }
        Ok(())
    }

    /// Greedy θ*_LF: per-setting posterior mode, bin mean for continuous settings.
    pub fn map(&self) -> FidelityAssignment {
        let entries = self
            .space
            .settings()
            .iter()
            .zip(&self.bandits)
            .map(|(s, b)| {
                let (arm, value) = b.map_value();
                ArmChoice {
                    name: s.name.clone(),
                    value,
                    arm,
                }
            })
            .collect();
        FidelityAssignment { entries }
    }

    pub fn posterior(&self) -> Vec<BanditRecord> {
        self.space
            .settings()
            .iter()
            .zip(&self.bandits)
            .map(|(s, b)| BanditRecord::from_bandit(&s.name, b))
            .collect()
    }

    fn check(&self, assignment: &FidelityAssignment) -> Result<()> {
        if assignment.len() != self.space.len() {
            return Err(Error::Consistency(format!(
                "assignment has {} entries, space has {} settings",
                assignment.len(),
                self.space.len()
            )));
        }
        for ((setting, bandit), entry) in self
            .space
            .settings()
            .iter()
            .zip(&self.bandits)
            .zip(&assignment.entries)
        {
            if entry.name != setting.name {
                return Err(Error::Consistency(format!(
                    "expected setting `{}`, found `{}`",
                    setting.name, entry.name
                )));
            }
            if entry.arm >= bandit.arms() {
                return Err(Error::ArmIndex {
                    index: entry.arm,
                    arms: bandit.arms(),
                });
            }
        }
        Ok(())
    }
}
