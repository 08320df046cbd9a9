//! Per-scenario learner over failure-inducing scenario parameters.
//!
//! Scenario configurations are always sampled, including at evaluation time;
//! there is deliberately no greedy extraction for them.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ArmDomain, Bandit, BetaBelief, Scale, Value};
use crate::error::{Error, Result};
use crate::fidelity::{build_domain, build_prior, ArmChoice};
use crate::orchestrator::Outcome;
use crate::posterior::{BanditRecord, ScenarioPosterior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParam {
    pub name: String,
    pub domain: ArmDomain,
    pub prior: BetaBelief,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub id: String,
    pub split: Split,
    /// Unnormalised selection weight within its split.
    pub weight: f64,
    pub params: Vec<ScenarioParam>,
}

/// One concrete instantiation φ of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario_id: String,
    pub values: Vec<ArmChoice>,
}

impl ScenarioConfig {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.iter().find(|e| e.name == name).map(|e| &e.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpace {
    scenarios: Vec<ScenarioSpec>,
}

impl ScenarioSpace {
    pub fn new(scenarios: Vec<ScenarioSpec>) -> Result<Self> {
        let mut ids = HashSet::new();
        for s in &scenarios {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate scenario id `{}`", s.id)));
            }
            if !(s.weight.is_finite() && s.weight >= 0.0) {
                return Err(Error::Config(format!("scenario `{}` has invalid weight", s.id)));
            }
            let mut names = HashSet::new();
            for p in &s.params {
                p.domain.validate()?;
                if !names.insert(p.name.as_str()) {
                    return Err(Error::Config(format!(
                        "scenario `{}` repeats parameter `{}`",
                        s.id, p.name
                    )));
                }
            }
        }
        Ok(Self { scenarios })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawScenarioFile = toml::from_str(text)?;
        let scenarios = raw
            .scenario
            .into_iter()
            .map(|s| {
                let params = s
                    .param
                    .into_iter()
                    .map(|p| {
                        let label = format!("{}.{}", s.id, p.name);
                        Ok(ScenarioParam {
                            domain: build_domain(
                                &label, &p.kind, p.values, p.lo, p.hi, p.bins, p.scale,
                            )?,
                            prior: build_prior(&label, p.prior)?,
                            name: p.name,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ScenarioSpec {
                    id: s.id,
                    split: s.split,
                    weight: s.weight.unwrap_or(1.0),
                    params,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(scenarios)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn scenarios(&self) -> &[ScenarioSpec] {
        &self.scenarios
    }

    pub fn get(&self, id: &str) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.id == id)
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.scenarios
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.clone())
            .collect()
    }

    /// Normalised selection weights over one split.
    pub fn weights(&self, split: Split) -> Result<Vec<(String, f64)>> {
        let chosen: Vec<_> = self.scenarios.iter().filter(|s| s.split == split).collect();
        let total: f64 = chosen.iter().map(|s| s.weight).sum();
        if chosen.is_empty() || total <= 0.0 {
            return Err(Error::Config(format!("no weighted scenarios in split {split:?}")));
        }
        Ok(chosen
            .into_iter()
            .map(|s| (s.id.clone(), s.weight / total))
            .collect())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioFile {
    #[serde(default)]
    scenario: Vec<RawScenario>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: String,
    split: Split,
    weight: Option<f64>,
    #[serde(default)]
    param: Vec<RawParam>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParam {
    name: String,
    kind: String,
    values: Option<Vec<Value>>,
    lo: Option<f64>,
    hi: Option<f64>,
    bins: Option<usize>,
    scale: Option<Scale>,
    prior: Option<[f64; 2]>,
}

/// Scenario-learning success: the high-fidelity run failed (TP or FN).
pub fn classify_scenario_trial(outcome: Outcome) -> bool {
    matches!(outcome, Outcome::TP | Outcome::FN)
}

/// Draws φ with every arm equally likely, as the baseline does.
pub fn uniform_config<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> ScenarioConfig {
    let values = spec
        .params
        .iter()
        .map(|p| {
            let arm = rng.gen_range(0..p.domain.arms());
            ArmChoice {
                name: p.name.clone(),
                value: p.domain.sample_in_arm(arm, rng).expect("arm in range"),
                arm,
            }
        })
        .collect();
    ScenarioConfig {
        scenario_id: spec.id.clone(),
        values,
    }
}

/// p_ψ(φ | s): one bandit family per scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioModel {
    space: ScenarioSpace,
    bandits: Vec<Vec<Bandit>>,
}

impl ScenarioModel {
    pub fn new(space: ScenarioSpace) -> Result<Self> {
        let bandits = space
            .scenarios()
            .iter()
            .map(|s| {
                s.params
                    .iter()
                    .map(|p| Bandit::with_prior(p.domain.clone(), p.prior))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { space, bandits })
    }

    /// Rebuilds the model from stored beliefs; ids, parameter names and
    /// domains must match `space` in order.
    pub fn from_posterior(space: ScenarioSpace, posterior: &[ScenarioPosterior]) -> Result<Self> {
        if posterior.len() != space.scenarios().len() {
            return Err(Error::Schema(format!(
                "posterior has {} scenario(s), space has {}",
                posterior.len(),
                space.scenarios().len()
            )));
        }
        let mut bandits = Vec::with_capacity(posterior.len());
        for (spec, stored) in space.scenarios().iter().zip(posterior) {
            if spec.id != stored.id {
                return Err(Error::Schema(format!(
                    "expected scenario `{}`, posterior has `{}`",
                    spec.id, stored.id
                )));
            }
            if spec.params.len() != stored.params.len() {
                return Err(Error::Schema(format!(
                    "scenario `{}` parameter count differs from the posterior",
                    spec.id
                )));
            }
            bandits.push(
                spec.params
                    .iter()
                    .zip(&stored.params)
                    .map(|(p, rec)| rec.to_bandit(&p.name, &p.domain))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { space, bandits })
    }

    pub fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    fn index(&self, id: &str) -> Result<usize> {
        self.space
            .scenarios()
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownScenario(id.to_owned()))
    }

    pub fn bandits(&self, id: &str) -> Result<&[Bandit]> {
        Ok(&self.bandits[self.index(id)?])
    }

    /// True when every bandit of `id` still holds its configured prior.
    pub fn at_prior(&self, id: &str) -> Result<bool> {
        let idx = self.index(id)?;
        let spec = &self.space.scenarios()[idx];
        Ok(spec
            .params
            .iter()
            .zip(&self.bandits[idx])
            .all(|(p, b)| b.beliefs().iter().all(|x| *x == p.prior)))
    }

    pub fn sample_config<R: Rng + ?Sized>(&self, id: &str, rng: &mut R) -> Result<ScenarioConfig> {
        let idx = self.index(id)?;
        let values = self.space.scenarios()[idx]
            .params
            .iter()
            .zip(&self.bandits[idx])
            .map(|(p, b)| {
                let (arm, value) = b.sample_value(rng);
                ArmChoice {
                    name: p.name.clone(),
                    value,
                    arm,
                }
            })
            .collect();
        Ok(ScenarioConfig {
            scenario_id: id.to_owned(),
            values,
        })
    }

    /// Credits the sampled arms of `config`; other scenarios are untouched.
    pub fn credit(&mut self, config: &ScenarioConfig, success: bool) -> Result<()> {
        let idx = self.index(&config.scenario_id)?;
        let spec = &self.space.scenarios()[idx];
        if config.values.len() != spec.params.len() {
            return Err(Error::Consistency(format!(
                "config for `{}` has {} value(s), scenario has {} parameter(s)",
                spec.id,
                config.values.len(),
                spec.params.len()
            )));
        }
        for ((p, b), entry) in spec.params.iter().zip(&self.bandits[idx]).zip(&config.values) {
            if p.name != entry.name {
                return Err(Error::Consistency(format!(
                    "expected parameter `{}`, found `{}`",
                    p.name, entry.name
                )));
            }
            if entry.arm >= b.arms() {
                return Err(Error::ArmIndex {
                    index: entry.arm,
                    arms: b.arms(),
                });
            }
        }
        for (b, entry) in self.bandits[idx].iter_mut().zip(&config.values) {
            b.update(entry.arm, success)?;
        }
        Ok(())
    }

    pub fn posterior(&self) -> Vec<ScenarioPosterior> {
        self.space
            .scenarios()
            .iter()
            .zip(&self.bandits)
            .map(|(s, bs)| ScenarioPosterior {
                id: s.id.clone(),
                params: s
                    .params
                    .iter()
                    .zip(bs)
                    .map(|(p, b)| BanditRecord::from_bandit(&p.name, b))
                    .collect(),
            })
            .collect()
    }
}
