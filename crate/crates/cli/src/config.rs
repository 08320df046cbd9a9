//! Run configuration: one TOML document, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use falsify_core::fidelity::validate_budget;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Fidelity-space file; the shipped sixteen-setting space when absent.
    pub fidelity_space: Option<PathBuf>,
    /// Scenario-space file; the shipped ten-scenario family when absent.
    pub scenario_space: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub posterior_in: Option<PathBuf>,
    pub posterior_out: Option<PathBuf>,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub meta_train: MetaTrainSection,
    #[serde(default)]
    pub evaluate: PhaseSection<100>,
    #[serde(default)]
    pub meta_test: PhaseSection<200>,
    #[serde(default)]
    pub baseline: BaselineSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaTrainSection {
    #[serde(default = "five_hundred")]
    pub iterations: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// Also run the high-fidelity baseline before training.
    #[serde(default = "yes")]
    pub baseline: bool,
}

impl Default for MetaTrainSection {
    fn default() -> Self {
        Self {
            iterations: 500,
            budget: default_budget(),
            baseline: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection<const N: usize> {
    #[serde(default = "iterations::<N>")]
    pub iterations: usize,
    #[serde(default = "default_budget")]
    pub budget: f64,
}

impl<const N: usize> Default for PhaseSection<N> {
    fn default() -> Self {
        Self {
            iterations: N,
            budget: default_budget(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    #[serde(default = "thousand")]
    pub iterations: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { iterations: 1000 }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_budget() -> f64 {
    0.3
}
fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn five_hundred() -> usize {
    500
}
fn thousand() -> usize {
    1000
}
fn iterations<const N: usize>() -> usize {
    N
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

impl RunConfig {
    /// Parses `path` and resolves the paths inside it against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            config.fidelity_space.as_mut(),
            config.scenario_space.as_mut(),
            config.posterior_in.as_mut(),
            config.posterior_out.as_mut(),
            Some(&mut config.out),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, budget) in [
            ("meta_train", self.meta_train.budget),
            ("evaluate", self.evaluate.budget),
            ("meta_test", self.meta_test.budget),
        ] {
            validate_budget(budget).with_context(|| format!("[{name}] budget"))?;
        }
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        for path in [&self.fidelity_space, &self.scenario_space, &self.posterior_in].into_iter().flatten() {
            if !path.is_file() {
                bail!("file not found: {}", path.display());
            }
        }
        Ok(())
    }
}
