//! Beta-Bernoulli bandits over discrete or binned continuous domains.
//!
//! Every fidelity setting and every scenario parameter owns one [`Bandit`].
//! Discrete domains get one arm per value; continuous domains are cut into
//! bins (uniform or logarithmic), the bin is chosen by Thompson sampling and
//! the concrete value is drawn inside the bin.

use std::collections::HashSet;
use std::fmt;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A concrete setting or parameter value.
///
/// Untagged so that config files can write plain `true`, `4`, `0.2` or `"low"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Label(String),
}

impl Value {
    /// Numeric view of the value; `None` for booleans and labels.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(x) => write!(f, "{x}"),
            Value::Label(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "log-uniform")]
    LogUniform,
}

/// The arms of one bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmDomain {
    Discrete {
        values: Vec<Value>,
    },
    Continuous {
        lo: f64,
        hi: f64,
        bins: usize,
        scale: Scale,
    },
}

impl ArmDomain {
    pub fn discrete(values: Vec<Value>) -> Result<Self> {
        let domain = ArmDomain::Discrete { values };
        domain.validate()?;
        Ok(domain)
    }

    pub fn continuous(lo: f64, hi: f64, bins: usize, scale: Scale) -> Result<Self> {
        let domain = ArmDomain::Continuous {
            lo,
            hi,
            bins,
            scale,
        };
        domain.validate()?;
        Ok(domain)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ArmDomain::Discrete { values } => {
                if values.is_empty() {
                    return Err(Error::Domain("discrete domain has no values".into()));
                }
                let mut seen = HashSet::new();
                for v in values {
                    if let Value::Real(x) = v {
                        if !x.is_finite() {
                            return Err(Error::Domain(format!("non-finite value {x}")));
                        }
                    }
                    if !seen.insert(v.to_string()) {
                        return Err(Error::Domain(format!("duplicate value `{v}`")));
                    }
                }
                Ok(())
            }
            ArmDomain::Continuous {
                lo,
                hi,
                bins,
                scale,
            } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(Error::Domain(format!("need finite lo < hi, got [{lo}, {hi}]")));
                }
                if *bins == 0 {
                    return Err(Error::Domain("continuous domain needs at least one bin".into()));
                }
                if *scale == Scale::LogUniform && *lo <= 0.0 {
                    return Err(Error::Domain(format!("log-uniform scale needs lo > 0, got {lo}")));
                }
                Ok(())
            }
        }
    }

    pub fn arms(&self) -> usize {
        match self {
            ArmDomain::Discrete { values } => values.len(),
            ArmDomain::Continuous { bins, .. } => *bins,
        }
    }

    /// Bin edges of a continuous domain, `bins + 1` of them, with the
    /// endpoints pinned to `lo` and `hi`. Empty for discrete domains.
    pub fn edges(&self) -> Vec<f64> {
        match *self {
            ArmDomain::Discrete { .. } => Vec::new(),
            ArmDomain::Continuous {
                lo,
                hi,
                bins,
                scale,
            } => {
                let mut edges: Vec<f64> = (0..=bins)
                    .map(|i| {
                        let frac = i as f64 / bins as f64;
                        match scale {
                            Scale::Uniform => lo + i as f64 * (hi - lo) / bins as f64,
                            Scale::LogUniform => lo * (hi / lo).powf(frac),
                        }
                    })
                    .collect();
                edges[0] = lo;
                edges[bins] = hi;
                edges
            }
        }
    }

    /// Half-open bounds `[a, b)` of continuous bin `arm`.
    pub fn bin_bounds(&self, arm: usize) -> Option<(f64, f64)> {
        match self {
            ArmDomain::Discrete { .. } => None,
            ArmDomain::Continuous { bins, .. } if arm < *bins => {
                let edges = self.edges();
                Some((edges[arm], edges[arm + 1]))
            }
            ArmDomain::Continuous { .. } => None,
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        self.arm_of(value).is_some()
    }

    /// Arm that owns `value`. For continuous domains `hi` belongs to the last bin.
    pub fn arm_of(&self, value: &Value) -> Option<usize> {
        match self {
            ArmDomain::Discrete { values } => values.iter().position(|v| v == value),
            ArmDomain::Continuous { lo, hi, bins, .. } => {
                let x = value.as_f64()?;
                if !(x >= *lo && x <= *hi) {
                    return None;
                }
                let edges = self.edges();
                let arm = edges[1..bins + 1]
                    .iter()
                    .position(|&upper| x < upper)
                    .unwrap_or(bins - 1);
                Some(arm)
            }
        }
    }

    /// Representative value of an arm: the label for discrete arms, the bin's
    /// expected value for continuous ones.
    pub fn expected_value(&self, arm: usize) -> Option<Value> {
        match self {
            ArmDomain::Discrete { values } => values.get(arm).cloned(),
            ArmDomain::Continuous { scale, .. } => {
                let (a, b) = self.bin_bounds(arm)?;
                Some(Value::Real(bin_mean(a, b, *scale)))
            }
        }
    }

    /// Draws a value for `arm`: the label itself, or a point inside the bin.
    pub fn sample_in_arm<R: Rng + ?Sized>(&self, arm: usize, rng: &mut R) -> Option<Value> {
        match self {
            ArmDomain::Discrete { values } => values.get(arm).cloned(),
            ArmDomain::Continuous { scale, .. } => {
                let (a, b) = self.bin_bounds(arm)?;
                Some(Value::Real(sample_in_bin(a, b, *scale, rng)))
            }
        }
    }
}

/// Mean of the uniform or log-uniform distribution on `[a, b]`.
pub fn bin_mean(a: f64, b: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Uniform => (a + b) / 2.0,
        Scale::LogUniform => (b - a) / (b / a).ln(),
    }
}

fn sample_in_bin<R: Rng + ?Sized>(a: f64, b: f64, scale: Scale, rng: &mut R) -> f64 {
    let x = match scale {
        Scale::Uniform => rng.gen_range(a..b),
        Scale::LogUniform => rng.gen_range(a.ln()..b.ln()).exp(),
    };
    // exp/ln round-trips can land a hair outside the bin
    if x < a {
        a
    } else if x >= b {
        b.next_down()
    } else {
        x
    }
}

/// Beta posterior over one arm's success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaBelief {
    alpha: f64,
    beta: f64,
}

impl BetaBelief {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::Belief(format!(
                "alpha and beta must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub const fn uniform() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn record(&mut self, success: bool) {
        if success {
            self.alpha += 1.0;
        } else {
            self.beta += 1.0;
        }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Posterior mode `(α−1)/(α+β−2)`, scored 0.5 at the untouched uniform prior.
    pub fn map_score(&self) -> f64 {
        let denom = self.alpha + self.beta - 2.0;
        if denom <= 0.0 {
            0.5
        } else {
            (self.alpha - 1.0) / denom
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // parameters are validated positive, so construction cannot fail
        Beta::new(self.alpha, self.beta)
            .expect("validated beta parameters")
            .sample(rng)
    }
}

impl Default for BetaBelief {
    fn default() -> Self {
        Self::uniform()
    }
}

/// One independent multi-armed bandit.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandit {
    domain: ArmDomain,
    beliefs: Vec<BetaBelief>,
}

impl Bandit {
    /// Bandit with the uniform `Beta(1, 1)` prior on every arm.
    pub fn new(domain: ArmDomain) -> Result<Self> {
        Self::with_prior(domain, BetaBelief::uniform())
    }

    /// Bandit whose arms all start from `prior`. Prior counts below one are
    /// rejected since they break the posterior-mode formula.
    pub fn with_prior(domain: ArmDomain, prior: BetaBelief) -> Result<Self> {
        domain.validate()?;
        check_at_least_one(&prior)?;
        let beliefs = vec![prior; domain.arms()];
        Ok(Self { domain, beliefs })
    }

    pub fn from_beliefs(domain: ArmDomain, beliefs: Vec<BetaBelief>) -> Result<Self> {
        domain.validate()?;
        if beliefs.len() != domain.arms() {
            return Err(Error::Schema(format!(
                "{} belief(s) for a domain with {} arm(s)",
                beliefs.len(),
                domain.arms()
            )));
        }
        for b in &beliefs {
            check_at_least_one(b)?;
        }
        Ok(Self { domain, beliefs })
    }

    pub fn domain(&self) -> &ArmDomain {
        &self.domain
    }

    pub fn beliefs(&self) -> &[BetaBelief] {
        &self.beliefs
    }

    pub fn arms(&self) -> usize {
        self.beliefs.len()
    }

    pub fn update(&mut self, arm: usize, success: bool) -> Result<()> {
        let arms = self.beliefs.len();
        let belief = self
            .beliefs
            .get_mut(arm)
            .ok_or(Error::ArmIndex { index: arm, arms })?;
        belief.record(success);
        Ok(())
    }

    /// One Beta draw per arm; the largest draw wins, lowest index on exact ties.
    pub fn thompson_select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut best = 0;
        let mut best_draw = f64::NEG_INFINITY;
        for (i, belief) in self.beliefs.iter().enumerate() {
            let draw = belief.sample(rng);
            if draw > best_draw {
                best = i;
                best_draw = draw;
            }
        }
        best
    }

    /// Thompson-selects an arm and draws a concrete value from it.
    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Value) {
        let arm = self.thompson_select(rng);
        let value = self
            .domain
            .sample_in_arm(arm, rng)
            .expect("thompson_select returns an in-range arm");
        (arm, value)
    }

    /// Greedy posterior-mode arm and its representative value.
    pub fn map_value(&self) -> (usize, Value) {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (i, belief) in self.beliefs.iter().enumerate() {
            let score = belief.map_score();
            if score > best_score {
                best = i;
                best_score = score;
            }
        }
        let value = self
            .domain
            .expected_value(best)
            .expect("argmax is an in-range arm");
        (best, value)
    }

    /// True when every arm still sits at the uniform prior.
    pub fn is_uniform(&self) -> bool {
        self.beliefs.iter().all(|b| *b == BetaBelief::uniform())
    }
}

fn check_at_least_one(b: &BetaBelief) -> Result<()> {
    if b.alpha < 1.0 || b.beta < 1.0 {
        return Err(Error::Belief(format!(
            "counts must be at least 1, got ({}, {})",
            b.alpha, b.beta
        )));
    }
    Ok(())
}
