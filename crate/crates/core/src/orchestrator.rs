//! The meta-learning phases.
//!
//! Every phase runs on one seed split into independent ChaCha streams for
//! scenario choice, scenario parameters, fidelity settings and simulator
//! noise. Changing how one consumer draws never shifts the others, so a warm
//! and a cold meta-test with the same seed see the same scenarios.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::distributions::WeightedIndex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{classify_fidelity_trial, validate_budget, FidelityAssignment, FidelityModel, FidelitySpace};
use crate::scenario::{classify_scenario_trial, uniform_config, ScenarioConfig, ScenarioModel, ScenarioSpace, Split};
use crate::sim::{SimError, SimResult, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

/// Four-way agreement label from the high- and low-fidelity verdicts.
pub fn classify_outcome(hf_failure: bool, lf_failure: bool) -> Outcome {
    match (hf_failure, lf_failure) {
        (true, true) => Outcome::TP,
        (false, false) => Outcome::TN,
        (false, true) => Outcome::FP,
        (true, false) => Outcome::FN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MetaTrain,
    Evaluate,
    MetaTest,
    Baseline,
}

impl Phase {
    fn stream_base(self) -> u64 {
        match self {
            Phase::MetaTrain => 0x10,
            Phase::Evaluate => 0x20,
            Phase::MetaTest => 0x30,
            Phase::Baseline => 0x40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub scenario_id: String,
    pub config: ScenarioConfig,
    /// Settings of the low-fidelity run, or θ_HF for baseline records.
    pub assignment: FidelityAssignment,
    pub hf_failure: bool,
    pub lf_failure: Option<bool>,
    pub outcome: Option<Outcome>,
    pub t_hf: f64,
    pub t_lf: Option<f64>,
    /// Budget in force, for learning phases.
    pub budget: Option<f64>,
    pub fidelity_success: Option<bool>,
    pub scenario_success: Option<bool>,
}

impl TrialRecord {
    /// Checks that the stored outcome and learner bits follow from the
    /// stored verdicts and runtimes.
    pub fn is_consistent(&self) -> bool {
        if self.t_hf.is_nan() || self.t_hf <= 0.0 {
            return false;
        }
        match (self.lf_failure, self.outcome, self.t_lf) {
            (None, None, None) => {
                self.phase == Phase::Baseline
                    && self.fidelity_success.is_none()
                    && self.scenario_success.is_none()
            }
            (Some(lf), Some(outcome), Some(t_lf)) => {
                if self.phase == Phase::Baseline
                    || outcome != classify_outcome(self.hf_failure, lf)
                    || t_lf.is_nan() || t_lf <= 0.0
                {
                    return false;
                }
                match (self.budget, self.fidelity_success, self.scenario_success) {
                    (None, None, None) => self.phase == Phase::Evaluate,
                    (Some(budget), Some(fs), Some(ss)) => {
                        matches!(self.phase, Phase::MetaTrain | Phase::MetaTest)
                            && classify_fidelity_trial(outcome, t_lf, self.t_hf, budget).ok() == Some(fs)
                            && classify_scenario_trial(outcome) == ss
                    }
                    _ => false,
                }
            }
            _ => false,
        }
    }
}

/// A trial that did not complete; no learner saw it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub scenario_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RecordLine {
    Trial(TrialRecord),
    Abort(AbortRecord),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseOutput {
    pub records: Vec<TrialRecord>,
    pub aborts: Vec<AbortRecord>,
}

impl PhaseOutput {
    /// Records and aborts merged back into iteration order.
    pub fn lines(&self) -> Vec<RecordLine> {
        let mut lines: Vec<(usize, RecordLine)> = self
            .records
            .iter()
            .map(|r| (r.iteration, RecordLine::Trial(r.clone())))
            .chain(
                self.aborts
                    .iter()
                    .map(|a| (a.iteration, RecordLine::Abort(a.clone()))),
            )
            .collect();
        lines.sort_by_key(|(i, _)| *i);
        lines.into_iter().map(|(_, l)| l).collect()
    }

    /// One JSON object per line, in iteration order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for line in self.lines() {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        Ok(buf)
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut out = PhaseOutput::default();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line)? {
                RecordLine::Trial(r) => out.records.push(r),
                RecordLine::Abort(a) => out.aborts.push(a),
            }
        }
        Ok(out)
    }
}

/// What one phase runs: how long, over which scenarios, under which budget
/// and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub phase: Phase,
    pub iterations: usize,
    /// p(s) as (scenario id, probability).
    pub scenario_weights: Vec<(String, f64)>,
    pub budget: f64,
    pub seed: u64,
    /// Run the two simulations of a trial on separate threads when above one.
    pub workers: usize,
}

impl PhasePlan {
    /// Plan with p(s) taken from the scenario weights of one split.
    pub fn for_split(
        phase: Phase,
        space: &ScenarioSpace,
        split: Split,
        iterations: usize,
        budget: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            phase,
            iterations,
            scenario_weights: space.weights(split)?,
            budget,
            seed,
            workers: 1,
        })
    }

    pub fn validate(&self, expected: Phase) -> Result<()> {
        if self.phase != expected {
            return Err(Error::Plan(format!(
                "plan is for {:?}, expected {:?}",
                self.phase, expected
            )));
        }
        validate_budget(self.budget)?;
        if self.scenario_weights.is_empty() {
            return Err(Error::Plan("no scenarios to draw from".into()));
        }
        let mut seen = HashSet::new();
        for (id, w) in &self.scenario_weights {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(Error::Plan(format!("weight of `{id}` is {w}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Plan(format!("scenario `{id}` listed twice")));
            }
        }
        let total: f64 = self.scenario_weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Plan(format!("scenario weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn check_split(&self, space: &ScenarioSpace, split: Split) -> Result<()> {
        for (id, _) in &self.scenario_weights {
            let spec = space
                .get(id)
                .ok_or_else(|| Error::UnknownScenario(id.clone()))?;
            if spec.split != split {
                return Err(Error::Plan(format!(
                    "scenario `{id}` is in split {:?}, phase {:?} needs {split:?}",
                    spec.split, self.phase
                )));
            }
        }
        Ok(())
    }

    fn check_known(&self, space: &ScenarioSpace) -> Result<()> {
        for (id, _) in &self.scenario_weights {
            space
                .get(id)
                .ok_or_else(|| Error::UnknownScenario(id.clone()))?;
        }
        Ok(())
    }

    fn chooser(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.scenario_weights.iter().map(|(_, w)| *w))
            .map_err(|e| Error::Plan(format!("scenario weights: {e}")))
    }
}

/// Named random sub-streams of one phase.
pub struct Streams {
    pub scenario: ChaCha8Rng,
    pub params: ChaCha8Rng,
    pub fidelity: ChaCha8Rng,
    pub noise: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64, phase: Phase) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(phase.stream_base() + k);
            rng
        };
        Self {
            scenario: stream(0),
            params: stream(1),
            fidelity: stream(2),
            noise: stream(3),
        }
    }
}

fn checked(result: Result<SimResult, SimError>) -> Result<SimResult, SimError> {
    let r = result?;
    if r.cost > 0.0 && r.cost.is_finite() {
        Ok(r)
    } else {
        Err(SimError::Crashed(format!("non-positive cost {}", r.cost)))
    }
}

struct Pair {
    hf: SimResult,
    lf: SimResult,
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    sim: &dyn Simulator,
    scenario_id: &str,
    config: &ScenarioConfig,
    hf: &FidelityAssignment,
    lf: &FidelityAssignment,
    hf_seed: u64,
    lf_seed: u64,
    workers: usize,
) -> Result<Pair, SimError> {
    let (hf_result, lf_result) = if workers > 1 {
        std::thread::scope(|scope| {
            let lf_job = scope.spawn(|| sim.execute(scenario_id, config, lf, lf_seed));
            let hf_result = sim.execute(scenario_id, config, hf, hf_seed);
            let lf_result = lf_job
                .join()
                .unwrap_or_else(|_| Err(SimError::Crashed("worker panicked".into())));
            (hf_result, lf_result)
        })
    } else {
        (
            sim.execute(scenario_id, config, hf, hf_seed),
            sim.execute(scenario_id, config, lf, lf_seed),
        )
    };
    Ok(Pair {
        hf: checked(hf_result)?,
        lf: checked(lf_result)?,
    })
}

fn learning_loop(
    plan: &PhasePlan,
    fidelity: &mut FidelityModel,
    scenarios: &mut ScenarioModel,
    sim: &dyn Simulator,
) -> Result<PhaseOutput> {
    fidelity.set_budget(plan.budget)?;
    let chooser = plan.chooser()?;
    let hf = fidelity.space().high_fidelity();
    let mut streams = Streams::new(plan.seed, plan.phase);
    let mut out = PhaseOutput::default();

    for iteration in 0..plan.iterations {
        let scenario_id = &plan.scenario_weights[streams.scenario.sample(&chooser)].0;
        let config = scenarios.sample_config(scenario_id, &mut streams.params)?;
        let assignment = fidelity.sample(&mut streams.fidelity);
        let hf_seed = streams.noise.next_u64();
        let lf_seed = streams.noise.next_u64();

        let pair = match run_pair(sim, scenario_id, &config, &hf, &assignment, hf_seed, lf_seed, plan.workers) {
            Ok(p) => p,
            Err(e) => {
                out.aborts.push(AbortRecord {
                    phase: plan.phase,
                    iteration,
                    scenario_id: scenario_id.clone(),
                    error: e.to_string(),
                });
                continue;
            }
        };

        let outcome = classify_outcome(pair.hf.failure, pair.lf.failure);
        let fidelity_success = classify_fidelity_trial(outcome, pair.lf.cost, pair.hf.cost, plan.budget)?;
        let scenario_success = classify_scenario_trial(outcome);
        fidelity.credit(&assignment, fidelity_success)?;
        scenarios.credit(&config, scenario_success)?;

        out.records.push(TrialRecord {
            phase: plan.phase,
            iteration,
            scenario_id: scenario_id.clone(),
            config,
            assignment,
            hf_failure: pair.hf.failure,
            lf_failure: Some(pair.lf.failure),
            outcome: Some(outcome),
            t_hf: pair.hf.cost,
            t_lf: Some(pair.lf.cost),
            budget: Some(plan.budget),
            fidelity_success: Some(fidelity_success),
            scenario_success: Some(scenario_success),
        });
    }
    Ok(out)
}

/// Meta-training: learn p_ψ(φ|s) on training scenarios and p_ω(θ_LF) across them.
pub fn run_meta_training(
    plan: &PhasePlan,
    fidelity: &mut FidelityModel,
    scenarios: &mut ScenarioModel,
    sim: &dyn Simulator,
) -> Result<PhaseOutput> {
    plan.validate(Phase::MetaTrain)?;
    plan.check_split(scenarios.space(), Split::Train)?;
    learning_loop(plan, fidelity, scenarios, sim)
}

/// Meta-testing: the same loop on held-out scenarios, whose bandits must
/// still be at their prior. The fidelity model may be warm or fresh.
pub fn run_meta_testing(
    plan: &PhasePlan,
    fidelity: &mut FidelityModel,
    scenarios: &mut ScenarioModel,
    sim: &dyn Simulator,
) -> Result<PhaseOutput> {
    plan.validate(Phase::MetaTest)?;
    plan.check_split(scenarios.space(), Split::Test)?;
    for (id, _) in &plan.scenario_weights {
        if !scenarios.at_prior(id)? {
            return Err(Error::Plan(format!(
                "scenario `{id}` has already been learned; meta-testing needs a fresh prior"
            )));
        }
    }
    learning_loop(plan, fidelity, scenarios, sim)
}

/// Evaluation: θ_LF frozen at the posterior mode, φ still sampled, nothing
/// learned.
pub fn run_evaluation(
    plan: &PhasePlan,
    fidelity: &FidelityModel,
    scenarios: &ScenarioModel,
    sim: &dyn Simulator,
) -> Result<PhaseOutput> {
    plan.validate(Phase::Evaluate)?;
    plan.check_known(scenarios.space())?;
    let chooser = plan.chooser()?;
    let hf = fidelity.space().high_fidelity();
    let lf = fidelity.map();
    let mut streams = Streams::new(plan.seed, plan.phase);
    let mut out = PhaseOutput::default();

    for iteration in 0..plan.iterations {
        let scenario_id = &plan.scenario_weights[streams.scenario.sample(&chooser)].0;
        let config = scenarios.sample_config(scenario_id, &mut streams.params)?;
        let hf_seed = streams.noise.next_u64();
        let lf_seed = streams.noise.next_u64();
        match run_pair(sim, scenario_id, &config, &hf, &lf, hf_seed, lf_seed, plan.workers) {
            Ok(pair) => out.records.push(TrialRecord {
                phase: Phase::Evaluate,
                iteration,
                scenario_id: scenario_id.clone(),
                config,
                assignment: lf.clone(),
                hf_failure: pair.hf.failure,
                lf_failure: Some(pair.lf.failure),
                outcome: Some(classify_outcome(pair.hf.failure, pair.lf.failure)),
                t_hf: pair.hf.cost,
                t_lf: Some(pair.lf.cost),
                budget: None,
                fidelity_success: None,
                scenario_success: None,
            }),
            Err(e) => out.aborts.push(AbortRecord {
                phase: Phase::Evaluate,
                iteration,
                scenario_id: scenario_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Baseline: φ uniform over every parameter, high fidelity only.
pub fn run_baseline(
    plan: &PhasePlan,
    scenarios: &ScenarioSpace,
    fidelity_space: &FidelitySpace,
    sim: &dyn Simulator,
) -> Result<PhaseOutput> {
    plan.validate(Phase::Baseline)?;
    plan.check_known(scenarios)?;
    let chooser = plan.chooser()?;
    let hf = fidelity_space.high_fidelity();
    let mut streams = Streams::new(plan.seed, plan.phase);
    let mut out = PhaseOutput::default();

    for iteration in 0..plan.iterations {
        let scenario_id = &plan.scenario_weights[streams.scenario.sample(&chooser)].0;
        let spec = scenarios.get(scenario_id).expect("checked above");
        let config = uniform_config(spec, &mut streams.params);
        let seed = streams.noise.next_u64();
        match checked(sim.execute(scenario_id, &config, &hf, seed)) {
            Ok(r) => out.records.push(TrialRecord {
                phase: Phase::Baseline,
                iteration,
                scenario_id: scenario_id.clone(),
                config,
                assignment: hf.clone(),
                hf_failure: r.failure,
                lf_failure: None,
                outcome: None,
                t_hf: r.cost,
                t_lf: None,
                budget: None,
                fidelity_success: None,
                scenario_success: None,
            }),
            Err(e) => out.aborts.push(AbortRecord {
                phase: Phase::Baseline,
                iteration,
                scenario_id: scenario_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_enumeration() {
        assert_eq!(classify_outcome(true, true), Outcome::TP);
        assert_eq!(classify_outcome(false, false), Outcome::TN);
        assert_eq!(classify_outcome(false, true), Outcome::FP);
        assert_eq!(classify_outcome(true, false), Outcome::FN);
    }

    #[test]
    fn plan_validation() {
        let mut plan = PhasePlan {
            phase: Phase::MetaTrain,
            iterations: 3,
            scenario_weights: vec![("a".into(), 0.5), ("b".into(), 0.5)],
            budget: 0.3,
            seed: 1,
            workers: 1,
        };
        assert!(plan.validate(Phase::MetaTrain).is_ok());
        assert!(plan.validate(Phase::Evaluate).is_err());
        plan.scenario_weights[1].1 = 0.6;
        assert!(plan.validate(Phase::MetaTrain).is_err());
        plan.scenario_weights[1].1 = 0.5;
        plan.budget = 0.0;
        assert!(plan.validate(Phase::MetaTrain).is_err());
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let mut a = Streams::new(5, Phase::MetaTest);
        let mut b = Streams::new(5, Phase::MetaTest);
        for _ in 0..10 {
            b.fidelity.next_u64();
        }
        assert_eq!(a.scenario.next_u64(), b.scenario.next_u64());
        assert_eq!(a.noise.next_u64(), b.noise.next_u64());
        assert_ne!(a.scenario.next_u64(), a.params.next_u64());
    }
}
