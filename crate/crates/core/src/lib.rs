//! Falsification with learned simulator fidelity.
//!
//! Two families of Beta-Bernoulli bandits are trained side by side: one over
//! scenario parameters, rewarded when the high-fidelity simulator finds a
//! failure, and one over low-fidelity simulator settings, rewarded when the
//! cheap run agrees with the expensive one within a compute budget. The
//! fidelity posterior is scenario-agnostic and can warm-start learning on
//! unseen scenarios.
//!
//! Module map:
//! - [`bandit`]: beliefs, Thompson sampling, binned continuous arms.
//! - [`fidelity`]: the fidelity-settings learner.
//! - [`scenario`]: the per-scenario parameter learner.
//! - [`orchestrator`]: meta-training, evaluation, meta-testing, baseline.
//! - [`sim`]: the simulator trait and a synthetic braking scenario family.
//! - [`metrics`]: TP-rate, cost, speedup, break-even and reports.
//! - [`posterior`]: posterior persistence.

pub mod bandit;
pub mod error;
pub mod fidelity;
pub mod metrics;
pub mod orchestrator;
pub mod posterior;
pub mod scenario;
pub mod sim;

pub use bandit::{ArmDomain, Bandit, BetaBelief, Scale, Value};
pub use error::{Error, Result};
pub use fidelity::{classify_fidelity_trial, FidelityAssignment, FidelityModel, FidelitySpace};
pub use metrics::{break_even, failure_curve, mean_lf_cost, speedup, tp_rate, CurvePoint, RunReport};
pub use orchestrator::{
    classify_outcome, run_baseline, run_evaluation, run_meta_testing, run_meta_training, Outcome, Phase,
    PhaseOutput, PhasePlan, TrialRecord,
};
pub use posterior::PosteriorDocument;
pub use scenario::{classify_scenario_trial, ScenarioConfig, ScenarioModel, ScenarioSpace, Split};
pub use sim::{ApproachScenario, ApproachSimulator, SimResult, Simulator};
