//! Simulator boundary and a synthetic approach-and-brake system under test.
//!
//! An ego vehicle drives at constant speed towards a static obstacle. A
//! range sensor reports the gap once it is inside the view distance; the
//! controller brakes at `b` as soon as a measurement falls to the stopping
//! distance plus a safety margin. The run fails if the gap reaches zero.
//!
//! Four fidelity settings shape behaviour: the simulation rate (step size),
//! lidar shot noise and subsample count (measurement noise), and the camera
//! view distance (detection range). Every other setting only adds cost.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{ArmDomain, Value};
use crate::fidelity::{FidelityAssignment, FidelitySpace};
use crate::scenario::{ScenarioConfig, ScenarioSpace};

/// Braking deceleration, m/s².
pub const DECEL: f64 = 6.0;
/// Safety margin added to the stopping distance at the brake trigger, m.
pub const MARGIN: f64 = 4.5;
/// Measurement noise standard deviation with shot noise on and one subsample, m.
pub const NOISE_SIGMA: f64 = 3.0;

pub const RATE: &str = "simulation_rate";
pub const LIDAR_NOISE_OFF: &str = "lidar_disable_shot_noise";
pub const SUBSAMPLES: &str = "lidar_subsample_count";
pub const VIEW_DISTANCE: &str = "camera_view_distance";

pub const INITIAL_GAP: &str = "initial_gap";
pub const EGO_SPEED: &str = "ego_speed";

const ACTIVE: [&str; 4] = [RATE, LIDAR_NOISE_OFF, SUBSAMPLES, VIEW_DISTANCE];
const PASSIVE_WEIGHT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("missing value `{0}`")]
    Missing(String),
    #[error("invalid value for `{name}`: {detail}")]
    Invalid { name: String, detail: String },
    #[error("simulator failed: {0}")]
    Crashed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: f64,
    pub gap: f64,
    pub measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub failure: bool,
    /// Virtual cost units; always positive.
    pub cost: f64,
    pub trace: Option<Vec<TracePoint>>,
}

/// A simulator the framework can drive. Implementations must be pure in
/// their inputs, including `seed`, and report a positive cost.
pub trait Simulator: Sync {
    fn execute(
        &self,
        scenario_id: &str,
        config: &ScenarioConfig,
        fidelity: &FidelityAssignment,
        seed: u64,
    ) -> Result<SimResult, SimError>;
}

/// Initial gap (m) and ego speed (m/s) of one approach.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachScenario {
    pub initial_gap: f64,
    pub ego_speed: f64,
}

impl ApproachScenario {
    pub fn new(initial_gap: f64, ego_speed: f64) -> Result<Self, SimError> {
        for (name, x) in [(INITIAL_GAP, initial_gap), (EGO_SPEED, ego_speed)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(SimError::Invalid {
                    name: name.into(),
                    detail: format!("must be positive, got {x}"),
                });
            }
        }
        Ok(Self {
            initial_gap,
            ego_speed,
        })
    }

    pub fn from_config(config: &ScenarioConfig) -> Result<Self, SimError> {
        Self::new(number(config.get(INITIAL_GAP), INITIAL_GAP)?, number(config.get(EGO_SPEED), EGO_SPEED)?)
    }

    /// Continuous-time stopping distance `v²/(2b)`.
    pub fn stopping_distance(&self) -> f64 {
        self.ego_speed * self.ego_speed / (2.0 * DECEL)
    }

    pub fn trigger_threshold(&self) -> f64 {
        self.stopping_distance() + MARGIN
    }

    /// Simulated duration in seconds, rounded up to a half second so every
    /// even rate yields a whole number of steps.
    pub fn horizon(&self) -> f64 {
        let t = self.initial_gap / self.ego_speed + self.ego_speed / DECEL + 1.0;
        (2.0 * t).ceil() / 2.0
    }

    pub fn steps(&self, rate: f64) -> u64 {
        (self.horizon() * rate - 1e-9).ceil() as u64
    }
}

/// Noiseless continuous-time verdict: the obstacle is first seen at
/// `min(gap, view_distance)` and the run fails iff that is within the
/// stopping distance.
pub fn ground_truth_failure(scenario: &ApproachScenario, view_distance: f64) -> bool {
    scenario.initial_gap.min(view_distance) <= scenario.stopping_distance()
}

fn number(value: Option<&Value>, name: &str) -> Result<f64, SimError> {
    let value = value.ok_or_else(|| SimError::Missing(name.into()))?;
    value.as_f64().ok_or_else(|| SimError::Invalid {
        name: name.into(),
        detail: format!("expected a number, got `{value}`"),
    })
}

fn flag(value: Option<&Value>, name: &str) -> Result<bool, SimError> {
    let value = value.ok_or_else(|| SimError::Missing(name.into()))?;
    value.as_bool().ok_or_else(|| SimError::Invalid {
        name: name.into(),
        detail: format!("expected a boolean, got `{value}`"),
    })
}

/// The behaviour-relevant part of a fidelity assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSettings {
    pub rate: f64,
    pub noise: bool,
    pub subsamples: f64,
    pub view_distance: f64,
}

impl SensorSettings {
    pub fn from_assignment(fidelity: &FidelityAssignment) -> Result<Self, SimError> {
        let rate = number(fidelity.get(RATE), RATE)?;
        let subsamples = number(fidelity.get(SUBSAMPLES), SUBSAMPLES)?;
        let view_distance = number(fidelity.get(VIEW_DISTANCE), VIEW_DISTANCE)?;
        let noise = !flag(fidelity.get(LIDAR_NOISE_OFF), LIDAR_NOISE_OFF)?;
        for (name, x) in [(RATE, rate), (SUBSAMPLES, subsamples), (VIEW_DISTANCE, view_distance)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(SimError::Invalid {
                    name: name.into(),
                    detail: format!("must be positive, got {x}"),
                });
            }
        }
        Ok(Self {
            rate,
            noise,
            subsamples,
            view_distance,
        })
    }

    pub fn noise_sigma(&self) -> f64 {
        if self.noise {
            NOISE_SIGMA / self.subsamples.sqrt()
        } else {
            0.0
        }
    }
}

/// Synthetic simulator over [`ApproachScenario`]s.
#[derive(Debug, Clone)]
pub struct ApproachSimulator {
    space: FidelitySpace,
    max_view: f64,
    trace: bool,
}

impl ApproachSimulator {
    pub fn new(space: FidelitySpace) -> Result<Self, SimError> {
        for name in ACTIVE {
            if space.setting(name).is_none() {
                return Err(SimError::Missing(name.into()));
            }
        }
        let max_view = match &space.setting(VIEW_DISTANCE).expect("checked").domain {
            ArmDomain::Continuous { hi, .. } => *hi,
            ArmDomain::Discrete { values } => values
                .iter()
                .filter_map(Value::as_f64)
                .fold(f64::NAN, f64::max),
        };
        if max_view.is_nan() || max_view <= 0.0 {
            return Err(SimError::Invalid {
                name: VIEW_DISTANCE.into(),
                detail: "domain needs a positive maximum".into(),
            });
        }
        Ok(Self {
            space,
            max_view,
            trace: false,
        })
    }

    /// Records a per-step trace in every result.
    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn space(&self) -> &FidelitySpace {
        &self.space
    }

    /// Per-step cost multiplier of an assignment.
    pub fn step_cost(&self, fidelity: &FidelityAssignment) -> Result<f64, SimError> {
        let s = SensorSettings::from_assignment(fidelity)?;
        let passive_at_hf = self
            .space
            .settings()
            .iter()
            .filter(|setting| !ACTIVE.contains(&setting.name.as_str()))
            .filter(|setting| fidelity.get(&setting.name) == Some(&setting.high_fidelity))
            .count();
        Ok(1.0
            + 0.5 * s.subsamples
            + if s.noise { 0.3 } else { 0.0 }
            + 0.2 * s.view_distance / self.max_view
            + PASSIVE_WEIGHT * passive_at_hf as f64)
    }

    pub fn cost(&self, scenario: &ApproachScenario, fidelity: &FidelityAssignment) -> Result<f64, SimError> {
        let s = SensorSettings::from_assignment(fidelity)?;
        Ok(scenario.steps(s.rate) as f64 * self.step_cost(fidelity)?)
    }

    pub fn run(
        &self,
        scenario: &ApproachScenario,
        fidelity: &FidelityAssignment,
        seed: u64,
    ) -> Result<SimResult, SimError> {
        let s = SensorSettings::from_assignment(fidelity)?;
        let steps = scenario.steps(s.rate);
        let dt = 1.0 / s.rate;
        let threshold = scenario.trigger_threshold();
        let sigma = s.noise_sigma();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut gap = scenario.initial_gap;
        let mut speed = scenario.ego_speed;
        let mut braking = false;
        let mut failure = false;
        let mut trace = self.trace.then(Vec::new);

        for n in 0..steps {
            let mut measured = None;
            if !braking && gap <= s.view_distance {
                let noise = if sigma > 0.0 {
                    sigma * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                let m = gap + noise;
                braking = m <= threshold;
                measured = Some(m);
            }
            if let Some(t) = trace.as_mut() {
                t.push(TracePoint {
                    time: n as f64 * dt,
                    gap,
                    measured,
                });
            }
            if braking {
                speed = (speed - DECEL * dt).max(0.0);
            }
            gap -= speed * dt;
            if gap <= 0.0 {
                failure = true;
                break;
            }
            if speed == 0.0 {
                break;
            }
        }

        Ok(SimResult {
            failure,
            cost: steps as f64 * self.step_cost(fidelity)?,
            trace,
        })
    }

    /// Cheapest assignment reachable in the space, found per setting with
    /// the others held at their high-fidelity values. Cost is a product of
    /// step count and a sum over settings, so the per-setting minima combine
    /// into the global minimum.
    pub fn cheapest_assignment(&self, scenario: &ApproachScenario) -> Result<FidelityAssignment, SimError> {
        let hf = self.space.high_fidelity();
        let mut best = hf.clone();
        for setting in self.space.settings() {
            let candidates: Vec<Value> = match &setting.domain {
                ArmDomain::Discrete { values } => values.clone(),
                ArmDomain::Continuous { lo, hi, .. } => vec![Value::Real(*lo), Value::Real(*hi)],
            };
            let mut chosen: Option<(f64, Value)> = None;
            for candidate in candidates {
                let probe = hf
                    .clone()
                    .with_value(&self.space, &setting.name, candidate.clone())
                    .map_err(|e| SimError::Crashed(e.to_string()))?;
                let cost = self.cost(scenario, &probe)?;
                if chosen.as_ref().is_none_or(|(c, _)| cost < *c) {
                    chosen = Some((cost, candidate));
                }
            }
            let (_, value) = chosen.expect("domains are nonempty");
            best = best
                .with_value(&self.space, &setting.name, value)
                .map_err(|e| SimError::Crashed(e.to_string()))?;
        }
        Ok(best)
    }
}

impl Simulator for ApproachSimulator {
    fn execute(
        &self,
        _scenario_id: &str,
        config: &ScenarioConfig,
        fidelity: &FidelityAssignment,
        seed: u64,
    ) -> Result<SimResult, SimError> {
        self.run(&ApproachScenario::from_config(config)?, fidelity, seed)
    }
}

/// Lower bound on `t_LF / t_HF` over the space for one scenario.
pub fn min_cost_ratio(space: &FidelitySpace, scenario: &ApproachScenario) -> Result<f64, SimError> {
    let sim = ApproachSimulator::new(space.clone())?;
    let cheapest = sim.cheapest_assignment(scenario)?;
    Ok(sim.cost(scenario, &cheapest)? / sim.cost(scenario, &space.high_fidelity())?)
}

const DEFAULT_FIDELITY: &str = include_str!("../configs/fidelity_space.toml");
const DEFAULT_SCENARIOS: &str = include_str!("../configs/scenarios.toml");

/// The shipped sixteen-setting fidelity space.
pub fn default_fidelity_space() -> FidelitySpace {
    static SPACE: OnceLock<FidelitySpace> = OnceLock::new();
    SPACE
        .get_or_init(|| FidelitySpace::from_toml_str(DEFAULT_FIDELITY).expect("shipped config parses"))
        .clone()
}

/// The shipped ten-scenario family, eight for training and two held out.
pub fn default_scenario_space() -> ScenarioSpace {
    static SPACE: OnceLock<ScenarioSpace> = OnceLock::new();
    SPACE
        .get_or_init(|| ScenarioSpace::from_toml_str(DEFAULT_SCENARIOS).expect("shipped config parses"))
        .clone()
}

pub fn default_fidelity_toml() -> &'static str {
    DEFAULT_FIDELITY
}

pub fn default_scenarios_toml() -> &'static str {
    DEFAULT_SCENARIOS
}
