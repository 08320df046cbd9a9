use std::collections::BTreeMap;

use falsify_core::fidelity::FidelityAssignment;
use falsify_core::metrics::hf_failure_rate;
use falsify_core::posterior::PosteriorDocument;
use falsify_core::scenario::ScenarioConfig;
use falsify_core::sim::{
    default_fidelity_space, default_scenario_space, ground_truth_failure, ApproachScenario, SimError,
};
use falsify_core::{
    classify_outcome, run_baseline, run_evaluation, run_meta_testing, run_meta_training, ApproachSimulator,
    ArmDomain, FidelityModel, Phase, PhaseOutput, PhasePlan, ScenarioModel, SimResult, Simulator, Split,
};

fn sim() -> ApproachSimulator {
    ApproachSimulator::new(default_fidelity_space()).unwrap()
}

fn train(iterations: usize, budget: f64, seed: u64) -> (FidelityModel, ScenarioModel, PhaseOutput) {
    let scenarios = default_scenario_space();
    let mut fid = FidelityModel::new(default_fidelity_space(), budget).unwrap();
    let mut scen = ScenarioModel::new(scenarios.clone()).unwrap();
    let plan = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, iterations, budget, seed).unwrap();
    let out = run_meta_training(&plan, &mut fid, &mut scen, &sim()).unwrap();
    (fid, scen, out)
}

fn total_updates(fid: &FidelityModel, name: &str) -> f64 {
    fid.bandit(name)
        .unwrap()
        .beliefs()
        .iter()
        .map(|b| b.alpha() + b.beta() - 2.0)
        .sum()
}

#[test]
fn zero_iterations_change_nothing() {
    let (fid, scen, out) = train(0, 0.3, 1);
    assert!(out.records.is_empty() && out.aborts.is_empty());
    assert_eq!(fid, FidelityModel::new(default_fidelity_space(), 0.3).unwrap());
    assert_eq!(scen, ScenarioModel::new(default_scenario_space()).unwrap());
}

#[test]
fn same_seed_same_records() {
    let (fa, sa, a) = train(50, 0.3, 9);
    let (fb, sb, b) = train(50, 0.3, 9);
    assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
    assert_eq!((fa, sa), (fb, sb));
    let (_, _, c) = train(50, 0.3, 10);
    assert_ne!(a.to_jsonl().unwrap(), c.to_jsonl().unwrap());
}

#[test]
fn worker_threads_do_not_change_results() {
    let scenarios = default_scenario_space();
    let run = |workers| {
        let mut fid = FidelityModel::new(default_fidelity_space(), 0.3).unwrap();
        let mut scen = ScenarioModel::new(scenarios.clone()).unwrap();
        let mut plan = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, 40, 0.3, 4).unwrap();
        plan.workers = workers;
        run_meta_training(&plan, &mut fid, &mut scen, &sim()).unwrap().to_jsonl().unwrap()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn every_training_record_is_consistent() {
    let (fid, _, out) = train(500, 0.3, 3);
    assert_eq!(out.records.len(), 500);
    for r in &out.records {
        assert!(r.is_consistent(), "{r:?}");
        assert_eq!(r.outcome, Some(classify_outcome(r.hf_failure, r.lf_failure.unwrap())));
        assert!(r.t_hf > 0.0 && r.t_lf.unwrap() > 0.0);
    }
    for setting in fid.space().settings() {
        assert_eq!(total_updates(&fid, &setting.name), 500.0);
    }
}

#[test]
fn records_survive_a_jsonl_round_trip() {
    let (_, _, out) = train(30, 0.3, 5);
    let bytes = out.to_jsonl().unwrap();
    let back = PhaseOutput::read_jsonl(bytes.as_slice()).unwrap();
    assert_eq!(back, out);
}

/// Crashes on every third call and reports a zero cost on every seventh.
struct Flaky {
    inner: ApproachSimulator,
    calls: std::sync::atomic::AtomicUsize,
}

impl Simulator for Flaky {
    fn execute(
        &self,
        scenario_id: &str,
        config: &ScenarioConfig,
        fidelity: &FidelityAssignment,
        seed: u64,
    ) -> Result<SimResult, SimError> {
        let n = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if n % 3 == 2 {
            return Err(SimError::Crashed("injected".into()));
        }
        let mut r = self.inner.execute(scenario_id, config, fidelity, seed)?;
        if n % 7 == 6 {
            r.cost = 0.0;
        }
        Ok(r)
    }
}

#[test]
fn aborted_trials_leave_beliefs_alone() {
    let scenarios = default_scenario_space();
    let sim = Flaky {
        inner: sim(),
        calls: Default::default(),
    };
    let mut fid = FidelityModel::new(default_fidelity_space(), 0.3).unwrap();
    let mut scen = ScenarioModel::new(scenarios.clone()).unwrap();
    let plan = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, 120, 0.3, 2).unwrap();
    let out = run_meta_training(&plan, &mut fid, &mut scen, &sim).unwrap();
    assert!(!out.aborts.is_empty());
    assert!(out.aborts.iter().any(|a| a.error.contains("injected")));
    assert!(out.aborts.iter().any(|a| a.error.contains("non-positive cost")));
    assert_eq!(out.records.len() + out.aborts.len(), 120);
    assert_eq!(total_updates(&fid, "simulation_rate"), out.records.len() as f64);
    let scenario_updates: f64 = scenarios
        .ids(Split::Train)
        .iter()
        .map(|id| {
            scen.bandits(id).unwrap()[0]
                .beliefs()
                .iter()
                .map(|b| b.alpha() + b.beta() - 2.0)
                .sum::<f64>()
        })
        .sum();
    assert_eq!(scenario_updates, out.records.len() as f64);
    let lines = out.to_jsonl().unwrap();
    assert_eq!(String::from_utf8(lines).unwrap().lines().count(), 120);
}

#[test]
fn scenario_choice_follows_the_weights() {
    let scenarios = default_scenario_space();
    let weights = [0.05, 0.1, 0.15, 0.2, 0.1, 0.1, 0.2, 0.1];
    let ids = scenarios.ids(Split::Train);
    let plan = PhasePlan {
        phase: Phase::Baseline,
        iterations: 10_000,
        scenario_weights: ids.iter().cloned().zip(weights).collect(),
        budget: 1.0,
        seed: 11,
        workers: 1,
    };
    let out = run_baseline(&plan, &scenarios, &default_fidelity_space(), &sim()).unwrap();
    let mut counts = BTreeMap::new();
    for r in &out.records {
        *counts.entry(r.scenario_id.clone()).or_insert(0usize) += 1;
    }
    let chi2: f64 = ids
        .iter()
        .zip(weights)
        .map(|(id, w)| {
            let expected = w * 10_000.0;
            let observed = *counts.get(id).unwrap_or(&0) as f64;
            (observed - expected).powi(2) / expected
        })
        .sum();
    // 99th percentile of chi-squared with 7 degrees of freedom.
    assert!(chi2 < 18.475, "chi2 = {chi2}");
}

#[test]
fn bad_plans_are_rejected() {
    let scenarios = default_scenario_space();
    let mut fid = FidelityModel::new(default_fidelity_space(), 0.3).unwrap();
    let mut scen = ScenarioModel::new(scenarios.clone()).unwrap();
    let sim = sim();
    let test_plan = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Test, 5, 0.3, 0).unwrap();
    assert!(run_meta_training(&test_plan, &mut fid, &mut scen, &sim).is_err());
    let mut skewed = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, 5, 0.3, 0).unwrap();
    skewed.scenario_weights[0].1 += 0.1;
    assert!(run_meta_training(&skewed, &mut fid, &mut scen, &sim).is_err());
    let mut wrong_phase = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, 5, 0.3, 0).unwrap();
    wrong_phase.phase = Phase::MetaTest;
    assert!(run_meta_training(&wrong_phase, &mut fid, &mut scen, &sim).is_err());
    let over = PhasePlan::for_split(Phase::MetaTrain, &scenarios, Split::Train, 5, 1.5, 0).unwrap();
    assert!(run_meta_training(&over, &mut fid, &mut scen, &sim).is_err());
    assert_eq!(fid, FidelityModel::new(default_fidelity_space(), 0.3).unwrap());
}

#[test]
fn baseline_samples_uniformly_at_high_fidelity() {
    let scenarios = default_scenario_space();
    let plan = PhasePlan {
        phase: Phase::Baseline,
        iterations: 10_000,
        scenario_weights: vec![("s1".into(), 1.0)],
        budget: 1.0,
        seed: 5,
        workers: 1,
    };
    let hf = default_fidelity_space().high_fidelity();
    let out = run_baseline(&plan, &scenarios, &default_fidelity_space(), &sim()).unwrap();
    assert_eq!(out.records.len(), 10_000);
    let mut counts = [[0usize; 6]; 2];
    for r in &out.records {
        assert_eq!(r.assignment, hf);
        assert!(r.lf_failure.is_none() && r.t_lf.is_none() && r.outcome.is_none());
        for (p, choice) in r.config.values.iter().enumerate() {
            counts[p][choice.arm] += 1;
        }
    }
    for param in counts {
        for c in param {
            assert!((c as f64 / 10_000.0 - 1.0 / 6.0).abs() <= 0.02, "{c}");
        }
    }
}

/// Probability that a uniformly drawn configuration of the scenario lies in
/// the continuous-time failure region.
fn analytic_measure(spec: &falsify_core::scenario::ScenarioSpec) -> f64 {
    let speeds: Vec<f64> = match &spec.params[1].domain {
        ArmDomain::Discrete { values } => values.iter().map(|v| v.as_f64().unwrap()).collect(),
        _ => unreachable!("shipped speeds are discrete"),
    };
    let fraction = |v: f64| match &spec.params[0].domain {
        ArmDomain::Discrete { values } => {
            let hits = values
                .iter()
                .filter(|d| ground_truth_failure(&ApproachScenario::new(d.as_f64().unwrap(), v).unwrap(), 5000.0))
                .count();
            hits as f64 / values.len() as f64
        }
        ArmDomain::Continuous { lo, hi, .. } => ((v * v / 12.0).clamp(*lo, *hi) - lo) / (hi - lo),
    };
    speeds.iter().map(|&v| fraction(v)).sum::<f64>() / speeds.len() as f64
}

#[test]
fn baseline_failure_rate_matches_the_analytic_measure() {
    let scenarios = default_scenario_space();
    let plan = PhasePlan::for_split(Phase::Baseline, &scenarios, Split::Train, 10_000, 1.0, 17).unwrap();
    let out = run_baseline(&plan, &scenarios, &default_fidelity_space(), &sim()).unwrap();
    let rate = hf_failure_rate(&out.records).unwrap();
    let measure: f64 = scenarios
        .ids(Split::Train)
        .iter()
        .map(|id| analytic_measure(scenarios.get(id).unwrap()))
        .sum::<f64>()
        / 8.0;
    assert!((rate - measure).abs() <= 0.03, "rate {rate} vs measure {measure}");
    assert!((0.15..=0.2).contains(&measure), "{measure}");
}

#[test]
fn evaluation_is_frozen() {
    let (fid, scen, _) = train(200, 0.3, 8);
    let (fid_before, scen_before) = (fid.clone(), scen.clone());
    let plan = PhasePlan::for_split(Phase::Evaluate, scen.space(), Split::Train, 100, 0.3, 8).unwrap();
    let out = run_evaluation(&plan, &fid, &scen, &sim()).unwrap();
    assert_eq!((fid, scen), (fid_before.clone(), scen_before));
    assert_eq!(out.records.len(), 100);
    let map = fid_before.map();
    assert!(out.records.iter().all(|r| r.assignment == map));
    let distinct: std::collections::HashSet<String> =
        out.records.iter().map(|r| format!("{:?}", r.config.values)).collect();
    assert!(distinct.len() > 1, "scenario parameters must be sampled, not fixed");
}

#[test]
fn meta_testing_warm_starts_from_a_saved_posterior() {
    let (fid, scen, _) = train(500, 0.3, 12);
    let doc = PosteriorDocument {
        fidelity: fid.posterior(),
        scenarios: scen.posterior(),
    };
    let json = doc.to_json().unwrap();
    let back = PosteriorDocument::from_json(&json).unwrap();
    assert_eq!(back, doc);
    assert_eq!(back.to_json().unwrap(), json);
    let mut warm = FidelityModel::warm_start(default_fidelity_space(), &back.fidelity, 0.3).unwrap();
    assert_eq!(warm, fid);
    assert_eq!(warm.map(), fid.map());
    assert!(warm.bandits().iter().any(|b| b.beliefs().iter().any(|x| x.alpha() + x.beta() > 2.0)));

    let restored = ScenarioModel::from_posterior(default_scenario_space(), &back.scenarios).unwrap();
    assert_eq!(restored, scen);

    let mut fresh = ScenarioModel::new(default_scenario_space()).unwrap();
    let plan = PhasePlan::for_split(Phase::MetaTest, fresh.space(), Split::Test, 200, 0.3, 12).unwrap();
    let out = run_meta_testing(&plan, &mut warm, &mut fresh, &sim()).unwrap();
    assert_eq!(out.records.len(), 200);
    assert!(out.records.iter().all(|r| r.phase == Phase::MetaTest && r.is_consistent()));

    // Held-out scenarios have now been learned; a second meta-test must refuse.
    assert!(run_meta_testing(&plan, &mut warm, &mut fresh, &sim()).is_err());
}
