use falsify_core::fidelity::FidelityAssignment;
use falsify_core::scenario::ScenarioConfig;
use falsify_core::sim::{default_fidelity_space, SimError};
use falsify_core::{run_meta_training, FidelityModel, Phase, PhasePlan, ScenarioModel, ScenarioSpace, SimResult, Simulator, Split};

const SPACE: &str = r#"
[[scenario]]
id = "needle"
split = "train"
[[scenario.param]]
name = "offset"
kind = "discrete"
values = [0, 1, 2, 3, 4, 5, 6]
"#;

const NEEDLE: i64 = 4;

/// Fails exactly at one parameter value, at every fidelity.
struct Needle;

impl Simulator for Needle {
    fn execute(&self, _: &str, config: &ScenarioConfig, _: &FidelityAssignment, _: u64) -> Result<SimResult, SimError> {
        let offset = config.get("offset").and_then(|v| v.as_f64()).ok_or_else(|| SimError::Missing("offset".into()))?;
        Ok(SimResult {
            failure: offset == NEEDLE as f64,
            cost: 1.0,
            trace: None,
        })
    }
}

#[test]
fn posterior_concentrates_on_the_failing_value() {
    let space = ScenarioSpace::from_toml_str(SPACE).unwrap();
    let mut margins = Vec::new();
    for seed in 0..20 {
        let mut fid = FidelityModel::new(default_fidelity_space(), 1.0).unwrap();
        let mut scen = ScenarioModel::new(space.clone()).unwrap();
        let plan = PhasePlan::for_split(Phase::MetaTrain, &space, Split::Train, 300, 1.0, seed).unwrap();
        run_meta_training(&plan, &mut fid, &mut scen, &Needle).unwrap();
        let means: Vec<f64> = scen.bandits("needle").unwrap()[0].beliefs().iter().map(|b| b.mean()).collect();
        let best_other = means
            .iter()
            .enumerate()
            .filter(|&(i, _)| i as i64 != NEEDLE)
            .map(|(_, m)| *m)
            .fold(f64::NEG_INFINITY, f64::max);
        margins.push(means[NEEDLE as usize] - best_other);
    }
    margins.sort_by(f64::total_cmp);
    let median = (margins[9] + margins[10]) / 2.0;
    assert!(median > 0.0, "median margin {median}");
}

#[test]
fn scenarios_learn_in_isolation() {
    let text = format!("{SPACE}\n{}", SPACE.replace("needle", "other"));
    let space = ScenarioSpace::from_toml_str(&text).unwrap();
    let mut fid = FidelityModel::new(default_fidelity_space(), 1.0).unwrap();
    let mut scen = ScenarioModel::new(space.clone()).unwrap();
    let plan = PhasePlan {
        phase: Phase::MetaTrain,
        iterations: 100,
        scenario_weights: vec![("needle".into(), 1.0)],
        budget: 1.0,
        seed: 3,
        workers: 1,
    };
    run_meta_training(&plan, &mut fid, &mut scen, &Needle).unwrap();
    assert!(!scen.at_prior("needle").unwrap());
    assert!(scen.at_prior("other").unwrap());
}
