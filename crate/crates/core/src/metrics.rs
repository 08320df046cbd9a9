//! Evaluation metrics, failure-over-cost curves and report output.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{Outcome, Phase, TrialRecord};

pub const META_TRAIN: &str = "meta_train";
pub const EVALUATE: &str = "evaluate";
pub const BASELINE: &str = "baseline";
pub const META_TEST_WARM: &str = "meta_test_warm";
pub const META_TEST_UNIFORM: &str = "meta_test_uniform";

fn nonempty(records: &[TrialRecord], metric: &str) -> Result<()> {
    if records.is_empty() {
        Err(Error::UndefinedMetric(format!("{metric} of an empty record set")))
    } else {
        Ok(())
    }
}

/// Fraction of trials that found a confirmed failure: TP for the learned
/// system, a high-fidelity failure for baseline records.
pub fn tp_rate(records: &[TrialRecord]) -> Result<f64> {
    nonempty(records, "tp_rate")?;
    let hits = records
        .iter()
        .filter(|r| match r.phase {
            Phase::Baseline => r.hf_failure,
            _ => r.outcome == Some(Outcome::TP),
        })
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Fraction of trials whose high-fidelity run failed.
pub fn hf_failure_rate(records: &[TrialRecord]) -> Result<f64> {
    nonempty(records, "failure rate")?;
    Ok(records.iter().filter(|r| r.hf_failure).count() as f64 / records.len() as f64)
}

/// Mean of `t_LF / t_HF`.
pub fn mean_lf_cost(records: &[TrialRecord]) -> Result<f64> {
    nonempty(records, "mean_lf_cost")?;
    let mut total = 0.0;
    for r in records {
        let t_lf = r.t_lf.ok_or_else(|| {
            Error::UndefinedMetric(format!(
                "record {} of phase {:?} has no low-fidelity runtime",
                r.iteration, r.phase
            ))
        })?;
        total += t_lf / r.t_hf;
    }
    Ok(total / records.len() as f64)
}

/// Failures per unit relative cost of the learned system over the same for
/// the high-fidelity baseline, whose relative cost is 1.
pub fn speedup(eval: &[TrialRecord], baseline: &[TrialRecord]) -> Result<f64> {
    let eval_rate = tp_rate(eval)? / mean_lf_cost(eval)?;
    let base_rate = hf_failure_rate(baseline)?;
    if base_rate == 0.0 {
        return Err(Error::UndefinedMetric("baseline found no failures".into()));
    }
    Ok(eval_rate / base_rate)
}

/// Compute charged to one trial: both runs while learning, the low-fidelity
/// run at evaluation, the high-fidelity run for the baseline.
pub fn trial_cost(r: &TrialRecord) -> f64 {
    match r.phase {
        Phase::MetaTrain | Phase::MetaTest => r.t_hf + r.t_lf.unwrap_or(0.0),
        Phase::Evaluate => r.t_lf.unwrap_or(r.t_hf),
        Phase::Baseline => r.t_hf,
    }
}

/// Whether a trial counts as a found failure on the curves.
pub fn trial_found_failure(r: &TrialRecord) -> bool {
    match r.phase {
        Phase::Evaluate => r.outcome == Some(Outcome::TP),
        _ => r.hf_failure,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub cost: f64,
    pub failures: u64,
}

/// Cumulative (cost, failures) after each trial.
pub fn failure_curve(records: &[TrialRecord]) -> Vec<CurvePoint> {
    records
        .iter()
        .scan((0.0, 0u64), |(cost, failures), r| {
            *cost += trial_cost(r);
            *failures += trial_found_failure(r) as u64;
            Some(CurvePoint {
                cost: *cost,
                failures: *failures,
            })
        })
        .collect()
}

/// Step-function value of a curve at `cost`: failures of the last point at
/// or before it, zero before the first point.
pub fn failures_at(curve: &[CurvePoint], cost: f64) -> u64 {
    let idx = curve.partition_point(|p| p.cost <= cost);
    if idx == 0 {
        0
    } else {
        curve[idx - 1].failures
    }
}

/// First cumulative cost at which the framework has found at least one
/// failure and at least as many as the baseline had by that cost.
pub fn break_even(framework: &[CurvePoint], baseline: &[CurvePoint]) -> Option<f64> {
    framework
        .iter()
        .find(|p| p.failures >= 1 && p.failures >= failures_at(baseline, p.cost))
        .map(|p| p.cost)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tp_rate: Option<f64>,
    pub mean_lf_cost: Option<f64>,
    pub speedup: Option<f64>,
    pub baseline_failure_rate: Option<f64>,
    /// Meta-training against the baseline.
    pub break_even: Option<f64>,
    /// Each meta-testing run against the baseline.
    pub meta_test_break_even: BTreeMap<String, Option<f64>>,
    pub trials: BTreeMap<String, usize>,
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
}

impl RunReport {
    /// Builds the report from whichever named record sets are present.
    pub fn build(sets: &BTreeMap<String, Vec<TrialRecord>>) -> Self {
        let get = |name: &str| sets.get(name).filter(|r| !r.is_empty());
        let curves: BTreeMap<String, Vec<CurvePoint>> = sets
            .iter()
            .map(|(name, records)| (name.clone(), failure_curve(records)))
            .collect();

        let eval = get(EVALUATE);
        let baseline = get(BASELINE);
        let baseline_curve = baseline.map(|_| &curves[BASELINE]);

        let meta_test_break_even = [META_TEST_WARM, META_TEST_UNIFORM]
            .into_iter()
            .filter(|name| get(name).is_some())
            .filter_map(|name| {
                let base = baseline_curve?;
                Some((name.to_owned(), break_even(&curves[name], base)))
            })
            .collect();

        RunReport {
            tp_rate: eval.and_then(|r| tp_rate(r).ok()),
            mean_lf_cost: eval.and_then(|r| mean_lf_cost(r).ok()),
            speedup: eval.zip(baseline).and_then(|(e, b)| speedup(e, b).ok()),
            baseline_failure_rate: baseline.and_then(|r| hf_failure_rate(r).ok()),
            break_even: get(META_TRAIN)
                .zip(baseline_curve)
                .and_then(|_| break_even(&curves[META_TRAIN], baseline_curve?)),
            meta_test_break_even,
            trials: sets.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            curves,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}

#[derive(Serialize)]
struct RecordRow<'a> {
    set: &'a str,
    phase: Phase,
    iteration: usize,
    scenario_id: &'a str,
    hf_failure: bool,
    lf_failure: Option<bool>,
    outcome: Option<Outcome>,
    t_hf: f64,
    t_lf: Option<f64>,
    budget: Option<f64>,
    fidelity_success: Option<bool>,
    scenario_success: Option<bool>,
    config: String,
    assignment: String,
}

fn join_values<'a>(it: impl Iterator<Item = (&'a str, String)>) -> String {
    it.map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

/// Flat per-trial table of every set.
pub fn write_records_csv<W: Write>(sets: &BTreeMap<String, Vec<TrialRecord>>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (set, records) in sets {
        for r in records {
            w.serialize(RecordRow {
                set,
                phase: r.phase,
                iteration: r.iteration,
                scenario_id: &r.scenario_id,
                hf_failure: r.hf_failure,
                lf_failure: r.lf_failure,
                outcome: r.outcome,
                t_hf: r.t_hf,
                t_lf: r.t_lf,
                budget: r.budget,
                fidelity_success: r.fidelity_success,
                scenario_success: r.scenario_success,
                config: join_values(r.config.values.iter().map(|e| (e.name.as_str(), e.value.to_string()))),
                assignment: join_values(r.assignment.entries.iter().map(|e| (e.name.as_str(), e.value.to_string()))),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow<'a> {
    set: &'a str,
    index: usize,
    cost: f64,
    failures: u64,
}

/// Flat table of every curve point.
pub fn write_curves_csv<W: Write>(report: &RunReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (set, curve) in &report.curves {
        for (index, p) in curve.iter().enumerate() {
            w.serialize(CurveRow {
                set,
                index,
                cost: p.cost,
                failures: p.failures,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
