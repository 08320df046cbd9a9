mod config;
mod output;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use falsify_core::metrics::{BASELINE, EVALUATE, META_TEST_UNIFORM, META_TEST_WARM, META_TRAIN};
use falsify_core::posterior::PosteriorDocument;
use falsify_core::sim::{default_fidelity_space, default_scenario_space, min_cost_ratio, ApproachScenario};
use falsify_core::{
    run_baseline, run_evaluation, run_meta_testing, run_meta_training, ApproachSimulator, FidelityModel,
    FidelitySpace, Phase, PhaseOutput, PhasePlan, ScenarioModel, ScenarioSpace, Split,
};

use config::RunConfig;
use output::{read_sets, records_file, stage_report, Staged};

#[derive(Parser)]
#[command(name = "falsify", version, about = "Falsification with learned scenario and fidelity distributions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    posterior_in: Option<PathBuf>,
    #[arg(long, global = true)]
    posterior_out: Option<PathBuf>,
    /// Threads per trial pair; learner updates stay sequential.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn scenario and fidelity posteriors on the training scenarios.
    MetaTrain,
    /// Evaluate a trained posterior with fidelity frozen at its mode.
    Evaluate,
    /// Learn on the held-out scenarios from a warm or uniform fidelity prior.
    MetaTest {
        #[arg(long, value_enum, default_value_t = Mode::Warm)]
        mode: Mode,
    },
    /// High-fidelity runs with uniformly sampled scenario parameters.
    Baseline,
    /// Rebuild the report from the record files in the output directory.
    Report,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Uniform,
    Warm,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

struct Setup {
    config: RunConfig,
    fidelity_space: FidelitySpace,
    scenario_space: ScenarioSpace,
    sim: ApproachSimulator,
}

fn load(cli: &Cli) -> Result<Setup> {
    let mut config = match &cli.config {
        Some(path) => {
            ensure!(path.is_file(), "config file not found: {}", path.display());
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(p) = &cli.posterior_in {
        config.posterior_in = Some(p.clone());
    }
    if let Some(p) = &cli.posterior_out {
        config.posterior_out = Some(p.clone());
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    config.validate()?;

    let fidelity_space = match &config.fidelity_space {
        Some(path) => FidelitySpace::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => default_fidelity_space(),
    };
    let scenario_space = match &config.scenario_space {
        Some(path) => ScenarioSpace::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => default_scenario_space(),
    };
    let sim = ApproachSimulator::new(fidelity_space.clone()).context("fidelity space does not fit the simulator")?;
    Ok(Setup {
        config,
        fidelity_space,
        scenario_space,
        sim,
    })
}

/// Warns when `budget` sits below the cheapest reachable cost ratio on
/// every scenario of `split`, so no fidelity trial can succeed.
fn warn_if_infeasible(ctx: &Setup, split: Split, budget: f64) {
    let mut floor = f64::INFINITY;
    for spec in ctx.scenario_space.scenarios().iter().filter(|s| s.split == split) {
        let at = |i: usize| {
            let d = &spec.params.get(i)?.domain;
            d.expected_value(d.arms() - 1)?.as_f64()
        };
        let (Some(gap), Some(speed)) = (at(0), at(1)) else { continue };
        if let Ok(s) = ApproachScenario::new(gap, speed) {
            if let Ok(r) = min_cost_ratio(&ctx.fidelity_space, &s) {
                floor = floor.min(r);
            }
        }
    }
    if budget < floor {
        eprintln!("warning: budget {budget} is below the cheapest reachable cost ratio {floor:.4}; every fidelity trial will count as a loss");
    }
}

fn plan(ctx: &Setup, phase: Phase, split: Split, iterations: usize, budget: f64) -> Result<PhasePlan> {
    let mut plan = PhasePlan::for_split(phase, &ctx.scenario_space, split, iterations, budget, ctx.config.seed)?;
    plan.workers = ctx.config.workers;
    Ok(plan)
}

fn load_posterior(ctx: &Setup, what: &str) -> Result<PosteriorDocument> {
    let Some(path) = &ctx.config.posterior_in else {
        bail!("{what} needs a posterior: pass --posterior-in or set posterior_in");
    };
    PosteriorDocument::load(path).with_context(|| format!("loading posterior {}", path.display()))
}

fn stage_records(staged: &mut Staged, dir: &Path, set: &str, out: &PhaseOutput) -> Result<()> {
    let bytes = out.to_jsonl()?;
    let back = PhaseOutput::read_jsonl(bytes.as_slice())?;
    ensure!(&back == out, "{set} records do not survive a round trip");
    staged.add(dir.join(records_file(set)), &bytes)?;
    if !out.aborts.is_empty() {
        eprintln!("warning: {} {set} trial(s) aborted by simulator errors", out.aborts.len());
    }
    Ok(())
}

fn stage_posterior(staged: &mut Staged, path: &Path, fidelity: &FidelityModel, scenarios: &ScenarioModel) -> Result<()> {
    let doc = PosteriorDocument {
        fidelity: fidelity.posterior(),
        scenarios: scenarios.posterior(),
    };
    let text = doc.to_json()?;
    ensure!(PosteriorDocument::from_json(&text)? == doc, "posterior does not survive a round trip");
    staged.add(path.to_path_buf(), text.as_bytes())
}

/// Stages the report over the directory's existing record sets with the
/// new ones laid on top, then moves everything into place.
fn finish(dir: &Path, mut staged: Staged, new_sets: Vec<(&str, &PhaseOutput)>) -> Result<()> {
    let mut sets = read_sets(dir)?;
    for (set, out) in new_sets {
        sets.insert(set.to_owned(), out.records.clone());
    }
    let report = stage_report(&mut staged, dir, &sets)?;
    for path in staged.commit()? {
        eprintln!("wrote {}", path.display());
    }
    let show = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{v:.4}"));
    eprintln!(
        "tp_rate {}  mean_lf_cost {}  speedup {}  baseline_failure_rate {}  break_even {}",
        show(report.tp_rate),
        show(report.mean_lf_cost),
        show(report.speedup),
        show(report.baseline_failure_rate),
        show(report.break_even)
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = load(&cli)?;
    let dir = ctx.config.out.clone();
    let mut staged = Staged::default();
    let c = &ctx.config;

    match cli.command {
        Command::MetaTrain => {
            warn_if_infeasible(&ctx, Split::Train, c.meta_train.budget);
            let base = if c.meta_train.baseline {
                let p = plan(&ctx, Phase::Baseline, Split::Train, c.baseline.iterations, 1.0)?;
                Some(run_baseline(&p, &ctx.scenario_space, &ctx.fidelity_space, &ctx.sim)?)
            } else {
                None
            };
            let mut fidelity = FidelityModel::new(ctx.fidelity_space.clone(), c.meta_train.budget)?;
            let mut scenarios = ScenarioModel::new(ctx.scenario_space.clone())?;
            let p = plan(&ctx, Phase::MetaTrain, Split::Train, c.meta_train.iterations, c.meta_train.budget)?;
            let train = run_meta_training(&p, &mut fidelity, &mut scenarios, &ctx.sim)?;

            stage_records(&mut staged, &dir, META_TRAIN, &train)?;
            let mut sets = vec![(META_TRAIN, &train)];
            if let Some(base) = &base {
                stage_records(&mut staged, &dir, BASELINE, base)?;
                sets.push((BASELINE, base));
            }
            let posterior = c.posterior_out.clone().unwrap_or_else(|| dir.join("posterior.json"));
            stage_posterior(&mut staged, &posterior, &fidelity, &scenarios)?;
            finish(&dir, staged, sets)
        }
        Command::Evaluate => {
            let doc = load_posterior(&ctx, "evaluate")?;
            let fidelity = FidelityModel::warm_start(ctx.fidelity_space.clone(), &doc.fidelity, c.evaluate.budget)?;
            let scenarios = ScenarioModel::from_posterior(ctx.scenario_space.clone(), &doc.scenarios)?;
            let p = plan(&ctx, Phase::Evaluate, Split::Train, c.evaluate.iterations, c.evaluate.budget)?;
            let eval = run_evaluation(&p, &fidelity, &scenarios, &ctx.sim)?;
            stage_records(&mut staged, &dir, EVALUATE, &eval)?;
            finish(&dir, staged, vec![(EVALUATE, &eval)])
        }
        Command::MetaTest { mode } => {
            warn_if_infeasible(&ctx, Split::Test, c.meta_test.budget);
            let mut fidelity = match mode {
                Mode::Warm => {
                    let doc = load_posterior(&ctx, "warm meta-testing")?;
                    FidelityModel::warm_start(ctx.fidelity_space.clone(), &doc.fidelity, c.meta_test.budget)?
                }
                Mode::Uniform => FidelityModel::new(ctx.fidelity_space.clone(), c.meta_test.budget)?,
            };
            let mut scenarios = ScenarioModel::new(ctx.scenario_space.clone())?;
            let p = plan(&ctx, Phase::MetaTest, Split::Test, c.meta_test.iterations, c.meta_test.budget)?;
            let out = run_meta_testing(&p, &mut fidelity, &mut scenarios, &ctx.sim)?;
            let set = match mode {
                Mode::Warm => META_TEST_WARM,
                Mode::Uniform => META_TEST_UNIFORM,
            };
            stage_records(&mut staged, &dir, set, &out)?;
            if let Some(path) = &c.posterior_out {
                stage_posterior(&mut staged, path, &fidelity, &scenarios)?;
            }
            finish(&dir, staged, vec![(set, &out)])
        }
        Command::Baseline => {
            let p = plan(&ctx, Phase::Baseline, Split::Train, c.baseline.iterations, 1.0)?;
            let base = run_baseline(&p, &ctx.scenario_space, &ctx.fidelity_space, &ctx.sim)?;
            stage_records(&mut staged, &dir, BASELINE, &base)?;
            finish(&dir, staged, vec![(BASELINE, &base)])
        }
        Command::Report => {
            ensure!(dir.is_dir(), "output directory not found: {}", dir.display());
            let sets: BTreeMap<_, _> = read_sets(&dir)?;
            ensure!(!sets.is_empty(), "no record files in {}", dir.display());
            finish(&dir, staged, Vec::new())
        }
    }
}
