//! Scenario runner: parses JSON configs, runs every requested check and
//! writes a deterministic `report.json`, a separate `timing.json` and CSV tables.

pub mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{CheckGroup, Config, ConfigError, ScenarioConfig};
pub use pipeline::{run_scenario, CheckRecord, ScenarioOutcome, ScenarioReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub passed: bool,
    pub scenarios: Vec<ScenarioReport>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

pub struct RunOutput {
    pub report: RunReport,
    pub outcomes: Vec<ScenarioOutcome>,
}

/// Effective seed of a scenario: command line, then scenario, then config.
pub fn scenario_seed(cfg: &Config, s: &ScenarioConfig, opts: &RunOptions) -> u64 {
    opts.seed.or(s.seed).unwrap_or(cfg.seed)
}

pub fn execute(cfg: &Config, opts: &RunOptions) -> anyhow::Result<RunOutput> {
    let selected = cfg.select(opts.scenario.as_deref())?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().context("thread pool")?;
    let outcomes: Vec<ScenarioOutcome> =
        pool.install(|| selected.par_iter().map(|s| run_scenario(s, scenario_seed(cfg, s, opts))).collect());
    let scenarios: Vec<ScenarioReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let report =
        RunReport { seed: opts.seed.unwrap_or(cfg.seed), passed: scenarios.iter().all(|s| s.passed), scenarios };
    Ok(RunOutput { report, outcomes })
}

pub fn report_json(report: &RunReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn write_outputs(out: &RunOutput, dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("report.json"), report_json(&out.report))?;
    let timing: BTreeMap<&str, BTreeMap<&str, f64>> = out
        .outcomes
        .iter()
        .map(|o| (o.report.name.as_str(), o.timing.iter().map(|(k, v)| (k.as_str(), *v)).collect()))
        .collect();
    std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing)? + "\n")?;
    for o in &out.outcomes {
        for (name, text) in &o.csv {
            std::fs::write(dir.join(name), text).with_context(|| format!("writing {name}"))?;
        }
    }
    Ok(())
}
