//! Bundled scenario suites: smoke, acceptance and the borderline-exponent
//! subset.

use std::path::PathBuf;

use crate::config::{parse_config, ScenarioConfig};
use crate::manifest::RunManifest;
use crate::run::{run_config, RunError};

pub struct SuiteScenario {
    pub file_name: &'static str,
    pub text: &'static str,
}

macro_rules! scenario {
    ($name:literal) => {
        SuiteScenario {
            file_name: $name,
            text: include_str!(concat!("../suites/", $name)),
        }
    };
}

pub fn suite_scenarios(name: &str) -> Result<Vec<SuiteScenario>, RunError> {
    match name {
        "smoke" => Ok(vec![scenario!("smoke.cfg")]),
        "borderline" => Ok(vec![scenario!("borderline.cfg")]),
        "acceptance" => Ok(vec![
            scenario!("acc-cert.cfg"),
            scenario!("acc-slab.cfg"),
            scenario!("acc-scaling.cfg"),
            scenario!("acc-sumint.cfg"),
            scenario!("acc-similarity.cfg"),
            scenario!("acc-subadditivity.cfg"),
            scenario!("acc-removability.cfg"),
            scenario!("acc-continuity.cfg"),
            scenario!("acc-ballseq.cfg"),
            scenario!("acc-sigma.cfg"),
            scenario!("acc-lower.cfg"),
            scenario!("acc-wiener-ball.cfg"),
            scenario!("acc-wiener-point.cfg"),
            scenario!("acc-almost-ball.cfg"),
            scenario!("acc-almost-box.cfg"),
            scenario!("acc-two-sided-ball.cfg"),
            scenario!("acc-two-sided-box.cfg"),
            scenario!("acc-two-sided-twoballs.cfg"),
            scenario!("acc-two-sided-cantor.cfg"),
        ]),
        other => Err(RunError::UnknownSuite(other.to_string())),
    }
}

/// Parse one bundled scenario by suite and file name.
pub fn suite_scenario_config(suite: &str, file: &str) -> Result<ScenarioConfig, RunError> {
    let scenarios = suite_scenarios(suite)?;
    let found = scenarios
        .iter()
        .find(|s| s.file_name == file)
        .ok_or_else(|| RunError::MissingReport(format!("{suite}/{file}")))?;
    Ok(parse_config(found.text)?)
}

pub struct SuiteOutput {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub any_fail: bool,
}

/// Run every scenario of a bundled suite and collect a suite-level manifest.
pub fn run_suite(name: &str) -> Result<SuiteOutput, RunError> {
    let scenarios = suite_scenarios(name)?;
    let mut suite_manifest = RunManifest::started(&format!("suite:{name}"), 1);
    let mut any_fail = false;
    let mut out_root = PathBuf::from("out");
    for scenario in scenarios {
        let cfg = parse_config(scenario.text)?;
        out_root = PathBuf::from(&cfg.output);
        let output = run_config(&cfg)?;
        any_fail |= output.any_fail;
        for outcome in &output.manifest.check_outcomes {
            suite_manifest.check_outcomes.push(crate::manifest::CheckOutcomeEntry {
                name: format!("{}/{}", cfg.name, outcome.name),
                verdict: outcome.verdict.clone(),
            });
        }
    }
    suite_manifest.finish();
    let manifest_path = out_root.join(format!("suite-{name}.json"));
    if let Some(parent) = manifest_path.parent() {
        std::fs::create_dir_all(parent).ok();
    }
    suite_manifest.write(&manifest_path).map_err(|source| RunError::Io {
        path: manifest_path.display().to_string(),
        source,
    })?;
    Ok(SuiteOutput { manifest: suite_manifest, manifest_path, any_fail })
}
