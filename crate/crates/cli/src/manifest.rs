//! Run manifests: configuration digest, tool version, timestamps and one
//! outcome entry per launched check.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use capsol::Verdict;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub workers: usize,
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcomeEntry {
    pub name: String,
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub check_outcomes: Vec<CheckOutcomeEntry>,
    pub environment: Environment,
    pub aborted_in: Option<String>,
}

impl RunManifest {
    pub fn started(config_digest: &str, workers: usize) -> RunManifest {
        RunManifest {
            config_digest: config_digest.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            finished_at: None,
            check_outcomes: Vec::new(),
            environment: Environment { workers, tolerances: BTreeMap::new() },
            aborted_in: None,
        }
    }

    pub fn record(&mut self, name: &str, verdict: Verdict) {
        self.check_outcomes.push(CheckOutcomeEntry {
            name: name.to_string(),
            verdict: verdict.to_string(),
        });
    }

    pub fn abort(&mut self, check: &str) {
        self.aborted_in = Some(check.to_string());
        self.finish();
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true));
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).unwrap())
    }

    pub fn any_fail(&self) -> bool {
        self.check_outcomes.iter().any(|o| o.verdict == "FAIL")
    }
}
