//! Structured pass/fail records for paper-claim verifications.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
            Verdict::Inconclusive => write!(f, "INCONCLUSIVE"),
        }
    }
}

/// One verification outcome: named quantities, the tolerances they were held
/// to, and the verdict. Reproducible for a fixed configuration and seed.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check_name: String,
    pub inputs_digest: String,
    pub quantities: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub tolerances_used: BTreeMap<String, f64>,
    pub notes: String,
}

impl CheckReport {
    pub fn new(check_name: impl Into<String>, digest_source: &str) -> CheckReport {
        CheckReport {
            check_name: check_name.into(),
            inputs_digest: fnv_hex(digest_source),
            quantities: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            tolerances_used: BTreeMap::new(),
            notes: String::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        self.quantities.insert(key.to_string(), value);
        self
    }

    pub fn tol(&mut self, key: &str, value: f64) -> &mut Self {
        self.tolerances_used.insert(key.to_string(), value);
        self
    }

    pub fn note(&mut self, text: &str) {
        if !self.notes.is_empty() {
            self.notes.push_str("; ");
        }
        self.notes.push_str(text);
    }

    /// PASS/FAIL from a single boolean, preserving INCONCLUSIVE when flagged.
    pub fn conclude(&mut self, pass: bool) {
        self.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
    }
}

pub fn fnv_hex(text: &str) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}
