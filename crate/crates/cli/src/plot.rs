//! Plot-ready tab-separated tables extracted from a run's manifest, reports
//! and artifacts. Column layouts are documented in the repository README.

use std::fs;
use std::path::{Path, PathBuf};

use crate::run::RunError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

/// Emit one table next to the manifest; returns the written path.
pub fn emit_plotdata(manifest_path: &Path, what: &str) -> Result<PathBuf, RunError> {
    let run_dir = manifest_path
        .parent()
        .ok_or_else(|| RunError::MissingReport("manifest has no parent directory".into()))?;
    let plots = run_dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    // the manifest must exist and parse before any table is derived from it
    let manifest_text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let _: serde_json::Value = serde_json::from_str(&manifest_text)
        .map_err(|e| RunError::MissingReport(format!("manifest unreadable: {e}")))?;

    let out_path = plots.join(format!("{what}.tsv"));
    let mut rows: Vec<String> = Vec::new();
    match what {
        "potential-terms" => {
            rows.push("sample\tm\tterm".to_string());
            let artifacts = run_dir.join("artifacts");
            let mut names = list_artifacts(&artifacts, "potential_")?;
            names.sort();
            for name in names {
                let body = fs::read_to_string(artifacts.join(&name))
                    .map_err(io_err(&artifacts.join(&name)))?;
                let value: serde_json::Value = serde_json::from_str(&body)
                    .map_err(|e| RunError::MissingReport(format!("{name}: {e}")))?;
                if let Some(terms) = value.get("terms").and_then(|t| t.as_array()) {
                    for term in terms {
                        rows.push(format!(
                            "{}\t{}\t{}",
                            name.trim_end_matches(".json"),
                            term["m"],
                            term["contribution"]
                        ));
                    }
                }
            }
        }
        "ratio-bands" => {
            rows.push("check\tratio_lo\tratio_hi\tratio_lo_refined\tratio_hi_refined".to_string());
            let reports = read_reports(run_dir)?;
            for report in reports {
                let q = &report["quantities"];
                if q.get("ratio_lo").is_some() {
                    rows.push(format!(
                        "{}\t{}\t{}\t{}\t{}",
                        report["check_name"].as_str().unwrap_or("?"),
                        q["ratio_lo"],
                        q["ratio_hi"],
                        q.get("ratio_lo_refined").unwrap_or(&serde_json::Value::Null),
                        q.get("ratio_hi_refined").unwrap_or(&serde_json::Value::Null),
                    ));
                }
            }
        }
        "wiener-trace" => {
            rows.push("sample\tdist\tu".to_string());
            let artifacts = run_dir.join("artifacts");
            let mut names = list_artifacts(&artifacts, "wiener_")?;
            names.sort();
            for name in names {
                let body = fs::read_to_string(artifacts.join(&name))
                    .map_err(io_err(&artifacts.join(&name)))?;
                let value: serde_json::Value = serde_json::from_str(&body)
                    .map_err(|e| RunError::MissingReport(format!("{name}: {e}")))?;
                if let Some(trace) = value.get("solver_trace").and_then(|t| t.as_array()) {
                    // far-to-near ordering: the solution increases toward the set
                    let mut pairs: Vec<(f64, f64)> = trace
                        .iter()
                        .filter_map(|p| {
                            Some((p.get(0)?.as_f64()?, p.get(1)?.as_f64()?))
                        })
                        .collect();
                    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
                    for (d, u) in pairs {
                        rows.push(format!("{}\t{d}\t{u}", name.trim_end_matches(".json")));
                    }
                }
            }
        }
        other => {
            return Err(RunError::MissingReport(format!("unknown plot kind `{other}`")));
        }
    }
    fs::write(&out_path, rows.join("\n") + "\n").map_err(io_err(&out_path))?;
    Ok(out_path)
}

fn list_artifacts(dir: &Path, prefix: &str) -> Result<Vec<String>, RunError> {
    let mut names = Vec::new();
    if dir.exists() {
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.starts_with(prefix) {
                names.push(name);
            }
        }
    }
    Ok(names)
}

fn read_reports(run_dir: &Path) -> Result<Vec<serde_json::Value>, RunError> {
    let path = run_dir.join("reports.jsonl");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .map_err(|e| RunError::MissingReport(format!("bad report line: {e}")))?,
        );
    }
    Ok(out)
}
