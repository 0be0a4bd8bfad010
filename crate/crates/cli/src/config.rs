//! Flat, sectioned scenario configuration: `key = value` lines plus `[set]`,
//! `[samples]` and `[checks]` blocks. Chosen over nested formats so experiment
//! diffs stay line-local.

use std::collections::BTreeMap;

use capsol::{Primitive, SetSpec};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("invalid set: {0}")]
    BadSet(String),
}

fn err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRequest {
    pub name: String,
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    pub dimension: usize,
    pub q: f64,
    pub grid_halfwidth: f64,
    pub grid_resolution: usize,
    pub grid_refined: usize,
    pub window_resolution: usize,
    pub window_refined: usize,
    pub radius: f64,
    pub seed: u64,
    pub workers: usize,
    pub output: String,
    pub capacity_tolerance: f64,
    pub capacity_max_iterations: usize,
    pub newton_tolerance: f64,
    pub set: SetSpec,
    pub set_lines: Vec<String>,
    pub samples: Vec<[f64; 3]>,
    pub sample_lines: Vec<String>,
    pub checks: Vec<CheckRequest>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            dimension: 3,
            q: 4.0,
            grid_halfwidth: 2.0,
            grid_resolution: 48,
            grid_refined: 64,
            window_resolution: 48,
            window_refined: 64,
            radius: 1.9,
            seed: 0,
            workers: 1,
            output: "out".into(),
            capacity_tolerance: 1e-5,
            capacity_max_iterations: 5000,
            newton_tolerance: 1e-6,
            set: SetSpec::empty(),
            set_lines: Vec::new(),
            samples: Vec::new(),
            sample_lines: Vec::new(),
            checks: Vec::new(),
        }
    }
}

fn parse_floats(line_no: usize, field: &str, parts: &[&str], want: usize) -> Result<Vec<f64>, ConfigError> {
    if parts.len() != want {
        return Err(err(line_no, field, format!("expected {want} numbers, got {}", parts.len())));
    }
    parts
        .iter()
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| err(line_no, field, format!("`{p}` is not a number")))
        })
        .collect()
}

pub fn parse_set_line(line_no: usize, line: &str) -> Result<Vec<Primitive>, ConfigError> {
    let mut parts = line.split_whitespace();
    let kind = parts.next().unwrap_or_default();
    let rest: Vec<&str> = parts.collect();
    match kind {
        "ball" => {
            let v = parse_floats(line_no, "ball", &rest, 4)?;
            Ok(vec![Primitive::Ball { center: [v[0], v[1], v[2]], radius: v[3] }])
        }
        "box" => {
            let v = parse_floats(line_no, "box", &rest, 6)?;
            Ok(vec![Primitive::Box { lo: [v[0], v[1], v[2]], hi: [v[3], v[4], v[5]] }])
        }
        "segment" => {
            let v = parse_floats(line_no, "segment", &rest, 7)?;
            Ok(vec![Primitive::Segment {
                a: [v[0], v[1], v[2]],
                b: [v[3], v[4], v[5]],
                thickness: v[6],
            }])
        }
        "point" => {
            let v = parse_floats(line_no, "point", &rest, 3)?;
            Ok(vec![Primitive::PointCloud { points: vec![[v[0], v[1], v[2]]] }])
        }
        "cantor" => {
            let v = parse_floats(line_no, "cantor", &rest, 2)?;
            Ok(vec![Primitive::DyadicCantor {
                generation: v[0] as u32,
                ratio: v[1],
            }])
        }
        "ballseq" => {
            // groups of four numbers: cx cy cz r
            if rest.is_empty() || rest.len() % 4 != 0 {
                return Err(err(line_no, "ballseq", "expected groups of `cx cy cz r`"));
            }
            let v = parse_floats(line_no, "ballseq", &rest, rest.len())?;
            let mut centers = Vec::new();
            let mut radii = Vec::new();
            for chunk in v.chunks(4) {
                centers.push([chunk[0], chunk[1], chunk[2]]);
                radii.push(chunk[3]);
            }
            Ok(vec![Primitive::BallSequence { centers, radii }])
        }
        other => Err(err(line_no, "set", format!("unknown primitive `{other}`"))),
    }
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::default();
    let mut section = String::new();
    let mut primitives = Vec::new();
    let mut bounding = 0.0f64;
    let mut saw_name = false;
    for (line_idx, raw) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        match section.as_str() {
            "" => {
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    err(line_no, "header", "expected `key = value`")
                })?;
                let key = key.trim();
                let value = value.trim();
                let fval = || {
                    value
                        .parse::<f64>()
                        .map_err(|_| err(line_no, key, format!("`{value}` is not a number")))
                };
                let uval = || {
                    value
                        .parse::<usize>()
                        .map_err(|_| err(line_no, key, format!("`{value}` is not an integer")))
                };
                match key {
                    "name" => {
                        cfg.name = value.to_string();
                        saw_name = true;
                    }
                    "dimension" => cfg.dimension = uval()?,
                    "q" => {
                        cfg.q = fval()?;
                        if !(cfg.q > 1.0) {
                            return Err(err(line_no, "q", "exponent q must exceed 1"));
                        }
                    }
                    "grid.halfwidth" => cfg.grid_halfwidth = fval()?,
                    "grid.resolution" => cfg.grid_resolution = uval()?,
                    "grid.refined-resolution" => cfg.grid_refined = uval()?,
                    "window.resolution" => cfg.window_resolution = uval()?,
                    "window.refined-resolution" => cfg.window_refined = uval()?,
                    "radius" => cfg.radius = fval()?,
                    "seed" => {
                        cfg.seed = value
                            .parse::<u64>()
                            .map_err(|_| err(line_no, key, format!("`{value}` is not an integer")))?
                    }
                    "workers" => cfg.workers = uval()?,
                    "output" => cfg.output = value.to_string(),
                    "capacity.tolerance" => cfg.capacity_tolerance = fval()?,
                    "capacity.max-iterations" => cfg.capacity_max_iterations = uval()?,
                    "newton.tolerance" => cfg.newton_tolerance = fval()?,
                    other => return Err(err(line_no, other, "unknown header field")),
                }
            }
            "set" => {
                let prims = parse_set_line(line_no, line)?;
                for p in &prims {
                    if !p.is_empty() {
                        bounding = bounding.max(p.circumradius([0.0; 3]));
                    }
                }
                primitives.extend(prims);
                cfg.set_lines.push(line.to_string());
            }
            "samples" => {
                let mut parts = line.split_whitespace();
                let kind = parts.next().unwrap_or_default();
                let rest: Vec<&str> = parts.collect();
                match kind {
                    "point" => {
                        let v = parse_floats(line_no, "samples.point", &rest, 3)?;
                        cfg.samples.push([v[0], v[1], v[2]]);
                    }
                    "shell" => {
                        let v = parse_floats(line_no, "samples.shell", &rest, 3)?;
                        let n = v[0] as usize;
                        cfg.samples
                            .extend(capsol::shell_samples(n, v[1], v[2], cfg.seed));
                    }
                    other => {
                        return Err(err(line_no, "samples", format!("unknown sample kind `{other}`")))
                    }
                }
                cfg.sample_lines.push(line.to_string());
            }
            "checks" => {
                let mut parts = line.split_whitespace();
                let name = parts.next().unwrap_or_default().to_string();
                let mut overrides = BTreeMap::new();
                for part in parts {
                    let (k, v) = part.split_once('=').ok_or_else(|| {
                        err(line_no, "checks", format!("override `{part}` is not key=value"))
                    })?;
                    overrides.insert(k.to_string(), v.to_string());
                }
                cfg.checks.push(CheckRequest { name, overrides });
            }
            other => return Err(err(line_no, "section", format!("unknown section `{other}`"))),
        }
    }
    if !saw_name {
        return Err(ConfigError::Missing("name".into()));
    }
    cfg.set = SetSpec::new(primitives, bounding.max(1e-6))
        .map_err(|e| ConfigError::BadSet(e.to_string()))?;
    Ok(cfg)
}

/// Canonical serialization; parsing it back reproduces the semantic fields.
pub fn serialize_config(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("name", cfg.name.clone());
    kv("dimension", cfg.dimension.to_string());
    kv("q", format!("{}", cfg.q));
    kv("grid.halfwidth", format!("{}", cfg.grid_halfwidth));
    kv("grid.resolution", cfg.grid_resolution.to_string());
    kv("grid.refined-resolution", cfg.grid_refined.to_string());
    kv("window.resolution", cfg.window_resolution.to_string());
    kv("window.refined-resolution", cfg.window_refined.to_string());
    kv("radius", format!("{}", cfg.radius));
    kv("seed", cfg.seed.to_string());
    kv("workers", cfg.workers.to_string());
    kv("output", cfg.output.clone());
    kv("capacity.tolerance", format!("{:e}", cfg.capacity_tolerance));
    kv("capacity.max-iterations", cfg.capacity_max_iterations.to_string());
    kv("newton.tolerance", format!("{:e}", cfg.newton_tolerance));
    out.push_str("\n[set]\n");
    for line in &cfg.set_lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("\n[samples]\n");
    for line in &cfg.sample_lines {
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("\n[checks]\n");
    for check in &cfg.checks {
        out.push_str(&check.name);
        for (k, v) in &check.overrides {
            out.push(' ');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        out.push('\n');
    }
    out
}

/// Digest over the canonical serialization; changes iff a semantic field does.
pub fn config_digest(cfg: &ScenarioConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_config(cfg).as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# demo scenario
name = demo
q = 4
grid.halfwidth = 2.0
grid.resolution = 24
grid.refined-resolution = 32
window.resolution = 24
window.refined-resolution = 32
radius = 1.8
seed = 0
workers = 1
output = out
capacity.tolerance = 1e-2

[set]
ball 0 0 0 1.0
ball 0.2 0 0 0.1

[samples]
point 1.5 0 0
shell 4 1.4 1.8

[checks]
similarity a=2
two_sided
";

    #[test]
    fn parse_and_roundtrip() {
        let cfg = parse_config(SAMPLE).unwrap();
        assert_eq!(cfg.name, "demo");
        assert_eq!(cfg.set.primitives.len(), 2);
        assert_eq!(cfg.samples.len(), 5);
        assert_eq!(cfg.checks.len(), 2);
        assert_eq!(cfg.checks[0].overrides["a"], "2");
        let text = serialize_config(&cfg);
        let cfg2 = parse_config(&text).unwrap();
        assert_eq!(cfg.name, cfg2.name);
        assert_eq!(cfg.q, cfg2.q);
        assert_eq!(cfg.set, cfg2.set);
        assert_eq!(cfg.samples, cfg2.samples);
        assert_eq!(cfg.checks, cfg2.checks);
        assert_eq!(config_digest(&cfg), config_digest(&cfg2));
    }

    #[test]
    fn digest_changes_with_semantic_fields() {
        let cfg = parse_config(SAMPLE).unwrap();
        let mut other = cfg.clone();
        other.q = 3.0;
        assert_ne!(config_digest(&cfg), config_digest(&other));
    }

    #[test]
    fn malformed_exponent_names_the_field() {
        let bad = SAMPLE.replace("q = 4", "q = 0");
        let errn = parse_config(&bad).unwrap_err();
        let text = errn.to_string();
        assert!(text.contains('q'), "{text}");
        assert!(text.contains("line"), "{text}");
    }

    #[test]
    fn unknown_primitive_is_rejected_with_line() {
        let bad = SAMPLE.replace("ball 0 0 0 1.0", "blob 1 2 3");
        let errn = parse_config(&bad).unwrap_err().to_string();
        assert!(errn.contains("blob") || errn.contains("unknown primitive"), "{errn}");
    }
}
