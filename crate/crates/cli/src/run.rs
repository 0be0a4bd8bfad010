//! Scenario execution: builds the verification context from a parsed
//! configuration, dispatches the requested checks, and persists reports,
//! artifacts and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use capsol::{
    boundary_samples, capacity_scaling_check, dyadic, CapacityConfig, CheckReport, Exponents,
    Formulation, GridContext, Primitive, SetSpec, SolverConfig, Verdict, VerifyCtx,
};
use thiserror::Error;

use crate::config::{CheckRequest, ScenarioConfig};
use crate::manifest::RunManifest;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("check `{check}` failed to build: {message}")]
    CheckSetup { check: String, message: String },
    #[error("scenario aborted in `{check}`: {message}; partial manifest flushed")]
    ScenarioAborted { check: String, message: String },
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error("missing report or artifact: {0}")]
    MissingReport(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub any_fail: bool,
    pub reports: Vec<CheckReport>,
}

fn build_ctx(cfg: &ScenarioConfig) -> Result<VerifyCtx, RunError> {
    let exp = Exponents::new(cfg.dimension, cfg.q).map_err(|e| RunError::CheckSetup {
        check: "context".into(),
        message: e.to_string(),
    })?;
    let mk = |res: usize| {
        GridContext::cube(cfg.grid_halfwidth, res).map_err(|e| RunError::CheckSetup {
            check: "context".into(),
            message: e.to_string(),
        })
    };
    let base = mk(cfg.grid_resolution)?;
    let refined = mk(cfg.grid_refined)?;
    let window = capsol::window_grid(cfg.window_resolution);
    let refined_window = capsol::window_grid(cfg.window_refined);
    let cap_cfg = CapacityConfig {
        max_iterations: cfg.capacity_max_iterations,
        tolerance: cfg.capacity_tolerance,
        formulation: Formulation::KernelProgram,
    };
    let solver_cfg = SolverConfig {
        newton_tol: cfg.newton_tolerance,
        ..SolverConfig::default()
    };
    Ok(VerifyCtx::new(
        exp,
        base,
        refined,
        window,
        refined_window,
        cfg.radius,
        cap_cfg,
        solver_cfg,
    ))
}

fn get_f64(req: &CheckRequest, key: &str, default: f64) -> f64 {
    req.overrides
        .get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn get_usize(req: &CheckRequest, key: &str, default: usize) -> usize {
    req.overrides
        .get(key)
        .and_then(|v| v.parse().ok())
        .unwrap_or(default)
}

fn get_point(req: &CheckRequest, key: &str) -> Option<[f64; 3]> {
    let raw = req.overrides.get(key)?;
    let parts: Vec<f64> = raw.split(',').filter_map(|p| p.parse().ok()).collect();
    if parts.len() == 3 {
        Some([parts[0], parts[1], parts[2]])
    } else {
        None
    }
}

/// First ball primitive of the set, the anchor for derived families.
fn first_ball(spec: &SetSpec) -> Option<([f64; 3], f64)> {
    spec.primitives.iter().find_map(|p| match p {
        Primitive::Ball { center, radius } => Some((*center, *radius)),
        _ => None,
    })
}

struct CheckOutcome {
    report: CheckReport,
    artifacts: Vec<(String, String)>,
}

fn dispatch(
    ctx: &VerifyCtx,
    cfg: &ScenarioConfig,
    req: &CheckRequest,
) -> Result<CheckOutcome, RunError> {
    let spec = &cfg.set;
    let samples = &cfg.samples;
    let fail = |message: String| RunError::CheckSetup {
        check: req.name.clone(),
        message,
    };
    let mut artifacts: Vec<(String, String)> = Vec::new();
    let report = match req.name.as_str() {
        "two_sided" => {
            // persist the per-sample potential breakdown alongside the check
            for (i, &x) in samples.iter().take(4).enumerate() {
                if let Ok(pot) = capsol::potential(
                    spec,
                    x,
                    capsol::PieceVariant::Annulus,
                    &ctx.exp,
                    &ctx.engine,
                    &ctx.window,
                    &ctx.cap_cfg,
                ) {
                    artifacts.push((
                        format!("potential_{i}.json"),
                        serde_json::to_string_pretty(&pot).unwrap(),
                    ));
                }
            }
            capsol::two_sided_report(ctx, spec, samples).map_err(|e| fail(e.to_string()))?
        }
        "similarity" => {
            let a = get_f64(req, "a", 2.0);
            capsol::similarity_check(ctx, spec, a, samples).map_err(|e| fail(e.to_string()))?
        }
        "subadditivity" => {
            // every primitive of the set is one part of the union
            let parts: Vec<SetSpec> = spec
                .primitives
                .iter()
                .map(|p| SetSpec::new(vec![p.clone()], spec.bounding_radius))
                .collect::<Result<_, _>>()
                .map_err(|e| fail(e.to_string()))?;
            capsol::subadditivity_check(ctx, &parts, samples).map_err(|e| fail(e.to_string()))?
        }
        "removability" => {
            let levels = get_usize(req, "levels", 4);
            let (center, radius) =
                first_ball(spec).ok_or_else(|| fail("needs a ball primitive".into()))?;
            let shrinking: Vec<SetSpec> = (1..=levels)
                .map(|j| SetSpec::ball(center, radius * (2.0f64).powi(-(j as i32 - 1))))
                .collect();
            capsol::removability_check(ctx, &shrinking).map_err(|e| fail(e.to_string()))?
        }
        "neighborhood" => {
            capsol::neighborhood_check(ctx, spec).map_err(|e| fail(e.to_string()))?
        }
        "lower_construction" => {
            capsol::lower_construction_check(ctx, spec).map_err(|e| fail(e.to_string()))?
        }
        "sigma_moderate" => capsol::sigma_moderate_equality_check(ctx, spec, samples)
            .map_err(|e| fail(e.to_string()))?,
        "wiener" => {
            let m_max = get_usize(req, "mmax", 12) as i32;
            let n_samples = get_usize(req, "boundary", 12);
            let expect = req.overrides.get("expect").map(|s| s.as_str()).unwrap_or("blowup");
            let allow_inconclusive = req
                .overrides
                .get("allow_inconclusive")
                .map(|v| v == "1" || v == "true")
                .unwrap_or(false);
            let points: Vec<[f64; 3]> = if let Some(p) = get_point(req, "point") {
                vec![p]
            } else {
                boundary_samples(spec, n_samples, cfg.seed)
            };
            let mut report = CheckReport::new(
                "wiener",
                &format!("{:x}:{m_max}:{expect}:{}", spec.digest(), points.len()),
            );
            report.tol("theta_grow", ctx.theta_grow);
            report.tol("theta_tail", ctx.theta_tail);
            let mut matched = 0usize;
            let mut inconclusive = 0usize;
            let mut consistent = 0usize;
            let mut with_trace = 0usize;
            for (i, &y) in points.iter().enumerate() {
                let verdict =
                    capsol::wiener_classify(ctx, spec, y, m_max).map_err(|e| fail(e.to_string()))?;
                let class = match verdict.classification {
                    capsol::WienerClass::Blowup => "blowup",
                    capsol::WienerClass::Bounded => "bounded",
                    capsol::WienerClass::Inconclusive => "inconclusive",
                };
                if class == expect {
                    matched += 1;
                }
                if class == "inconclusive" {
                    inconclusive += 1;
                }
                if let Some(ok) = verdict.trace_consistent {
                    with_trace += 1;
                    if ok {
                        consistent += 1;
                    }
                }
                artifacts.push((
                    format!("wiener_{i}.json"),
                    serde_json::to_string_pretty(&verdict).unwrap(),
                ));
            }
            report.set("samples", points.len() as f64);
            report.set("matched", matched as f64);
            report.set("inconclusive_count", inconclusive as f64);
            report.set("trace_checked", with_trace as f64);
            report.set("trace_consistent", consistent as f64);
            let classified_ok = if allow_inconclusive {
                matched + inconclusive == points.len()
            } else {
                matched == points.len()
            };
            report.conclude(classified_ok && consistent == with_trace);
            report
        }
        "almost_large" => {
            let m_max = get_usize(req, "mmax", 12) as i32;
            let n_samples = get_usize(req, "samples", 50);
            let thick = get_usize(req, "thickness", 10);
            let points = boundary_samples(spec, n_samples, cfg.seed);
            capsol::almost_large_fraction(ctx, spec, &points, m_max, thick)
                .map_err(|e| fail(e.to_string()))?
        }
        "capacity_continuity" => {
            let levels = get_usize(req, "levels", 4);
            let x = get_point(req, "x")
                .or_else(|| samples.first().copied())
                .ok_or_else(|| fail("needs an evaluation point".into()))?;
            let (center, radius) =
                first_ball(spec).ok_or_else(|| fail("needs a ball primitive".into()))?;
            // interior balls about a fixed anchor shrinking through the
            // resolution floor; the conservative raster realizes the
            // capacity-to-zero limit exactly once they drop below one cell
            let anchor = [center[0] + radius / 2.0, center[1], center[2]];
            let shrinking: Vec<SetSpec> = (1..=levels)
                .map(|j| SetSpec::ball(anchor, radius * (2.0f64).powi(-(j as i32))))
                .collect();
            capsol::capacity_continuity_check(ctx, spec, &shrinking, x)
                .map_err(|e| fail(e.to_string()))?
        }
        "capacity_scaling" => {
            let factors: Vec<f64> = req
                .overrides
                .get("factors")
                .map(|s| s.split(',').filter_map(|p| p.parse().ok()).collect())
                .unwrap_or_else(|| vec![0.25, 0.5, 1.0]);
            capacity_scaling_check(&ctx.engine, spec, &factors, &ctx.exp, &ctx.window, &ctx.cap_cfg)
                .map_err(|e| fail(e.to_string()))?
        }
        "sum_int" => {
            let gamma = get_f64(req, "gamma", -ctx.exp.weight_exponent());
            let i = get_usize(req, "i", 0) as i32;
            let k = get_usize(req, "k", 8) as i32;
            let quad = get_usize(req, "quad", 4);
            dyadic::sum_int_profile(
                spec,
                gamma,
                (i, k),
                &ctx.exp,
                &ctx.engine,
                &ctx.window,
                &ctx.cap_cfg,
                quad,
            )
            .map_err(|e| fail(e.to_string()))?
        }
        "equivalence" => dyadic::equivalence_wf_wfstar(
            spec,
            samples,
            &ctx.exp,
            &ctx.engine,
            &ctx.window,
            &ctx.refined_window,
            &ctx.cap_cfg,
        )
        .map_err(|e| fail(e.to_string()))?,
        "slab_profile" => {
            let resolution = get_usize(req, "resolution", 1536);
            let length = get_f64(req, "length", 12.0);
            capsol::slab_profile_check(&ctx.exp, resolution, length, &ctx.solver_cfg)
                .map_err(|e| fail(e.to_string()))?
        }
        "certification" => {
            let seed = get_usize(req, "seed", cfg.seed as usize) as u64;
            capsol::solver_certification(&ctx.exp, seed, &ctx.solver_cfg)
                .map_err(|e| fail(e.to_string()))?
        }
        "exhaustion_limit" => {
            let levels = get_usize(req, "levels", 6);
            let after = get_usize(req, "after", 4);
            let ratio = get_f64(req, "ratio", 0.7);
            // nested truncations of the ball sequence primitive
            let seq = spec
                .primitives
                .iter()
                .find_map(|p| match p {
                    Primitive::BallSequence { centers, radii } => Some((centers, radii)),
                    _ => None,
                })
                .ok_or_else(|| fail("needs a ballseq primitive".into()))?;
            let exhaustion: Vec<SetSpec> = (1..=levels.min(seq.0.len()))
                .map(|n| {
                    SetSpec::new(
                        vec![Primitive::BallSequence {
                            centers: seq.0[..n].to_vec(),
                            radii: seq.1[..n].to_vec(),
                        }],
                        spec.bounding_radius,
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(|e| fail(e.to_string()))?;
            capsol::exhaustion_limit_check(ctx, &exhaustion, samples, after, ratio)
                .map_err(|e| fail(e.to_string()))?
        }
        other => return Err(fail(format!("unknown check `{other}`"))),
    };
    Ok(CheckOutcome { report, artifacts })
}

/// Execute all checks of a parsed configuration and persist the results.
pub fn run_config(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    let out_dir = PathBuf::from(&cfg.output).join(&cfg.name);
    let artifacts_dir = out_dir.join("artifacts");
    fs::create_dir_all(&artifacts_dir).map_err(io_err(&artifacts_dir))?;
    let digest = crate::config::config_digest(cfg);
    let mut manifest = RunManifest::started(&digest, cfg.workers);
    manifest
        .environment
        .tolerances
        .insert("capacity.tolerance".into(), cfg.capacity_tolerance);
    manifest
        .environment
        .tolerances
        .insert("newton.tolerance".into(), cfg.newton_tolerance);
    let ctx = build_ctx(cfg)?;

    let reports_path = out_dir.join("reports.jsonl");
    let mut reports_file = fs::File::create(&reports_path).map_err(io_err(&reports_path))?;
    let mut any_fail = false;
    let mut reports = Vec::new();
    for req in &cfg.checks {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            dispatch(&ctx, cfg, req)
        }));
        let outcome = match outcome {
            Ok(result) => result?,
            Err(panic) => {
                let message = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "solver panic".into());
                manifest.abort(&req.name);
                let manifest_path = out_dir.join("manifest.json");
                manifest.write(&manifest_path).map_err(io_err(&manifest_path))?;
                return Err(RunError::ScenarioAborted { check: req.name.clone(), message });
            }
        };
        let verdict = outcome.report.verdict;
        if verdict == Verdict::Fail {
            any_fail = true;
        }
        manifest.record(&req.name, verdict);
        let mut line = serde_json::to_value(&outcome.report).unwrap();
        line.as_object_mut()
            .unwrap()
            .insert("manifestDigest".into(), serde_json::Value::String(digest.clone()));
        writeln!(reports_file, "{}", serde_json::to_string(&line).unwrap())
            .map_err(io_err(&reports_path))?;
        for (name, body) in outcome.artifacts {
            let path = artifacts_dir.join(name);
            fs::write(&path, body).map_err(io_err(&path))?;
        }
        reports.push(outcome.report);
    }
    manifest.finish();
    let manifest_path = out_dir.join("manifest.json");
    manifest.write(&manifest_path).map_err(io_err(&manifest_path))?;
    Ok(RunOutput { manifest, manifest_path, any_fail, reports })
}

/// Parse a scenario file and run it.
pub fn run_scenario(path: &Path) -> Result<RunOutput, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg = crate::config::parse_config(&text)?;
    run_config(&cfg)
}
