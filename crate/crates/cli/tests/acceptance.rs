//! Acceptance suite: one test per criterion, each running its bundled
//! scenario at the stated tolerances and printing a pass/fail line.
//!
//! Criteria are serialized through a global lock so the heavy solves never
//! compete for memory or cores.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use capsol::CheckReport;
use capsol_cli::{run_config, suite_scenario_config};

static GATE: Mutex<()> = Mutex::new(());

fn run_one(file: &str) -> (Vec<CheckReport>, Duration) {
    let cfg = suite_scenario_config("acceptance", file).expect("bundled scenario");
    let t0 = Instant::now();
    let out = run_config(&cfg).expect("scenario execution");
    (out.reports, t0.elapsed())
}

fn announce(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_01_ball_capacity_scaling() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-scaling.cfg");
    let r = &reports[0];
    let slope = r.quantities["fitted_slope"];
    let target = r.quantities["ball_exponent"];
    let rel = (slope - target).abs() / target.abs();
    let pass = rel <= 0.15 && elapsed <= Duration::from_secs(600);
    announce(
        "01 ball-capacity-scaling",
        pass,
        &format!(
            "slope {slope:.4} vs exponent {target:.4} (rel {rel:.3}), runtime {elapsed:.0?}"
        ),
    );
}

#[test]
fn criterion_02_slab_blowup_profile() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-slab.cfg");
    let r = &reports[0];
    let mismatch = r.quantities["max_mismatch"];
    let pass = mismatch <= 0.10 && elapsed <= Duration::from_secs(60);
    announce(
        "02 slab-blowup-profile",
        pass,
        &format!("max mismatch {mismatch:.4}, runtime {elapsed:.0?}"),
    );
}

fn two_sided_criterion(file: &str, label: &str) {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one(file);
    let r = &reports[0];
    let lo = r.quantities["ratio_lo"];
    let hi = r.quantities["ratio_hi"];
    let lo_drift = r.quantities["band_lo_drift"];
    let hi_drift = r.quantities["band_hi_drift"];
    let pass = lo > 0.0 && lo_drift <= 0.25 && hi_drift <= 0.25;
    announce(
        label,
        pass,
        &format!(
            "band [{lo:.3}, {hi:.3}], drift ({lo_drift:.3}, {hi_drift:.3}), runtime {elapsed:.0?}"
        ),
    );
}

#[test]
fn criterion_03a_two_sided_ball() {
    two_sided_criterion("acc-two-sided-ball.cfg", "03a two-sided-ball");
}

#[test]
fn criterion_03b_two_sided_box() {
    two_sided_criterion("acc-two-sided-box.cfg", "03b two-sided-box");
}

#[test]
fn criterion_03c_two_sided_twoballs() {
    two_sided_criterion("acc-two-sided-twoballs.cfg", "03c two-sided-twoballs");
}

#[test]
fn criterion_03d_two_sided_cantor() {
    two_sided_criterion("acc-two-sided-cantor.cfg", "03d two-sided-cantor");
}

#[test]
fn criterion_04_similarity_law() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-similarity.cfg");
    let r = &reports[0];
    let mismatch = r.quantities["max_mismatch"];
    let pass = mismatch <= 0.07;
    announce(
        "04 similarity-law",
        pass,
        &format!("max mismatch {mismatch:.4}, runtime {elapsed:.0?}"),
    );
}

#[test]
fn criterion_05_subadditivity() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-subadditivity.cfg");
    let r = &reports[0];
    let lower = r.quantities["max_lower_violation"];
    let upper = r.quantities["max_upper_violation"];
    let pass = lower <= 0.02 + 1e-6 && upper <= 0.02 + 1e-6;
    announce(
        "05 subadditivity",
        pass,
        &format!("violations ({lower:.4}, {upper:.4}), runtime {elapsed:.0?}"),
    );
}

#[test]
fn criterion_06_removability() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-removability.cfg");
    let r = &reports[0];
    let mono = r.quantities["monotone"] == 1.0;
    let drift = r.quantities["ratio_fit_drift"];
    let pass = mono && drift <= 0.25;
    announce(
        "06 removability",
        pass,
        &format!(
            "monotone {mono}, fitted ratio {:.3} -> {:.3} (drift {drift:.3}), runtime {elapsed:.0?}",
            r.quantities["fitted_ratio"], r.quantities["fitted_ratio_refined"]
        ),
    );
}

#[test]
fn criterion_07_lower_construction() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-lower.cfg");
    let r = &reports[0];
    let c_low = r.quantities["c_low"];
    let c_up = r.quantities["c_up"];
    let c_sol = r.quantities["c_solution"];
    let drift = r.quantities["max_fit_drift"];
    let pass =
        c_low > 0.0 && c_up.is_finite() && c_sol > 0.0 && drift <= 0.25
            && elapsed <= Duration::from_secs(2700);
    announce(
        "07 lower-construction",
        pass,
        &format!(
            "c_low {c_low:.3}, c_up {c_up:.3}, c_solution {c_sol:.3}, drift {drift:.3}, runtime {elapsed:.0?}"
        ),
    );
}

#[test]
fn criterion_08_sigma_moderateness() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-sigma.cfg");
    let r = &reports[0];
    let fraction = r.quantities["min_fraction"];
    let monotone = r.quantities["monotone_in_k"] == 1.0;
    let pass = fraction >= 0.85 && monotone;
    announce(
        "08 sigma-moderateness",
        pass,
        &format!("min fraction {fraction:.3}, monotone {monotone}, runtime {elapsed:.0?}"),
    );
}

#[test]
fn criterion_09_wiener_criterion() {
    let _gate = GATE.lock().unwrap();
    let (ball_reports, elapsed_ball) = run_one("acc-wiener-ball.cfg");
    let rb = &ball_reports[0];
    let ball_ok = rb.quantities["matched"] == rb.quantities["samples"]
        && rb.quantities["trace_consistent"] == rb.quantities["trace_checked"];
    let (point_reports, elapsed_point) = run_one("acc-wiener-point.cfg");
    let rp = &point_reports[0];
    let point_ok = rp.quantities["matched"] == rp.quantities["samples"];
    let pass = ball_ok && point_ok;
    announce(
        "09 wiener-criterion",
        pass,
        &format!(
            "ball {}/{} blowup (traces {}/{}), point bounded {}, inconclusive {} + {}, runtime {:.0?}",
            rb.quantities["matched"],
            rb.quantities["samples"],
            rb.quantities["trace_consistent"],
            rb.quantities["trace_checked"],
            point_ok,
            rb.quantities["inconclusive_count"],
            rp.quantities["inconclusive_count"],
            elapsed_ball + elapsed_point
        ),
    );
}

#[test]
fn criterion_10_almost_large() {
    let _gate = GATE.lock().unwrap();
    let (ball_reports, e1) = run_one("acc-almost-ball.cfg");
    let (box_reports, e2) = run_one("acc-almost-box.cfg");
    let rb = &ball_reports[0];
    let rx = &box_reports[0];
    let fb = rb.quantities["blowup_fraction"];
    let fx = rx.quantities["blowup_fraction"];
    let db = rb.quantities["thickness_fit_drift"];
    let dx = rx.quantities["thickness_fit_drift"];
    let pass = fb >= 0.95 && fx >= 0.95 && db <= 0.25 && dx <= 0.25;
    announce(
        "10 almost-large",
        pass,
        &format!(
            "fractions (ball {fb:.3}, box {fx:.3}), thickness drifts ({db:.3}, {dx:.3}), runtime {:.0?}",
            e1 + e2
        ),
    );
}

#[test]
fn criterion_11_capacity_continuity() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-continuity.cfg");
    let r = &reports[0];
    let slope = r.quantities["regression_slope"];
    let last = (0..)
        .take_while(|j| r.quantities.contains_key(&format!("value_{j}")))
        .last()
        .unwrap();
    let final_value = r.quantities[&format!("value_{last}")];
    let mother = r.quantities["value_mother"];
    let pass = slope > 0.0 && final_value < 0.10 * mother && r.quantities["monotone"] == 1.0;
    announce(
        "11 capacity-continuity",
        pass,
        &format!(
            "slope {slope:.3e}, final {final_value:.4} vs mother {mother:.4}, runtime {elapsed:.0?}"
        ),
    );
}

#[test]
fn criterion_12_ball_sequence_limit() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-ballseq.cfg");
    let r = &reports[0];
    let worst = r.quantities["worst_late_ratio"];
    let monotone = r.quantities["monotone"] == 1.0;
    let pass = worst <= 0.7 && monotone;
    announce(
        "12 ball-sequence-limit",
        pass,
        &format!("worst late increment ratio {worst:.3}, monotone {monotone}, runtime {elapsed:.0?}"),
    );
}

#[test]
fn criterion_13_sum_integral_comparison() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-sumint.cfg");
    let r = &reports[0];
    let c = r.quantities["fitted_constant"];
    let drift = r.quantities["fit_drift"];
    let pass = c.is_finite() && c >= 1.0 && drift <= 0.10;
    announce(
        "13 sum-integral-comparison",
        pass,
        &format!("fitted constant {c:.3}, quadrature drift {drift:.4}, runtime {elapsed:.0?}"),
    );
}

#[test]
fn criterion_14_solver_certification() {
    let _gate = GATE.lock().unwrap();
    let (reports, elapsed) = run_one("acc-cert.cfg");
    let r = &reports[0];
    let passes = r.quantities["passes"];
    let trials = r.quantities["trials"];
    let pass = passes == trials && elapsed <= Duration::from_secs(120);
    announce(
        "14 solver-certification",
        pass,
        &format!("{passes}/{trials} randomized instances, runtime {elapsed:.0?}"),
    );
}
