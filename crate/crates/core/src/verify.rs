//! Named verifications of the two-sided estimates, scaling and subadditivity
//! laws, removability, the lower construction, σ-moderateness, the Wiener-type
//! blow-up criterion and the thickness inequality.
//!
//! Every check produces a [`CheckReport`] with its quantities and the
//! tolerances they were held to. Fitted constants never decide a verdict
//! without a stability clause against refinement or quadrature doubling.

use serde::Serialize;

use crate::capacity::{
    capacitary_measure, CapacityConfig, CapacityEngine, Exponents, MeasureOnGrid,
};
use crate::dyadic::{potential, potential_truncated, thickness, truncation_range};
use crate::error::VerifyError;
use crate::grid::{GridContext, GridMask};
use crate::pde::{
    ball_domain, green_potential, ko_profile, maximal_solution, solve_measure_wholebox,
    solve_semilinear, BoundarySpec, SolverConfig,
};
use crate::report::CheckReport;
use crate::setgeom::{dyadic_pieces, rasterize, scale_spec, PieceVariant, SetSpec};

/// Shared configuration of one verification run.
pub struct VerifyCtx {
    pub exp: Exponents,
    /// PDE grid and its refinement.
    pub base: GridContext,
    pub refined: GridContext,
    /// Capacity window and its refinement.
    pub window: GridContext,
    pub refined_window: GridContext,
    /// Outer truncation radius of the PDE solves.
    pub radius: f64,
    pub cap_cfg: CapacityConfig,
    pub solver_cfg: SolverConfig,
    pub engine: CapacityEngine,
    /// Growth threshold of the blow-up classification.
    pub theta_grow: f64,
    /// Tail-fraction threshold of the bounded classification.
    pub theta_tail: f64,
    /// Multiple of the single-cell capacity below which a term counts as a
    /// resolution-floor artifact.
    pub floor_factor: f64,
}

impl VerifyCtx {
    pub fn new(
        exp: Exponents,
        base: GridContext,
        refined: GridContext,
        window: GridContext,
        refined_window: GridContext,
        radius: f64,
        cap_cfg: CapacityConfig,
        solver_cfg: SolverConfig,
    ) -> VerifyCtx {
        VerifyCtx {
            exp,
            base,
            refined,
            window,
            refined_window,
            radius,
            cap_cfg,
            solver_cfg,
            engine: CapacityEngine::new(),
            theta_grow: 1.15,
            theta_tail: 0.05,
            floor_factor: 1.1,
        }
    }

    /// Capacity of the single node nearest the window center; the resolution
    /// floor that a rasterized point cannot undercut.
    pub fn floor_capacity(&self, window: &GridContext) -> Result<f64, VerifyError> {
        let mut mask = GridMask::empty(window);
        let mid = window
            .nearest_node([0.0; 3])
            .expect("window contains its center");
        mask.bits[mid] = true;
        Ok(self.engine.capacity_value(&mask, &self.exp, &self.cap_cfg)?.0)
    }
}

fn sample_field(
    field: &crate::grid::GridField,
    samples: &[[f64; 3]],
) -> Vec<f64> {
    samples
        .iter()
        .map(|&s| field.sample(s).unwrap_or(f64::NAN))
        .collect()
}

/// Two-sided comparison of the maximal solution against the capacitary
/// potential over exterior samples: the ratio band must be stable under one
/// grid refinement.
pub fn two_sided_report(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    samples: &[[f64; 3]],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "two_sided",
        &format!("{:x}:{}:{:?}", spec.digest(), ctx.exp.q, samples),
    );
    report.tol("band_drift", 0.25);
    report.tol("small_absolute", 1e-2);

    let run = |base: &GridContext, window: &GridContext| -> Result<(f64, f64, f64), VerifyError> {
        let u = maximal_solution(spec, ctx.radius, &ctx.exp, base, &ctx.solver_cfg)?;
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        let mut far = 0.0f64;
        for &x in samples {
            let ux = u.field.sample(x).unwrap_or(0.0);
            let w = potential(
                spec,
                x,
                PieceVariant::Annulus,
                &ctx.exp,
                &ctx.engine,
                window,
                &ctx.cap_cfg,
            )?;
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            far = far.max(ux * r.powf(ctx.exp.weight_exponent()));
            if w.total > 0.0 {
                let ratio = ux / w.total;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        Ok((lo, hi, far))
    };
    let (lo, hi, far) = run(&ctx.base, &ctx.window)?;
    if !lo.is_finite() {
        // degenerate target: both sides must be small in absolute terms
        let u = maximal_solution(spec, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
        let umax = sample_field(&u.field, samples)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        report.set("max_u", umax);
        report.note("potential vanished at all samples; asserting absolute smallness");
        report.conclude(umax < 1e-2);
        return Ok(report);
    }
    let (lo_r, hi_r, _) = run(&ctx.refined, &ctx.refined_window)?;
    report.set("ratio_lo", lo);
    report.set("ratio_hi", hi);
    report.set("ratio_lo_refined", lo_r);
    report.set("ratio_hi_refined", hi_r);
    report.set("far_field_weighted_max", far);
    let lo_drift = (lo_r - lo).abs() / lo.abs().max(1e-300);
    let hi_drift = (hi_r - hi).abs() / hi.abs().max(1e-300);
    report.set("band_lo_drift", lo_drift);
    report.set("band_hi_drift", hi_drift);
    report.conclude(lo > 0.0 && lo_drift <= 0.25 && hi_drift <= 0.25);
    Ok(report)
}

/// Similarity law U_F(x) = a^{-2/(q-1)} U_{F/a}(x/a) at matched resolution.
pub fn similarity_check(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    a: f64,
    samples: &[[f64; 3]],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "similarity",
        &format!("{:x}:{a}:{:?}", spec.digest(), samples),
    );
    report.tol("mismatch", 0.07);
    let shrunk = scale_spec(spec, a, [0.0; 3])?;
    let u_f = maximal_solution(spec, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
    let u_scaled = maximal_solution(&shrunk, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
    let factor = a.powf(-ctx.exp.weight_exponent());
    let mut worst = 0.0f64;
    for &x in samples {
        let lhs = u_f.field.sample(x).unwrap_or(f64::NAN);
        let x_over_a = [x[0] / a, x[1] / a, x[2] / a];
        let rhs = factor * u_scaled.field.sample(x_over_a).unwrap_or(f64::NAN);
        let rel = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        worst = worst.max(rel);
    }
    report.set("max_mismatch", worst);
    report.set("weight_exponent", ctx.exp.weight_exponent());
    report.conclude(worst <= 0.07);
    Ok(report)
}

/// max(U_{E_1},...,U_{E_k}) <= U_E <= sum U_{E_i} nodewise at samples.
pub fn subadditivity_check(
    ctx: &VerifyCtx,
    parts: &[SetSpec],
    samples: &[[f64; 3]],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "subadditivity",
        &format!("{:?}:{:?}", parts.iter().map(SetSpec::digest).collect::<Vec<_>>(), samples),
    );
    report.tol("relative_slack", 0.02);
    let mut union_prims = Vec::new();
    let mut rho = 0.0f64;
    for p in parts {
        union_prims.extend(p.primitives.clone());
        rho = rho.max(p.bounding_radius);
    }
    let union = SetSpec::new(union_prims, rho).map_err(VerifyError::Geom)?;
    let u_union = maximal_solution(&union, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
    let part_fields: Vec<_> = parts
        .iter()
        .map(|p| maximal_solution(p, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg))
        .collect::<Result<_, _>>()?;
    let mut worst_lower = 0.0f64;
    let mut worst_upper = 0.0f64;
    for &x in samples {
        let ue = u_union.field.sample(x).unwrap_or(0.0);
        let vals: Vec<f64> = part_fields
            .iter()
            .map(|s| s.field.sample(x).unwrap_or(0.0))
            .collect();
        let vmax = vals.iter().cloned().fold(0.0f64, f64::max);
        let vsum: f64 = vals.iter().sum();
        let scale = ue.abs().max(vmax).max(1e-12);
        worst_lower = worst_lower.max((vmax - ue) / scale);
        worst_upper = worst_upper.max((ue - vsum) / scale);
    }
    report.set("max_lower_violation", worst_lower);
    report.set("max_upper_violation", worst_upper);
    let slack = 0.02 + ctx.solver_cfg.newton_tol;
    report.conclude(worst_lower <= slack && worst_upper <= slack);
    Ok(report)
}

/// Shrinking sets: sup of the solution over the outer annulus against the
/// capacity, monotone with a stable fitted ratio.
pub fn removability_check(
    ctx: &VerifyCtx,
    shrinking: &[SetSpec],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "removability",
        &format!("{:?}:{}", shrinking.iter().map(SetSpec::digest).collect::<Vec<_>>(), ctx.exp.q),
    );
    report.tol("ratio_drift", 0.25);
    let run = |base: &GridContext, window: &GridContext| -> Result<(Vec<f64>, Vec<f64>), VerifyError> {
        let mut sups = Vec::new();
        let mut caps = Vec::new();
        for spec in shrinking {
            let u = maximal_solution(spec, ctx.radius, &ctx.exp, base, &ctx.solver_cfg)?;
            let mut sup = 0.0f64;
            for idx in 0..base.len() {
                if !u.field.domain.bits[idx] {
                    continue;
                }
                let p = base.node(idx);
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r > 1.5 && r < ctx.radius {
                    sup = sup.max(u.field.values[idx]);
                }
            }
            let mask = rasterize(spec, window).map_err(VerifyError::Geom)?;
            let (cap, _) = ctx.engine.capacity_value(&mask, &ctx.exp, &ctx.cap_cfg)?;
            sups.push(sup);
            caps.push(cap);
        }
        Ok((sups, caps))
    };
    let (sups, caps) = run(&ctx.base, &ctx.window)?;
    for (j, (&s, &c)) in sups.iter().zip(caps.iter()).enumerate() {
        report.set(&format!("sup_{j}"), s);
        report.set(&format!("capacity_{j}"), c);
    }
    // monotone decrease of both sequences
    let mono = sups.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6))
        && caps.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6));
    report.set("monotone", if mono { 1.0 } else { 0.0 });
    let ratios: Vec<f64> = sups
        .iter()
        .zip(caps.iter())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&s, &c)| s / c)
        .collect();
    let fit = geometric_mean(&ratios);
    report.set("fitted_ratio", fit);
    let spread = ratios
        .iter()
        .map(|r| (r / fit).max(fit / r))
        .fold(1.0f64, f64::max);
    report.set("ratio_spread", spread);
    // one refinement
    let (sups_r, caps_r) = run(&ctx.refined, &ctx.refined_window)?;
    let ratios_r: Vec<f64> = sups_r
        .iter()
        .zip(caps_r.iter())
        .filter(|(_, &c)| c > 0.0)
        .map(|(&s, &c)| s / c)
        .collect();
    let fit_r = geometric_mean(&ratios_r);
    report.set("fitted_ratio_refined", fit_r);
    let drift = (fit_r - fit).abs() / fit.abs().max(1e-300);
    report.set("ratio_fit_drift", drift);
    report.conclude(mono && drift <= 0.25);
    Ok(report)
}

fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Level-set neighborhood of a small compact set: its capacity stays within
/// a factor four, and the solution mass outside it is controlled by the
/// capacity with a stable fitted constant.
pub fn neighborhood_check(ctx: &VerifyCtx, spec: &SetSpec) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "neighborhood",
        &format!("{:x}:{}", spec.digest(), ctx.exp.q),
    );
    report.tol("capacity_factor", 4.0);
    report.tol("fit_drift", 0.25);
    // the level parameter with (1 - alpha)^{-q'} = 2
    let alpha = 1.0 - (2.0f64).powf(-1.0 / ctx.exp.q_prime);
    report.set("alpha", alpha);
    if spec.is_empty() {
        report.note("empty set passes trivially");
        report.conclude(true);
        return Ok(report);
    }
    let run = |base: &GridContext| -> Result<(f64, f64, f64), VerifyError> {
        let mask = rasterize(spec, base).map_err(VerifyError::Geom)?;
        let result = ctx.engine.capacity(&mask, &ctx.exp, &ctx.cap_cfg)?;
        let cap_k = result.value;
        // precondition of the estimate: the set must be small inside B_1
        let ball_mask = rasterize(&SetSpec::ball([0.0; 3], 1.0), base).map_err(VerifyError::Geom)?;
        let (cap_b1, _) = ctx.engine.capacity_value(&ball_mask, &ctx.exp, &ctx.cap_cfg)?;
        if cap_k >= cap_b1 / 8.0 {
            return Err(VerifyError::Precondition(format!(
                "set capacity {cap_k} not below an eighth of the unit ball {cap_b1}"
            )));
        }
        // level set of the potential of the primal density
        let kernel = ctx.engine.kernel_for(base);
        let gf = kernel.convolve(&result.primal_density.values);
        let h3 = base.h.powi(3);
        let mut n_k = GridMask::empty(base);
        for idx in 0..base.len() {
            if h3 * gf[idx] >= 1.0 - alpha {
                n_k.bits[idx] = true;
            }
        }
        let (cap_nk, _) = ctx.engine.capacity_value(&n_k, &ctx.exp, &ctx.cap_cfg)?;
        // solution mass over B_1 minus the neighborhood
        let u = maximal_solution(spec, ctx.radius, &ctx.exp, base, &ctx.solver_cfg)?;
        let mut integral = 0.0;
        for idx in 0..base.len() {
            if n_k.bits[idx] || !u.field.domain.bits[idx] {
                continue;
            }
            let p = base.node(idx);
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r < 1.0 {
                integral += u.field.values[idx] * h3;
            }
        }
        Ok((cap_k, cap_nk, integral))
    };
    let (cap_k, cap_nk, integral) = run(&ctx.base)?;
    report.set("capacity_k", cap_k);
    report.set("capacity_nk", cap_nk);
    report.set("outside_integral", integral);
    let factor = cap_nk / cap_k.max(1e-300);
    report.set("capacity_ratio", factor);
    let c_fit = integral / cap_k.max(1e-300);
    report.set("integral_constant", c_fit);
    let (cap_k_r, _, integral_r) = run(&ctx.refined)?;
    let c_fit_r = integral_r / cap_k_r.max(1e-300);
    report.set("integral_constant_refined", c_fit_r);
    let drift = (c_fit_r - c_fit).abs() / c_fit.abs().max(1e-300);
    report.set("integral_constant_drift", drift);
    report.conclude(factor <= 4.0 * 1.05 && drift <= 0.25);
    Ok(report)
}

/// Lower construction: assemble the rescaled capacitary measures of the
/// annulus pieces around the evaluation point, and verify the Green potential
/// sandwich plus the resulting measure-data solution.
pub fn lower_construction_check(
    ctx: &VerifyCtx,
    spec: &SetSpec,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "lower_construction",
        &format!("{:x}:{}", spec.digest(), ctx.exp.q),
    );
    report.tol("fit_drift", 0.25);
    if spec.is_empty() {
        report.set("green_mu", 0.0);
        report.set("green_mu_q", 0.0);
        report.set("u_eps_mu", 0.0);
        report.note("empty set: measure vanishes");
        report.conclude(true);
        return Ok(report);
    }
    let origin = [0.0f64; 3];
    let run = |base: &GridContext, window: &GridContext| -> Result<[f64; 4], VerifyError> {
        let w0 = potential(
            spec,
            origin,
            PieceVariant::Annulus,
            &ctx.exp,
            &ctx.engine,
            window,
            &ctx.cap_cfg,
        )?;
        // capacitary measures of the rescaled pieces, pulled back to scale
        let scale_exp = -(ctx.exp.dim as f64 - 2.0 * ctx.exp.q_prime);
        let pieces = dyadic_pieces(
            spec,
            origin,
            PieceVariant::Annulus,
            w0.truncation.0..=w0.truncation.1.unwrap_or(0).max(0),
            window,
        )
        .map_err(VerifyError::Geom)?;
        let mut mu = MeasureOnGrid::empty(base);
        for piece in &pieces.entries {
            if piece.m < 0 {
                // the construction indexes nonnegative levels only
                continue;
            }
            let result = ctx
                .engine
                .capacity(&piece.rescaled_mask, &ctx.exp, &ctx.cap_cfg)?;
            let nu = capacitary_measure(&result)?;
            let shrink = (2.0f64).powi(-piece.m);
            let mass_factor = (2.0f64).powf(scale_exp * piece.m as f64);
            for &(idx, wgt) in &nu.atoms {
                let z = window.node(idx);
                let pos = [z[0] * shrink, z[1] * shrink, z[2] * shrink];
                mu.deposit(pos, wgt * mass_factor);
            }
        }
        let domain = ball_domain(base, 2.0, None);
        let g_mu = green_potential(&domain, &mu, &ctx.solver_cfg)?;
        let center = base.nearest_node(origin).expect("origin inside grid");
        let g_mu_0 = g_mu.values[center];
        // nonlinear term: the Green potential of (G mu)^q as a density
        let h3 = base.h.powi(3);
        let mut q_measure = MeasureOnGrid::empty(base);
        for idx in 0..base.len() {
            if domain.bits[idx] && g_mu.values[idx] > 0.0 {
                let v = g_mu.values[idx].powf(ctx.exp.q) * h3;
                if v > 0.0 {
                    q_measure.atoms.push((idx, v));
                }
            }
        }
        let g_mu_q = green_potential(&domain, &q_measure, &ctx.solver_cfg)?;
        let g_mu_q_0 = g_mu_q.values[center];
        // epsilon from the fitted constants, then the measure-data solution
        let c1 = g_mu_0 / w0.total.max(1e-300);
        let c2 = g_mu_q_0 / w0.total.max(1e-300);
        let eps = (c1 / (2.0 * c2)).powf(1.0 / (ctx.exp.q - 1.0));
        let u = solve_semilinear(
            &domain,
            &ctx.exp,
            &mu.scaled(eps),
            &BoundarySpec::uniform(base, 0.0),
            &ctx.solver_cfg,
        )?;
        Ok([w0.total, g_mu_0, g_mu_q_0, u.values[center]])
    };
    let [w, g1, g2, ueps] = run(&ctx.base, &ctx.window)?;
    report.set("potential", w);
    report.set("green_mu", g1);
    report.set("green_mu_q", g2);
    report.set("u_eps_mu", ueps);
    let c_low = g1 / w.max(1e-300);
    let c_up = g2 / w.max(1e-300);
    let c_sol = ueps / w.max(1e-300);
    report.set("c_low", c_low);
    report.set("c_up", c_up);
    report.set("c_solution", c_sol);
    let [w_r, g1_r, g2_r, ueps_r] = run(&ctx.refined, &ctx.refined_window)?;
    let c_low_r = g1_r / w_r.max(1e-300);
    let c_up_r = g2_r / w_r.max(1e-300);
    let c_sol_r = ueps_r / w_r.max(1e-300);
    report.set("c_low_refined", c_low_r);
    report.set("c_up_refined", c_up_r);
    report.set("c_solution_refined", c_sol_r);
    let drifts = [
        (c_low_r - c_low).abs() / c_low.abs().max(1e-300),
        (c_up_r - c_up).abs() / c_up.abs().max(1e-300),
        (c_sol_r - c_sol).abs() / c_sol.abs().max(1e-300),
    ];
    report.set("max_fit_drift", drifts.iter().cloned().fold(0.0, f64::max));
    report.conclude(
        c_low > 0.0
            && c_sol > 0.0
            && g2.is_finite()
            && drifts.iter().all(|d| *d <= 0.25),
    );
    Ok(report)
}

/// σ-moderateness: the increasing family u_{k tau} built from the capacitary
/// measure of the target reaches the maximal solution at the samples.
pub fn sigma_moderate_equality_check(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    samples: &[[f64; 3]],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "sigma_moderate_equality",
        &format!("{:x}:{:?}", spec.digest(), samples),
    );
    report.tol("fraction", 0.85);
    let u_max = maximal_solution(spec, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
    let mask = rasterize(spec, &ctx.base).map_err(VerifyError::Geom)?;
    if mask.is_empty() {
        let top = sample_field(&u_max.field, samples)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        report.set("max_u", top);
        report.note("zero-capacity target: both sides vanish");
        report.conclude(top < 1e-2);
        return Ok(report);
    }
    // assemble tau from capacitary measures of the residual masks: each
    // round removes the nodes already carrying mass, so the union of the
    // supports fills the whole discrete boundary instead of the sparse
    // active set of a single solve
    let mut tau = MeasureOnGrid::empty(&ctx.base);
    let mut remaining = mask.clone();
    for round in 0..3 {
        if remaining.is_empty() {
            break;
        }
        let cap = ctx.engine.capacity(&remaining, &ctx.exp, &ctx.cap_cfg)?;
        let mu = capacitary_measure(&cap)?;
        let weight = (2.0f64).powi(-round);
        for &(idx, w) in &mu.atoms {
            tau.add_atom(idx, w * weight);
            remaining.bits[idx] = false;
        }
    }
    let mut k = 1.0f64;
    let mut reached: Vec<f64> = vec![0.0; samples.len()];
    let mut monotone = true;
    let mut prev_at_samples: Vec<f64> = vec![0.0; samples.len()];
    for _ in 0..12 {
        let u_k = solve_measure_wholebox(
            &tau.scaled(k),
            &ctx.exp,
            ctx.radius,
            &ctx.base,
            &ctx.solver_cfg,
        )?;
        let vals = sample_field(&u_k, samples);
        for (i, &v) in vals.iter().enumerate() {
            if v < prev_at_samples[i] - 1e-7 {
                monotone = false;
            }
            reached[i] = v;
        }
        let increment: f64 = vals
            .iter()
            .zip(prev_at_samples.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev_at_samples = vals;
        let scale = reached.iter().cloned().fold(0.0f64, f64::max);
        if increment < 0.003 * scale.max(1e-12) {
            break;
        }
        k *= 4.0;
    }
    let mut min_fraction = f64::INFINITY;
    for (i, &x) in samples.iter().enumerate() {
        let um = u_max.field.sample(x).unwrap_or(0.0);
        if um > 1e-12 {
            min_fraction = min_fraction.min(reached[i] / um);
        }
    }
    report.set("min_fraction", min_fraction);
    report.set("k_final", k);
    report.set("monotone_in_k", if monotone { 1.0 } else { 0.0 });
    report.conclude(monotone && min_fraction >= 0.85);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WienerClass {
    Blowup,
    Bounded,
    Inconclusive,
}

/// Pointwise blow-up verdict from the dyadic term trend, with the solver
/// trace along a ray toward the point attached.
#[derive(Debug, Clone, Serialize)]
pub struct WienerVerdict {
    pub y: [f64; 3],
    pub partial_sums: Vec<f64>,
    pub growth_slope: f64,
    pub classification: WienerClass,
    pub solver_trace: Vec<(f64, f64)>,
    pub trace_consistent: Option<bool>,
    pub floor_capacity: f64,
}

/// Classification from the weighted closed-ball terms alone.
pub fn classify_terms(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    y: [f64; 3],
    m_max: i32,
) -> Result<(WienerClass, Vec<f64>, f64, f64), VerifyError> {
    let floor = ctx.floor_capacity(&ctx.window)?;
    let pot = potential_truncated(
        spec,
        y,
        PieceVariant::ClosedBall,
        &ctx.exp,
        &ctx.engine,
        &ctx.window,
        &ctx.cap_cfg,
        0..=m_max,
    )?;
    let mut partial_sums = Vec::new();
    let mut total = 0.0;
    for m in 0..=m_max {
        if let Some(term) = pot.terms.iter().find(|t| t.m == m) {
            // terms at the resolution floor are indistinguishable from a
            // rasterized point and carry no evidence of thickness
            if term.annulus_capacity > ctx.floor_factor * floor {
                total += term.contribution;
            }
        }
        partial_sums.push(total);
    }
    let half = (m_max / 2) as usize;
    let s_half = partial_sums[half];
    let s_full = *partial_sums.last().unwrap();
    if s_full <= 0.0 {
        return Ok((WienerClass::Bounded, partial_sums, 0.0, floor));
    }
    let steps = (partial_sums.len() - 1 - half) as f64;
    let growth = if s_half > 0.0 && steps > 0.0 {
        (s_full / s_half).powf(1.0 / steps)
    } else if s_full > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let tail_fraction = (s_full - s_half) / s_full;
    let class = if growth >= ctx.theta_grow {
        WienerClass::Blowup
    } else if tail_fraction < ctx.theta_tail {
        WienerClass::Bounded
    } else {
        WienerClass::Inconclusive
    };
    Ok((class, partial_sums, growth, floor))
}

/// Wiener-type criterion at a boundary point: dyadic classification plus the
/// solver trace along the outward ray.
pub fn wiener_classify(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    y: [f64; 3],
    m_max: i32,
) -> Result<WienerVerdict, VerifyError> {
    if m_max < 12 {
        return Err(VerifyError::Precondition(
            "wiener classification needs m_max >= 12".into(),
        ));
    }
    let (classification, partial_sums, growth, floor) = classify_terms(ctx, spec, y, m_max)?;
    // trace U along the outward ray from y
    let u = maximal_solution(spec, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?;
    let norm_y = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
    let dir = if norm_y > 1e-12 {
        [y[0] / norm_y, y[1] / norm_y, y[2] / norm_y]
    } else {
        [1.0, 0.0, 0.0]
    };
    let h = ctx.base.h;
    let mut solver_trace = Vec::new();
    let d_max = (ctx.radius / 2.0 - norm_y).max(8.0 * h);
    let mut d = 2.0 * h;
    while d <= d_max {
        let x = [y[0] + d * dir[0], y[1] + d * dir[1], y[2] + d * dir[2]];
        if let Some(v) = u.field.sample(x) {
            solver_trace.push((d, v));
        }
        d *= 1.4;
    }
    let trace_consistent = if solver_trace.len() >= 3 {
        let far = solver_trace.last().unwrap().1;
        let near = solver_trace
            .iter()
            .filter(|(d, _)| *d <= 4.0 * h + 1e-12)
            .map(|(_, v)| *v)
            .fold(0.0f64, f64::max);
        match classification {
            WienerClass::Blowup => Some(near >= 10.0 * far.max(1e-300)),
            WienerClass::Bounded => {
                // plateau measured away from the discrete core of the set
                let mid: Vec<f64> = solver_trace
                    .iter()
                    .filter(|(d, _)| *d >= 0.3)
                    .map(|(_, v)| *v)
                    .collect();
                if mid.len() >= 2 {
                    let hi = mid.iter().cloned().fold(0.0f64, f64::max);
                    let lo = mid.iter().cloned().fold(f64::INFINITY, f64::min);
                    Some(hi <= 5.0 * lo.max(1e-300) || hi < 1e-6)
                } else {
                    None
                }
            }
            WienerClass::Inconclusive => None,
        }
    } else {
        None
    };
    Ok(WienerVerdict {
        y,
        partial_sums,
        growth_slope: growth,
        classification,
        solver_trace,
        trace_consistent,
        floor_capacity: floor,
    })
}

/// Fraction of boundary samples classified as blow-up points, plus the
/// thickness inequality with a stable fitted constant at a sample subset.
pub fn almost_large_fraction(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    boundary_samples: &[[f64; 3]],
    m_max: i32,
    thickness_samples: usize,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "almost_large",
        &format!("{:x}:{}:{m_max}", spec.digest(), boundary_samples.len()),
    );
    report.tol("blowup_fraction", 0.95);
    report.tol("fit_drift", 0.25);
    let mut blowup = 0usize;
    let mut inconclusive = 0usize;
    for &y in boundary_samples {
        let (class, _, _, _) = classify_terms(ctx, spec, y, m_max)?;
        match class {
            WienerClass::Blowup => blowup += 1,
            WienerClass::Inconclusive => inconclusive += 1,
            WienerClass::Bounded => {}
        }
    }
    let fraction = blowup as f64 / boundary_samples.len() as f64;
    report.set("blowup_fraction", fraction);
    report.set("inconclusive_count", inconclusive as f64);
    // thickness against the potential raised to min(1, q-1)
    let q_tilde = ctx.exp.q.min(2.0) - 1.0;
    let subset: Vec<[f64; 3]> = boundary_samples
        .iter()
        .take(thickness_samples)
        .cloned()
        .collect();
    let fit = |resolution: usize| -> Result<f64, VerifyError> {
        let mut worst = 0.0f64;
        for &y in &subset {
            let lam = thickness(spec, y, &ctx.exp, &ctx.engine, resolution, m_max.min(8), &ctx.cap_cfg)?;
            let w = potential_truncated(
                spec,
                y,
                PieceVariant::ClosedBall,
                &ctx.exp,
                &ctx.engine,
                &ctx.window,
                &ctx.cap_cfg,
                0..=m_max.min(8),
            )?;
            if w.total > 0.0 {
                worst = worst.max(lam.total / w.total.powf(q_tilde));
            }
        }
        Ok(worst)
    };
    let res = ctx.window.dims[0];
    let c_fit = fit(res.min(32))?;
    let c_fit_refined = fit((res.min(32) * 4) / 3)?;
    report.set("thickness_constant", c_fit);
    report.set("thickness_constant_refined", c_fit_refined);
    let drift = (c_fit_refined - c_fit).abs() / c_fit.abs().max(1e-300);
    report.set("thickness_fit_drift", drift);
    report.conclude(fraction >= 0.95 && drift <= 0.25);
    Ok(report)
}

/// Continuity with respect to capacity: solutions of shrinking subsets decay
/// with their capacity at an exterior point of finite potential.
pub fn capacity_continuity_check(
    ctx: &VerifyCtx,
    spec: &SetSpec,
    shrinking: &[SetSpec],
    x: [f64; 3],
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "capacity_continuity",
        &format!("{:x}:{:?}", spec.digest(), x),
    );
    report.tol("final_fraction", 0.10);
    // the evaluation point must carry a finite potential of the mother set
    let (_, m) = truncation_range(spec, x);
    if m.is_none() {
        return Err(VerifyError::Precondition(
            "evaluation point lies inside the target set".into(),
        ));
    }
    let v_f = maximal_solution(spec, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?
        .field
        .sample(x)
        .unwrap_or(0.0);
    let mut caps = Vec::new();
    let mut vals = Vec::new();
    for sub in shrinking {
        let mask = rasterize(sub, &ctx.window).map_err(VerifyError::Geom)?;
        let (cap, _) = ctx.engine.capacity_value(&mask, &ctx.exp, &ctx.cap_cfg)?;
        let v = maximal_solution(sub, ctx.radius, &ctx.exp, &ctx.base, &ctx.solver_cfg)?
            .field
            .sample(x)
            .unwrap_or(0.0);
        caps.push(cap);
        vals.push(v);
    }
    for (j, (&c, &v)) in caps.iter().zip(vals.iter()).enumerate() {
        report.set(&format!("capacity_{j}"), c);
        report.set(&format!("value_{j}"), v);
    }
    report.set("value_mother", v_f);
    // regression of value against capacity must slope upward
    let n = caps.len() as f64;
    let sx: f64 = caps.iter().sum();
    let sy: f64 = vals.iter().sum();
    let sxy: f64 = caps.iter().zip(vals.iter()).map(|(a, b)| a * b).sum();
    let sxx: f64 = caps.iter().map(|a| a * a).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx).max(1e-300);
    report.set("regression_slope", slope);
    let final_ok = vals.last().map_or(false, |&v| v < 0.10 * v_f.max(1e-300));
    let mono = vals
        .windows(2)
        .all(|w| w[1] <= w[0] * 1.02 + ctx.solver_cfg.newton_tol);
    report.set("monotone", if mono { 1.0 } else { 0.0 });
    report.conclude(slope > 0.0 && final_ok && mono);
    Ok(report)
}

/// One-dimensional slab blow-up oracle: the interior of a long pseudo-1-D
/// large solution must track the exact profile c_q t^{-2/(q-1)}.
pub fn slab_profile_check(
    exp: &Exponents,
    resolution: usize,
    length: f64,
    solver_cfg: &SolverConfig,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "slab_profile",
        &format!("{resolution}:{length}:{}", exp.q),
    );
    report.tol("profile_mismatch", 0.10);
    let h = length / resolution as f64;
    let ctx = GridContext::new([resolution, 1, 1], h, [0.0, 0.0, 0.0])
        .map_err(crate::error::GeomError::Grid)
        .map_err(VerifyError::Geom)?;
    let mut domain = GridMask::empty(&ctx);
    for i in 1..resolution - 1 {
        domain.bits[i] = true;
    }
    let mut template = vec![0.0; resolution];
    template[0] = f64::INFINITY;
    template[resolution - 1] = f64::INFINITY;
    let schedule = crate::pde::default_schedule(&ctx, exp, 6);
    let sol = crate::pde::large_solution(&domain, exp, &template, &schedule, solver_cfg)?;
    let mut worst = 0.0f64;
    let mut count = 0usize;
    for i in 1..resolution - 1 {
        // the blow-up plane sits half a cell outside the boundary node
        let t = (i as f64 + 0.5) * h;
        if t < 4.0 * h || t > 0.25 {
            continue;
        }
        let want = ko_profile(t, exp);
        let got = sol.field.values[i];
        worst = worst.max((got - want).abs() / want);
        count += 1;
    }
    report.set("max_mismatch", worst);
    report.set("points_checked", count as f64);
    report.conclude(count > 0 && worst <= 0.10);
    Ok(report)
}

/// Increments of the increasing limit along a nested exhaustion must decay
/// geometrically at exterior samples once the stated step is passed.
pub fn exhaustion_limit_check(
    ctx: &VerifyCtx,
    exhaustion: &[SetSpec],
    samples: &[[f64; 3]],
    decay_after: usize,
    ratio_bound: f64,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new(
        "exhaustion_limit",
        &format!("{:?}:{}", exhaustion.iter().map(SetSpec::digest).collect::<Vec<_>>(), samples.len()),
    );
    report.tol("increment_ratio", ratio_bound);
    let limit = crate::pde::sigma_moderate_limit(
        exhaustion,
        ctx.radius,
        &ctx.exp,
        &ctx.base,
        samples,
        &ctx.solver_cfg,
    )?;
    let mut monotone = true;
    let mut per_step: Vec<f64> = Vec::new();
    for incs in &limit.sample_increments {
        for &v in incs {
            if v < -1e-6 {
                monotone = false;
            }
        }
        per_step.push(incs.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    for (n, v) in per_step.iter().enumerate() {
        report.set(&format!("increment_{}", n + 1), *v);
    }
    report.set("monotone", if monotone { 1.0 } else { 0.0 });
    let scale = per_step.iter().cloned().fold(0.0f64, f64::max);
    let mut ratios_ok = true;
    let mut worst_ratio = 0.0f64;
    for w in per_step.windows(2).skip(decay_after.saturating_sub(1)) {
        // an increment already at the noise floor counts as converged
        if w[0] <= 1e-9 * scale.max(1e-12) {
            continue;
        }
        let r = w[1] / w[0];
        worst_ratio = worst_ratio.max(r);
        if r > ratio_bound {
            ratios_ok = false;
        }
    }
    report.set("worst_late_ratio", worst_ratio);
    report.conclude(monotone && ratios_ok);
    Ok(report)
}

struct SplitMix(u64);

impl SplitMix {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Seeded boundary samples on the surface of a ball or box primitive.
pub fn boundary_samples(spec: &SetSpec, count: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = SplitMix(seed.wrapping_mul(2654435761).wrapping_add(1));
    let mut out = Vec::with_capacity(count);
    let primitive = spec.primitives.first();
    for _ in 0..count {
        match primitive {
            Some(crate::setgeom::Primitive::Ball { center, radius }) => {
                // uniform direction by normalized gaussian-ish triple
                let mut v = [0.0f64; 3];
                loop {
                    for w in v.iter_mut() {
                        *w = 2.0 * rng.next_f64() - 1.0;
                    }
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if n > 1e-3 && n <= 1.0 {
                        for w in v.iter_mut() {
                            *w /= n;
                        }
                        break;
                    }
                }
                out.push([
                    center[0] + radius * v[0],
                    center[1] + radius * v[1],
                    center[2] + radius * v[2],
                ]);
            }
            Some(crate::setgeom::Primitive::Box { lo, hi }) => {
                let face = (rng.next_f64() * 6.0) as usize % 6;
                let axis = face / 2;
                let side = face % 2;
                let mut p = [0.0f64; 3];
                for a in 0..3 {
                    p[a] = lo[a] + rng.next_f64() * (hi[a] - lo[a]);
                }
                p[axis] = if side == 0 { lo[axis] } else { hi[axis] };
                out.push(p);
            }
            _ => {
                // fall back to the bounding sphere
                let r = spec.bounding_radius;
                let t = rng.next_f64() * std::f64::consts::TAU;
                let z = 2.0 * rng.next_f64() - 1.0;
                let s = (1.0 - z * z).sqrt();
                out.push([r * s * t.cos(), r * s * t.sin(), r * z]);
            }
        }
    }
    out
}

/// Seeded exterior samples in a spherical shell.
pub fn shell_samples(count: usize, r_lo: f64, r_hi: f64, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = SplitMix(seed.wrapping_mul(0x9e3779b9).wrapping_add(7));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let t = rng.next_f64() * std::f64::consts::TAU;
        let z = 2.0 * rng.next_f64() - 1.0;
        let s = (1.0 - z * z).sqrt();
        let r = r_lo + rng.next_f64() * (r_hi - r_lo);
        out.push([r * s * t.cos(), r * s * t.sin(), r * z]);
    }
    out
}

/// Solver certification on randomized small instances: comparison principle,
/// residual certification, Green symmetry and monotone exhaustion.
pub fn solver_certification(
    exp: &Exponents,
    seed: u64,
    solver_cfg: &SolverConfig,
) -> Result<CheckReport, VerifyError> {
    let mut report = CheckReport::new("solver_certification", &format!("{seed}:{}", exp.q));
    report.tol("residual", solver_cfg.newton_tol);
    let ctx = GridContext::cube(1.0, 16).map_err(crate::error::GeomError::Grid)
        .map_err(VerifyError::Geom)?;
    let domain = ball_domain(&ctx, 0.95, None);
    let mut rng = SplitMix(seed.wrapping_add(11));
    let mut passes = 0usize;
    let mut trials = 0usize;
    let note_failure = |report: &mut CheckReport, what: &str| {
        report.note(&format!("failed: {what}"));
    };

    // comparison principle on randomized ordered pairs of measures and data
    for _ in 0..3 {
        trials += 1;
        let mut mu1 = MeasureOnGrid::empty(&ctx);
        let mut mu2 = MeasureOnGrid::empty(&ctx);
        for _ in 0..4 {
            let i = 2 + (rng.next_f64() * 12.0) as usize;
            let j = 2 + (rng.next_f64() * 12.0) as usize;
            let k = 2 + (rng.next_f64() * 12.0) as usize;
            let idx = ctx.index(i.min(13), j.min(13), k.min(13));
            if !domain.bits[idx] {
                continue;
            }
            let w = 0.02 + 0.05 * rng.next_f64();
            mu1.add_atom(idx, w);
            mu2.add_atom(idx, w + 0.03 * rng.next_f64());
        }
        let g1 = 0.1 * rng.next_f64();
        let g2 = g1 + 0.1 * rng.next_f64();
        let u1 = solve_semilinear(
            &domain,
            exp,
            &mu1,
            &BoundarySpec::uniform(&ctx, g1),
            solver_cfg,
        )?;
        let u2 = solve_semilinear(
            &domain,
            exp,
            &mu2,
            &BoundarySpec::uniform(&ctx, g2),
            solver_cfg,
        )?;
        let ok = u1
            .values
            .iter()
            .zip(u2.values.iter())
            .enumerate()
            .all(|(idx, (a, b))| !domain.bits[idx] || *a <= *b + 1e-8);
        if ok {
            passes += 1;
        } else {
            note_failure(&mut report, "comparison principle");
        }
        // residual certification on both fields
        trials += 1;
        let r1 = crate::pde::residual_inf_norm(&u1, exp, &mu1);
        let r2 = crate::pde::residual_inf_norm(&u2, exp, &mu2);
        if r1 <= solver_cfg.newton_tol && r2 <= solver_cfg.newton_tol {
            passes += 1;
        } else {
            note_failure(&mut report, "residual certification");
        }
    }

    // green symmetry on random pairs
    for _ in 0..3 {
        trials += 1;
        let pick = |rng: &mut SplitMix| {
            let i = 3 + (rng.next_f64() * 10.0) as usize;
            let j = 3 + (rng.next_f64() * 10.0) as usize;
            let k = 3 + (rng.next_f64() * 10.0) as usize;
            ctx.index(i.min(12), j.min(12), k.min(12))
        };
        let a = pick(&mut rng);
        let b = pick(&mut rng);
        if a == b || !domain.bits[a] || !domain.bits[b] {
            passes += 1;
            continue;
        }
        let mut mu_a = MeasureOnGrid::empty(&ctx);
        mu_a.add_atom(a, 1.0);
        let mut mu_b = MeasureOnGrid::empty(&ctx);
        mu_b.add_atom(b, 1.0);
        let ga = green_potential(&domain, &mu_a, solver_cfg)?;
        let gb = green_potential(&domain, &mu_b, solver_cfg)?;
        let rel = (ga.values[b] - gb.values[a]).abs() / ga.values[b].abs().max(1e-300);
        if rel < 1e-5 {
            passes += 1;
        } else {
            note_failure(&mut report, "green symmetry");
        }
    }

    // monotone exhaustion on a small ball
    trials += 1;
    let spec = SetSpec::ball([0.0; 3], 0.3);
    let sol = maximal_solution(&spec, 0.9, exp, &ctx, solver_cfg)?;
    if sol.decrease_trace.iter().all(|&d| d >= -1e-6) {
        passes += 1;
    } else {
        note_failure(&mut report, "monotone exhaustion");
    }

    report.set("passes", passes as f64);
    report.set("trials", trials as f64);
    report.conclude(passes == trials);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setgeom::{window_grid, Primitive};

    fn small_ctx() -> VerifyCtx {
        let exp = Exponents::new(3, 4.0).unwrap();
        VerifyCtx::new(
            exp,
            GridContext::cube(2.0, 24).unwrap(),
            GridContext::cube(2.0, 32).unwrap(),
            window_grid(24),
            window_grid(32),
            1.9,
            CapacityConfig::with_tolerance(1e-2),
            SolverConfig::default(),
        )
    }

    #[test]
    fn subadditivity_identities_at_single_part() {
        let ctx = small_ctx();
        let ball = SetSpec::ball([0.0; 3], 0.5);
        let samples = [[1.2, 0.0, 0.0], [0.0, -1.4, 0.0]];
        let report = subadditivity_check(&ctx, &[ball], &samples).unwrap();
        assert_eq!(report.verdict, crate::report::Verdict::Pass, "{report:?}");
        // k = 1 forces equality in both inequalities
        assert!(report.quantities["max_lower_violation"] < 1e-9);
        assert!(report.quantities["max_upper_violation"] < 1e-9);
    }

    #[test]
    fn wiener_point_scenario_is_bounded() {
        let ctx = small_ctx();
        let y = ctx.window.node(ctx.window.nearest_node([0.0; 3]).unwrap());
        let spec =
            SetSpec::new(vec![Primitive::PointCloud { points: vec![y] }], 0.5).unwrap();
        let (class, sums, _, _) = classify_terms(&ctx, &spec, y, 12).unwrap();
        assert_eq!(class, WienerClass::Bounded, "sums {sums:?}");
    }

    #[test]
    fn wiener_ball_boundary_terms_grow() {
        let ctx = small_ctx();
        let spec = SetSpec::ball([0.0; 3], 0.5);
        let y = [0.5, 0.0, 0.0];
        let (class, sums, growth, _) = classify_terms(&ctx, &spec, y, 12).unwrap();
        assert_eq!(class, WienerClass::Blowup, "growth {growth}, sums {sums:?}");
        assert!(growth > ctx.theta_grow);
    }

    #[test]
    fn wiener_precondition_on_m_max() {
        let ctx = small_ctx();
        let spec = SetSpec::ball([0.0; 3], 0.5);
        assert!(matches!(
            wiener_classify(&ctx, &spec, [0.5, 0.0, 0.0], 6),
            Err(VerifyError::Precondition(_))
        ));
    }

    #[test]
    fn similarity_identity_at_unit_factor() {
        let ctx = small_ctx();
        let spec = SetSpec::ball([0.0; 3], 0.5);
        let report =
            similarity_check(&ctx, &spec, 1.0, &[[1.0, 0.0, 0.0], [0.0, 1.2, 0.0]]).unwrap();
        assert_eq!(report.verdict, crate::report::Verdict::Pass);
        assert!(report.quantities["max_mismatch"] < 1e-12);
    }

    #[test]
    fn capacity_continuity_control_sequence_fails() {
        // constant subsets are the control: no decay, hence no PASS
        let ctx = small_ctx();
        let ball = SetSpec::ball([0.0; 3], 0.5);
        let fixed = vec![ball.clone(), ball.clone(), ball.clone()];
        let report = capacity_continuity_check(&ctx, &ball, &fixed, [1.2, 0.0, 0.0]).unwrap();
        assert_eq!(report.verdict, crate::report::Verdict::Fail);
    }
}
