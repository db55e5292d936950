//! Acceptance suite.
//!
//! Each criterion is a pure check over measured numbers, so it can be tested
//! against injected violations, plus a driver that runs the seeded
//! experiments producing those numbers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{lmi_2x2, Affine, ConicProblem};
use crate::error::{Error, Result};
use crate::linalg::{gram, herm_eigen, outer, quad_form, row_dot, trace_re, CMatrix, CVector, C64};
use crate::model::{complex_gaussian, dbm_to_watt, SystemConfig};
use crate::rankrec::{
    numerical_rank, randomize_v0, reconstruct_vk, reconstruct_vk_primal, reduce_rank_v0,
    DEFAULT_CANDIDATES, RANK_RATIO_TOL,
};
use crate::rates::BFSolution;
use crate::srm::{normalized_rates, robust_covariances, robust_report, Instance, SrmOutput, Variant};

use super::runner::{ci95, run_experiment, srm_options, trial_data, ExperimentResult, TrialRow};
use super::spec::{derive_seed, ExperimentKind, ExperimentSpec, OutputSpec, RunOptions};

/// Outcome of one criterion with the number it was judged on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: String,
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CriterionResult {
    fn new(id: &str, name: &str, passed: bool, measured: f64, threshold: f64, detail: String) -> Self {
        CriterionResult {
            id: id.to_string(),
            name: name.to_string(),
            passed,
            measured,
            threshold,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {:<10} {}: measured {:.6e}, threshold {:.6e}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    pub master_seed: u64,
    pub n_trials: usize,
    pub elapsed_s: f64,
    pub criteria: Vec<CriterionResult>,
}

impl AcceptanceReport {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CriterionResult> {
        self.criteria.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, id: &str) -> Option<&CriterionResult> {
        self.criteria.iter().find(|c| c.id == id)
    }

    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(CriterionResult::line).collect()
    }
}

// ---------------------------------------------------------------------------
// tolerances

pub const MONOTONE_TOL: f64 = 1e-6;
pub const CONVERGED_SHARE: f64 = 0.9;
pub const TIME_LIMIT_S: f64 = 900.0;
pub const POWER_TOL: f64 = 1e-7;
/// Fronthaul slack in bit/s/Hz of `W_mm`.
pub const FRONTHAUL_TOL: f64 = 1e-6;
/// Rate slack of the pairwise comparisons in bit/s/Hz of `W_mm`.
pub const PAIR_TOL: f64 = 1e-4;
pub const CERTIFICATE_TOL: f64 = 1e-7;
pub const PRESERVE_TOL: f64 = 1e-6;
pub const REDUCTION_TOL: f64 = 1e-8;
pub const RANDOMIZATION_RATIO: f64 = 0.95;
pub const ORACLE_REL_TOL: f64 = 0.02;

// ---------------------------------------------------------------------------
// pure checks

/// Largest drop between consecutive entries of any trace.
pub fn max_decrease(traces: &[Vec<f64>]) -> f64 {
    traces
        .iter()
        .flat_map(|t| t.windows(2).map(|w| w[0] - w[1]))
        .fold(0.0, f64::max)
}

pub fn check_monotone(traces: &[Vec<f64>], tol: f64) -> CriterionResult {
    let d = max_decrease(traces);
    CriterionResult::new(
        "1a",
        "surrogate traces non-decreasing",
        d <= tol,
        d,
        tol,
        format!("{} traces", traces.len()),
    )
}

/// `converged[i]` is `false` for runs that failed outright.
pub fn check_convergence_share(converged: &[bool], min_share: f64) -> CriterionResult {
    let n = converged.len();
    let c = converged.iter().filter(|&&x| x).count();
    let share = if n == 0 { 0.0 } else { c as f64 / n as f64 };
    CriterionResult::new(
        "1b",
        "runs converged within t_max",
        n > 0 && share >= min_share,
        share,
        min_share,
        format!("{c} of {n} runs"),
    )
}

pub fn check_runtime(seconds: f64, limit: f64) -> CriterionResult {
    CriterionResult::new(
        "1c",
        "suite wall time in seconds",
        seconds <= limit,
        seconds,
        limit,
        String::new(),
    )
}

fn ok_rows<'a>(rows: impl IntoIterator<Item = &'a TrialRow>) -> (Vec<&'a TrialRow>, usize) {
    let mut ok = Vec::new();
    let mut failed = 0;
    for r in rows {
        if r.is_ok() {
            ok.push(r);
        } else {
            failed += 1;
        }
    }
    (ok, failed)
}

pub fn check_power(rows: &[&TrialRow], tol: f64) -> CriterionResult {
    let (ok, failed) = ok_rows(rows.iter().copied());
    let worst = ok
        .iter()
        .map(|r| r.power_residual.max(r.cp_residual))
        .fold(0.0, f64::max);
    CriterionResult::new(
        "2a",
        "relative power residuals",
        worst <= tol && !worst.is_nan(),
        worst,
        tol,
        format!("{} solutions, {failed} failed runs", ok.len()),
    )
}

/// Residuals in bit/s/Hz.
pub fn check_fronthaul(rows: &[&TrialRow], tol: f64) -> CriterionResult {
    let (ok, failed) = ok_rows(rows.iter().copied());
    let worst = ok.iter().map(|r| r.fronthaul_residual).fold(0.0, f64::max);
    CriterionResult::new(
        "2b",
        "sum access rate above the fronthaul minimum (bit/s/Hz)",
        worst <= tol && !worst.is_nan(),
        worst,
        tol,
        format!("{} solutions, {failed} failed runs", ok.len()),
    )
}

/// `pairs[i] = (total, perbs)` in bit/s/Hz.
pub fn check_total_vs_perbs(pairs: &[(f64, f64)], tol: f64) -> CriterionResult {
    let worst = pairs.iter().map(|(t, p)| t - p).fold(f64::INFINITY, f64::min);
    let below = pairs.iter().filter(|(t, p)| t - p < -tol).count();
    CriterionResult::new(
        "3a",
        "total-power rate minus per-BS rate (bit/s/Hz)",
        !pairs.is_empty() && worst >= -tol,
        worst,
        -tol,
        format!("{} instances, {below} below the slack", pairs.len()),
    )
}

pub fn check_mean_gap(pairs: &[(f64, f64)]) -> CriterionResult {
    let gaps: Vec<f64> = pairs.iter().map(|(t, p)| t - p).collect();
    let (m, s) = mean_std(&gaps);
    CriterionResult::new(
        "3b",
        "mean total-minus-per-BS gap at low power (bit/s/Hz)",
        !gaps.is_empty() && m > 0.0,
        m,
        0.0,
        format!("{} trials, 95% CI ±{:.3e}", gaps.len(), ci95(s, gaps.len())),
    )
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, v.sqrt())
}

/// Mean and 95% half-width of the paired step `levels[i+1] − levels[i]`.
fn paired_steps(levels: &[Vec<f64>]) -> Vec<(f64, f64)> {
    levels
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| b - a).collect();
            let (m, s) = mean_std(&d);
            (m, ci95(s, d.len()))
        })
        .collect()
}

/// Shape of a mean curve over a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Every paired step is non-negative within its CI, the whole range
    /// rises significantly, and the last step is within the CI of the last
    /// mean.
    RisingThenFlat,
    /// Every paired step is non-positive within its CI.
    NonIncreasing,
}

/// `levels[point][trial]`, paired across points. `measured` is the largest
/// amount by which a step leaves its 95% interval in the wrong direction
/// (≤ 0 passes); a rising curve must also rise significantly overall.
pub fn check_shape(id: &str, name: &str, levels: &[Vec<f64>], shape: Shape) -> CriterionResult {
    let n = levels.first().map_or(0, Vec::len);
    if levels.len() < 2 || n < 2 || levels.iter().any(|l| l.len() != n) {
        return CriterionResult::new(id, name, false, f64::NAN, 0.0, "not enough paired trials".into());
    }
    let steps = paired_steps(levels);
    let means: Vec<String> = levels.iter().map(|l| format!("{:.4e}", mean_std(l).0)).collect();
    let step_text: Vec<String> = steps.iter().map(|(m, c)| format!("{m:+.3e}±{c:.1e}")).collect();
    let detail = format!("{n} trials; means [{}]; steps [{}]", means.join(", "), step_text.join(", "));
    match shape {
        Shape::NonIncreasing => {
            let worst = steps.iter().map(|&(m, c)| m - c).fold(f64::NEG_INFINITY, f64::max);
            CriterionResult::new(id, name, worst <= 0.0, worst, 0.0, detail)
        }
        Shape::RisingThenFlat => {
            let drop = steps.iter().map(|&(m, c)| -m - c).fold(f64::NEG_INFINITY, f64::max);
            let last = levels.len() - 1;
            let rise: Vec<f64> = levels[0].iter().zip(&levels[last]).map(|(a, b)| b - a).collect();
            let (rm, rs) = mean_std(&rise);
            let rise_ci = ci95(rs, n);
            let last_ci = ci95(mean_std(&levels[last]).1, n);
            let last_step = steps[steps.len() - 1].0;
            let worst = drop.max(last_step - last_ci);
            CriterionResult::new(
                id,
                name,
                worst <= 0.0 && rm > rise_ci,
                worst,
                0.0,
                format!("{detail}; overall rise {rm:.3e}±{rise_ci:.1e}; last step vs CI of last mean {last_ci:.3e}"),
            )
        }
    }
}

pub fn check_certificates(excess: &[f64], tol: f64) -> CriterionResult {
    let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    CriterionResult::new(
        "5a",
        "sampled eavesdropper terms beyond certified bounds",
        !excess.is_empty() && worst <= tol,
        worst,
        tol,
        format!("{} robust solutions", excess.len()),
    )
}

/// `pairs[i] = (robust worst-case, perfect-CSI)` in bit/s/Hz.
pub fn check_robust_below_perfect(pairs: &[(f64, f64)], tol: f64) -> CriterionResult {
    let worst = pairs.iter().map(|(r, p)| r - p).fold(f64::NEG_INFINITY, f64::max);
    CriterionResult::new(
        "5b",
        "robust rate minus perfect-CSI rate (bit/s/Hz)",
        !pairs.is_empty() && worst <= tol,
        worst,
        tol,
        format!("{} instances", pairs.len()),
    )
}

/// `ranks[i] = (rank V₀, max rank Vₖ)` after recovery.
pub fn check_rank_one(ranks: &[(usize, usize)]) -> CriterionResult {
    let bad = ranks.iter().filter(|&&(a, b)| a != 1 || b != 1).count();
    CriterionResult::new(
        "6a",
        "recovered covariances that are not rank one",
        !ranks.is_empty() && bad == 0,
        bad as f64,
        0.0,
        format!("{} solutions", ranks.len()),
    )
}

/// `changes[i] = (objective change, largest residual change)`.
pub fn check_reconstruction(changes: &[(f64, f64)], tol: f64) -> CriterionResult {
    let worst = changes.iter().map(|&(o, r)| o.max(r)).fold(0.0, f64::max);
    CriterionResult::new(
        "6b",
        "reconstruction change in objective and residuals",
        worst <= tol && !worst.is_nan(),
        worst,
        tol,
        format!("{} reconstructed solutions", changes.len()),
    )
}

/// `changes[i] = (relative trace change of the fronthaul terms, relative
/// increase of Tr(V₀))`.
pub fn check_reduction(changes: &[(f64, f64)], tol: f64) -> CriterionResult {
    let traces = changes.iter().map(|c| c.0).fold(0.0, f64::max);
    let growth = changes.iter().map(|c| c.1).fold(0.0, f64::max);
    let worst = traces.max(growth);
    CriterionResult::new(
        "6c",
        "rank reduction: fronthaul trace drift and Tr(V0) growth",
        !changes.is_empty() && worst <= tol,
        worst,
        tol,
        format!("{} reductions; trace drift {traces:.3e}, Tr(V0) growth {growth:.3e}", changes.len()),
    )
}

pub fn check_randomization(ratios: &[f64], min_ratio: f64) -> CriterionResult {
    let worst = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    CriterionResult::new(
        "6d",
        "randomized objective over relaxed objective",
        !ratios.is_empty() && worst >= min_ratio,
        worst,
        min_ratio,
        format!("{} rank-two points", ratios.len()),
    )
}

pub fn check_oracle(rel_gaps: &[f64], tol: f64) -> CriterionResult {
    let worst = rel_gaps.iter().copied().fold(0.0, f64::max);
    CriterionResult::new(
        "7a",
        "single-user rate versus brute-force MRT power sweep (relative)",
        !rel_gaps.is_empty() && worst <= tol && !worst.is_nan(),
        worst,
        tol,
        format!("{} instances", rel_gaps.len()),
    )
}

pub fn check_lmi(mismatches: usize, n: usize) -> CriterionResult {
    CriterionResult::new(
        "7b",
        "2x2 LMI builder disagreements with the Schur-complement test",
        n > 0 && mismatches == 0,
        mismatches as f64,
        0.0,
        format!("{n} random points"),
    )
}

pub fn check_determinism(a: &str, b: &str) -> CriterionResult {
    let same = a == b;
    let first_diff = a
        .lines()
        .zip(b.lines())
        .position(|(x, y)| x != y)
        .map_or(String::new(), |i| format!("; first differing line {}", i + 1));
    CriterionResult::new(
        "8",
        "byte-identical CSV under a fixed master seed",
        same && !a.is_empty(),
        if same { 0.0 } else { 1.0 },
        0.0,
        format!("{} bytes{first_diff}", a.len()),
    )
}

// ---------------------------------------------------------------------------
// measurements

/// Uniform draw from the complex ball `‖Δ‖² ≤ r2`, or from its surface.
fn ball_point<R: Rng + ?Sized>(rng: &mut R, n: usize, r2: f64, surface: bool) -> CVector {
    let d = CVector::from_fn(n, |_, _| complex_gaussian(rng, 1.0));
    let u: f64 = if surface { 1.0 } else { rng.gen::<f64>().powf(1.0 / (2 * n) as f64) };
    let norm = d.norm();
    if norm == 0.0 {
        return d;
    }
    d * C64::new(r2.max(0.0).sqrt() * u / norm, 0.0)
}

/// Largest relative excess of sampled eavesdropper terms over the certified
/// bounds, half the samples on the ball surface. Checks the relaxed point
/// against its `ζ̂`, `χ` and the returned point against the worst-case SINR.
pub fn certificate_excess<R: Rng + ?Sized>(
    inst: &Instance,
    out: &SrmOutput,
    returned: &BFSolution,
    n_samples: usize,
    rng: &mut R,
) -> f64 {
    let rel = |x: f64, bound: f64| x / bound.abs().max(1.0);
    let report = robust_report(inst, returned);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..inst.n_users {
        let (q, r) = robust_covariances(inst, &out.normalized, k);
        let (qf, rf) = robust_covariances(inst, returned, k);
        for z in 0..inst.n_eves {
            let h0 = &inst.rob_h[z];
            let r2 = inst.rob_r2[z];
            let zeta = out.aux.zeta_hat[k][z];
            let chi = out.aux.chi[k][z];
            let sinr_bound = report.sinr[k][z];
            for i in 0..n_samples {
                let h = h0 + ball_point(rng, h0.len(), r2, i % 2 == 0);
                let s = quad_form(&h, &q);
                let noise = quad_form(&h, &r) + 1.0;
                worst = worst.max(rel(s - zeta, zeta)).max(rel(chi - noise, chi));
                let g = quad_form(&h, &qf).max(0.0) / (quad_form(&h, &rf).max(0.0) + 1.0);
                worst = worst.max(rel(g - sinr_bound, sinr_bound));
            }
        }
    }
    worst
}

/// Change of the last-subproblem objective and of each constraint residual
/// under the `Vₖ` reconstruction, or `None` when every `Vₖ` is rank one.
pub fn reconstruction_change(inst: &Instance, out: &SrmOutput) -> Result<Option<(f64, f64)>> {
    let any = out
        .normalized
        .vk
        .iter()
        .map(|v| numerical_rank(v, RANK_RATIO_TOL))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .any(|r| r > 1);
    if !any {
        return Ok(None);
    }
    let (sol, _) = reconstruct_vk(inst, out).or_else(|_| reconstruct_vk_primal(inst, out))?;
    let sp = &out.subproblem;
    let x0 = sp.pack(&out.normalized, &out.aux);
    let x1 = sp.pack(&sol, &out.aux);
    let o0 = sp.objective(&x0);
    let obj = (sp.objective(&x1) - o0).abs() / o0.abs().max(1.0);
    let v0 = sp.problem.violations(&x0);
    let v1 = sp.problem.violations(&x1);
    let res = v0
        .iter()
        .zip(&v1)
        .map(|((_, a), (_, b))| (b - a).abs())
        .fold(0.0, f64::max);
    Ok(Some((obj, res)))
}

fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> CMatrix {
    let a = CMatrix::from_fn(n, rank, |_, _| complex_gaussian(rng, 1.0));
    &a * a.adjoint()
}

/// Reduction of a random `V₀` against random fronthaul channels with every
/// trace held fixed.
pub fn reduction_change(v0: &CMatrix, g: &[CVector]) -> Result<(f64, f64)> {
    let all: Vec<usize> = (0..g.len()).collect();
    let (v1, _) = reduce_rank_v0(v0, g, &all)?;
    let t0 = trace_re(v0);
    let drift = g
        .iter()
        .map(|gl| (quad_form(gl, &v1) - quad_form(gl, v0)).abs() / (gl.norm_squared() * t0))
        .fold(0.0, f64::max);
    Ok((drift, ((trace_re(&v1) - t0) / t0).max(0.0)))
}

/// Relaxed point with a rank-two `V₀` of the same trace: the returned
/// rank-one `V₀` averaged with a random direction.
pub fn rank_two_spread<R: Rng + ?Sized>(sol: &BFSolution, rng: &mut R) -> BFSolution {
    let n = sol.v0.nrows();
    let extra = outer(&CVector::from_fn(n, |_, _| complex_gaussian(rng, 1.0)));
    let v0 = (&sol.v0 + extra.scale(trace_re(&sol.v0) / trace_re(&extra))).scale(0.5);
    BFSolution::new(v0, sol.vk.clone(), sol.lambda.clone())
}

/// Bracket `(lower, upper)` of `max ‖v‖=1 min_l |g_l·v|²`, the best common
/// fronthaul gain of a unit-power CP beam.
///
/// The upper end is the minimax dual `min μ∈simplex λmax(Σ μ_l g_lᴴg_l)` over
/// a grid of `n_simplex` steps per side. The lower end is the best unit beam
/// in the span of the two leading eigenvectors at the best grid `μ`, searched
/// over an `n_beam × n_beam` grid of mixing angle and phase. An optimal CP
/// covariance of rank one exists for up to three links, so the two ends meet
/// as the grids refine.
pub fn common_gain_bracket(g: &[CVector], n_simplex: usize, n_beam: usize) -> (f64, f64) {
    if g.len() == 1 {
        let v = g[0].norm_squared();
        return (v, v);
    }
    let n = g[0].len();
    let grams: Vec<CMatrix> = g.iter().map(gram).collect();
    let mut best = (f64::INFINITY, CMatrix::zeros(n, n));
    let mut weights = vec![0usize; g.len()];
    loop {
        if weights.iter().sum::<usize>() == n_simplex {
            let mut m = CMatrix::zeros(n, n);
            for (gm, &w) in grams.iter().zip(&weights) {
                m += gm.scale(w as f64 / n_simplex as f64);
            }
            let top = herm_eigen(&m).values[0];
            if top < best.0 {
                best = (top, m);
            }
        }
        // next composition in odometer order
        let mut i = 0;
        while i < weights.len() {
            weights[i] += 1;
            if weights.iter().sum::<usize>() <= n_simplex {
                break;
            }
            weights[i] = 0;
            i += 1;
        }
        if i == weights.len() {
            break;
        }
    }
    let eig = herm_eigen(&best.1);
    let u = eig.vectors.column(0).into_owned();
    let w = eig.vectors.column(1.min(n - 1)).into_owned();
    let mut lower = 0.0f64;
    for a in 0..=n_beam {
        let theta = std::f64::consts::FRAC_PI_2 * a as f64 / n_beam as f64;
        for b in 0..n_beam {
            let phi = std::f64::consts::TAU * b as f64 / n_beam as f64;
            let v = u.scale(theta.cos()) + w.scale(theta.sin()) * C64::from_polar(1.0, phi);
            let v = v.unscale(v.norm());
            let gain = g.iter().map(|gl| row_dot(gl, &v).norm_sqr()).fold(f64::INFINITY, f64::min);
            lower = lower.max(gain);
        }
    }
    (lower, best.0)
}

/// Best single-user MRT rate (bit/s) over a uniform grid of `n_grid` BS
/// powers, subject to the fronthaul rate of the best common CP beam.
/// Returns `(lower, upper)` from the two ends of [`common_gain_bracket`].
pub fn brute_force_single_user(
    h_eff: &CVector,
    g: &[CVector],
    cfg: &SystemConfig,
    n_grid: usize,
) -> (f64, f64) {
    let w_mm = cfg.bw_mmwave;
    let w_mc = cfg.bw_microwave;
    let access = |p: f64| w_mm * (p * h_eff.norm_squared() / cfg.noise_mmwave()).ln_1p() / std::f64::consts::LN_2;
    let fh = |gain: f64| w_mc * (cfg.p_cp * gain / cfg.noise_microwave()).ln_1p() / std::f64::consts::LN_2;
    let (gain_lo, gain_hi) = common_gain_bracket(g, 120, 180);
    let best = |cap: f64| -> f64 {
        (0..n_grid)
            .map(|i| cfg.p_bs_total * i as f64 / (n_grid - 1) as f64)
            .map(access)
            .map(|a| a.min(cap))
            .fold(0.0, f64::max)
    };
    (best(fh(gain_lo)), best(fh(gain_hi)))
}

/// Disagreements of the 2×2 LMI builder with the nonlinear test
/// `a, c ≥ 0, b² ≤ ac`, and of its violation with the closed-form smallest
/// eigenvalue.
pub fn lmi_mismatches<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    let mut p = ConicProblem::new();
    let v: Vec<_> = (0..3).map(|i| p.scalar(format!("x{i}"))).collect();
    lmi_2x2(&mut p, "lmi", Affine::var(v[0]), Affine::var(v[1]), Affine::var(v[2]));
    (0..n)
        .filter(|_| {
            let (a, b, c) = (rng.gen_range(-0.2..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.2..1.0));
            let viol = p.max_violation(&[a, b, c]);
            let schur = a >= 0.0 && c >= 0.0 && a * c >= b * b;
            let lmin: f64 = 0.5 * (a + c) - (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let scale: f64 = 1.0 + a.abs() + b.abs() + c.abs();
            (viol <= 1e-12 * scale) != schur || (viol - (-lmin).max(0.0)).abs() > 1e-12 * scale
        })
        .count()
}

// ---------------------------------------------------------------------------
// driver

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceOptions {
    pub master_seed: u64,
    /// Trials per grid point.
    pub n_trials: usize,
    /// Write every experiment table and the report here.
    pub out_dir: Option<PathBuf>,
    /// Ball samples per `(user, eavesdropper)` pair.
    pub n_ball_samples: usize,
    pub n_reduction_cases: usize,
    pub n_randomized: usize,
    pub n_oracle: usize,
    pub n_lmi_points: usize,
}

impl Default for AcceptanceOptions {
    fn default() -> Self {
        AcceptanceOptions {
            master_seed: 2024,
            n_trials: 20,
            out_dir: None,
            n_ball_samples: 1000,
            n_reduction_cases: 200,
            n_randomized: 5,
            n_oracle: 10,
            n_lmi_points: 100,
        }
    }
}

struct Ctx {
    opts: AcceptanceOptions,
}

impl Ctx {
    fn spec(&self, kind: ExperimentKind, grid: Vec<f64>, variants: Vec<Variant>, cfg: SystemConfig, tag: u64) -> ExperimentSpec {
        ExperimentSpec {
            experiment: kind,
            grid,
            n_trials: self.opts.n_trials,
            variants,
            master_seed: derive_seed(self.opts.master_seed, &[tag]),
            common_random_numbers: true,
            config: cfg,
            options: RunOptions::default(),
            output: OutputSpec {
                dir: self.opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("out")),
                name: Some(format!("accept_{}", kind.name())),
            },
        }
    }

    fn run(&self, spec: &ExperimentSpec) -> Result<ExperimentResult> {
        let t = Instant::now();
        let r = run_experiment(spec)?;
        log::info!("{}: {} rows in {:.1?}", spec.name(), r.rows.len(), t.elapsed());
        if self.opts.out_dir.is_some() {
            r.write()?;
        }
        Ok(r)
    }
}

fn instance_of(spec: &ExperimentSpec, point: usize, trial: usize, variant: Variant) -> Result<(SystemConfig, Instance, super::runner::TrialData)> {
    let cfg = spec.experiment.apply(&spec.config, spec.grid[point])?;
    let data = trial_data(&cfg, spec.trial_seed(point, trial))?;
    let inst = Instance::new(variant, &data.channels, &data.bf, &cfg)?;
    Ok((cfg, inst, data))
}

/// `levels[point][trial]` of `value` for one variant, keeping trials that
/// succeeded at every grid point.
fn paired_levels(r: &ExperimentResult, variant: Variant, value: impl Fn(&TrialRow) -> Option<f64>) -> Vec<Vec<f64>> {
    let mut by_trial: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    let np = r.spec.grid.len();
    for row in r.rows.iter().filter(|x| x.variant == variant) {
        let e = by_trial.entry(row.trial).or_insert_with(|| vec![None; np]);
        e[row.point] = if row.is_ok() { value(row) } else { None };
    }
    let complete: Vec<Vec<f64>> = by_trial
        .into_values()
        .filter_map(|v| v.into_iter().collect::<Option<Vec<f64>>>())
        .collect();
    (0..np).map(|p| complete.iter().map(|t| t[p]).collect()).collect()
}

/// Pairs `(a, b)` of two variants on the same `(point, trial)`, in bit/s/Hz.
fn variant_pairs(
    r: &ExperimentResult,
    a: Variant,
    b: Variant,
    points: &[usize],
    va: impl Fn(&TrialRow) -> Option<f64>,
) -> Vec<(f64, f64)> {
    let w = r.spec.config.bw_mmwave;
    let mut out = Vec::new();
    for ra in r.rows.iter().filter(|x| x.variant == a && x.is_ok() && points.contains(&x.point)) {
        if let Some(rb) = r
            .rows
            .iter()
            .find(|x| x.variant == b && x.is_ok() && x.point == ra.point && x.trial == ra.trial)
        {
            if let Some(v) = va(ra) {
                out.push((v / w, rb.secrecy / w));
            }
        }
    }
    out
}

/// Runs every criterion. Failures are report entries; an `Err` means the
/// suite itself could not run.
pub fn run_acceptance(opts: &AcceptanceOptions) -> Result<AcceptanceReport> {
    if opts.n_trials < 2 {
        return Err(Error::Config("acceptance needs at least 2 trials per point".into()));
    }
    let start = Instant::now();
    let ctx = Ctx { opts: opts.clone() };
    let desk = SystemConfig::desk_scale();
    let mut results = Vec::new();

    // criterion 1: cold-started runs at the desk configuration
    let mut conv_cfg = desk.clone();
    conv_cfg.csi_error_ratio = vec![0.05];
    let mut conv_spec = ctx.spec(ExperimentKind::Convergence, vec![0.0], Variant::ALL.to_vec(), conv_cfg, 1);
    conv_spec.options.total_warm_start = false;
    let conv = ctx.run(&conv_spec)?;
    let traces: Vec<Vec<f64>> = conv.runs.iter().map(|r| r.surrogates.clone()).collect();
    results.push(check_monotone(&traces, MONOTONE_TOL));
    let mut converged: Vec<bool> = conv.runs.iter().map(|r| r.converged).collect();
    converged.extend(conv.rows.iter().filter(|r| !r.is_ok()).map(|_| false));
    results.push(check_convergence_share(&converged, CONVERGED_SHARE));

    // criteria 3 and 4: sweeps
    let pbs_spec = ctx.spec(
        ExperimentKind::SweepPbs,
        vec![-20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
        vec![Variant::Total, Variant::Perbs],
        desk.clone(),
        2,
    );
    let pbs = ctx.run(&pbs_spec)?;
    let mut low_cfg = desk.clone();
    low_cfg.p_bs_total = dbm_to_watt(0.0);
    let pcp = ctx.run(&ctx.spec(ExperimentKind::SweepPcp, vec![10.0, 20.0, 30.0, 40.0, 50.0], vec![Variant::Total], low_cfg, 3))?;
    let eves = ctx.run(&ctx.spec(ExperimentKind::SweepEves, vec![0.0, 1.0, 2.0, 3.0], vec![Variant::Total], desk.clone(), 4))?;
    let sigma = ctx.run(&ctx.spec(
        ExperimentKind::SweepSigma,
        vec![0.0, 0.01, 0.05],
        vec![Variant::Total, Variant::Robust],
        desk.clone(),
        5,
    ))?;

    // criterion 2 over every run
    let all: Vec<&ExperimentResult> = vec![&conv, &pbs, &pcp, &eves, &sigma];
    let rows: Vec<&TrialRow> = all.iter().flat_map(|r| r.rows.iter()).collect();
    results.push(check_power(&rows, POWER_TOL));
    results.push(check_fronthaul(&rows, FRONTHAUL_TOL));

    // criterion 3
    let all_points: Vec<usize> = (0..pbs.spec.grid.len()).collect();
    let sec = |r: &TrialRow| Some(r.secrecy);
    let mut pairs = variant_pairs(&pbs, Variant::Total, Variant::Perbs, &all_points, sec);
    results.push(check_total_vs_perbs(&pairs, PAIR_TOL));
    let low = pbs.spec.grid.iter().position(|&x| x == -10.0).unwrap_or(0);
    pairs = variant_pairs(&pbs, Variant::Total, Variant::Perbs, &[low], sec);
    let mut gap = check_mean_gap(&pairs);
    gap.detail = format!("P_BS = {} dBm; {}", pbs.spec.grid[low], gap.detail);
    results.push(gap);

    // criterion 4
    for v in [Variant::Total, Variant::Perbs] {
        results.push(check_shape(
            &format!("4a.{v}"),
            &format!("{v} rate vs P_BS rises then saturates"),
            &paired_levels(&pbs, v, sec),
            Shape::RisingThenFlat,
        ));
    }
    results.push(check_shape(
        "4b",
        "total rate vs P_CP at P_BS = 0 dBm rises then saturates",
        &paired_levels(&pcp, Variant::Total, sec),
        Shape::RisingThenFlat,
    ));
    results.push(check_shape(
        "4c",
        "total rate non-increasing in Z",
        &paired_levels(&eves, Variant::Total, sec),
        Shape::NonIncreasing,
    ));
    results.push(check_shape(
        "4d",
        "robust worst-case rate non-increasing in sigma",
        &paired_levels(&sigma, Variant::Robust, |r| r.secrecy_worst),
        Shape::NonIncreasing,
    ));

    // criterion 5: robust runs at sigma = 0.05
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, &[50]));
    let mut excess = Vec::new();
    let sig_point = sigma.spec.grid.iter().position(|&x| x == 0.05).unwrap_or(0);
    for (res, point) in [(&conv, 0usize), (&sigma, sig_point)] {
        for run in res.runs.iter().filter(|r| r.variant == Variant::Robust && r.point == point) {
            let (_, inst, _) = instance_of(&res.spec, run.point, run.trial, Variant::Robust)?;
            let returned = inst.to_normalized(&run.solution);
            excess.push(certificate_excess(&inst, &run.output, &returned, opts.n_ball_samples, &mut rng));
        }
    }
    results.push(check_certificates(&excess, CERTIFICATE_TOL));
    let worst = |r: &TrialRow| r.secrecy_worst;
    let mut robust_pairs = variant_pairs(&conv, Variant::Robust, Variant::Total, &[0], worst);
    robust_pairs.extend(variant_pairs(&sigma, Variant::Robust, Variant::Total, &[sig_point], worst));
    results.push(check_robust_below_perfect(&robust_pairs, PAIR_TOL));

    // criterion 6
    let ranks: Vec<(usize, usize)> = rows
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| (r.v0_rank_after, r.vk_rank_after_max))
        .collect();
    results.push(check_rank_one(&ranks));
    let mut changes = Vec::new();
    let mut failed_reconstructions = 0;
    for run in &conv.runs {
        let (_, inst, _) = instance_of(&conv.spec, run.point, run.trial, run.variant)?;
        match reconstruction_change(&inst, &run.output) {
            Ok(Some(c)) => changes.push(c),
            Ok(None) => {}
            Err(_) => {
                failed_reconstructions += 1;
                changes.push((f64::INFINITY, f64::INFINITY));
            }
        }
    }
    let mut rec = check_reconstruction(&changes, PRESERVE_TOL);
    rec.detail = format!("{}; {failed_reconstructions} failed", rec.detail);
    results.push(rec);

    let mut red = Vec::new();
    let mut red_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, &[60]));
    for _ in 0..opts.n_reduction_cases {
        let n = red_rng.gen_range(2..=8);
        let rank = red_rng.gen_range(2..=n);
        let links = red_rng.gen_range(1..=6);
        let v0 = random_psd(&mut red_rng, n, rank);
        let g: Vec<CVector> = (0..links)
            .map(|_| CVector::from_fn(n, |_, _| complex_gaussian(&mut red_rng, 1.0)))
            .collect();
        red.push(reduction_change(&v0, &g)?);
    }
    let mut natural = 0;
    for res in &all {
        for run in res.runs.iter().filter(|r| r.rank.as_ref().is_some_and(|k| k.v0_rank > 1)) {
            let (_, inst, _) = instance_of(&res.spec, run.point, run.trial, run.variant)?;
            red.push(reduction_change(&run.output.normalized.v0, &inst.g)?);
            natural += 1;
        }
    }
    let mut redc = check_reduction(&red, REDUCTION_TOL);
    redc.detail = format!("{}; {natural} from relaxed runs", redc.detail);
    results.push(redc);

    let mut ratios = Vec::new();
    let mut rand_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, &[70]));
    let srm = srm_options(&conv.spec.options);
    for run in conv.runs.iter().filter(|r| r.variant == Variant::Total).take(opts.n_randomized) {
        let (_, inst, _) = instance_of(&conv.spec, run.point, run.trial, Variant::Total)?;
        let spread = rank_two_spread(&inst.to_normalized(&run.solution), &mut rand_rng);
        if numerical_rank(&spread.v0, RANK_RATIO_TOL)? != 2 {
            continue;
        }
        let relaxed = normalized_rates(&inst, &spread).sum_secrecy();
        let r = randomize_v0(&inst, &spread, DEFAULT_CANDIDATES, &mut rand_rng, &srm)?;
        ratios.push(r.secrecy / relaxed);
    }
    results.push(check_randomization(&ratios, RANDOMIZATION_RATIO));

    // criterion 7
    let mut gaps = Vec::new();
    for (tag, cfg) in oracle_configs(&desk).into_iter().enumerate() {
        let mut spec = ctx.spec(ExperimentKind::Convergence, vec![0.0], vec![Variant::Total], cfg.clone(), 80 + tag as u64);
        spec.n_trials = opts.n_oracle;
        spec.output.name = Some(format!("accept_oracle_{tag}"));
        let res = ctx.run(&spec)?;
        for row in &res.rows {
            if !row.is_ok() {
                gaps.push(f64::INFINITY);
                continue;
            }
            let data = trial_data(&cfg, row.seed)?;
            let h = crate::analogbf::effective_channel(&data.channels.h[0], &data.bf)?;
            let (lo, hi) = brute_force_single_user(&h, &data.channels.g, &cfg, 4001);
            let gap = if row.secrecy < lo {
                (lo - row.secrecy) / lo
            } else if row.secrecy > hi {
                (row.secrecy - hi) / hi
            } else {
                0.0
            };
            gaps.push(gap.max((hi - lo) / hi));
        }
    }
    results.push(check_oracle(&gaps, ORACLE_REL_TOL));
    let mut lmi_rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.master_seed, &[90]));
    results.push(check_lmi(lmi_mismatches(&mut lmi_rng, opts.n_lmi_points), opts.n_lmi_points));

    // criterion 8: the same spec twice, the second time on a different pool
    let mut det = ctx.spec(ExperimentKind::SweepPbs, vec![0.0, 10.0], Variant::ALL.to_vec(), desk.clone(), 100);
    det.n_trials = 3;
    det.output.name = Some("accept_determinism".into());
    let first = run_experiment(&det)?.rows_csv()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let second = pool.install(|| run_experiment(&det))?.rows_csv()?;
    results.push(check_determinism(&first, &second));

    let elapsed = start.elapsed().as_secs_f64();
    results.insert(2, check_runtime(elapsed, TIME_LIMIT_S));
    let report = AcceptanceReport {
        master_seed: opts.master_seed,
        n_trials: opts.n_trials,
        elapsed_s: elapsed,
        criteria: results,
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("acceptance.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Single-user, eavesdropper-free configurations at the desk powers, with
/// one BS and with the desk number of BSs.
fn oracle_configs(desk: &SystemConfig) -> Vec<SystemConfig> {
    let base = SystemConfig {
        n_users: 1,
        n_eves: 0,
        ..desk.clone()
    };
    vec![SystemConfig { n_bs: 1, ..base.clone() }, base]
}
