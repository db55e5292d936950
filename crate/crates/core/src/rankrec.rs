//! Recovery of rank-one beamformers from relaxed covariance solutions.
//!
//! - [`reduce_rank_v0`]: trace-preserving rank reduction of `V₀` that keeps
//!   the fronthaul traces `Tr(G_l V₀)` fixed.
//! - [`reconstruct_vk`]: moves the part of `Vₖ` invisible to user `k` into the
//!   artificial noise, leaving a rank-one `V̂ₖ` with the same objective.
//! - [`randomize_v0`]: Gaussian randomization of `V₀` followed by a power
//!   re-optimization over fixed directions.
//!
//! All functions work on normalized points (see [`crate::srm`]).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::DualInfo;
use crate::error::{Error, Result};
use crate::linalg::{
    herm_eigen, hermitian_asymmetry, outer, principal_vector, quad_form, row_dot, CMatrix,
    CVector, C64,
};
use crate::model::complex_gaussian;
use crate::rates::BFSolution;
use crate::srm::{
    aux_from_point, fit_fronthaul, fit_power, normalized_rates, solve_structured, Instance, SrmOptions,
    SrmOutput, Structure,
};

/// Default eigenvalue-ratio threshold for numerical rank.
pub const RANK_RATIO_TOL: f64 = 1e-6;

/// Relative tolerance for detecting a binding fronthaul constraint.
pub const ACTIVE_TOL: f64 = 1e-6;

/// Default number of randomization candidates.
pub const DEFAULT_CANDIDATES: usize = 50;

/// Number of eigenvalues `λᵢ ≥ ratio_tol·λ_max`. A zero matrix has rank 0.
pub fn numerical_rank(x: &CMatrix, ratio_tol: f64) -> Result<usize> {
    let scale = x.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if hermitian_asymmetry(x) > 1e-8 * scale.max(1.0) {
        return Err(Error::NotHermitian(hermitian_asymmetry(x)));
    }
    let e = herm_eigen(x);
    let lmax = e.values.first().copied().unwrap_or(0.0);
    let lmin = e.values.last().copied().unwrap_or(0.0);
    if lmin < -1e-6 * lmax.abs().max(1e-300) && lmin < -1e-12 {
        return Err(Error::NotPsd(lmin));
    }
    if !(lmax > 0.0) {
        return Ok(0);
    }
    Ok(e.values.iter().filter(|&&v| v >= ratio_tol * lmax).count())
}

/// `X` with `XXᴴ = V` over the eigenvalues kept by [`numerical_rank`].
fn psd_factor(v: &CMatrix, ratio_tol: f64) -> CMatrix {
    let e = herm_eigen(v);
    let lmax = e.values.first().copied().unwrap_or(0.0);
    let r = e
        .values
        .iter()
        .filter(|&&x| lmax > 0.0 && x >= ratio_tol * lmax)
        .count();
    CMatrix::from_fn(v.nrows(), r, |i, j| e.vectors[(i, j)] * e.values[j].sqrt())
}

/// Fronthaul links whose constraint `Tr(G_l V₀) = 2^{ω/η} − 1` binds within
/// `tol` (relative), in normalized units.
pub fn binding_fronthaul(g: &[CVector], v0: &CMatrix, omega: f64, eta: f64, tol: f64) -> Vec<usize> {
    let level = (omega / eta).exp2() - 1.0;
    g.iter()
        .enumerate()
        .filter(|(_, g)| (quad_form(g, v0) - level).abs() <= tol * level.abs().max(1.0))
        .map(|(l, _)| l)
        .collect()
}

/// Real coordinates of an `R × R` Hermitian matrix: the diagonal, then the
/// real and imaginary parts of each upper entry in row order.
fn hermitian_from_params(p: &[f64], r: usize) -> CMatrix {
    let mut m = CMatrix::zeros(r, r);
    for i in 0..r {
        m[(i, i)] = C64::new(p[i], 0.0);
    }
    let mut idx = r;
    for i in 0..r {
        for j in i + 1..r {
            let z = C64::new(p[idx], p[idx + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            idx += 2;
        }
    }
    m
}

/// Row of the real linear map `Γ ↦ Tr(A·Γ)` in the coordinates of
/// [`hermitian_from_params`].
fn trace_row(a: &CMatrix) -> Vec<f64> {
    let r = a.nrows();
    let mut row: Vec<f64> = (0..r).map(|i| a[(i, i)].re).collect();
    for i in 0..r {
        for j in i + 1..r {
            row.push(2.0 * a[(i, j)].re);
            row.push(2.0 * a[(i, j)].im);
        }
    }
    row
}

/// A nonzero null vector of `rows` by reduced row echelon form: the first
/// free column is set to one and the pivots follow.
fn null_vector(rows: &[Vec<f64>], n: usize) -> Option<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let scale = m.iter().flatten().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m.len() {
            break;
        }
        let best = (row..m.len()).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[best][col].abs() <= tol {
            continue;
        }
        m.swap(row, best);
        let p = m[row][col];
        for x in &mut m[row] {
            *x /= p;
        }
        for i in 0..m.len() {
            if i != row {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[row][j];
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let free = (0..n).find(|c| !pivots.contains(c))?;
    let mut x = vec![0.0; n];
    x[free] = 1.0;
    for (i, &pc) in pivots.iter().enumerate() {
        x[pc] = -m[i][free];
    }
    Some(x)
}

/// Reduces the rank of `V₀` while keeping `Tr(G_l V₀)` fixed for every `l` in
/// `active` and never increasing `Tr(V₀)`, until `rank² ≤ |active|`.
/// Returns the reduced matrix and the number of passes.
pub fn reduce_rank_v0(v0: &CMatrix, g: &[CVector], active: &[usize]) -> Result<(CMatrix, usize)> {
    if active.is_empty() {
        return Err(Error::Recovery("rank reduction needs at least one binding constraint".into()));
    }
    if let Some(&l) = active.iter().find(|&&l| l >= g.len()) {
        return Err(Error::Dimension(format!("active index {l} for {} links", g.len())));
    }
    numerical_rank(v0, RANK_RATIO_TOL)?;
    // every positive eigenvalue is kept so the traces are preserved exactly
    let mut x = psd_factor(v0, 1e-14);
    let mut passes = 0;
    while x.ncols().pow(2) > active.len() {
        let r = x.ncols();
        let rows: Vec<Vec<f64>> = active
            .iter()
            .map(|&l| {
                let w = CVector::from_fn(r, |j, _| (0..x.nrows()).map(|i| g[l][i] * x[(i, j)]).sum());
                trace_row(&CMatrix::from_fn(r, r, |i, j| w[i].conj() * w[j]))
            })
            .collect();
        let p = null_vector(&rows, r * r).ok_or_else(|| {
            Error::Recovery(format!("no nonzero solution with rank {r} and {} equations", rows.len()))
        })?;
        let mut gamma = hermitian_from_params(&p, r);
        // sign chosen so the trace cannot grow; a positive eigenvalue then exists
        let xhx = x.adjoint() * &x;
        if (&xhx * &gamma).trace().re < 0.0 {
            gamma = -gamma;
        }
        let e = herm_eigen(&gamma);
        let rho = e.values[0];
        if !(rho > 0.0) {
            return Err(Error::Recovery("reduction direction has no positive eigenvalue".into()));
        }
        let step = CMatrix::identity(r, r) - gamma.unscale(rho);
        // exact factor of I − Γ/ϱ without the eigenvalue set to zero
        let es = herm_eigen(&step);
        let keep: Vec<usize> = (0..r).filter(|&j| j != r - 1 && es.values[j] > 0.0).collect();
        let w = CMatrix::from_fn(r, keep.len(), |i, j| es.vectors[(i, keep[j])] * es.values[keep[j]].sqrt());
        x = &x * w;
        passes += 1;
    }
    Ok((&x * x.adjoint(), passes))
}

/// How a user covariance was brought to rank one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "path")]
pub enum VkPath {
    /// Already rank one (or zero).
    RankOne,
    /// Null space of `Yₖ` certified by the multipliers; `null_dim` directions.
    DualNullSpace { null_dim: usize, residual: f64 },
    /// The multipliers did not certify the null space; the same projection
    /// was applied and checked directly.
    PrimalProjection { residual: f64 },
}

/// How `V₀` was brought to rank one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "path")]
pub enum V0Path {
    RankOne,
    Reduced { passes: usize },
    Randomized { candidates: usize, feasible: usize, best: usize },
}

/// Relative tolerance for `‖h̄ₖΥₖ‖ ≤ tol·‖h̄ₖ‖`.
pub const NULL_SPACE_TOL: f64 = 1e-4;

/// Eigenvalue ratio below which a direction counts as in the null space of `Yₖ`.
pub const Y_NULL_RATIO: f64 = 1e-5;

/// `Yₖ = Ωₖ + ψ₄ H̄ₖ` from the multipliers of the last subproblem.
pub fn y_matrix(inst: &Instance, duals: &DualInfo, k: usize) -> Result<CMatrix> {
    let omega = duals.matrix(&format!("omega_v{k}"))?;
    let z = duals.vector(&format!("psi4_{k}"))?;
    Ok(omega + inst.h_gram[k].scale(z[0] + z[3]))
}

/// Orthonormal basis of the numerical null space of `Yₖ` and the largest
/// relative leakage `‖h̄ₖ d‖/‖h̄ₖ‖` over its columns.
pub fn y_null_space(y: &CMatrix, h: &CVector) -> (CMatrix, f64) {
    let e = herm_eigen(y);
    let scale = e.values.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cols: Vec<usize> = (0..e.values.len())
        .filter(|&j| e.values[j].abs() <= Y_NULL_RATIO * scale.max(1e-300))
        .collect();
    let basis = CMatrix::from_fn(y.nrows(), cols.len(), |i, j| e.vectors[(i, cols[j])]);
    let hn = h.norm().max(1e-300);
    let leak = (0..cols.len())
        .map(|j| row_dot(h, &basis.column(j).into_owned()).norm() / hn)
        .fold(0.0, f64::max);
    (basis, leak)
}

/// `V̂ₖ = Vₖh̄ᴴh̄Vₖ / (h̄Vₖh̄ᴴ)`: the rank-one part of `Vₖ` seen by user `k`.
pub fn signal_component(vk: &CMatrix, h: &CVector) -> CMatrix {
    let q = quad_form(h, vk);
    if !(q > 0.0) {
        return CMatrix::zeros(vk.nrows(), vk.ncols());
    }
    let u = vk * h.map(|c| c.conj());
    outer(&u).unscale(q)
}

/// Replaces `Vₖ` by its signal component and adds the remainder to `Λ`.
pub fn absorb_into_noise(sol: &BFSolution, inst: &Instance, k: usize) -> BFSolution {
    let mut out = sol.clone();
    let hat = signal_component(&sol.vk[k], &inst.hbar[k]);
    out.lambda = &sol.lambda + (&sol.vk[k] - &hat);
    out.vk[k] = hat;
    out.v0_vec = None;
    out.vk_vec = None;
    out
}

/// Objective and worst violation of a point in the last subproblem of `out`,
/// evaluated with the auxiliary values of the original iterate.
fn subproblem_check(out: &SrmOutput, sol: &BFSolution) -> (f64, f64) {
    let x = out.subproblem.pack(sol, &out.aux);
    (out.subproblem.objective(&x), out.subproblem.max_violation(&x))
}

/// Tolerance on the change of the surrogate objective and of the constraint
/// residuals under a reconstruction step.
pub const PRESERVE_TOL: f64 = 1e-6;

/// Rank-one reconstruction of every `Vₖ` of a converged run. Returns the
/// adjusted normalized point and the path taken per user.
pub fn reconstruct_vk(inst: &Instance, out: &SrmOutput) -> Result<(BFSolution, Vec<VkPath>)> {
    let (obj0, viol0) = subproblem_check(out, &out.normalized);
    let mut sol = out.normalized.clone();
    let mut paths = Vec::with_capacity(inst.n_users);
    for k in 0..inst.n_users {
        if numerical_rank(&sol.vk[k], RANK_RATIO_TOL)? <= 1 {
            paths.push(VkPath::RankOne);
            continue;
        }
        let y = y_matrix(inst, &out.duals, k)?;
        let (basis, leak) = y_null_space(&y, &inst.hbar[k]);
        if leak > NULL_SPACE_TOL {
            return Err(Error::Recovery(format!(
                "user {k}: null space of Y leaks {leak:.3e} of the channel"
            )));
        }
        sol = absorb_into_noise(&sol, inst, k);
        paths.push(VkPath::DualNullSpace {
            null_dim: basis.ncols(),
            residual: leak,
        });
    }
    let (obj1, viol1) = subproblem_check(out, &sol);
    if (obj1 - obj0).abs() > PRESERVE_TOL * obj0.abs().max(1.0) || viol1 > viol0.max(0.0) + PRESERVE_TOL {
        return Err(Error::Recovery(format!(
            "reconstruction changed the objective by {:.3e} and the violation to {viol1:.3e}",
            obj1 - obj0
        )));
    }
    Ok((sol, paths))
}

/// Same projection as [`reconstruct_vk`] without the multiplier certificate,
/// checked directly against the last subproblem.
pub fn reconstruct_vk_primal(inst: &Instance, out: &SrmOutput) -> Result<(BFSolution, Vec<VkPath>)> {
    let (obj0, viol0) = subproblem_check(out, &out.normalized);
    let mut sol = out.normalized.clone();
    let mut paths = Vec::with_capacity(inst.n_users);
    for k in 0..inst.n_users {
        if numerical_rank(&sol.vk[k], RANK_RATIO_TOL)? <= 1 {
            paths.push(VkPath::RankOne);
            continue;
        }
        sol = absorb_into_noise(&sol, inst, k);
        paths.push(VkPath::PrimalProjection { residual: 0.0 });
    }
    let (obj1, viol1) = subproblem_check(out, &sol);
    let residual = (obj1 - obj0).abs().max(viol1 - viol0.max(0.0));
    if residual > PRESERVE_TOL * obj0.abs().max(1.0) {
        return Err(Error::Recovery(format!("projection residual {residual:.3e}")));
    }
    for p in &mut paths {
        if let VkPath::PrimalProjection { residual: r } = p {
            *r = residual;
        }
    }
    Ok((sol, paths))
}

/// `v₀ⁱ = X·D^{1/2}·sᵢ` with `V₀ = XDXᴴ` and `sᵢ ~ CN(0, I)`.
pub fn draw_v0_candidates<R: Rng + ?Sized>(v0: &CMatrix, n: usize, rng: &mut R) -> Vec<CVector> {
    let e = herm_eigen(v0);
    let dim = v0.nrows();
    let a = CMatrix::from_fn(dim, dim, |i, j| e.vectors[(i, j)] * e.values[j].max(0.0).sqrt());
    (0..n)
        .map(|_| {
            let s = CVector::from_fn(dim, |_, _| complex_gaussian(rng, 1.0));
            &a * s
        })
        .collect()
}

/// Stream direction used when the relaxed covariance is zero.
fn direction(vk: &CMatrix, h: &CVector) -> CVector {
    let v = principal_vector(vk);
    if v.norm() > 0.0 {
        v
    } else {
        h.map(|c| c.conj())
    }
}

/// Outcome of the randomization step.
#[derive(Debug, Clone)]
pub struct Randomized {
    /// Best normalized point (rank-one `V₀` and `Vₖ`).
    pub solution: BFSolution,
    pub secrecy: f64,
    pub surrogate: f64,
    pub best: usize,
    pub feasible: usize,
}

/// Gaussian randomization of `V₀` with power re-optimization: for every
/// candidate direction the convex-concave loop runs over the scalar powers of
/// fixed directions `v₀ⁱ`, `vₖ` (principal vectors of `sol.vk`) and a free `Λ`.
/// The candidate with the highest sum secrecy rate is returned.
pub fn randomize_v0<R: Rng + ?Sized>(
    inst: &Instance,
    sol: &BFSolution,
    n_candidates: usize,
    rng: &mut R,
    opts: &SrmOptions,
) -> Result<Randomized> {
    if n_candidates == 0 {
        return Err(Error::Config("at least one randomization candidate is needed".into()));
    }
    let cands = if numerical_rank(&sol.v0, RANK_RATIO_TOL)? <= 1 {
        vec![principal_vector(&sol.v0)]
    } else {
        draw_v0_candidates(&sol.v0, n_candidates, rng)
    };
    let dirs: Vec<CVector> = sol
        .vk
        .iter()
        .zip(&inst.hbar)
        .map(|(v, h)| direction(v, h))
        .collect();
    let results: Vec<Option<(BFSolution, f64, f64)>> = cands
        .par_iter()
        .map(|c| {
            let run = || -> Result<(BFSolution, f64, f64)> {
                let nrm = c.norm();
                if !(nrm > 0.0) {
                    return Err(Error::Domain("zero candidate".into()));
                }
                let u = c.unscale(nrm);
                let vk = sol
                    .vk
                    .iter()
                    .zip(&dirs)
                    .map(|(v, d)| {
                        let dn = d.unscale(d.norm());
                        outer(&dn).scale(quad_form(&dn.map(|c| c.conj()), v).max(0.0))
                    })
                    .collect();
                let start = fit_fronthaul(inst, &BFSolution::new(outer(&u), vk, sol.lambda.clone()));
                let aux = aux_from_point(inst, &start)?;
                let structure = Structure::Restricted {
                    v0: u,
                    vk: dirs.clone(),
                };
                let out = solve_structured(inst, (start, aux), &structure, opts)?;
                let secrecy = normalized_rates(inst, &out.normalized).sum_secrecy();
                let surrogate = out.surrogate();
                Ok((out.normalized, secrecy, surrogate))
            };
            match run() {
                Ok(r) => Some(r),
                Err(e) => {
                    log::debug!("randomization candidate failed: {e}");
                    None
                }
            }
        })
        .collect();
    let feasible = results.iter().filter(|r| r.is_some()).count();
    let (best, (solution, secrecy, surrogate)) = results
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|r| (i, r)))
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .ok_or_else(|| Error::Recovery("every randomization candidate failed".into()))?;
    Ok(Randomized {
        solution: with_vectors(&solution),
        secrecy,
        surrogate,
        best,
        feasible,
    })
}

/// Attaches principal factors to a point whose covariances are rank one.
pub fn with_vectors(sol: &BFSolution) -> BFSolution {
    let mut out = sol.clone();
    let v0 = principal_vector(&sol.v0);
    let vk: Vec<CVector> = sol.vk.iter().map(principal_vector).collect();
    out.v0 = outer(&v0);
    out.vk = vk.iter().map(outer).collect();
    out.v0_vec = Some(v0);
    out.vk_vec = Some(vk);
    out
}

/// Largest violation of the power budgets, the CP budget and the fronthaul
/// cap `Σₖ Rₖ ≤ min_l R_l` of a normalized point (rates in bit/s/Hz).
pub fn feasibility_residual(inst: &Instance, sol: &BFSolution) -> f64 {
    let power = if inst.is_per_bs() {
        (0..inst.n_bs)
            .map(|l| sol.bs_load(l) - inst.budgets[l])
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        sol.bs_power() - inst.budgets[0]
    };
    let rates = normalized_rates(inst, sol);
    let cap = rates.sum_access() - rates.fronthaul_min();
    power.max(sol.cp_power() - 1.0).max(cap).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub v0_rank: usize,
    pub vk_ranks: Vec<usize>,
    pub binding_fronthaul: Vec<usize>,
    pub v0_path: V0Path,
    pub vk_paths: Vec<VkPath>,
    pub v0_rank_after: usize,
    pub vk_ranks_after: Vec<usize>,
    /// Surrogate objective (bit/s/Hz) of the relaxed point and of the recovered one.
    pub objective_before: f64,
    pub objective_after: f64,
    /// Design sum secrecy rate (bit/s/Hz) before and after recovery.
    pub secrecy_before: f64,
    pub secrecy_after: f64,
    pub residual_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub n_candidates: usize,
    /// Loop settings for the power re-optimization of each candidate.
    pub srm: SrmOptions,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            n_candidates: DEFAULT_CANDIDATES,
            srm: SrmOptions::default(),
        }
    }
}

/// Full recovery of a relaxed run: `Vₖ` reconstruction (multiplier-certified
/// when possible), rank reduction of `V₀` over all fronthaul traces, and
/// randomization if `V₀` is still not rank one. Returns the normalized
/// rank-one point with its factors.
pub fn recover<R: Rng + ?Sized>(
    inst: &Instance,
    out: &SrmOutput,
    opts: &RecoveryOptions,
    rng: &mut R,
) -> Result<(BFSolution, RankReport)> {
    let relaxed = &out.normalized;
    let v0_rank = numerical_rank(&relaxed.v0, RANK_RATIO_TOL)?;
    let vk_ranks = relaxed
        .vk
        .iter()
        .map(|v| numerical_rank(v, RANK_RATIO_TOL))
        .collect::<Result<Vec<_>>>()?;
    let binding = binding_fronthaul(&inst.g, &relaxed.v0, out.aux.omega, inst.eta, ACTIVE_TOL);
    let objective_before = out.surrogate();
    let secrecy_before = normalized_rates(inst, relaxed).sum_secrecy();

    let (mut sol, vk_paths) = match reconstruct_vk(inst, out) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("certified reconstruction unavailable ({e}); projecting directly");
            reconstruct_vk_primal(inst, out)?
        }
    };
    let all: Vec<usize> = (0..inst.n_bs).collect();
    let (v0_path, objective_after) = if v0_rank <= 1 {
        (V0Path::RankOne, subproblem_check(out, &sol).0)
    } else {
        let (v0, passes) = reduce_rank_v0(&sol.v0, &inst.g, &all)?;
        sol.v0 = v0;
        if numerical_rank(&sol.v0, RANK_RATIO_TOL)? <= 1 {
            (V0Path::Reduced { passes }, subproblem_check(out, &sol).0)
        } else {
            let r = randomize_v0(inst, &sol, opts.n_candidates, rng, &opts.srm)?;
            sol = r.solution;
            (
                V0Path::Randomized {
                    candidates: opts.n_candidates,
                    feasible: r.feasible,
                    best: r.best,
                },
                r.surrogate,
            )
        }
    };
    // an inexact solve may overshoot a budget slightly, and dropping
    // eigenvalues below the rank threshold may shave the fronthaul
    let sol = with_vectors(&fit_fronthaul(inst, &fit_power(inst, &with_vectors(&sol))));
    let report = RankReport {
        v0_rank,
        vk_ranks,
        binding_fronthaul: binding,
        v0_path,
        vk_paths,
        v0_rank_after: numerical_rank(&sol.v0, RANK_RATIO_TOL)?,
        vk_ranks_after: sol
            .vk
            .iter()
            .map(|v| numerical_rank(v, RANK_RATIO_TOL))
            .collect::<Result<Vec<_>>>()?,
        objective_before,
        objective_after,
        secrecy_before,
        secrecy_after: normalized_rates(inst, &sol).sum_secrecy(),
        residual_after: feasibility_residual(inst, &sol),
    };
    Ok((sol, report))
}

#[cfg(test)]
mod tests;
