use serde::{Deserialize, Serialize};

use crate::conic::{sproc_row_scale, DualInfo};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, CMatrix, C64};
use crate::rankrec::{numerical_rank, RANK_RATIO_TOL};
use crate::rates::BFSolution;

use super::Instance;

/// Tolerance on the sign of a multiplier.
pub const MULTIPLIER_TOL: f64 = 1e-7;

/// Which sufficient rank conditions hold at a subproblem optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub psi2: f64,
    /// `ψ₂ > 0`: `rank(V₀) ≤ L`.
    pub v0_rank_bounded: bool,
    /// Some fronthaul channel is strictly weaker than every other one.
    pub unique_weakest_fronthaul: bool,
    /// Both conditions above: `rank(V₀) = 1`.
    pub v0_rank_one: bool,
    /// `ψ₁` (one entry, or one per BS under per-BS budgets).
    pub psi1: Vec<f64>,
    pub psi1_positive: bool,
    /// `ψ₃ⁱ − ψ₈ⁱ` per user.
    pub psi3_minus_psi8: Vec<f64>,
    /// Perfect CSI: `ψ₅^{z,k} − Σ_{i≠k} ψ₆^{z,i}`, indexed `[k][z]`.
    pub eve_weights: Vec<Vec<f64>>,
    /// Robust: smallest eigenvalue of `FᴴĤᴴT¹ĤF − Σ_{i≠k} FᴴĤᴴT²ĤF`, indexed `[k][z]`.
    pub robust_min_eig: Vec<Vec<f64>>,
    /// All conditions for `rank(Vₖ) = 1` hold.
    pub vk_rank_one: bool,
    pub v0_rank: usize,
    pub vk_ranks: Vec<usize>,
    /// Every measured rank is one although a certificate failed.
    pub rank_one_without_certificate: bool,
}

/// Multiplier of a PSD block as a complex matrix (scalar blocks become 1×1).
pub(crate) fn dual_matrix(d: &DualInfo, tag: &str) -> Result<CMatrix> {
    if let Ok(m) = d.matrix(tag) {
        return Ok(m.clone());
    }
    let s = d.scalar(tag)?;
    Ok(CMatrix::from_element(1, 1, C64::new(s, 0.0)))
}

/// Multiplier of the `(1,1)` entry of a 2×2 LMI.
fn lmi_corner(d: &DualInfo, tag: &str) -> Result<f64> {
    let m = d.matrix(tag)?;
    if m.nrows() != 2 {
        return Err(Error::Dimension(format!("{tag}: expected a 2x2 multiplier")));
    }
    Ok(m[(1, 1)].re)
}

/// `Fᴴ·Ĥᴴ·T·Ĥ·F` with `Ĥ = [I; ĥ]`, formed in the robust LMI domain from the
/// multiplier of a row-scaled S-procedure block; a 1×1 `T` stands for the
/// degenerate ball where only the nominal channel enters.
pub(crate) fn lift(inst: &Instance, t: &CMatrix, z: usize) -> CMatrix {
    let he = &inst.rob_h[z];
    let p = he.len();
    let d = sproc_row_scale(he);
    let hhat = if t.nrows() == 1 {
        CMatrix::from_fn(1, p, |_, j| he[j])
    } else {
        CMatrix::from_fn(p + 1, p, |i, j| {
            if i < p {
                if i == j {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            } else {
                he[j] * d
            }
        })
    };
    let a = match &inst.rob_map {
        None => hhat,
        Some(f) => &hhat * f,
    };
    a.adjoint() * t * a
}

/// Evaluates the sufficient rank-one conditions from the multipliers of the
/// last subproblem and reports them next to the measured ranks of `sol`.
pub fn check_rank_certificates(
    inst: &Instance,
    duals: &DualInfo,
    sol: &BFSolution,
) -> Result<CertificateReport> {
    let (kk, zz) = (inst.n_users, inst.n_eves);
    let psi2 = duals.scalar("psi2")?;
    let norms: Vec<f64> = inst.g.iter().map(|g| g.norm()).collect();
    let unique_weakest = norms.iter().enumerate().any(|(l, &n)| {
        norms
            .iter()
            .enumerate()
            .all(|(j, &m)| j == l || n < m * (1.0 - 1e-12))
    });
    let psi1 = if inst.is_per_bs() {
        (0..inst.n_bs)
            .map(|l| duals.scalar(&format!("psi1_{l}")))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![duals.scalar("psi1")?]
    };
    let psi1_positive = psi1.iter().all(|&p| p > MULTIPLIER_TOL);
    let psi3_minus_psi8 = (0..kk)
        .map(|i| Ok(duals.scalar(&format!("psi3_{i}"))? - lmi_corner(duals, &format!("psi8_{i}"))?))
        .collect::<Result<Vec<_>>>()?;
    let mut eve_weights = Vec::new();
    let mut robust_min_eig = Vec::new();
    if inst.variant.is_robust() {
        for k in 0..kk {
            let mut row = Vec::with_capacity(zz);
            for z in 0..zz {
                let mut m = lift(inst, &dual_matrix(duals, &format!("t1_{z}_{k}"))?, z);
                for i in (0..kk).filter(|&i| i != k) {
                    m -= lift(inst, &dual_matrix(duals, &format!("t2_{z}_{i}"))?, z);
                }
                row.push(min_eigenvalue(&m));
            }
            robust_min_eig.push(row);
        }
    } else {
        let psi6 = (0..kk)
            .map(|i| {
                (0..zz)
                    .map(|z| lmi_corner(duals, &format!("psi6_{z}_{i}")))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        for k in 0..kk {
            let mut row = Vec::with_capacity(zz);
            for z in 0..zz {
                let other: f64 = (0..kk).filter(|&i| i != k).map(|i| psi6[i][z]).sum();
                row.push(duals.scalar(&format!("psi5_{z}_{k}"))? - other);
            }
            eve_weights.push(row);
        }
    }
    let nonneg = |v: f64| v >= -MULTIPLIER_TOL;
    let vk_rank_one = psi1_positive
        && psi3_minus_psi8.iter().all(|&v| nonneg(v))
        && eve_weights.iter().flatten().all(|&v| nonneg(v))
        && robust_min_eig.iter().flatten().all(|&v| nonneg(v));
    let v0_rank = numerical_rank(&sol.v0, RANK_RATIO_TOL)?;
    let vk_ranks = sol
        .vk
        .iter()
        .map(|v| numerical_rank(v, RANK_RATIO_TOL))
        .collect::<Result<Vec<_>>>()?;
    let v0_rank_bounded = psi2 > MULTIPLIER_TOL;
    let v0_rank_one = v0_rank_bounded && unique_weakest;
    let all_one = v0_rank <= 1 && vk_ranks.iter().all(|&r| r <= 1);
    Ok(CertificateReport {
        psi2,
        v0_rank_bounded,
        unique_weakest_fronthaul: unique_weakest,
        v0_rank_one,
        psi1,
        psi1_positive,
        psi3_minus_psi8,
        eve_weights,
        robust_min_eig,
        vk_rank_one,
        v0_rank,
        vk_ranks,
        rank_one_without_certificate: all_one && !(v0_rank_one && vk_rank_one),
    })
}
