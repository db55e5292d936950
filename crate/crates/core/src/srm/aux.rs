use crate::analogbf::AnalogBeamformer;
use crate::error::{Error, Result};
use crate::linalg::{gram, quad_form, CMatrix, CVector, C64};
use crate::model::{ChannelSet, SystemConfig};
use crate::rates::BFSolution;

use super::robust::{robust_covariances, sproc_lower_bound, sproc_upper_bound};
use super::{AuxState, Instance, Variant, BETA_FLOOR};

/// Share of the BS budget given to the data streams in the seed; the rest is
/// artificial noise.
const SEED_DATA_SHARE: f64 = 0.9;

fn signal_interference(sol: &BFSolution, h: &CVector, k: usize) -> (f64, f64) {
    let s = quad_form(h, &sol.vk[k]).max(0.0);
    let i = sol
        .vk
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, v)| quad_form(h, v))
        .sum::<f64>()
        + quad_form(h, &sol.lambda);
    (s, i.max(0.0))
}

fn sum_access_rate(inst: &Instance, sol: &BFSolution) -> f64 {
    (0..inst.n_users)
        .map(|k| {
            let (s, i) = signal_interference(sol, &inst.hbar[k], k);
            (s / (i + 1.0)).ln_1p() / std::f64::consts::LN_2
        })
        .sum()
}

/// `η·log₂(1 + min_l Tr(G̃_l Ṽ₀))`.
fn fronthaul_capacity(inst: &Instance, v0: &CMatrix) -> f64 {
    let snr = inst
        .g
        .iter()
        .map(|g| quad_form(g, v0).max(0.0))
        .fold(f64::INFINITY, f64::min);
    inst.eta * snr.ln_1p() / std::f64::consts::LN_2
}

/// Scales the BS covariances down to the BS budgets and `V₀` down to the CP
/// budget, removing the small excess an inexact interior-point solve leaves.
/// Lowering `V₀` can lower the fronthaul capacity, so [`fit_fronthaul`]
/// should follow.
pub fn fit_power(inst: &Instance, sol: &BFSolution) -> BFSolution {
    let mut t = sol.clone();
    let ratio = if inst.is_per_bs() {
        (0..inst.n_bs)
            .map(|l| sol.bs_load(l) / inst.budgets[l])
            .fold(0.0, f64::max)
    } else {
        sol.bs_power() / inst.budgets[0]
    };
    if ratio > 1.0 {
        for v in &mut t.vk {
            *v = v.unscale(ratio);
        }
        t.lambda = t.lambda.unscale(ratio);
    }
    let cp = sol.cp_power();
    if cp > 1.0 {
        t.v0 = t.v0.unscale(cp);
    }
    t
}

/// Scales all `Vₖ` by the largest factor in `[0, 1]` that keeps the access
/// sum rate within the fronthaul capacity of `V₀`.
pub fn fit_fronthaul(inst: &Instance, sol: &BFSolution) -> BFSolution {
    let cap = fronthaul_capacity(inst, &sol.v0);
    if sum_access_rate(inst, sol) <= cap {
        return sol.clone();
    }
    let scaled = |s: f64| {
        let mut t = sol.clone();
        for v in &mut t.vk {
            *v = v.scale(s);
        }
        t
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if sum_access_rate(inst, &scaled(mid)) <= cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    scaled(lo)
}

/// Auxiliary variables evaluated from their definitions at a normalized point
/// (signal/interference ratios, their splits, the fronthaul rate and, for the
/// robust variant, the tightest S-procedure certificates).
pub fn aux_from_point(inst: &Instance, sol: &BFSolution) -> Result<AuxState> {
    let (kk, zz) = (inst.n_users, inst.n_eves);
    if sol.vk.len() != kk {
        return Err(Error::Dimension(format!("{} streams for {kk} users", sol.vk.len())));
    }
    let mut a = AuxState {
        omega: fronthaul_capacity(inst, &sol.v0),
        ..Default::default()
    };
    for k in 0..kk {
        let (s, i) = signal_interference(sol, &inst.hbar[k], k);
        let sinr = s / (i + 1.0);
        a.beta.push(sinr.max(BETA_FLOOR));
        a.eps.push(i + 1.0);
        a.tau.push(sinr);
        a.theta.push(sinr * i);
        a.lambda.push((sinr * i).sqrt());
        if inst.variant.is_robust() {
            let (q, r) = robust_covariances(inst, sol, k);
            let mut rows = [(); 6].map(|_| Vec::with_capacity(zz));
            for z in 0..zz {
                let he = &inst.rob_h[z];
                let (zeta, kappa) = sproc_upper_bound(&q, he, inst.rob_r2[z]);
                let (low, ups) = sproc_lower_bound(&r, he, inst.rob_r2[z]);
                let zeta = zeta.max(0.0);
                let chi = low + 1.0;
                if !(chi > 0.0) {
                    return Err(Error::Domain(format!(
                        "nonpositive certified interference bound {chi} for ({k}, {z})"
                    )));
                }
                rows[0].push(zeta / chi);
                rows[1].push(zeta);
                rows[2].push(zeta.sqrt());
                rows[3].push(chi);
                rows[4].push(kappa);
                rows[5].push(ups);
            }
            let [g, zt, m, c, kp, up] = rows;
            a.gamma_hat.push(g);
            a.zeta_hat.push(zt);
            a.mu_hat.push(m);
            a.chi.push(c);
            a.kappa.push(kp);
            a.upsilon.push(up);
        } else {
            let mut g = Vec::with_capacity(zz);
            let mut zt = Vec::with_capacity(zz);
            let mut m = Vec::with_capacity(zz);
            for he in &inst.hebar {
                let (se, ie) = signal_interference(sol, he, k);
                let gamma = se / (ie + 1.0);
                g.push(gamma);
                zt.push(gamma * ie);
                m.push((gamma * ie).sqrt());
            }
            a.gamma.push(g);
            a.zeta.push(zt);
            a.mu.push(m);
        }
    }
    Ok(a)
}

/// Feasible starting point: MRT data covariances on 90% of the budget,
/// isotropic artificial noise on the rest, isotropic `V₀` at full CP power,
/// data scaled down if the fronthaul cap would be violated.
/// Returns the normalized point and its auxiliary variables.
pub fn init_aux_instance(inst: &Instance) -> Result<(BFSolution, AuxState)> {
    let (kk, ll) = (inst.n_users, inst.n_bs);
    let dirs: Vec<CMatrix> = inst
        .hbar
        .iter()
        .map(|h| {
            let n2 = h.norm_squared();
            if !(n2 > 0.0) {
                return Err(Error::Infeasible("all-zero user channel".into()));
            }
            Ok(gram(h).unscale(n2))
        })
        .collect::<Result<_>>()?;
    let (vk, lambda) = if inst.is_per_bs() {
        // largest common stream power keeping every BS load within its data share
        let p = (0..ll)
            .map(|l| {
                let load: f64 = dirs.iter().map(|d| d[(l, l)].re).sum();
                if load > 0.0 {
                    SEED_DATA_SHARE * inst.budgets[l] / load
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min);
        let lambda = CMatrix::from_diagonal(&CVector::from_iterator(
            ll,
            inst.budgets.iter().map(|b| C64::new((1.0 - SEED_DATA_SHARE) * b, 0.0)),
        ));
        (dirs.iter().map(|d| d.scale(p)).collect::<Vec<_>>(), lambda)
    } else {
        let total = inst.budgets[0];
        let p = SEED_DATA_SHARE * total / kk as f64;
        let lambda = CMatrix::identity(ll, ll).scale((1.0 - SEED_DATA_SHARE) * total / ll as f64);
        (dirs.iter().map(|d| d.scale(p)).collect(), lambda)
    };
    let v0 = CMatrix::identity(inst.n_cp, inst.n_cp).scale(1.0 / inst.n_cp as f64);
    let sol = fit_fronthaul(inst, &BFSolution::new(v0, vk, lambda));
    let aux = aux_from_point(inst, &sol)?;
    Ok((sol, aux))
}

/// Starting point for `variant` on raw channels (normalized units).
pub fn init_aux(
    variant: Variant,
    channels: &ChannelSet,
    bf: &AnalogBeamformer,
    cfg: &SystemConfig,
) -> Result<(BFSolution, AuxState)> {
    init_aux_instance(&Instance::new(variant, channels, bf, cfg)?)
}
