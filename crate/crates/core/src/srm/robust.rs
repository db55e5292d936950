//! Closed-form S-procedure certificates over the eavesdropper error ball
//! `‖Δh‖² ≤ σ‖ĥ‖²`, and worst-case eavesdropper SINR evaluation.
//!
//! For a Hermitian `P = U·diag(p)·Uᴴ` and `c = ĥPU`, the upper-bound LMI
//! `[[κI − P, −(ĥP)ᴴ], [−ĥP, u − ĥPĥᴴ − κr²]] ⪰ 0` holds iff `κI ≻ P` (up to
//! directions with `cᵢ = 0`) and `u ≥ ĥPĥᴴ + κr² + Σ |cᵢ|²/(κ − pᵢ)`. The
//! smallest certified bound therefore needs only a one-dimensional convex
//! minimization over `κ`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::linalg::{herm_eigen, hermitian_part, quad_form, CMatrix, CVector, C64};
use crate::rates::{sinr, BFSolution};

use super::Instance;

/// Minimizes `φ(κ) = κ·r2 + Σ wᵢ/(κ + dᵢ)` over `κ ≥ max(0, maxᵢ −dᵢ)`.
/// Returns `(κ, φ(κ))`. Requires `r2 > 0`.
fn sproc_min(d: &[f64], w: &[f64], r2: f64) -> (f64, f64) {
    debug_assert!(r2 > 0.0);
    let k0 = d.iter().fold(0.0_f64, |m, &di| m.max(-di));
    let phi = |k: f64| -> f64 {
        k * r2
            + d.iter()
                .zip(w)
                .filter(|(_, &wi)| wi > 0.0)
                .map(|(&di, &wi)| wi / (k + di))
                .sum::<f64>()
    };
    let dphi = |k: f64| -> f64 {
        r2 - d
            .iter()
            .zip(w)
            .filter(|(_, &wi)| wi > 0.0)
            .map(|(&di, &wi)| wi / ((k + di) * (k + di)))
            .sum::<f64>()
    };
    let wsum: f64 = w.iter().filter(|&&x| x > 0.0).sum();
    let blocked = d.iter().zip(w).any(|(&di, &wi)| wi > 0.0 && k0 + di <= 0.0);
    if !blocked && dphi(k0) >= 0.0 {
        return (k0, phi(k0));
    }
    let mut lo = k0;
    let mut hi = k0 + (wsum / r2).sqrt() + f64::MIN_POSITIVE.sqrt();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if dphi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, phi(hi))
}

fn spectral(p: &CMatrix, h: &CVector) -> (Vec<f64>, Vec<f64>) {
    let e = herm_eigen(&hermitian_part(p));
    // c = ĥ·P·U = ĥ·U·diag(p)
    let hu: Vec<C64> = (0..e.values.len())
        .map(|i| (0..h.len()).map(|a| h[a] * e.vectors[(a, i)]).sum())
        .collect();
    let w = hu
        .iter()
        .zip(&e.values)
        .map(|(c, &pi)| c.norm_sqr() * pi * pi)
        .collect();
    (e.values, w)
}

fn margin(scale: f64) -> f64 {
    1e-9 * scale.abs().max(1.0)
}

/// Smallest `u` with `(ĥ+Δ)Q(ĥ+Δ)ᴴ ≤ u` certified over the ball, with its
/// multiplier `κ`, both padded so the LMI holds with margin.
/// For a degenerate ball (`σ‖ĥ‖² = 0`) the multiplier is zero.
pub fn sproc_upper_bound(q: &CMatrix, h: &CVector, r2: f64) -> (f64, f64) {
    let nominal = quad_form(h, q);
    if !(r2 > 0.0) {
        return (nominal + margin(nominal), 0.0);
    }
    let (p, w) = spectral(q, h);
    let d: Vec<f64> = p.iter().map(|x| -x).collect();
    let (kappa, phi) = sproc_min(&d, &w, r2);
    let u = nominal + phi;
    let m = margin(u.max(p[0]));
    (u + m * (1.0 + r2), kappa + m)
}

/// Largest `v` with `(ĥ+Δ)R(ĥ+Δ)ᴴ ≥ v` certified over the ball, with its
/// multiplier `υ`, both padded so the LMI holds with margin.
pub fn sproc_lower_bound(r: &CMatrix, h: &CVector, r2: f64) -> (f64, f64) {
    let nominal = quad_form(h, r);
    if !(r2 > 0.0) {
        return (nominal - margin(nominal), 0.0);
    }
    let (p, w) = spectral(r, h);
    let (ups, phi) = sproc_min(&p, &w, r2);
    let v = nominal - phi;
    let m = margin(nominal.max(p[0]));
    (v - m * (1.0 + r2), ups + m)
}

/// Whether `(ĥ+Δ)P(ĥ+Δ)ᴴ ≤ u` is certified for every admissible `Δ`.
fn certified_upper(p: &CMatrix, h: &CVector, r2: f64, u: f64) -> bool {
    let nominal = quad_form(h, p);
    let (ev, w) = spectral(p, h);
    let d: Vec<f64> = ev.iter().map(|x| -x).collect();
    let (_, phi) = sproc_min(&d, &w, r2);
    nominal + phi <= u
}

/// `max SINR` over `‖Δ‖² ≤ r2` of the stream with signal covariance `q` and
/// interference covariance `r` seen through `h + Δ` (noise normalized to one).
pub fn worst_case_eve_sinr(q: &CMatrix, r: &CMatrix, h: &CVector, r2: f64) -> f64 {
    let nominal = quad_form(h, q).max(0.0) / (quad_form(h, r).max(0.0) + 1.0);
    if !(r2 > 0.0) {
        return nominal;
    }
    // every admissible Δ has S ≤ u and I + 1 ≥ v + 1
    let (u, _) = sproc_upper_bound(q, h, r2);
    let (v, _) = sproc_lower_bound(r, h, r2);
    let mut hi = u.max(0.0) / (v + 1.0).max(1.0);
    let mut lo = nominal;
    if hi <= lo {
        return lo;
    }
    // S − γ(I+1) ≤ 0 over the ball is monotone in γ
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let pm = q - r.scale(mid);
        if certified_upper(&pm, h, r2, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1e-300) {
            break;
        }
    }
    hi
}

/// Worst-case eavesdropping evaluation of a normalized robust design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustReport {
    /// `sinr[k][z]`: worst-case eavesdropper SINR over the error ball.
    pub sinr: Vec<Vec<f64>>,
    /// Worst-case secrecy rates in bit/s/Hz.
    pub secrecy: Vec<f64>,
}

impl RobustReport {
    pub fn sum_secrecy(&self) -> f64 {
        self.secrecy.iter().sum()
    }
}

/// Signal covariance `Vₖ` and interference covariance `Σ_{i≠k}Vᵢ + Λ` of
/// stream `k` mapped into the domain of the robust LMIs.
pub fn robust_covariances(inst: &Instance, sol: &BFSolution, k: usize) -> (CMatrix, CMatrix) {
    let mut rs = sol.lambda.clone();
    for (i, v) in sol.vk.iter().enumerate() {
        if i != k {
            rs += v;
        }
    }
    match &inst.rob_map {
        None => (sol.vk[k].clone(), rs),
        Some(f) => {
            let fh = f.adjoint();
            (f * &sol.vk[k] * &fh, f * rs * fh)
        }
    }
}

pub fn robust_report(inst: &Instance, sol: &BFSolution) -> RobustReport {
    let l2 = |x: f64| x.max(0.0).ln_1p() / LN_2;
    let mut sinrs = Vec::with_capacity(inst.n_users);
    let mut secrecy = Vec::with_capacity(inst.n_users);
    for k in 0..inst.n_users {
        let (q, r) = robust_covariances(inst, sol, k);
        let row: Vec<f64> = (0..inst.n_eves)
            .map(|z| worst_case_eve_sinr(&q, &r, &inst.rob_h[z], inst.rob_r2[z]))
            .collect();
        let access = l2(sinr(k, &inst.hbar[k], &sol.vk, &sol.lambda, 1.0));
        let eve = row.iter().map(|&g| l2(g)).fold(0.0, f64::max);
        secrecy.push((access - eve).max(0.0));
        sinrs.push(row);
    }
    RobustReport {
        sinr: sinrs,
        secrecy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{sproc_lmi, Affine, CMatExpr, ConicProblem, SProcForm, SolverOptions};
    use crate::linalg::{min_eigenvalue, outer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
        CVector::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn rpsd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> CMatrix {
        let a = CMatrix::from_fn(n, rank, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        &a * a.adjoint()
    }

    fn ball_sample(rng: &mut ChaCha8Rng, h: &CVector, sigma: f64, on_surface: bool) -> CVector {
        let d = rvec(rng, h.len());
        let radius = (sigma * h.norm_squared()).sqrt();
        let s = if on_surface { 1.0 } else { rng.gen::<f64>() };
        h + d.unscale(d.norm()) * C64::new(radius * s, 0.0)
    }

    fn lmi_matrix(form: SProcForm, w: f64, p: &CMatrix, c: f64, sigma: f64, h: &CVector) -> CMatrix {
        let n = p.nrows();
        let r2 = sigma * h.norm_squared();
        let s = if form == SProcForm::Upper { -1.0 } else { 1.0 };
        let b: CVector = (p.transpose() * h).into_owned();
        let mut m = CMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = p[(i, j)] * s;
            }
            m[(i, i)] += C64::new(w, 0.0);
            m[(i, n)] = b[i].conj() * s;
            m[(n, i)] = b[i] * s;
        }
        let hph = quad_form(h, p);
        m[(n, n)] = C64::new(
            if form == SProcForm::Upper { c - hph - w * r2 } else { hph - c - w * r2 },
            0.0,
        );
        m
    }

    #[test]
    fn upper_bound_lmi_holds_and_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let n = 2 + trial % 4;
            let q = rpsd(&mut rng, n, 1 + trial % n);
            let h = rvec(&mut rng, n);
            let sigma = 0.01 + 0.05 * rng.gen::<f64>();
            let (u, kappa) = sproc_upper_bound(&q, &h, sigma * h.norm_squared());
            let m = lmi_matrix(SProcForm::Upper, kappa, &q, u, sigma, &h);
            assert!(min_eigenvalue(&m) >= -1e-10 * u.max(1.0), "trial {trial}");
            for _ in 0..2000 {
                let he = ball_sample(&mut rng, &h, sigma, true);
                assert!(quad_form(&he, &q) <= u * (1.0 + 1e-9));
            }
            // the stationary point of the multiplier attains the bound
            let he = extremal_point(&q, &h, sigma * h.norm_squared(), kappa);
            assert!(quad_form(&he, &q) >= u * (1.0 - 1e-6), "trial {trial}");
        }
    }

    /// `ĥ + Δ` with `Δᴴ = (κI − P)⁻¹·P·ĥᴴ` rescaled onto the sphere: the
    /// maximizer of `xPxᴴ` over the ball when `κ` is the optimal multiplier.
    fn extremal_point(p: &CMatrix, h: &CVector, r2: f64, kappa: f64) -> CVector {
        let n = h.len();
        let a = CMatrix::identity(n, n).scale(kappa) - p;
        let dh = a.try_inverse().unwrap() * p * h.conjugate();
        let d = dh.conjugate();
        h + d.unscale(d.norm()) * C64::new(r2.sqrt(), 0.0)
    }

    #[test]
    fn lower_bound_lmi_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..20 {
            let n = 2 + trial % 4;
            let r = rpsd(&mut rng, n, 1 + trial % n);
            let h = rvec(&mut rng, n);
            let sigma = 0.01 + 0.05 * rng.gen::<f64>();
            let (v, ups) = sproc_lower_bound(&r, &h, sigma * h.norm_squared());
            assert!(ups >= 0.0);
            let m = lmi_matrix(SProcForm::Lower, ups, &r, v, sigma, &h);
            assert!(min_eigenvalue(&m) >= -1e-10 * v.abs().max(1.0), "trial {trial}");
            for _ in 0..2000 {
                let he = ball_sample(&mut rng, &h, sigma, false);
                assert!(quad_form(&he, &r) >= v - 1e-9);
            }
        }
    }

    /// Independent route: minimize the certified bound with the SDP builder.
    #[test]
    fn closed_form_matches_sdp_minimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..6 {
            let n = 2 + trial % 3;
            let q = rpsd(&mut rng, n, 1 + trial % n);
            let h = rvec(&mut rng, n);
            let sigma = 0.02 + 0.03 * rng.gen::<f64>();
            let mut p = ConicProblem::new();
            let kappa = p.scalar("kappa");
            let u = p.scalar("u");
            p.add_nonneg("kappa", Affine::var(kappa));
            sproc_lmi(
                &mut p,
                "t",
                SProcForm::Upper,
                &Affine::var(kappa),
                &CMatExpr::from_constant(&q),
                &Affine::var(u),
                sigma,
                &h,
            )
            .unwrap();
            p.minimize(Affine::var(u));
            let sol = p.solve(&SolverOptions::default()).unwrap().require_solution().unwrap();
            let (uc, _) = sproc_upper_bound(&q, &h, sigma * h.norm_squared());
            assert!((sol.value(u) - uc).abs() <= 1e-6 * uc.max(1.0), "{} vs {uc}", sol.value(u));
        }
    }

    #[test]
    fn worst_case_sinr_bounds_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10 {
            let n = 3 + trial % 3;
            let q = outer(&rvec(&mut rng, n));
            let r = rpsd(&mut rng, n, 2).scale(0.5);
            let h = rvec(&mut rng, n);
            let sigma = 0.05;
            let wc = worst_case_eve_sinr(&q, &r, &h, sigma * h.norm_squared());
            for _ in 0..3000 {
                let he = ball_sample(&mut rng, &h, sigma, true);
                let s = quad_form(&he, &q) / (quad_form(&he, &r) + 1.0);
                assert!(s <= wc * (1.0 + 1e-8) + 1e-12, "trial {trial}: {s} > {wc}");
            }
            // the maximizer of S − γ(I+1) at γ = wc reaches the bound
            let r2 = sigma * h.norm_squared();
            let pm = &q - r.scale(wc);
            let (_, kappa) = sproc_upper_bound(&pm, &h, r2);
            let he = extremal_point(&pm, &h, r2, kappa);
            let s = quad_form(&he, &q) / (quad_form(&he, &r) + 1.0);
            assert!(s >= wc * (1.0 - 1e-5), "trial {trial}: attained {s} vs {wc}");
        }
    }

    #[test]
    fn zero_radius_reduces_to_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = rpsd(&mut rng, 3, 1);
        let r = rpsd(&mut rng, 3, 2);
        let h = rvec(&mut rng, 3);
        let nominal = quad_form(&h, &q) / (quad_form(&h, &r) + 1.0);
        assert_eq!(worst_case_eve_sinr(&q, &r, &h, 0.0), nominal);
        let (u, k) = sproc_upper_bound(&q, &h, 0.0);
        assert_eq!(k, 0.0);
        assert!((u - quad_form(&h, &q)).abs() <= 1e-8 * u);
    }

    #[test]
    fn worst_case_grows_with_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let q = outer(&rvec(&mut rng, 4));
        let r = rpsd(&mut rng, 4, 2);
        let h = rvec(&mut rng, 4);
        let mut prev = 0.0;
        for sigma in [0.0, 0.005, 0.01, 0.05, 0.1] {
            let w = worst_case_eve_sinr(&q, &r, &h, sigma * h.norm_squared());
            assert!(w >= prev * (1.0 - 1e-9));
            prev = w;
        }
    }
}
