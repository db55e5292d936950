//! Exact rate evaluation for candidate beamforming solutions.
//!
//! All rates are in bit/s (`log₂`). Channels passed to the access and
//! eavesdropper functions are the effective low-dimensional channels `h̄ = hF`.

use serde::{Deserialize, Serialize};

use crate::analogbf::{effective_channels, AnalogBeamformer};
use crate::error::{Error, Result};
use crate::linalg::{
    check_psd, hermitian_asymmetry, min_eigenvalue, outer, quad_form, row_dot, serde_cmat,
    serde_cmats, serde_opt_cvec, serde_opt_cvecs, CMatrix, CVector,
};
use crate::model::{ChannelSet, SystemConfig};

/// Relaxed or recovered beamforming design in physical units (W).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BFSolution {
    /// Fronthaul multicast covariance `V₀`, `N × N`.
    #[serde(with = "serde_cmat")]
    pub v0: CMatrix,
    /// Per-user digital covariances `Vₖ`, `L × L`.
    #[serde(with = "serde_cmats")]
    pub vk: Vec<CMatrix>,
    /// Artificial-noise covariance `Λ`, `L × L`.
    #[serde(with = "serde_cmat")]
    pub lambda: CMatrix,
    #[serde(with = "serde_opt_cvec", default)]
    pub v0_vec: Option<CVector>,
    #[serde(with = "serde_opt_cvecs", default)]
    pub vk_vec: Option<Vec<CVector>>,
}

impl BFSolution {
    pub fn new(v0: CMatrix, vk: Vec<CMatrix>, lambda: CMatrix) -> Self {
        BFSolution {
            v0,
            vk,
            lambda,
            v0_vec: None,
            vk_vec: None,
        }
    }

    /// Builds the matrix form from rank-one factors and keeps the factors.
    pub fn from_vectors(v0: CVector, vk: Vec<CVector>, lambda: CMatrix) -> Self {
        BFSolution {
            v0: outer(&v0),
            vk: vk.iter().map(outer).collect(),
            lambda,
            v0_vec: Some(v0),
            vk_vec: Some(vk),
        }
    }

    /// `Σₖ Tr(Vₖ) + Tr(Λ)`.
    pub fn bs_power(&self) -> f64 {
        self.vk.iter().map(|v| v.trace().re).sum::<f64>() + self.lambda.trace().re
    }

    /// Power radiated by BS `l`: the `l`-th diagonal entry of `Σₖ Vₖ + Λ`.
    pub fn bs_load(&self, l: usize) -> f64 {
        self.vk.iter().map(|v| v[(l, l)].re).sum::<f64>() + self.lambda[(l, l)].re
    }

    pub fn cp_power(&self) -> f64 {
        self.v0.trace().re
    }

    /// Hermitian to 1e-9 and eigenvalues ≥ −1e-8 (both relative to the
    /// largest entry when that exceeds one), and factors consistent with the
    /// matrices when present.
    pub fn validate(&self) -> Result<()> {
        check_psd(&self.v0, 1e-9, 1e-8)?;
        for v in &self.vk {
            check_psd(v, 1e-9, 1e-8)?;
        }
        check_psd(&self.lambda, 1e-9, 1e-8)?;
        let close = |m: &CMatrix, v: &CVector| {
            let diff = (m - outer(v)).norm();
            diff <= 1e-6 * m.norm().max(1e-300)
        };
        if let Some(v0) = &self.v0_vec {
            if !close(&self.v0, v0) {
                return Err(Error::Domain("v0 does not factor V0".into()));
            }
        }
        if let Some(vs) = &self.vk_vec {
            if vs.len() != self.vk.len() || !vs.iter().zip(&self.vk).all(|(v, m)| close(m, v)) {
                return Err(Error::Domain("vk do not factor Vk".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub fronthaul_per_bs: Vec<f64>,
    pub fronthaul_min: f64,
    pub access: Vec<f64>,
    /// `eavesdrop[k][z]`.
    pub eavesdrop: Vec<Vec<f64>>,
    pub secrecy: Vec<f64>,
    pub time_shares: Vec<f64>,
}

impl RateReport {
    pub fn sum_secrecy(&self) -> f64 {
        self.secrecy.iter().sum()
    }

    pub fn sum_access(&self) -> f64 {
        self.access.iter().sum()
    }
}

fn log2_1p(x: f64) -> f64 {
    x.max(0.0).ln_1p() / std::f64::consts::LN_2
}

/// `W_mc·log₂(1 + Tr(G_l V₀)/(W_mc·N0))`.
pub fn fronthaul_rate(g: &CVector, v0: &CMatrix, w_mc: f64, n0: f64) -> Result<f64> {
    let p = quad_form(g, v0);
    let scale = v0.norm() * g.norm_squared();
    if p < -1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotPsd(p));
    }
    Ok(w_mc * log2_1p(p / (w_mc * n0)))
}

/// Vector form `W_mc·log₂(1 + |g v₀|²/(W_mc·N0))`.
pub fn fronthaul_rate_vec(g: &CVector, v0: &CVector, w_mc: f64, n0: f64) -> f64 {
    w_mc * log2_1p(row_dot(g, v0).norm_sqr() / (w_mc * n0))
}

/// Signal-to-interference-plus-noise ratio of stream `k` seen through `h`.
pub fn sinr(k: usize, h: &CVector, vk: &[CMatrix], lambda: &CMatrix, noise: f64) -> f64 {
    let signal = quad_form(h, &vk[k]).max(0.0);
    let interference: f64 = vk
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, v)| quad_form(h, v))
        .sum::<f64>()
        + quad_form(h, lambda);
    signal / (interference.max(0.0) + noise)
}

/// Rate of user `k` over effective channel `h̄ₖ`.
pub fn access_rate(
    k: usize,
    hbar: &CVector,
    vk: &[CMatrix],
    lambda: &CMatrix,
    w_mm: f64,
    n0: f64,
) -> f64 {
    w_mm * log2_1p(sinr(k, hbar, vk, lambda, w_mm * n0))
}

/// Vector form of [`access_rate`] with beamformers `vᵢ`.
pub fn access_rate_vec(
    k: usize,
    hbar: &CVector,
    vs: &[CVector],
    lambda: &CMatrix,
    w_mm: f64,
    n0: f64,
) -> f64 {
    let signal = row_dot(hbar, &vs[k]).norm_sqr();
    let interference: f64 = vs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != k)
        .map(|(_, v)| row_dot(hbar, v).norm_sqr())
        .sum::<f64>()
        + quad_form(hbar, lambda);
    w_mm * log2_1p(signal / (interference + w_mm * n0))
}

/// Rate at which an eavesdropper with effective channel `h̄ᵉ` decodes stream `k`.
pub fn eavesdrop_rate(
    k: usize,
    he_bar: &CVector,
    vk: &[CMatrix],
    lambda: &CMatrix,
    w_mm: f64,
    n0: f64,
) -> f64 {
    access_rate(k, he_bar, vk, lambda, w_mm, n0)
}

/// Full report from explicit effective channels.
pub fn secrecy_rates_effective(
    sol: &BFSolution,
    g: &[CVector],
    hbar: &[CVector],
    he_bar: &[CVector],
    cfg: &SystemConfig,
) -> Result<RateReport> {
    if hermitian_asymmetry(&sol.v0) > 1e-6 * sol.v0.norm().max(1.0) {
        return Err(Error::NotHermitian(hermitian_asymmetry(&sol.v0)));
    }
    let fronthaul_per_bs = g
        .iter()
        .map(|gl| fronthaul_rate(gl, &sol.v0, cfg.bw_microwave, cfg.noise_psd))
        .collect::<Result<Vec<_>>>()?;
    let fronthaul_min = fronthaul_per_bs.iter().copied().fold(f64::INFINITY, f64::min);
    let k_users = sol.vk.len();
    let access: Vec<f64> = (0..k_users)
        .map(|k| access_rate(k, &hbar[k], &sol.vk, &sol.lambda, cfg.bw_mmwave, cfg.noise_psd))
        .collect();
    let eavesdrop: Vec<Vec<f64>> = (0..k_users)
        .map(|k| {
            he_bar
                .iter()
                .map(|he| eavesdrop_rate(k, he, &sol.vk, &sol.lambda, cfg.bw_mmwave, cfg.noise_psd))
                .collect()
        })
        .collect();
    let secrecy = access
        .iter()
        .zip(&eavesdrop)
        .map(|(a, e)| (a - e.iter().copied().fold(0.0, f64::max)).max(0.0))
        .collect();
    let mut report = RateReport {
        fronthaul_per_bs,
        fronthaul_min,
        access,
        eavesdrop,
        secrecy,
        time_shares: Vec::new(),
    };
    report.time_shares = fronthaul_feasibility(&report).1;
    Ok(report)
}

/// Full report against the true eavesdropper channels.
pub fn secrecy_rates(
    sol: &BFSolution,
    channels: &ChannelSet,
    bf: &AnalogBeamformer,
    cfg: &SystemConfig,
) -> Result<RateReport> {
    let hbar = effective_channels(&channels.h, bf)?;
    let he_bar = effective_channels(&channels.he_true, bf)?;
    secrecy_rates_effective(sol, &channels.g, &hbar, &he_bar, cfg)
}

/// Time shares `tₖ = Rₖ^AC / R_FH` and whether `Σ tₖ ≤ 1`.
pub fn fronthaul_feasibility(report: &RateReport) -> (bool, Vec<f64>) {
    let r_fh = report.fronthaul_min;
    let shares: Vec<f64> = report
        .access
        .iter()
        .map(|&a| {
            if a == 0.0 {
                0.0
            } else if r_fh > 0.0 {
                a / r_fh
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let total: f64 = shares.iter().sum();
    (total <= 1.0 + 1e-9, shares)
}

/// Smallest eigenvalue over all matrices of a solution.
pub fn min_solution_eigenvalue(sol: &BFSolution) -> f64 {
    sol.vk
        .iter()
        .chain([&sol.v0, &sol.lambda])
        .map(min_eigenvalue)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analogbf::design_analog_bf;
    use crate::linalg::{C64, ZERO};
    use crate::model::generate_instance;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> CVector {
        CVector::from_fn(n, |_, _| C64::new(rng.gen_range(-s..s), rng.gen_range(-s..s)))
    }

    fn rpsd(rng: &mut ChaCha8Rng, n: usize, s: f64) -> CMatrix {
        let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-s..s), rng.gen_range(-s..s)));
        &a * a.adjoint()
    }

    #[test]
    fn fronthaul_examples() {
        let g = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)]);
        let z = CMatrix::zeros(2, 2);
        assert_eq!(fronthaul_rate(&g, &z, 20e6, 4e-21).unwrap(), 0.0);
        let (w, n0): (f64, f64) = (20e6, 4e-21);
        // |g v0|² = W·N0 gives SNR 1.
        let v0 = CVector::from_vec(vec![C64::new((w * n0).sqrt(), 0.0), ZERO]);
        assert_relative_eq!(fronthaul_rate_vec(&g, &v0, w, n0), w, max_relative = 1e-12);
        assert_relative_eq!(fronthaul_rate(&g, &outer(&v0), w, n0).unwrap(), w, max_relative = 1e-12);
        let bad = CMatrix::identity(2, 2).scale(-1.0);
        assert!(fronthaul_rate(&g, &bad, w, n0).is_err());
    }

    #[test]
    fn matrix_and_vector_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w_mc, w_mm, n0) = (20e6, 50e6, 4e-21);
        for _ in 0..20 {
            let g = rvec(&mut rng, 5, 1e-5);
            let v0 = rvec(&mut rng, 5, 1.0);
            assert_relative_eq!(
                fronthaul_rate(&g, &outer(&v0), w_mc, n0).unwrap(),
                fronthaul_rate_vec(&g, &v0, w_mc, n0),
                max_relative = 1e-9
            );
            let vs: Vec<CVector> = (0..3).map(|_| rvec(&mut rng, 4, 0.1)).collect();
            let vm: Vec<CMatrix> = vs.iter().map(outer).collect();
            let lam = rpsd(&mut rng, 4, 0.01);
            let h = rvec(&mut rng, 4, 1e-6);
            for k in 0..3 {
                assert_relative_eq!(
                    access_rate(k, &h, &vm, &lam, w_mm, n0),
                    access_rate_vec(k, &h, &vs, &lam, w_mm, n0),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn access_examples() {
        let (w, n0) = (50e6, 4e-21);
        let h = CVector::from_vec(vec![C64::new(1.0, 0.0)]);
        let lam = CMatrix::zeros(1, 1);
        assert_eq!(access_rate(0, &h, &[CMatrix::zeros(1, 1)], &lam, w, n0), 0.0);
        let v = CMatrix::from_element(1, 1, C64::new(w * n0, 0.0));
        assert_relative_eq!(access_rate(0, &h, &[v], &lam, w, n0), w, max_relative = 1e-12);
    }

    #[test]
    fn eavesdrop_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (w, n0) = (50e6, 1e-3);
        let vk: Vec<CMatrix> = (0..2).map(|_| rpsd(&mut rng, 3, 1.0)).collect();
        let lam = rpsd(&mut rng, 3, 0.1);
        let h = rvec(&mut rng, 3, 1.0);
        let zero = CVector::from_element(3, ZERO);
        assert_eq!(eavesdrop_rate(0, &zero, &vk, &lam, w, n0), 0.0);
        assert_eq!(eavesdrop_rate(1, &h, &vk, &lam, w, n0), access_rate(1, &h, &vk, &lam, w, n0));
        let mut last = f64::INFINITY;
        for c in [1.0, 10.0, 100.0] {
            let r = eavesdrop_rate(0, &h, &vk, &CMatrix::identity(3, 3).scale(c), w, n0);
            assert!(r < last);
            last = r;
        }
    }

    fn crafted() -> (BFSolution, Vec<CVector>, Vec<CVector>, Vec<CVector>, SystemConfig) {
        let cfg = SystemConfig {
            n_cp_antennas: 1,
            n_bs: 2,
            n_users: 2,
            n_eves: 1,
            bw_mmwave: 1.0,
            bw_microwave: 1.0,
            noise_psd: 1.0,
            ..SystemConfig::desk_scale()
        };
        let c = |r: f64| C64::new(r, 0.0);
        let hbar = vec![
            CVector::from_vec(vec![c(1.0), c(0.0)]),
            CVector::from_vec(vec![c(0.0), c(1.0)]),
        ];
        let he = vec![CVector::from_vec(vec![c(0.5), c(0.5)])];
        let g = vec![CVector::from_vec(vec![c(1.0)]); 2];
        let vk = vec![
            CMatrix::from_diagonal(&CVector::from_vec(vec![c(3.0), c(0.0)])),
            CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.0), c(1.0)])),
        ];
        let sol = BFSolution::new(
            CMatrix::from_element(1, 1, c(15.0)),
            vk,
            CMatrix::zeros(2, 2),
        );
        (sol, g, hbar, he, cfg)
    }

    #[test]
    fn crafted_two_user_secrecy() {
        let (sol, g, hbar, he, cfg) = crafted();
        let r = secrecy_rates_effective(&sol, &g, &hbar, &he, &cfg).unwrap();
        // User 1: SINR 3 → 2 bits. Eve sees 0.75 signal over 0.25 + 1 → 0.6.
        // User 2: SINR 1 → 1 bit. Eve sees 0.25 over 0.75 + 1.
        let e1 = (1.0f64 + 0.75 / 1.25).log2();
        let e2 = (1.0f64 + 0.25 / 1.75).log2();
        assert_relative_eq!(r.access[0], 2.0, epsilon = 1e-12);
        assert_relative_eq!(r.access[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.eavesdrop[0][0], e1, epsilon = 1e-12);
        assert_relative_eq!(r.eavesdrop[1][0], e2, epsilon = 1e-12);
        assert_relative_eq!(r.sum_secrecy(), 3.0 - e1 - e2, epsilon = 1e-12);
        assert_relative_eq!(r.fronthaul_min, 4.0, epsilon = 1e-12);
        let (ok, t) = fronthaul_feasibility(&r);
        assert!(ok);
        assert_relative_eq!(t[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_eves_give_access_rates_and_clamp_applies() {
        let (sol, g, hbar, _, cfg) = crafted();
        let zero = vec![CVector::from_element(2, ZERO)];
        let r = secrecy_rates_effective(&sol, &g, &hbar, &zero, &cfg).unwrap();
        assert_eq!(r.secrecy, r.access);
        let strong = vec![hbar[0].scale(10.0)];
        let r = secrecy_rates_effective(&sol, &g, &hbar, &strong, &cfg).unwrap();
        assert_eq!(r.secrecy[0], 0.0);
    }

    #[test]
    fn feasibility_examples() {
        let report = |access: Vec<f64>, fh: f64| RateReport {
            fronthaul_per_bs: vec![fh],
            fronthaul_min: fh,
            secrecy: access.clone(),
            eavesdrop: vec![vec![]; access.len()],
            access,
            time_shares: vec![],
        };
        let (ok, t) = fronthaul_feasibility(&report(vec![1.0, 3.0], 4.0));
        assert!(ok);
        assert_relative_eq!(t.iter().sum::<f64>(), 1.0);
        let (ok, t) = fronthaul_feasibility(&report(vec![0.0, 0.0], 4.0));
        assert!(ok && t == vec![0.0, 0.0]);
        let (ok, t) = fronthaul_feasibility(&report(vec![3.0, 3.0], 4.0));
        assert!(!ok);
        assert_relative_eq!(t.iter().sum::<f64>(), 1.5);
        let (ok, t) = fronthaul_feasibility(&report(vec![1.0], 0.0));
        assert!(!ok && t[0].is_infinite());
    }

    #[test]
    fn generated_instance_report_is_consistent() {
        let cfg = SystemConfig::desk_scale();
        let (_, ch) = generate_instance(&cfg, 5).unwrap();
        let bf = design_analog_bf(&ch, &cfg).unwrap();
        let l = cfg.n_bs;
        let sol = BFSolution::new(
            CMatrix::identity(cfg.n_cp_antennas, cfg.n_cp_antennas).scale(cfg.p_cp / cfg.n_cp_antennas as f64),
            vec![CMatrix::identity(l, l).scale(0.003); cfg.n_users],
            CMatrix::identity(l, l).scale(0.001),
        );
        sol.validate().unwrap();
        let r = secrecy_rates(&sol, &ch, &bf, &cfg).unwrap();
        assert_eq!(r.fronthaul_min, r.fronthaul_per_bs.iter().copied().fold(f64::INFINITY, f64::min));
        for k in 0..cfg.n_users {
            let worst = r.eavesdrop[k].iter().copied().fold(0.0, f64::max);
            assert_eq!(r.secrecy[k], (r.access[k] - worst).max(0.0));
        }
    }

    proptest! {
        #[test]
        fn stronger_eves_never_raise_secrecy(seed in 0u64..300, c in 1.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, n0) = (1.0, 1.0);
            let cfg = SystemConfig { bw_mmwave: w, bw_microwave: w, noise_psd: n0, ..SystemConfig::desk_scale() };
            let vk: Vec<CMatrix> = (0..2).map(|_| rpsd(&mut rng, 3, 1.0)).collect();
            let sol = BFSolution::new(CMatrix::identity(2, 2), vk, rpsd(&mut rng, 3, 0.5));
            let g = vec![rvec(&mut rng, 2, 1.0)];
            let h: Vec<CVector> = (0..2).map(|_| rvec(&mut rng, 3, 1.0)).collect();
            let he = vec![rvec(&mut rng, 3, 1.0), rvec(&mut rng, 3, 1.0)];
            let he_scaled: Vec<CVector> = he.iter().map(|v| v.scale(c)).collect();
            let a = secrecy_rates_effective(&sol, &g, &h, &he, &cfg).unwrap();
            let b = secrecy_rates_effective(&sol, &g, &h, &he_scaled, &cfg).unwrap();
            for k in 0..2 {
                prop_assert!(b.secrecy[k] <= a.secrecy[k] + 1e-12);
            }
        }

        #[test]
        fn more_noise_never_raises_rates(seed in 0u64..300, delta in 1e-3f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vk: Vec<CMatrix> = (0..3).map(|_| rpsd(&mut rng, 4, 1.0)).collect();
            let lam = rpsd(&mut rng, 4, 0.5);
            let lam2 = &lam + CMatrix::identity(4, 4).scale(delta);
            let h = rvec(&mut rng, 4, 1.0);
            let he = rvec(&mut rng, 4, 1.0);
            for k in 0..3 {
                prop_assert!(access_rate(k, &h, &vk, &lam2, 1.0, 1.0) <= access_rate(k, &h, &vk, &lam, 1.0, 1.0) + 1e-12);
                prop_assert!(eavesdrop_rate(k, &he, &vk, &lam2, 1.0, 1.0) <= eavesdrop_rate(k, &he, &vk, &lam, 1.0, 1.0) + 1e-12);
            }
        }
    }
}
