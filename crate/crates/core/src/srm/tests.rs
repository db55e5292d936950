use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analogbf::{design_analog_bf, effective_channels, AnalogBeamformer};
use crate::conic::{sproc_lmi, Affine, CMatExpr, ConeKind, ConicProblem, DualInfo, SProcForm};
use crate::error::Error;
use crate::linalg::{gram, min_eigenvalue, quad_form, CMatrix, CVector, C64};
use crate::model::{generate_instance, ChannelSet, SystemConfig};
use crate::rates::{access_rate, fronthaul_rate, secrecy_rates, sinr, BFSolution};

fn desk(sigma: f64) -> SystemConfig {
    let mut cfg = SystemConfig::desk_scale();
    cfg.csi_error_ratio = vec![sigma];
    cfg
}

fn instance(cfg: &SystemConfig, seed: u64, v: Variant) -> (ChannelSet, AnalogBeamformer, Instance) {
    let (_, ch) = generate_instance(cfg, seed).unwrap();
    let bf = design_analog_bf(&ch, cfg).unwrap();
    let inst = Instance::new(v, &ch, &bf, cfg).unwrap();
    (ch, bf, inst)
}

fn rvec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CVector {
    CVector::from_fn(n, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale)
    })
}

fn rpsd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CMatrix {
    let a = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&a * a.adjoint()).scale(scale / n as f64)
}

/// Hand-built channels: entries are given in units of the noise-normalized
/// gain, so a unit entry means unit SNR per watt of the reference budget.
fn hand_channels(
    cfg: &SystemConfig,
    h: Vec<CVector>,
    he: Vec<CVector>,
    g: Vec<CVector>,
) -> ChannelSet {
    let s_mm = (cfg.noise_mmwave() / cfg.p_bs_total).sqrt();
    let s_mc = (cfg.noise_microwave() / cfg.p_cp).sqrt();
    let sc = |v: Vec<CVector>, s: f64| v.into_iter().map(|x| x * C64::new(s, 0.0)).collect::<Vec<_>>();
    let he = sc(he, s_mm);
    ChannelSet {
        g: sc(g, s_mc),
        h: sc(h, s_mm),
        he_true: he.clone(),
        he_est: he,
        user_paths: Vec::new(),
        eve_paths: Vec::new(),
    }
}

fn single_cfg(n_bs: usize) -> SystemConfig {
    SystemConfig {
        n_cp_antennas: 1.max(n_bs),
        n_bs_antennas: 1,
        n_bs,
        n_users: 1,
        n_eves: 1,
        csi_error_ratio: vec![0.0],
        ..SystemConfig::desk_scale()
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(Variant::parse(v.name()).unwrap(), v);
    }
    assert_eq!(Variant::parse("Per-BS").unwrap(), Variant::Perbs);
    assert!(Variant::parse("nope").is_err());
}

#[test]
fn tangent_bounds_log_from_above() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a: f64 = rng.gen_range(0.0..50.0);
        let g: f64 = rng.gen_range(0.0..50.0);
        assert!(log2_tangent(g, a) >= (1.0 + g).log2() - 1e-12);
    }
    assert!((log2_tangent(3.0, 3.0) - 2.0).abs() < 1e-15);
}

#[test]
fn hand_count_of_smallest_problem() {
    let cfg = single_cfg(1);
    let one = |x: f64| vec![CVector::from_element(1, C64::new(x, 0.0))];
    let ch = hand_channels(&cfg, one(3.0), one(1.0), one(2.0));
    let bf = design_analog_bf(&ch, &cfg).unwrap();
    let inst = Instance::new(Variant::Total, &ch, &bf, &cfg).unwrap();
    let (_, aux) = init_aux_instance(&inst).unwrap();
    let sub = build_subproblem_instance(&inst, &aux, &Structure::Relaxed).unwrap();
    // V0, V1, Λ (one real each); β ε τ θ λ t s; ω; γ ζ μ
    assert_eq!(sub.n_vars(), 3 + 7 + 1 + 3);
    let mut tags: Vec<&str> = sub.problem.tags().collect();
    tags.sort_unstable();
    let mut expected = vec![
        "psi1", "psi2", "psi3_0", "psi4_0", "beta_nonneg_0", "rate_0", "psi7_0", "theta_lin_0",
        "psi8_0", "eve_epi_0_0", "psi5_0_0", "zeta_lin_0_0", "psi6_0_0", "psi9_0", "fh_cap",
        "omega_0", "omega_v0", "omega_lambda",
    ];
    expected.sort_unstable();
    assert_eq!(tags, expected);
    assert_eq!(sub.problem.block_kind("psi4_0"), Some(ConeKind::SecondOrder));
    assert_eq!(sub.problem.block_kind("rate_0"), Some(ConeKind::Exponential));
    assert_eq!(sub.problem.block_kind("psi9_0"), Some(ConeKind::Exponential));
    // 2×2 real-symmetric LMIs for the scalar splits
    assert_eq!(sub.problem.block_kind("psi8_0"), Some(ConeKind::Psd(2)));
    assert_eq!(sub.problem.block_kind("psi6_0_0"), Some(ConeKind::Psd(2)));
}

#[test]
fn zero_channels_are_rejected() {
    let cfg = single_cfg(1);
    let zero = vec![CVector::zeros(1)];
    let one = vec![CVector::from_element(1, C64::new(1.0, 0.0))];
    let ch = hand_channels(&cfg, zero.clone(), one.clone(), one.clone());
    let bf = AnalogBeamformer {
        f: one.clone(),
        phase_index: vec![vec![0]],
        assignment: vec![0],
        phase_bits: 3,
    };
    assert!(matches!(init_aux(Variant::Total, &ch, &bf, &cfg), Err(Error::Infeasible(_))));
    let ch = hand_channels(&cfg, one.clone(), one, zero);
    assert!(matches!(init_aux(Variant::Total, &ch, &bf, &cfg), Err(Error::Infeasible(_))));
}

#[test]
fn seed_is_feasible_and_consistent_with_rates() {
    let cfg = desk(0.05);
    for seed in 0..3 {
        for v in Variant::ALL {
            let (ch, bf, inst) = instance(&cfg, seed, v);
            let (sol, aux) = init_aux_instance(&inst).unwrap();
            let sub = build_subproblem_instance(&inst, &aux.as_anchor(), &Structure::Relaxed).unwrap();
            let x = sub.pack(&sol, &aux);
            assert!(sub.max_violation(&x) <= 1e-9, "{v} seed {seed}: {}", sub.max_violation(&x));
            // β is the SINR evaluated in watts on the physical channels
            let phys = inst.to_physical(&sol);
            let hbar = effective_channels(&ch.h, &bf).unwrap();
            for k in 0..cfg.n_users {
                let s = sinr(k, &hbar[k], &phys.vk, &phys.lambda, cfg.noise_mmwave());
                assert!((aux.beta[k] - s).abs() <= 1e-9 * s.max(1.0), "{} vs {s}", aux.beta[k]);
            }
            // the seed respects the fronthaul cap and the power budget
            let rep = secrecy_rates(&phys, &ch, &bf, &cfg).unwrap();
            assert!(rep.sum_access() <= rep.fronthaul_min * (1.0 + 1e-9));
            assert!(phys.bs_power() <= cfg.p_bs_total * (1.0 + 1e-9));
        }
    }
}

#[test]
fn anchors_must_be_positive() {
    let cfg = desk(0.0);
    let (_, _, inst) = instance(&cfg, 0, Variant::Total);
    let (_, mut aux) = init_aux_instance(&inst).unwrap();
    aux.beta[0] = 0.0;
    assert!(matches!(
        build_subproblem_instance(&inst, &aux, &Structure::Relaxed),
        Err(Error::Domain(_))
    ));
    aux.beta.pop();
    assert!(matches!(
        build_subproblem_instance(&inst, &aux, &Structure::Relaxed),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn single_iteration_trace() {
    let cfg = desk(0.0);
    let (_, _, inst) = instance(&cfg, 1, Variant::Total);
    let opts = SrmOptions {
        t_max: 1,
        ..Default::default()
    };
    let out = solve_instance(&inst, &opts).unwrap();
    assert_eq!(out.trace.iterations(), 1);
    assert_eq!(out.trace.termination, Termination::MaxIterations);
    assert!(solve_instance(&inst, &SrmOptions { t_max: 0, ..opts }).is_err());
}

#[test]
fn iterations_are_monotone_and_feasible() {
    let cfg = desk(0.05);
    for seed in [0, 3] {
        for v in Variant::ALL {
            let (ch, bf, inst) = instance(&cfg, seed, v);
            let out = solve_instance(&inst, &SrmOptions::default()).unwrap();
            let tr = &out.trace;
            assert!(tr.is_monotone(1e-6), "{v} seed {seed}: {:?}", tr.surrogates());
            for e in &tr.entries {
                assert!(e.transfer_violation <= 1e-7, "{v}: transfer {}", e.transfer_violation);
            }
            // independent evaluation of the returned point in watts
            let rep = secrecy_rates(&out.solution, &ch, &bf, &cfg).unwrap();
            assert!(
                rep.sum_access() <= rep.fronthaul_min + 1e-6 * cfg.bw_mmwave,
                "{v}: access {} > fronthaul {}",
                rep.sum_access(),
                rep.fronthaul_min
            );
            let used = out.solution.bs_power();
            assert!(used <= cfg.p_bs_total * (1.0 + 1e-7), "{v}: power {used}");
            if v == Variant::Perbs {
                for (l, b) in cfg.per_bs_budgets().iter().enumerate() {
                    assert!(out.solution.bs_load(l) <= b * (1.0 + 1e-7));
                }
            }
            assert!(out.solution.cp_power() <= cfg.p_cp * (1.0 + 1e-7));
        }
    }
}

/// Brute force over the MRT power with one user and a blind eavesdropper.
fn brute_force_single_user(cfg: &SystemConfig, ch: &ChannelSet, bf: &AnalogBeamformer) -> f64 {
    let hbar = effective_channels(&ch.h, bf).unwrap()[0].clone();
    let dir = gram(&hbar).unscale(hbar.norm_squared());
    // a single fronthaul link is best served along its own channel
    let v0 = gram(&ch.g[0]).scale(cfg.p_cp / ch.g[0].norm_squared());
    let r_fh = fronthaul_rate(&ch.g[0], &v0, cfg.bw_microwave, cfg.noise_psd).unwrap();
    let lambda = CMatrix::zeros(hbar.len(), hbar.len());
    (0..=4000)
        .map(|i| {
            let p = cfg.p_bs_total * i as f64 / 4000.0;
            let r = access_rate(0, &hbar, &[dir.scale(p)], &lambda, cfg.bw_mmwave, cfg.noise_psd);
            r.min(r_fh)
        })
        .fold(0.0, f64::max)
}

#[test]
fn single_user_blind_eve_matches_power_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (trial, gain) in [(0, 2.0), (1, 6.0), (2, 30.0)] {
        let cfg = single_cfg(1);
        let h = vec![rvec(&mut rng, 1, gain)];
        let g = vec![rvec(&mut rng, 1, 20.0)];
        let ch = hand_channels(&cfg, h, vec![CVector::zeros(1)], g);
        let bf = design_analog_bf(&ch, &cfg).unwrap();
        let expected = brute_force_single_user(&cfg, &ch, &bf);
        for v in Variant::ALL {
            let out = solve_srm(v, &ch, &bf, &cfg, &SrmOptions::default()).unwrap();
            let got = secrecy_rates(&out.solution, &ch, &bf, &cfg).unwrap().sum_secrecy();
            assert!(
                (got - expected).abs() <= 0.02 * expected,
                "trial {trial} {v}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn single_user_without_fronthaul_limit_reaches_mrt_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut cfg = single_cfg(2);
    cfg.n_bs_antennas = 2;
    let ml = cfg.access_len();
    let h = vec![rvec(&mut rng, ml, 1.5)];
    let g = vec![rvec(&mut rng, 2, 1e3), rvec(&mut rng, 2, 1e3)];
    let ch = hand_channels(&cfg, h, vec![CVector::zeros(ml)], g);
    let bf = design_analog_bf(&ch, &cfg).unwrap();
    let hbar = effective_channels(&ch.h, &bf).unwrap()[0].clone();
    let snr = cfg.p_bs_total * hbar.norm_squared() / cfg.noise_mmwave();
    let expected = cfg.bw_mmwave * snr.ln_1p() / std::f64::consts::LN_2;
    let out = solve_srm(Variant::Total, &ch, &bf, &cfg, &SrmOptions::default()).unwrap();
    let got = secrecy_rates(&out.solution, &ch, &bf, &cfg).unwrap().sum_secrecy();
    assert!((got - expected).abs() <= 0.02 * expected, "{got} vs {expected}");
}

#[test]
fn zero_radius_robust_blocks_match_nominal_bounds() {
    let cfg = desk(0.0);
    let (_, _, inst) = instance(&cfg, 4, Variant::Robust);
    assert!(inst.rob_r2.iter().all(|&r| r == 0.0));
    let (_, aux) = init_aux_instance(&inst).unwrap();
    let sub = build_subproblem_instance(&inst, &aux, &Structure::Relaxed).unwrap();
    let n = inst.n_bs;
    let he = &inst.rob_h[0];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut seen = [0usize; 2];
    for trial in 0..20 {
        let vk: Vec<CMatrix> = (0..inst.n_users).map(|_| rpsd(&mut rng, n, 0.3)).collect();
        let lambda = rpsd(&mut rng, n, 0.1);
        let sol = BFSolution::new(CMatrix::identity(inst.n_cp, inst.n_cp), vk, lambda);
        let mut a = aux_from_point(&inst, &sol).unwrap();
        // perturb the certified bounds so that some points violate them
        for k in 0..inst.n_users {
            a.zeta_hat[k][0] *= rng.gen_range(0.8..1.2);
            a.chi[k][0] *= rng.gen_range(0.8..1.2);
        }
        let x = sub.pack(&sol, &a);
        let viol: std::collections::BTreeMap<String, f64> =
            sub.problem.violations(&x).into_iter().collect();
        for k in 0..inst.n_users {
            let (q, r) = robust::robust_covariances(&inst, &sol, k);
            let nominal = a.zeta_hat[k][0] >= quad_form(he, &q) && a.chi[k][0] <= quad_form(he, &r) + 1.0;
            let block = |t: &str| viol.get(t).copied().unwrap_or(0.0) <= 0.0;
            let robust = block(&format!("t1_0_{k}")) && block(&format!("t2_0_{k}"));
            assert_eq!(robust, nominal, "trial {trial} user {k}");
            // the S-procedure LMI with a large multiplier gives the same verdict
            let mut p = ConicProblem::new();
            let kap = p.scalar("k");
            let c = p.scalar("c");
            sproc_lmi(
                &mut p,
                "u",
                SProcForm::Upper,
                &Affine::var(kap),
                &CMatExpr::from_constant(&q),
                &Affine::var(c),
                0.0,
                he,
            )
            .unwrap();
            let mut xx = vec![0.0; 2];
            xx[kap.0] = 1e6 * (1.0 + q.norm());
            xx[c.0] = a.zeta_hat[k][0];
            let lmi_ok = p.max_violation(&xx) <= 1e-9 * a.zeta_hat[k][0].abs().max(1.0);
            assert_eq!(lmi_ok, a.zeta_hat[k][0] >= quad_form(he, &q) * (1.0 + 1e-9), "trial {trial}");
            seen[nominal as usize] += 1;
        }
    }
    assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    // the worst case over a point-sized ball is the nominal SINR
    let (sol, _) = init_aux_instance(&inst).unwrap();
    let rep = robust_report(&inst, &sol);
    for k in 0..inst.n_users {
        let s = sinr(k, he, &sol.vk, &sol.lambda, 1.0);
        assert!((rep.sinr[k][0] - s).abs() <= 1e-12 * s.max(1.0));
    }
}

#[test]
fn robust_design_is_certified_over_the_ball() {
    let cfg = desk(0.05);
    let (_, _, inst) = instance(&cfg, 1, Variant::Robust);
    let out = solve_instance(&inst, &SrmOptions::default()).unwrap();
    let rep = robust_report(&inst, &out.normalized);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for z in 0..inst.n_eves {
        let he = &inst.rob_h[z];
        let radius = inst.rob_r2[z].sqrt();
        for k in 0..inst.n_users {
            let (q, r) = robust::robust_covariances(&inst, &out.normalized, k);
            for _ in 0..300 {
                let d = rvec(&mut rng, he.len(), 1.0);
                let s = rng.gen::<f64>().powf(1.0 / (2 * he.len()) as f64);
                let x = he + d.unscale(d.norm()) * C64::new(radius * s, 0.0);
                let g = quad_form(&x, &q) / (quad_form(&x, &r) + 1.0);
                assert!(g <= rep.sinr[k][z] * (1.0 + 1e-9));
                // the optimized certificates also bound every sample
                assert!(quad_form(&x, &q) <= out.aux.zeta_hat[k][z] + 1e-7 * out.aux.zeta_hat[k][z].max(1.0));
                assert!(quad_form(&x, &r) + 1.0 >= out.aux.chi[k][z] - 1e-7 * out.aux.chi[k][z].max(1.0));
            }
        }
    }
}

fn zeroed(d: &DualInfo) -> DualInfo {
    let mut z = d.clone();
    z.scalars.values_mut().for_each(|v| *v = 0.0);
    z.vectors.values_mut().for_each(|v| v.iter_mut().for_each(|x| *x = 0.0));
    z.matrices.values_mut().for_each(|m| m.fill(C64::new(0.0, 0.0)));
    z
}

#[test]
fn zero_multipliers_certify_nothing() {
    let cfg = desk(0.05);
    for v in Variant::ALL {
        let (_, _, inst) = instance(&cfg, 2, v);
        let out = solve_instance(&inst, &SrmOptions { t_max: 2, ..Default::default() }).unwrap();
        let rep = check_rank_certificates(&inst, &zeroed(&out.duals), &out.normalized).unwrap();
        assert!(!rep.v0_rank_bounded && !rep.v0_rank_one);
        assert!(!rep.psi1_positive && !rep.vk_rank_one, "{v}");
        // a missing tag is an error
        let mut d = out.duals.clone();
        d.scalars.remove("psi2");
        assert!(check_rank_certificates(&inst, &d, &out.normalized).is_err());
    }
}

#[test]
fn psd_upper_multipliers_pass_the_robust_condition() {
    let cfg = desk(0.05);
    let (_, _, inst) = instance(&cfg, 2, Variant::Robust);
    let out = solve_instance(&inst, &SrmOptions { t_max: 1, ..Default::default() }).unwrap();
    let mut d = out.duals.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for (tag, m) in d.matrices.iter_mut() {
        if tag.starts_with("t1_") {
            *m = rpsd(&mut rng, m.nrows(), 1.0);
        } else if tag.starts_with("t2_") {
            m.fill(C64::new(0.0, 0.0));
        }
    }
    let rep = check_rank_certificates(&inst, &d, &out.normalized).unwrap();
    for row in &rep.robust_min_eig {
        for &e in row {
            assert!(e >= -1e-9, "{e}");
        }
    }
}

#[test]
fn rank_one_point_without_certificate_is_flagged() {
    let cfg = desk(0.0);
    let (_, _, inst) = instance(&cfg, 0, Variant::Total);
    let out = solve_instance(&inst, &SrmOptions { t_max: 1, ..Default::default() }).unwrap();
    let (seed, _) = init_aux_instance(&inst).unwrap();
    let v0 = gram(&inst.g[0]).unscale(inst.g[0].norm_squared());
    let sol = BFSolution::new(v0, seed.vk.clone(), seed.lambda.clone());
    let rep = check_rank_certificates(&inst, &zeroed(&out.duals), &sol).unwrap();
    assert_eq!(rep.v0_rank, 1);
    assert!(rep.vk_ranks.iter().all(|&r| r == 1));
    assert!(rep.rank_one_without_certificate);
    assert!(min_eigenvalue(&sol.v0) >= -1e-12);
}

#[test]
fn power_fit_removes_small_budget_excess() {
    let cfg = desk(0.0);
    for v in [Variant::Total, Variant::Perbs] {
        let (_, _, inst) = instance(&cfg, 4, v);
        let (sol, _) = init_aux_instance(&inst).unwrap();
        let same = fit_power(&inst, &sol);
        assert!(same.vk == sol.vk && same.v0 == sol.v0 && same.lambda == sol.lambda);
        let mut over = sol.clone();
        for m in &mut over.vk {
            *m = m.scale(1.0 + 4e-6);
        }
        over.lambda = over.lambda.scale(1.0 + 4e-6);
        over.v0 = over.v0.scale(1.0 / over.cp_power() * (1.0 + 3e-6));
        let fit = fit_power(&inst, &over);
        let load = if inst.is_per_bs() {
            (0..inst.n_bs).map(|l| fit.bs_load(l) / inst.budgets[l]).fold(0.0, f64::max)
        } else {
            fit.bs_power() / inst.budgets[0]
        };
        assert!(load <= 1.0 + 1e-12, "{v}: {load}");
        assert!(fit.cp_power() <= 1.0 + 1e-12);
        // directions are untouched
        assert!((&fit.vk[0] - over.vk[0].scale(fit.vk[0].norm() / over.vk[0].norm())).norm() <= 1e-12 * over.vk[0].norm());
    }
}
