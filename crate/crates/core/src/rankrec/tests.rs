use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::analogbf::design_analog_bf;
use crate::linalg::{frobenius, gram, min_eigenvalue, trace_re};
use crate::model::{generate_instance, SystemConfig};
use crate::srm::{solve_instance, Variant};

fn rvec(rng: &mut ChaCha8Rng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rank_r(rng: &mut ChaCha8Rng, n: usize, r: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    for _ in 0..r {
        m += outer(&rvec(rng, n));
    }
    m
}

fn desk_instance(seed: u64, v: Variant) -> Instance {
    let cfg = SystemConfig::desk_scale();
    let (_, ch) = generate_instance(&cfg, seed).unwrap();
    let bf = design_analog_bf(&ch, &cfg).unwrap();
    Instance::new(v, &ch, &bf, &cfg).unwrap()
}

#[test]
fn rank_of_identity_and_outer_products() {
    assert_eq!(numerical_rank(&CMatrix::identity(3, 3), RANK_RATIO_TOL).unwrap(), 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = rvec(&mut rng, 4);
    assert_eq!(numerical_rank(&outer(&v), RANK_RATIO_TOL).unwrap(), 1);
    // eigenvalues ‖v‖² + 1e-9 and 1e-9: the ratio is far below 1e-6
    assert!(v.norm_squared() > 1e-2);
    let m = outer(&v) + CMatrix::identity(4, 4).scale(1e-9);
    assert_eq!(numerical_rank(&m, RANK_RATIO_TOL).unwrap(), 1);
    assert_eq!(numerical_rank(&CMatrix::zeros(2, 2), RANK_RATIO_TOL).unwrap(), 0);
}

#[test]
fn rank_rejects_indefinite_input() {
    let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(-0.5, 0.0)]));
    assert!(matches!(numerical_rank(&m, RANK_RATIO_TOL), Err(Error::NotPsd(_))));
}

#[test]
fn null_vector_solves_the_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 2..7 {
        let rows: Vec<Vec<f64>> = (0..n - 1)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let x = null_vector(&rows, n).unwrap();
        assert!(x.iter().any(|&v| v != 0.0));
        for r in &rows {
            let d: f64 = r.iter().zip(&x).map(|(a, b)| a * b).sum();
            assert!(d.abs() < 1e-10, "residual {d}");
        }
    }
    assert!(null_vector(&[vec![1.0, 0.0], vec![0.0, 1.0]], 2).is_none());
}

#[test]
fn hermitian_parametrization_matches_trace_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = rank_r(&mut rng, 3, 2);
    let p: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = hermitian_from_params(&p, 3);
    assert!(hermitian_asymmetry(&g) == 0.0);
    let direct = (&a * &g).trace();
    let row: f64 = trace_row(&a).iter().zip(&p).map(|(x, y)| x * y).sum();
    assert!((direct.re - row).abs() < 1e-12 && direct.im.abs() < 1e-12);
}

#[test]
fn rank_one_input_is_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v0 = outer(&rvec(&mut rng, 4));
    let g: Vec<CVector> = (0..3).map(|_| rvec(&mut rng, 4)).collect();
    let (out, passes) = reduce_rank_v0(&v0, &g, &[0, 1, 2]).unwrap();
    assert_eq!(passes, 0);
    assert!(frobenius(&(out - &v0)) < 1e-12 * frobenius(&v0));
}

#[test]
fn reduction_needs_a_binding_constraint() {
    let v0 = CMatrix::identity(2, 2);
    let g = vec![CVector::from_element(2, C64::new(1.0, 0.0))];
    assert!(matches!(reduce_rank_v0(&v0, &g, &[]), Err(Error::Recovery(_))));
    assert!(matches!(reduce_rank_v0(&v0, &g, &[1]), Err(Error::Dimension(_))));
}

fn check_reduction(v0: &CMatrix, g: &[CVector], active: &[usize]) {
    let (out, passes) = reduce_rank_v0(v0, g, active).unwrap();
    let r0 = numerical_rank(v0, RANK_RATIO_TOL).unwrap();
    let r1 = numerical_rank(&out, RANK_RATIO_TOL).unwrap();
    assert!(r1 * r1 <= active.len(), "rank {r1} with {} constraints", active.len());
    assert!(r1 + passes <= r0, "each pass drops the rank: {r0} -> {r1} in {passes}");
    for &l in active {
        let (a, b) = (quad_form(&g[l], v0), quad_form(&g[l], &out));
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "trace {l}: {a} vs {b}");
    }
    assert!(trace_re(&out) <= trace_re(v0) + 1e-8);
    assert!(min_eigenvalue(&out) >= -1e-9 * trace_re(v0));
}

#[test]
fn single_binding_constraint_gives_rank_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let v0 = rank_r(&mut rng, 5, 4);
    let g: Vec<CVector> = (0..3).map(|_| rvec(&mut rng, 5)).collect();
    check_reduction(&v0, &g, &[1]);
}

#[test]
fn rank_three_with_two_binding_constraints() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let v0 = rank_r(&mut rng, 4, 3);
    let g: Vec<CVector> = (0..2).map(|_| rvec(&mut rng, 4)).collect();
    check_reduction(&v0, &g, &[0, 1]);
    let (out, _) = reduce_rank_v0(&v0, &g, &[0, 1]).unwrap();
    assert_eq!(numerical_rank(&out, RANK_RATIO_TOL).unwrap(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn reduction_properties(seed in 0u64..10_000, n in 2usize..7, r in 1usize..6, links in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = r.min(n);
        let v0 = rank_r(&mut rng, n, r);
        let g: Vec<CVector> = (0..links).map(|_| rvec(&mut rng, n)).collect();
        let active: Vec<usize> = (0..links).collect();
        check_reduction(&v0, &g, &active);
    }
}

#[test]
fn signal_component_of_a_hand_built_rank_two_covariance() {
    let h = CVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(0.5, 0.0)]);
    // d1 with h·d1 = 0, d0 orthonormal to it
    let d1 = CVector::from_vec(vec![C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, 0.0)])
        .unscale(2f64.sqrt());
    assert!(row_dot(&h, &d1).norm() < 1e-15);
    let d0 = CVector::from_vec(vec![C64::new(0.0, 1.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)])
        .unscale(2f64.sqrt());
    let (a0, a1) = (0.7, 0.3);
    let vk = outer(&d0).scale(a0) + outer(&d1).scale(a1);
    let hat = signal_component(&vk, &h);
    assert!(frobenius(&(&hat - outer(&d0).scale(a0))) < 1e-12);
    let lambda = CMatrix::identity(3, 3).scale(0.05);
    let lam_hat = &lambda + outer(&d1).scale(a1);
    let before = crate::rates::sinr(0, &h, &[vk.clone()], &lambda, 1.0);
    let after = crate::rates::sinr(0, &h, &[hat], &lam_hat, 1.0);
    assert!((before - after).abs() <= 1e-9 * before);
}

#[test]
fn absorbing_into_noise_never_helps_an_eavesdropper() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inst = desk_instance(2, Variant::Total);
    for _ in 0..20 {
        let sol = BFSolution::new(
            rank_r(&mut rng, inst.n_cp, 2),
            (0..inst.n_users).map(|_| rank_r(&mut rng, inst.n_bs, 3).scale(0.1)).collect(),
            rank_r(&mut rng, inst.n_bs, 2).scale(0.05),
        );
        let before = normalized_rates(&inst, &sol);
        for k in 0..inst.n_users {
            let adj = absorb_into_noise(&sol, &inst, k);
            let after = normalized_rates(&inst, &adj);
            assert!((before.access[k] - after.access[k]).abs() < 1e-9);
            assert_eq!(numerical_rank(&adj.vk[k], RANK_RATIO_TOL).unwrap(), 1);
            assert!((adj.bs_power() - sol.bs_power()).abs() < 1e-12);
            for l in 0..inst.n_bs {
                assert!((adj.bs_load(l) - sol.bs_load(l)).abs() < 1e-12);
            }
            for (b, a) in before.eve[k].iter().zip(&after.eve[k]) {
                assert!(*a <= b + 1e-12);
            }
        }
    }
}

/// `ψ₁I + Σ_{i≠k}(ψ₃ⁱ − ψ₈ⁱ)H̄ᵢ + Σ_z(ψ₅^{z,k} − Σ_{i≠k}ψ₆^{z,i})H̄ᵉ_z + ψ₇ᵏH̄ₖ`
/// assembled term by term from the multipliers.
fn y_from_multipliers(inst: &Instance, d: &DualInfo, k: usize) -> CMatrix {
    let n = inst.n_bs;
    let corner = |tag: String| d.matrix(&tag).unwrap()[(1, 1)].re;
    let mut y = if inst.is_per_bs() {
        CMatrix::from_diagonal(&CVector::from_fn(n, |l, _| {
            C64::new(d.scalar(&format!("psi1_{l}")).unwrap(), 0.0)
        }))
    } else {
        CMatrix::identity(n, n).scale(d.scalar("psi1").unwrap())
    };
    for i in (0..inst.n_users).filter(|&i| i != k) {
        let w = d.scalar(&format!("psi3_{i}")).unwrap() - corner(format!("psi8_{i}"));
        y += inst.h_gram[i].scale(w);
    }
    for z in 0..inst.n_eves {
        let mut w = d.scalar(&format!("psi5_{z}_{k}")).unwrap();
        for i in (0..inst.n_users).filter(|&i| i != k) {
            w -= corner(format!("psi6_{z}_{i}"));
        }
        y += inst.he_gram[z].scale(w);
    }
    y + inst.h_gram[k].scale(d.scalar(&format!("psi7_{k}")).unwrap())
}

#[test]
fn stationarity_in_the_user_covariances() {
    for v in [Variant::Total, Variant::Perbs] {
        let inst = desk_instance(1, v);
        let out = solve_instance(&inst, &SrmOptions::default()).unwrap();
        for k in 0..inst.n_users {
            let direct = y_matrix(&inst, &out.duals, k).unwrap();
            let assembled = y_from_multipliers(&inst, &out.duals, k);
            let err = frobenius(&(&direct - &assembled)) / frobenius(&assembled).max(1e-12);
            assert!(err < 1e-5, "{v} user {k}: relative mismatch {err:.3e}");
            // complementary slackness Ωₖ·Vₖ ≈ 0
            let omega = out.duals.matrix(&format!("omega_v{k}")).unwrap();
            let cs = frobenius(&(omega * &out.normalized.vk[k]));
            assert!(cs < 1e-5 * frobenius(omega).max(1.0), "{v} user {k}: ΩV = {cs:.3e}");
        }
    }
}

#[test]
fn reconstruction_preserves_objective_and_constraints() {
    for (seed, v) in [(0, Variant::Total), (1, Variant::Perbs), (3, Variant::Robust)] {
        let inst = desk_instance(seed, v);
        let out = solve_instance(&inst, &SrmOptions::default()).unwrap();
        let (sol, paths) = reconstruct_vk(&inst, &out)
            .or_else(|_| reconstruct_vk_primal(&inst, &out))
            .unwrap();
        assert_eq!(paths.len(), inst.n_users);
        let (o0, v0) = subproblem_check(&out, &out.normalized);
        let (o1, v1) = subproblem_check(&out, &sol);
        assert!((o0 - o1).abs() <= 1e-6 * o0.abs().max(1.0), "{v}: {o0} vs {o1}");
        assert!(v1 <= v0.max(0.0) + 1e-6);
        for (k, m) in sol.vk.iter().enumerate() {
            assert!(numerical_rank(m, RANK_RATIO_TOL).unwrap() <= 1, "{v} user {k}");
        }
        let before = normalized_rates(&inst, &out.normalized);
        let after = normalized_rates(&inst, &sol);
        for k in 0..inst.n_users {
            assert!((before.access[k] - after.access[k]).abs() < 1e-7);
            for (b, a) in before.eve[k].iter().zip(&after.eve[k]) {
                assert!(*a <= b + 1e-9);
            }
        }
    }
}

#[test]
fn rank_one_covariances_pass_through_reconstruction() {
    let inst = desk_instance(0, Variant::Total);
    let mut out = solve_instance(&inst, &SrmOptions::default()).unwrap();
    out.normalized = with_vectors(&out.normalized);
    let (sol, paths) = reconstruct_vk(&inst, &out).unwrap();
    assert!(paths.iter().all(|p| *p == VkPath::RankOne));
    assert!(frobenius(&(&sol.lambda - &out.normalized.lambda)) == 0.0);
}

#[test]
fn candidates_reproduce_the_covariance_on_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v0 = rank_r(&mut rng, 4, 3);
    let n = 100_000;
    let cands = draw_v0_candidates(&v0, n, &mut rng);
    let mut mean = CMatrix::zeros(4, 4);
    for c in &cands {
        mean += outer(c);
    }
    let mean = mean.unscale(n as f64);
    let err = frobenius(&(&mean - &v0)) / frobenius(&v0);
    assert!(err <= 0.02, "relative error {err:.4}");
}

#[test]
fn rank_one_covariance_gives_collinear_candidates() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let u = rvec(&mut rng, 5);
    let un = u.unscale(u.norm());
    for c in draw_v0_candidates(&outer(&u), 20, &mut rng) {
        let align = row_dot(&un.map(|z| z.conj()), &c).norm() / c.norm();
        assert!((align - 1.0).abs() < 1e-9);
    }
}

fn quick() -> SrmOptions {
    SrmOptions {
        t_max: 8,
        ..SrmOptions::default()
    }
}

/// A relaxed point with a deliberately rank-two `V₀` and rank-one `Vₖ`.
fn spread_point(inst: &Instance) -> BFSolution {
    let out = solve_instance(inst, &quick()).unwrap();
    let base = with_vectors(&out.normalized);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let extra = outer(&rvec(&mut rng, inst.n_cp));
    let v0 = (&base.v0 + extra.scale(trace_re(&base.v0) / trace_re(&extra))).scale(0.5);
    BFSolution::new(v0, base.vk.clone(), base.lambda.clone())
}

#[test]
fn more_candidates_never_hurt() {
    let inst = desk_instance(2, Variant::Total);
    let sol = spread_point(&inst);
    assert_eq!(numerical_rank(&sol.v0, RANK_RATIO_TOL).unwrap(), 2);
    let one = randomize_v0(&inst, &sol, 1, &mut ChaCha8Rng::seed_from_u64(5), &quick()).unwrap();
    let many = randomize_v0(&inst, &sol, 6, &mut ChaCha8Rng::seed_from_u64(5), &quick()).unwrap();
    assert!(many.secrecy >= one.secrecy - 1e-12);
    assert_eq!(numerical_rank(&many.solution.v0, RANK_RATIO_TOL).unwrap(), 1);
    assert!(feasibility_residual(&inst, &many.solution) <= 1e-6);
}

#[test]
fn randomization_of_a_rank_two_point_stays_close_to_the_relaxation() {
    let inst = desk_instance(2, Variant::Total);
    let sol = spread_point(&inst);
    let relaxed = normalized_rates(&inst, &sol).sum_secrecy();
    let r = randomize_v0(&inst, &sol, DEFAULT_CANDIDATES, &mut ChaCha8Rng::seed_from_u64(9), &quick())
        .unwrap();
    assert!(r.secrecy >= 0.95 * relaxed, "{} vs relaxed {relaxed}", r.secrecy);
}

#[test]
fn zero_candidates_are_rejected() {
    let inst = desk_instance(0, Variant::Total);
    let sol = BFSolution::new(
        CMatrix::identity(inst.n_cp, inst.n_cp),
        vec![gram(&inst.hbar[0]); inst.n_users],
        CMatrix::zeros(inst.n_bs, inst.n_bs),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(randomize_v0(&inst, &sol, 0, &mut rng, &quick()).is_err());
}

#[test]
fn full_recovery_is_rank_one_and_feasible() {
    for (seed, v) in [(0, Variant::Total), (4, Variant::Perbs), (5, Variant::Robust)] {
        let inst = desk_instance(seed, v);
        let out = solve_instance(&inst, &SrmOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sol, rep) = recover(&inst, &out, &RecoveryOptions::default(), &mut rng).unwrap();
        sol.validate().unwrap();
        assert_eq!(rep.v0_rank_after, 1, "{v}");
        assert!(rep.vk_ranks_after.iter().all(|&r| r <= 1), "{v}");
        assert!(rep.residual_after <= 1e-6, "{v}: residual {}", rep.residual_after);
        assert!(rep.secrecy_after >= rep.secrecy_before - 1e-4 * rep.secrecy_before.max(1.0));
    }
}
