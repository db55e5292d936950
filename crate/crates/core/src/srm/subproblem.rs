use std::f64::consts::LN_2;

use crate::analogbf::AnalogBeamformer;
use crate::conic::{
    lmi_2x2, sproc_lmi_radius, Affine, CAffine, CMatExpr, ConicProblem, HermVar, SProcForm, Var,
};
use crate::error::{Error, Result};
use crate::linalg::{outer, psd_projection, quad_form, trace_re, CMatrix, CVector};
use crate::model::{ChannelSet, SystemConfig};
use crate::rates::{sinr, BFSolution};

use super::{log2_tangent, AuxState, Instance, Variant};

/// A covariance in the subproblem: either a free Hermitian PSD matrix or a
/// nonnegative multiple of a fixed unit-trace rank-one direction.
#[derive(Debug, Clone)]
pub enum MatHandle {
    Free(HermVar),
    Scaled { var: Var, dir: CMatrix },
}

impl MatHandle {
    fn free(p: &mut ConicProblem, name: &str, n: usize) -> Self {
        MatHandle::Free(p.hermitian(name, n))
    }

    fn scaled(p: &mut ConicProblem, name: &str, v: &CVector) -> Result<Self> {
        let nrm = v.norm();
        if !(nrm > 0.0) {
            return Err(Error::Domain(format!("{name}: zero beamforming direction")));
        }
        let u = v.unscale(nrm);
        Ok(MatHandle::Scaled {
            var: p.scalar(name),
            dir: outer(&u),
        })
    }

    /// `Re Tr(A·X)`.
    pub fn trace_with(&self, a: &CMatrix) -> Affine {
        match self {
            MatHandle::Free(h) => h.trace_with(a),
            MatHandle::Scaled { var, dir } => Affine::term(*var, trace_re(&(a * dir))),
        }
    }

    pub fn trace(&self) -> Affine {
        match self {
            MatHandle::Free(h) => h.trace(),
            MatHandle::Scaled { var, .. } => Affine::var(*var),
        }
    }

    pub fn diag(&self, i: usize) -> Affine {
        match self {
            MatHandle::Free(h) => Affine::var(Var(h.diag_var(i))),
            MatHandle::Scaled { var, dir } => Affine::term(*var, dir[(i, i)].re),
        }
    }

    pub fn expr(&self) -> CMatExpr {
        match self {
            MatHandle::Free(h) => h.expr(),
            MatHandle::Scaled { var, dir } => {
                let n = dir.nrows();
                let mut out = CMatExpr::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        let d = dir[(i, j)];
                        *out.get_mut(i, j) = CAffine {
                            re: Affine::term(*var, d.re),
                            im: Affine::term(*var, d.im),
                        };
                    }
                }
                out
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> CMatrix {
        match self {
            MatHandle::Free(h) => h.value(x),
            MatHandle::Scaled { var, dir } => dir.scale(x[var.0]),
        }
    }

    /// Writes `m` into `x`; a scaled handle stores the projection `Re Tr(D·m)`.
    pub fn store(&self, m: &CMatrix, x: &mut [f64]) {
        match self {
            MatHandle::Free(h) => h.store(m, x),
            MatHandle::Scaled { var, dir } => x[var.0] = trace_re(&(dir * m)),
        }
    }

    fn add_psd(&self, p: &mut ConicProblem, tag: &str) {
        match self {
            MatHandle::Free(h) => p.add_psd_var(tag, h),
            MatHandle::Scaled { var, .. } => p.add_nonneg(tag, Affine::var(*var)),
        }
    }
}

/// Whether the covariances are free or restricted to fixed rank-one directions.
#[derive(Debug, Clone, Default)]
pub enum Structure {
    #[default]
    Relaxed,
    /// `V₀ = a₀·v₀v₀ᴴ`, `Vₖ = aₖ·vₖvₖᴴ` with free scalars and free `Λ`.
    Restricted { v0: CVector, vk: Vec<CVector> },
}

/// Variable handles of one convex subproblem.
#[derive(Debug, Clone)]
pub struct SubVars {
    pub v0: MatHandle,
    pub vk: Vec<MatHandle>,
    pub lambda: MatHandle,
    pub beta: Vec<Var>,
    pub eps: Vec<Var>,
    pub tau: Vec<Var>,
    pub theta: Vec<Var>,
    pub lam: Vec<Var>,
    pub t: Vec<Var>,
    pub s: Vec<Var>,
    pub omega: Var,
    pub gamma: Vec<Vec<Var>>,
    pub zeta: Vec<Vec<Var>>,
    pub mu: Vec<Vec<Var>>,
    pub gamma_hat: Vec<Vec<Var>>,
    pub zeta_hat: Vec<Vec<Var>>,
    pub mu_hat: Vec<Vec<Var>>,
    pub chi: Vec<Vec<Var>>,
    pub kappa: Vec<Vec<Var>>,
    pub upsilon: Vec<Vec<Var>>,
}

/// A convex subproblem built around the anchors in `anchor`.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub problem: ConicProblem,
    pub vars: SubVars,
    pub anchor: AuxState,
}

fn vv(x: &[f64], v: &[Var]) -> Vec<f64> {
    v.iter().map(|v| x[v.0]).collect()
}

fn vvv(x: &[f64], v: &[Vec<Var>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| vv(x, r)).collect()
}

fn put(x: &mut [f64], v: &[Var], vals: &[f64]) {
    for (v, &a) in v.iter().zip(vals) {
        x[v.0] = a;
    }
}

fn put2(x: &mut [f64], v: &[Vec<Var>], vals: &[Vec<f64>]) {
    for (r, a) in v.iter().zip(vals) {
        put(x, r, a);
    }
}

impl SubVars {
    /// Normalized covariances and auxiliary values at `x`. Covariances are
    /// projected onto the PSD cone to remove the interior-point round-off.
    pub fn extract(&self, x: &[f64]) -> (BFSolution, AuxState) {
        let sol = BFSolution::new(
            psd_projection(&self.v0.value(x)),
            self.vk.iter().map(|h| psd_projection(&h.value(x))).collect(),
            psd_projection(&self.lambda.value(x)),
        );
        let aux = AuxState {
            beta: vv(x, &self.beta),
            eps: vv(x, &self.eps),
            gamma: vvv(x, &self.gamma),
            zeta: vvv(x, &self.zeta),
            mu: vvv(x, &self.mu),
            tau: vv(x, &self.tau),
            theta: vv(x, &self.theta),
            lambda: vv(x, &self.lam),
            omega: x[self.omega.0],
            gamma_hat: vvv(x, &self.gamma_hat),
            zeta_hat: vvv(x, &self.zeta_hat),
            mu_hat: vvv(x, &self.mu_hat),
            chi: vvv(x, &self.chi),
            kappa: vvv(x, &self.kappa),
            upsilon: vvv(x, &self.upsilon),
        };
        (sol, aux)
    }
}

impl Subproblem {
    pub fn n_vars(&self) -> usize {
        self.problem.n_vars()
    }

    /// Variable vector for a normalized point and auxiliary values. The
    /// epigraph variables take their tightest values.
    pub fn pack(&self, sol: &BFSolution, aux: &AuxState) -> Vec<f64> {
        let v = &self.vars;
        let mut x = vec![0.0; self.problem.n_vars()];
        v.v0.store(&sol.v0, &mut x);
        for (h, m) in v.vk.iter().zip(&sol.vk) {
            h.store(m, &mut x);
        }
        v.lambda.store(&sol.lambda, &mut x);
        put(&mut x, &v.beta, &aux.beta);
        put(&mut x, &v.eps, &aux.eps);
        put(&mut x, &v.tau, &aux.tau);
        put(&mut x, &v.theta, &aux.theta);
        put(&mut x, &v.lam, &aux.lambda);
        x[v.omega.0] = aux.omega;
        put2(&mut x, &v.gamma, &aux.gamma);
        put2(&mut x, &v.zeta, &aux.zeta);
        put2(&mut x, &v.mu, &aux.mu);
        put2(&mut x, &v.gamma_hat, &aux.gamma_hat);
        put2(&mut x, &v.zeta_hat, &aux.zeta_hat);
        put2(&mut x, &v.mu_hat, &aux.mu_hat);
        put2(&mut x, &v.chi, &aux.chi);
        put2(&mut x, &v.kappa, &aux.kappa);
        put2(&mut x, &v.upsilon, &aux.upsilon);
        for (k, t) in v.t.iter().enumerate() {
            x[t.0] = aux.beta[k].max(0.0).ln_1p() / LN_2;
        }
        let robust = !v.gamma_hat.is_empty();
        for (k, s) in v.s.iter().enumerate() {
            let (g, a) = if robust {
                (&aux.gamma_hat[k], &self.anchor.gamma_hat[k])
            } else {
                (&aux.gamma[k], &self.anchor.gamma[k])
            };
            x[s.0] = g
                .iter()
                .zip(a)
                .map(|(&g, &a)| log2_tangent(g, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
        x
    }

    /// Largest constraint violation of a packed point.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.problem.max_violation(x)
    }

    /// Surrogate objective (bit/s/Hz) of a packed point.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.problem.objective_value(x)
    }
}

/// Builds the convex subproblem of `variant` around `aux` from raw channels.
pub fn build_subproblem(
    variant: Variant,
    channels: &ChannelSet,
    bf: &AnalogBeamformer,
    cfg: &SystemConfig,
    aux: &AuxState,
) -> Result<Subproblem> {
    let inst = Instance::new(variant, channels, bf, cfg)?;
    build_subproblem_instance(&inst, aux, &Structure::Relaxed)
}

fn check_aux_dims(inst: &Instance, aux: &AuxState) -> Result<()> {
    let (k, z) = (inst.n_users, inst.n_eves);
    let ok1 = |v: &[f64]| v.len() == k;
    let ok2 = |v: &[Vec<f64>]| v.len() == k && v.iter().all(|r| r.len() == z);
    let mut good = ok1(&aux.beta) && ok1(&aux.eps) && ok1(&aux.tau) && ok1(&aux.lambda);
    if inst.variant.is_robust() {
        good &= ok2(&aux.gamma_hat) && ok2(&aux.mu_hat);
    } else {
        good &= ok2(&aux.gamma) && ok2(&aux.mu);
    }
    if good {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "auxiliary state does not match K={k}, Z={z} for variant {}",
            inst.variant
        )))
    }
}

fn grid(p: &mut ConicProblem, name: &str, k: usize, z: usize) -> Vec<Vec<Var>> {
    (0..k)
        .map(|k| (0..z).map(|z| p.scalar(format!("{name}[{k},{z}]"))).collect())
        .collect()
}

/// Builds the convex subproblem around `aux` for a normalized instance.
pub fn build_subproblem_instance(
    inst: &Instance,
    aux: &AuxState,
    structure: &Structure,
) -> Result<Subproblem> {
    check_aux_dims(inst, aux)?;
    aux.check_anchors()?;
    let (kk, zz, ll) = (inst.n_users, inst.n_eves, inst.n_bs);
    let robust = inst.variant.is_robust();
    let mut p = ConicProblem::new();

    let (v0, vk) = match structure {
        Structure::Relaxed => (
            MatHandle::free(&mut p, "V0", inst.n_cp),
            (0..kk)
                .map(|k| MatHandle::free(&mut p, &format!("V{}", k + 1), ll))
                .collect::<Vec<_>>(),
        ),
        Structure::Restricted { v0, vk } => {
            if v0.len() != inst.n_cp || vk.len() != kk || vk.iter().any(|v| v.len() != ll) {
                return Err(Error::Dimension("restricted directions have wrong shape".into()));
            }
            (
                MatHandle::scaled(&mut p, "a0", v0)?,
                vk.iter()
                    .enumerate()
                    .map(|(k, v)| MatHandle::scaled(&mut p, &format!("a{}", k + 1), v))
                    .collect::<Result<Vec<_>>>()?,
            )
        }
    };
    let lambda = MatHandle::free(&mut p, "Lambda", ll);

    let sc = |p: &mut ConicProblem, name: &str| -> Vec<Var> {
        (0..kk).map(|k| p.scalar(format!("{name}[{k}]"))).collect()
    };
    let beta = sc(&mut p, "beta");
    let eps = sc(&mut p, "eps");
    let tau = sc(&mut p, "tau");
    let theta = sc(&mut p, "theta");
    let lam = sc(&mut p, "lambda");
    let t = sc(&mut p, "t");
    let s = if zz > 0 { sc(&mut p, "s") } else { Vec::new() };
    let omega = p.scalar("omega");
    let (gamma, zeta, mu) = if robust {
        (Vec::new(), Vec::new(), Vec::new())
    } else {
        (grid(&mut p, "gamma", kk, zz), grid(&mut p, "zeta", kk, zz), grid(&mut p, "mu", kk, zz))
    };
    let (gamma_hat, zeta_hat, mu_hat, chi, kappa, upsilon) = if robust {
        (
            grid(&mut p, "gamma_hat", kk, zz),
            grid(&mut p, "zeta_hat", kk, zz),
            grid(&mut p, "mu_hat", kk, zz),
            grid(&mut p, "chi", kk, zz),
            grid(&mut p, "kappa", kk, zz),
            grid(&mut p, "upsilon", kk, zz),
        )
    } else {
        Default::default()
    };

    // BS power
    if inst.is_per_bs() {
        for l in 0..ll {
            let mut load = lambda.diag(l);
            for v in &vk {
                load += &v.diag(l);
            }
            p.add_nonneg(&format!("psi1_{l}"), Affine::constant(inst.budgets[l]) - load);
        }
    } else {
        let mut used = lambda.trace();
        for v in &vk {
            used += &v.trace();
        }
        p.add_nonneg("psi1", Affine::constant(inst.budgets[0]) - used);
    }
    // CP power
    p.add_nonneg("psi2", Affine::constant(1.0) - v0.trace());

    // interference seen through a Gram matrix by stream k
    let interference = |gm: &CMatrix, k: usize| -> Affine {
        let mut a = lambda.trace_with(gm);
        for (i, v) in vk.iter().enumerate() {
            if i != k {
                a += &v.trace_with(gm);
            }
        }
        a
    };

    let mut objective = Affine::default();
    for k in 0..kk {
        let hk = &inst.h_gram[k];
        let sig = vk[k].trace_with(hk);
        let intf = interference(hk, k);

        p.add_nonneg(
            &format!("psi3_{k}"),
            Affine::var(eps[k]) - intf.clone() - Affine::constant(1.0),
        );
        let (bn, en) = (aux.beta[k], aux.eps[k]);
        let a = bn / (2.0 * en);
        let b = en / (2.0 * bn);
        p.add_soc(
            &format!("psi4_{k}"),
            vec![
                sig.clone() + Affine::constant(1.0),
                Affine::term(eps[k], 2.0 * a.sqrt()),
                Affine::term(beta[k], 2.0 * b.sqrt()),
                sig.clone() - Affine::constant(1.0),
            ],
        );
        p.add_nonneg(&format!("beta_nonneg_{k}"), Affine::var(beta[k]));
        p.add_exp(
            &format!("rate_{k}"),
            Affine::term(t[k], LN_2),
            Affine::constant(1.0),
            Affine::var(beta[k]) + Affine::constant(1.0),
        );
        objective += &Affine::var(t[k]);

        // SINR upper bound τ used by the fronthaul cap
        p.add_nonneg(
            &format!("psi7_{k}"),
            Affine::var(theta[k]) + Affine::var(tau[k]) - sig.clone(),
        );
        let ln = aux.lambda[k];
        p.add_nonneg(
            &format!("theta_lin_{k}"),
            Affine::term(lam[k], 2.0 * ln) - Affine::constant(ln * ln) - Affine::var(theta[k]),
        );
        lmi_2x2(
            &mut p,
            &format!("psi8_{k}"),
            Affine::var(tau[k]),
            Affine::var(lam[k]),
            intf,
        );

        if zz > 0 {
            objective += &(-Affine::var(s[k]));
        }
        for z in 0..zz {
            let (g, gn) = if robust {
                (gamma_hat[k][z], aux.gamma_hat[k][z])
            } else {
                (gamma[k][z], aux.gamma[k][z])
            };
            let slope = 1.0 / ((1.0 + gn) * LN_2);
            p.add_nonneg(
                &format!("eve_epi_{k}_{z}"),
                Affine::var(s[k]) - Affine::term(g, slope)
                    - Affine::constant((1.0 + gn).log2() - gn * slope),
            );
            if robust {
                let mut rsum = lambda.expr();
                for (i, v) in vk.iter().enumerate() {
                    if i != k {
                        rsum = rsum.add(&v.expr());
                    }
                }
                let (q, r) = match &inst.rob_map {
                    None => (vk[k].expr(), rsum),
                    Some(f) => (
                        CMatExpr::congruence(f, &vk[k].expr()),
                        CMatExpr::congruence(f, &rsum),
                    ),
                };
                let he = &inst.rob_h[z];
                let r2 = inst.rob_r2[z];
                let (t1, t2) = (format!("t1_{z}_{k}"), format!("t2_{z}_{k}"));
                let (kap, ups) = (format!("kappa_{z}_{k}"), format!("upsilon_{z}_{k}"));
                if r2 > 0.0 {
                    sproc_lmi_radius(
                        &mut p,
                        &t1,
                        SProcForm::Upper,
                        &Affine::var(kappa[k][z]),
                        &q,
                        &Affine::var(zeta_hat[k][z]),
                        r2,
                        he,
                    )?;
                    sproc_lmi_radius(
                        &mut p,
                        &t2,
                        SProcForm::Lower,
                        &Affine::var(upsilon[k][z]),
                        &r,
                        &(Affine::var(chi[k][z]) - Affine::constant(1.0)),
                        r2,
                        he,
                    )?;
                    p.add_nonneg(&kap, Affine::var(kappa[k][z]));
                    p.add_nonneg(&ups, Affine::var(upsilon[k][z]));
                } else {
                    // the error ball is a single point: nominal bounds
                    p.add_nonneg(&t1, Affine::var(zeta_hat[k][z]) - CMatExpr::quad(he, &q));
                    p.add_nonneg(
                        &t2,
                        CMatExpr::quad(he, &r) + Affine::constant(1.0) - Affine::var(chi[k][z]),
                    );
                    p.add_eq(&kap, vec![Affine::var(kappa[k][z])]);
                    p.add_eq(&ups, vec![Affine::var(upsilon[k][z])]);
                }
                let mn = aux.mu_hat[k][z];
                p.add_nonneg(
                    &format!("zeta_hat_lin_{z}_{k}"),
                    Affine::term(mu_hat[k][z], 2.0 * mn)
                        - Affine::constant(mn * mn)
                        - Affine::var(zeta_hat[k][z]),
                );
                lmi_2x2(
                    &mut p,
                    &format!("rob_lmi_{z}_{k}"),
                    Affine::var(gamma_hat[k][z]),
                    Affine::var(mu_hat[k][z]),
                    Affine::var(chi[k][z]),
                );
            } else {
                let he = &inst.he_gram[z];
                p.add_nonneg(
                    &format!("psi5_{z}_{k}"),
                    Affine::var(zeta[k][z]) + Affine::var(gamma[k][z]) - vk[k].trace_with(he),
                );
                let mn = aux.mu[k][z];
                p.add_nonneg(
                    &format!("zeta_lin_{z}_{k}"),
                    Affine::term(mu[k][z], 2.0 * mn)
                        - Affine::constant(mn * mn)
                        - Affine::var(zeta[k][z]),
                );
                lmi_2x2(
                    &mut p,
                    &format!("psi6_{z}_{k}"),
                    Affine::var(gamma[k][z]),
                    Affine::var(mu[k][z]),
                    interference(he, k),
                );
            }
        }
    }

    // fronthaul capacity
    for l in 0..ll {
        p.add_exp(
            &format!("psi9_{l}"),
            Affine::term(omega, LN_2 / inst.eta),
            Affine::constant(1.0),
            v0.trace_with(&inst.g_gram[l]) + Affine::constant(1.0),
        );
    }
    let mut cap = Affine::var(omega);
    for k in 0..kk {
        let tn = aux.tau[k];
        let slope = 1.0 / ((1.0 + tn) * LN_2);
        cap = cap - Affine::term(tau[k], slope) - Affine::constant((1.0 + tn).log2() - tn * slope);
    }
    p.add_nonneg("fh_cap", cap);

    v0.add_psd(&mut p, "omega_0");
    for (k, v) in vk.iter().enumerate() {
        v.add_psd(&mut p, &format!("omega_v{k}"));
    }
    lambda.add_psd(&mut p, "omega_lambda");

    p.maximize(objective);
    Ok(Subproblem {
        problem: p,
        vars: SubVars {
            v0,
            vk,
            lambda,
            beta,
            eps,
            tau,
            theta,
            lam,
            t,
            s,
            omega,
            gamma,
            zeta,
            mu,
            gamma_hat,
            zeta_hat,
            mu_hat,
            chi,
            kappa,
            upsilon,
        },
        anchor: aux.clone(),
    })
}

/// Rates of a normalized point in bit/s/Hz of the mmWave band, against the
/// eavesdropper channels used by the design.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRates {
    pub access: Vec<f64>,
    pub eve: Vec<Vec<f64>>,
    pub fronthaul: Vec<f64>,
}

impl NormalizedRates {
    pub fn secrecy(&self) -> Vec<f64> {
        self.access
            .iter()
            .zip(&self.eve)
            .map(|(a, e)| (a - e.iter().copied().fold(0.0, f64::max)).max(0.0))
            .collect()
    }

    pub fn sum_secrecy(&self) -> f64 {
        self.secrecy().iter().sum()
    }

    pub fn sum_access(&self) -> f64 {
        self.access.iter().sum()
    }

    pub fn fronthaul_min(&self) -> f64 {
        self.fronthaul.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn normalized_rates(inst: &Instance, sol: &BFSolution) -> NormalizedRates {
    let l2 = |x: f64| x.max(0.0).ln_1p() / LN_2;
    let access = (0..inst.n_users)
        .map(|k| l2(sinr(k, &inst.hbar[k], &sol.vk, &sol.lambda, 1.0)))
        .collect();
    let eve = (0..inst.n_users)
        .map(|k| {
            inst.hebar
                .iter()
                .map(|he| l2(sinr(k, he, &sol.vk, &sol.lambda, 1.0)))
                .collect()
        })
        .collect();
    let fronthaul = inst
        .g
        .iter()
        .map(|g| inst.eta * l2(quad_form(g, &sol.v0)))
        .collect();
    NormalizedRates {
        access,
        eve,
        fronthaul,
    }
}
