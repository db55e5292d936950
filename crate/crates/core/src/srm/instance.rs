use serde::{Deserialize, Serialize};

use crate::analogbf::{effective_channels, AnalogBeamformer};
use crate::error::{Error, Result};
use crate::linalg::{gram, CMatrix, CVector};
use crate::model::{ChannelSet, SystemConfig};
use crate::rates::BFSolution;

use super::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerMode {
    Total,
    PerBs,
}

/// BS power constraint in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerConstraintSpec {
    pub mode: PowerMode,
    /// One entry for `Total`, one per BS for `PerBs`.
    pub budgets: Vec<f64>,
}

impl PowerConstraintSpec {
    pub fn for_variant(variant: Variant, cfg: &SystemConfig) -> Self {
        match variant {
            Variant::Perbs => PowerConstraintSpec {
                mode: PowerMode::PerBs,
                budgets: cfg.per_bs_budgets(),
            },
            Variant::Total | Variant::Robust => PowerConstraintSpec {
                mode: PowerMode::Total,
                budgets: vec![cfg.p_bs_total],
            },
        }
    }

    /// Power used to normalize the BS covariances.
    pub fn reference(&self) -> f64 {
        self.budgets.iter().sum()
    }
}

/// One network instance in the normalized units used by the subproblems.
#[derive(Debug, Clone)]
pub struct Instance {
    pub variant: Variant,
    pub n_cp: usize,
    pub n_bs: usize,
    pub n_ant: usize,
    pub n_users: usize,
    pub n_eves: usize,
    /// Normalized effective user channels `h̄ₖ·√(P_ref/(W_mm N₀))`.
    pub hbar: Vec<CVector>,
    /// Normalized effective eavesdropper channels used in the design
    /// (true channels for the perfect-CSI variants, estimates for the robust one).
    pub hebar: Vec<CVector>,
    /// Normalized full-length eavesdropper estimates (`ML`).
    pub he_full: Vec<CVector>,
    pub sigma: Vec<f64>,
    /// Map from the digital domain to the domain of the robust LMIs: `None`
    /// when `F` has orthonormal columns (the error ball then projects exactly
    /// onto the `L`-dimensional effective domain), otherwise `F` itself.
    pub rob_map: Option<CMatrix>,
    /// Eavesdropper estimates in the robust LMI domain.
    pub rob_h: Vec<CVector>,
    /// Squared error-ball radii `σ_z‖ĥ_z‖²` (normalized units).
    pub rob_r2: Vec<f64>,
    /// Dense analog beamformer `F`, `ML × L`.
    pub f: CMatrix,
    /// Normalized fronthaul channels `g_l·√(P_cp/(W_mc N₀))`.
    pub g: Vec<CVector>,
    pub h_gram: Vec<CMatrix>,
    pub he_gram: Vec<CMatrix>,
    pub g_gram: Vec<CMatrix>,
    pub power: PowerConstraintSpec,
    /// Budgets divided by the reference power.
    pub budgets: Vec<f64>,
    pub eta: f64,
    pub p_ref: f64,
    pub p_cp: f64,
}

impl Instance {
    pub fn new(
        variant: Variant,
        channels: &ChannelSet,
        bf: &AnalogBeamformer,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        Self::with_power(variant, PowerConstraintSpec::for_variant(variant, cfg), channels, bf, cfg)
    }

    pub fn with_power(
        variant: Variant,
        power: PowerConstraintSpec,
        channels: &ChannelSet,
        bf: &AnalogBeamformer,
        cfg: &SystemConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        channels.check(cfg)?;
        let n_bs = cfg.n_bs;
        match power.mode {
            PowerMode::Total if power.budgets.len() != 1 => {
                return Err(Error::Config("total power needs exactly one budget".into()))
            }
            PowerMode::PerBs if power.budgets.len() != n_bs => {
                return Err(Error::Config(format!(
                    "{} per-BS budgets for {n_bs} BSs",
                    power.budgets.len()
                )))
            }
            _ => {}
        }
        if power.budgets.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            return Err(Error::Config("power budgets must be positive".into()));
        }
        let p_ref = power.reference();
        let p_cp = cfg.p_cp;
        let s_mm = (p_ref / cfg.noise_mmwave()).sqrt();
        let s_mc = (p_cp / cfg.noise_microwave()).sqrt();
        let hbar: Vec<CVector> = effective_channels(&channels.h, bf)?
            .into_iter()
            .map(|h| h * crate::linalg::C64::new(s_mm, 0.0))
            .collect();
        let eve_src = if variant.is_robust() {
            &channels.he_est
        } else {
            &channels.he_true
        };
        let hebar: Vec<CVector> = effective_channels(eve_src, bf)?
            .into_iter()
            .map(|h| h * crate::linalg::C64::new(s_mm, 0.0))
            .collect();
        let he_full: Vec<CVector> = channels
            .he_est
            .iter()
            .map(|h| h * crate::linalg::C64::new(s_mm, 0.0))
            .collect();
        let g: Vec<CVector> = channels
            .g
            .iter()
            .map(|g| g * crate::linalg::C64::new(s_mc, 0.0))
            .collect();
        if hbar.iter().any(|h| h.norm_squared() == 0.0) {
            return Err(Error::Infeasible("a user has an all-zero effective channel".into()));
        }
        if g.iter().any(|g| g.norm_squared() == 0.0) {
            return Err(Error::Infeasible("a fronthaul channel is all zero".into()));
        }
        let budgets = power.budgets.iter().map(|b| b / p_ref).collect();
        let f = bf.dense();
        let fhf = f.adjoint() * &f;
        let orthonormal = (fhf - CMatrix::identity(n_bs, n_bs)).norm() <= 1e-9;
        let sigma: Vec<f64> = (0..cfg.n_eves).map(|z| cfg.sigma(z)).collect();
        let rob_r2 = he_full
            .iter()
            .zip(&sigma)
            .map(|(h, s)| s * h.norm_squared())
            .collect();
        let (rob_map, rob_h) = if orthonormal {
            let est: Vec<CVector> = effective_channels(&channels.he_est, bf)?
                .into_iter()
                .map(|h| h * crate::linalg::C64::new(s_mm, 0.0))
                .collect();
            (None, est)
        } else {
            (Some(f.clone()), he_full.clone())
        };
        Ok(Instance {
            variant,
            n_cp: cfg.n_cp_antennas,
            n_bs,
            n_ant: cfg.n_bs_antennas,
            n_users: cfg.n_users,
            n_eves: cfg.n_eves,
            h_gram: hbar.iter().map(gram).collect(),
            he_gram: hebar.iter().map(gram).collect(),
            g_gram: g.iter().map(gram).collect(),
            hbar,
            hebar,
            he_full,
            sigma,
            rob_map,
            rob_h,
            rob_r2,
            f,
            g,
            power,
            budgets,
            eta: cfg.eta(),
            p_ref,
            p_cp,
        })
    }

    pub fn is_per_bs(&self) -> bool {
        self.power.mode == PowerMode::PerBs
    }

    /// Physical (W) solution from a normalized one.
    pub fn to_physical(&self, s: &BFSolution) -> BFSolution {
        scale_solution(s, self.p_cp, self.p_ref)
    }

    /// Normalized solution from a physical (W) one.
    pub fn to_normalized(&self, s: &BFSolution) -> BFSolution {
        scale_solution(s, 1.0 / self.p_cp, 1.0 / self.p_ref)
    }
}

fn scale_solution(s: &BFSolution, cp: f64, bs: f64) -> BFSolution {
    let c = |x: f64| crate::linalg::C64::new(x, 0.0);
    BFSolution {
        v0: s.v0.scale(cp),
        vk: s.vk.iter().map(|v| v.scale(bs)).collect(),
        lambda: s.lambda.scale(bs),
        v0_vec: s.v0_vec.as_ref().map(|v| v * c(cp.sqrt())),
        vk_vec: s
            .vk_vec
            .as_ref()
            .map(|vs| vs.iter().map(|v| v * c(bs.sqrt())).collect()),
    }
}
