//! Secrecy-rate maximization by convex-concave iteration over SDP relaxations.
//!
//! Each iteration solves one convex subproblem in which the non-convex parts
//! of the secrecy-rate problem are replaced by tight convex surrogates around
//! the previous iterate:
//!
//! - the eavesdropper term `log₂(1+γ)` by its tangent,
//! - the bilinear `β·ε ≤ Tr(H̄V)` by an arithmetic-geometric upper bound (SOC),
//! - the squares `μ²`, `λ²` in the SINR splits by their tangents,
//! - the fronthaul cap `Σ log₂(1+τ) ≤ ω` by tangents of `log₂(1+τ)`.
//!
//! All quantities inside the solvers are normalized: the BS covariances are
//! divided by the reference BS power, `V₀` by the CP budget, channels are
//! scaled so that the noise power is one, and rates are in bit/s/Hz of the
//! mmWave band. Results are converted back to watts and bit/s at the boundary.

mod aux;
mod certificates;
mod instance;
mod robust;
mod solver;
mod subproblem;
#[cfg(test)]
mod tests;

pub use aux::{aux_from_point, fit_fronthaul, fit_power, init_aux, init_aux_instance};
pub use certificates::{check_rank_certificates, CertificateReport};
pub use instance::{Instance, PowerConstraintSpec, PowerMode};
pub use robust::{robust_covariances, robust_report, worst_case_eve_sinr, RobustReport};
pub use solver::{
    solve_instance, solve_srm, solve_structured, SolveTrace, SrmOptions, SrmOutput, Termination,
    TraceEntry,
};
pub use subproblem::{
    build_subproblem, build_subproblem_instance, normalized_rates, MatHandle, NormalizedRates,
    Structure, SubVars, Subproblem,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Total BS power constraint, perfect eavesdropper CSI.
    Total,
    /// Per-BS power constraints, perfect eavesdropper CSI.
    Perbs,
    /// Total BS power constraint, bounded eavesdropper CSI error.
    Robust,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Total, Variant::Perbs, Variant::Robust];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Total => "total",
            Variant::Perbs => "perbs",
            Variant::Robust => "robust",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "total" => Ok(Variant::Total),
            "perbs" | "per-bs" | "per_bs" => Ok(Variant::Perbs),
            "robust" => Ok(Variant::Robust),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }

    pub fn is_robust(self) -> bool {
        self == Variant::Robust
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Linearization anchors and auxiliary variables of one iterate
/// (normalized units). `[k][z]` indexing for per-eavesdropper entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    pub beta: Vec<f64>,
    pub eps: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub theta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub omega: f64,
    pub gamma_hat: Vec<Vec<f64>>,
    pub zeta_hat: Vec<Vec<f64>>,
    pub mu_hat: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
    /// S-procedure multipliers of the upper-bound LMIs, one per `(k, z)`.
    pub kappa: Vec<Vec<f64>>,
    /// S-procedure multipliers of the lower-bound LMIs, one per `(k, z)`.
    pub upsilon: Vec<Vec<f64>>,
}

/// Smallest admissible `β` anchor; the arithmetic-geometric bound divides by it.
pub const BETA_FLOOR: f64 = 1e-9;

impl AuxState {
    /// Anchors `β`, `ε` must be strictly positive.
    pub fn check_anchors(&self) -> Result<()> {
        for (k, (&b, &e)) in self.beta.iter().zip(&self.eps).enumerate() {
            if !(b > 0.0 && e > 0.0 && b.is_finite() && e.is_finite()) {
                return Err(Error::Domain(format!(
                    "nonpositive linearization anchor for user {k}: beta={b}, eps={e}"
                )));
            }
        }
        Ok(())
    }

    /// Anchors for the next iteration: the subproblem optimum with `β`
    /// floored away from zero.
    pub fn as_anchor(&self) -> AuxState {
        let mut a = self.clone();
        for b in &mut a.beta {
            *b = b.max(BETA_FLOOR);
        }
        for e in &mut a.eps {
            *e = e.max(1.0);
        }
        a
    }
}

/// `log₂(1+γₙ) + (γ − γₙ)/((1+γₙ)·ln 2)`: tangent of `log₂(1+γ)` at `γₙ`.
pub fn log2_tangent(gamma: f64, anchor: f64) -> f64 {
    (1.0 + anchor).log2() + (gamma - anchor) / ((1.0 + anchor) * std::f64::consts::LN_2)
}
