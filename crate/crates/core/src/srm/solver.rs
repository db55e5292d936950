use serde::{Deserialize, Serialize};

use crate::analogbf::AnalogBeamformer;
use crate::conic::{DualInfo, SolveStatus, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{ChannelSet, SystemConfig};
use crate::rates::BFSolution;

use super::subproblem::{build_subproblem_instance, normalized_rates, Structure, Subproblem};
use super::{init_aux_instance, AuxState, Instance, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrmOptions {
    /// Maximum number of convex subproblems.
    pub t_max: usize,
    /// Stop when `|fₙ − fₙ₋₁| / max(|fₙ₋₁|, 1)` falls below this.
    pub tol_rel: f64,
    pub solver: SolverOptions,
}

impl Default for SrmOptions {
    fn default() -> Self {
        SrmOptions {
            t_max: 30,
            tol_rel: 1e-4,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// A later subproblem returned no usable solution; the previous iterate is kept.
    SolverFailure(SolveStatus),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Optimal subproblem objective in bit/s/Hz.
    pub surrogate: f64,
    /// Sum secrecy rate of the relaxed iterate (bit/s/Hz, design channels).
    pub secrecy: f64,
    /// Largest constraint violation of the returned point.
    pub max_violation: f64,
    /// Largest violation of the previous iterate in this subproblem.
    pub transfer_violation: f64,
    pub status: SolveStatus,
    pub solver_iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub entries: Vec<TraceEntry>,
    pub termination: Termination,
}

impl SolveTrace {
    pub fn surrogates(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.surrogate).collect()
    }

    pub fn iterations(&self) -> usize {
        self.entries.len()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    /// Largest decrease between consecutive surrogate values (0 if monotone).
    pub fn max_decrease(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[0].surrogate - w[1].surrogate).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.max_decrease() <= tol
    }

    pub fn final_surrogate(&self) -> f64 {
        self.entries.last().map_or(f64::NAN, |e| e.surrogate)
    }
}

/// Result of a convex-concave run.
#[derive(Debug, Clone)]
pub struct SrmOutput {
    pub variant: Variant,
    /// Final iterate in normalized units.
    pub normalized: BFSolution,
    /// Final iterate in watts.
    pub solution: BFSolution,
    pub aux: AuxState,
    pub duals: DualInfo,
    pub trace: SolveTrace,
    /// Last subproblem and its primal vector, for re-evaluating modified points.
    pub subproblem: Subproblem,
    pub x: Vec<f64>,
}

impl SrmOutput {
    pub fn surrogate(&self) -> f64 {
        self.trace.final_surrogate()
    }
}

/// Runs the iteration from an explicit normalized starting point.
pub fn solve_structured(
    inst: &Instance,
    start: (BFSolution, AuxState),
    structure: &Structure,
    opts: &SrmOptions,
) -> Result<SrmOutput> {
    if opts.t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    let (mut prev_sol, mut prev_aux) = start;
    let mut entries: Vec<TraceEntry> = Vec::new();
    let mut last: Option<(Subproblem, Vec<f64>, DualInfo)> = None;
    let mut termination = Termination::MaxIterations;
    for n in 1..=opts.t_max {
        let sub = build_subproblem_instance(inst, &prev_aux.as_anchor(), structure)?;
        let transfer = sub.max_violation(&sub.pack(&prev_sol, &prev_aux));
        let res = sub.problem.solve(&opts.solver)?;
        if !res.status.has_solution() {
            if n == 1 || res.status == SolveStatus::PrimalInfeasible {
                return Err(Error::Solver {
                    status: res.status,
                    detail: format!(
                        "{} subproblem {n}: previous iterate violation {transfer:.3e}, \
                         primal residual {:.3e}, dual residual {:.3e}",
                        inst.variant, res.primal_residual, res.dual_residual
                    ),
                });
            }
            log::warn!(
                "{} subproblem {n} returned {:?}; keeping iterate {}",
                inst.variant,
                res.status,
                n - 1
            );
            termination = Termination::SolverFailure(res.status);
            break;
        }
        let (sol, aux) = sub.vars.extract(&res.x);
        let surrogate = sub.objective(&res.x);
        let entry = TraceEntry {
            iteration: n,
            surrogate,
            secrecy: normalized_rates(inst, &sol).sum_secrecy(),
            max_violation: sub.max_violation(&res.x),
            transfer_violation: transfer,
            status: res.status,
            solver_iterations: res.iterations,
        };
        log::debug!(
            "{} iter {n}: surrogate {surrogate:.6}, secrecy {:.6}",
            inst.variant,
            entry.secrecy
        );
        let duals = sub.problem.duals(&res)?;
        let stop = entries.last().is_some_and(|p| {
            (surrogate - p.surrogate).abs() / p.surrogate.abs().max(1.0) < opts.tol_rel
        });
        entries.push(entry);
        last = Some((sub, res.x, duals));
        prev_sol = sol;
        prev_aux = aux;
        if stop {
            termination = Termination::Converged;
            break;
        }
    }
    let (subproblem, x, duals) = last.expect("at least one subproblem solved");
    Ok(SrmOutput {
        variant: inst.variant,
        solution: inst.to_physical(&prev_sol),
        normalized: prev_sol,
        aux: prev_aux,
        duals,
        trace: SolveTrace {
            entries,
            termination,
        },
        subproblem,
        x,
    })
}

/// Runs the iteration from the default starting point.
pub fn solve_instance(inst: &Instance, opts: &SrmOptions) -> Result<SrmOutput> {
    let start = init_aux_instance(inst)?;
    solve_structured(inst, start, &Structure::Relaxed, opts)
}

pub fn solve_srm(
    variant: Variant,
    channels: &ChannelSet,
    bf: &AnalogBeamformer,
    cfg: &SystemConfig,
    opts: &SrmOptions,
) -> Result<SrmOutput> {
    solve_instance(&Instance::new(variant, channels, bf, cfg)?, opts)
}
