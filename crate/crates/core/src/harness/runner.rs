use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::analogbf::{design_analog_bf, AnalogBeamformer};
use crate::error::{Error, Result};
use crate::model::{generate_instance, ChannelSet, SystemConfig};
use crate::rankrec::{recover, with_vectors, RankReport, RecoveryOptions, V0Path, VkPath};
use crate::rates::{secrecy_rates, BFSolution};
use crate::srm::{
    aux_from_point, robust_report, solve_instance, solve_structured, Instance, SrmOptions,
    SrmOutput, Structure, Variant,
};

use super::spec::{derive_seed, ExperimentKind, ExperimentSpec, RunOptions};

/// One `(grid point, trial, variant)` outcome. Rates in bit/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub experiment: String,
    pub config_hash: String,
    pub point: usize,
    pub grid_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub variant: Variant,
    /// `ok` or `error`.
    pub status: String,
    pub termination: String,
    pub iterations: usize,
    /// Final surrogate objective in bit/s.
    pub surrogate: f64,
    pub max_decrease: f64,
    /// Sum secrecy rate of the relaxed covariances on the true channels.
    pub secrecy_relaxed: f64,
    /// Sum secrecy rate of the returned beamformers on the true channels.
    pub secrecy: f64,
    /// Robust variant: certified worst-case sum secrecy rate over the error ball.
    pub secrecy_worst: Option<f64>,
    pub sum_access: f64,
    pub fronthaul_min: f64,
    /// Relative excess of the BS power over its budget (worst BS for per-BS).
    pub power_residual: f64,
    pub cp_residual: f64,
    /// `(Σ Rₖ − min_l R_l) / W_mm` in bit/s/Hz.
    pub fronthaul_residual: f64,
    pub v0_rank: usize,
    pub vk_rank_max: usize,
    pub v0_path: String,
    pub vk_path: String,
    pub v0_rank_after: usize,
    pub vk_rank_after_max: usize,
    pub recovery_residual: f64,
    pub warm_started: bool,
    pub error: String,
}

impl TrialRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Trace of one run for the convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub experiment: String,
    pub config_hash: String,
    pub trial: usize,
    pub seed: u64,
    pub variant: Variant,
    pub iteration: usize,
    /// Surrogate objective in bit/s/Hz.
    pub surrogate: f64,
    pub secrecy: f64,
}

/// Mean and 95% confidence half-width of one `(point, variant)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub point: usize,
    pub grid_value: f64,
    pub variant: Variant,
    pub n: usize,
    pub n_ok: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
    pub mean_worst: Option<f64>,
    pub mean_iterations: f64,
    pub converged_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub unit: String,
    pub cells: Vec<SummaryCell>,
}

impl Summary {
    pub fn cell(&self, point: usize, variant: Variant) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.point == point && c.variant == variant)
    }

    /// Cells of one variant in grid order.
    pub fn series(&self, variant: Variant) -> Vec<&SummaryCell> {
        self.cells.iter().filter(|c| c.variant == variant).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<TrialRow>,
    pub traces: Vec<TraceRow>,
    pub summary: Summary,
    /// Per-run data kept in memory for the acceptance checks.
    pub runs: Vec<RunRecord>,
}

/// Everything computed for one run, beyond the CSV row.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub point: usize,
    pub trial: usize,
    pub variant: Variant,
    pub surrogates: Vec<f64>,
    pub converged: bool,
    pub rank: Option<RankReport>,
    /// Returned beamformers in watts.
    pub solution: BFSolution,
    /// Relaxed run in normalized units with its auxiliary values.
    pub output: SrmOutput,
}

/// Channels and analog beamformer of one trial.
pub struct TrialData {
    pub cfg: SystemConfig,
    pub channels: ChannelSet,
    pub bf: AnalogBeamformer,
    pub seed: u64,
}

pub fn trial_data(cfg: &SystemConfig, seed: u64) -> Result<TrialData> {
    let (_, channels) = generate_instance(cfg, seed)?;
    let bf = design_analog_bf(&channels, cfg)?;
    Ok(TrialData {
        cfg: cfg.clone(),
        channels,
        bf,
        seed,
    })
}

pub fn srm_options(o: &RunOptions) -> SrmOptions {
    SrmOptions {
        t_max: o.t_max,
        tol_rel: o.tol_rel,
        ..SrmOptions::default()
    }
}

fn variant_index(v: Variant) -> u64 {
    Variant::ALL.iter().position(|&x| x == v).unwrap_or(0) as u64
}

/// Relaxed run, recovery and evaluation of one variant.
pub struct Evaluated {
    pub row: TrialRow,
    pub record: RunRecord,
}

fn path_name<T: Serialize>(p: &T) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.get("path").and_then(|s| s.as_str()).map(str::to_string))
        .unwrap_or_default()
}

fn worst_vk_path(paths: &[VkPath]) -> String {
    let rank = |p: &VkPath| match p {
        VkPath::RankOne => 0,
        VkPath::DualNullSpace { .. } => 1,
        VkPath::PrimalProjection { .. } => 2,
    };
    paths
        .iter()
        .max_by_key(|p| rank(p))
        .map(path_name)
        .unwrap_or_else(|| "rank_one".into())
}

/// Power, CP power and fronthaul residuals of a physical solution, from an
/// independent rate evaluation on the true channels.
pub fn residuals(
    sol: &BFSolution,
    variant: Variant,
    data: &TrialData,
) -> Result<(f64, f64, f64, crate::rates::RateReport)> {
    let cfg = &data.cfg;
    let report = secrecy_rates(sol, &data.channels, &data.bf, cfg)?;
    let power = match variant {
        Variant::Perbs => cfg
            .per_bs_budgets()
            .iter()
            .enumerate()
            .map(|(l, b)| (sol.bs_load(l) - b) / b)
            .fold(f64::NEG_INFINITY, f64::max),
        _ => (sol.bs_power() - cfg.p_bs_total) / cfg.p_bs_total,
    };
    let cp = (sol.cp_power() - cfg.p_cp) / cfg.p_cp;
    let fh = (report.sum_access() - report.fronthaul_min) / cfg.bw_mmwave;
    Ok((power.max(0.0), cp.max(0.0), fh.max(0.0), report))
}

/// Runs `variant` on one trial, from the default start or from `start`
/// (a physical point to restart from).
pub fn evaluate_variant(
    spec_name: &str,
    hash: &str,
    point: usize,
    grid_value: f64,
    trial: usize,
    data: &TrialData,
    variant: Variant,
    opts: &RunOptions,
    start: Option<&BFSolution>,
) -> Result<Evaluated> {
    let inst = Instance::new(variant, &data.channels, &data.bf, &data.cfg)?;
    let srm = srm_options(opts);
    let out = match start {
        None => solve_instance(&inst, &srm)?,
        Some(p) => {
            let s = inst.to_normalized(p);
            let aux = aux_from_point(&inst, &s)?;
            solve_structured(&inst, (s, aux), &Structure::Relaxed, &srm)?
        }
    };
    let (normalized, rank) = if opts.recover {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data.seed, &[variant_index(variant)]));
        let ro = RecoveryOptions {
            n_candidates: opts.n_candidates,
            srm: srm.clone(),
        };
        let (s, r) = recover(&inst, &out, &ro, &mut rng)?;
        (s, Some(r))
    } else {
        (out.normalized.clone(), None)
    };
    let solution = inst.to_physical(&normalized);
    let (power, cp, fh, report) = residuals(&solution, variant, data)?;
    let relaxed = secrecy_rates(&out.solution, &data.channels, &data.bf, &data.cfg)?;
    let worst = variant
        .is_robust()
        .then(|| robust_report(&inst, &normalized).sum_secrecy() * data.cfg.bw_mmwave);
    let w = data.cfg.bw_mmwave;
    let (v0_rank, vk_rank_max, v0_path, vk_path, v0_after, vk_after, rec_res) = match &rank {
        Some(r) => (
            r.v0_rank,
            r.vk_ranks.iter().copied().max().unwrap_or(0),
            path_name(&r.v0_path),
            worst_vk_path(&r.vk_paths),
            r.v0_rank_after,
            r.vk_ranks_after.iter().copied().max().unwrap_or(0),
            r.residual_after,
        ),
        None => (0, 0, String::new(), String::new(), 0, 0, 0.0),
    };
    let row = TrialRow {
        experiment: spec_name.to_string(),
        config_hash: hash.to_string(),
        point,
        grid_value,
        trial,
        seed: data.seed,
        variant,
        status: "ok".into(),
        termination: format!("{:?}", out.trace.termination),
        iterations: out.trace.iterations(),
        surrogate: out.surrogate() * w,
        max_decrease: out.trace.max_decrease() * w,
        secrecy_relaxed: relaxed.sum_secrecy(),
        secrecy: report.sum_secrecy(),
        secrecy_worst: worst,
        sum_access: report.sum_access(),
        fronthaul_min: report.fronthaul_min,
        power_residual: power,
        cp_residual: cp,
        fronthaul_residual: fh,
        v0_rank,
        vk_rank_max,
        v0_path,
        vk_path,
        v0_rank_after: v0_after,
        vk_rank_after_max: vk_after,
        recovery_residual: rec_res,
        warm_started: start.is_some(),
        error: String::new(),
    };
    let record = RunRecord {
        point,
        trial,
        variant,
        surrogates: out.trace.surrogates(),
        converged: out.trace.converged(),
        rank,
        solution: with_vectors_if(&solution, opts.recover),
        output: out,
    };
    Ok(Evaluated { row, record })
}

fn with_vectors_if(sol: &BFSolution, rank_one: bool) -> BFSolution {
    if rank_one {
        with_vectors(sol)
    } else {
        sol.clone()
    }
}

fn error_row(
    spec_name: &str,
    hash: &str,
    point: usize,
    grid_value: f64,
    trial: usize,
    seed: u64,
    variant: Variant,
    e: &Error,
) -> TrialRow {
    TrialRow {
        experiment: spec_name.to_string(),
        config_hash: hash.to_string(),
        point,
        grid_value,
        trial,
        seed,
        variant,
        status: "error".into(),
        termination: String::new(),
        iterations: 0,
        surrogate: f64::NAN,
        max_decrease: f64::NAN,
        secrecy_relaxed: f64::NAN,
        secrecy: f64::NAN,
        secrecy_worst: None,
        sum_access: f64::NAN,
        fronthaul_min: f64::NAN,
        power_residual: f64::NAN,
        cp_residual: f64::NAN,
        fronthaul_residual: f64::NAN,
        v0_rank: 0,
        vk_rank_max: 0,
        v0_path: String::new(),
        vk_path: String::new(),
        v0_rank_after: 0,
        vk_rank_after_max: 0,
        recovery_residual: f64::NAN,
        warm_started: false,
        error: e.to_string(),
    }
}

struct TrialOutcome {
    rows: Vec<TrialRow>,
    runs: Vec<RunRecord>,
}

fn run_trial(spec: &ExperimentSpec, hash: &str, point: usize, trial: usize) -> TrialOutcome {
    let name = spec.name();
    let x = spec.grid[point];
    let seed = spec.trial_seed(point, trial);
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let data = spec
        .experiment
        .apply(&spec.config, x)
        .and_then(|cfg| trial_data(&cfg, seed));
    let data = match data {
        Ok(d) => d,
        Err(e) => {
            for &v in &spec.variants {
                rows.push(error_row(&name, hash, point, x, trial, seed, v, &e));
            }
            return TrialOutcome { rows, runs };
        }
    };
    let mut done: Vec<Evaluated> = Vec::new();
    for &v in &spec.variants {
        match evaluate_variant(&name, hash, point, x, trial, &data, v, &spec.options, None) {
            Ok(ev) => done.push(ev),
            Err(e) => rows.push(error_row(&name, hash, point, x, trial, seed, v, &e)),
        }
    }
    if spec.options.total_warm_start {
        warm_start_total(&name, hash, point, x, trial, &data, &spec.options, &mut done);
    }
    for ev in done {
        rows.push(ev.row);
        runs.push(ev.record);
    }
    TrialOutcome { rows, runs }
}

/// Both other variants return points that are feasible for the total-power
/// problem. When one of them scores higher on the true channels, the
/// total-power run is restarted from its relaxed optimum and the better of
/// the two total-power results is kept.
fn warm_start_total(
    name: &str,
    hash: &str,
    point: usize,
    x: f64,
    trial: usize,
    data: &TrialData,
    opts: &RunOptions,
    done: &mut [Evaluated],
) {
    let Some(t) = done.iter().position(|e| e.row.variant == Variant::Total) else {
        return;
    };
    let best = done
        .iter()
        .filter(|e| e.row.variant != Variant::Total && e.row.secrecy > done[t].row.secrecy)
        .max_by(|a, b| a.row.secrecy.total_cmp(&b.row.secrecy));
    let Some(src) = best else {
        return;
    };
    let start = src.record.output.solution.clone();
    match evaluate_variant(name, hash, point, x, trial, data, Variant::Total, opts, Some(&start)) {
        Ok(ev) if ev.row.secrecy > done[t].row.secrecy => done[t] = ev,
        Ok(_) => {}
        Err(e) => log::warn!("warm-started total run failed: {e}"),
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, v.sqrt())
}

/// Student-t 95% half-width `t₀.₉₇₅(n−1)·s/√n`; zero for a single sample.
pub fn ci95(std: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    t * std / (n as f64).sqrt()
}

pub fn summarize(spec: &ExperimentSpec, hash: &str, rows: &[TrialRow]) -> Summary {
    let mut cells = Vec::new();
    for (point, &x) in spec.grid.iter().enumerate() {
        for &v in &spec.variants {
            let sel: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.point == point && r.variant == v)
                .collect();
            let ok: Vec<&&TrialRow> = sel.iter().filter(|r| r.is_ok()).collect();
            let vals: Vec<f64> = ok.iter().map(|r| r.secrecy).collect();
            let (mean, std) = mean_std(&vals);
            let worst: Vec<f64> = ok.iter().filter_map(|r| r.secrecy_worst).collect();
            let n_ok = ok.len();
            cells.push(SummaryCell {
                point,
                grid_value: x,
                variant: v,
                n: sel.len(),
                n_ok,
                mean,
                std,
                ci95: ci95(std, n_ok),
                mean_worst: (!worst.is_empty()).then(|| mean_std(&worst).0),
                mean_iterations: mean_std(&ok.iter().map(|r| r.iterations as f64).collect::<Vec<_>>()).0,
                converged_share: if n_ok == 0 {
                    0.0
                } else {
                    ok.iter().filter(|r| r.termination == "Converged").count() as f64 / n_ok as f64
                },
            });
        }
    }
    Summary {
        experiment: spec.name(),
        config_hash: hash.to_string(),
        master_seed: spec.master_seed,
        n_trials: spec.n_trials,
        unit: "bit/s".into(),
        cells,
    }
}

/// Runs every `(grid point, trial)` in parallel; results are sorted by
/// `(point, trial, variant)` so the output does not depend on scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let hash = spec.config_hash();
    let jobs: Vec<(usize, usize)> = (0..spec.grid.len())
        .flat_map(|p| (0..spec.n_trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<TrialOutcome> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(spec, &hash, p, t))
        .collect();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        runs.extend(o.runs);
    }
    rows.sort_by_key(|a| (a.point, a.trial, a.variant));
    runs.sort_by_key(|a| (a.point, a.trial, a.variant));
    let traces = if spec.experiment == ExperimentKind::Convergence {
        runs.iter()
            .flat_map(|r| {
                let seed = spec.trial_seed(r.point, r.trial);
                let hash = hash.clone();
                r.output.trace.entries.iter().map(move |e| TraceRow {
                    experiment: spec.name(),
                    config_hash: hash.to_string(),
                    trial: r.trial,
                    seed,
                    variant: r.variant,
                    iteration: e.iteration,
                    surrogate: e.surrogate,
                    secrecy: e.secrecy,
                })
            })
            .collect()
    } else {
        Vec::new()
    };
    let summary = summarize(spec, &hash, &rows);
    Ok(ExperimentResult {
        spec: spec.clone(),
        rows,
        traces,
        summary,
        runs,
    })
}

fn to_csv<T: Serialize>(items: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for it in items {
        w.serialize(it)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Serde(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serde(e.to_string()))
}

impl ExperimentResult {
    pub fn rows_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn traces_csv(&self) -> Result<String> {
        to_csv(&self.traces)
    }

    /// Writes `<name>.csv`, `<name>.summary.json` and, for the convergence
    /// experiment, `<name>.traces.csv` into the output directory.
    pub fn write(&self) -> Result<Vec<PathBuf>> {
        let dir = &self.spec.output.dir;
        std::fs::create_dir_all(dir)?;
        let name = self.spec.name();
        let mut written = Vec::new();
        let csv_path = dir.join(format!("{name}.csv"));
        std::fs::write(&csv_path, self.rows_csv()?)?;
        written.push(csv_path);
        let json_path = dir.join(format!("{name}.summary.json"));
        std::fs::write(&json_path, serde_json::to_string_pretty(&self.summary)?)?;
        written.push(json_path);
        if !self.traces.is_empty() {
            let p = dir.join(format!("{name}.traces.csv"));
            std::fs::write(&p, self.traces_csv()?)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// V₀ recovery path of a report, for tables.
pub fn v0_path_name(p: &V0Path) -> String {
    path_name(p)
}
