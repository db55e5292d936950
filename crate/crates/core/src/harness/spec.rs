use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{dbm_to_watt, SystemConfig};
use crate::srm::Variant;

/// Which system parameter the grid sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Iteration traces at the base configuration; the grid is ignored.
    Convergence,
    /// Total BS power in dBm.
    SweepPbs,
    /// CP power in dBm.
    SweepPcp,
    /// Number of users.
    SweepUsers,
    /// Number of eavesdroppers.
    SweepEves,
    /// Relative CSI error bound of every eavesdropper.
    SweepSigma,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SweepPbs => "sweep_pbs",
            ExperimentKind::SweepPcp => "sweep_pcp",
            ExperimentKind::SweepUsers => "sweep_users",
            ExperimentKind::SweepEves => "sweep_eves",
            ExperimentKind::SweepSigma => "sweep_sigma",
        }
    }

    /// Configuration at grid value `x`.
    pub fn apply(self, base: &SystemConfig, x: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        let count = |x: f64| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 && x < 1e6 {
                Ok(x as usize)
            } else {
                Err(Error::Config(format!("grid value {x} is not a count")))
            }
        };
        match self {
            ExperimentKind::Convergence => {}
            ExperimentKind::SweepPbs => {
                cfg.p_bs_total = dbm_to_watt(x);
                cfg.p_bs_per = None;
            }
            ExperimentKind::SweepPcp => cfg.p_cp = dbm_to_watt(x),
            ExperimentKind::SweepUsers => cfg.n_users = count(x)?,
            ExperimentKind::SweepEves => cfg.n_eves = count(x)?,
            ExperimentKind::SweepSigma => cfg.csi_error_ratio = vec![x],
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Settings of the solvers used in every trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub t_max: usize,
    pub tol_rel: f64,
    /// Recover rank-one beamformers before evaluating rates.
    pub recover: bool,
    pub n_candidates: usize,
    /// Restart the total-power run from the per-BS optimum when the latter
    /// scores higher (its feasible set is contained in the total-power one).
    pub total_warm_start: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            t_max: 30,
            tol_rel: 1e-4,
            recover: true,
            n_candidates: crate::rankrec::DEFAULT_CANDIDATES,
            total_warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// File stem; defaults to the experiment id.
    pub name: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("out"),
            name: None,
        }
    }
}

/// One Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub grid: Vec<f64>,
    pub n_trials: usize,
    pub variants: Vec<Variant>,
    pub master_seed: u64,
    /// Draw the same channels at every grid point of a trial.
    pub common_random_numbers: bool,
    pub config: SystemConfig,
    pub options: RunOptions,
    pub output: OutputSpec,
}

/// On-disk form: `config` holds overrides of the desk-scale configuration.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    experiment: ExperimentKind,
    #[serde(default)]
    grid: Vec<f64>,
    #[serde(default = "default_trials")]
    n_trials: usize,
    #[serde(default = "default_variants")]
    variants: Vec<Variant>,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_true")]
    common_random_numbers: bool,
    #[serde(default)]
    config: toml::Table,
    #[serde(default)]
    options: RunOptions,
    #[serde(default)]
    output: OutputSpec,
}

fn default_trials() -> usize {
    20
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

/// Desk-scale configuration with the entries of `overrides` replaced.
pub fn config_with_overrides(overrides: &toml::Table) -> Result<SystemConfig> {
    let base = toml::Table::try_from(SystemConfig::desk_scale())
        .map_err(|e| Error::Serde(e.to_string()))?;
    let mut merged = base;
    for (k, v) in overrides {
        if !merged.contains_key(k) && k != "p_bs_per" && k != "csi_error_ratio" {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        merged.insert(k.clone(), v.clone());
    }
    let cfg: SystemConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let f: SpecFile = toml::from_str(text)?;
        let spec = ExperimentSpec {
            experiment: f.experiment,
            grid: if f.experiment == ExperimentKind::Convergence && f.grid.is_empty() {
                vec![0.0]
            } else {
                f.grid
            },
            n_trials: f.n_trials,
            variants: f.variants,
            master_seed: f.master_seed,
            common_random_numbers: f.common_random_numbers,
            config: config_with_overrides(&f.config)?,
            options: f.options,
            output: f.output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("grid must not be empty".into()));
        }
        if self.grid.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("at least one variant is required".into()));
        }
        if self.options.t_max == 0 || !(self.options.tol_rel > 0.0) {
            return Err(Error::Config("t_max must be >= 1 and tol_rel > 0".into()));
        }
        if self.options.recover && self.options.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be at least 1".into()));
        }
        for &x in &self.grid {
            self.experiment.apply(&self.config, x)?;
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        self.output
            .name
            .clone()
            .unwrap_or_else(|| self.experiment.name().to_string())
    }

    /// Hex digest of everything that determines the numbers in the output
    /// (output paths excluded).
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "experiment": self.experiment,
            "grid": self.grid,
            "n_trials": self.n_trials,
            "variants": self.variants,
            "master_seed": self.master_seed,
            "common_random_numbers": self.common_random_numbers,
            "config": self.config,
            "options": self.options,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Channel seed of `(point, trial)`.
    pub fn trial_seed(&self, point: usize, trial: usize) -> u64 {
        let p = if self.common_random_numbers { 0 } else { point };
        derive_seed(self.master_seed, &[p as u64, trial as u64])
    }
}

/// First eight bytes of `SHA-256(master ‖ parts)`, little endian.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
