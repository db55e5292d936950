use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cran_secure::harness::acceptance::{run_acceptance, AcceptanceOptions};
use cran_secure::harness::{run_experiment, ExperimentKind, ExperimentSpec, OutputSpec, RunOptions};
use cran_secure::model::SystemConfig;
use cran_secure::srm::Variant;
use cran_secure::Result;

#[derive(Parser)]
#[command(name = "cran-secure", version, about = "Secure beamforming experiments for a mmWave C-RAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML spec file.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite; exits non-zero if any criterion fails.
    Accept {
        #[command(flatten)]
        common: Common,
    },
    /// Small total-power sweep that finishes in seconds.
    Demo {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trials per grid point.
    #[arg(long)]
    trials: Option<usize>,
    /// Variant to run (total, perbs, robust); repeat for several.
    #[arg(long = "variant", value_parser = parse_variant)]
    variants: Vec<Variant>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant `{s}` (expected total, perbs or robust)"))
}

impl Common {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(s) = self.seed {
            spec.master_seed = s;
        }
        if let Some(d) = &self.out {
            spec.output.dir = d.clone();
        }
        if let Some(n) = self.trials {
            spec.n_trials = n;
        }
        if !self.variants.is_empty() {
            let mut v = self.variants.clone();
            v.sort();
            v.dedup();
            spec.variants = v;
        }
        spec.validate()
    }
}

fn run_spec(mut spec: ExperimentSpec, common: &Common) -> Result<ExitCode> {
    common.apply(&mut spec)?;
    let result = run_experiment(&spec)?;
    for p in result.write()? {
        println!("wrote {}", p.display());
    }
    println!("{:>10} {:>8} {:>4} {:>12} {:>10} {:>6}", "grid", "variant", "ok", "mean Mbit/s", "ci95", "iters");
    for c in &result.summary.cells {
        println!(
            "{:>10} {:>8} {:>4} {:>12.4} {:>10.4} {:>6.1}",
            c.grid_value,
            c.variant.name(),
            format!("{}/{}", c.n_ok, c.n),
            c.mean / 1e6,
            c.ci95 / 1e6,
            c.mean_iterations,
        );
    }
    let failed = result.rows.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} runs failed; see the `error` column");
    }
    Ok(ExitCode::SUCCESS)
}

fn accept(common: &Common) -> Result<ExitCode> {
    let defaults = AcceptanceOptions::default();
    let opts = AcceptanceOptions {
        master_seed: common.seed.unwrap_or(defaults.master_seed),
        n_trials: common.trials.unwrap_or(defaults.n_trials),
        out_dir: Some(common.out.clone().unwrap_or_else(|| PathBuf::from("out/acceptance"))),
        ..defaults
    };
    if !common.variants.is_empty() {
        log::warn!("--variant is ignored by `accept`; every criterion fixes its own variants");
    }
    let report = run_acceptance(&opts)?;
    for l in report.lines() {
        println!("{l}");
    }
    println!("elapsed {:.1} s", report.elapsed_s);
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn demo_spec() -> ExperimentSpec {
    ExperimentSpec {
        experiment: ExperimentKind::SweepPbs,
        grid: vec![-10.0, 10.0, 30.0],
        n_trials: 3,
        variants: vec![Variant::Total, Variant::Perbs],
        master_seed: 7,
        common_random_numbers: true,
        config: SystemConfig::desk_scale(),
        options: RunOptions::default(),
        output: OutputSpec {
            dir: PathBuf::from("out"),
            name: Some("demo".into()),
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { spec, common } => ExperimentSpec::load(spec).and_then(|s| run_spec(s, common)),
        Command::Accept { common } => accept(common),
        Command::Demo { common } => run_spec(demo_spec(), common),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
