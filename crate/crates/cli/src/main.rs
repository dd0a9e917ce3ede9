use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ratsi::arnoldi::RestartMode;
use ratsi::harness::acceptance::{verify_all, VerifyOptions};
use ratsi::harness::experiments::{matrix_for, run_experiment_to, spectrum_file};
use ratsi::harness::{Experiment, ExperimentConfig};
use ratsi::phi::{fixed_points, write_trajectory_csv, PhiParams};
use ratsi::subspace::IterationVariant;

const EXIT_ACCEPTANCE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Rational-filtered subspace iteration and shift-and-invert Arnoldi experiments.
#[derive(Parser)]
#[command(name = "ratsi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an experiment's test matrix and write it with its spectrum.
    GenMatrix {
        #[arg(long, default_value = "fig3_5_normal_danger")]
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Run filtered subspace iteration on an experiment's setup.
    RunFsi {
        #[arg(long, default_value = "fig3_5_normal_danger")]
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Run shift-and-invert Arnoldi on an experiment's setup.
    RunArnoldi {
        #[arg(long, default_value = "fig1_arnoldi")]
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Iterate the scalar worst-case map and write its trajectory.
    PhiMap {
        #[arg(long, default_value_t = 1e-4)]
        rho: f64,
        #[arg(long, default_value_t = 1e-5)]
        eps1: f64,
        #[arg(long, default_value_t = 1e-14)]
        eps2: f64,
        #[arg(long, default_value_t = 100.0)]
        eta0: f64,
        #[arg(long, default_value_t = 14)]
        iters: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Reproduce one named experiment.
    Reproduce {
        experiment: Experiment,
        #[command(flatten)]
        common: Common,
    },
    /// Run the acceptance suite; exits nonzero on any failure.
    VerifyAll {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Flip every other filter weight of the first criteria (fault injection).
        #[arg(long, hide = true)]
        tamper_filter: bool,
    },
}

#[derive(Args, Default)]
struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Distance of the dangerous eigenvalue from the pole.
    #[arg(long)]
    d: Option<f64>,
    /// Quadrature nodes of the filter.
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    variant: Option<IterationVariant>,
    /// off, after2 or auto.
    #[arg(long)]
    restart: Option<RestartMode>,
}

impl Common {
    /// The file configuration (if any) with flags applied on top.
    fn config(&self, experiment: Experiment) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::from_path(path)?;
                if cfg.experiment != experiment {
                    return Err(ratsi::Error::Config(format!(
                        "{} configures {}, but the command runs {experiment}",
                        path.display(),
                        cfg.experiment
                    ))
                    .into());
                }
                cfg
            }
            None => ExperimentConfig::new(experiment, 1),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        let o = &mut cfg.overrides;
        o.d = self.d.or(o.d);
        o.ell = self.ell.or(o.ell);
        o.max_iters = self.iters.or(o.max_iters);
        o.variant = self.variant.or(o.variant);
        o.restart_mode = self.restart.or(o.restart_mode);
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
    }
}

fn reproduce(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let out = run_experiment_to(cfg, dir)?;
    println!("{} (seed {}) -> {}", cfg.experiment, cfg.seed, dir.display());
    for (k, v) in &out.summary.metrics {
        println!("  {k:<28} {v:.4e}");
    }
    for (name, t) in &out.summary.checks {
        println!("  check {name:<22} passed {} failed {} inconclusive {}", t.passed, t.failed, t.inconclusive);
    }
    for n in &out.summary.notes {
        println!("  note: {n}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenMatrix { experiment, common } => {
            let cfg = common.config(experiment)?;
            let tm = matrix_for(&cfg)?;
            let dir = common.out_dir(&cfg);
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            tm.write_csv(&dir.join("matrix.csv"))?;
            let spec = spectrum_file(&tm);
            std::fs::write(dir.join(&spec.name), spec.render())?;
            println!("{} x {} matrix ({}) -> {}", tm.n(), tm.n(), experiment, dir.display());
        }
        Command::RunFsi { experiment, common } => {
            if !experiment.is_fsi() {
                bail!(ratsi::Error::Config(format!("{experiment} is not a subspace-iteration experiment")));
            }
            let cfg = common.config(experiment)?;
            reproduce(&cfg, &common.out_dir(&cfg))?;
        }
        Command::RunArnoldi { experiment, common } => {
            if !experiment.is_arnoldi() {
                bail!(ratsi::Error::Config(format!("{experiment} is not an Arnoldi experiment")));
            }
            let cfg = common.config(experiment)?;
            reproduce(&cfg, &common.out_dir(&cfg))?;
        }
        Command::PhiMap {
            rho,
            eps1,
            eps2,
            eta0,
            iters,
            out,
        } => {
            let p = PhiParams::new(rho, eps1, eps2)?;
            let fp = fixed_points(&p);
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("phi_trajectory.csv");
            write_trajectory_csv(&path, &p, eta0, iters)?;
            if fp.exists {
                println!("eta_- = {:.6e}  eta_+ = {:.6e}", fp.eta_minus, fp.eta_plus);
            } else {
                println!("no real fixed points");
            }
            println!("trajectory -> {}", path.display());
        }
        Command::Reproduce { experiment, common } => {
            let cfg = common.config(experiment)?;
            reproduce(&cfg, &common.out_dir(&cfg))?;
        }
        Command::VerifyAll {
            seed,
            json,
            tamper_filter,
        } => {
            let report = verify_all(&VerifyOptions { seed, tamper_filter });
            print!("{}", report.table());
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&report)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if report.any_numerical_error() {
                return Ok(EXIT_NUMERICAL);
            }
            if !report.all_passed() {
                return Ok(EXIT_ACCEPTANCE);
            }
        }
    }
    Ok(0)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<ratsi::Error>()) {
        Some(e) if e.is_config() => EXIT_CONFIG,
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_ACCEPTANCE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
