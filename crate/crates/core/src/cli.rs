// SPDX-License-Identifier: Apache-2.0

//! Command-line entry point.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{run_named, EXPERIMENT_NAMES};
use crate::functionals::{evaluate_objectives, residual_profiles};
use crate::io::{load_field, load_model, save_field, Problem};
use crate::model::{BasisMode, ControlField, InitialBasis};
use crate::optimizer::{default_initial_guess, optimize, Approach, FinalResiduals, OptimizerConfig, Scheme};
use crate::propagation::{identity_rows, propagate_rows_forward};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gateforge", version, about = "Optimal-control synthesis of unitary gates on a relevant subspace")]
struct Cli {
    /// Print per-iteration progress to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Seed for the default initial guess.
    #[arg(long, env = "GATEFORGE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a problem file and report every violation.
    Validate { problem: PathBuf },

    /// Propagate the relevant columns under a field and report both objectives.
    Propagate {
        problem: PathBuf,
        /// Field JSON; defaults to the seeded initial guess.
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BasisMode::PhaseCorrected)]
        basis: BasisMode,
        #[command(flatten)]
        common: Common,
    },

    /// Optimize a field; writes trace.csv, field.json and summary.json.
    Optimize {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = Approach::Evolution)]
        approach: Approach,
        #[arg(long, value_enum, default_value_t = BasisMode::PhaseCorrected)]
        basis: BasisMode,
        #[arg(long, value_enum, default_value_t = Scheme::Krotov)]
        scheme: Scheme,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 0.999)]
        stop_fidelity: f64,
        #[arg(long, default_value_t = 0.0)]
        stop_update_norm: f64,
        #[arg(long, default_value_t = 0.5)]
        gradient_step: f64,
        /// Start from this field instead of the seeded guess.
        #[arg(long)]
        initial_field: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },

    /// Residuals of both stationarity conditions for a given field.
    Residual {
        problem: PathBuf,
        #[arg(long)]
        field: PathBuf,
        #[arg(long, value_enum, default_value_t = BasisMode::PhaseCorrected)]
        basis: BasisMode,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },

    /// Run a named experiment and write its report.
    Experiment {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(EXPERIMENT_NAMES))]
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Serialize)]
struct OptimizeSummary {
    approach: Approach,
    basis: BasisMode,
    scheme: Scheme,
    lambda: f64,
    seed: u64,
    stop_reason: String,
    iterations: usize,
    re_tau: f64,
    abs_tau: f64,
    fidelity: f64,
    eta: f64,
    fluence: f64,
    residuals: FinalResiduals,
}

#[derive(Debug, Serialize)]
struct PropagateSummary {
    tau_re: f64,
    tau_im: f64,
    fidelity: f64,
    eta: f64,
    basis: BasisMode,
    max_norm_drift: f64,
}

fn load_field_for(problem: &Problem, path: &Path) -> Result<ControlField> {
    let (field, grid) = load_field(path)?;
    if grid != problem.grid {
        return Err(Error::Config(format!(
            "{} is sampled on T={} n={}, the problem uses T={} n={}",
            path.display(),
            grid.horizon(),
            grid.steps(),
            problem.grid.horizon(),
            problem.grid.steps()
        )));
    }
    Ok(field)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse { .. }
        | Error::Read { .. }
        | Error::InvalidModel(_)
        | Error::Config(_)
        | Error::Dimension(_)
        | Error::UnknownExperiment(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate { problem } => {
            let p = load_model(&problem)?;
            for w in crate::model::validate_model(&p.model).warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: valid (M={}, N={}, T={}, n={})",
                problem.display(),
                p.model.level_count(),
                p.model.relevant_dim(),
                p.grid.horizon(),
                p.grid.steps()
            );
            Ok(EXIT_OK)
        }
        Command::Propagate {
            problem,
            field,
            basis,
            common,
        } => {
            let p = load_model(&problem)?;
            let field = match field {
                Some(path) => load_field_for(&p, &path)?,
                None => default_initial_guess(&p.model, &p.grid, common.seed),
            };
            let n = p.model.relevant_dim();
            let traj = propagate_rows_forward(&p.model, &field, &p.grid, &identity_rows(p.model.level_count(), n))?;
            let b = InitialBasis::build(basis, n, p.model.level_count())?;
            let obj = evaluate_objectives(&p.model, &field, &p.grid, &p.target, &b)?;
            fs::create_dir_all(&common.out)?;
            traj.write_csv(&p.grid, fs::File::create(common.out.join("propagation.csv"))?)?;
            let summary = PropagateSummary {
                tau_re: obj.tau.value.re,
                tau_im: obj.tau.value.im,
                fidelity: obj.tau.fidelity(),
                eta: obj.eta,
                basis,
                max_norm_drift: traj.max_norm_drift(&vec![1.0; n]),
            };
            write_json(&common.out.join("propagation.json"), &summary)?;
            println!(
                "tau = {:.12e}{:+.12e}i  fidelity = {:.12}  eta = {:.12}",
                summary.tau_re, summary.tau_im, summary.fidelity, summary.eta
            );
            Ok(EXIT_OK)
        }
        Command::Optimize {
            problem,
            approach,
            basis,
            scheme,
            lambda,
            max_iters,
            stop_fidelity,
            stop_update_norm,
            gradient_step,
            initial_field,
            common,
        } => {
            let p = load_model(&problem)?;
            let field = match initial_field {
                Some(path) => load_field_for(&p, &path)?,
                None => default_initial_guess(&p.model, &p.grid, common.seed),
            };
            let mut cfg = OptimizerConfig::new(field);
            cfg.approach = approach;
            cfg.basis_mode = basis;
            cfg.scheme = scheme;
            cfg.lambda = lambda;
            cfg.max_iters = max_iters;
            cfg.stop_fidelity = stop_fidelity;
            cfg.stop_update_norm = stop_update_norm;
            cfg.gradient_step = gradient_step;
            cfg.rng_seed = common.seed;
            let result = optimize(&p.model, &p.target, &p.grid, &cfg)?;
            if cli.verbose > 0 {
                for r in &result.trace.records {
                    eprintln!(
                        "iter {:>5}  fidelity {:.12}  eta {:.12}  update {:.3e}",
                        r.iter, r.fidelity, r.eta, r.update_norm
                    );
                }
            }
            fs::create_dir_all(&common.out)?;
            result.trace.write_csv(fs::File::create(common.out.join("trace.csv"))?)?;
            save_field(common.out.join("field.json"), &result.field, &p.grid)?;
            let last = result.trace.last().expect("trace has the initial record");
            let summary = OptimizeSummary {
                approach,
                basis,
                scheme,
                lambda,
                seed: common.seed,
                stop_reason: result.stop_reason.to_string(),
                iterations: result.trace.iterations(),
                re_tau: last.re_tau,
                abs_tau: last.abs_tau,
                fidelity: last.fidelity,
                eta: last.eta,
                fluence: last.fluence,
                residuals: result.residuals,
            };
            write_json(&common.out.join("summary.json"), &summary)?;
            println!(
                "{} after {} iterations: fidelity = {:.12}, eta/N = {:.12}",
                summary.stop_reason,
                summary.iterations,
                summary.fidelity,
                summary.eta / p.model.relevant_dim() as f64
            );
            Ok(EXIT_OK)
        }
        Command::Residual {
            problem,
            field,
            basis,
            out,
        } => {
            let p = load_model(&problem)?;
            let field = load_field_for(&p, &field)?;
            let b = InitialBasis::build(basis, p.model.relevant_dim(), p.model.level_count())?;
            let profile = residual_profiles(&p.model, &field, &p.grid, &p.target, &b)?;
            fs::create_dir_all(&out)?;
            profile.write_csv(fs::File::create(out.join("residuals.csv"))?)?;
            let summary = FinalResiduals {
                evolution: profile.max_evolution(),
                s2s: profile.max_s2s(),
            };
            write_json(&out.join("residuals.json"), &summary)?;
            println!(
                "residual_evolution = {:e}  residual_s2s = {:e}",
                summary.evolution, summary.s2s
            );
            Ok(EXIT_OK)
        }
        Command::Experiment { name, common } => {
            let report = run_named(&name, common.seed)?;
            report.write_to_dir(&common.out)?;
            println!("{report}");
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Diagnostics go to stderr.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
