//! Command-line front end: experiment configuration, synthetic data and the
//! full-order versus trust-region comparison.
//!
//! Exit codes: 0 on success, 2 for configuration and usage errors, 3 for numerical
//! failures (including a reconstruction that ended in an error).

mod config;
mod experiment;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{
    ExperimentConfig, NoiseConfig, OutputConfig, PointDefect, ProblemConfig, Profile, RectangleDefect, SolverConfig,
    TruthConfig,
};
pub use experiment::{
    build_truth, coefficient_grid, dump_field, format_table, generate_data, read_reports_csv, relative_error,
    run_comparison, trajectory_norm, write_reports_csv, Comparison, Experiment, Method, RunReport, SyntheticData,
};

use crate::error::Result;
use crate::io::{fingerprint, read_matrix, write_matrix};
use crate::model::ParameterVector;

#[derive(Debug, Parser)]
#[command(name = "trirgnm", about = "Stiffness identification for an elastic plate with reduced-basis IRGNM")]
pub struct Cli {
    /// Experiment configuration (TOML); overrides --profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in experiment.
    #[arg(long, global = true, value_enum, default_value = "desk2d")]
    pub profile: Profile,
    /// Noise seed, overriding the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assemble the discrete problem and write a summary.
    Assemble,
    /// Write the exact coefficient field.
    Truth,
    /// Generate noisy synthetic measurements.
    Data,
    /// Reconstruct the coefficients from the measurements.
    Run {
        #[arg(long, value_enum, default_value = "both")]
        method: Method,
    },
    /// Print the comparison table of the last run.
    Report,
    /// Print the resolved configuration as TOML.
    Config,
}

/// Sizes of an assembled problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssemblySummary {
    pub name: String,
    pub n_dofs: usize,
    pub n_params: usize,
    pub n_obs: usize,
    pub steps: usize,
    pub dt: f64,
    pub nnz: usize,
    pub seconds: f64,
}

/// Metadata written next to the measurement matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub relative: f64,
    pub delta: f64,
    pub seed: u64,
    pub exact_norm: f64,
    pub hash: String,
}

/// Runs the front end on `args` (including the program name) and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Configuration after applying the command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => cli.profile.config()?,
    };
    if let Some(s) = cli.seed {
        cfg.noise.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32> {
    let cfg = resolve_config(cli)?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(0);
    }
    let dir = cfg.output.dir.clone();
    if let Command::Report = cli.command {
        let reports = read_reports_csv(dir.join("results.csv"))?;
        print!("{}", format_table(&reports));
        return Ok(0);
    }
    std::fs::create_dir_all(&dir)?;
    let start = std::time::Instant::now();
    let exp = Experiment::build(&cfg)?;
    match cli.command {
        Command::Assemble => {
            let s = AssemblySummary {
                name: cfg.name.clone(),
                n_dofs: exp.family.n_dofs(),
                n_params: exp.family.n_params(),
                n_obs: exp.observation.n_obs(),
                steps: exp.time.steps,
                dt: exp.time.dt(),
                nnz: exp.family.a0().nnz(),
                seconds: start.elapsed().as_secs_f64(),
            };
            std::fs::write(dir.join("assembly.json"), serde_json::to_string_pretty(&s)?)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Truth => {
            let q = exp.truth()?;
            write_truth(&dir, &exp, &q)?;
            println!("truth: {} coefficients, hash {}", q.len(), fingerprint(q.as_slice()));
        }
        Command::Data => {
            let data = make_data(&dir, &exp)?;
            println!("data: delta = {:.6e}, hash {}", data.delta, data.fingerprint());
        }
        Command::Run { method } => {
            let truth = exp.truth()?;
            let data = load_or_make_data(&dir, &exp)?;
            let cmp = run_comparison(&exp, &data, Some(&truth), method)?;
            if let Some(l) = &cmp.fom_ledger {
                l.write_csv(&dir.join("fom_ledger.csv"))?;
            }
            if let Some(l) = &cmp.tr_ledger {
                l.write_json(&dir.join("tr_ledger.json"))?;
            }
            for r in cmp.reports().iter().filter(|r| r.failure.is_none()) {
                let tag = r.method.to_lowercase();
                write_matrix(dir.join(format!("{tag}_q.bin")), &as_column(&r.q))?;
                if cfg.output.field_dump {
                    let _ = dump_field(dir.join(format!("{tag}_field.txt")), exp.layout(), &r.q, &tag);
                }
            }
            let reports = cmp.reports();
            write_reports_csv(dir.join("results.csv"), &reports)?;
            print!("{}", format_table(&reports));
            if let Some(r) = reports.iter().find(|r| r.failure.is_some()) {
                eprintln!("error: {} run failed: {}", r.method, r.failure.as_deref().unwrap_or(""));
                return Ok(3);
            }
        }
        Command::Report | Command::Config => unreachable!(),
    }
    Ok(0)
}

fn as_column(q: &ParameterVector) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_column_slice(q.len(), 1, q.as_slice())
}

fn write_truth(dir: &Path, exp: &Experiment, q: &ParameterVector) -> Result<()> {
    write_matrix(dir.join("truth.bin"), &as_column(q))?;
    if exp.config.output.field_dump {
        // Layouts without a two-dimensional coefficient plane have no field dump.
        let _ = dump_field(dir.join("truth_field.txt"), exp.layout(), q, "truth");
    }
    Ok(())
}

fn make_data(dir: &Path, exp: &Experiment) -> Result<SyntheticData> {
    let q = exp.truth()?;
    write_truth(dir, exp, &q)?;
    let data = generate_data(&exp.fom, &q, exp.config.noise.relative, exp.config.noise.seed)?;
    write_matrix(dir.join("data.bin"), &data.noisy)?;
    write_matrix(dir.join("data_exact.bin"), &data.exact)?;
    let s = DataSummary {
        relative: data.relative,
        delta: data.delta,
        seed: data.seed,
        exact_norm: trajectory_norm(exp.fom.observation(), &data.exact, exp.time.dt()),
        hash: data.fingerprint(),
    };
    std::fs::write(dir.join("data.json"), serde_json::to_string_pretty(&s)?)?;
    Ok(data)
}

/// Reuses `data.bin` when its metadata matches the configured noise, otherwise regenerates.
fn load_or_make_data(dir: &Path, exp: &Experiment) -> Result<SyntheticData> {
    let meta = std::fs::read_to_string(dir.join("data.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<DataSummary>(&t).ok());
    if let Some(m) = meta {
        let noise = &exp.config.noise;
        if m.seed == noise.seed && m.relative == noise.relative {
            if let (Ok(noisy), Ok(exact)) = (read_matrix(dir.join("data.bin")), read_matrix(dir.join("data_exact.bin"))) {
                let data = SyntheticData { exact, noisy, delta: m.delta, relative: m.relative, seed: m.seed };
                if data.fingerprint() == m.hash {
                    return Ok(data);
                }
            }
        }
    }
    make_data(dir, exp)
}
