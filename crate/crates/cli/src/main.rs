use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hermfunc::harness::{self, HarnessError, JobConfig, JobOutcome};

/// Energy functionals of Hermitian metrics on flat tori.
#[derive(Parser)]
#[command(name = "hermfunc", version)]
struct Cli {
    #[command(subcommand)]
    job: Job,
}

#[derive(Subcommand)]
enum Job {
    /// Exact constants and exact identity checks.
    Coeffs {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Smallest dimension (default 3).
        #[arg(long)]
        n: Option<usize>,
        /// Largest dimension (default 12).
        #[arg(long)]
        max_n: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Functional values for one scenario.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Include spectral dumps of ω, ∂ω and ω_φ in the report.
        #[arg(long)]
        dump_forms: bool,
    },
    /// Every residual suite on one scenario.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Allow tolerances looser than 10x their defaults.
        #[arg(long)]
        i_know: bool,
    },
    /// Residual sweep over resolutions, quadrature orders and seeds, written as CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<JobConfig, HarnessError> {
        let mut cfg = JobConfig::from_file(&self.config)?;
        if let Some(s) = self.seed {
            cfg.override_seed(s);
        }
        if let Some(o) = &self.output {
            cfg.output.path = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}") {
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn emit(outcome: JobOutcome, path: Option<&Path>) -> Result<i32, HarnessError> {
    let text = serde_json::to_string_pretty(&outcome.report).expect("reports are plain JSON");
    write_out(path, &text)?;
    Ok(outcome.exit_code())
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(HarnessError::Config("--threads must be at least 1".into()));
        }
        b = b.num_threads(t);
    }
    let pool = b.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(pool.install(f))
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.job {
        Job::Coeffs { config, n, max_n, output, corrupt } => {
            let cfg = match &config {
                Some(p) => JobConfig::from_file(p)?,
                None => JobConfig::default(),
            };
            let lo = n.or(cfg.coeffs.n_min).unwrap_or(3);
            let hi = max_n.or(cfg.coeffs.n_max).unwrap_or(if n.is_some() { lo } else { 12 });
            let corrupt = corrupt.or(cfg.coeffs.corrupt.clone());
            let out = output.or(cfg.output.path.clone());
            emit(harness::run_coeffs(lo, hi, corrupt.as_deref())?, out.as_deref())
        }
        Job::Eval { common, dump_forms } => {
            let mut cfg = common.load()?;
            cfg.output.dump_forms |= dump_forms;
            let outcome = in_pool(common.threads, || harness::run_eval(&cfg))??;
            emit(outcome, cfg.output.path.as_deref())
        }
        Job::Verify { common, i_know } => {
            let cfg = common.load()?;
            let outcome = in_pool(common.threads, || harness::run_verify(&cfg, i_know))??;
            emit(outcome, cfg.output.path.as_deref())
        }
        Job::Sweep { common } => {
            let cfg = common.load()?;
            let rows = in_pool(common.threads, || harness::run_sweep(&cfg))??;
            write_out(cfg.output.path.as_deref(), harness::sweep_csv(&rows).trim_end())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
