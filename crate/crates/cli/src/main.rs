use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use carma_whittle::asymptotics::{
    fourth_moment, sigma_w, sigma_w_adjusted, AsymptoticCovariances, FourthMomentMethod, DEFAULT_MC_SAMPLES,
};
use carma_whittle::harness::{estimate_once, run_study, simulate_replicate, StudyConfig};
use carma_whittle::{Error, EstimatorKind, LevySpec, MinimizeOptions, ModelFamily, Result, SamplePath};
use clap::{error::ErrorKind, Args, Parser, Subcommand};
use nalgebra::DMatrix;

/// Simulation, estimation and Monte-Carlo studies for Levy-driven continuous-time ARMA models.
#[derive(Parser)]
#[command(name = "carma-whittle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct Overrides {
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one path from a study config and write it as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replicate index, selecting an independent random stream.
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Estimate a model family from an observation CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        family: ModelFamily,
        #[arg(long, default_value = "whittle")]
        estimator: EstimatorKind,
        /// Sampling distance of the observations.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Optimizer start (comma separated); the family reference parameter by default.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        multistarts: Option<usize>,
    },
    /// Run a Monte-Carlo study and write the summary CSV.
    Study {
        #[arg(long)]
        config: PathBuf,
        /// Output file; the configured output or stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print the limit covariance matrices at a parameter as CSV.
    Asymptotics {
        #[arg(long)]
        family: ModelFamily,
        /// Parameter (comma separated); the family reference parameter by default.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta0: Option<Vec<f64>>,
        /// `brownian` or `nig`.
        #[arg(long, default_value = "brownian")]
        driver: String,
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Use the adjusted Whittle covariances (univariate families only).
        #[arg(long)]
        adjusted: bool,
        /// Monte-Carlo draws for the fourth moment of a non-Gaussian driver.
        #[arg(long, default_value_t = DEFAULT_MC_SAMPLES)]
        mc_samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<StudyConfig> {
    let mut cfg = StudyConfig::load(path)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(sizes) = &overrides.sizes {
        cfg.sample_sizes = sizes.clone();
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config, out, replicate, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            cfg.validate()?;
            let n = *cfg.sample_sizes.iter().max().expect("validated");
            simulate_replicate(&cfg, n, replicate)?.save_csv(&out)
        }
        Command::Estimate { data, family, estimator, delta, start, level, seed, multistarts } => {
            let path = SamplePath::<f64>::load_csv(&data, delta)?;
            let mut opts = MinimizeOptions::default();
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(m) = multistarts {
                opts.multistarts = m;
            }
            let report = estimate_once(&path, family, estimator, start.as_deref(), &opts, level)?;
            let r = &report.result;
            eprintln!(
                "{estimator} on {} observations: objective {:.10}, {} evaluations, converged {}",
                path.len(),
                r.objective_value,
                r.evaluations,
                r.converged
            );
            if let Some(msg) = &report.interval_error {
                eprintln!("no confidence intervals: {msg}");
            }
            let mut out = BufWriter::new(io::stdout().lock());
            writeln!(out, "param_index,estimate,lower,upper")?;
            for (i, t) in r.theta_hat.iter().enumerate() {
                match &report.intervals {
                    Some(ci) => writeln!(out, "{},{t:.10},{:.10},{:.10}", i + 1, ci[i].0, ci[i].1)?,
                    None => writeln!(out, "{},{t:.10},,", i + 1)?,
                }
            }
            out.flush()?;
            Ok(())
        }
        Command::Study { config, out, replicates, overrides } => {
            let mut cfg = load_config(&config, &overrides)?;
            if let Some(r) = replicates {
                cfg.replicates = r;
            }
            if out.is_some() {
                cfg.output_path = out;
            }
            let report = run_study(&cfg)?;
            if cfg.output_path.is_none() {
                report.write_csv(io::stdout().lock())?;
            }
            Ok(())
        }
        Command::Asymptotics { family, theta0, driver, delta, adjusted, mc_samples, seed } => {
            let theta = theta0.unwrap_or_else(|| family.default_theta0());
            let space = family.param_space::<f64>(delta)?;
            let sm = space.sampled(&theta)?;
            let spec = match driver.to_ascii_lowercase().as_str() {
                "brownian" | "gaussian" => family.brownian_driver(&theta)?,
                "nig" => LevySpec::nig(family.default_nig()?),
                other => {
                    return Err(Error::InvalidInput(format!("unknown driver `{other}` (expected brownian or nig)")))
                }
            };
            let method =
                if spec.is_gaussian() { FourthMomentMethod::GaussianAnalytic } else { FourthMomentMethod::MonteCarlo };
            let fm = fourth_moment(&sm, &spec, method, mc_samples, seed)?;
            let cov = if adjusted { sigma_w_adjusted(&space, &theta, &fm)? } else { sigma_w(&space, &theta, &fm)? };
            write_covariances(&cov, io::stdout().lock())
        }
    }
}

fn write_covariances<W: Write>(cov: &AsymptoticCovariances, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "matrix,row,col,value")?;
    let mut emit = |name: &str, m: &DMatrix<f64>| -> io::Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                writeln!(w, "{name},{},{},{:.12e}", i + 1, j + 1, m[(i, j)])?;
            }
        }
        Ok(())
    };
    emit("sigma_hessian", &cov.sigma_hessian)?;
    emit("sigma_score", &cov.sigma_score)?;
    emit("sigma_score_se", &cov.score_se)?;
    emit("sigma_w", &cov.sigma_w)?;
    w.flush()?;
    Ok(())
}
