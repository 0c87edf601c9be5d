use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subcusum_cli::commands::{self, CliError, CliResult};
use subcusum_cli::config::{ExperimentConfig, Origins};

/// Subspace-CUSUM change detection experiments.
///
/// Exit codes: 0 success, 2 configuration error, 3 calibration failure,
/// 4 I/O error.
#[derive(Debug, Parser)]
#[command(name = "subcusum", version)]
struct Cli {
    /// Master seed; overrides `montecarlo.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for Monte Carlo replications. Results do not depend on it.
    #[arg(long, global = true, env = "SUBCUSUM_WORKERS", value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,

    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set detector.w=30`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a stream and run the configured detector on it.
    Simulate {
        /// Configuration file; defaults apply when omitted.
        config: Option<PathBuf>,
    },
    /// Print the first-order optimal window, drift and predicted delays as JSON.
    Tune {
        /// Configuration file supplying defaults for the flags below.
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Signal-to-noise ratio theta / sigma2.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        sigma2: Option<f64>,
        /// Target ARL.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Calibrate the detector's threshold to each target ARL.
    Calibrate { config: Option<PathBuf> },
    /// Calibrate and compare procedures over the target ARL grid.
    Compare { config: Option<PathBuf> },
}

fn load(cli: &Cli, path: Option<&PathBuf>) -> CliResult<(ExperimentConfig, Origins)> {
    let (mut cfg, mut origins) = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            ExperimentConfig::parse(&text)?
        }
        None => (ExperimentConfig::default(), Origins::default()),
    };
    for assignment in &cli.set {
        cfg.apply_override(&mut origins, assignment)?;
    }
    if let Some(seed) = cli.seed {
        cfg.apply_override(&mut origins, &format!("montecarlo.seed={seed}"))?;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    Ok((cfg, origins))
}

fn print_json<T: serde::Serialize>(value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&PathBuf::from("<stdout>"), e.into()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate { config } => {
            let (cfg, origins) = load(cli, config.as_ref())?;
            if let Some(report) = commands::simulate(&cfg, &origins)? {
                print_json(&report.report)?;
            }
        }
        Command::Tune {
            config,
            k,
            rho,
            sigma2,
            gamma,
        } => {
            let (cfg, _) = load(cli, config.as_ref())?;
            let s = &cfg.scenario;
            let sigma2 = sigma2.unwrap_or(s.sigma2);
            let rho = rho.unwrap_or(s.theta / s.sigma2);
            let gamma = gamma.or(cfg.montecarlo.gamma.first().copied()).unwrap_or(1e3);
            let result = commands::tune_params(gamma, k.unwrap_or(s.k), rho, sigma2)?;
            print_json(&result)?;
        }
        Command::Calibrate { config } => {
            let (cfg, origins) = load(cli, config.as_ref())?;
            for row in commands::calibrate(&cfg, &origins)?.rows {
                let arl = &row.calibration.arl;
                println!("gamma={} b={} arl={} se={}", row.gamma, row.calibration.b, arl.mean, arl.stderr);
            }
        }
        Command::Compare { config } => {
            let (cfg, origins) = load(cli, config.as_ref())?;
            let report = commands::compare(&cfg, &origins)?;
            let mut out = Vec::new();
            subcusum::montecarlo::write_comparison_csv(&report.rows, &mut out)
                .map_err(|e| CliError::io(&PathBuf::from("<stdout>"), e))?;
            print!("{}", String::from_utf8_lossy(&out));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.map_or(0, |w| w as usize))
        .build();
    let outcome = match pool {
        Ok(pool) => pool.install(|| run(&cli)),
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(4);
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
