use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use iscvx::harness::{run_batch, run_single, trial_metrics, write_batch, Algorithm, ExperimentConfig};
use iscvx::iscvx::IscvxParams;
use iscvx::quat::{Quaternion, Vec3};
use iscvx::Error;

#[derive(Parser)]
#[command(name = "iscvx", version, about = "Constrained attitude guidance by intrinsic successive convexification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and export trajectories and iteration logs.
    Solve(Flags),
    /// Run a seeded batch of random instances and export metrics.
    Bench(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON file with any of the flag names as fields; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    theta_max_deg: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    eps_tol: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    n_steps: Option<usize>,
    tau: Option<f64>,
    theta_max_deg: Option<f64>,
    trials: Option<usize>,
    seed: Option<u64>,
    algorithm: Option<Algorithm>,
    lambda: Option<f64>,
    eps_tol: Option<f64>,
    out_dir: Option<PathBuf>,
    jobs: Option<usize>,
    params: Option<IscvxParams>,
    q0: Option<Quaternion>,
    qd: Option<Quaternion>,
    t_o: Option<Vec3>,
}

fn read_config(path: &Path) -> Result<ConfigFile, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn build_config(flags: &Flags) -> Result<ExperimentConfig, Error> {
    let file = match &flags.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = ExperimentConfig::default();
    if let Some(p) = file.params {
        cfg.params = p;
    }
    cfg.n_steps = flags.n_steps.or(file.n_steps).unwrap_or(cfg.n_steps);
    cfg.tau = flags.tau.or(file.tau).unwrap_or(cfg.tau);
    cfg.theta_max_deg = flags.theta_max_deg.or(file.theta_max_deg).unwrap_or(cfg.theta_max_deg);
    cfg.trials = flags.trials.or(file.trials).unwrap_or(cfg.trials);
    cfg.seed = flags.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.algorithm = flags.algorithm.or(file.algorithm).unwrap_or(cfg.algorithm);
    cfg.params.lambda = flags.lambda.or(file.lambda).unwrap_or(cfg.params.lambda);
    cfg.params.eps_tol = flags.eps_tol.or(file.eps_tol).unwrap_or(cfg.params.eps_tol);
    cfg.out_dir = flags.out_dir.clone().or(file.out_dir);
    cfg.jobs = flags.jobs.or(file.jobs);
    cfg.q0 = file.q0;
    cfg.qd = file.qd;
    cfg.t_o = file.t_o;
    cfg.validate()?;
    Ok(cfg)
}

fn solve(cfg: &ExperimentConfig) -> Result<bool, Error> {
    let run = run_single(cfg)?;
    for rep in &run.reports {
        let m = trial_metrics(0, cfg.seed, &run.problem, rep)?;
        println!(
            "{}: {:?} after {} solves ({} accepted), geodesic cost {:.6}, max violation {:.2e}, {:.1} ms",
            rep.backend.name(),
            rep.termination,
            m.iterations,
            m.accepted,
            m.geodesic_cost,
            m.max_constraint_violation,
            m.wall_time_ms
        );
    }
    Ok(run.all_converged())
}

fn bench(cfg: &ExperimentConfig) -> Result<bool, Error> {
    let result = run_batch(cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_batch(&result, dir)?;
    }
    println!("algorithm  stat  iterations  accepted  geodesic_cost  converged  wall_ms");
    for r in &result.summary {
        println!(
            "{:<9}  {:<4}  {:>10.3}  {:>8.3}  {:>13.5}  {:>9.3}  {:>7.2}",
            r.algorithm.name(),
            r.statistic,
            r.iterations,
            r.accepted,
            r.geodesic_cost,
            r.converged,
            r.wall_time_ms
        );
    }
    let failed = result.rows.iter().filter(|r| !r.converged).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs did not converge", result.rows.len());
    }
    Ok(result.all_converged())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(flags) => build_config(flags).and_then(|c| solve(&c)),
        Command::Bench(flags) => build_config(flags).and_then(|c| bench(&c)),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
