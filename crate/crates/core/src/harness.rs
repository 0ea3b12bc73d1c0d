//! Single solves and seeded benchmark batches, with metrics aggregation and
//! trajectory export.
//!
//! Trial `k` of a batch with seed `s` draws its problem from
//! `ChaCha8Rng::seed_from_u64(s)` on stream `k` using
//! [`crate::attitude::sample_problem`], so every algorithm in the batch sees
//! the same instance and a trial can be regenerated on its own.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attitude::{
    dynamics_step, euclidean_cost, geodesic_cost, keepout_value, sample_problem, slerp_init,
    AttitudeProblem, Trajectory,
};
use crate::error::{Error, Result};
use crate::iscvx::{solve_iscvx, Backend, IscvxParams, IterationLog, SolveReport};
use crate::linearize::defect_coords;
use crate::quat::{Quaternion, Vec3};
use crate::scvx_baseline::solve_scvx;

pub const METRICS_HEADER: [&str; 11] = [
    "trial",
    "seed",
    "algorithm",
    "iterations",
    "accepted",
    "geodesic_cost",
    "euclidean_cost",
    "converged",
    "termination",
    "max_constraint_violation",
    "max_manifold_drift",
];

pub const SUMMARY_HEADER: [&str; 10] = [
    "algorithm",
    "statistic",
    "trials",
    "converged",
    "iterations",
    "accepted",
    "geodesic_cost",
    "euclidean_cost",
    "max_constraint_violation",
    "max_manifold_drift",
];

pub const ITERATION_HEADER: [&str; 11] = [
    "solve",
    "j",
    "j_candidate",
    "l",
    "delta_j",
    "delta_l",
    "rho",
    "radius",
    "accepted",
    "solver_iterations",
    "manifold_drift",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Iscvx,
    Scvx,
    Both,
}

impl Algorithm {
    pub fn backends(self) -> Vec<Backend> {
        match self {
            Algorithm::Iscvx => vec![Backend::Iscvx],
            Algorithm::Scvx => vec![Backend::Scvx],
            Algorithm::Both => vec![Backend::Iscvx, Backend::Scvx],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_steps: usize,
    pub tau: f64,
    pub theta_max_deg: f64,
    pub trials: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub params: IscvxParams,
    pub out_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the rayon default.
    pub jobs: Option<usize>,
    /// Fixed endpoints and keep-out axis for `solve`; sampled when absent.
    pub q0: Option<Quaternion>,
    pub qd: Option<Quaternion>,
    pub t_o: Option<Vec3>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_steps: 30,
            tau: 0.1,
            theta_max_deg: 10.0,
            trials: 100,
            seed: 0,
            algorithm: Algorithm::Both,
            params: IscvxParams::default(),
            out_dir: None,
            jobs: None,
            q0: None,
            qd: None,
            t_o: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.trials == 0 {
            return Err(Error::InvalidParams("trials must be at least 1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidParams("jobs must be at least 1".into()));
        }
        // Reuse the problem checks on a placeholder instance.
        AttitudeProblem::new(
            Quaternion::IDENTITY,
            Quaternion::IDENTITY,
            Vec3::z(),
            Vec3::x(),
            self.theta_max_deg.to_radians(),
            self.n_steps,
            self.tau,
        )?;
        Ok(())
    }

    /// The instance of trial `trial`.
    pub fn trial_problem(&self, trial: usize) -> Result<AttitudeProblem> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        sample_problem(&mut rng, self.n_steps, self.tau, self.theta_max_deg.to_radians())
    }

    /// The `solve` instance: sampled as trial 0, then overridden by any
    /// fixed `q0`, `qd` or `t_o`.
    pub fn single_problem(&self) -> Result<AttitudeProblem> {
        let base = self.trial_problem(0)?;
        AttitudeProblem::new(
            self.q0.map_or(Ok(base.q0), |q| q.ensure_unit())?,
            self.qd.map_or(Ok(base.qd), |q| q.ensure_unit())?,
            base.y_b,
            self.t_o.map_or(base.t_o, |t| t.normalize()),
            base.theta_max,
            base.n_steps,
            base.tau,
        )
    }
}

pub fn run_solver(backend: Backend, prob: &AttitudeProblem, params: &IscvxParams) -> Result<SolveReport> {
    let init = slerp_init(prob)?;
    match backend {
        Backend::Iscvx => solve_iscvx(prob, &init, params),
        Backend::Scvx => solve_scvx(prob, &init, params),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    pub algorithm: Backend,
    /// Sub-problem solves, rejected ones included.
    pub iterations: usize,
    pub accepted: usize,
    pub wall_time_ms: f64,
    pub geodesic_cost: f64,
    pub euclidean_cost: f64,
    pub converged: bool,
    pub termination: String,
    pub max_constraint_violation: f64,
    pub max_manifold_drift: f64,
}

/// Largest dynamics defect (frame `ℓ∞`) and keep-out excess, evaluated on
/// unit-normalized copies of the states.
pub fn max_constraint_violation(traj: &Trajectory, prob: &AttitudeProblem) -> Result<f64> {
    let states: Vec<Quaternion> = traj.states.iter().map(|q| q.normalize()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..traj.horizon() {
        let z = dynamics_step(states[i], traj.controls[i], prob.tau);
        worst = worst.max(defect_coords(states[i + 1], z)?.amax());
    }
    for q in &states {
        worst = worst.max(keepout_value(*q, prob)?);
    }
    Ok(worst)
}

pub fn trial_metrics(
    trial: usize,
    seed: u64,
    prob: &AttitudeProblem,
    report: &SolveReport,
) -> Result<TrialMetrics> {
    let traj = &report.trajectory;
    let normalized = Trajectory {
        states: traj.states.iter().map(|q| q.normalize()).collect(),
        controls: traj.controls.clone(),
    };
    let geo = match report.backend {
        Backend::Iscvx => geodesic_cost(traj, prob)?,
        Backend::Scvx => geodesic_cost(&normalized, prob)?,
    };
    Ok(TrialMetrics {
        trial,
        seed,
        algorithm: report.backend,
        iterations: report.solves,
        accepted: report.accepted,
        wall_time_ms: report.wall_time.as_secs_f64() * 1e3,
        geodesic_cost: geo,
        euclidean_cost: euclidean_cost(traj, prob),
        converged: report.converged(),
        termination: format!("{:?}", report.termination),
        max_constraint_violation: max_constraint_violation(traj, prob)?,
        max_manifold_drift: traj.max_manifold_drift(),
    })
}

fn failed_metrics(trial: usize, seed: u64, backend: Backend, err: &Error) -> TrialMetrics {
    log::warn!("trial {trial} ({}) failed: {err}", backend.name());
    TrialMetrics {
        trial,
        seed,
        algorithm: backend,
        iterations: 0,
        accepted: 0,
        wall_time_ms: f64::NAN,
        geodesic_cost: f64::NAN,
        euclidean_cost: f64::NAN,
        converged: false,
        termination: "Error".into(),
        max_constraint_violation: f64::NAN,
        max_manifold_drift: f64::NAN,
    }
}

pub fn run_trial(config: &ExperimentConfig, trial: usize, backend: Backend) -> TrialMetrics {
    let result = config
        .trial_problem(trial)
        .and_then(|prob| {
            let report = run_solver(backend, &prob, &config.params)?;
            trial_metrics(trial, config.seed, &prob, &report)
        });
    result.unwrap_or_else(|e| failed_metrics(trial, config.seed, backend, &e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub algorithm: Backend,
    pub statistic: &'static str,
    pub trials: usize,
    pub converged: f64,
    pub iterations: f64,
    pub accepted: f64,
    pub geodesic_cost: f64,
    pub euclidean_cost: f64,
    pub max_constraint_violation: f64,
    pub max_manifold_drift: f64,
    pub wall_time_ms: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and standard-deviation rows per algorithm, over all rows of that
/// algorithm (failed trials contribute NaN costs).
pub fn aggregate(rows: &[TrialMetrics]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for backend in [Backend::Iscvx, Backend::Scvx] {
        let sel: Vec<&TrialMetrics> = rows.iter().filter(|r| r.algorithm == backend).collect();
        if sel.is_empty() {
            continue;
        }
        let col = |f: &dyn Fn(&TrialMetrics) -> f64| mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        let stats = [
            col(&|r| if r.converged { 1.0 } else { 0.0 }),
            col(&|r| r.iterations as f64),
            col(&|r| r.accepted as f64),
            col(&|r| r.geodesic_cost),
            col(&|r| r.euclidean_cost),
            col(&|r| r.max_constraint_violation),
            col(&|r| r.max_manifold_drift),
            col(&|r| r.wall_time_ms),
        ];
        for (k, statistic) in ["mean", "std"].into_iter().enumerate() {
            let pick = |s: (f64, f64)| if k == 0 { s.0 } else { s.1 };
            out.push(AggregateRow {
                algorithm: backend,
                statistic,
                trials: sel.len(),
                converged: pick(stats[0]),
                iterations: pick(stats[1]),
                accepted: pick(stats[2]),
                geodesic_cost: pick(stats[3]),
                euclidean_cost: pick(stats[4]),
                max_constraint_violation: pick(stats[5]),
                max_manifold_drift: pick(stats[6]),
                wall_time_ms: pick(stats[7]),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Trial-major, algorithms in [`Algorithm::backends`] order.
    pub rows: Vec<TrialMetrics>,
    pub summary: Vec<AggregateRow>,
}

impl BatchResult {
    pub fn all_converged(&self) -> bool {
        self.rows.iter().all(|r| r.converged)
    }
}

pub fn run_batch(config: &ExperimentConfig) -> Result<BatchResult> {
    config.validate()?;
    let backends = config.algorithm.backends();
    let jobs: Vec<(usize, Backend)> = (0..config.trials)
        .flat_map(|t| backends.iter().map(move |b| (t, *b)))
        .collect();
    let work = || -> Vec<TrialMetrics> {
        jobs.par_iter()
            .map(|&(t, b)| run_trial(config, t, b))
            .collect()
    };
    let rows = match config.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summary = aggregate(&rows);
    Ok(BatchResult { rows, summary })
}

/// `{:.16e}`: 17 significant digits, exact round trip for finite values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-trial rows under [`METRICS_HEADER`]; wall times are left out so the
/// file is reproducible (see [`export_timings`]).
pub fn export_metrics(rows: &[TrialMetrics], path: &Path) -> Result<()> {
    write_csv(
        path,
        &METRICS_HEADER,
        rows.iter().map(|r| {
            vec![
                r.trial.to_string(),
                r.seed.to_string(),
                r.algorithm.name().to_string(),
                r.iterations.to_string(),
                r.accepted.to_string(),
                fmt_f64(r.geodesic_cost),
                fmt_f64(r.euclidean_cost),
                r.converged.to_string(),
                r.termination.clone(),
                fmt_f64(r.max_constraint_violation),
                fmt_f64(r.max_manifold_drift),
            ]
        }),
    )
}

pub fn export_summary(rows: &[AggregateRow], path: &Path) -> Result<()> {
    write_csv(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.algorithm.name().to_string(),
                r.statistic.to_string(),
                r.trials.to_string(),
                fmt_f64(r.converged),
                fmt_f64(r.iterations),
                fmt_f64(r.accepted),
                fmt_f64(r.geodesic_cost),
                fmt_f64(r.euclidean_cost),
                fmt_f64(r.max_constraint_violation),
                fmt_f64(r.max_manifold_drift),
            ]
        }),
    )
}

/// Wall-clock times per trial and their aggregates, as JSON.
pub fn export_timings(result: &BatchResult, path: &Path) -> Result<()> {
    let trials: Vec<_> = result
        .rows
        .iter()
        .map(|r| serde_json::json!({"trial": r.trial, "algorithm": r.algorithm, "wall_time_ms": r.wall_time_ms}))
        .collect();
    let summary: Vec<_> = result
        .summary
        .iter()
        .map(|r| serde_json::json!({"algorithm": r.algorithm, "statistic": r.statistic, "wall_time_ms": r.wall_time_ms}))
        .collect();
    write_json(&serde_json::json!({"trials": trials, "summary": summary}), path)
}

pub fn export_iteration_log(log: &[IterationLog], path: &Path) -> Result<()> {
    write_csv(
        path,
        &ITERATION_HEADER,
        log.iter().map(|r| {
            vec![
                r.solve.to_string(),
                fmt_f64(r.j),
                fmt_f64(r.j_candidate),
                fmt_f64(r.l),
                fmt_f64(r.delta_j),
                fmt_f64(r.delta_l),
                fmt_f64(r.rho),
                fmt_f64(r.radius),
                r.accepted.to_string(),
                r.solver_iterations.to_string(),
                fmt_f64(r.manifold_drift),
            ]
        }),
    )
}

/// JSON formatter writing every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut ser = serde_json::Serializer::with_formatter(&mut w, FullPrecision);
    value.serialize(&mut ser).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    states: Vec<Quaternion>,
    controls: Vec<Vec3>,
    problem: Option<AttitudeProblem>,
}

pub fn export_trajectory(traj: &Trajectory, prob: Option<&AttitudeProblem>, path: &Path) -> Result<()> {
    traj.validate()?;
    let file = TrajectoryFile {
        states: traj.states.clone(),
        controls: traj.controls.clone(),
        problem: prob.cloned(),
    };
    write_json(&file, path)
}

pub fn load_trajectory(path: &Path) -> Result<(Trajectory, Option<AttitudeProblem>)> {
    let f = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: TrajectoryFile =
        serde_json::from_reader(std::io::BufReader::new(f)).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let traj = Trajectory {
        states: file.states,
        controls: file.controls,
    };
    traj.validate()?;
    Ok((traj, file.problem))
}

#[derive(Debug, Clone)]
pub struct SingleRun {
    pub problem: AttitudeProblem,
    pub reports: Vec<SolveReport>,
}

impl SingleRun {
    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(SolveReport::converged)
    }
}

/// Solves the configured instance with each selected algorithm; with an
/// output directory, writes `<algorithm>_trajectory.json` and
/// `<algorithm>_iterations.csv` there.
pub fn run_single(config: &ExperimentConfig) -> Result<SingleRun> {
    config.validate()?;
    let problem = config.single_problem()?;
    let mut reports = Vec::new();
    for backend in config.algorithm.backends() {
        let report = run_solver(backend, &problem, &config.params)?;
        if let Some(dir) = &config.out_dir {
            let name = backend.name();
            export_trajectory(&report.trajectory, Some(&problem), &dir.join(format!("{name}_trajectory.json")))?;
            export_iteration_log(&report.log, &dir.join(format!("{name}_iterations.csv")))?;
        }
        reports.push(report);
    }
    Ok(SingleRun { problem, reports })
}

/// Writes `metrics.csv`, `summary.csv` and `timings.json` into `dir`.
pub fn write_batch(result: &BatchResult, dir: &Path) -> Result<()> {
    export_metrics(&result.rows, &dir.join("metrics.csv"))?;
    export_summary(&result.summary, &dir.join("summary.csv"))?;
    export_timings(result, &dir.join("timings.json"))
}

pub fn total_wall_time(result: &BatchResult) -> Duration {
    Duration::from_secs_f64(
        result
            .rows
            .iter()
            .map(|r| r.wall_time_ms)
            .filter(|t| t.is_finite())
            .sum::<f64>()
            / 1e3,
    )
}
