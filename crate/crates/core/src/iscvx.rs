//! The outer trust-region loop: linearize, solve the convex sub-problem,
//! compare actual and predicted decrease of the penalized cost, then accept
//! or reject the step and resize the trust region.
//!
//! The loop is written once against [`Method`]; the intrinsic method lives
//! here and the ambient baseline in [`crate::scvx_baseline`].

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attitude::{dynamics_step, geodesic_cost, keepout_value, AttitudeProblem, Trajectory};
use crate::error::{Error, Result};
use crate::linearize::{defect_coords, linearize_trajectory};
use crate::manifold::retract_q;
use crate::quat::Vec3;
use crate::subproblem::{ConvexSubproblem, StageModel, SubproblemSolution, TerminalModel};

/// Below this radius a failing sub-problem aborts the solve.
pub const MIN_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IscvxParams {
    pub r1_init: f64,
    pub r_min: f64,
    /// Shrink factor.
    pub alpha: f64,
    /// Growth factor.
    pub beta: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub lambda: f64,
    pub eps_tol: f64,
    /// Cap on sub-problem solves, rejected ones included.
    pub max_outer_iters: usize,
}

impl Default for IscvxParams {
    fn default() -> Self {
        IscvxParams {
            r1_init: 1.0,
            r_min: 0.0,
            alpha: 2.0,
            beta: 3.2,
            rho0: 0.0,
            rho1: 0.25,
            rho2: 0.7,
            lambda: 100.0,
            eps_tol: 1e-5,
            max_outer_iters: 500,
        }
    }
}

impl IscvxParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.r1_init > 0.0 && self.r1_init.is_finite()) {
            return fail(format!("initial radius {} must be positive", self.r1_init));
        }
        if !(self.r_min >= 0.0 && self.r_min <= self.r1_init) {
            return fail(format!("radius floor {} outside [0, r1]", self.r_min));
        }
        if !(self.alpha > 1.0 && self.beta > 1.0) {
            return fail(format!("need alpha > 1 and beta > 1, got {} and {}", self.alpha, self.beta));
        }
        if !(0.0 <= self.rho0 && self.rho0 < self.rho1 && self.rho1 < self.rho2 && self.rho2 < 1.0) {
            return fail(format!(
                "need 0 <= rho0 < rho1 < rho2 < 1, got {}, {}, {}",
                self.rho0, self.rho1, self.rho2
            ));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return fail(format!("penalty weight {} must be positive", self.lambda));
        }
        if !(self.eps_tol >= 0.0) {
            return fail(format!("tolerance {} must be nonnegative", self.eps_tol));
        }
        if self.max_outer_iters == 0 {
            return fail("iteration cap must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Iscvx,
    Scvx,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Iscvx => "iscvx",
            Backend::Scvx => "scvx",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// An accepted step decreased `J` by at most `eps_tol`.
    Converged,
    /// The sub-problem predicts no decrease: the reference is stationary.
    Stationary,
    IterationCap,
    /// Rejections or solver failures drove the radius below [`MIN_RADIUS`].
    RadiusCollapse,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::Converged | Termination::Stationary)
    }
}

/// One sub-problem solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub solve: usize,
    /// Penalized cost of the reference.
    pub j: f64,
    /// Penalized cost of the candidate; NaN when the solve failed.
    pub j_candidate: f64,
    pub l: f64,
    pub delta_j: f64,
    pub delta_l: f64,
    pub rho: f64,
    /// Radius used for this solve.
    pub radius: f64,
    pub accepted: bool,
    pub solver_iterations: usize,
    /// Largest `|‖q‖ − 1|` over the candidate states; NaN without a candidate.
    pub manifold_drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub backend: Backend,
    pub trajectory: Trajectory,
    /// Penalized cost of the final trajectory.
    pub final_cost: f64,
    pub accepted: usize,
    /// Sub-problem solves, rejected and failed ones included.
    pub solves: usize,
    pub log: Vec<IterationLog>,
    pub wall_time: Duration,
    pub termination: Termination,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// `ΔJ ≤ ε_tol`.
pub fn check_termination(delta_j: f64, eps_tol: f64) -> bool {
    delta_j <= eps_tol
}

/// Geodesic cost plus `λ Σ (‖R⁻¹_{x_{i+1}}(f(x_i, u_i))‖₁ + max(0, s(x_i)))`
/// with keep-out rows at `x_0..x_N`.
pub fn penalized_cost(traj: &Trajectory, prob: &AttitudeProblem, lambda: f64) -> Result<f64> {
    traj.validate()?;
    let mut penalty = 0.0;
    for i in 0..traj.horizon() {
        let z = dynamics_step(traj.states[i], traj.controls[i], prob.tau);
        let d = defect_coords(traj.states[i + 1], z).map_err(Error::at_step(i))?;
        penalty += d.lp_norm(1);
    }
    for (i, q) in traj.states.iter().enumerate() {
        penalty += keepout_value(*q, prob).map_err(Error::at_step(i))?.max(0.0);
    }
    Ok(geodesic_cost(traj, prob)? + lambda * penalty)
}

/// A linearization backend for the trust-region loop.
pub(crate) trait Method {
    const BACKEND: Backend;
    fn penalized_cost(&self, traj: &Trajectory) -> Result<f64>;
    fn model(&self, traj: &Trajectory) -> Result<(Vec<StageModel>, TerminalModel)>;
    fn update(&self, traj: &Trajectory, sol: &SubproblemSolution) -> Trajectory;
}

struct Intrinsic<'a> {
    prob: &'a AttitudeProblem,
    lambda: f64,
}

impl Method for Intrinsic<'_> {
    const BACKEND: Backend = Backend::Iscvx;

    fn penalized_cost(&self, traj: &Trajectory) -> Result<f64> {
        penalized_cost(traj, self.prob, self.lambda)
    }

    fn model(&self, traj: &Trajectory) -> Result<(Vec<StageModel>, TerminalModel)> {
        let lin = linearize_trajectory(traj, self.prob)?;
        Ok((
            lin.steps.iter().map(StageModel::from).collect(),
            TerminalModel::from(&lin.terminal),
        ))
    }

    fn update(&self, traj: &Trajectory, sol: &SubproblemSolution) -> Trajectory {
        let v3 = |v: &nalgebra::DVector<f64>| Vec3::new(v[0], v[1], v[2]);
        Trajectory {
            states: traj
                .states
                .iter()
                .zip(&sol.eta)
                .map(|(q, eta)| retract_q(*q, v3(eta)))
                .collect(),
            controls: traj
                .controls
                .iter()
                .zip(&sol.xi)
                .map(|(w, xi)| w + v3(xi))
                .collect(),
        }
    }
}

pub(crate) fn check_inputs(prob: &AttitudeProblem, init: &Trajectory, params: &IscvxParams) -> Result<()> {
    params.validate()?;
    init.validate()?;
    if init.horizon() != prob.n_steps {
        return Err(Error::DimensionMismatch {
            expected: prob.n_steps,
            got: init.horizon(),
        });
    }
    Ok(())
}

pub(crate) fn trust_region_loop<M: Method>(
    method: &M,
    init: &Trajectory,
    params: &IscvxParams,
) -> Result<SolveReport> {
    let start = Instant::now();
    let mut traj = init.clone();
    let mut j = method.penalized_cost(&traj)?;
    let (mut stages, mut terminal) = method.model(&traj)?;
    let lambdas = vec![params.lambda; traj.horizon() + 1];
    let mut r = params.r1_init;
    let mut log = Vec::new();
    let mut accepted = 0;

    let termination = loop {
        if log.len() >= params.max_outer_iters {
            break Termination::IterationCap;
        }
        if r < MIN_RADIUS {
            break Termination::RadiusCollapse;
        }
        let solve = log.len();
        let sp = ConvexSubproblem::assemble(stages.clone(), terminal.clone(), r, &lambdas)?;
        let mut row = IterationLog {
            solve,
            j,
            j_candidate: f64::NAN,
            l: f64::NAN,
            delta_j: f64::NAN,
            delta_l: f64::NAN,
            rho: f64::NAN,
            radius: r,
            accepted: false,
            solver_iterations: 0,
            manifold_drift: f64::NAN,
        };
        let sol = match sp.solve() {
            Ok(sol) => sol,
            Err(Error::Solver(e)) => {
                log::debug!("solve {solve}: sub-problem failed at radius {r:e}: {e}");
                log.push(row);
                r /= params.alpha;
                continue;
            }
            Err(e) => return Err(e),
        };
        row.l = sol.l_value;
        row.solver_iterations = sol.stats.map_or(0, |s| s.iterations);
        let delta_l = j - sol.l_value;
        row.delta_l = delta_l;

        // The zero perturbation attains L = J, so ΔL ≥ 0 up to solver accuracy.
        let noise = 1e-9 * j.abs().max(1.0);
        if delta_l < -noise {
            log::debug!("solve {solve}: predicted increase {:e}; shrinking", -delta_l);
            log.push(row);
            r /= params.alpha;
            continue;
        }
        if delta_l <= noise {
            let candidate = method.update(&traj, &sol);
            row.manifold_drift = candidate.max_manifold_drift();
            if let Ok(jc) = method.penalized_cost(&candidate) {
                row.j_candidate = jc;
                row.delta_j = j - jc;
            }
            log.push(row);
            break Termination::Stationary;
        }

        let candidate = method.update(&traj, &sol);
        row.manifold_drift = candidate.max_manifold_drift();
        let j_candidate = match method.penalized_cost(&candidate) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("solve {solve}: candidate cost undefined ({e}); shrinking");
                log.push(row);
                r /= params.alpha;
                continue;
            }
        };
        let delta_j = j - j_candidate;
        let rho = delta_j / delta_l;
        row.j_candidate = j_candidate;
        row.delta_j = delta_j;
        row.rho = rho;

        if rho < params.rho0 {
            log.push(row);
            r /= params.alpha;
            continue;
        }

        row.accepted = true;
        log.push(row);
        accepted += 1;
        traj = candidate;
        j = j_candidate;
        r = if rho < params.rho1 {
            r / params.alpha
        } else if rho < params.rho2 {
            r
        } else {
            r * params.beta
        };
        r = r.max(params.r_min);
        if check_termination(delta_j, params.eps_tol) {
            break Termination::Converged;
        }
        (stages, terminal) = method.model(&traj)?;
    };

    Ok(SolveReport {
        backend: M::BACKEND,
        trajectory: traj,
        final_cost: j,
        accepted,
        solves: log.len(),
        log,
        wall_time: start.elapsed(),
        termination,
    })
}

pub fn solve_iscvx(prob: &AttitudeProblem, init: &Trajectory, params: &IscvxParams) -> Result<SolveReport> {
    check_inputs(prob, init, params)?;
    let method = Intrinsic {
        prob,
        lambda: params.lambda,
    };
    trust_region_loop(&method, init, params)
}
