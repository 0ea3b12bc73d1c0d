//! Intrinsic linearization of the attitude dynamics and keep-out constraint
//! about a reference trajectory.
//!
//! For `z_i = f(q_i, ω_i)` the perturbation dynamics to first order are
//!
//! ```text
//! η_{i+1} = R⁻¹_{q_{i+1}}(z_i) + D_i (A_i η_i + B_i ξ_i)
//! ```
//!
//! with `A_i`, `B_i` the differentials of `f`, and `D_i` the differential of
//! `R⁻¹_{q_{i+1}}` at `z_i`. Every operator is materialized as a `3×3`
//! matrix in the orthonormal frames `q·e_j` by applying it to basis vectors.

use nalgebra::Matrix3;

use crate::attitude::{
    cost_derivatives, final_cost, keepout_row, keepout_value, stage_cost, AttitudeProblem,
    Trajectory,
};
use crate::error::{Error, Result};
use crate::manifold::{frame_coords_q, frame_reconstruct_q};
use crate::quat::{dexp, dlog, quat_exp, quat_log, Quaternion, Vec3};

/// Per-timestep data of the convex sub-problem, all in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedStep {
    /// `[D][A]`.
    pub a: Matrix3<f64>,
    /// `[D][B]`.
    pub b: Matrix3<f64>,
    /// Constraint differential in the state.
    pub s_row: Vec3,
    /// Constraint differential in the control; zero for the keep-out cone.
    pub q_row: Vec3,
    pub s_val: f64,
    /// Coordinates of `R⁻¹_{x_{i+1}}(z_i)`.
    pub defect: Vec3,
    pub grad_q: Vec3,
    pub hess_q: Matrix3<f64>,
    pub grad_w: Vec3,
    pub hess_w: Matrix3<f64>,
    /// `φ(x_i, u_i)`.
    pub stage_cost: f64,
}

impl LinearizedStep {
    /// Re-expresses the control blocks in the rotated frame `e'_j = Σ_k rot_kj e_k`.
    pub fn with_control_frame(&self, rot: &Matrix3<f64>) -> LinearizedStep {
        LinearizedStep {
            b: self.b * rot,
            q_row: rot.transpose() * self.q_row,
            grad_w: rot.transpose() * self.grad_w,
            hess_w: rot.transpose() * self.hess_w * rot,
            ..self.clone()
        }
    }
}

/// Final-state cost expansion and keep-out data for `x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalStep {
    pub grad_q: Vec3,
    pub hess_q: Matrix3<f64>,
    pub s_row: Vec3,
    pub s_val: f64,
    /// `h(x_N)`.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub steps: Vec<LinearizedStep>,
    pub terminal: TerminalStep,
}

/// `A(η) = η · exp(τω)`, returned in the frame at `f(q, ω)`.
pub fn dyn_diff_state(q: Quaternion, w: Vec3, tau: f64, eta: Vec3) -> Vec3 {
    let step = quat_exp(w * tau);
    let image = frame_reconstruct_q(q, eta) * step;
    frame_coords_q(q * step, image).expect("right translation preserves tangency")
}

/// `B(ξ) = τ q · dexp_{τω}(ξ)`, returned in the frame at `f(q, ω)`.
pub fn dyn_diff_control(q: Quaternion, w: Vec3, tau: f64, xi: Vec3) -> Vec3 {
    let z = q * quat_exp(w * tau);
    let image = (q * dexp(w * tau, xi)).scale(tau);
    frame_coords_q(z, image).expect("dexp is tangent to the exponential")
}

/// `D(v) = q_{i+1} · dlog_{q_{i+1}⁻¹·z}(q_{i+1}⁻¹·v)` for `v` given in the
/// frame at `z`, returned in the frame at `q_{i+1}`. The product
/// `q_{i+1}⁻¹·z` is sign-canonicalized together with its tangent vector.
pub fn curvature_op(q_next: Quaternion, z: Quaternion, v: Vec3) -> Result<Vec3> {
    let p = q_next.conjugate() * z;
    let sign = if p.w < 0.0 { -1.0 } else { 1.0 };
    let tangent = (q_next.conjugate() * frame_reconstruct_q(z, v)).scale(sign);
    dlog(p.scale(sign), tangent)
}

/// Coordinates of `R⁻¹_{q_next}(z)` on the principal branch.
pub fn defect_coords(q_next: Quaternion, z: Quaternion) -> Result<Vec3> {
    quat_log((q_next.conjugate() * z).canonical())
}

fn columns<F: FnMut(Vec3) -> Result<Vec3>>(mut op: F) -> Result<Matrix3<f64>> {
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        m.set_column(j, &op(Vec3::ith(j, 1.0))?);
    }
    Ok(m)
}

pub fn state_matrix(q: Quaternion, w: Vec3, tau: f64) -> Matrix3<f64> {
    columns(|e| Ok(dyn_diff_state(q, w, tau, e))).expect("infallible")
}

pub fn control_matrix(q: Quaternion, w: Vec3, tau: f64) -> Matrix3<f64> {
    columns(|e| Ok(dyn_diff_control(q, w, tau, e))).expect("infallible")
}

pub fn curvature_matrix(q_next: Quaternion, z: Quaternion) -> Result<Matrix3<f64>> {
    columns(|e| curvature_op(q_next, z, e))
}

fn linearize_step(
    traj: &Trajectory,
    prob: &AttitudeProblem,
    i: usize,
) -> Result<LinearizedStep> {
    let (q, w) = (traj.states[i], traj.controls[i]);
    let q_next = traj.states[i + 1];
    let z = q * quat_exp(w * prob.tau);
    let d = curvature_matrix(q_next, z)?;
    let costs = cost_derivatives(q, w, prob)?;
    Ok(LinearizedStep {
        a: d * state_matrix(q, w, prob.tau),
        b: d * control_matrix(q, w, prob.tau),
        s_row: keepout_row(q, prob),
        q_row: Vec3::zeros(),
        s_val: keepout_value(q, prob)?,
        defect: defect_coords(q_next, z)?,
        grad_q: costs.grad_q,
        hess_q: costs.hess_q,
        grad_w: costs.grad_w,
        hess_w: costs.hess_w,
        stage_cost: stage_cost(q, w, prob)?,
    })
}

pub fn linearize_trajectory(traj: &Trajectory, prob: &AttitudeProblem) -> Result<Linearization> {
    traj.validate()?;
    let n = traj.horizon();
    let steps = (0..n)
        .map(|i| linearize_step(traj, prob, i).map_err(Error::at_step(i)))
        .collect::<Result<Vec<_>>>()?;
    let q_n = traj.states[n];
    let terminal = (|| {
        let costs = cost_derivatives(q_n, Vec3::zeros(), prob)?;
        Ok::<_, Error>(TerminalStep {
            grad_q: costs.grad_q,
            hess_q: costs.hess_q,
            s_row: keepout_row(q_n, prob),
            s_val: keepout_value(q_n, prob)?,
            cost: final_cost(q_n, prob)?,
        })
    })()
    .map_err(Error::at_step(n))?;
    Ok(Linearization { steps, terminal })
}
