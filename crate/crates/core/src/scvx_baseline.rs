//! Extrinsic SCvx baseline: the quaternion is treated as a point of `R⁴`,
//! perturbed additively and never renormalized.
//!
//! Per step the linearization carries a `4×4` state matrix and a `4×3`
//! control matrix, and the sub-problem has four state and four
//! virtual-control coordinates per timestep against three in the intrinsic
//! method.

use nalgebra::{DMatrix, DVector, Matrix4, Matrix4x3, Vector4};

use crate::attitude::{euclidean_cost, AttitudeProblem, Trajectory};
use crate::error::{Error, Result};
use crate::iscvx::{check_inputs, trust_region_loop, Backend, IscvxParams, Method, SolveReport};
use crate::quat::{dexp_matrix, quat_exp, quat_inv, Quaternion, Vec3};
use crate::subproblem::{StageModel, SubproblemSolution, TerminalModel};

#[derive(Debug, Clone, PartialEq)]
pub struct EuclideanLinearizedStep {
    pub a4: Matrix4<f64>,
    pub b4: Matrix4x3<f64>,
    pub s_row4: Vector4<f64>,
    pub s_val: f64,
    /// `f(x_i, u_i) − x_{i+1}`.
    pub defect4: Vector4<f64>,
}

/// `t_oᵀ(q·y_b·q⁻¹) − cos θ_max` for any nonzero `q`.
pub fn keepout_value_ambient(q: Quaternion, prob: &AttitudeProblem) -> f64 {
    let (g, _) = rotated_dot(q, prob);
    g / q.norm_squared() - prob.theta_max.cos()
}

/// `g(q) = t_oᵀ(q·y_b·q̄)` and its gradient.
fn rotated_dot(q: Quaternion, prob: &AttitudeProblem) -> (f64, Vector4<f64>) {
    let (y, t) = (prob.y_b, prob.t_o);
    let (w, v) = (q.w, q.vector());
    let yt = y.dot(&t);
    let g = (w * w - v.norm_squared()) * yt + 2.0 * v.dot(&y) * v.dot(&t) + 2.0 * w * t.dot(&v.cross(&y));
    let dw = 2.0 * w * yt + 2.0 * t.dot(&v.cross(&y));
    let dv = -v * (2.0 * yt) + y * (2.0 * v.dot(&t)) + t * (2.0 * v.dot(&y)) + y.cross(&t) * (2.0 * w);
    (g, Vector4::new(dw, dv.x, dv.y, dv.z))
}

/// Ambient gradient of [`keepout_value_ambient`].
pub fn keepout_gradient_ambient(q: Quaternion, prob: &AttitudeProblem) -> Vector4<f64> {
    let (g, dg) = rotated_dot(q, prob);
    let n2 = q.norm_squared();
    dg / n2 - q.to_vector4() * (2.0 * g / (n2 * n2))
}

pub fn euclidean_linearize(traj: &Trajectory, prob: &AttitudeProblem) -> Result<Vec<EuclideanLinearizedStep>> {
    traj.validate()?;
    Ok((0..traj.horizon())
        .map(|i| {
            let (q, w) = (traj.states[i], traj.controls[i]);
            let step = quat_exp(w * prob.tau);
            let f = (q * step).to_vector4();
            EuclideanLinearizedStep {
                a4: step.right_matrix(),
                b4: q.left_matrix() * dexp_matrix(w * prob.tau) * prob.tau,
                s_row4: keepout_gradient_ambient(q, prob),
                s_val: keepout_value_ambient(q, prob),
                defect4: f - traj.states[i + 1].to_vector4(),
            }
        })
        .collect())
}

/// Euclidean cost plus `λ Σ (‖x_{i+1}⁻¹·(f(x_i, u_i) − x_{i+1})‖₁ + max(0, s(x_i)))`,
/// the product taken in full (four components).
pub fn penalized_cost_euclidean(traj: &Trajectory, prob: &AttitudeProblem, lambda: f64) -> Result<f64> {
    traj.validate()?;
    let mut penalty = 0.0;
    for i in 0..traj.horizon() {
        let next = traj.states[i + 1];
        let f = traj.states[i] * quat_exp(traj.controls[i] * prob.tau);
        let inv = quat_inv(next).map_err(Error::at_step(i + 1))?;
        penalty += (inv * (f - next)).to_vector4().lp_norm(1);
    }
    for q in &traj.states {
        penalty += keepout_value_ambient(*q, prob).max(0.0);
    }
    Ok(euclidean_cost(traj, prob) + lambda * penalty)
}

struct Extrinsic<'a> {
    prob: &'a AttitudeProblem,
    lambda: f64,
}

fn dvec4(v: &Vector4<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

impl Method for Extrinsic<'_> {
    const BACKEND: Backend = Backend::Scvx;

    fn penalized_cost(&self, traj: &Trajectory) -> Result<f64> {
        penalized_cost_euclidean(traj, self.prob, self.lambda)
    }

    fn model(&self, traj: &Trajectory) -> Result<(Vec<StageModel>, TerminalModel)> {
        let qd = self.prob.qd.to_vector4();
        let steps = euclidean_linearize(traj, self.prob)?;
        let stages = steps
            .iter()
            .enumerate()
            .map(|(i, st)| {
                let q = traj.states[i].to_vector4();
                let w = traj.controls[i];
                StageModel {
                    a: DMatrix::from_column_slice(4, 4, st.a4.as_slice()),
                    b: DMatrix::from_column_slice(4, 3, st.b4.as_slice()),
                    e: DMatrix::from_column_slice(4, 4, traj.states[i + 1].left_matrix().as_slice()),
                    defect: dvec4(&st.defect4),
                    s_row: dvec4(&st.s_row4),
                    q_row: DVector::zeros(3),
                    s_val: st.s_val,
                    grad_x: dvec4(&(q - qd)),
                    hess_x: DMatrix::identity(4, 4),
                    grad_u: DVector::from_column_slice(w.as_slice()),
                    hess_u: DMatrix::identity(3, 3),
                    cost: 0.5 * ((q - qd).norm_squared() + w.norm_squared()),
                }
            })
            .collect();
        let q_n = traj.states[traj.horizon()];
        let terminal = TerminalModel {
            grad_x: dvec4(&(q_n.to_vector4() - qd)),
            hess_x: DMatrix::identity(4, 4),
            s_row: dvec4(&keepout_gradient_ambient(q_n, self.prob)),
            s_val: keepout_value_ambient(q_n, self.prob),
            cost: 0.5 * (q_n.to_vector4() - qd).norm_squared(),
        };
        Ok((stages, terminal))
    }

    fn update(&self, traj: &Trajectory, sol: &SubproblemSolution) -> Trajectory {
        Trajectory {
            states: traj
                .states
                .iter()
                .zip(&sol.eta)
                .map(|(q, eta)| Quaternion::new(q.w + eta[0], q.x + eta[1], q.y + eta[2], q.z + eta[3]))
                .collect(),
            controls: traj
                .controls
                .iter()
                .zip(&sol.xi)
                .map(|(w, xi)| w + Vec3::new(xi[0], xi[1], xi[2]))
                .collect(),
        }
    }
}

pub fn solve_scvx(prob: &AttitudeProblem, init: &Trajectory, params: &IscvxParams) -> Result<SolveReport> {
    check_inputs(prob, init, params)?;
    let method = Extrinsic {
        prob,
        lambda: params.lambda,
    };
    trust_region_loop(&method, init, params)
}
