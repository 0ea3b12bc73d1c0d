//! Constrained attitude guidance: discrete rotation kinematics on `Q`, a
//! single keep-out cone, geodesic stage costs and their Riemannian
//! derivatives, and the slerp initial guess.

use std::f64::consts::FRAC_PI_2;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{inv_retract_q, retract_q};
use crate::quat::{commutator, dlog, quat_exp, quat_log, rotate, Quaternion, Vec3};

/// Keep-out and tangent-space problem data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeProblem {
    pub q0: Quaternion,
    pub qd: Quaternion,
    pub y_b: Vec3,
    pub t_o: Vec3,
    /// Keep-out half-angle, radians.
    pub theta_max: f64,
    pub n_steps: usize,
    /// Timestep, seconds.
    pub tau: f64,
}

impl AttitudeProblem {
    /// Validates the data and flips `qd` so that `q0⁻¹·qd` has a nonnegative
    /// real part.
    pub fn new(
        q0: Quaternion,
        qd: Quaternion,
        y_b: Vec3,
        t_o: Vec3,
        theta_max: f64,
        n_steps: usize,
        tau: f64,
    ) -> Result<Self> {
        let q0 = q0.ensure_unit()?;
        let mut qd = qd.ensure_unit()?;
        if (q0.conjugate() * qd).w < 0.0 {
            qd = -qd;
        }
        for (name, v) in [("y_b", y_b), ("t_o", t_o)] {
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidProblem(format!("{name} must be a unit vector")));
            }
        }
        if !(theta_max > 0.0 && theta_max < FRAC_PI_2) {
            return Err(Error::InvalidProblem(format!(
                "keep-out angle {theta_max} rad outside (0, π/2)"
            )));
        }
        if n_steps < 2 {
            return Err(Error::InvalidProblem(format!("horizon N = {n_steps} < 2")));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidProblem(format!("timestep {tau} must be positive")));
        }
        Ok(AttitudeProblem {
            q0,
            qd,
            y_b,
            t_o,
            theta_max,
            n_steps,
            tau,
        })
    }

    /// Angle between the rotated boresight and the keep-out axis.
    pub fn boresight_angle(&self, q: Quaternion) -> Result<f64> {
        let y = rotate(q, self.y_b)?;
        Ok(y.dot(&self.t_o).clamp(-1.0, 1.0).acos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Quaternion>,
    /// Angular velocities, rad/s.
    pub controls: Vec<Vec3>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.controls.is_empty() {
            return Err(Error::InvalidProblem("trajectory has no controls".into()));
        }
        if self.states.len() != self.controls.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.controls.len() + 1,
                got: self.states.len(),
            });
        }
        Ok(())
    }

    /// Largest `|‖q‖ − 1|` over the states.
    pub fn max_manifold_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|q| (q.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `q · exp(τω)`.
pub fn dynamics_step(q: Quaternion, w: Vec3, tau: f64) -> Quaternion {
    q * quat_exp(w * tau)
}

/// `s(q) = t_oᵀ(q·y_b·q⁻¹) − cos θ_max`; nonpositive outside the cone.
pub fn keepout_value(q: Quaternion, prob: &AttitudeProblem) -> Result<f64> {
    Ok(prob.t_o.dot(&rotate(q, prob.y_b)?) - prob.theta_max.cos())
}

/// Directional derivative of [`keepout_value`] along the tangent vector with
/// frame coordinates `eta` at `q`: `t_oᵀ(q·[η, y_b]·q⁻¹)`.
pub fn keepout_diff(q: Quaternion, eta: Vec3, prob: &AttitudeProblem) -> f64 {
    let bracket = commutator(Quaternion::pure(eta), Quaternion::pure(prob.y_b));
    prob.t_o.dot(&(q * bracket * q.conjugate()).vector())
}

/// [`keepout_diff`] materialized as a row over the frame basis.
pub fn keepout_row(q: Quaternion, prob: &AttitudeProblem) -> Vec3 {
    Vec3::new(
        keepout_diff(q, Vec3::x(), prob),
        keepout_diff(q, Vec3::y(), prob),
        keepout_diff(q, Vec3::z(), prob),
    )
}

/// `‖log(q⁻¹·q_d)‖²` with the product sign-canonicalized.
pub fn geo_dist_sq(q: Quaternion, qd: Quaternion) -> Result<f64> {
    Ok(quat_log((q.conjugate() * qd).canonical())?.norm_squared())
}

/// `φ(q, ω) = ½‖ω‖² + ½ d_g(q, q_d)²`.
pub fn stage_cost(q: Quaternion, w: Vec3, prob: &AttitudeProblem) -> Result<f64> {
    Ok(0.5 * w.norm_squared() + final_cost(q, prob)?)
}

/// `h(q) = ½ d_g(q, q_d)²`.
pub fn final_cost(q: Quaternion, prob: &AttitudeProblem) -> Result<f64> {
    Ok(0.5 * geo_dist_sq(q, prob.qd)?)
}

/// Riemannian derivatives of the stage cost in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostDerivatives {
    pub grad_q: Vec3,
    pub hess_q: Matrix3<f64>,
    pub grad_w: Vec3,
    pub hess_w: Matrix3<f64>,
    /// `d_g(q, q_d) < π/2`, where the geodesic cost is convex.
    pub in_domain: bool,
}

/// Gradient `log(q_d⁻¹·q)` and Hessian of `h` at `q`, plus the control
/// blocks `ω` and `I₃`.
///
/// The state Hessian is the symmetric part of `v ↦ dlog_p(p·v)` with
/// `p = q_d⁻¹·q`. The skew part `[log p]×` is the frame's connection term;
/// it does not change the quadratic form.
pub fn cost_derivatives(q: Quaternion, w: Vec3, prob: &AttitudeProblem) -> Result<CostDerivatives> {
    let p = (prob.qd.conjugate() * q).canonical();
    let grad_q = quat_log(p)?;
    let mut m = Matrix3::zeros();
    for j in 0..3 {
        let col = dlog(p, p * Quaternion::pure(Vec3::ith(j, 1.0)))?;
        m.set_column(j, &col);
    }
    let hess_q = (m + m.transpose()) * 0.5;
    let in_domain = grad_q.norm() < FRAC_PI_2;
    if !in_domain {
        log::warn!(
            "state at geodesic distance {} from the target is outside the convex domain",
            grad_q.norm()
        );
    }
    Ok(CostDerivatives {
        grad_q,
        hess_q,
        grad_w: w,
        hess_w: Matrix3::identity(),
        in_domain,
    })
}

/// `Σ_{i<N} φ(q_i, ω_i) + h(q_N)`.
pub fn geodesic_cost(traj: &Trajectory, prob: &AttitudeProblem) -> Result<f64> {
    let n = traj.horizon();
    let mut c = final_cost(traj.states[n], prob)?;
    for (i, (q, w)) in traj.states.iter().zip(&traj.controls).enumerate() {
        c += stage_cost(*q, *w, prob).map_err(Error::at_step(i))?;
    }
    Ok(c)
}

/// `Σ_{i<N} ½(‖q_i − q_d‖² + ‖ω_i‖²) + ½‖q_N − q_d‖²`, with no sign
/// canonicalization and no normalization of the states.
pub fn euclidean_cost(traj: &Trajectory, prob: &AttitudeProblem) -> f64 {
    let n = traj.horizon();
    let mut c = 0.5 * (traj.states[n] - prob.qd).norm_squared();
    for (q, w) in traj.states.iter().zip(&traj.controls) {
        c += 0.5 * ((*q - prob.qd).norm_squared() + w.norm_squared());
    }
    c
}

/// Constant-rate geodesic from `q0` to `qd`.
pub fn slerp_init(prob: &AttitudeProblem) -> Result<Trajectory> {
    let n = prob.n_steps;
    let delta = inv_retract_q(prob.q0, prob.qd)?;
    let states = (0..=n)
        .map(|i| retract_q(prob.q0, delta * (i as f64 / n as f64)))
        .collect();
    let w = delta / (n as f64 * prob.tau);
    Ok(Trajectory {
        states,
        controls: vec![w; n],
    })
}

/// Constants of the random-instance recipe.
pub mod sampling {
    /// Endpoints keep their boresight at least this far outside the cone.
    pub const ENDPOINT_MARGIN_DEG: f64 = 5.0;
    /// The slerp boresight path must come within this angle of the cone edge.
    pub const APPROACH_MARGIN_DEG: f64 = 0.0;
    /// Points on the continuous slerp path checked for the approach test.
    pub const PATH_SAMPLES: usize = 200;
    /// Keep-out axes tried per `(q0, qd)` pair before redrawing the pair.
    pub const AXIS_ATTEMPTS: usize = 500;
}

/// Uniform unit quaternion from a normalized 4-D standard Gaussian.
pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = q.norm();
        if n > 1e-6 {
            return q.scale(1.0 / n);
        }
    }
}

/// Uniform unit vector from a normalized 3-D standard Gaussian.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Draws a random instance with boresight `y_b = +z`.
///
/// `q0` and `qd` are uniform on `S³`. The keep-out axis `t_o` is uniform on
/// `S²` and redrawn until both endpoints sit at least
/// [`sampling::ENDPOINT_MARGIN_DEG`] outside the cone while the slerp path
/// between them comes within [`sampling::APPROACH_MARGIN_DEG`] of it.
pub fn sample_problem<R: Rng + ?Sized>(
    rng: &mut R,
    n_steps: usize,
    tau: f64,
    theta_max: f64,
) -> Result<AttitudeProblem> {
    use sampling::*;
    let y_b = Vec3::z();
    let endpoint_min = theta_max + ENDPOINT_MARGIN_DEG.to_radians();
    let approach_max = theta_max + APPROACH_MARGIN_DEG.to_radians();
    loop {
        let q0 = random_unit_quaternion(rng);
        let qd = random_unit_quaternion(rng);
        let qd = if (q0.conjugate() * qd).w < 0.0 { -qd } else { qd };
        let delta = inv_retract_q(q0, qd)?;
        let path: Vec<Vec3> = (0..=PATH_SAMPLES)
            .map(|k| rotate(retract_q(q0, delta * (k as f64 / PATH_SAMPLES as f64)), y_b))
            .collect::<Result<_>>()?;
        let (first, last) = (path[0], path[PATH_SAMPLES]);
        for _ in 0..AXIS_ATTEMPTS {
            let t_o = random_unit_vector(rng);
            let angle = |y: &Vec3| y.dot(&t_o).clamp(-1.0, 1.0).acos();
            if angle(&first) < endpoint_min || angle(&last) < endpoint_min {
                continue;
            }
            let closest = path.iter().map(angle).fold(f64::INFINITY, f64::min);
            if closest <= approach_max {
                return AttitudeProblem::new(q0, qd, y_b, t_o, theta_max, n_steps, tau);
            }
        }
    }
}
