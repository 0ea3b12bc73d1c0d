//! Oracles shared by the integration tests. Nothing here calls into the code
//! path it checks: rotations come from the explicit matrix formula, the
//! derivative checks use central differences, and the sub-problem oracle is a
//! dense log-barrier method built from the stage data directly.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iscvx::attitude::{random_unit_quaternion, random_unit_vector, AttitudeProblem, Trajectory};
use iscvx::quat::{Quaternion, Vec3};
use iscvx::subproblem::{StageModel, TerminalModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Direction-cosine matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: Quaternion) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix from an axis-angle vector (Rodrigues).
pub fn rodrigues(v: Vec3) -> Matrix3<f64> {
    let t = v.norm();
    if t == 0.0 {
        return Matrix3::identity();
    }
    let k = v / t;
    let kx = k.cross_matrix();
    Matrix3::identity() + kx * t.sin() + kx * kx * (1.0 - t.cos())
}

pub fn random_vec3<R: Rng>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ) * scale
}

pub fn random_rotation<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    rotation_matrix(random_unit_quaternion(rng))
}

/// `(f(x + h) − f(x − h)) / 2h` for vector-valued `f` of a scalar.
pub fn central<F: Fn(f64) -> DVector<f64>>(f: F, h: f64) -> DVector<f64> {
    (f(h) - f(-h)) / (2.0 * h)
}

/// `‖a − b‖ / ‖b‖`, with the denominator floored at `floor`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

pub fn q4(q: Quaternion) -> DVector<f64> {
    DVector::from_column_slice(&[q.w, q.x, q.y, q.z])
}

pub fn v3(v: Vec3) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// A random problem whose target is at most about one radian from `q0`.
pub fn random_problem<R: Rng>(rng: &mut R, n_steps: usize, tau: f64, theta_deg: f64) -> AttitudeProblem {
    let q0 = random_unit_quaternion(rng);
    let qd = q0 * iscvx::quat::quat_exp(random_vec3(rng, 0.6));
    AttitudeProblem::new(
        q0,
        qd,
        Vec3::z(),
        random_unit_vector(rng),
        theta_deg.to_radians(),
        n_steps,
        tau,
    )
    .unwrap()
}

/// Rolls the exact dynamics forward from `prob.q0` under random rates.
pub fn feasible_trajectory<R: Rng>(rng: &mut R, prob: &AttitudeProblem, rate: f64) -> Trajectory {
    let controls: Vec<Vec3> = (0..prob.n_steps).map(|_| random_vec3(rng, rate)).collect();
    let mut states = vec![prob.q0];
    for w in &controls {
        let q = *states.last().unwrap();
        states.push(q * iscvx::quat::quat_exp(w * prob.tau));
    }
    Trajectory { states, controls }
}

/// States scattered around the target, controls random: dynamically
/// infeasible in general.
pub fn infeasible_trajectory<R: Rng>(rng: &mut R, prob: &AttitudeProblem, spread: f64) -> Trajectory {
    let states = (0..=prob.n_steps)
        .map(|_| prob.qd * iscvx::quat::quat_exp(random_vec3(rng, spread)))
        .collect();
    let controls = (0..prob.n_steps).map(|_| random_vec3(rng, 1.0)).collect();
    Trajectory { states, controls }
}

/// Dense log-barrier solution of the penalized convex sub-problem.
///
/// Variables per step: `ξ_i`, `w⁺_i`, `w⁻_i`, `s'_i`, `η_{i+1}`, then
/// `s'_N`. The trust region enters as `−log(r² − ‖ξ_i‖²)`. The equality rows
/// are eliminated: the states are rolled forward from the free variables.
pub struct BarrierOracle {
    pub objective: f64,
    pub xi: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    /// `w⁺ − w⁻`.
    pub w: Vec<DVector<f64>>,
    pub s_buf: Vec<f64>,
}

struct Dims {
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
}

impl Dims {
    fn width(&self) -> usize {
        self.m + 2 * self.p + 1 + self.n
    }
    fn xi(&self, i: usize) -> usize {
        i * self.width()
    }
    fn wp(&self, i: usize) -> usize {
        self.xi(i) + self.m
    }
    fn wn(&self, i: usize) -> usize {
        self.wp(i) + self.p
    }
    fn buf(&self, i: usize) -> usize {
        if i == self.horizon {
            self.horizon * self.width()
        } else {
            self.wn(i) + self.p
        }
    }
    fn eta(&self, i: usize) -> Option<usize> {
        (i >= 1).then(|| self.buf(i - 1) + 1)
    }
    fn total(&self) -> usize {
        self.horizon * self.width() + 1
    }
}

struct Barrier<'a> {
    stages: &'a [StageModel],
    terminal: &'a TerminalModel,
    radius: f64,
    lambdas: &'a [f64],
    d: Dims,
}

impl Barrier<'_> {
    fn seg(&self, x: &DVector<f64>, o: Option<usize>, len: usize) -> DVector<f64> {
        match o {
            Some(o) => x.rows(o, len).into_owned(),
            None => DVector::zeros(len),
        }
    }

    /// Original objective, its gradient and Hessian (dense).
    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let d = &self.d;
        let nv = d.total();
        let mut f = self.stages.iter().map(|s| s.cost).sum::<f64>() + self.terminal.cost;
        let mut g = DVector::zeros(nv);
        let mut h = DMatrix::zeros(nv, nv);
        let mut quad = |o: Option<usize>, grad: &DVector<f64>, hess: &DMatrix<f64>, f: &mut f64| {
            if let Some(o) = o {
                let z = x.rows(o, grad.len()).into_owned();
                *f += grad.dot(&z) + 0.5 * z.dot(&(hess * &z));
                let gz = grad + hess * &z;
                g.rows_mut(o, grad.len()).copy_from(&gz);
                h.view_mut((o, o), hess.shape()).copy_from(hess);
            }
        };
        for (i, st) in self.stages.iter().enumerate() {
            quad(d.eta(i), &st.grad_x, &st.hess_x, &mut f);
            quad(Some(d.xi(i)), &st.grad_u, &st.hess_u, &mut f);
        }
        quad(d.eta(d.horizon), &self.terminal.grad_x, &self.terminal.hess_x, &mut f);
        for i in 0..d.horizon {
            let lam = self.lambdas[i];
            for k in 0..d.p {
                for o in [d.wp(i) + k, d.wn(i) + k] {
                    f += lam * x[o];
                    g[o] += lam;
                }
            }
            f += lam * x[d.buf(i)];
            g[d.buf(i)] += lam;
        }
        let lam = self.lambdas[d.horizon];
        f += lam * x[d.buf(d.horizon)];
        g[d.buf(d.horizon)] += lam;
        (f, g, h)
    }

    /// Inequalities `c_k(x) > 0`: `(value, gradient, Hessian)` triplets.
    fn slacks(&self, x: &DVector<f64>) -> Vec<(f64, DVector<f64>, Option<DMatrix<f64>>)> {
        let d = &self.d;
        let nv = d.total();
        let mut out = Vec::new();
        let unit = |o: usize, s: f64| {
            let mut v = DVector::zeros(nv);
            v[o] = s;
            v
        };
        for i in 0..=d.horizon {
            let (s_val, s_row) = if i < d.horizon {
                (self.stages[i].s_val, &self.stages[i].s_row)
            } else {
                (self.terminal.s_val, &self.terminal.s_row)
            };
            // s'_i − s_i − S_i η_i − Q_i ξ_i > 0
            let mut gr = unit(d.buf(i), 1.0);
            let mut val = x[d.buf(i)] - s_val;
            if let Some(o) = d.eta(i) {
                val -= s_row.dot(&x.rows(o, d.n));
                for k in 0..d.n {
                    gr[o + k] -= s_row[k];
                }
            }
            if i < d.horizon {
                let q_row = &self.stages[i].q_row;
                val -= q_row.dot(&x.rows(d.xi(i), d.m));
                for k in 0..d.m {
                    gr[d.xi(i) + k] -= q_row[k];
                }
            }
            out.push((val, gr, None));
            out.push((x[d.buf(i)], unit(d.buf(i), 1.0), None));
        }
        for i in 0..d.horizon {
            for k in 0..d.p {
                for o in [d.wp(i) + k, d.wn(i) + k] {
                    out.push((x[o], unit(o, 1.0), None));
                }
            }
            let xi = x.rows(d.xi(i), d.m);
            let mut gr = DVector::zeros(nv);
            let mut hs = DMatrix::zeros(nv, nv);
            for k in 0..d.m {
                gr[d.xi(i) + k] = -2.0 * xi[k];
                hs[(d.xi(i) + k, d.xi(i) + k)] = -2.0;
            }
            out.push((self.radius * self.radius - xi.norm_squared(), gr, Some(hs)));
        }
        out
    }

    fn equality(&self) -> (DMatrix<f64>, DVector<f64>) {
        let d = &self.d;
        let mut a = DMatrix::zeros(d.horizon * d.n, d.total());
        let mut b = DVector::zeros(d.horizon * d.n);
        for (i, st) in self.stages.iter().enumerate() {
            let r = i * d.n;
            // η_{i+1} − A η_i − B ξ_i − E (w⁺ − w⁻) = d_i
            let o = d.eta(i + 1).unwrap();
            for k in 0..d.n {
                a[(r + k, o + k)] = 1.0;
            }
            if let Some(o) = d.eta(i) {
                a.view_mut((r, o), (d.n, d.n)).copy_from(&(-&st.a));
            }
            a.view_mut((r, d.xi(i)), (d.n, d.m)).copy_from(&(-&st.b));
            a.view_mut((r, d.wp(i)), (d.n, d.p)).copy_from(&(-&st.e));
            a.view_mut((r, d.wn(i)), (d.n, d.p)).copy_from(&st.e);
            b.rows_mut(r, d.n).copy_from(&st.defect);
        }
        (a, b)
    }

    /// Strictly feasible start: `ξ = 0`, `w⁺ = w⁻ = 1`, states rolled
    /// forward, buffers one above their keep-out rows.
    fn start(&self) -> DVector<f64> {
        let d = &self.d;
        let mut x = DVector::zeros(d.total());
        for i in 0..d.horizon {
            for k in 0..d.p {
                x[d.wp(i) + k] = 1.0;
                x[d.wn(i) + k] = 1.0;
            }
        }
        self.roll(&mut x, true);
        for i in 0..=d.horizon {
            let (s_val, s_row) = if i < d.horizon {
                (self.stages[i].s_val, &self.stages[i].s_row)
            } else {
                (self.terminal.s_val, &self.terminal.s_row)
            };
            let row = s_val + d.eta(i).map_or(0.0, |o| s_row.dot(&x.rows(o, d.n)));
            x[d.buf(i)] = row.max(0.0) + 1.0;
        }
        x
    }

    fn phi(&self, x: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.objective(x).0;
        for (c, _, _) in self.slacks(x) {
            if c <= 0.0 {
                return None;
            }
            v -= c.ln();
        }
        Some(v)
    }

    /// Fills the `η` blocks of `x` from the dynamics rows.
    fn roll(&self, x: &mut DVector<f64>, with_defect: bool) {
        let d = &self.d;
        for (i, st) in self.stages.iter().enumerate() {
            let w = x.rows(d.wp(i), d.p) - x.rows(d.wn(i), d.p);
            let mut next = &st.b * x.rows(d.xi(i), d.m) + &st.e * w;
            if let Some(o) = d.eta(i) {
                next += &st.a * x.rows(o, d.n);
            }
            if with_defect {
                next += &st.defect;
            }
            x.rows_mut(d.eta(i + 1).unwrap(), d.n).copy_from(&next);
        }
    }

    /// Newton's method on the barrier in the free coordinates; the states
    /// follow through [`Barrier::roll`], so every iterate satisfies the
    /// dynamics rows to round-off.
    fn solve(&self) -> DVector<f64> {
        let d = &self.d;
        let nv = d.total();
        let is_eta = |k: usize| (1..=d.horizon).any(|i| {
            let o = d.eta(i).unwrap();
            (o..o + d.n).contains(&k)
        });
        let free: Vec<usize> = (0..nv).filter(|&k| !is_eta(k)).collect();
        let mut z = DMatrix::zeros(nv, free.len());
        for (c, &k) in free.iter().enumerate() {
            let mut col = DVector::zeros(nv);
            col[k] = 1.0;
            self.roll(&mut col, false);
            z.set_column(c, &col);
        }
        let mut x = self.start();
        let m = self.slacks(&x).len() as f64;
        let mut t = 1.0;
        loop {
            for _ in 0..200 {
                let (_, g0, h0) = self.objective(&x);
                let mut g = g0 * t;
                let mut h = h0 * t;
                for (c, gc, hc) in self.slacks(&x) {
                    g -= &gc / c;
                    h += &gc * gc.transpose() / (c * c);
                    if let Some(hc) = hc {
                        h -= hc / c;
                    }
                }
                let gy = z.transpose() * &g;
                let hy = z.transpose() * &h * &z;
                let dy = hy.cholesky().expect("barrier Hessian is positive definite").solve(&(-&gy));
                let decrement = -gy.dot(&dy);
                if decrement / 2.0 < 1e-12 {
                    break;
                }
                let base = self.phi(&x, t).unwrap();
                let mut step = 1.0;
                loop {
                    let mut trial = x.clone();
                    for (c, &k) in free.iter().enumerate() {
                        trial[k] += step * dy[c];
                    }
                    self.roll(&mut trial, true);
                    if let Some(v) = self.phi(&trial, t) {
                        if v <= base - 0.25 * step * decrement {
                            x = trial;
                            break;
                        }
                    }
                    step *= 0.5;
                    if step < 1e-14 {
                        return x;
                    }
                }
            }
            if m / t < 1e-11 {
                return x;
            }
            t *= 8.0;
        }
    }
}

pub fn barrier_oracle(
    stages: &[StageModel],
    terminal: &TerminalModel,
    radius: f64,
    lambdas: &[f64],
) -> BarrierOracle {
    let d = Dims {
        n: terminal.grad_x.len(),
        m: stages[0].b.ncols(),
        p: stages[0].e.ncols(),
        horizon: stages.len(),
    };
    let b = Barrier {
        stages,
        terminal,
        radius,
        lambdas,
        d,
    };
    let x = b.solve();
    let objective = b.objective(&x).0;
    let d = &b.d;
    let xi = (0..d.horizon).map(|i| x.rows(d.xi(i), d.m).into_owned()).collect();
    let eta = (0..=d.horizon).map(|i| b.seg(&x, d.eta(i), d.n)).collect();
    let w = (0..d.horizon)
        .map(|i| x.rows(d.wp(i), d.p) - x.rows(d.wn(i), d.p))
        .collect();
    let s_buf = (0..=d.horizon).map(|i| x[d.buf(i)]).collect();
    BarrierOracle {
        objective,
        xi,
        eta,
        w,
        s_buf,
    }
}

/// Objective (constant included) and equality rows of the stacked program,
/// built from the stage data with the barrier oracle's variable layout.
pub fn dense_model(
    stages: &[StageModel],
    terminal: &TerminalModel,
    radius: f64,
    lambdas: &[f64],
    x: &DVector<f64>,
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let b = Barrier {
        stages,
        terminal,
        radius,
        lambdas,
        d: Dims {
            n: terminal.grad_x.len(),
            m: stages[0].b.ncols(),
            p: stages[0].e.ncols(),
            horizon: stages.len(),
        },
    };
    let (a, rhs) = b.equality();
    (b.objective(x).0, a, rhs)
}

/// Linearization of a random reference for a random short problem. With
/// `infeasible` the reference states are scattered so every defect is
/// nonzero; the keep-out axis is aimed near the boresight at state 1 on odd
/// seeds so that its row starts violated.
pub fn random_linearization(seed: u64, n_steps: usize, infeasible: bool) -> (AttitudeProblem, iscvx::linearize::Linearization) {
    let mut r = rng(seed);
    let mut prob = random_problem(&mut r, n_steps, 0.1, 20.0);
    let traj = if infeasible {
        infeasible_trajectory(&mut r, &prob, 0.6)
    } else {
        feasible_trajectory(&mut r, &prob, 1.5)
    };
    if seed % 2 == 1 {
        let y = iscvx::quat::rotate(traj.states[1], prob.y_b).unwrap();
        prob.t_o = (y + random_vec3(&mut r, 0.2)).normalize();
    }
    let lin = iscvx::linearize::linearize_trajectory(&traj, &prob).unwrap();
    (prob, lin)
}
