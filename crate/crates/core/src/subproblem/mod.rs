//! The convex local sub-problem solved at every outer iteration.
//!
//! Variables per step `i < N` are the control perturbation `ξ_i`, the split
//! virtual control `w_i = w_i⁺ − w_i⁻` and the virtual buffer `s'_i`; the
//! state perturbations `η_1..η_N` follow from
//!
//! ```text
//! η_{i+1} = d_i + Ã_i η_i + B̃_i ξ_i + E_i w_i,      η_0 = 0
//! s_i + S_i η_i + Q_i ξ_i ≤ s'_i,  s'_i ≥ 0,  ‖ξ_i‖ ≤ r
//! ```
//!
//! with one more buffer for the keep-out row of `η_N`. The objective is the
//! quadratic cost expansion plus `Σ λ_i (‖w_i‖₁ + s'_i)`.
//!
//! The stage data are dimension-agnostic so that the intrinsic (3-D frame
//! coordinates, `E_i = I`) and ambient (4-D quaternion, `E_i = L(x_{i+1})`)
//! formulations share one assembler and one solver.

pub mod ipm;
pub mod ldl;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linearize::{LinearizedStep, Linearization, TerminalStep};
use ipm::{Cone, ConicQp, IpmSettings, IpmStatus, SparseMatrix};

/// Negative Hessian eigenvalues above this are accepted as round-off.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StageModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Maps the penalized virtual-control coordinates into the dynamics row.
    pub e: DMatrix<f64>,
    pub defect: DVector<f64>,
    pub s_row: DVector<f64>,
    pub q_row: DVector<f64>,
    pub s_val: f64,
    pub grad_x: DVector<f64>,
    pub hess_x: DMatrix<f64>,
    pub grad_u: DVector<f64>,
    pub hess_u: DMatrix<f64>,
    /// Stage cost at the reference.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalModel {
    pub grad_x: DVector<f64>,
    pub hess_x: DMatrix<f64>,
    pub s_row: DVector<f64>,
    pub s_val: f64,
    pub cost: f64,
}

fn dmat3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl From<&LinearizedStep> for StageModel {
    fn from(s: &LinearizedStep) -> Self {
        StageModel {
            a: dmat3(&s.a),
            b: dmat3(&s.b),
            e: DMatrix::identity(3, 3),
            defect: dvec(s.defect.as_slice()),
            s_row: dvec(s.s_row.as_slice()),
            q_row: dvec(s.q_row.as_slice()),
            s_val: s.s_val,
            grad_x: dvec(s.grad_q.as_slice()),
            hess_x: dmat3(&s.hess_q),
            grad_u: dvec(s.grad_w.as_slice()),
            hess_u: dmat3(&s.hess_w),
            cost: s.stage_cost,
        }
    }
}

impl From<&TerminalStep> for TerminalModel {
    fn from(t: &TerminalStep) -> Self {
        TerminalModel {
            grad_x: dvec(t.grad_q.as_slice()),
            hess_x: dmat3(&t.hess_q),
            s_row: dvec(t.s_row.as_slice()),
            s_val: t.s_val,
            cost: t.cost,
        }
    }
}

/// Column offsets of each variable block in the stacked decision vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
}

impl Layout {
    fn stage_width(&self) -> usize {
        self.m + 2 * self.p + 1 + self.n
    }
    fn xi(&self, i: usize) -> usize {
        i * self.stage_width()
    }
    fn w_pos(&self, i: usize) -> usize {
        self.xi(i) + self.m
    }
    fn w_neg(&self, i: usize) -> usize {
        self.w_pos(i) + self.p
    }
    fn buffer(&self, i: usize) -> usize {
        if i == self.horizon {
            self.horizon * self.stage_width()
        } else {
            self.w_neg(i) + self.p
        }
    }
    /// Offset of `η_i` for `i ≥ 1`.
    fn eta(&self, i: usize) -> usize {
        debug_assert!(i >= 1);
        self.buffer(i - 1) + 1
    }
    fn total(&self) -> usize {
        self.horizon * self.stage_width() + 1
    }
}

#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub stages: Vec<StageModel>,
    pub terminal: TerminalModel,
    pub radius: f64,
    /// `λ_0..λ_N`; `λ_N` weights the buffer of the final state.
    pub lambdas: Vec<f64>,
    /// Sum of the reference stage and terminal costs.
    pub constant: f64,
    layout: Layout,
    qp: ConicQp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub reduced_accuracy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    /// `η_0..η_N` with `η_0 = 0`.
    pub eta: Vec<DVector<f64>>,
    pub xi: Vec<DVector<f64>>,
    /// Virtual controls `E_i w_i` as they enter the dynamics rows.
    pub v: Vec<DVector<f64>>,
    /// Penalized coordinates `w_i`.
    pub w: Vec<DVector<f64>>,
    /// `s'_0..s'_N`.
    pub s_buf: Vec<f64>,
    pub l_value: f64,
    pub stats: Option<SolverStats>,
}

/// Largest violation of each constraint family at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Violations {
    pub dynamics: f64,
    pub keepout: f64,
    pub trust_region: f64,
    pub buffer_sign: f64,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.dynamics
            .max(self.keepout)
            .max(self.trust_region)
            .max(self.buffer_sign)
    }
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((h + h.transpose()) * 0.5)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn check_shape(m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            got: m.nrows(),
        });
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch {
            expected: cols,
            got: m.ncols(),
        });
    }
    Ok(())
}

fn check_len(v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::DimensionMismatch {
            expected: len,
            got: v.len(),
        });
    }
    Ok(())
}

impl ConvexSubproblem {
    pub fn assemble(
        stages: Vec<StageModel>,
        terminal: TerminalModel,
        radius: f64,
        lambdas: &[f64],
    ) -> Result<Self> {
        let horizon = stages.len();
        if horizon == 0 {
            return Err(Error::InvalidProblem("sub-problem needs at least one step".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidParams(format!("trust radius {radius} must be positive")));
        }
        if lambdas.len() != horizon + 1 {
            return Err(Error::DimensionMismatch {
                expected: horizon + 1,
                got: lambdas.len(),
            });
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l > 0.0)) {
            return Err(Error::InvalidParams(format!("penalty weight {l} must be positive")));
        }
        let n = terminal.grad_x.len();
        let m = stages[0].b.ncols();
        let p = stages[0].e.ncols();
        for (i, st) in stages.iter().enumerate() {
            (|| {
                check_shape(&st.a, n, n)?;
                check_shape(&st.b, n, m)?;
                check_shape(&st.e, n, p)?;
                check_shape(&st.hess_x, n, n)?;
                check_shape(&st.hess_u, m, m)?;
                check_len(&st.defect, n)?;
                check_len(&st.s_row, n)?;
                check_len(&st.grad_x, n)?;
                check_len(&st.q_row, m)?;
                check_len(&st.grad_u, m)
            })()
            .map_err(Error::at_step(i))?;
        }
        check_shape(&terminal.hess_x, n, n).map_err(Error::at_step(horizon))?;
        check_len(&terminal.s_row, n).map_err(Error::at_step(horizon))?;

        let mut block = 0;
        for st in &stages {
            for h in [&st.hess_x, &st.hess_u] {
                let e = min_eigenvalue(h);
                if e < -PSD_TOL {
                    return Err(Error::NonConvexHessian {
                        block,
                        min_eigenvalue: e,
                    });
                }
                block += 1;
            }
        }
        let e = min_eigenvalue(&terminal.hess_x);
        if e < -PSD_TOL {
            return Err(Error::NonConvexHessian {
                block,
                min_eigenvalue: e,
            });
        }

        let layout = Layout { n, m, p, horizon };
        let qp = build_conic(&stages, &terminal, &layout, radius, lambdas);
        let constant = stages.iter().map(|s| s.cost).sum::<f64>() + terminal.cost;
        Ok(ConvexSubproblem {
            stages,
            terminal,
            radius,
            lambdas: lambdas.to_vec(),
            constant,
            layout,
            qp,
        })
    }

    /// Intrinsic sub-problem with uniform penalty weight.
    pub fn from_linearization(lin: &Linearization, radius: f64, lambda: f64) -> Result<Self> {
        let stages = lin.steps.iter().map(StageModel::from).collect();
        let lambdas = vec![lambda; lin.steps.len() + 1];
        Self::assemble(stages, TerminalModel::from(&lin.terminal), radius, &lambdas)
    }

    pub fn horizon(&self) -> usize {
        self.layout.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.layout.n
    }

    pub fn control_dim(&self) -> usize {
        self.layout.m
    }

    pub fn penalty_dim(&self) -> usize {
        self.layout.p
    }

    /// Number of scalar decision variables in the conic program.
    pub fn num_variables(&self) -> usize {
        self.layout.total()
    }

    /// The stacked conic program handed to the interior-point solver.
    pub fn conic(&self) -> &ConicQp {
        &self.qp
    }

    pub fn solve(&self) -> Result<SubproblemSolution> {
        self.solve_with(&IpmSettings::default())
    }

    pub fn solve_with(&self, settings: &IpmSettings) -> Result<SubproblemSolution> {
        let sol = ipm::solve(&self.qp, settings)?;
        if sol.status == IpmStatus::ReducedAccuracy {
            log::debug!(
                "sub-problem solved to reduced accuracy (residuals {:.2e}/{:.2e}, gap {:.2e})",
                sol.primal_residual,
                sol.dual_residual,
                sol.gap
            );
        }
        let mut out = self.unpack(&sol.x);
        out.stats = Some(SolverStats {
            iterations: sol.iterations,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
            reduced_accuracy: sol.status == IpmStatus::ReducedAccuracy,
        });
        Ok(out)
    }

    fn unpack(&self, x: &[f64]) -> SubproblemSolution {
        let l = &self.layout;
        let seg = |o: usize, len: usize| dvec(&x[o..o + len]);
        let mut eta = vec![DVector::zeros(l.n)];
        let mut xi = Vec::with_capacity(l.horizon);
        let mut w = Vec::with_capacity(l.horizon);
        let mut s_buf = Vec::with_capacity(l.horizon + 1);
        for i in 0..l.horizon {
            xi.push(seg(l.xi(i), l.m));
            w.push(seg(l.w_pos(i), l.p) - seg(l.w_neg(i), l.p));
            s_buf.push(x[l.buffer(i)]);
            eta.push(seg(l.eta(i + 1), l.n));
        }
        s_buf.push(x[l.buffer(l.horizon)]);
        self.point(eta, xi, w, s_buf)
    }

    /// Builds a candidate point and evaluates `L` there.
    pub fn point(
        &self,
        eta: Vec<DVector<f64>>,
        xi: Vec<DVector<f64>>,
        w: Vec<DVector<f64>>,
        s_buf: Vec<f64>,
    ) -> SubproblemSolution {
        let v = self.stages.iter().zip(&w).map(|(st, wi)| &st.e * wi).collect();
        let mut sol = SubproblemSolution {
            eta,
            xi,
            v,
            w,
            s_buf,
            l_value: 0.0,
            stats: None,
        };
        sol.l_value = self.objective(&sol);
        sol
    }

    /// `L` at a point: constant + quadratic expansion + penalties.
    pub fn objective(&self, sol: &SubproblemSolution) -> f64 {
        let mut total = self.constant;
        let quad = |g: &DVector<f64>, h: &DMatrix<f64>, d: &DVector<f64>| g.dot(d) + 0.5 * d.dot(&(h * d));
        for (i, st) in self.stages.iter().enumerate() {
            total += quad(&st.grad_x, &st.hess_x, &sol.eta[i]);
            total += quad(&st.grad_u, &st.hess_u, &sol.xi[i]);
            total += self.lambdas[i] * (sol.w[i].lp_norm(1) + sol.s_buf[i]);
        }
        let n = self.horizon();
        total += quad(&self.terminal.grad_x, &self.terminal.hess_x, &sol.eta[n]);
        total + self.lambdas[n] * sol.s_buf[n]
    }

    pub fn violations(&self, sol: &SubproblemSolution) -> Violations {
        let mut out = Violations::default();
        if sol.eta[0].amax() > 0.0 {
            out.dynamics = sol.eta[0].amax();
        }
        for (i, st) in self.stages.iter().enumerate() {
            let pred = &st.defect + &st.a * &sol.eta[i] + &st.b * &sol.xi[i] + &st.e * &sol.w[i];
            out.dynamics = out.dynamics.max((&sol.eta[i + 1] - pred).amax());
            let g = st.s_val + st.s_row.dot(&sol.eta[i]) + st.q_row.dot(&sol.xi[i]) - sol.s_buf[i];
            out.keepout = out.keepout.max(g);
            out.trust_region = out.trust_region.max(sol.xi[i].norm() - self.radius);
        }
        let n = self.horizon();
        let g = self.terminal.s_val + self.terminal.s_row.dot(&sol.eta[n]) - sol.s_buf[n];
        out.keepout = out.keepout.max(g);
        for s in &sol.s_buf {
            out.buffer_sign = out.buffer_sign.max(-s);
        }
        out
    }

    /// The point with `η = 0`, `ξ = 0` whose virtual controls absorb every
    /// defect and whose buffers absorb every violated keep-out row. It is
    /// feasible for any data and any radius, and its objective is the
    /// penalized cost of the reference.
    pub fn zero_perturbation_point(&self) -> Result<SubproblemSolution> {
        let l = &self.layout;
        let mut w = Vec::with_capacity(l.horizon);
        for (i, st) in self.stages.iter().enumerate() {
            let wi = st
                .e
                .clone()
                .lu()
                .solve(&(-&st.defect))
                .ok_or_else(|| Error::at_step(i)(Error::InvalidProblem("singular virtual-control map".into())))?;
            w.push(wi);
        }
        let mut s_buf: Vec<f64> = self.stages.iter().map(|s| s.s_val.max(0.0)).collect();
        s_buf.push(self.terminal.s_val.max(0.0));
        Ok(self.point(
            vec![DVector::zeros(l.n); l.horizon + 1],
            vec![DVector::zeros(l.m); l.horizon],
            w,
            s_buf,
        ))
    }

    /// Dense matrices and row types for offline inspection.
    pub fn debug_json(&self) -> serde_json::Value {
        let qp = &self.qp;
        let cones: Vec<serde_json::Value> = qp
            .cones
            .iter()
            .map(|c| match c {
                Cone::Nonnegative(d) => serde_json::json!({"type": "nonnegative", "dim": d}),
                Cone::SecondOrder(d) => serde_json::json!({"type": "second_order", "dim": d}),
            })
            .collect();
        serde_json::json!({
            "horizon": self.horizon(),
            "state_dim": self.layout.n,
            "control_dim": self.layout.m,
            "penalty_dim": self.layout.p,
            "radius": self.radius,
            "lambdas": self.lambdas,
            "constant": self.constant,
            "P": qp.p.to_dense(),
            "c": qp.c,
            "A_eq": qp.a.to_dense(),
            "b_eq": qp.b,
            "G": qp.g.to_dense(),
            "h": qp.h,
            "cones": cones,
        })
    }
}

fn build_conic(
    stages: &[StageModel],
    terminal: &TerminalModel,
    l: &Layout,
    radius: f64,
    lambdas: &[f64],
) -> ConicQp {
    let nv = l.total();
    let mut p = SparseMatrix::new(nv, nv);
    let mut c = vec![0.0; nv];
    let add_quad = |p: &mut SparseMatrix, c: &mut [f64], off: usize, g: &DVector<f64>, h: &DMatrix<f64>| {
        for r in 0..g.len() {
            c[off + r] += g[r];
            for k in 0..g.len() {
                p.add(off + r, off + k, 0.5 * (h[(r, k)] + h[(k, r)]));
            }
        }
    };
    for (i, st) in stages.iter().enumerate() {
        add_quad(&mut p, &mut c, l.xi(i), &st.grad_u, &st.hess_u);
        if i >= 1 {
            add_quad(&mut p, &mut c, l.eta(i), &st.grad_x, &st.hess_x);
        }
        for k in 0..l.p {
            c[l.w_pos(i) + k] = lambdas[i];
            c[l.w_neg(i) + k] = lambdas[i];
        }
        c[l.buffer(i)] = lambdas[i];
    }
    add_quad(&mut p, &mut c, l.eta(l.horizon), &terminal.grad_x, &terminal.hess_x);
    c[l.buffer(l.horizon)] = lambdas[l.horizon];

    // η_{i+1} − Ã η_i − B̃ ξ_i − E(w⁺ − w⁻) = d_i
    let mut a = SparseMatrix::new(l.horizon * l.n, nv);
    let mut b = vec![0.0; l.horizon * l.n];
    for (i, st) in stages.iter().enumerate() {
        for r in 0..l.n {
            let row = i * l.n + r;
            b[row] = st.defect[r];
            a.add(row, l.eta(i + 1) + r, 1.0);
            if i >= 1 {
                for k in 0..l.n {
                    a.add(row, l.eta(i) + k, -st.a[(r, k)]);
                }
            }
            for k in 0..l.m {
                a.add(row, l.xi(i) + k, -st.b[(r, k)]);
            }
            for k in 0..l.p {
                a.add(row, l.w_pos(i) + k, -st.e[(r, k)]);
                a.add(row, l.w_neg(i) + k, st.e[(r, k)]);
            }
        }
    }

    // Nonnegative block: keep-out rows, then w± ≥ 0 and s' ≥ 0.
    let n_keepout = l.horizon + 1;
    let n_sign = l.horizon * (2 * l.p + 1) + 1;
    let n_lin = n_keepout + n_sign;
    let n_soc = l.horizon * (l.m + 1);
    let mut g = SparseMatrix::new(n_lin + n_soc, nv);
    let mut h = vec![0.0; n_lin + n_soc];
    for (i, st) in stages.iter().enumerate() {
        h[i] = -st.s_val;
        if i >= 1 {
            for k in 0..l.n {
                g.add(i, l.eta(i) + k, st.s_row[k]);
            }
        }
        for k in 0..l.m {
            g.add(i, l.xi(i) + k, st.q_row[k]);
        }
        g.add(i, l.buffer(i), -1.0);
    }
    h[l.horizon] = -terminal.s_val;
    for k in 0..l.n {
        g.add(l.horizon, l.eta(l.horizon) + k, terminal.s_row[k]);
    }
    g.add(l.horizon, l.buffer(l.horizon), -1.0);
    let mut row = n_keepout;
    for i in 0..l.horizon {
        for k in 0..l.p {
            g.add(row, l.w_pos(i) + k, -1.0);
            g.add(row + 1, l.w_neg(i) + k, -1.0);
            row += 2;
        }
        g.add(row, l.buffer(i), -1.0);
        row += 1;
    }
    g.add(row, l.buffer(l.horizon), -1.0);
    row += 1;
    debug_assert_eq!(row, n_lin);

    // (r, ξ_i) ∈ second-order cone
    let mut cones = vec![Cone::Nonnegative(n_lin)];
    for i in 0..l.horizon {
        h[row] = radius;
        for k in 0..l.m {
            g.add(row + 1 + k, l.xi(i) + k, -1.0);
        }
        row += l.m + 1;
        cones.push(Cone::SecondOrder(l.m + 1));
    }

    ConicQp {
        p,
        c,
        a,
        b,
        g,
        h,
        cones,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zero_stage(s_val: f64) -> StageModel {
        StageModel {
            a: DMatrix::identity(3, 3),
            b: DMatrix::identity(3, 3) * 0.1,
            e: DMatrix::identity(3, 3),
            defect: DVector::zeros(3),
            s_row: DVector::zeros(3),
            q_row: DVector::zeros(3),
            s_val,
            grad_x: DVector::zeros(3),
            hess_x: DMatrix::identity(3, 3),
            grad_u: DVector::zeros(3),
            hess_u: DMatrix::identity(3, 3),
            cost: 0.25,
        }
    }

    fn zero_terminal() -> TerminalModel {
        TerminalModel {
            grad_x: DVector::zeros(3),
            hess_x: DMatrix::identity(3, 3),
            s_row: DVector::zeros(3),
            s_val: -0.5,
            cost: 0.5,
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let sp = ConvexSubproblem::assemble(vec![zero_stage(-0.3); 3], zero_terminal(), 1.0, &[100.0; 4]).unwrap();
        let sol = sp.solve().unwrap();
        assert_relative_eq!(sol.l_value, 1.25, epsilon = 1e-7);
        for x in sol.xi.iter().chain(&sol.eta).chain(&sol.w) {
            assert!(x.amax() < 1e-7);
        }
        assert!(sol.s_buf.iter().all(|s| s.abs() < 1e-7));
    }

    #[test]
    fn single_step_ball_clip() {
        // only the control cost: ξ = −g clipped to the ball
        for (g, r) in [([0.3, -0.1, 0.2], 1.0), ([3.0, 4.0, 0.0], 2.0), ([0.0, 0.0, -1.0], 0.25)] {
            let mut st = zero_stage(-1.0);
            st.b = DMatrix::zeros(3, 3);
            st.grad_u = dvec(&g);
            let sp = ConvexSubproblem::assemble(vec![st], zero_terminal(), r, &[100.0; 2]).unwrap();
            let sol = sp.solve().unwrap();
            let gv = dvec(&g);
            let expected = -&gv * (r / gv.norm()).min(1.0);
            assert_relative_eq!(sol.xi[0], expected, epsilon = 1e-7);
        }
    }

    #[test]
    fn zero_perturbation_point_is_feasible_and_matches_penalized_cost() {
        let mut st = zero_stage(0.2);
        st.defect = dvec(&[0.1, -0.2, 0.05]);
        let mut st2 = zero_stage(-0.1);
        st2.defect = dvec(&[0.0, 0.3, 0.0]);
        let sp = ConvexSubproblem::assemble(vec![st, st2], zero_terminal(), 1e-6, &[10.0; 3]).unwrap();
        let z = sp.zero_perturbation_point().unwrap();
        assert!(sp.violations(&z).max() < 1e-15);
        // constant 1.0 + λ(0.35 + 0.3 + 0.2)
        assert_relative_eq!(z.l_value, 1.0 + 10.0 * 0.85, epsilon = 1e-12);
        let sol = sp.solve().unwrap();
        assert!(sol.l_value <= z.l_value + 1e-7);
        assert!(sp.violations(&sol).max() < 1e-7);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let mut st = zero_stage(-1.0);
        st.hess_u[(1, 1)] = -0.1;
        let err = ConvexSubproblem::assemble(vec![st], zero_terminal(), 1.0, &[1.0; 2]).unwrap_err();
        assert!(matches!(err, Error::NonConvexHessian { block: 1, .. }));
    }

    #[test]
    fn rejects_bad_radius_and_weights() {
        assert!(ConvexSubproblem::assemble(vec![zero_stage(0.0)], zero_terminal(), 0.0, &[1.0; 2]).is_err());
        assert!(ConvexSubproblem::assemble(vec![zero_stage(0.0)], zero_terminal(), 1.0, &[1.0]).is_err());
        assert!(ConvexSubproblem::assemble(vec![zero_stage(0.0)], zero_terminal(), 1.0, &[1.0, -1.0]).is_err());
    }

    #[test]
    fn debug_dump_has_dense_blocks() {
        let sp = ConvexSubproblem::assemble(vec![zero_stage(-1.0); 2], zero_terminal(), 1.0, &[1.0; 3]).unwrap();
        let j = sp.debug_json();
        let nv = sp.num_variables();
        assert_eq!(j["P"].as_array().unwrap().len(), nv);
        assert_eq!(j["A_eq"].as_array().unwrap().len(), 6);
        assert_eq!(j["cones"][1]["type"], "second_order");
    }
}
