//! Primal-dual interior-point method for convex conic quadratic programs
//!
//! ```text
//! minimize    ½ xᵀPx + cᵀx
//! subject to  Ax = b
//!             Gx + s = h,   s ∈ K
//! ```
//!
//! where `K` is a product of nonnegative orthants and second-order cones
//! `{(t, u) : ‖u‖ ≤ t}`. Search directions use Nesterov–Todd scaling and
//! Mehrotra's predictor–corrector; each Newton system is reduced to
//!
//! ```text
//! [ P + GᵀW⁻²G   Aᵀ ] [Δx]
//! [ A            0  ] [Δy]
//! ```
//!
//! and solved with a regularized envelope `LDLᵀ` plus iterative refinement.

use serde::Serialize;
use thiserror::Error;

use super::ldl::{reverse_cuthill_mckee, Skyline};

/// Row-major sparse matrix; duplicate entries are summed on insertion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseMatrix {
    pub nrows: usize,
    pub ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        SparseMatrix {
            nrows,
            ncols,
            rows: vec![Vec::new(); nrows],
        }
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        assert!(r < self.nrows && c < self.ncols, "({r}, {c}) out of bounds");
        if v == 0.0 {
            return;
        }
        let row = &mut self.rows[r];
        match row.iter_mut().find(|(j, _)| *j == c) {
            Some(e) => e.1 += v,
            None => row.push((c, v)),
        }
    }

    pub fn row(&self, r: usize) -> &[(usize, f64)] {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.rows[r].iter().find(|(j, _)| *j == c).map_or(0.0, |e| e.1)
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    /// `y += alpha · M x`.
    pub fn mul_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (yr, row) in y.iter_mut().zip(&self.rows) {
            let dot: f64 = row.iter().map(|&(c, v)| v * x[c]).sum();
            *yr += alpha * dot;
        }
    }

    /// `y += alpha · Mᵀ x`.
    pub fn mul_t_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (xr, row) in x.iter().zip(&self.rows) {
            if *xr != 0.0 {
                for &(c, v) in row {
                    y[c] += alpha * v * xr;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, c, v) in self.entries() {
            d[r][c] = v;
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Cone {
    Nonnegative(usize),
    SecondOrder(usize),
}

impl Cone {
    pub fn dim(self) -> usize {
        match self {
            Cone::Nonnegative(d) | Cone::SecondOrder(d) => d,
        }
    }
}

/// `P` must be symmetric with both triangles stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConicQp {
    pub p: SparseMatrix,
    pub c: Vec<f64>,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub g: SparseMatrix,
    pub h: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicQp {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.p.mul_add(1.0, x, &mut px);
        dot(x, &px) * 0.5 + dot(&self.c, x)
    }

    fn check(&self) -> Result<(), IpmError> {
        let n = self.c.len();
        let m: usize = self.cones.iter().map(|k| k.dim()).sum();
        let ok = self.p.nrows == n
            && self.p.ncols == n
            && self.a.ncols == n
            && self.a.nrows == self.b.len()
            && self.g.ncols == n
            && self.g.nrows == self.h.len()
            && self.g.nrows == m
            && self.cones.iter().all(|k| match *k {
                Cone::Nonnegative(d) => d > 0,
                Cone::SecondOrder(d) => d >= 2,
            });
        if ok {
            Ok(())
        } else {
            Err(IpmError::InvalidData("inconsistent problem dimensions".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSettings {
    pub max_iter: usize,
    /// Target scaled primal/dual residual.
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    /// Accepted when the iteration cap is hit or progress stalls.
    pub reduced_tol_feas: f64,
    pub reduced_tol_gap_rel: f64,
    pub static_reg: f64,
    pub dyn_reg_eps: f64,
    pub dyn_reg_delta: f64,
    pub refine_steps: usize,
    pub step_fraction: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            max_iter: 200,
            tol_feas: 1e-9,
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-10,
            reduced_tol_feas: 1e-7,
            reduced_tol_gap_rel: 1e-6,
            static_reg: 1e-9,
            dyn_reg_eps: 1e-13,
            dyn_reg_delta: 1e-7,
            refine_steps: 6,
            step_fraction: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IpmStatus {
    Solved,
    /// Met only the reduced tolerances.
    ReducedAccuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpmSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IpmError {
    #[error("invalid conic program: {0}")]
    InvalidData(String),
    #[error(
        "no convergence after {iterations} iterations \
         (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e}, gap {gap:.3e})"
    )]
    NotConverged {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
    },
    #[error("numerical breakdown at iteration {iteration}")]
    Numerical { iteration: usize },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cone bookkeeping: block offsets and the Jordan-algebra operations.
struct Cones {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
}

impl Cones {
    fn new(cones: &[Cone]) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut o = 0;
        for k in cones {
            offsets.push(o);
            o += k.dim();
        }
        Cones {
            cones: cones.to_vec(),
            offsets,
        }
    }

    fn blocks(&self) -> impl Iterator<Item = (Cone, std::ops::Range<usize>)> + '_ {
        self.cones
            .iter()
            .zip(&self.offsets)
            .map(|(&k, &o)| (k, o..o + k.dim()))
    }

    fn degree(&self) -> f64 {
        self.cones
            .iter()
            .map(|k| match k {
                Cone::Nonnegative(d) => *d,
                Cone::SecondOrder(_) => 1,
            })
            .sum::<usize>() as f64
    }

    /// Smallest eigenvalue of `x` over all blocks.
    fn min_eig(&self, x: &[f64]) -> f64 {
        let mut m = f64::INFINITY;
        for (k, r) in self.blocks() {
            let v = &x[r];
            let e = match k {
                Cone::Nonnegative(_) => v.iter().copied().fold(f64::INFINITY, f64::min),
                Cone::SecondOrder(_) => v[0] - norm(&v[1..]),
            };
            m = m.min(e);
        }
        m
    }

    /// `x += alpha · e`.
    fn add_identity(&self, x: &mut [f64], alpha: f64) {
        for (k, r) in self.blocks() {
            match k {
                Cone::Nonnegative(_) => x[r].iter_mut().for_each(|v| *v += alpha),
                Cone::SecondOrder(_) => x[r.start] += alpha,
            }
        }
    }

    /// Largest `α ≥ 0` with `x + α·d` in the cone (∞ if unbounded).
    fn max_step(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut alpha = f64::INFINITY;
        for (k, r) in self.blocks() {
            let (xv, dv) = (&x[r.clone()], &d[r]);
            let a = match k {
                Cone::Nonnegative(_) => xv
                    .iter()
                    .zip(dv)
                    .filter(|(_, &di)| di < 0.0)
                    .map(|(&xi, &di)| -xi / di)
                    .fold(f64::INFINITY, f64::min),
                Cone::SecondOrder(_) => soc_max_step(xv, dv),
            };
            alpha = alpha.min(a);
        }
        alpha
    }

    /// Jordan product `u ∘ v`.
    fn circ(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        for (k, r) in self.blocks() {
            let (uu, vv) = (&u[r.clone()], &v[r.clone()]);
            let o = &mut out[r];
            match k {
                Cone::Nonnegative(_) => {
                    for i in 0..uu.len() {
                        o[i] = uu[i] * vv[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    o[0] = dot(uu, vv);
                    for i in 1..uu.len() {
                        o[i] = uu[0] * vv[i] + vv[0] * uu[i];
                    }
                }
            }
        }
    }

    /// Solves `lambda ∘ u = d` for `u`.
    fn circ_solve(&self, lambda: &[f64], d: &[f64], out: &mut [f64]) {
        for (k, r) in self.blocks() {
            let (l, dd) = (&lambda[r.clone()], &d[r.clone()]);
            let o = &mut out[r];
            match k {
                Cone::Nonnegative(_) => {
                    for i in 0..l.len() {
                        o[i] = dd[i] / l[i];
                    }
                }
                Cone::SecondOrder(_) => {
                    let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
                    let u0 = (l[0] * dd[0] - dot(&l[1..], &dd[1..])) / det;
                    o[0] = u0;
                    for i in 1..l.len() {
                        o[i] = (dd[i] - u0 * l[i]) / l[0];
                    }
                }
            }
        }
    }
}

/// Smallest positive root of `(x₀+αd₀)² − ‖x₁+αd₁‖²`, the exit point of
/// the ray from the interior point `x`.
fn soc_max_step(x: &[f64], d: &[f64]) -> f64 {
    let qa = d[0] * d[0] - dot(&d[1..], &d[1..]);
    let qb = 2.0 * (x[0] * d[0] - dot(&x[1..], &d[1..]));
    let qc = x[0] * x[0] - dot(&x[1..], &x[1..]);
    if qc <= 0.0 || x[0] <= 0.0 {
        return 0.0;
    }
    let scale = qb.abs().max(qa.abs()).max(qc);
    if qa.abs() <= 1e-15 * scale {
        return if qb < 0.0 { -qc / qb } else { f64::INFINITY };
    }
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return f64::INFINITY;
    }
    let sq = disc.sqrt();
    let t = -0.5 * (qb + qb.signum() * sq);
    let roots = [t / qa, if t != 0.0 { qc / t } else { f64::INFINITY }];
    roots
        .iter()
        .copied()
        .filter(|r| *r > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Nesterov–Todd scaling `W` with `W z = W⁻¹ s = λ`.
enum ScalingBlock {
    Nonneg { w: Vec<f64> },
    Soc { eta: f64, wbar: Vec<f64> },
}

struct Scaling {
    blocks: Vec<ScalingBlock>,
}

impl Scaling {
    fn compute(cones: &Cones, s: &[f64], z: &[f64]) -> Option<Scaling> {
        let mut blocks = Vec::with_capacity(cones.cones.len());
        for (k, r) in cones.blocks() {
            let (sv, zv) = (&s[r.clone()], &z[r]);
            match k {
                Cone::Nonnegative(_) => {
                    let w: Vec<f64> = sv.iter().zip(zv).map(|(a, b)| (a / b).sqrt()).collect();
                    blocks.push(ScalingBlock::Nonneg { w });
                }
                Cone::SecondOrder(_) => {
                    let sres = sv[0] * sv[0] - dot(&sv[1..], &sv[1..]);
                    let zres = zv[0] * zv[0] - dot(&zv[1..], &zv[1..]);
                    if !(sres > 0.0 && zres > 0.0) {
                        return None;
                    }
                    let (sn, zn) = (sres.sqrt(), zres.sqrt());
                    let sbar: Vec<f64> = sv.iter().map(|v| v / sn).collect();
                    let zbar: Vec<f64> = zv.iter().map(|v| v / zn).collect();
                    let gamma = ((1.0 + dot(&sbar, &zbar)) / 2.0).sqrt();
                    let mut wbar: Vec<f64> = sbar
                        .iter()
                        .zip(&zbar)
                        .enumerate()
                        .map(|(i, (a, b))| if i == 0 { a + b } else { a - b } / (2.0 * gamma))
                        .collect();
                    let jn = (wbar[0] * wbar[0] - dot(&wbar[1..], &wbar[1..])).sqrt();
                    wbar.iter_mut().for_each(|v| *v /= jn);
                    blocks.push(ScalingBlock::Soc {
                        eta: (sn / zn).sqrt(),
                        wbar,
                    });
                }
            }
        }
        Some(Scaling { blocks })
    }

    /// `out = W v` (or `W⁻¹ v` when `inverse`).
    fn apply(&self, cones: &Cones, v: &[f64], out: &mut [f64], inverse: bool) {
        for (blk, (_, r)) in self.blocks.iter().zip(cones.blocks()) {
            let (vv, o) = (&v[r.clone()], &mut out[r]);
            match blk {
                ScalingBlock::Nonneg { w } => {
                    for i in 0..vv.len() {
                        o[i] = if inverse { vv[i] / w[i] } else { vv[i] * w[i] };
                    }
                }
                ScalingBlock::Soc { eta, wbar } => {
                    // W = η [a bᵀ; b I + bbᵀ/(1+a)],  W⁻¹ = η⁻¹ J W̄ J
                    let a = wbar[0];
                    let b = &wbar[1..];
                    let sgn = if inverse { -1.0 } else { 1.0 };
                    let scale = if inverse { 1.0 / eta } else { *eta };
                    let btv = dot(b, &vv[1..]);
                    o[0] = scale * (a * vv[0] + sgn * btv);
                    let coef = sgn * vv[0] + btv / (1.0 + a);
                    for i in 1..vv.len() {
                        o[i] = scale * (vv[i] + coef * b[i - 1]);
                    }
                }
            }
        }
    }

    /// Dense `W⁻²` of one block.
    fn inv_sq_block(&self, idx: usize) -> Vec<Vec<f64>> {
        match &self.blocks[idx] {
            ScalingBlock::Nonneg { w } => {
                let n = w.len();
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    m[i][i] = 1.0 / (w[i] * w[i]);
                }
                m
            }
            ScalingBlock::Soc { eta, wbar } => {
                // η⁻² (2 (Jw̄)(Jw̄)ᵀ − J)
                let n = wbar.len();
                let jw: Vec<f64> = wbar
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == 0 { *v } else { -v })
                    .collect();
                let e2 = 1.0 / (eta * eta);
                let mut m = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let jij = if i == j {
                            if i == 0 {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        };
                        m[i][j] = e2 * (2.0 * jw[i] * jw[j] - jij);
                    }
                }
                m
            }
        }
    }
}

/// Reduced KKT matrix with a fixed envelope and ordering.
struct Kkt {
    n: usize,
    perm_inv: Vec<usize>,
    signs: Vec<f64>,
    sky: Skyline,
}

impl Kkt {
    fn new(qp: &ConicQp, cones: &Cones) -> Kkt {
        let n = qp.num_vars();
        let p = qp.b.len();
        let dim = n + p;
        let mut edges = Vec::new();
        for (r, c, _) in qp.p.entries() {
            edges.push((r, c));
        }
        // Nonnegative rows couple only their own columns; a second-order
        // block couples every column it touches.
        for (k, rows) in cones.blocks() {
            let groups: Vec<Vec<usize>> = match k {
                Cone::Nonnegative(_) => rows.map(|r| vec![r]).collect(),
                Cone::SecondOrder(_) => vec![rows.collect()],
            };
            for group in groups {
                let mut cols: Vec<usize> = group
                    .iter()
                    .flat_map(|&r| qp.g.row(r).iter().map(|e| e.0))
                    .collect();
                cols.sort_unstable();
                cols.dedup();
                for (i, &a) in cols.iter().enumerate() {
                    for &b in &cols[..i] {
                        edges.push((a, b));
                    }
                }
            }
        }
        for (r, c, _) in qp.a.entries() {
            edges.push((n + r, c));
        }
        let perm = reverse_cuthill_mckee(dim, &edges);
        let mut perm_inv = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }
        let sky = Skyline::new(dim, edges.iter().map(|&(a, b)| (perm_inv[a], perm_inv[b])));
        let mut signs = vec![0.0; dim];
        for (old, &new) in perm_inv.iter().enumerate() {
            signs[new] = if old < n { 1.0 } else { -1.0 };
        }
        Kkt {
            n,
            perm_inv,
            signs,
            sky,
        }
    }

    fn assemble(&mut self, qp: &ConicQp, cones: &Cones, scaling: &Scaling, reg: f64) {
        let pi = &self.perm_inv;
        self.sky.clear();
        for (r, c, v) in qp.p.entries() {
            if r >= c {
                self.sky.add(pi[r], pi[c], v);
            }
        }
        for (bi, (k, rows)) in cones.blocks().enumerate() {
            if let (Cone::Nonnegative(_), ScalingBlock::Nonneg { w }) = (k, &scaling.blocks[bi]) {
                for (r, wr) in rows.zip(w) {
                    let d = 1.0 / (wr * wr);
                    let g = qp.g.row(r);
                    for &(ca, va) in g {
                        for &(cb, vb) in g {
                            if ca >= cb {
                                self.sky.add(pi[ca], pi[cb], va * d * vb);
                            }
                        }
                    }
                }
                continue;
            }
            let w2 = scaling.inv_sq_block(bi);
            let rows: Vec<usize> = rows.collect();
            for (a, &ra) in rows.iter().enumerate() {
                for (b, &rb) in rows.iter().enumerate() {
                    let wab = w2[a][b];
                    if wab == 0.0 {
                        continue;
                    }
                    for &(ca, va) in qp.g.row(ra) {
                        for &(cb, vb) in qp.g.row(rb) {
                            if ca >= cb {
                                self.sky.add(pi[ca], pi[cb], va * wab * vb);
                            }
                        }
                    }
                }
            }
        }
        for (r, c, v) in qp.a.entries() {
            self.sky.add(pi[self.n + r], pi[c], v);
        }
        for (old, &new) in pi.iter().enumerate() {
            let d = if old < self.n { reg } else { -reg };
            self.sky.add(new, new, d);
        }
    }
}

/// Per-iteration Newton machinery bound to one scaling.
struct Newton<'a> {
    qp: &'a ConicQp,
    cones: &'a Cones,
    scaling: &'a Scaling,
    kkt: &'a Kkt,
    refine_steps: usize,
}

impl Newton<'_> {
    /// `y = (P + GᵀW⁻²G) x + Aᵀ v ; A x` for the unregularized reduced system.
    fn reduced_apply(&self, sol: &[f64], out: &mut [f64]) {
        let n = self.kkt.n;
        let (x, v) = sol.split_at(n);
        out.iter_mut().for_each(|o| *o = 0.0);
        let (ox, ov) = out.split_at_mut(n);
        self.qp.p.mul_add(1.0, x, ox);
        let m = self.qp.h.len();
        let mut gx = vec![0.0; m];
        self.qp.g.mul_add(1.0, x, &mut gx);
        let mut t = vec![0.0; m];
        self.scaling.apply(self.cones, &gx, &mut t, true);
        self.scaling.apply(self.cones, &t, &mut gx, true);
        self.qp.g.mul_t_add(1.0, &gx, ox);
        self.qp.a.mul_t_add(1.0, v, ox);
        self.qp.a.mul_add(1.0, x, ov);
    }

    fn reduced_solve(&self, rhs: &[f64]) -> Vec<f64> {
        let pi = &self.kkt.perm_inv;
        let dim = rhs.len();
        let permuted_solve = |r: &[f64]| {
            let mut buf = vec![0.0; dim];
            for (old, &new) in pi.iter().enumerate() {
                buf[new] = r[old];
            }
            self.kkt.sky.solve(&mut buf);
            (0..dim).map(|old| buf[pi[old]]).collect::<Vec<f64>>()
        };
        let mut sol = permuted_solve(rhs);
        let mut applied = vec![0.0; dim];
        let rhs_norm = norm(rhs).max(1.0);
        for _ in 0..self.refine_steps {
            self.reduced_apply(&sol, &mut applied);
            let res: Vec<f64> = rhs.iter().zip(&applied).map(|(a, b)| a - b).collect();
            if norm(&res) <= 1e-15 * rhs_norm {
                break;
            }
            let corr = permuted_solve(&res);
            axpy(1.0, &corr, &mut sol);
        }
        sol
    }

    /// Solves the full Newton system with linear right-hand sides
    /// `(rx, ry, rz)` and complementarity target `ds`.
    fn solve(
        &self,
        lambda: &[f64],
        rx: &[f64],
        ry: &[f64],
        rz: &[f64],
        ds: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.kkt.n;
        let m = rz.len();
        // rz' = rz − W(λ \ ds)
        let mut lds = vec![0.0; m];
        self.cones.circ_solve(lambda, ds, &mut lds);
        let mut wlds = vec![0.0; m];
        self.scaling.apply(self.cones, &lds, &mut wlds, false);
        let rzp: Vec<f64> = rz.iter().zip(&wlds).map(|(a, b)| a - b).collect();
        // rhs_x = rx + GᵀW⁻² rz'
        let mut t = vec![0.0; m];
        let mut w2rz = vec![0.0; m];
        self.scaling.apply(self.cones, &rzp, &mut t, true);
        self.scaling.apply(self.cones, &t, &mut w2rz, true);
        let mut rhs = Vec::with_capacity(n + ry.len());
        rhs.extend_from_slice(rx);
        self.qp.g.mul_t_add(1.0, &w2rz, &mut rhs[..n]);
        rhs.extend_from_slice(ry);
        let sol = self.reduced_solve(&rhs);
        let dx = sol[..n].to_vec();
        let dy = sol[n..].to_vec();
        // Δz = W⁻²(GΔx − rz')
        let mut gdx: Vec<f64> = rzp.iter().map(|v| -v).collect();
        self.qp.g.mul_add(1.0, &dx, &mut gdx);
        self.scaling.apply(self.cones, &gdx, &mut t, true);
        let mut dz = vec![0.0; m];
        self.scaling.apply(self.cones, &t, &mut dz, true);
        // Δs from the primal row keeps G x + s = h exact under the step.
        let mut dsol = rz.to_vec();
        self.qp.g.mul_add(-1.0, &dx, &mut dsol);
        (dx, dy, dz, dsol)
    }
}

struct Residuals {
    rx: Vec<f64>,
    ry: Vec<f64>,
    rz: Vec<f64>,
    pres: f64,
    dres: f64,
    gap: f64,
    relgap: f64,
    pcost: f64,
}

fn residuals(qp: &ConicQp, x: &[f64], y: &[f64], z: &[f64], s: &[f64], scales: (f64, f64, f64)) -> Residuals {
    let mut px = vec![0.0; x.len()];
    qp.p.mul_add(1.0, x, &mut px);
    let pcost = 0.5 * dot(x, &px) + dot(&qp.c, x);
    let mut rx: Vec<f64> = px.iter().zip(&qp.c).map(|(a, b)| a + b).collect();
    qp.a.mul_t_add(1.0, y, &mut rx);
    qp.g.mul_t_add(1.0, z, &mut rx);
    let mut ry: Vec<f64> = qp.b.iter().map(|v| -v).collect();
    qp.a.mul_add(1.0, x, &mut ry);
    let mut rz: Vec<f64> = s.iter().zip(&qp.h).map(|(a, b)| a - b).collect();
    qp.g.mul_add(1.0, x, &mut rz);
    let gap = dot(s, z);
    let dcost = pcost + dot(y, &ry) + dot(z, &rz) - gap;
    let relgap = if pcost < 0.0 {
        gap / -pcost
    } else if dcost > 0.0 {
        gap / dcost
    } else {
        f64::INFINITY
    };
    let (sx, sy, sz) = scales;
    Residuals {
        pres: (norm(&ry) / sy).max(norm(&rz) / sz),
        dres: norm(&rx) / sx,
        rx,
        ry,
        rz,
        gap,
        relgap,
        pcost,
    }
}

pub fn solve(qp: &ConicQp, settings: &IpmSettings) -> Result<IpmSolution, IpmError> {
    qp.check()?;
    let cones = Cones::new(&qp.cones);
    let n = qp.num_vars();
    let m = qp.h.len();
    let scales = (
        norm(&qp.c).max(1.0),
        norm(&qp.b).max(1.0),
        norm(&qp.h).max(1.0),
    );
    let mut kkt = Kkt::new(qp, &cones);

    // Starting point from the W = I system.
    let identity = Scaling {
        blocks: cones
            .blocks()
            .map(|(k, r)| match k {
                Cone::Nonnegative(d) => ScalingBlock::Nonneg { w: vec![1.0; d] },
                Cone::SecondOrder(d) => {
                    let _ = r;
                    let mut wbar = vec![0.0; d];
                    wbar[0] = 1.0;
                    ScalingBlock::Soc { eta: 1.0, wbar }
                }
            })
            .collect(),
    };
    kkt.assemble(qp, &cones, &identity, settings.static_reg);
    kkt.sky
        .factor(&kkt.signs, settings.dyn_reg_eps, settings.dyn_reg_delta);
    let (mut x, mut y, mut z, mut s) = {
        let newton = Newton {
            qp,
            cones: &cones,
            scaling: &identity,
            kkt: &kkt,
            refine_steps: settings.refine_steps,
        };
        let mut rhs: Vec<f64> = qp.c.iter().map(|v| -v).collect();
        qp.g.mul_t_add(1.0, &qp.h, &mut rhs);
        rhs.extend_from_slice(&qp.b);
        let sol = newton.reduced_solve(&rhs);
        let x = sol[..n].to_vec();
        let y = sol[n..].to_vec();
        let mut z: Vec<f64> = qp.h.iter().map(|v| -v).collect();
        qp.g.mul_add(1.0, &x, &mut z);
        let s: Vec<f64> = z.iter().map(|v| -v).collect();
        (x, y, z, s)
    };
    for v in [&mut s, &mut z] {
        let shift = -cones.min_eig(v);
        if shift >= -1e-8 * norm(v).max(1.0) {
            cones.add_identity(v, 1.0 + shift);
        }
    }

    let degree = cones.degree();
    let reduced_ok = |r: &Residuals| {
        r.pres <= settings.reduced_tol_feas
            && r.dres <= settings.reduced_tol_feas
            && (r.gap <= settings.reduced_tol_feas || r.relgap <= settings.reduced_tol_gap_rel)
    };
    let score = |r: &Residuals| r.pres.max(r.dres).max(r.gap.min(r.relgap));
    let finish = |status, iterations, r: &Residuals, x, y, z, s| IpmSolution {
        objective: r.pcost,
        status,
        iterations,
        primal_residual: r.pres,
        dual_residual: r.dres,
        gap: r.gap,
        x,
        y,
        z,
        s,
    };
    // Best iterate meeting the reduced tolerances, kept in case later
    // iterations lose accuracy.
    let mut best: Option<(f64, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let mut iter = 0;
    let mut last = None;
    while iter < settings.max_iter {
        let r = residuals(qp, &x, &y, &z, &s, scales);
        if !(r.pres.is_finite() && r.dres.is_finite() && r.gap.is_finite()) {
            break;
        }
        if r.pres <= settings.tol_feas
            && r.dres <= settings.tol_feas
            && (r.gap <= settings.tol_gap_abs || r.relgap <= settings.tol_gap_rel)
        {
            return Ok(finish(IpmStatus::Solved, iter, &r, x, y, z, s));
        }
        let sc = score(&r);
        if reduced_ok(&r) && best.as_ref().is_none_or(|b| sc < b.0) {
            best = Some((sc, iter, x.clone(), y.clone(), z.clone(), s.clone()));
        } else if best.as_ref().is_some_and(|b| sc > 1e3 * b.0) {
            break;
        }
        last = Some((r.pres, r.dres, r.gap));

        let Some(scaling) = Scaling::compute(&cones, &s, &z) else {
            break;
        };
        let mut lambda = vec![0.0; m];
        scaling.apply(&cones, &z, &mut lambda, false);
        kkt.assemble(qp, &cones, &scaling, settings.static_reg);
        kkt.sky
            .factor(&kkt.signs, settings.dyn_reg_eps, settings.dyn_reg_delta);
        let newton = Newton {
            qp,
            cones: &cones,
            scaling: &scaling,
            kkt: &kkt,
            refine_steps: settings.refine_steps,
        };
        let mu = r.gap / degree;
        let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<f64>>();
        let (rx, ry, rz) = (neg(&r.rx), neg(&r.ry), neg(&r.rz));

        // predictor
        let mut ll = vec![0.0; m];
        cones.circ(&lambda, &lambda, &mut ll);
        let (_, _, dz_a, ds_a) = newton.solve(&lambda, &rx, &ry, &rz, &neg(&ll));
        let alpha_a = cones.max_step(&s, &ds_a).min(cones.max_step(&z, &dz_a)).min(1.0);
        let mut s_t = s.clone();
        let mut z_t = z.clone();
        axpy(alpha_a, &ds_a, &mut s_t);
        axpy(alpha_a, &dz_a, &mut z_t);
        let sigma = (dot(&s_t, &z_t) / r.gap).clamp(0.0, 1.0).powi(3);

        // corrector
        let mut ws = vec![0.0; m];
        let mut wz = vec![0.0; m];
        scaling.apply(&cones, &ds_a, &mut ws, true);
        scaling.apply(&cones, &dz_a, &mut wz, false);
        let mut cross = vec![0.0; m];
        cones.circ(&ws, &wz, &mut cross);
        let mut ds_c: Vec<f64> = ll.iter().zip(&cross).map(|(a, b)| -a - b).collect();
        cones.add_identity(&mut ds_c, sigma * mu);
        let (dx, dy, dz, dsv) = newton.solve(&lambda, &rx, &ry, &rz, &ds_c);
        let alpha_max = cones.max_step(&s, &dsv).min(cones.max_step(&z, &dz));
        let alpha = (settings.step_fraction * alpha_max).min(1.0);
        iter += 1;
        if !alpha.is_finite() || alpha < 1e-14 {
            break;
        }
        axpy(alpha, &dx, &mut x);
        axpy(alpha, &dy, &mut y);
        axpy(alpha, &dz, &mut z);
        axpy(alpha, &dsv, &mut s);
    }

    let r = residuals(qp, &x, &y, &z, &s, scales);
    if r.pres.is_finite() && r.dres.is_finite() && reduced_ok(&r) && best.as_ref().is_none_or(|b| score(&r) <= b.0) {
        return Ok(finish(IpmStatus::ReducedAccuracy, iter, &r, x, y, z, s));
    }
    if let Some((_, _, x, y, z, s)) = best {
        let r = residuals(qp, &x, &y, &z, &s, scales);
        return Ok(finish(IpmStatus::ReducedAccuracy, iter, &r, x, y, z, s));
    }
    let (primal_residual, dual_residual, gap) = last.unwrap_or((r.pres, r.dres, r.gap));
    if !(r.pres.is_finite() && r.dres.is_finite()) {
        return Err(IpmError::Numerical { iteration: iter });
    }
    Err(IpmError::NotConverged {
        iterations: iter,
        primal_residual,
        dual_residual,
        gap,
    })
}
