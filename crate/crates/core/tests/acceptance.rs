//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Vector3};
use rand::Rng;

use common::{
    barrier_oracle, central, feasible_trajectory, q4, random_linearization, random_problem, random_rotation,
    random_vec3, rel_err, rng, v3,
};
use iscvx::attitude::{
    cost_derivatives, dynamics_step, final_cost, keepout_diff, keepout_value, random_unit_quaternion,
};
use iscvx::harness::{aggregate, run_solver, trial_metrics, AggregateRow, ExperimentConfig, TrialMetrics};
use iscvx::iscvx::{Backend, IscvxParams, SolveReport};
use iscvx::linearize::{defect_coords, linearize_trajectory};
use iscvx::manifold::{frame_reconstruct_q, inv_retract_q, retract_q};
use iscvx::quat::{dexp, dlog, quat_exp, quat_log, Vec3};
use iscvx::subproblem::{ConvexSubproblem, StageModel, TerminalModel};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1. calculus oracles

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut roundtrip: f64 = 0.0;
    let (mut e_dexp, mut e_dlog, mut e_keep, mut e_grad, mut e_hess): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..100 {
        let w = random_vec3(&mut r, 1.7);
        roundtrip = roundtrip.max((quat_log(quat_exp(w)).unwrap() - w).norm());
        let q = random_unit_quaternion(&mut r).canonical();
        roundtrip = roundtrip.max((quat_exp(quat_log(q).unwrap()) - q).norm());

        let eta = random_vec3(&mut r, 1.0);
        let fd = central(|t| q4(quat_exp(w + eta * t)), 1e-6);
        e_dexp = e_dexp.max(rel_err(&q4(dexp(w, eta)), &fd, 1e-3));

        let v = frame_reconstruct_q(q, eta);
        let fd = central(|t| v3(quat_log((q + v.scale(t)).normalize()).unwrap()), 1e-6);
        e_dlog = e_dlog.max(rel_err(&v3(dlog(q, v).unwrap()), &fd, 1e-3));

        let prob = random_problem(&mut r, 10, 0.1, 20.0);
        let fd = DVector::from_iterator(
            3,
            (0..3).map(|j| {
                central(
                    |t| DVector::from_element(1, keepout_value(retract_q(q, Vec3::ith(j, t)), &prob).unwrap()),
                    1e-5,
                )[0]
            }),
        );
        let row = DVector::from_iterator(3, (0..3).map(|j| keepout_diff(q, Vec3::ith(j, 1.0), &prob)));
        e_keep = e_keep.max(rel_err(&row, &fd, 1e-3));

        // a point of the convex domain around the target
        let off = random_vec3(&mut r, 0.8);
        let p = prob.qd * quat_exp(off);
        let der = cost_derivatives(p, Vec3::zeros(), &prob).unwrap();
        let h = |eta: Vec3| final_cost(retract_q(p, eta), &prob).unwrap();
        let fd = DVector::from_iterator(
            3,
            (0..3).map(|j| central(|t| DVector::from_element(1, h(Vec3::ith(j, t))), 1e-5)[0]),
        );
        e_grad = e_grad.max(rel_err(&v3(der.grad_q), &fd, 1e-3));
        let step = 1e-4;
        let second = |d: Vec3| (h(d * step) - 2.0 * h(Vec3::zeros()) + h(-d * step)) / (step * step);
        let mut fd = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (Vec3::ith(i, 1.0), Vec3::ith(j, 1.0));
                fd[(i, j)] = (second(a + b) - second(a - b)) / 4.0;
            }
        }
        e_hess = e_hess.max((der.hess_q - fd).norm() / der.hess_q.norm());
    }

    // order of accuracy of the linearized dynamics at every step
    let prob = random_problem(&mut r, 10, 0.1, 20.0);
    let traj = feasible_trajectory(&mut r, &prob, 1.5);
    let lin = linearize_trajectory(&traj, &prob).unwrap();
    let mut ratios = Vec::new();
    for (i, st) in lin.steps.iter().enumerate() {
        let eta = random_vec3(&mut r, 1.0).normalize();
        let xi = random_vec3(&mut r, 1.0).normalize();
        let err = |eps: f64| {
            let predicted = st.defect + st.a * (eta * eps) + st.b * (xi * eps);
            let moved = dynamics_step(retract_q(traj.states[i], eta * eps), traj.controls[i] + xi * eps, prob.tau);
            (predicted - inv_retract_q(traj.states[i + 1], moved).unwrap()).norm()
        };
        ratios.push(err(1e-2) / err(5e-3));
    }
    let ratio_ok = ratios.iter().all(|q| (3.5..=4.5).contains(q));
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let secs = start.elapsed().as_secs_f64();
    let worst = e_dexp.max(e_dlog).max(e_keep).max(e_grad).max(e_hess);
    outcome(
        roundtrip < 1e-10 && worst < 1e-4 && ratio_ok && secs < 10.0,
        format!(
            "roundtrip {roundtrip:.1e}; rel err dexp {e_dexp:.1e} dlog {e_dlog:.1e} keepout {e_keep:.1e} \
             grad {e_grad:.1e} hess {e_hess:.1e}; Richardson ratios [{lo:.3}, {hi:.3}]; {secs:.2} s"
        ),
    )
}

// 2 and 3. twenty intrinsic solves

fn seeded_solves() -> Vec<(iscvx::attitude::AttitudeProblem, SolveReport)> {
    let mut out = Vec::new();
    for theta in [10.0, 30.0] {
        let cfg = ExperimentConfig {
            n_steps: 30,
            tau: 0.1,
            theta_max_deg: theta,
            seed: 2,
            ..ExperimentConfig::default()
        };
        for k in 0..10 {
            let prob = cfg.trial_problem(k).unwrap();
            let rep = run_solver(Backend::Iscvx, &prob, &IscvxParams::default()).unwrap();
            out.push((prob, rep));
        }
    }
    out
}

fn criterion_2(solves: &[(iscvx::attitude::AttitudeProblem, SolveReport)]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    for (_, rep) in solves {
        for row in rep.log.iter().filter(|r| r.accepted) {
            worst = worst.max(row.manifold_drift);
            accepted += 1;
        }
        worst = worst.max(rep.trajectory.max_manifold_drift());
    }
    outcome(
        worst < 1e-9 && accepted > 0,
        format!("{} solves, {accepted} accepted iterates, max |‖q‖ − 1| = {worst:.1e}", solves.len()),
    )
}

fn criterion_3(solves: &[(iscvx::attitude::AttitudeProblem, SolveReport)]) -> Outcome {
    let (mut defect, mut keep): (f64, f64) = (0.0, f64::NEG_INFINITY);
    let mut converged = 0;
    for (prob, rep) in solves {
        let t = &rep.trajectory;
        for i in 0..t.horizon() {
            let z = dynamics_step(t.states[i], t.controls[i], prob.tau);
            defect = defect.max(defect_coords(t.states[i + 1], z).unwrap().amax());
        }
        for q in &t.states {
            keep = keep.max(keepout_value(*q, prob).unwrap());
        }
        converged += usize::from(rep.converged());
    }
    outcome(
        defect < 1e-6 && keep <= 1e-6 && converged == solves.len(),
        format!(
            "{converged}/{} converged, max defect {defect:.1e}, max keep-out value {keep:.2e}",
            solves.len()
        ),
    )
}

// 4. sub-problem against the dense oracle

fn criterion_4() -> Outcome {
    let mut r = rng(404);
    let mut worst: f64 = 0.0;
    let mut zero_ok = true;
    for k in 0..50u64 {
        let (_, lin) = random_linearization(4000 + k, 2, k % 2 == 0);
        let stages: Vec<StageModel> = lin.steps.iter().map(StageModel::from).collect();
        let terminal = TerminalModel::from(&lin.terminal);
        let radius = 10f64.powf(r.random_range(-1.5..0.5));
        let lambdas = vec![r.random_range(5.0..200.0); 3];
        let sp = ConvexSubproblem::assemble(stages.clone(), terminal.clone(), radius, &lambdas).unwrap();
        let sol = sp.solve().unwrap();
        let oracle = barrier_oracle(&stages, &terminal, radius, &lambdas);
        worst = worst.max((sol.l_value - oracle.objective).abs() / oracle.objective.abs());
        let z = sp.zero_perturbation_point().unwrap();
        let expected = lin.steps.iter().map(|s| s.stage_cost).sum::<f64>() + lin.terminal.cost;
        zero_ok &= sp.violations(&z).max() <= 1e-12 && z.l_value >= expected - 1e-12;
    }
    outcome(
        worst < 1e-5 && zero_ok,
        format!("50 instances, max relative objective gap {worst:.1e}, constructive feasibility {zero_ok}"),
    )
}

// 5 and 6. benchmark trends

struct Table {
    rows: Vec<TrialMetrics>,
    summary: Vec<AggregateRow>,
    reports: Vec<SolveReport>,
}

fn table(n_steps: usize, tau: f64, theta: f64) -> Table {
    let cfg = ExperimentConfig {
        n_steps,
        tau,
        theta_max_deg: theta,
        trials: 100,
        ..ExperimentConfig::default()
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for k in 0..cfg.trials {
        let prob = cfg.trial_problem(k).unwrap();
        for backend in [Backend::Iscvx, Backend::Scvx] {
            let rep = run_solver(backend, &prob, &cfg.params).unwrap();
            rows.push(trial_metrics(k, cfg.seed, &prob, &rep).unwrap());
            reports.push(rep);
        }
    }
    let summary = aggregate(&rows);
    Table { rows, summary, reports }
}

fn stat<'a>(t: &'a Table, backend: Backend, statistic: &str) -> &'a AggregateRow {
    t.summary
        .iter()
        .find(|r| r.algorithm == backend && r.statistic == statistic)
        .unwrap()
}

fn trend(t: &Table, std_cap: Option<f64>) -> Outcome {
    let (im, is) = (stat(t, Backend::Iscvx, "mean"), stat(t, Backend::Iscvx, "std"));
    let (sm, ss) = (stat(t, Backend::Scvx, "mean"), stat(t, Backend::Scvx, "std"));
    let checks = [
        im.iterations < sm.iterations,
        (15.0..=40.0).contains(&im.iterations),
        is.iterations < ss.iterations,
        std_cap.is_none_or(|c| is.iterations < c),
        im.geodesic_cost <= sm.geodesic_cost * 1.05,
    ];
    let failed: Vec<&str> = ["mean order", "iSCvx mean in [15, 40]", "std order", "iSCvx std cap", "cost"]
        .iter()
        .zip(checks)
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    let converged = t.rows.iter().filter(|r| r.converged).count();
    outcome(
        failed.is_empty(),
        format!(
            "iterations iSCvx {:.2} ± {:.2}, SCvx {:.2} ± {:.2}; geodesic cost {:.4} vs {:.4}; \
             {converged}/{} converged{}",
            im.iterations,
            is.iterations,
            sm.iterations,
            ss.iterations,
            im.geodesic_cost,
            sm.geodesic_cost,
            t.rows.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    )
}

// 7. monotone descent

fn criterion_7<'a>(reports: impl Iterator<Item = &'a SolveReport>) -> Outcome {
    let (mut solves, mut violations) = (0, 0);
    for rep in reports {
        solves += 1;
        let mut bad = false;
        for pair in rep.log.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a.accepted {
                bad |= !(b.j == a.j_candidate && a.j_candidate <= a.j);
            } else {
                bad |= b.j != a.j || b.radius >= a.radius;
            }
        }
        if let Some(last) = rep.log.last() {
            bad |= last.accepted && last.j_candidate > last.j;
        }
        violations += usize::from(bad);
    }
    outcome(
        violations == 0,
        format!("{solves} logged solves, {violations} with a cost increase or a rejected step that moved the reference"),
    )
}

// 8. frame invariance

/// Objective agreement required between the two frames.
const FRAME_L_TOL: f64 = 1e-8;

fn criterion_8() -> Outcome {
    let mut r = rng(808);
    let (mut dl, mut dxi): (f64, f64) = (0.0, 0.0);
    for k in 0..20u64 {
        let (_, lin) = random_linearization(8000 + k, 8, k % 2 == 0);
        let rot = random_rotation(&mut r);
        let mut rotated = lin.clone();
        rotated.steps = lin.steps.iter().map(|s| s.with_control_frame(&rot)).collect();
        let radius = r.random_range(0.1..1.0);
        let a = ConvexSubproblem::from_linearization(&lin, radius, 100.0).unwrap().solve().unwrap();
        let b = ConvexSubproblem::from_linearization(&rotated, radius, 100.0).unwrap().solve().unwrap();
        dl = dl.max((a.l_value - b.l_value).abs());
        for (xa, xb) in a.xi.iter().zip(&b.xi) {
            let xa = Vector3::new(xa[0], xa[1], xa[2]);
            let xb = Vector3::new(xb[0], xb[1], xb[2]);
            dxi = dxi.max((rot.transpose() * xa - xb).norm());
        }
    }
    // L is 1-strongly convex in each ξ_i (identity control Hessian), so two
    // points within FRAME_L_TOL of the optimum lie within 2·sqrt(2·tol) of it
    // and of each other.
    let xi_tol = 2.0 * (2.0 * FRAME_L_TOL).sqrt();
    outcome(
        dl < FRAME_L_TOL && dxi < xi_tol,
        format!("20 instances, max |ΔL| {dl:.1e}, max ‖Rᵀξ − ξ'‖ {dxi:.1e} (bound {xi_tol:.1e})"),
    )
}

// 9. determinism of the CLI batch

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_iscvx"))
            .args(["bench", "--seed", "7", "--trials", "10", "--algorithm", "both", "--out-dir"])
            .arg(&out)
            .output()
            .unwrap();
        let read = |name: &str| std::fs::read(out.join(name)).unwrap_or_default();
        files.push((status.status.code(), read("metrics.csv"), read("summary.csv")));
    }
    let same = files[0].1 == files[1].1 && files[0].2 == files[1].2 && !files[0].1.is_empty();
    outcome(
        same && files[0].0 == Some(0),
        format!(
            "exit codes {:?}/{:?}, metrics.csv {} bytes, identical {same}",
            files[0].0,
            files[1].0,
            files[0].1.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "calculus oracles", criterion_1());
    let solves = seeded_solves();
    report(2, "manifold invariance", criterion_2(&solves));
    report(3, "feasibility at convergence", criterion_3(&solves));
    report(4, "sub-problem oracle", criterion_4());
    let t1 = table(30, 0.1, 10.0);
    report(5, "batch trend, N = 30, tau = 0.1, 10 deg", trend(&t1, None));
    let t2 = table(60, 0.05, 30.0);
    report(6, "batch trend, N = 60, tau = 0.05, 30 deg", trend(&t2, Some(6.0)));
    let logged = solves.iter().map(|(_, r)| r).chain(&t1.reports).chain(&t2.reports);
    report(7, "monotone descent", criterion_7(logged));
    report(8, "frame invariance", criterion_8());
    report(9, "determinism", criterion_9());
    let failed = results.iter().filter(|(_, _, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
