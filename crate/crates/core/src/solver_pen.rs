//! Implicit Euler for the penalized system
//! `(u - u_prev)/τ - Δ_h u + k(|u|² - 1) u = f`.
//!
//! Each step is solved by a semismooth Newton iteration on the pair
//! `(u, μ)` with `μ = k - δ >= 0` and the relation written as
//! `ε ln(1 + μ) = max(|u|² - 1, 0)`. The log form keeps the linearization of the
//! exponential from overshooting, and every linear system is SPD:
//! `((1/τ + δ + μ) I - Δ_h + 2 (1 + μ)/ε · u uᵀ) δu = rhs` on active nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, NodalField, ScalarField, VectorField};
use crate::linsolve::{cg_solve, CgOptions, RankOne, ShiftedOperator};
use crate::penalty::{k_eval, PenaltyParams};
use crate::scenario::Problem;
use crate::trajectory::{StepStats, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenRunConfig {
    pub penalty: PenaltyParams,
    pub tau: f64,
    pub fixed_point_tol: f64,
    pub fixed_point_max: usize,
    /// Newton step fraction.
    pub theta: f64,
    /// Relative tolerance of each inner linear solve; the outer stopping test is on
    /// the nonlinear residual, so this only affects the iteration count.
    pub cg_tol: f64,
}

impl PenRunConfig {
    pub fn new(penalty: PenaltyParams, tau: f64) -> Self {
        Self {
            penalty,
            tau,
            fixed_point_tol: 1e-8,
            fixed_point_max: 100,
            theta: 1.0,
            cg_tol: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "fixed_point_tol must be positive, got {}",
                self.fixed_point_tol
            )));
        }
        if self.fixed_point_max == 0 {
            return Err(Error::InvalidParameter("fixed_point_max must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::InvalidParameter(format!("cg_tol must be positive, got {}", self.cg_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PenStep {
    pub u: VectorField,
    pub k_hat: ScalarField,
    pub iterations: usize,
    pub linear_iterations: usize,
    /// `‖F(u)‖ / ‖b‖` for the primal residual `F`.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct PenTrajectory {
    pub trajectory: Trajectory,
    /// `k_hat[m] = k(|u(t_m)|² - 1)`, including `m = 0`.
    pub k_hat: Vec<ScalarField>,
    pub penalty: PenaltyParams,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `k(|u|² - 1)` at every node (δ on the boundary).
pub fn k_field(grid: &Grid, u: &VectorField, p: &PenaltyParams) -> ScalarField {
    ScalarField::from_values(
        (0..grid.node_count())
            .map(|k| k_eval(u.node_norm_sq(k) - 1.0, p))
            .collect(),
    )
}

/// `F(u) = ((1/τ + δ) I - Δ_h) u + (k(|u|² - 1) - δ) u - b` on interior nodes.
fn primal_residual(grid: &Grid, u: &VectorField, b: &VectorField, cfg: &PenRunConfig) -> Vec<f64> {
    let n = u.comps();
    let mut r = vec![0.0; u.values().len()];
    grid.neg_laplacian_into(u.values(), n, &mut r);
    let diag = 1.0 / cfg.tau + cfg.penalty.delta;
    for k in grid.interior_nodes() {
        let extra = k_eval(u.node_norm_sq(k) - 1.0, &cfg.penalty) - cfg.penalty.delta;
        let (uk, bk) = (u.node(k), b.node(k));
        for c in 0..n {
            r[k * n + c] += (diag + extra) * uk[c] - bk[c];
        }
    }
    r
}

/// One implicit Euler step from `u_prev` with forcing `f_now` at the new time.
pub fn pen_step(grid: &Grid, u_prev: &VectorField, f_now: &VectorField, cfg: &PenRunConfig) -> Result<PenStep> {
    cfg.validate()?;
    let n = u_prev.comps();
    if f_now.comps() != n || f_now.values().len() != u_prev.values().len() {
        return Err(Error::InvalidParameter("forcing and state shapes differ".into()));
    }
    let p = cfg.penalty;
    let (eps, delta) = (p.epsilon, p.delta);
    let inv_tau = 1.0 / cfg.tau;

    let mut b = VectorField::zeros(grid, n);
    for k in grid.interior_nodes() {
        for c in 0..n {
            b.node_mut(k)[c] = f_now.node(k)[c] + u_prev.node(k)[c] * inv_tau;
        }
    }
    let b_norm = norm(b.values());

    let mut u = u_prev.clone();
    u.zero_boundary(grid);
    let mut mu: Vec<f64> = (0..grid.node_count())
        .map(|k| if grid.is_boundary(k) { 0.0 } else { k_eval(u.node_norm_sq(k) - 1.0, &p) - delta })
        .collect();
    let cg_opts = CgOptions {
        tol: cfg.cg_tol,
        jacobi: true,
        ..CgOptions::default()
    };

    let mut linear_iterations = 0;
    let mut residual = f64::INFINITY;
    for iteration in 1..=cfg.fixed_point_max {
        // Residual of the (u, μ) system, momentum part.
        let mut rhs = VectorField::zeros(grid, n);
        grid.neg_laplacian_into(u.values(), n, rhs.values_mut());
        let mut shift = ScalarField::constant(grid, delta);
        let mut weights = vec![0.0; grid.node_count()];
        let mut rho = vec![0.0; grid.node_count()];
        let mut active = vec![false; grid.node_count()];
        for k in grid.interior_nodes() {
            let s = u.node_norm_sq(k) - 1.0;
            let m = mu[k];
            let diag = inv_tau + delta + m;
            let (uk, bk) = (u.node(k).to_vec(), b.node(k));
            let rk = &mut rhs.node_mut(k);
            for c in 0..n {
                rk[c] = -(rk[c] + diag * uk[c] - bk[c]);
            }
            shift.values_mut()[k] = delta + m;
            if s > 0.0 {
                active[k] = true;
                let ck = (1.0 + m) / eps;
                rho[k] = s - eps * m.ln_1p();
                weights[k] = 2.0 * ck;
                for c in 0..n {
                    rk[c] -= ck * rho[k] * uk[c];
                }
            } else {
                // μ is driven to zero: δμ = -μ.
                for c in 0..n {
                    rk[c] += m * uk[c];
                }
            }
        }
        let op = ShiftedOperator::new(grid, cfg.tau, shift)?.with_rank_one(RankOne {
            weights,
            dirs: u.clone(),
        });
        let sol = cg_solve(&op, &rhs, cg_opts)?;
        linear_iterations += sol.iterations;
        let du = sol.solution;

        let alpha = cfg.theta;
        for k in grid.interior_nodes() {
            let dmu = if active[k] {
                let ud: f64 = u.node(k).iter().zip(du.node(k)).map(|(a, b)| a * b).sum();
                (1.0 + mu[k]) / eps * (2.0 * ud + rho[k])
            } else {
                -mu[k]
            };
            mu[k] = (mu[k] + alpha * dmu).max(0.0);
        }
        for (x, d) in u.values_mut().iter_mut().zip(du.values()) {
            *x += alpha * d;
        }
        if !u.is_finite() {
            return Err(Error::FixedPointNotConverged {
                iterations: iteration,
                residual: f64::INFINITY,
            });
        }

        let f_res = norm(&primal_residual(grid, &u, &b, cfg));
        residual = if b_norm > 0.0 { f_res / b_norm } else { f_res };
        let step = alpha * norm(du.values());
        if step <= cfg.fixed_point_tol * norm(u.values()) && f_res <= cfg.fixed_point_tol * b_norm {
            let k_hat = k_field(grid, &u, &p);
            return Ok(PenStep {
                u,
                k_hat,
                iterations: iteration,
                linear_iterations,
                residual,
            });
        }
    }
    Err(Error::FixedPointNotConverged {
        iterations: cfg.fixed_point_max,
        residual,
    })
}

/// Runs `⌈T/τ⌉` steps from the problem's initial datum.
pub fn pen_run(problem: &Problem, cfg: &PenRunConfig) -> Result<PenTrajectory> {
    cfg.validate()?;
    if (cfg.tau - problem.tau).abs() > 1e-15 * problem.tau {
        return Err(Error::InvalidParameter(format!(
            "config tau {} differs from the problem's {}",
            cfg.tau, problem.tau
        )));
    }
    if (cfg.penalty.delta - problem.delta()).abs() > 0.0 {
        return Err(Error::InvalidParameter(format!(
            "penalty delta {} differs from the scenario's {}",
            cfg.penalty.delta,
            problem.delta()
        )));
    }
    let grid = &problem.grid;
    let mut states = Vec::with_capacity(problem.steps + 1);
    let mut k_hat = Vec::with_capacity(problem.steps + 1);
    let mut stats = Vec::with_capacity(problem.steps);
    states.push(problem.u0.clone());
    k_hat.push(k_field(grid, &problem.u0, &cfg.penalty));
    for m in 1..=problem.steps {
        let f = problem.forcing(m).map_err(|e| e.at_step(m))?;
        let out = pen_step(grid, &states[m - 1], &f, cfg).map_err(|e| e.at_step(m))?;
        let floor = out.k_hat.min_interior(grid);
        assert!(
            floor >= cfg.penalty.delta,
            "k_hat fell below delta at step {m}: {floor}"
        );
        log::debug!(
            "pen step {m}: {} newton iterations, {} cg iterations, residual {:.3e}",
            out.iterations,
            out.linear_iterations,
            out.residual
        );
        stats.push(StepStats {
            step: m,
            time: problem.time(m),
            iterations: out.iterations,
            linear_iterations: out.linear_iterations,
            residual: out.residual,
        });
        states.push(out.u);
        k_hat.push(out.k_hat);
    }
    Ok(PenTrajectory {
        trajectory: Trajectory {
            tau: problem.tau,
            states,
            stats,
        },
        k_hat,
        penalty: cfg.penalty,
    })
}

/// The discrete multiplier of the penalized route is `k̂` itself.
pub fn extract_multiplier(traj: &PenTrajectory) -> Vec<ScalarField> {
    traj.k_hat.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, grad_norm_sq, l2_norm_sq};
    use crate::penalty::k_derivative;
    use crate::scenario::{Scenario, ScenarioSpec};
    use nalgebra::{DMatrix, DVector};

    fn params(eps: f64, delta: f64) -> PenaltyParams {
        PenaltyParams::new(eps, delta, 1.0).unwrap()
    }

    /// Dense Newton with exact Jacobian and residual backtracking on the interior
    /// unknowns of a 1D problem.
    fn dense_newton(grid: &Grid, u_prev: &VectorField, f: &VectorField, tau: f64, p: &PenaltyParams) -> VectorField {
        let n = u_prev.comps();
        let nodes: Vec<usize> = grid.interior_nodes().collect();
        let dim = nodes.len() * n;
        let h2 = grid.spacing()[0].powi(2);
        let b = DVector::from_iterator(
            dim,
            nodes
                .iter()
                .flat_map(|&k| (0..n).map(move |c| f.node(k)[c] + u_prev.node(k)[c] / tau)),
        );
        let residual = |x: &DVector<f64>| -> DVector<f64> {
            let mut r = DVector::zeros(dim);
            for (i, _) in nodes.iter().enumerate() {
                let s: f64 = (0..n).map(|c| x[i * n + c].powi(2)).sum::<f64>() - 1.0;
                let kv = k_eval(s, p);
                for c in 0..n {
                    let left = if i > 0 { x[(i - 1) * n + c] } else { 0.0 };
                    let right = if i + 1 < nodes.len() { x[(i + 1) * n + c] } else { 0.0 };
                    let lap = (2.0 * x[i * n + c] - left - right) / h2;
                    r[i * n + c] = x[i * n + c] / tau + lap + kv * x[i * n + c] - b[i * n + c];
                }
            }
            r
        };
        let mut x = DVector::zeros(dim);
        for _ in 0..5000 {
            let r = residual(&x);
            if r.norm() <= 1e-13 * b.norm() {
                break;
            }
            let mut jac = DMatrix::zeros(dim, dim);
            for i in 0..nodes.len() {
                let ui: Vec<f64> = (0..n).map(|c| x[i * n + c]).collect();
                let s: f64 = ui.iter().map(|v| v * v).sum::<f64>() - 1.0;
                let (kv, dk) = (k_eval(s, p), k_derivative(s, p));
                for c in 0..n {
                    let row = i * n + c;
                    jac[(row, row)] += 1.0 / tau + 2.0 / h2 + kv;
                    if i > 0 {
                        jac[(row, row - n)] -= 1.0 / h2;
                    }
                    if i + 1 < nodes.len() {
                        jac[(row, row + n)] -= 1.0 / h2;
                    }
                    for d in 0..n {
                        jac[(row, i * n + d)] += 2.0 * dk * ui[c] * ui[d];
                    }
                }
            }
            let dx = jac.lu().solve(&(-&r)).unwrap();
            let mut a = 1.0;
            while a > 1e-12 && residual(&(&x + a * &dx)).norm() >= (1.0 - 1e-4 * a) * r.norm() {
                a *= 0.5;
            }
            x += a * dx;
        }
        assert!(residual(&x).norm() <= 1e-12 * b.norm(), "oracle did not converge");
        let mut out = VectorField::zeros(grid, n);
        for (i, &k) in nodes.iter().enumerate() {
            for c in 0..n {
                out.node_mut(k)[c] = x[i * n + c];
            }
        }
        out
    }

    fn max_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn zero_data_one_iteration() {
        let grid = Grid::new_1d(1.0, 17).unwrap();
        let z = VectorField::zeros(&grid, 2);
        let cfg = PenRunConfig::new(params(1e-2, 0.3), 0.01);
        let out = pen_step(&grid, &z, &z, &cfg).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.u.values().iter().all(|v| *v == 0.0));
        assert!(out.k_hat.values().iter().all(|v| *v == 0.3));
    }

    #[test]
    fn inactive_step_is_linear_solve() {
        let grid = Grid::new_1d(1.0, 33).unwrap();
        let u_prev = VectorField::from_fn(&grid, 2, |x, _| vec![0.2 * x * (1.0 - x), 0.1]);
        let mut u_prev = u_prev;
        u_prev.zero_boundary(&grid);
        let f = VectorField::from_fn(&grid, 2, |x, _| vec![x, -1.0]);
        let cfg = PenRunConfig::new(params(1e-3, 0.2), 0.05);
        let out = pen_step(&grid, &u_prev, &f, &cfg).unwrap();
        let mut rhs = f.clone();
        for (r, u) in rhs.values_mut().iter_mut().zip(u_prev.values()) {
            *r += u / 0.05;
        }
        let op = ShiftedOperator::new(&grid, 0.05, ScalarField::constant(&grid, 0.2)).unwrap();
        let lin = cg_solve(&op, &rhs, CgOptions { tol: 1e-14, ..Default::default() }).unwrap();
        assert!(max_diff(out.u.values(), lin.solution.values()) <= 1e-10);
        assert!(out.k_hat.values().iter().all(|v| *v == 0.2));
    }

    #[test]
    fn matches_dense_newton_oracle() {
        let grid = Grid::new_1d(1.0, 9).unwrap();
        let z = VectorField::zeros(&grid, 2);
        for (amp, delta, eps) in [(10.0, 0.0, 1e-2), (30.0, 0.0, 1e-2), (30.0, 0.4, 1e-3)] {
            let mut f = VectorField::from_fn(&grid, 2, |_, _| vec![amp, 0.0]);
            f.zero_boundary(&grid);
            let p = params(eps, delta);
            let cfg = PenRunConfig {
                fixed_point_tol: 1e-12,
                cg_tol: 1e-14,
                ..PenRunConfig::new(p, 1.0)
            };
            let out = pen_step(&grid, &z, &f, &cfg).unwrap();
            let oracle = dense_newton(&grid, &z, &f, 1.0, &p);
            assert!(oracle.max_magnitude() > 1.0, "case must be active");
            assert!(max_diff(out.u.values(), oracle.values()) <= 1e-6);
            let k_oracle = k_field(&grid, &oracle, &p);
            let rel = out
                .k_hat
                .values()
                .iter()
                .zip(k_oracle.values())
                .map(|(a, b)| (a - b).abs() / b.max(1.0))
                .fold(0.0, f64::max);
            assert!(rel <= 1e-6, "k_hat mismatch {rel}");
        }
    }

    #[test]
    fn rotating_data_in_two_components_matches_oracle() {
        let grid = Grid::new_1d(1.0, 12).unwrap();
        let mut u_prev = VectorField::from_fn(&grid, 3, |x, _| {
            let r = 0.9 * (std::f64::consts::PI * x).sin();
            vec![r * 0.6, r * 0.8, 0.0]
        });
        u_prev.zero_boundary(&grid);
        let f = VectorField::from_fn(&grid, 3, |x, _| vec![-40.0, 5.0 * x, 20.0]);
        let p = params(5e-3, 0.1);
        let cfg = PenRunConfig {
            fixed_point_tol: 1e-12,
            cg_tol: 1e-14,
            ..PenRunConfig::new(p, 0.2)
        };
        let out = pen_step(&grid, &u_prev, &f, &cfg).unwrap();
        let oracle = dense_newton(&grid, &u_prev, &f, 0.2, &p);
        assert!(max_diff(out.u.values(), oracle.values()) <= 1e-6);
    }

    fn small_problem(f: [&str; 2], u0: [&str; 2], delta: f64, nodes: usize, t: f64, tau: f64) -> Problem {
        let spec = ScenarioSpec {
            label: "t".into(),
            dim: 1,
            extents: vec![1.0],
            nodes: vec![nodes],
            components: 2,
            horizon: t,
            delta,
            f: f.iter().map(|s| s.to_string()).collect(),
            u0: u0.iter().map(|s| s.to_string()).collect(),
        };
        Problem::new(Scenario::new(spec).unwrap(), tau).unwrap()
    }

    #[test]
    fn single_step_run_equals_step() {
        let pb = small_problem(["12", "3*x"], ["0", "0"], 0.1, 33, 0.05, 0.05);
        let cfg = PenRunConfig::new(params(1e-2, 0.1), 0.05);
        let run = pen_run(&pb, &cfg).unwrap();
        assert_eq!(run.trajectory.steps(), 1);
        let step = pen_step(&pb.grid, &pb.u0, &pb.forcing(1).unwrap(), &cfg).unwrap();
        assert_eq!(run.trajectory.states[1], step.u);
        assert_eq!(run.k_hat[1], step.k_hat);
    }

    #[test]
    fn zero_data_zero_trajectory() {
        let pb = small_problem(["0", "0"], ["0", "0"], 0.3, 17, 1.0, 0.1);
        let run = pen_run(&pb, &PenRunConfig::new(params(1e-3, 0.3), 0.1)).unwrap();
        assert_eq!(run.trajectory.steps(), 10);
        for (u, k) in run.trajectory.states.iter().zip(extract_multiplier(&run)) {
            assert!(u.values().iter().all(|v| *v == 0.0));
            assert!(k.values().iter().all(|v| *v == 0.3));
        }
    }

    #[test]
    fn step_count_rounds_up() {
        let pb = small_problem(["0", "0"], ["0", "0"], 0.0, 9, 1.0, 0.3);
        let run = pen_run(&pb, &PenRunConfig::new(params(0.1, 0.0), 0.3)).unwrap();
        assert_eq!(run.trajectory.steps(), 4);
    }

    // ½‖u(t)‖² + Στ‖∇u‖² + Στ⟨k̂u,u⟩ ≤ ½‖u₀‖² + Στ⟨f,u⟩ along the whole run.
    #[test]
    fn discrete_energy_inequality() {
        let pb = small_problem(
            ["12*cos(6*t)", "12*sin(6*t) + 4*x"],
            ["0.5*sin(3.141592653589793*x)", "0"],
            0.1,
            65,
            1.0,
            0.01,
        );
        for eps in [1e-1, 1e-2, 1e-3] {
            let run = pen_run(&pb, &PenRunConfig::new(params(eps, 0.1), 0.01)).unwrap();
            let g = &pb.grid;
            let (mut lhs_sum, mut rhs_sum) = (0.0, 0.5 * l2_norm_sq(g, &pb.u0));
            for m in 1..=run.trajectory.steps() {
                let u = &run.trajectory.states[m];
                let ku = VectorField::from_fn(g, 2, |_, _| vec![0.0, 0.0]);
                let mut ku = ku;
                for k in 0..g.node_count() {
                    for c in 0..2 {
                        ku.node_mut(k)[c] = run.k_hat[m].values()[k] * u.node(k)[c];
                    }
                }
                lhs_sum += 0.01 * (grad_norm_sq(g, u) + inner(g, &ku, u));
                rhs_sum += 0.01 * inner(g, &pb.forcing(m).unwrap(), u);
                let lhs = 0.5 * l2_norm_sq(g, u) + lhs_sum;
                assert!(lhs <= rhs_sum + 1e-6, "eps {eps} step {m}: {lhs} > {rhs_sum}");
            }
        }
    }

    #[test]
    fn deterministic() {
        let pb = small_problem(["14", "3*cos(6*t)"], ["0", "0.5*x*(1-x)"], 0.1, 65, 0.3, 0.01);
        let cfg = PenRunConfig::new(params(1e-3, 0.1), 0.01);
        let a = pen_run(&pb, &cfg).unwrap();
        let b = pen_run(&pb, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.k_hat, b.k_hat);
        for k in a.k_hat.iter() {
            assert!(k.min_interior(&pb.grid) >= 0.1);
        }
    }

    #[test]
    fn rejects_mismatched_config() {
        let pb = small_problem(["0", "0"], ["0", "0"], 0.1, 9, 1.0, 0.1);
        assert!(pen_run(&pb, &PenRunConfig::new(params(0.1, 0.1), 0.2)).is_err());
        assert!(pen_run(&pb, &PenRunConfig::new(params(0.1, 0.2), 0.1)).is_err());
        let bad = PenRunConfig {
            theta: 0.0,
            ..PenRunConfig::new(params(0.1, 0.1), 0.1)
        };
        assert!(pen_run(&pb, &bad).is_err());
    }
}
