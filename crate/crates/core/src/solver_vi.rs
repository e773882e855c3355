//! Reference solver for the constrained problem. Each implicit Euler step minimizes
//! `J(v) = ½⟨((1/τ + δ) I - Δ_h) v, v⟩ - ⟨f + u_prev/τ, v⟩` over fields with
//! `|v(x)| <= 1` by projected block Gauss-Seidel in lexicographic node order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner, project_ball_in_place, Grid, NodalField, ScalarField, VectorField};
use crate::scenario::Problem;
use crate::trajectory::{StepStats, Trajectory};

/// Feasibility tolerance asserted after every step.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViRunConfig {
    pub delta: f64,
    pub tau: f64,
    /// Stop when the largest nodal change of a sweep is at most this.
    pub pgs_tol: f64,
    pub pgs_max_sweeps: usize,
    /// Nodes with `|u| >= 1 - contact_tol` are in contact.
    pub contact_tol: f64,
    /// Recovered multipliers below `δ - lambda_floor_slack` are flagged.
    pub lambda_floor_slack: f64,
    /// Evaluate `J` after every sweep and fail if it increases.
    pub check_energy: bool,
}

impl ViRunConfig {
    pub fn new(delta: f64, tau: f64) -> Self {
        Self {
            delta,
            tau,
            pgs_tol: 1e-10,
            pgs_max_sweeps: 1_000_000,
            contact_tol: 1e-6,
            lambda_floor_slack: 1e-6,
            check_energy: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("pgs_tol", self.pgs_tol),
            ("contact_tol", self.contact_tol),
            ("lambda_floor_slack", self.lambda_floor_slack),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {}", self.delta)));
        }
        if self.pgs_max_sweeps == 0 {
            return Err(Error::InvalidParameter("pgs_max_sweeps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ViStep {
    pub u: VectorField,
    pub sweeps: usize,
    pub change: f64,
}

fn rhs(grid: &Grid, u_prev: &VectorField, f_now: &VectorField, tau: f64) -> VectorField {
    let mut b = VectorField::zeros(grid, u_prev.comps());
    for k in grid.interior_nodes() {
        for c in 0..u_prev.comps() {
            b.node_mut(k)[c] = f_now.node(k)[c] + u_prev.node(k)[c] / tau;
        }
    }
    b
}

/// `(1/τ + δ) u - Δ_h u - b`, zero on the boundary.
fn operator_residual(grid: &Grid, u: &VectorField, b: &VectorField, delta: f64, tau: f64) -> VectorField {
    let mut r = VectorField::zeros(grid, u.comps());
    grid.neg_laplacian_into(u.values(), u.comps(), r.values_mut());
    let d = 1.0 / tau + delta;
    for k in grid.interior_nodes() {
        for c in 0..u.comps() {
            r.node_mut(k)[c] += d * u.node(k)[c] - b.node(k)[c];
        }
    }
    r
}

/// Unweighted `J(v)`; only differences matter.
fn energy(grid: &Grid, v: &VectorField, b: &VectorField, delta: f64, tau: f64) -> f64 {
    let mut av = VectorField::zeros(grid, v.comps());
    grid.neg_laplacian_into(v.values(), v.comps(), av.values_mut());
    let d = 1.0 / tau + delta;
    v.values()
        .iter()
        .zip(av.values())
        .zip(b.values())
        .map(|((x, ax), bx)| 0.5 * x * (ax + d * x) - bx * x)
        .sum()
}

/// One implicit Euler step of the constrained problem.
pub fn vi_step(grid: &Grid, u_prev: &VectorField, f_now: &VectorField, cfg: &ViRunConfig) -> Result<ViStep> {
    cfg.validate()?;
    let n = u_prev.comps();
    if f_now.comps() != n || f_now.values().len() != u_prev.values().len() {
        return Err(Error::InvalidParameter("forcing and state shapes differ".into()));
    }
    let b = rhs(grid, u_prev, f_now, cfg.tau);
    let mut u = u_prev.clone();
    u.zero_boundary(grid);
    for k in grid.interior_nodes() {
        project_ball_in_place(u.node_mut(k));
    }

    let nx = grid.nodes_per_axis()[0];
    let ny = grid.nodes_per_axis().get(1).copied().unwrap_or(1);
    let two_d = grid.dim() == 2;
    let ix2 = 1.0 / grid.spacing()[0].powi(2);
    let iy2 = if two_d { 1.0 / grid.spacing()[1].powi(2) } else { 0.0 };
    let diag = 1.0 / cfg.tau + cfg.delta + grid.stencil_diagonal();
    let (j0, j1) = if two_d { (1, ny - 1) } else { (0, 1) };

    let mut local = vec![0.0; n];
    let mut last_energy = if cfg.check_energy {
        energy(grid, &u, &b, cfg.delta, cfg.tau)
    } else {
        0.0
    };
    let mut change = f64::INFINITY;
    for sweep in 1..=cfg.pgs_max_sweeps {
        change = 0.0;
        let vals = u.values_mut();
        for j in j0..j1 {
            for i in 1..nx - 1 {
                let k = j * nx + i;
                // Boundary entries of u stay zero, so neighbours need no masking.
                for (c, l) in local.iter_mut().enumerate() {
                    let mut acc = b.values()[k * n + c]
                        + ix2 * (vals[(k - 1) * n + c] + vals[(k + 1) * n + c]);
                    if two_d {
                        acc += iy2 * (vals[(k - nx) * n + c] + vals[(k + nx) * n + c]);
                    }
                    *l = acc / diag;
                }
                project_ball_in_place(&mut local);
                let node = &mut vals[k * n..(k + 1) * n];
                let d2: f64 = node.iter().zip(&local).map(|(a, b)| (a - b) * (a - b)).sum();
                change = f64::max(change, d2.sqrt());
                node.copy_from_slice(&local);
            }
        }
        if cfg.check_energy {
            let e = energy(grid, &u, &b, cfg.delta, cfg.tau);
            let increase = e - last_energy;
            if increase > 1e-12 * (1.0 + e.abs()) {
                return Err(Error::EnergyIncrease { sweep, increase });
            }
            last_energy = e;
        }
        if change <= cfg.pgs_tol {
            return Ok(ViStep { u, sweeps: sweep, change });
        }
    }
    Err(Error::SweepBudgetExhausted {
        sweeps: cfg.pgs_max_sweeps,
        change,
    })
}

/// Runs `⌈T/τ⌉` constrained steps; asserts `|u| <= 1 + 1e-12` after each.
pub fn vi_run(problem: &Problem, cfg: &ViRunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if (cfg.tau - problem.tau).abs() > 1e-15 * problem.tau {
        return Err(Error::InvalidParameter(format!(
            "config tau {} differs from the problem's {}",
            cfg.tau, problem.tau
        )));
    }
    let grid = &problem.grid;
    let mut states = Vec::with_capacity(problem.steps + 1);
    let mut stats = Vec::with_capacity(problem.steps);
    states.push(problem.u0.clone());
    for m in 1..=problem.steps {
        let f = problem.forcing(m).map_err(|e| e.at_step(m))?;
        let out = vi_step(grid, &states[m - 1], &f, cfg).map_err(|e| e.at_step(m))?;
        let top = out.u.max_magnitude();
        assert!(top <= 1.0 + FEASIBILITY_TOL, "step {m} left the unit ball: {top}");
        log::debug!("vi step {m}: {} sweeps, change {:.3e}", out.sweeps, out.change);
        stats.push(StepStats {
            step: m,
            time: problem.time(m),
            iterations: out.sweeps,
            linear_iterations: 0,
            residual: out.change,
        });
        states.push(out.u);
    }
    Ok(Trajectory {
        tau: problem.tau,
        states,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FloorViolation {
    pub step: usize,
    pub node: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug)]
pub struct MultiplierRecovery {
    /// `lambda[m]` for `m = 0..=M`; `lambda[0] ≡ δ` since no step produced it.
    pub lambda: Vec<ScalarField>,
    /// Contact nodes where `λ < δ - lambda_floor_slack`.
    pub floor_violations: Vec<FloorViolation>,
    /// `min (λ - δ)` over all steps and nodes.
    pub min_excess: f64,
}

/// `λ = δ` off contact; `λ = r·u/|u|²` with `r = f - (u - u_prev)/τ + Δ_h u` on contact.
pub fn recover_multiplier(problem: &Problem, traj: &Trajectory, cfg: &ViRunConfig) -> Result<MultiplierRecovery> {
    let grid = &problem.grid;
    let delta = cfg.delta;
    let mut lambda = vec![ScalarField::constant(grid, delta)];
    let mut floor_violations = Vec::new();
    let mut min_excess = 0.0f64;
    for m in 1..=traj.steps() {
        let (u, u_prev) = (&traj.states[m], &traj.states[m - 1]);
        let f = problem.forcing(m)?;
        let b = rhs(grid, u_prev, &f, cfg.tau);
        // operator_residual with δ = 0 is -r.
        let r = operator_residual(grid, u, &b, 0.0, cfg.tau);
        let mut l = ScalarField::constant(grid, delta);
        for k in grid.interior_nodes() {
            let nsq = u.node_norm_sq(k);
            if nsq.sqrt() < 1.0 - cfg.contact_tol {
                continue;
            }
            let ru: f64 = r.node(k).iter().zip(u.node(k)).map(|(a, b)| -a * b).sum();
            let value = ru / nsq;
            l.values_mut()[k] = value;
            min_excess = min_excess.min(value - delta);
            if value < delta - cfg.lambda_floor_slack {
                floor_violations.push(FloorViolation {
                    step: m,
                    node: k,
                    lambda: value,
                });
            }
        }
        lambda.push(l);
    }
    if !floor_violations.is_empty() {
        log::warn!(
            "{} contact nodes with multiplier below delta - slack (min excess {min_excess:.3e})",
            floor_violations.len()
        );
    }
    Ok(MultiplierRecovery {
        lambda,
        floor_violations,
        min_excess,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktReport {
    /// Largest nodal `|A u - b|` over non-contact nodes, divided by the nodal diagonal.
    pub inactive_residual: f64,
    /// Largest angle (radians) between `b - A u` and `u` over contact nodes whose
    /// residual is not negligible.
    pub contact_angle: f64,
    pub contact_nodes: usize,
}

/// First-order optimality of a single step.
pub fn kkt_check(grid: &Grid, u: &VectorField, u_prev: &VectorField, f_now: &VectorField, cfg: &ViRunConfig) -> KktReport {
    let b = rhs(grid, u_prev, f_now, cfg.tau);
    let r = operator_residual(grid, u, &b, cfg.delta, cfg.tau);
    let diag = 1.0 / cfg.tau + cfg.delta + grid.stencil_diagonal();
    let mut report = KktReport {
        inactive_residual: 0.0,
        contact_angle: 0.0,
        contact_nodes: 0,
    };
    for k in grid.interior_nodes() {
        let (uk, rk) = (u.node(k), r.node(k));
        let rn = rk.iter().map(|x| x * x).sum::<f64>().sqrt();
        let un = u.node_norm(k);
        if un < 1.0 - cfg.contact_tol {
            report.inactive_residual = report.inactive_residual.max(rn / diag);
            continue;
        }
        report.contact_nodes += 1;
        if rn / diag <= 1e3 * cfg.pgs_tol {
            continue;
        }
        let along: f64 = -rk.iter().zip(uk).map(|(a, b)| a * b).sum::<f64>() / un;
        let across = (rn * rn - along * along).max(0.0).sqrt();
        report.contact_angle = report.contact_angle.max(across.atan2(along));
    }
    report
}

/// Smallest normalized slack of the discrete variational inequality
/// `⟨(u - u_prev)/τ + δu - f, v - u⟩ + ⟨∇_h u, ∇_h (v - u)⟩ >= 0` over `samples`
/// random admissible `v` (half global, half local perturbations of `u`).
pub fn variational_check(
    grid: &Grid,
    u: &VectorField,
    u_prev: &VectorField,
    f_now: &VectorField,
    cfg: &ViRunConfig,
    samples: usize,
    seed: u64,
) -> f64 {
    let b = rhs(grid, u_prev, f_now, cfg.tau);
    let r = operator_residual(grid, u, &b, cfg.delta, cfg.tau);
    let b_norm = inner(grid, &b, &b).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for s in 0..samples {
        let spread = if s % 2 == 0 { 1.5 } else { 1e-2 };
        let mut v = u.clone();
        for k in grid.interior_nodes() {
            let node = v.node_mut(k);
            for x in node.iter_mut() {
                let noise: f64 = rng.gen_range(-spread..spread);
                *x = if s % 2 == 0 { noise } else { *x + noise };
            }
            project_ball_in_place(node);
        }
        let w = v.sub(u);
        let scale = b_norm * inner(grid, &w, &w).sqrt() + f64::MIN_POSITIVE;
        worst = worst.min(inner(grid, &r, &w) / scale);
    }
    worst
}
