//! Studies built from complete runs: convergence as `ε → 0` against the constrained
//! reference, continuous dependence on the forcing, and agreement of the two
//! multipliers off the contact set.
//!
//! Constituent runs execute on the current rayon pool; results are merged in key
//! order, so reports do not depend on scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{audit_run, EstimateReport};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{fmt17, grad_norm_sq, l2_norm_sq, poincare_constant, Grid, NodalField, ScalarField, VectorField};
use crate::penalty::PenaltyParams;
use crate::scenario::Problem;
use crate::solver_pen::{extract_multiplier, pen_run, PenRunConfig, PenTrajectory};
use crate::solver_vi::{recover_multiplier, vi_run, MultiplierRecovery, ViRunConfig};
use crate::trajectory::Trajectory;

/// Relative slack of the monotonicity verdicts.
pub const MONOTONE_SLACK: f64 = 0.05;
/// Values below this are treated as solver noise in monotonicity verdicts.
pub const NOISE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub run: String,
    pub report: EstimateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    pub label: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub checks: Vec<Check>,
    pub audits: Vec<RunAudit>,
    pub pass: bool,
}

impl StudyReport {
    fn new(study: &str, label: &str, columns: Vec<String>) -> Self {
        Self {
            study: study.into(),
            label: label.into(),
            columns,
            rows: Vec::new(),
            checks: Vec::new(),
            audits: Vec::new(),
            pass: true,
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail,
        });
    }

    fn finish(mut self) -> Self {
        self.pass = self.checks.iter().all(|c| c.pass) && self.audits.iter().all(|a| a.report.pass);
        self
    }

    /// Column values by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn check_named(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `<label>_<study>`, the stem of the CSV and JSON files.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.label, self.study)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// `Σ_{m>=1} τ ‖a_m - b_m‖²_h`, square-rooted.
pub fn l2_diff(grid: &Grid, a: &[VectorField], b: &[VectorField], tau: f64) -> f64 {
    a.iter()
        .zip(b)
        .skip(1)
        .map(|(x, y)| tau * l2_norm_sq(grid, &x.sub(y)))
        .sum::<f64>()
        .sqrt()
}

fn spacetime_sum(grid: &Grid, tau: f64, steps: usize, mut g: impl FnMut(usize, usize) -> f64) -> f64 {
    let w = tau * grid.cell_volume();
    (1..=steps)
        .map(|m| grid.interior_nodes().map(|k| g(m, k)).sum::<f64>())
        .sum::<f64>()
        * w
}

/// `‖(|u|² - 1)⁺‖_{L¹(Q_T)}`.
pub fn violation_l1(grid: &Grid, traj: &Trajectory) -> f64 {
    spacetime_sum(grid, traj.tau, traj.steps(), |m, k| {
        (traj.states[m].node_norm_sq(k) - 1.0).max(0.0)
    })
}

/// `‖(λ - δ)(|u| - 1)‖_{L¹(Q_T)}`.
pub fn complementarity_l1(grid: &Grid, traj: &Trajectory, lambda: &[ScalarField], delta: f64) -> f64 {
    spacetime_sum(grid, traj.tau, traj.steps(), |m, k| {
        ((lambda[m].values()[k] - delta) * (traj.states[m].node_norm(k) - 1.0)).abs()
    })
}

/// `‖λ‖_{L¹(Q_T)}`.
pub fn multiplier_l1(grid: &Grid, tau: f64, lambda: &[ScalarField]) -> f64 {
    spacetime_sum(grid, tau, lambda.len() - 1, |m, k| lambda[m].values()[k].abs())
}

/// `‖a - b‖_{L¹(Q_T)}` for two multiplier histories.
pub fn multiplier_diff_l1(grid: &Grid, tau: f64, a: &[ScalarField], b: &[ScalarField]) -> f64 {
    spacetime_sum(grid, tau, a.len() - 1, |m, k| (a[m].values()[k] - b[m].values()[k]).abs())
}

/// `next <= prev (1 + slack)` along the sequence, ignoring values under the noise floor.
pub fn non_increasing(values: &[f64], slack: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + slack) || w[1] <= NOISE_FLOOR)
}

fn validate_p_list(p_list: &[f64]) -> Result<()> {
    if let Some(p) = p_list.iter().find(|p| !(**p >= 1.0 && p.is_finite())) {
        return Err(Error::InvalidParameter(format!("p_list entries must be finite and >= 1, got {p}")));
    }
    Ok(())
}

fn pen_config(template: &PenRunConfig, epsilon: f64) -> Result<PenRunConfig> {
    let penalty = PenaltyParams::new(epsilon, template.penalty.delta, template.penalty.delta0)?;
    let cfg = PenRunConfig {
        penalty,
        ..*template
    };
    cfg.validate()?;
    Ok(cfg)
}

struct EpsRun {
    run: PenTrajectory,
    lambda: Vec<ScalarField>,
    audit: EstimateReport,
}

/// Runs the penalized route for every `ε` in `eps_list` (strictly decreasing) and
/// the constrained route once, on the same mesh and time step.
pub fn epsilon_study(
    problem: &Problem,
    eps_list: &[f64],
    pen_template: &PenRunConfig,
    vi_cfg: &ViRunConfig,
    p_list: &[f64],
    audit_slack: f64,
) -> Result<StudyReport> {
    if eps_list.is_empty() {
        return Err(Error::InvalidParameter("eps_list is empty".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!("eps_list must be strictly decreasing, got {eps_list:?}")));
    }
    validate_p_list(p_list)?;
    let delta0 = pen_template.penalty.delta0;
    let configs = eps_list
        .iter()
        .map(|&e| pen_config(pen_template, e))
        .collect::<Result<Vec<_>>>()?;

    let (vi, pen_runs) = rayon::join(
        || -> Result<(Trajectory, MultiplierRecovery, EstimateReport)> {
            let traj = vi_run(problem, vi_cfg)?;
            let rec = recover_multiplier(problem, &traj, vi_cfg)?;
            let audit = audit_run(problem, &traj, &rec.lambda, delta0, p_list, audit_slack)?;
            Ok((traj, rec, audit))
        },
        || {
            configs
                .par_iter()
                .map(|cfg| -> Result<EpsRun> {
                    let run = pen_run(problem, cfg)?;
                    let lambda = extract_multiplier(&run);
                    let audit = audit_run(problem, &run.trajectory, &lambda, delta0, p_list, audit_slack)?;
                    Ok(EpsRun { run, lambda, audit })
                })
                .collect::<Vec<_>>()
        },
    );
    let (vi_traj, vi_rec, vi_audit) = vi?;

    let mut columns: Vec<String> = [
        "epsilon",
        "u_err_l2",
        "violation_l1",
        "violation_bound",
        "complementarity_l1",
        "lambda_err_l1",
        "k_l1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for p in p_list {
        columns.push(format!("k_lp_{p}"));
        columns.push(format!("k_lp_bound_{p}"));
    }
    columns.push("newton_iterations".into());
    columns.push("audit_pass".into());

    let grid = &problem.grid;
    let delta = problem.delta();
    let q_measure = grid.measure() * problem.steps as f64 * problem.tau;
    let mut report = StudyReport::new("epsilon", problem.scenario.label(), columns);
    let mut audits = vec![RunAudit {
        run: "vi".into(),
        report: vi_audit,
    }];
    let mut decay_ok = true;
    for (eps, outcome) in eps_list.iter().zip(pen_runs) {
        let EpsRun { run, lambda, audit } = outcome.inspect_err(|e| log::error!("epsilon = {eps}: {e}"))?;
        let traj = &run.trajectory;
        let k_l1 = multiplier_l1(grid, problem.tau, &lambda);
        let violation = violation_l1(grid, traj);
        let violation_bound = eps * (q_measure + k_l1);
        decay_ok &= violation <= violation_bound + 1e-6;
        let mut row = vec![
            *eps,
            l2_diff(grid, &traj.states, &vi_traj.states, problem.tau),
            violation,
            violation_bound,
            complementarity_l1(grid, traj, &lambda, delta),
            multiplier_diff_l1(grid, problem.tau, &lambda, &vi_rec.lambda),
            k_l1,
        ];
        for &p in p_list {
            let rec = audit.record("k.lp", Some(p)).expect("audited p");
            row.push(rec.measured);
            row.push(rec.bound);
        }
        row.push(traj.total_iterations() as f64);
        row.push(if audit.pass { 1.0 } else { 0.0 });
        report.rows.push(row);
        audits.push(RunAudit {
            run: format!("pen eps={eps}"),
            report: audit,
        });
    }
    report.audits = audits;

    let u_err = report.column("u_err_l2").unwrap();
    let violation = report.column("violation_l1").unwrap();
    let comp = report.column("complementarity_l1").unwrap();
    report.check(
        "u_err_non_increasing",
        non_increasing(&u_err, MONOTONE_SLACK),
        format!("{u_err:?}"),
    );
    report.check(
        "violation_non_increasing",
        non_increasing(&violation, MONOTONE_SLACK),
        format!("{violation:?}"),
    );
    report.check(
        "violation_within_decay_bound",
        decay_ok,
        "violation_l1 <= violation_bound + 1e-6 on every row".into(),
    );
    let (first, last) = (comp[0], comp[comp.len() - 1]);
    report.check(
        "complementarity_halves",
        first <= NOISE_FLOOR || last <= 0.5 * first,
        format!("first {first:e}, last {last:e}"),
    );
    report.check(
        "vi_multiplier_floor",
        vi_rec.floor_violations.is_empty(),
        format!(
            "{} contact nodes below delta - slack, min excess {:e}",
            vi_rec.floor_violations.len(),
            vi_rec.min_excess
        ),
    );
    Ok(report.finish())
}

/// Runs the constrained route with forcing `f + g/n` for every `n` and measures
/// `z_n = u_n - u` against the stability inequality
/// `½‖z(t)‖² + ½∫‖∇z‖² + δ∫‖z‖² <= C²/2 ∫‖f_n - f‖²`.
pub fn dependence_study(
    problem: &Problem,
    perturbation: &[Expr],
    n_list: &[f64],
    vi_cfg: &ViRunConfig,
    delta0: f64,
    p_list: &[f64],
    audit_slack: f64,
) -> Result<StudyReport> {
    if n_list.is_empty() {
        return Err(Error::InvalidParameter("n_list is empty".into()));
    }
    if let Some(n) = n_list.iter().find(|n| !(**n > 0.0 && n.is_finite())) {
        return Err(Error::InvalidParameter(format!("n_list entries must be positive, got {n}")));
    }
    validate_p_list(p_list)?;
    let grid = &problem.grid;
    let tau = problem.tau;
    let delta = problem.delta();
    let c2 = poincare_constant(grid).powi(2);

    let base = || -> Result<(Trajectory, EstimateReport)> {
        let traj = vi_run(problem, vi_cfg)?;
        let rec = recover_multiplier(problem, &traj, vi_cfg)?;
        let audit = audit_run(problem, &traj, &rec.lambda, delta0, p_list, audit_slack)?;
        Ok((traj, audit))
    };
    let perturbed = |n: f64| -> Result<(Problem, Trajectory, EstimateReport)> {
        let scenario = problem.scenario.perturbed(perturbation, n)?;
        let pb = Problem::new(scenario, tau)?;
        let traj = vi_run(&pb, vi_cfg)?;
        let rec = recover_multiplier(&pb, &traj, vi_cfg)?;
        let audit = audit_run(&pb, &traj, &rec.lambda, delta0, p_list, audit_slack)?;
        Ok((pb, traj, audit))
    };
    let (base, runs) = rayon::join(base, || n_list.par_iter().map(|&n| perturbed(n)).collect::<Vec<_>>());
    let (u, base_audit) = base?;

    let columns = [
        "n",
        "lhs_final",
        "rhs_final",
        "max_lhs_over_rhs",
        "scaled_decay",
        "z_linf_l2",
        "z_l2_h1",
        "audit_pass",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut report = StudyReport::new("dependence", problem.scenario.label(), columns);
    report.audits.push(RunAudit {
        run: "base".into(),
        report: base_audit,
    });
    let mut stability_ok = true;
    let mut lhs_first = None;
    for (&n, outcome) in n_list.iter().zip(runs) {
        let (pb, traj, audit) = outcome.inspect_err(|e| log::error!("n = {n}: {e}"))?;
        let (mut grad_sum, mut l2_sum, mut rhs_sum) = (0.0, 0.0, 0.0);
        let (mut lhs, mut rhs, mut worst, mut z_sup) = (0.0, 0.0, 0.0f64, 0.0f64);
        for m in 1..=traj.steps() {
            let z = traj.states[m].sub(&u.states[m]);
            let z_sq = l2_norm_sq(grid, &z);
            grad_sum += tau * grad_norm_sq(grid, &z);
            l2_sum += tau * z_sq;
            let df = pb.forcing(m)?.sub(&problem.forcing(m)?);
            rhs_sum += tau * l2_norm_sq(grid, &df);
            lhs = 0.5 * z_sq + 0.5 * grad_sum + delta * l2_sum;
            rhs = 0.5 * c2 * rhs_sum;
            z_sup = z_sup.max(z_sq.sqrt());
            if lhs > rhs * (1.0 + audit_slack) {
                stability_ok = false;
            }
            if rhs > 0.0 {
                worst = worst.max(lhs / rhs);
            }
        }
        let first = *lhs_first.get_or_insert((n, lhs));
        let scaled = if first.1 > 0.0 {
            (n / first.0).powi(2) * lhs / first.1
        } else {
            0.0
        };
        report.rows.push(vec![
            n,
            lhs,
            rhs,
            worst,
            scaled,
            z_sup,
            (l2_sum + grad_sum).sqrt(),
            if audit.pass { 1.0 } else { 0.0 },
        ]);
        report.audits.push(RunAudit {
            run: format!("vi n={n}"),
            report: audit,
        });
    }
    report.check(
        "stability_inequality",
        stability_ok,
        format!("lhs <= rhs * (1 + {audit_slack}) at every step"),
    );
    let scaled = report.column("scaled_decay").unwrap();
    let lhs = report.column("lhs_final").unwrap();
    let decay_ok = scaled
        .iter()
        .zip(&lhs)
        .all(|(s, l)| *l <= NOISE_FLOOR || (0.25..=4.0).contains(s));
    report.check("inverse_square_decay", decay_ok, format!("{scaled:?}"));
    Ok(report.finish())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessEntry {
    /// Node-steps where `|u_vi| < 1 - contact_tol` and the penalty is on its flat branch.
    pub common_inactive: usize,
    pub inactive_max_diff: f64,
    /// Node-steps inactive for the constrained route but penalized (`|u_ε| > 1`).
    pub activity_disagreements: usize,
    pub contact_l1: f64,
    pub total_l1: f64,
    pub pass: bool,
}

/// Compares `k̂` of a penalized run with the multiplier recovered from the
/// constrained run on the common inactive set (exact agreement expected there)
/// and reports the discrepancy on the contact set.
pub fn multiplier_uniqueness_check(
    problem: &Problem,
    pen: &PenTrajectory,
    vi: &Trajectory,
    vi_lambda: &[ScalarField],
    contact_tol: f64,
) -> UniquenessEntry {
    let grid = &problem.grid;
    let w = problem.tau * grid.cell_volume();
    let mut entry = UniquenessEntry {
        common_inactive: 0,
        inactive_max_diff: 0.0,
        activity_disagreements: 0,
        contact_l1: 0.0,
        total_l1: 0.0,
        pass: true,
    };
    for m in 1..=vi.steps() {
        for k in grid.interior_nodes() {
            let diff = (pen.k_hat[m].values()[k] - vi_lambda[m].values()[k]).abs();
            entry.total_l1 += w * diff;
            if vi.states[m].node_norm(k) >= 1.0 - contact_tol {
                entry.contact_l1 += w * diff;
            } else if pen.trajectory.states[m].node_norm_sq(k) <= 1.0 {
                entry.common_inactive += 1;
                entry.inactive_max_diff = entry.inactive_max_diff.max(diff);
            } else {
                entry.activity_disagreements += 1;
            }
        }
    }
    entry.pass = entry.inactive_max_diff <= 1e-8;
    entry
}

/// Study wrapper around [`multiplier_uniqueness_check`] at a single `ε`.
pub fn uniqueness_study(
    problem: &Problem,
    epsilon: f64,
    pen_template: &PenRunConfig,
    vi_cfg: &ViRunConfig,
    p_list: &[f64],
    audit_slack: f64,
) -> Result<StudyReport> {
    validate_p_list(p_list)?;
    let cfg = pen_config(pen_template, epsilon)?;
    let delta0 = cfg.penalty.delta0;
    let (pen, vi) = rayon::join(|| pen_run(problem, &cfg), || vi_run(problem, vi_cfg));
    let (pen, vi) = (pen?, vi?);
    let rec = recover_multiplier(problem, &vi, vi_cfg)?;
    let lambda_pen = extract_multiplier(&pen);
    let entry = multiplier_uniqueness_check(problem, &pen, &vi, &rec.lambda, vi_cfg.contact_tol);
    let columns = [
        "epsilon",
        "common_inactive",
        "inactive_max_diff",
        "activity_disagreements",
        "contact_l1",
        "total_l1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut report = StudyReport::new("uniqueness", problem.scenario.label(), columns);
    report.rows.push(vec![
        epsilon,
        entry.common_inactive as f64,
        entry.inactive_max_diff,
        entry.activity_disagreements as f64,
        entry.contact_l1,
        entry.total_l1,
    ]);
    report.check(
        "inactive_set_agreement",
        entry.pass,
        format!("max |k_hat - lambda| = {:e} on {} node-steps", entry.inactive_max_diff, entry.common_inactive),
    );
    report.audits.push(RunAudit {
        run: format!("pen eps={epsilon}"),
        report: audit_run(problem, &pen.trajectory, &lambda_pen, delta0, p_list, audit_slack)?,
    });
    report.audits.push(RunAudit {
        run: "vi".into(),
        report: audit_run(problem, &vi, &rec.lambda, delta0, p_list, audit_slack)?,
    });
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Scenario, ScenarioSpec};

    fn problem(f: [&str; 2], u0: [&str; 2], delta: f64, nodes: usize, tau: f64) -> Problem {
        let spec = ScenarioSpec {
            label: "study".into(),
            dim: 1,
            extents: vec![1.0],
            nodes: vec![nodes],
            components: 2,
            horizon: 1.0,
            delta,
            f: f.iter().map(|s| s.to_string()).collect(),
            u0: u0.iter().map(|s| s.to_string()).collect(),
        };
        Problem::new(Scenario::new(spec).unwrap(), tau).unwrap()
    }

    fn templates(delta: f64, tau: f64) -> (PenRunConfig, ViRunConfig) {
        (
            PenRunConfig::new(PenaltyParams::new(0.1, delta, 1.0).unwrap(), tau),
            ViRunConfig::new(delta, tau),
        )
    }

    #[test]
    fn monotonicity_verdict() {
        assert!(non_increasing(&[1.0, 1.04, 0.5], 0.05));
        assert!(!non_increasing(&[1.0, 1.06], 0.05));
        assert!(non_increasing(&[1e-9, 5e-9], 0.05));
    }

    #[test]
    fn inactive_epsilon_study_is_at_tolerance() {
        let pb = problem(["2*sin(3.141592653589793*x)", "1"], ["0", "0"], 0.1, 33, 0.02);
        let (pen, vi) = templates(0.1, 0.02);
        let r = epsilon_study(&pb, &[1e-1, 1e-2, 1e-3], &pen, &vi, &[2.0], 0.02).unwrap();
        assert!(r.pass, "{:?}", r.checks);
        for col in ["u_err_l2", "violation_l1", "complementarity_l1", "lambda_err_l1"] {
            assert!(r.column(col).unwrap().iter().all(|v| *v <= 1e-7), "{col}");
        }
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("epsilon,u_err_l2,"));
    }

    #[test]
    fn saturating_epsilon_study() {
        let pb = problem(["12", "0"], ["0", "0"], 0.1, 33, 0.02);
        let (pen, vi) = templates(0.1, 0.02);
        let r = epsilon_study(&pb, &[1e-1, 1e-2, 1e-3], &pen, &vi, &[2.0, 4.0], 0.02).unwrap();
        assert!(r.pass, "{:?}", r.checks);
        let err = r.column("u_err_l2").unwrap();
        assert!(err[2] < err[0] / 10.0);
        assert_eq!(r.audits.len(), 4);
    }

    #[test]
    fn rejects_bad_lists() {
        let pb = problem(["0", "0"], ["0", "0"], 0.1, 9, 0.1);
        let (pen, vi) = templates(0.1, 0.1);
        assert!(epsilon_study(&pb, &[], &pen, &vi, &[2.0], 0.02).is_err());
        assert!(epsilon_study(&pb, &[1e-2, 1e-1], &pen, &vi, &[2.0], 0.02).is_err());
        assert!(epsilon_study(&pb, &[1e-1], &pen, &vi, &[0.0], 0.02).is_err());
        let g = vec![Expr::parse("1").unwrap(), Expr::parse("0").unwrap()];
        assert!(dependence_study(&pb, &g, &[], &vi, 1.0, &[2.0], 0.02).is_err());
    }

    #[test]
    fn zero_perturbation_gives_zero_difference() {
        let pb = problem(["14", "0"], ["0.5*sin(3.141592653589793*x)", "0"], 0.2, 33, 0.02);
        let (_, vi) = templates(0.2, 0.02);
        let g = vec![Expr::parse("0").unwrap(), Expr::parse("0").unwrap()];
        let r = dependence_study(&pb, &g, &[1.0, 2.0], &vi, 1.0, &[2.0], 0.02).unwrap();
        assert!(r.pass, "{:?}", r.checks);
        assert!(r.column("lhs_final").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dependence_decays_like_inverse_square() {
        let pb = problem(
            ["14*sin(3.141592653589793*x)", "4*cos(6.283185307179586*t)"],
            ["0.5*sin(3.141592653589793*x)", "0"],
            0.2,
            33,
            0.02,
        );
        let (_, vi) = templates(0.2, 0.02);
        let g: Vec<Expr> = ["4*x*(1 - x)", "2*sin(6.283185307179586*t)"]
            .iter()
            .map(|s| Expr::parse(s).unwrap())
            .collect();
        let r = dependence_study(&pb, &g, &[1.0, 2.0, 4.0, 8.0, 1e7], &vi, 1.0, &[2.0], 0.02).unwrap();
        assert!(r.pass, "{:?}", r.checks);
        let lhs = r.column("lhs_final").unwrap();
        assert!(lhs[4] <= 1e-12, "{lhs:?}");
    }

    #[test]
    fn uniqueness_inactive_agreement_and_shift() {
        let pb = problem(["12", "3*x"], ["0", "0"], 0.1, 33, 0.02);
        let (pen, vi) = templates(0.1, 0.02);
        let r = uniqueness_study(&pb, 1e-3, &pen, &vi, &[2.0], 0.02).unwrap();
        assert!(r.check_named("inactive_set_agreement").unwrap().pass);
        assert!(r.column("common_inactive").unwrap()[0] > 0.0);

        // Shifting δ shifts both multiplier floors by the same amount.
        let shifted = Problem::new(pb.scenario.with_delta(0.3).unwrap(), 0.02).unwrap();
        let (pen_s, vi_s) = templates(0.3, 0.02);
        let cfg = pen_config(&pen_s, 1e-3).unwrap();
        let run = pen_run(&shifted, &cfg).unwrap();
        let traj = vi_run(&shifted, &vi_s).unwrap();
        let rec = recover_multiplier(&shifted, &traj, &vi_s).unwrap();
        let min_pen = run.k_hat.iter().map(|k| k.min_interior(&shifted.grid)).fold(f64::INFINITY, f64::min);
        let min_vi = rec.lambda.iter().map(|k| k.min_interior(&shifted.grid)).fold(f64::INFINITY, f64::min);
        assert_eq!(min_pen, 0.3);
        assert_eq!(min_vi, 0.3);
    }
}
