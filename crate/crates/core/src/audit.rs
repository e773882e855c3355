//! A-priori bounds expressed through the data `(f, u0, Ω, T, δ₀)` and the audit of
//! a finished run against them.
//!
//! Data norms are discrete: `‖f‖²_{L²(Q_T)} = Σ_{m=1..M} τ ‖f(t_m)‖²_h`, matching
//! the time sums of the measured quantities. `|Q_T| = |Ω| M τ`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    grad_norm_sq, inner, l2_norm_sq, lp_norm_spacetime, poincare_constant, ScalarField, VectorField,
};
use crate::scenario::Problem;
use crate::trajectory::Trajectory;

pub const DEFAULT_AUDIT_SLACK: f64 = 0.02;

/// Inputs of every bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataNorms {
    pub f_linf: f64,
    pub f_l2: f64,
    pub u0_l2: f64,
    pub grad_u0_l2: f64,
    pub poincare: f64,
    pub q_measure: f64,
    pub omega_measure: f64,
    pub delta0: f64,
}

impl DataNorms {
    pub fn from_problem(problem: &Problem, delta0: f64) -> Result<Self> {
        let grid = &problem.grid;
        let mut f_l2_sq = 0.0;
        let mut f_linf: f64 = 0.0;
        for m in 0..=problem.steps {
            let f = problem.forcing(m)?;
            if m > 0 {
                f_l2_sq += problem.tau * l2_norm_sq(grid, &f);
            }
            f_linf = f_linf.max(f.max_magnitude());
        }
        Ok(Self {
            f_linf,
            f_l2: f_l2_sq.sqrt(),
            u0_l2: l2_norm_sq(grid, &problem.u0).sqrt(),
            grad_u0_l2: grad_norm_sq(grid, &problem.u0).sqrt(),
            poincare: poincare_constant(grid),
            q_measure: grid.measure() * problem.steps as f64 * problem.tau,
            omega_measure: grid.measure(),
            delta0,
        })
    }
}

/// `B = C² ‖f‖² + ‖u0‖²`, the common bound of `‖u‖²_{L∞(L²)}`, `‖∇u‖²_{L²(Q_T)}`
/// and `2 ‖k̂ |u|²‖_{L¹(Q_T)}`.
pub fn bound_energy(d: &DataNorms) -> f64 {
    d.poincare.powi(2) * d.f_l2.powi(2) + d.u0_l2.powi(2)
}

/// `C²/2 ‖f‖² + ½‖u0‖² + δ₀/2 |Q_T|`.
pub fn bound_k_l1(d: &DataNorms) -> f64 {
    0.5 * d.poincare.powi(2) * d.f_l2.powi(2) + 0.5 * d.u0_l2.powi(2) + 0.5 * d.delta0 * d.q_measure
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("exponent p must be finite and >= 1, got {p}")))
    }
}

/// `C_p = [2^{k-1}(2|Q_T| + C_{k,1} k!)]^{1/(2k)} |Q_T|^{1/p - 1/(2k)}` with
/// `k = ⌈p/2⌉` and `C_{k,1}` from [`bound_k_l1`].
pub fn bound_u_lp(d: &DataNorms, p: f64) -> Result<f64> {
    check_p(p)?;
    let k = (p / 2.0).ceil() as u32;
    let two_k = 2.0 * f64::from(k);
    let inner = 2f64.powi(k as i32 - 1) * (2.0 * d.q_measure + bound_k_l1(d) * factorial(k));
    Ok(inner.powf(1.0 / two_k) * d.q_measure.powf(1.0 / p - 1.0 / two_k))
}

/// `(‖f‖∞^p C_p^p + δ₀^{p-1} p/2 ‖u0‖² + δ₀^p p |Q_T|)^{1/p}`.
pub fn bound_k_lp(d: &DataNorms, p: f64) -> Result<f64> {
    let cp = bound_u_lp(d, p)?;
    let sum = d.f_linf.powf(p) * cp.powf(p)
        + d.delta0.powf(p - 1.0) * p / 2.0 * d.u0_l2.powi(2)
        + d.delta0.powf(p) * p * d.q_measure;
    Ok(sum.powf(1.0 / p))
}

/// `δ₀|Ω| + ‖f‖² + ‖∇u0‖² + δ₀‖u0‖²`.
pub fn bound_dt(d: &DataNorms) -> f64 {
    d.delta0 * d.omega_measure + d.f_l2.powi(2) + d.grad_u0_l2.powi(2) + d.delta0 * d.u0_l2.powi(2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub bound: f64,
    pub measured: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub inputs: DataNorms,
    pub p_list: Vec<f64>,
    pub audit_slack: f64,
    pub records: Vec<EstimateRecord>,
    pub pass: bool,
}

impl EstimateReport {
    pub fn record(&self, name: &str, p: Option<f64>) -> Option<&EstimateRecord> {
        self.records.iter().find(|r| r.name == name && r.p == p)
    }

    pub fn failures(&self) -> impl Iterator<Item = &EstimateRecord> {
        self.records.iter().filter(|r| !r.pass)
    }
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>6} {:>14} {:>14}  result", "estimate", "p", "measured", "bound")?;
        for r in &self.records {
            let p = r.p.map(|p| format!("{p}")).unwrap_or_else(|| "-".into());
            let verdict = if r.pass { "pass" } else { "FAIL" };
            writeln!(f, "{:<24} {:>6} {:>14.6e} {:>14.6e}  {verdict}", r.name, p, r.measured, r.bound)?;
        }
        write!(f, "overall: {}", if self.pass { "pass" } else { "FAIL" })
    }
}

/// Measures a run against every bound. `multiplier[m]` pairs with `traj.states[m]`;
/// index 0 is ignored. Failures are report entries, not errors.
pub fn audit_run(
    problem: &Problem,
    traj: &Trajectory,
    multiplier: &[ScalarField],
    delta0: f64,
    p_list: &[f64],
    audit_slack: f64,
) -> Result<EstimateReport> {
    if multiplier.len() != traj.states.len() {
        return Err(Error::InvalidParameter(format!(
            "{} multiplier slices for {} states",
            multiplier.len(),
            traj.states.len()
        )));
    }
    for &p in p_list {
        check_p(p)?;
    }
    let grid = &problem.grid;
    let tau = traj.tau;
    let d = DataNorms::from_problem(problem, delta0)?;
    let states = traj.after_initial();
    let lambdas = &multiplier[1..];

    let mut sup_l2 = l2_norm_sq(grid, &traj.states[0]);
    let (mut grad_sum, mut ku_sum, mut combined) = (0.0, 0.0, sup_l2);
    let (mut dt_sum, mut sup_grad, mut dt_combined) = (0.0, grad_norm_sq(grid, &traj.states[0]), 0.0f64);
    let mut k_l1 = 0.0;
    for (m, (u, lam)) in states.iter().zip(lambdas).enumerate() {
        let u_sq = l2_norm_sq(grid, u);
        let grad = grad_norm_sq(grid, u);
        let mut lu = u.clone();
        for k in 0..grid.node_count() {
            let l = lam.values()[k];
            lu.node_mut(k).iter_mut().for_each(|x| *x *= l);
        }
        grad_sum += tau * grad;
        ku_sum += 2.0 * tau * inner(grid, &lu, u);
        sup_l2 = sup_l2.max(u_sq);
        combined = combined.max(u_sq + grad_sum + ku_sum);

        let du = u.sub(&traj.states[m]);
        dt_sum += l2_norm_sq(grid, &du) / tau;
        sup_grad = sup_grad.max(grad);
        dt_combined = dt_combined.max(dt_sum + grad);

        k_l1 += tau * grid.cell_volume() * grid.interior_nodes().map(|k| lam.values()[k]).sum::<f64>();
    }

    let mut records = Vec::new();
    let mut push = |name: &str, p: Option<f64>, bound: f64, measured: f64| {
        records.push(EstimateRecord {
            name: name.to_string(),
            p,
            bound,
            measured,
            pass: measured <= bound * (1.0 + audit_slack),
        });
    };
    let b = bound_energy(&d);
    push("energy.sup_l2", None, b, sup_l2);
    push("energy.grad_l2", None, b, grad_sum);
    push("energy.k_u2_l1", None, b, ku_sum);
    push("energy.combined", None, b, combined);
    push("k.l1", None, bound_k_l1(&d), k_l1);
    for &p in p_list {
        push("u.lp", Some(p), bound_u_lp(&d, p)?, lp_norm_spacetime(grid, states, tau, p)?);
        push("k.lp", Some(p), bound_k_lp(&d, p)?, lp_norm_spacetime(grid, lambdas, tau, p)?);
    }
    let bd = bound_dt(&d);
    push("dt.time_derivative", None, bd, dt_sum);
    push("dt.sup_grad", None, bd, sup_grad);
    push("dt.combined", None, bd, dt_combined);

    let pass = records.iter().all(|r| r.pass);
    Ok(EstimateReport {
        inputs: d,
        p_list: p_list.to_vec(),
        audit_slack,
        records,
        pass,
    })
}

/// Scales every state of a trajectory; used to check that the audit can fail.
pub fn scaled_trajectory(traj: &Trajectory, factor: f64) -> Trajectory {
    Trajectory {
        tau: traj.tau,
        states: traj.states.iter().map(|u| u.scaled(factor)).collect::<Vec<VectorField>>(),
        stats: traj.stats.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyParams;
    use crate::scenario::{Scenario, ScenarioSpec};
    use crate::solver_pen::{extract_multiplier, pen_run, PenRunConfig};
    use crate::solver_vi::{recover_multiplier, vi_run, ViRunConfig};
    use std::f64::consts::PI;

    fn reference() -> DataNorms {
        // f = (1, 0) on (0, 1), T = 1, u0 = 0.
        DataNorms {
            f_linf: 1.0,
            f_l2: 1.0,
            u0_l2: 0.0,
            grad_u0_l2: 0.0,
            poincare: 1.0 / PI,
            q_measure: 1.0,
            omega_measure: 1.0,
            delta0: 1.0,
        }
    }

    fn zero(delta0: f64) -> DataNorms {
        DataNorms {
            f_linf: 0.0,
            f_l2: 0.0,
            u0_l2: 0.0,
            grad_u0_l2: 0.0,
            delta0,
            ..reference()
        }
    }

    #[test]
    fn closed_form_values() {
        let d = reference();
        let c2 = 1.0 / (PI * PI);
        assert!((bound_energy(&d) - c2).abs() <= 1e-15);
        assert!((bound_energy(&d) - 0.10132).abs() < 1e-5);
        assert!((bound_k_l1(&d) - (0.5 * c2 + 0.5)).abs() <= 1e-15);
        assert!((bound_k_l1(&d) - 0.55066).abs() < 1e-5);
        assert_eq!(bound_k_l1(&zero(1.0)), 0.5);
        assert_eq!(bound_energy(&zero(1.0)), 0.0);
        // p = 2, zero data, δ₀ = 0: k = 1 and C_p = (2|Q_T|)^{1/2}.
        let z = DataNorms { q_measure: 1.7, ..zero(0.0) };
        assert!((bound_u_lp(&z, 2.0).unwrap() - (2.0f64 * 1.7).sqrt()).abs() <= 1e-15);
        assert_eq!(bound_k_lp(&zero(0.0), 2.0).unwrap(), 0.0);
        assert_eq!(bound_dt(&zero(0.0)), 0.0);
        // p = 4 by hand: k = 2, [2 (2 + 2 C)]^{1/4}.
        let ckl1 = 0.5 * c2 + 0.5;
        let expected = (2.0 * (2.0 + 2.0 * ckl1)).powf(0.25);
        assert!((bound_u_lp(&d, 4.0).unwrap() - expected).abs() <= 1e-14);
        // p = 3 uses k = 2 and the |Q_T|^{1/3 - 1/4} inclusion factor.
        let d3 = DataNorms { q_measure: 2.0, ..d };
        let ckl1 = 0.5 * c2 + 1.0;
        let expected = (2.0 * (4.0 + 2.0 * ckl1)).powf(0.25) * 2f64.powf(1.0 / 3.0 - 0.25);
        assert!((bound_u_lp(&d3, 3.0).unwrap() - expected).abs() <= 1e-14);
        let cp = bound_u_lp(&d, 2.0).unwrap();
        let expected = (cp * cp + 2.0).sqrt();
        assert!((bound_k_lp(&d, 2.0).unwrap() - expected).abs() <= 1e-14);
        assert!((bound_dt(&d) - 2.0).abs() <= 1e-15);
    }

    #[test]
    fn homogeneity_and_additivity() {
        let d = reference();
        let d2 = DataNorms { f_l2: 2.0, ..d };
        let f_term = |x: &DataNorms| bound_energy(x) - x.u0_l2.powi(2);
        assert!((f_term(&d2) - 4.0 * f_term(&d)).abs() <= 1e-15);
        let k_term = |x: &DataNorms| bound_k_l1(x) - 0.5 * x.delta0 * x.q_measure;
        assert!((k_term(&d2) - 4.0 * k_term(&d)).abs() <= 1e-15);
        let d3 = DataNorms { omega_measure: 3.0, ..d };
        assert!((bound_dt(&d3) - bound_dt(&d) - 2.0 * d.delta0).abs() <= 1e-14);
    }

    #[test]
    fn monotone_in_data() {
        let base = DataNorms {
            f_linf: 2.0,
            f_l2: 1.5,
            u0_l2: 0.3,
            grad_u0_l2: 1.1,
            ..reference()
        };
        let bounds = |d: &DataNorms| {
            let mut v = vec![bound_energy(d), bound_k_l1(d), bound_dt(d)];
            for p in [1.0, 2.0, 3.0, 4.5, 8.0] {
                v.push(bound_u_lp(d, p).unwrap());
                v.push(bound_k_lp(d, p).unwrap());
            }
            v
        };
        let tweaks: [fn(&mut DataNorms, f64); 4] = [
            |d, s| d.f_linf *= s,
            |d, s| d.f_l2 *= s,
            |d, s| d.u0_l2 *= s,
            |d, s| d.delta0 *= s,
        ];
        for tweak in tweaks {
            let mut prev = bounds(&base);
            for s in [1.1, 1.3, 2.0, 5.0] {
                let mut d = base;
                tweak(&mut d, s);
                let next = bounds(&d);
                for (a, b) in prev.iter().zip(&next) {
                    assert!(*a >= 0.0 && b >= a, "{a} -> {b}");
                }
                prev = next;
            }
        }
    }

    fn problem(f: [&str; 2], u0: [&str; 2], delta: f64) -> Problem {
        let spec = ScenarioSpec {
            label: "audit".into(),
            dim: 1,
            extents: vec![1.0],
            nodes: vec![65],
            components: 2,
            horizon: 1.0,
            delta,
            f: f.iter().map(|s| s.to_string()).collect(),
            u0: u0.iter().map(|s| s.to_string()).collect(),
        };
        Problem::new(Scenario::new(spec).unwrap(), 0.01).unwrap()
    }

    #[test]
    fn zero_run_passes_with_zero_measurements() {
        let pb = problem(["0", "0"], ["0", "0"], 0.0);
        let run = pen_run(&pb, &PenRunConfig::new(PenaltyParams::new(0.1, 0.0, 1.0).unwrap(), 0.01)).unwrap();
        let report = audit_run(&pb, &run.trajectory, &extract_multiplier(&run), 1.0, &[2.0, 4.0], 0.02).unwrap();
        assert!(report.pass);
        for r in &report.records {
            assert_eq!(r.measured, 0.0, "{}", r.name);
        }
    }

    #[test]
    fn reference_run_passes_and_corruption_fails() {
        let pb = problem(["1", "0"], ["0", "0"], 0.1);
        let run = pen_run(&pb, &PenRunConfig::new(PenaltyParams::new(1e-2, 0.1, 1.0).unwrap(), 0.01)).unwrap();
        let lam = extract_multiplier(&run);
        let report = audit_run(&pb, &run.trajectory, &lam, 1.0, &[2.0, 4.0], 0.02).unwrap();
        assert!(report.pass, "{report}");
        let bad = scaled_trajectory(&run.trajectory, 10.0);
        let report = audit_run(&pb, &bad, &lam, 1.0, &[2.0, 4.0], 0.02).unwrap();
        assert!(!report.record("energy.sup_l2", None).unwrap().pass);
        assert!(!report.pass);
    }

    #[test]
    fn saturating_runs_pass_for_both_routes() {
        let pb = problem(["14*cos(3*t)", "14*sin(3*t)"], ["0.5*sin(3.141592653589793*x)", "0"], 0.1);
        for eps in [1e-1, 1e-2, 1e-3] {
            let run = pen_run(&pb, &PenRunConfig::new(PenaltyParams::new(eps, 0.1, 1.0).unwrap(), 0.01)).unwrap();
            let report =
                audit_run(&pb, &run.trajectory, &extract_multiplier(&run), 1.0, &[2.0, 3.0, 4.0], 0.02).unwrap();
            assert!(report.pass, "eps {eps}\n{report}");
        }
        let cfg = ViRunConfig::new(0.1, 0.01);
        let traj = vi_run(&pb, &cfg).unwrap();
        let rec = recover_multiplier(&pb, &traj, &cfg).unwrap();
        let report = audit_run(&pb, &traj, &rec.lambda, 1.0, &[2.0, 4.0], 0.02).unwrap();
        assert!(report.pass, "{report}");
        let json = serde_json::to_string(&report).unwrap();
        let back: EstimateReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn rejects_bad_input() {
        let pb = problem(["0", "0"], ["0", "0"], 0.0);
        let run = pen_run(&pb, &PenRunConfig::new(PenaltyParams::new(0.1, 0.0, 1.0).unwrap(), 0.01)).unwrap();
        let lam = extract_multiplier(&run);
        assert!(audit_run(&pb, &run.trajectory, &lam[1..], 1.0, &[2.0], 0.02).is_err());
        assert!(audit_run(&pb, &run.trajectory, &lam, 1.0, &[0.5], 0.02).is_err());
    }
}
