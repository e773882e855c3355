use std::fs;

use ballvi_core::grid::read_field_csv;
use ballvi_core::trajectory::write_trajectory;
use ballvi_core::{
    audit_run, epsilon_study, extract_multiplier, pen_run, recover_multiplier, uniqueness_study, vi_run,
    PenRunConfig, PenaltyParams, Problem, Scenario, ViRunConfig,
};

fn coarse(name: &str, nodes: &[usize], horizon: f64, tau: f64) -> Problem {
    let scenario = Scenario::catalog(name).unwrap().with_resolution(nodes, horizon).unwrap();
    Problem::new(scenario, tau).unwrap()
}

#[test]
fn catalog_scenarios_build() {
    for name in Scenario::catalog_names() {
        let s = Scenario::catalog(name).unwrap();
        assert_eq!(s.label(), *name);
        let pb = Problem::with_default_step(s).unwrap();
        assert_eq!(pb.steps, 200);
        assert!(pb.u0.max_magnitude() <= 1.0);
    }
    assert!(Scenario::catalog("nonexistent").is_none());
}

#[test]
fn trajectory_files_round_trip() {
    let pb = coarse("saturating-1d", &[33], 0.1, 0.01);
    let cfg = PenRunConfig::new(PenaltyParams::new(1e-2, pb.delta(), 1.0).unwrap(), pb.tau);
    let run = pen_run(&pb, &cfg).unwrap();
    let lambda = extract_multiplier(&run);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_trajectory(dir.path(), &pb.grid, "pen", "saturating-1d", &run.trajectory, &lambda, 3).unwrap();
    assert_eq!(manifest.snapshot_steps, vec![0, 3, 6, 9, 10]);
    for &m in &manifest.snapshot_steps {
        let text = fs::read_to_string(dir.path().join(format!("u/step_{m:05}.csv"))).unwrap();
        let back = read_field_csv(&pb.grid, &text).unwrap();
        assert_eq!(back.values(), run.trajectory.states[m].values());
    }
    let text = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(text.contains("\"solver\": \"pen\""));
}

#[test]
fn both_routes_pass_audit_on_coarse_2d() {
    let pb = coarse("rotating-2d", &[17, 17], 0.25, 0.0125);
    let vi = ViRunConfig::new(pb.delta(), pb.tau);
    let traj = vi_run(&pb, &vi).unwrap();
    let rec = recover_multiplier(&pb, &traj, &vi).unwrap();
    assert!(audit_run(&pb, &traj, &rec.lambda, 1.0, &[2.0, 4.0], 0.02).unwrap().pass);

    let cfg = PenRunConfig::new(PenaltyParams::new(1e-2, pb.delta(), 1.0).unwrap(), pb.tau);
    let run = pen_run(&pb, &cfg).unwrap();
    let lambda = extract_multiplier(&run);
    assert!(audit_run(&pb, &run.trajectory, &lambda, 1.0, &[2.0, 4.0], 0.02).unwrap().pass);
}

#[test]
fn coarse_epsilon_study() {
    let pb = coarse("saturating-1d", &[33], 0.5, 0.01);
    let pen = PenRunConfig::new(PenaltyParams::new(1e-1, pb.delta(), 1.0).unwrap(), pb.tau);
    let vi = ViRunConfig::new(pb.delta(), pb.tau);
    let report = epsilon_study(&pb, &[1e-1, 1e-2, 1e-3], &pen, &vi, &[2.0], 0.02).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.file_stem(), "saturating-1d_epsilon");
    let err = report.column("u_err_l2").unwrap();
    assert!(err[2] < err[0]);
    assert!(report.check_named("violation_within_decay_bound").unwrap().pass);

    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("epsilon,u_err_l2,"));
}

#[test]
fn inactive_uniqueness_is_exact() {
    let pb = coarse("inactive-1d", &[33], 0.5, 0.01);
    let pen = PenRunConfig::new(PenaltyParams::new(1e-3, pb.delta(), 1.0).unwrap(), pb.tau);
    let vi = ViRunConfig::new(pb.delta(), pb.tau);
    let report = uniqueness_study(&pb, 1e-3, &pen, &vi, &[2.0], 0.02).unwrap();
    assert_eq!(report.column("inactive_max_diff").unwrap(), vec![0.0]);
    assert_eq!(report.column("activity_disagreements").unwrap(), vec![0.0]);
    assert!(report.pass);
}
