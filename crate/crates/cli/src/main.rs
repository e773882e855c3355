mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ballvi_core::experiments::{dependence_study, epsilon_study, uniqueness_study};
use ballvi_core::solver_vi::variational_check;
use ballvi_core::trajectory::write_trajectory;
use ballvi_core::{
    audit_run, extract_multiplier, pen_run, recover_multiplier, vi_run, EstimateReport, Expr, Scenario,
    StudyReport,
};
use clap::{Parser, Subcommand};

use config::{ConfigError, ConfigFile};

#[derive(Parser)]
#[command(name = "ballvi", version, about = "Unit-ball constrained parabolic systems: runs, audits and studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for study-internal parallelism (0 = sequential).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Penalized run, multiplier extraction and audit.
    RunPen {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Constrained reference run, multiplier recovery and audit.
    RunVi {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// epsilon, dependence or uniqueness study, per `study.type`.
    Study {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Config(String),
    Solver(String),
    Audit(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

fn solver(e: impl std::fmt::Display) -> Failure {
    Failure::Solver(e.to_string())
}

fn write_json(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Solver(format!("writing {}: {e}", path.display())))
}

fn report_json(report: &EstimateReport) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(report).map_err(solver)?;
    s.push('\n');
    Ok(s)
}

/// Writes the report to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn finish_audit(report: &EstimateReport) -> Result<(), Failure> {
    emit(&format!("{report}\n"));
    if report.pass {
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().map(|r| r.name.as_str()).collect();
        Err(Failure::Audit(format!("audit failed: {}", names.join(", "))))
    }
}

fn run_pen(cfg: &ConfigFile, out: &Path) -> Result<(), Failure> {
    let problem = cfg.problem()?;
    let pen = cfg.pen_config(&problem, None)?;
    let (p_list, slack) = cfg.audit_params(None)?;
    let run = pen_run(&problem, &pen).map_err(solver)?;
    let lambda = extract_multiplier(&run);
    let report = audit_run(&problem, &run.trajectory, &lambda, pen.penalty.delta0, &p_list, slack).map_err(solver)?;
    write_trajectory(
        out,
        &problem.grid,
        "pen",
        problem.scenario.label(),
        &run.trajectory,
        &lambda,
        cfg.output.snapshot_stride,
    )
    .map_err(solver)?;
    write_json(&out.join("audit.json"), &report_json(&report)?)?;
    finish_audit(&report)
}

fn run_vi(cfg: &ConfigFile, out: &Path, seed: u64) -> Result<(), Failure> {
    let problem = cfg.problem()?;
    let vi = cfg.vi_config(&problem)?;
    let (p_list, slack) = cfg.audit_params(None)?;
    let traj = vi_run(&problem, &vi).map_err(solver)?;
    let rec = recover_multiplier(&problem, &traj, &vi).map_err(solver)?;
    let report = audit_run(&problem, &traj, &rec.lambda, cfg.penalty.delta0, &p_list, slack).map_err(solver)?;
    write_trajectory(
        out,
        &problem.grid,
        "vi",
        problem.scenario.label(),
        &traj,
        &rec.lambda,
        cfg.output.snapshot_stride,
    )
    .map_err(solver)?;
    write_json(&out.join("audit.json"), &report_json(&report)?)?;

    // Spot-check the variational inequality at the first, middle and last step.
    let steps = traj.steps();
    let mut checked: Vec<usize> = vec![1, steps.div_ceil(2), steps];
    checked.dedup();
    let mut worst = f64::INFINITY;
    for &m in &checked {
        let f = problem.forcing(m).map_err(solver)?;
        let slack = variational_check(&problem.grid, &traj.states[m], &traj.states[m - 1], &f, &vi, 100, seed ^ m as u64);
        worst = worst.min(slack);
    }
    log::info!("variational inequality: worst normalized slack {worst:.3e} (seed {seed})");
    if !rec.floor_violations.is_empty() {
        log::warn!(
            "{} multiplier values below delta - {:e}; min excess {:.3e}",
            rec.floor_violations.len(),
            vi.lambda_floor_slack,
            rec.min_excess
        );
    }
    finish_audit(&report)?;
    if worst < -1e-6 {
        return Err(Failure::Audit(format!("variational inequality violated: slack {worst:.3e}")));
    }
    Ok(())
}

fn study(cfg: &ConfigFile, out: &Path) -> Result<(), Failure> {
    let Some(study) = &cfg.study else {
        return Err(Failure::Config("study: section required for the study command".into()));
    };
    let problem = cfg.problem()?;
    let vi = cfg.vi_config(&problem)?;
    let (p_list, slack) = cfg.audit_params(study.p_list.as_ref())?;
    let eps_list = || -> Result<Vec<f64>, Failure> {
        let list = study
            .eps_list
            .clone()
            .ok_or_else(|| Failure::Config("study.eps_list: required".into()))?;
        if list.is_empty() {
            return Err(Failure::Config("study.eps_list: must not be empty".into()));
        }
        if list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Failure::Config(format!("study.eps_list: must be strictly decreasing, got {list:?}")));
        }
        Ok(list)
    };
    let report: StudyReport = match study.kind.as_str() {
        "epsilon" => {
            let list = eps_list()?;
            let pen = cfg.pen_config(&problem, Some(list[0]))?;
            for &e in &list {
                cfg.pen_config(&problem, Some(e))?;
            }
            epsilon_study(&problem, &list, &pen, &vi, &p_list, slack).map_err(solver)?
        }
        "dependence" => {
            let n_list = study
                .n_list
                .clone()
                .ok_or_else(|| Failure::Config("study.n_list: required".into()))?;
            if n_list.is_empty() {
                return Err(Failure::Config("study.n_list: must not be empty".into()));
            }
            if let Some(n) = n_list.iter().find(|n| !(**n > 0.0 && n.is_finite())) {
                return Err(Failure::Config(format!("study.n_list: entries must be positive, got {n}")));
            }
            let sources = study.perturbation.clone().unwrap_or_else(Scenario::default_perturbation);
            if sources.len() != problem.scenario.components() {
                return Err(Failure::Config(format!(
                    "study.perturbation: expected {} expressions, got {}",
                    problem.scenario.components(),
                    sources.len()
                )));
            }
            let g = sources
                .iter()
                .map(|s| Expr::parse(s).map_err(|e| Failure::Config(format!("study.perturbation: `{s}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            dependence_study(&problem, &g, &n_list, &vi, cfg.penalty.delta0, &p_list, slack).map_err(solver)?
        }
        "uniqueness" => {
            let eps = match &study.eps_list {
                Some(_) => *eps_list()?.last().expect("non-empty"),
                None => cfg
                    .penalty
                    .epsilon
                    .ok_or_else(|| Failure::Config("study.eps_list: required (or penalty.epsilon)".into()))?,
            };
            let pen = cfg.pen_config(&problem, Some(eps))?;
            uniqueness_study(&problem, eps, &pen, &vi, &p_list, slack).map_err(solver)?
        }
        other => {
            return Err(Failure::Config(format!(
                "study.type: unknown study type `{other}` (expected epsilon, dependence or uniqueness)"
            )))
        }
    };

    fs::create_dir_all(out).map_err(solver)?;
    let stem = report.file_stem();
    let mut csv = Vec::new();
    report.write_csv(&mut csv).map_err(solver)?;
    fs::write(out.join(format!("{stem}.csv")), &csv).map_err(solver)?;
    write_json(&out.join(format!("{stem}.json")), &report.to_json().map_err(solver)?)?;

    let mut table = String::from_utf8_lossy(&csv).into_owned();
    for c in &report.checks {
        table += &format!("{:<32} {}  {}\n", c.name, if c.pass { "pass" } else { "FAIL" }, c.detail);
    }
    for a in &report.audits {
        table += &format!("audit {:<26} {}\n", a.run, if a.report.pass { "pass" } else { "FAIL" });
    }
    emit(&table);
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Audit(format!("study `{}` failed", report.study)))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BALLVI_LOG", "warn")).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    let result = pool.install(|| {
        let (path, out) = match &cli.command {
            Command::RunPen { config, out } | Command::RunVi { config, out } | Command::Study { config, out } => {
                (config, out)
            }
        };
        let cfg = ConfigFile::load(path)?;
        match &cli.command {
            Command::RunPen { .. } => run_pen(&cfg, out),
            Command::RunVi { .. } => run_vi(&cfg, out, cli.seed),
            Command::Study { .. } => study(&cfg, out),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Audit(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}
