//! Time-indexed solver output and its on-disk layout:
//! `u/step_NNNNN.csv`, `lambda/step_NNNNN.csv` and `manifest.json`.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{write_field_csv, Grid, ScalarField, VectorField};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub time: f64,
    /// Nonlinear iterations (penalty) or sweeps (PGS).
    pub iterations: usize,
    pub linear_iterations: usize,
    /// Final relative residual (penalty) or max nodal change (PGS).
    pub residual: f64,
}

/// `states[m]` is the field at `t_m = m τ`; `states[0]` is the initial datum.
/// `stats[m - 1]` describes step `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub states: Vec<VectorField>,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn time(&self, m: usize) -> f64 {
        m as f64 * self.tau
    }

    /// States at `t_1, ..., t_M`, the slice that time sums run over.
    pub fn after_initial(&self) -> &[VectorField] {
        &self.states[1..]
    }

    pub fn total_iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub solver: String,
    pub label: String,
    pub tau: f64,
    pub steps: usize,
    pub nodes: Vec<usize>,
    pub components: usize,
    pub snapshot_steps: Vec<usize>,
    pub stats: Vec<StepStats>,
}

/// Writes snapshots every `stride` steps (always including the first and last) and
/// the manifest. Existing files are overwritten.
pub fn write_trajectory(
    dir: &Path,
    grid: &Grid,
    solver: &str,
    label: &str,
    traj: &Trajectory,
    multiplier: &[ScalarField],
    stride: usize,
) -> Result<RunManifest> {
    let stride = stride.max(1);
    let m_last = traj.steps();
    let snapshot_steps: Vec<usize> = (0..=m_last)
        .filter(|m| m % stride == 0 || *m == m_last)
        .collect();
    fs::create_dir_all(dir.join("u"))?;
    fs::create_dir_all(dir.join("lambda"))?;
    for &m in &snapshot_steps {
        let name = format!("step_{m:05}.csv");
        let w = BufWriter::new(fs::File::create(dir.join("u").join(&name))?);
        write_field_csv(grid, &traj.states[m], w)?;
        if let Some(l) = multiplier.get(m) {
            let w = BufWriter::new(fs::File::create(dir.join("lambda").join(&name))?);
            write_field_csv(grid, &l.to_vector(), w)?;
        }
    }
    let manifest = RunManifest {
        solver: solver.to_string(),
        label: label.to_string(),
        tau: traj.tau,
        steps: m_last,
        nodes: grid.nodes_per_axis().to_vec(),
        components: traj.states[0].comps(),
        snapshot_steps,
        stats: traj.stats.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(manifest)
}
