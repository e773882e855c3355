//! Matrix-free conjugate gradients for `((1/τ + c(x)) I_N - Δ_h) u = b`, optionally
//! with a per-node rank-one term `γ(x) w(x) w(x)ᵀ` (γ ≥ 0) used by the Newton
//! linearization of the penalty. Every such operator is SPD on interior nodes.

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

/// Per-node rank-one block `γ w wᵀ`.
#[derive(Clone, Debug)]
pub struct RankOne {
    pub weights: Vec<f64>,
    pub dirs: VectorField,
}

#[derive(Clone, Debug)]
pub struct ShiftedOperator<'g> {
    grid: &'g Grid,
    tau: f64,
    shift: ScalarField,
    rank_one: Option<RankOne>,
}

impl<'g> ShiftedOperator<'g> {
    pub fn new(grid: &'g Grid, tau: f64, shift: ScalarField) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {tau}")));
        }
        if shift.values().len() != grid.node_count() {
            return Err(Error::InvalidParameter("shift field does not match grid".into()));
        }
        if let Some(k) = grid.interior_nodes().find(|&k| !(shift.values()[k] >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "shift must be nonnegative, got {} at node {k}",
                shift.values()[k]
            )));
        }
        Ok(Self {
            grid,
            tau,
            shift,
            rank_one: None,
        })
    }

    pub fn with_rank_one(mut self, rank_one: RankOne) -> Self {
        debug_assert!(rank_one.weights.iter().all(|w| *w >= 0.0));
        self.rank_one = Some(rank_one);
        self
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    /// `y = A x` on interior nodes, zero on the boundary.
    pub fn apply_into(&self, x: &[f64], comps: usize, y: &mut [f64]) {
        self.grid.neg_laplacian_into(x, comps, y);
        let inv_tau = 1.0 / self.tau;
        let c = self.shift.values();
        for k in self.grid.interior_nodes() {
            let d = inv_tau + c[k];
            let base = k * comps;
            for i in base..base + comps {
                y[i] += d * x[i];
            }
            if let Some(r1) = &self.rank_one {
                let w = r1.weights[k];
                if w != 0.0 {
                    let dir = r1.dirs.node(k);
                    let proj: f64 = (0..comps).map(|i| dir[i] * x[base + i]).sum();
                    for i in 0..comps {
                        y[base + i] += w * proj * dir[i];
                    }
                }
            }
        }
    }

    pub fn apply(&self, x: &VectorField) -> VectorField {
        let mut y = VectorField::zeros(self.grid, x.comps());
        self.apply_into(x.values(), x.comps(), y.values_mut());
        y
    }

    /// `z = B⁻¹ r` with `B` the nodal `N x N` diagonal block, inverted by Sherman-Morrison.
    fn block_jacobi_into(&self, r: &[f64], comps: usize, z: &mut [f64]) {
        let base = 1.0 / self.tau + self.grid.stencil_diagonal();
        z.copy_from_slice(r);
        for k in self.grid.interior_nodes() {
            let a = base + self.shift.values()[k];
            let zk = &mut z[k * comps..(k + 1) * comps];
            zk.iter_mut().for_each(|v| *v /= a);
            if let Some(r1) = &self.rank_one {
                let w = r1.weights[k];
                if w != 0.0 {
                    let d = r1.dirs.node(k);
                    let dd: f64 = d.iter().map(|x| x * x).sum();
                    let dz: f64 = d.iter().zip(zk.iter()).map(|(x, y)| x * y).sum();
                    let coef = w * dz / (a + w * dd);
                    zk.iter_mut().zip(d).for_each(|(v, x)| *v -= coef * x);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Nodal block-Jacobi preconditioning.
    pub jacobi: bool,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20_000,
            jacobi: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: VectorField,
    pub iterations: usize,
    /// Final `‖A u - b‖₂ / ‖b‖₂` over interior nodes (zero when `b = 0`).
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `op(u) = rhs` on interior nodes; boundary values of `rhs` are ignored and
/// those of the solution are zero. The returned residual is recomputed from scratch.
pub fn cg_solve(op: &ShiftedOperator<'_>, rhs: &VectorField, opts: CgOptions) -> Result<CgOutcome> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("cg tolerance must be positive, got {}", opts.tol)));
    }
    if !rhs.is_finite() {
        return Err(Error::InvalidParameter("cg right-hand side is not finite".into()));
    }
    let grid = op.grid;
    let comps = rhs.comps();
    let n = rhs.values().len();
    let mut b = rhs.clone();
    b.zero_boundary(grid);
    let b = b.values().to_vec();
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            solution: VectorField::from_values(comps, x),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let apply_precond = |r: &[f64], z: &mut [f64]| {
        if opts.jacobi {
            op.block_jacobi_into(r, comps, z);
        } else {
            z.copy_from_slice(r);
        }
    };

    let target = opts.tol * bnorm;
    let mut r = b.clone();
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut iterations = 0;
    let mut restarts = 0;
    'outer: loop {
        apply_precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        loop {
            if dot(&r, &r).sqrt() <= target {
                // Confirm against the true residual; recursive residuals drift.
                op.apply_into(&x, comps, &mut q);
                for i in 0..n {
                    r[i] = b[i] - q[i];
                }
                let true_res = dot(&r, &r).sqrt();
                if true_res <= target {
                    break 'outer;
                }
                restarts += 1;
                if restarts > 5 {
                    return Err(Error::CgNotConverged {
                        iterations,
                        residual: true_res / bnorm,
                    });
                }
                continue 'outer;
            }
            if iterations >= opts.max_iter {
                return Err(Error::CgNotConverged {
                    iterations,
                    residual: dot(&r, &r).sqrt() / bnorm,
                });
            }
            op.apply_into(&p, comps, &mut q);
            let pq = dot(&p, &q);
            if !(pq > 0.0) {
                return Err(Error::CgNotConverged {
                    iterations,
                    residual: dot(&r, &r).sqrt() / bnorm,
                });
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            apply_precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
    let relative_residual = dot(&r, &r).sqrt() / bnorm;
    Ok(CgOutcome {
        solution: VectorField::from_values(comps, x),
        iterations,
        relative_residual,
    })
}
