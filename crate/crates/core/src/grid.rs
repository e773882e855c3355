//! Uniform box grids with homogeneous Dirichlet boundary, nodal fields, the
//! five-point (three-point in 1D) Laplacian and the discrete norms used by the
//! solvers and the auditor.
//!
//! Quadrature is nodal: every interior node carries weight `h^d`, boundary nodes
//! carry weight zero. Time integrals are Riemann sums with step `τ` over the slices
//! handed in by the caller. All reductions run sequentially in node order.

use std::io::Write;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: [f64; 2],
    nodes: [usize; 2],
    h: [f64; 2],
    boundary: Vec<bool>,
}

impl Grid {
    pub fn new(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        let dim = extents.len();
        if !(dim == 1 || dim == 2) || nodes.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "grid needs 1 or 2 axes with matching node counts, got extents {extents:?} nodes {nodes:?}"
            )));
        }
        for (&l, &n) in extents.iter().zip(nodes) {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("extent must be positive, got {l}")));
            }
            if n < 3 {
                return Err(Error::InvalidParameter(format!(
                    "need at least 3 nodes per axis, got {n}"
                )));
            }
        }
        let mut e = [1.0, 1.0];
        let mut n = [nodes[0], 1];
        let mut h = [extents[0] / (nodes[0] - 1) as f64, 1.0];
        e[0] = extents[0];
        if dim == 2 {
            e[1] = extents[1];
            n[1] = nodes[1];
            h[1] = extents[1] / (nodes[1] - 1) as f64;
        }
        let mut grid = Grid {
            dim,
            extents: e,
            nodes: n,
            h,
            boundary: Vec::new(),
        };
        grid.boundary = (0..grid.node_count())
            .map(|k| {
                let (i, j) = grid.ij(k);
                let bx = i == 0 || i == n[0] - 1;
                let by = dim == 2 && (j == 0 || j == n[1] - 1);
                bx || by
            })
            .collect();
        Ok(grid)
    }

    pub fn new_1d(length: f64, nodes: usize) -> Result<Self> {
        Self::new(&[length], &[nodes])
    }

    pub fn new_2d(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::new(&[lx, ly], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dim]
    }

    pub fn nodes_per_axis(&self) -> &[usize] {
        &self.nodes[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0] * self.nodes[1]
    }

    /// Quadrature weight `h^d` of an interior node.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Lebesgue measure of the box.
    pub fn measure(&self) -> f64 {
        self.extents().iter().product()
    }

    /// Sum of `2 / h_i²`, the diagonal of the discrete `-Δ`.
    pub fn stencil_diagonal(&self) -> f64 {
        self.spacing().iter().map(|h| 2.0 / (h * h)).sum()
    }

    #[inline]
    pub fn ij(&self, node: usize) -> (usize, usize) {
        (node % self.nodes[0], node / self.nodes[0])
    }

    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.ij(node);
        let y = if self.dim == 2 { j as f64 * self.h[1] } else { 0.0 };
        (i as f64 * self.h[0], y)
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&k| !self.boundary[k])
    }

    /// Applies `-Δ_h` to raw node-major data with `comps` components per node.
    /// Boundary entries of `input` are read as zero; boundary entries of `out` are set to zero.
    pub fn neg_laplacian_into(&self, input: &[f64], comps: usize, out: &mut [f64]) {
        let nx = self.nodes[0];
        let ny = self.nodes[1];
        let ix2 = 1.0 / (self.h[0] * self.h[0]);
        let iy2 = 1.0 / (self.h[1] * self.h[1]);
        let diag = self.stencil_diagonal();
        for k in 0..self.node_count() {
            if self.boundary[k] {
                out[k * comps..(k + 1) * comps].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let two_d = self.dim == 2;
        let (j0, j1) = if two_d { (1, ny - 1) } else { (0, 1) };
        for j in j0..j1 {
            let (has_down, has_up) = (two_d && j > 1, two_d && j + 2 < ny);
            for i in 1..nx - 1 {
                let (has_left, has_right) = (i > 1, i + 2 < nx);
                let k = j * nx + i;
                for c in 0..comps {
                    let at = |node: usize| input[node * comps + c];
                    let mut acc = diag * at(k);
                    if has_left {
                        acc -= ix2 * at(k - 1);
                    }
                    if has_right {
                        acc -= ix2 * at(k + 1);
                    }
                    if has_down {
                        acc -= iy2 * at(k - nx);
                    }
                    if has_up {
                        acc -= iy2 * at(k + nx);
                    }
                    out[k * comps + c] = acc;
                }
            }
        }
    }
}

/// Field whose nodes can be measured in the Euclidean norm.
pub trait NodalField {
    fn node_count(&self) -> usize;
    fn node_norm_sq(&self, node: usize) -> f64;
    fn node_norm(&self, node: usize) -> f64 {
        self.node_norm_sq(node).sqrt()
    }
}

/// N-component nodal field, stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: usize,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: &Grid, comps: usize) -> Self {
        assert!(comps >= 1, "a vector field needs at least one component");
        Self {
            comps,
            values: vec![0.0; grid.node_count() * comps],
        }
    }

    pub fn from_values(comps: usize, values: Vec<f64>) -> Self {
        assert!(comps >= 1 && values.len().is_multiple_of(comps));
        Self { comps, values }
    }

    /// Samples `g(x, y)` at every node; boundary nodes included.
    pub fn from_fn<F>(grid: &Grid, comps: usize, mut g: F) -> Self
    where
        F: FnMut(f64, f64) -> Vec<f64>,
    {
        let mut out = Self::zeros(grid, comps);
        for k in 0..grid.node_count() {
            let (x, y) = grid.coords(k);
            let v = g(x, y);
            assert_eq!(v.len(), comps);
            out.node_mut(k).copy_from_slice(&v);
        }
        out
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.comps..(k + 1) * self.comps]
    }

    #[inline]
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.comps..(k + 1) * self.comps]
    }

    pub fn zero_boundary(&mut self, grid: &Grid) {
        for k in 0..grid.node_count() {
            if grid.is_boundary(k) {
                self.node_mut(k).iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            comps: self.comps,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            comps: self.comps,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Pointwise Euclidean norms.
    pub fn magnitudes(&self) -> ScalarField {
        ScalarField::from_values(
            (0..self.node_count()).map(|k| self.node_norm(k)).collect(),
        )
    }

    /// Largest nodal Euclidean norm over all nodes.
    pub fn max_magnitude(&self) -> f64 {
        (0..self.node_count())
            .map(|k| self.node_norm(k))
            .fold(0.0, f64::max)
    }
}

impl NodalField for VectorField {
    fn node_count(&self) -> usize {
        self.values.len() / self.comps
    }

    fn node_norm_sq(&self, node: usize) -> f64 {
        self.node(node).iter().map(|v| v * v).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    values: Vec<f64>,
}

impl ScalarField {
    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            values: vec![value; grid.node_count()],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn min_interior(&self, grid: &Grid) -> f64 {
        grid.interior_nodes()
            .map(|k| self.values[k])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_vector(&self) -> VectorField {
        VectorField::from_values(1, self.values.clone())
    }
}

impl NodalField for ScalarField {
    fn node_count(&self) -> usize {
        self.values.len()
    }

    fn node_norm_sq(&self, node: usize) -> f64 {
        self.values[node] * self.values[node]
    }

    fn node_norm(&self, node: usize) -> f64 {
        self.values[node].abs()
    }
}

/// `-Δ_h u`, componentwise, zero on the boundary.
pub fn laplacian_apply(grid: &Grid, field: &VectorField) -> VectorField {
    let mut out = VectorField::zeros(grid, field.comps());
    grid.neg_laplacian_into(field.values(), field.comps(), out.values_mut());
    out
}

/// Weighted nodal inner product over interior nodes.
pub fn inner(grid: &Grid, a: &VectorField, b: &VectorField) -> f64 {
    let w = grid.cell_volume();
    let n = a.comps();
    let mut acc = 0.0;
    for k in grid.interior_nodes() {
        for c in 0..n {
            acc += a.values[k * n + c] * b.values[k * n + c];
        }
    }
    w * acc
}

/// `‖u‖²_{L²(Ω)}` with nodal quadrature.
pub fn l2_norm_sq<F: NodalField>(grid: &Grid, field: &F) -> f64 {
    grid.cell_volume()
        * grid
            .interior_nodes()
            .map(|k| field.node_norm_sq(k))
            .sum::<f64>()
}

/// `‖∇_h u‖²_{L²(Ω)}` from forward differences, boundary values read as zero.
/// Equals `⟨-Δ_h u, u⟩` by summation by parts.
pub fn grad_norm_sq(grid: &Grid, u: &VectorField) -> f64 {
    let nx = grid.nodes[0];
    let ny = grid.nodes[1];
    let n = u.comps();
    let val = |k: usize, c: usize| {
        if grid.is_boundary(k) {
            0.0
        } else {
            u.values[k * n + c]
        }
    };
    let mut acc = 0.0;
    let ix2 = 1.0 / (grid.h[0] * grid.h[0]);
    let iy2 = 1.0 / (grid.h[1] * grid.h[1]);
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            for c in 0..n {
                if i + 1 < nx {
                    let d = val(k + 1, c) - val(k, c);
                    acc += ix2 * d * d;
                }
                if grid.dim == 2 && j + 1 < ny {
                    let d = val(k + nx, c) - val(k, c);
                    acc += iy2 * d * d;
                }
            }
        }
    }
    grid.cell_volume() * acc
}

/// Space-time exponent for [`lp_norm_spacetime`]; `f64::INFINITY` selects the max norm.
pub fn lp_norm_spacetime<F: NodalField>(
    grid: &Grid,
    trajectory: &[F],
    tau: f64,
    p: f64,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("norm exponent must be >= 1, got {p}")));
    }
    if trajectory.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    if p.is_infinite() {
        let mut m: f64 = 0.0;
        for slice in trajectory {
            for k in grid.interior_nodes() {
                m = m.max(slice.node_norm(k));
            }
        }
        return Ok(m);
    }
    let w = tau * grid.cell_volume();
    let mut acc = 0.0;
    for slice in trajectory {
        for k in grid.interior_nodes() {
            acc += if p == 2.0 {
                slice.node_norm_sq(k)
            } else {
                slice.node_norm(k).powf(p)
            };
        }
    }
    Ok((w * acc).powf(1.0 / p))
}

/// `max_t ‖u(t)‖_{L²(Ω)}` over the supplied slices.
pub fn linf_l2_norm<F: NodalField>(grid: &Grid, trajectory: &[F], _tau: f64) -> Result<f64> {
    if trajectory.is_empty() {
        return Err(Error::InvalidParameter("empty trajectory".into()));
    }
    Ok(trajectory
        .iter()
        .map(|s| l2_norm_sq(grid, s).sqrt())
        .fold(0.0, f64::max))
}

/// Continuum Poincaré constant of the box, `1 / sqrt(π² Σ 1/L_i²)`.
pub fn poincare_constant(grid: &Grid) -> f64 {
    let lambda1: f64 = grid
        .extents()
        .iter()
        .map(|l| std::f64::consts::PI.powi(2) / (l * l))
        .sum();
    1.0 / lambda1.sqrt()
}

/// Euclidean projection onto the closed unit ball.
pub fn project_ball(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_ball_in_place(&mut out);
    out
}

#[inline]
pub fn project_ball_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 1.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Writes one row per node: `x[,y],comp_0,...`, with 17 significant digits.
pub fn write_field_csv<W: Write>(grid: &Grid, field: &VectorField, mut w: W) -> Result<()> {
    let mut header = String::from("x");
    if grid.dim() == 2 {
        header.push_str(",y");
    }
    for c in 0..field.comps() {
        header.push_str(&format!(",comp_{c}"));
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for k in 0..grid.node_count() {
        line.clear();
        let (x, y) = grid.coords(k);
        line.push_str(&fmt17(x));
        if grid.dim() == 2 {
            line.push(',');
            line.push_str(&fmt17(y));
        }
        for v in field.node(k) {
            line.push(',');
            line.push_str(&fmt17(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Parses a CSV written by [`write_field_csv`] back into a field.
pub fn read_field_csv(grid: &Grid, text: &str) -> Result<VectorField> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidParameter("empty field csv".into()))?;
    let cols = header.split(',').count();
    let comps = cols - grid.dim();
    let mut values = Vec::with_capacity(grid.node_count() * comps);
    for line in lines {
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != cols {
            return Err(Error::InvalidParameter(format!("bad csv row `{line}`")));
        }
        for cell in &row[grid.dim()..] {
            values.push(
                cell.parse::<f64>()
                    .map_err(|e| Error::InvalidParameter(format!("bad csv value `{cell}`: {e}")))?,
            );
        }
    }
    if values.len() != grid.node_count() * comps {
        return Err(Error::InvalidParameter("csv node count does not match grid".into()));
    }
    Ok(VectorField::from_values(comps, values))
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
