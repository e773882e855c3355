//! Shared fixtures for the solver benchmarks.

use ballvi_core::{Grid, VectorField};

/// Square grid with `n x n` nodes on the unit square.
pub fn square(n: usize) -> Grid {
    Grid::new_2d(1.0, 1.0, n, n).expect("valid grid")
}

/// Uniform forcing `(a, a x)`, zero on the boundary; strong enough to saturate for `a` above about 15.
pub fn forcing(grid: &Grid, a: f64) -> VectorField {
    let mut f = VectorField::from_fn(grid, 2, |x, _| vec![a, a * x]);
    f.zero_boundary(grid);
    f
}

/// Smooth admissible state with peak magnitude 0.8.
pub fn smooth_state(grid: &Grid) -> VectorField {
    let pi = std::f64::consts::PI;
    let mut u = VectorField::from_fn(grid, 2, |x, y| {
        let b = (pi * x).sin() * (pi * y).sin();
        vec![0.8 * b * (pi * y).cos(), 0.8 * b * (pi * y).sin()]
    });
    u.zero_boundary(grid);
    u
}
