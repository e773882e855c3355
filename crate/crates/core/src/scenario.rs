//! Problem instances: domain, horizon, floor `δ`, forcing `f(x, y, t)` and initial
//! datum `u0(x, y)`, plus the shipped catalog.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{BinOp, Expr};
use crate::grid::{project_ball_in_place, Grid, NodalField, VectorField};

/// Slack below which a slightly-outside initial datum is projected silently.
pub const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Serializable description of a scenario; expressions are kept as source text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub label: String,
    pub dim: usize,
    pub extents: Vec<f64>,
    pub nodes: Vec<usize>,
    #[serde(rename = "N")]
    pub components: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub delta: f64,
    pub f: Vec<String>,
    pub u0: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    spec: ScenarioSpec,
    forcing: Vec<Expr>,
    initial: Vec<Expr>,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        if spec.dim != spec.extents.len() || spec.dim != spec.nodes.len() {
            return Err(Error::InvalidParameter(format!(
                "dim {} does not match extents {:?} / nodes {:?}",
                spec.dim, spec.extents, spec.nodes
            )));
        }
        if spec.components == 0 {
            return Err(Error::InvalidParameter("N must be at least 1".into()));
        }
        if spec.f.len() != spec.components || spec.u0.len() != spec.components {
            return Err(Error::InvalidParameter(format!(
                "expected {} expressions for f and u0, got {} and {}",
                spec.components,
                spec.f.len(),
                spec.u0.len()
            )));
        }
        if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("T must be positive, got {}", spec.horizon)));
        }
        if !(spec.delta >= 0.0 && spec.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {}", spec.delta)));
        }
        let forcing = spec.f.iter().map(|s| Expr::parse(s)).collect::<Result<_, _>>()?;
        let initial = spec.u0.iter().map(|s| Expr::parse(s)).collect::<Result<_, _>>()?;
        Ok(Self {
            spec,
            forcing,
            initial,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn label(&self) -> &str {
        &self.spec.label
    }

    pub fn components(&self) -> usize {
        self.spec.components
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn delta(&self) -> f64 {
        self.spec.delta
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.spec.extents, &self.spec.nodes)
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.delta = delta;
        Self::new(spec)
    }

    pub fn with_resolution(&self, nodes: &[usize], horizon: f64) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.nodes = nodes.to_vec();
        spec.horizon = horizon;
        Self::new(spec)
    }

    pub fn with_initial(&self, u0: &[&str]) -> Result<Self> {
        let mut spec = self.spec.clone();
        spec.u0 = u0.iter().map(|s| s.to_string()).collect();
        Self::new(spec)
    }

    /// Same scenario with forcing `f + g / n`.
    pub fn perturbed(&self, g: &[Expr], n: f64) -> Result<Self> {
        if g.len() != self.components() {
            return Err(Error::InvalidParameter(format!(
                "perturbation has {} components, expected {}",
                g.len(),
                self.components()
            )));
        }
        let forcing: Vec<Expr> = self
            .forcing
            .iter()
            .zip(g)
            .map(|(f, g)| {
                Expr::Binary(
                    BinOp::Add,
                    Box::new(f.clone()),
                    Box::new(Expr::Binary(
                        BinOp::Div,
                        Box::new(g.clone()),
                        Box::new(Expr::Num(n)),
                    )),
                )
            })
            .collect();
        let mut spec = self.spec.clone();
        spec.f = forcing.iter().map(|e| e.to_string()).collect();
        Ok(Self {
            spec,
            forcing,
            initial: self.initial.clone(),
        })
    }

    fn sample(&self, exprs: &[Expr], src: &[String], grid: &Grid, t: f64) -> Result<VectorField> {
        let n = self.components();
        let mut out = VectorField::zeros(grid, n);
        for k in 0..grid.node_count() {
            let (x, y) = grid.coords(k);
            for (c, e) in exprs.iter().enumerate() {
                out.node_mut(k)[c] = e.eval(x, y, t).map_err(|source| Error::Eval {
                    expr: src[c].clone(),
                    source,
                })?;
            }
        }
        Ok(out)
    }

    /// `f(·, t)` at every node.
    pub fn forcing_at(&self, grid: &Grid, t: f64) -> Result<VectorField> {
        self.sample(&self.forcing, &self.spec.f, grid, t)
    }

    /// `u0` with boundary values zeroed. Violations of `|u0| <= 1` up to
    /// [`ADMISSIBILITY_SLACK`] are projected away; larger ones are errors.
    pub fn initial_field(&self, grid: &Grid) -> Result<VectorField> {
        let mut u0 = self.sample(&self.initial, &self.spec.u0, grid, 0.0)?;
        u0.zero_boundary(grid);
        for k in grid.interior_nodes() {
            let norm = u0.node_norm(k);
            if norm > 1.0 + ADMISSIBILITY_SLACK {
                return Err(Error::Inadmissible { node: k, norm });
            }
            if norm > 1.0 {
                project_ball_in_place(u0.node_mut(k));
            }
        }
        Ok(u0)
    }

    pub fn catalog_names() -> &'static [&'static str] {
        &[
            "inactive-1d",
            "saturating-1d",
            "rotating-2d",
            "dependence-base",
            "saturating-2d",
        ]
    }

    /// Shipped scenarios. Defaults: 1D n = 129, 2D 65 x 65, T = 1, N = 2.
    pub fn catalog(name: &str) -> Option<Self> {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let spec = match name {
            // Small data: the constraint never binds.
            "inactive-1d" => ScenarioSpec {
                label: name.into(),
                dim: 1,
                extents: vec![1.0],
                nodes: vec![129],
                components: 2,
                horizon: 1.0,
                delta: 0.1,
                f: s(&["2*sin(3.141592653589793*x)", "1 + t"]),
                u0: s(&["0.3*sin(3.141592653589793*x)", "0.2*x*(1 - x)"]),
            },
            // Unconstrained steady state peaks at 12/8 = 1.5.
            "saturating-1d" => ScenarioSpec {
                label: name.into(),
                dim: 1,
                extents: vec![1.0],
                nodes: vec![129],
                components: 2,
                horizon: 1.0,
                delta: 0.1,
                f: s(&["12", "0"]),
                u0: s(&["0", "0"]),
            },
            // Forcing of magnitude 24 rotating once per unit time; the unconstrained
            // steady peak for a fixed direction is about 0.0737 * 24 = 1.77.
            "rotating-2d" => ScenarioSpec {
                label: name.into(),
                dim: 2,
                extents: vec![1.0, 1.0],
                nodes: vec![65, 65],
                components: 2,
                horizon: 1.0,
                delta: 0.1,
                f: s(&["24*cos(6.283185307179586*t)", "24*sin(6.283185307179586*t)"]),
                u0: s(&["0", "0"]),
            },
            "dependence-base" => ScenarioSpec {
                label: name.into(),
                dim: 1,
                extents: vec![1.0],
                nodes: vec![129],
                components: 2,
                horizon: 1.0,
                delta: 0.2,
                f: s(&["14*sin(3.141592653589793*x)", "4*cos(6.283185307179586*t)"]),
                u0: s(&["0.5*sin(3.141592653589793*x)", "0"]),
            },
            "saturating-2d" => ScenarioSpec {
                label: name.into(),
                dim: 2,
                extents: vec![1.0, 1.0],
                nodes: vec![65, 65],
                components: 2,
                horizon: 1.0,
                delta: 0.1,
                f: s(&["30", "10*x"]),
                u0: s(&["0", "0"]),
            },
            _ => return None,
        };
        Some(Self::new(spec).expect("catalog scenarios are valid"))
    }

    /// Default perturbation direction `g` paired with "dependence-base".
    pub fn default_perturbation() -> Vec<String> {
        vec!["4*x*(1 - x)".into(), "2*sin(6.283185307179586*t)".into()]
    }
}

/// A scenario on its grid with a uniform time step: `t_m = m τ`, `m = 0..=steps`.
#[derive(Clone, Debug)]
pub struct Problem {
    pub scenario: Scenario,
    pub grid: Grid,
    pub tau: f64,
    pub steps: usize,
    pub u0: VectorField,
}

impl Problem {
    pub fn new(scenario: Scenario, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if tau > scenario.horizon() * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter(format!(
                "tau {tau} exceeds the horizon {}",
                scenario.horizon()
            )));
        }
        let steps = ((scenario.horizon() / tau) - 1e-9).ceil().max(1.0) as usize;
        let grid = scenario.grid()?;
        let u0 = scenario.initial_field(&grid)?;
        Ok(Self {
            scenario,
            grid,
            tau,
            steps,
            u0,
        })
    }

    /// Default step `T / 200`.
    pub fn with_default_step(scenario: Scenario) -> Result<Self> {
        let tau = scenario.horizon() / 200.0;
        Self::new(scenario, tau)
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.tau
    }

    pub fn delta(&self) -> f64 {
        self.scenario.delta()
    }

    pub fn forcing(&self, step: usize) -> Result<VectorField> {
        self.scenario.forcing_at(&self.grid, self.time(step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_apply, ScalarField};
    use crate::linsolve::{cg_solve, CgOptions, ShiftedOperator};

    #[test]
    fn catalog_loads() {
        for name in Scenario::catalog_names() {
            let sc = Scenario::catalog(name).unwrap();
            let p = Problem::with_default_step(sc).unwrap();
            assert_eq!(p.steps, 200);
            assert!(p.u0.max_magnitude() <= 1.0);
        }
        assert!(Scenario::catalog("nope").is_none());
    }

    #[test]
    fn inadmissible_initial_datum() {
        let sc = Scenario::catalog("inactive-1d").unwrap();
        let bad = sc.with_initial(&["1.5", "0"]).unwrap();
        let err = Problem::new(bad, 0.01).unwrap_err();
        assert!(matches!(err, Error::Inadmissible { .. }));
        let tiny = sc.with_initial(&["1 + 1e-13", "0"]).unwrap();
        let p = Problem::new(tiny, 0.01).unwrap();
        assert!(p.u0.max_magnitude() <= 1.0);
        assert_eq!(p.u0.node(0), &[0.0, 0.0]);
    }

    #[test]
    fn perturbation_adds_scaled_forcing() {
        let sc = Scenario::catalog("dependence-base").unwrap();
        let g: Vec<Expr> = Scenario::default_perturbation()
            .iter()
            .map(|s| Expr::parse(s).unwrap())
            .collect();
        let grid = sc.grid().unwrap();
        let pert = sc.perturbed(&g, 4.0).unwrap();
        let (a, b) = (sc.forcing_at(&grid, 0.3).unwrap(), pert.forcing_at(&grid, 0.3).unwrap());
        let (x, _) = grid.coords(40);
        let expected = 4.0 * x * (1.0 - x) / 4.0;
        assert!((b.node(40)[0] - a.node(40)[0] - expected).abs() < 1e-12);
        // Round trip through the serialized spec.
        let again = Scenario::new(pert.spec().clone()).unwrap();
        assert_eq!(again.forcing_at(&grid, 0.3).unwrap(), b);
    }

    // The saturating forcing must push the unconstrained steady state out of the ball.
    #[test]
    fn saturating_forcing_exceeds_unit_ball_unconstrained() {
        for name in ["saturating-1d", "saturating-2d", "rotating-2d"] {
            let sc = Scenario::catalog(name).unwrap();
            let grid = sc.grid().unwrap();
            let f = sc.forcing_at(&grid, 0.0).unwrap();
            let op = ShiftedOperator::new(&grid, 1e8, ScalarField::constant(&grid, sc.delta())).unwrap();
            let u = cg_solve(&op, &f, CgOptions::default()).unwrap().solution;
            assert!(u.max_magnitude() > 1.2, "{name}: {}", u.max_magnitude());
            let _ = laplacian_apply(&grid, &u);
        }
    }
}
