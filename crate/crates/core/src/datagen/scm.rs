//! Ground-truth structural causal models for the two synthetic systems.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::graph::{is_dag, topological_order, BinaryGraph};
use crate::seed;
use crate::Matrix;

/// Deterministic part of a structural equation; receives parent values in
/// ascending parent-index order.
pub type Mechanism = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Non-root noise scale as a fraction of the factor's range.
pub const DEFAULT_NOISE_FRACTION: f64 = 0.02;

// Grid resolution used to bound effect ranges.
const RANGE_GRID: usize = 201;

#[derive(Clone)]
pub struct Scm {
    factor_names: Vec<String>,
    graph: BinaryGraph,
    equations: Vec<Option<Mechanism>>,
    noise: Vec<f64>,
    ranges: Vec<(f64, f64)>,
    order: Vec<usize>,
}

impl fmt::Debug for Scm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scm")
            .field("factor_names", &self.factor_names)
            .field("graph", &self.graph.edges())
            .field("noise", &self.noise)
            .field("ranges", &self.ranges)
            .finish()
    }
}

impl Scm {
    /// Roots must have no equation and every non-root must have one.
    pub fn new(
        factor_names: Vec<String>,
        graph: BinaryGraph,
        equations: Vec<Option<Mechanism>>,
        noise: Vec<f64>,
        ranges: Vec<(f64, f64)>,
    ) -> Result<Self> {
        let k = factor_names.len();
        if graph.d() != k || equations.len() != k || noise.len() != k || ranges.len() != k {
            return Err(invalid("SCM components disagree on the factor count"));
        }
        if !is_dag(&graph) {
            return Err(invalid("SCM graph must be acyclic"));
        }
        for node in 0..k {
            let is_root = graph.parents(node).is_empty();
            if is_root != equations[node].is_none() {
                return Err(invalid(format!(
                    "factor {} must have an equation iff it has parents",
                    factor_names[node]
                )));
            }
            if noise[node] < 0.0 || !noise[node].is_finite() {
                return Err(invalid("noise scales must be finite and non-negative"));
            }
            if !(ranges[node].0 < ranges[node].1) {
                return Err(invalid("each range needs lo < hi"));
            }
        }
        let order = topological_order(&graph)?;
        let graph = graph.renamed(factor_names.clone())?;
        Ok(Self {
            factor_names,
            graph,
            equations,
            noise,
            ranges,
            order,
        })
    }

    pub fn k(&self) -> usize {
        self.factor_names.len()
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn graph(&self) -> &BinaryGraph {
        &self.graph
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Evaluates the mechanism of `node` on a full row of factor values.
    pub fn mechanism(&self, node: usize, row: &[f64]) -> Option<f64> {
        let eq = self.equations[node].as_ref()?;
        let parents: Vec<f64> = self.graph.parents(node).iter().map(|&p| row[p]).collect();
        Some(eq(&parents))
    }

    /// Fills every non-root of `row` from its parents, without noise.
    pub fn complete(&self, row: &mut [f64]) {
        for &node in &self.order {
            if let Some(v) = self.mechanism(node, row) {
                row[node] = v;
            }
        }
    }

    pub fn with_noise(mut self, noise: Vec<f64>) -> Result<Self> {
        if noise.len() != self.k() || noise.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(invalid("bad noise vector"));
        }
        self.noise = noise;
        Ok(self)
    }

    /// Roots uniform over their ranges; non-roots from the mechanism plus
    /// Gaussian noise, clamped into the declared range.
    pub fn sample_factors(&self, n: usize, seed_value: u64) -> Matrix {
        let mut rng = seed::rng(seed_value);
        let k = self.k();
        let mut out = Matrix::zeros(n, k);
        let mut row = vec![0.0; k];
        for r in 0..n {
            for &node in &self.order {
                let (lo, hi) = self.ranges[node];
                let v = match self.mechanism(node, &row) {
                    None => rng.random_range(lo..hi),
                    Some(mean) => {
                        let eps = if self.noise[node] > 0.0 {
                            Normal::new(0.0, self.noise[node]).unwrap().sample(&mut rng)
                        } else {
                            0.0
                        };
                        (mean + eps).clamp(lo, hi)
                    }
                };
                row[node] = v;
            }
            for c in 0..k {
                out[(r, c)] = row[c];
            }
        }
        out
    }
}

/// See [`Scm::sample_factors`].
pub fn sample_factors(scm: &Scm, n: usize, seed_value: u64) -> Result<Matrix> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    Ok(scm.sample_factors(n, seed_value))
}

/// Bounds of every non-root over a dense grid of root values. Roots keep
/// their given ranges.
fn effect_ranges(
    graph: &BinaryGraph,
    equations: &[Option<Mechanism>],
    root_ranges: &[(f64, f64)],
) -> Result<Vec<(f64, f64)>> {
    let k = graph.d();
    let order = topological_order(graph)?;
    let roots = graph.roots();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    let total = RANGE_GRID.pow(roots.len() as u32);
    let mut row = vec![0.0; k];
    for idx in 0..total {
        let mut rem = idx;
        for &r in &roots {
            let step = rem % RANGE_GRID;
            rem /= RANGE_GRID;
            let (a, b) = root_ranges[r];
            row[r] = a + (b - a) * step as f64 / (RANGE_GRID - 1) as f64;
        }
        for &node in &order {
            if let Some(eq) = &equations[node] {
                let parents: Vec<f64> = graph.parents(node).iter().map(|&p| row[p]).collect();
                row[node] = eq(&parents);
            }
        }
        for c in 0..k {
            lo[c] = lo[c].min(row[c]);
            hi[c] = hi[c].max(row[c]);
        }
    }
    Ok((0..k)
        .map(|c| {
            if roots.contains(&c) {
                root_ranges[c]
            } else {
                (lo[c], hi[c])
            }
        })
        .collect())
}

/// Noise scales and padded ranges for a model with the given root ranges.
/// Non-root noise is `noise_fraction` of the deterministic range; declared
/// ranges are widened by four noise deviations.
fn finish(
    names: Vec<String>,
    graph: BinaryGraph,
    equations: Vec<Option<Mechanism>>,
    root_ranges: Vec<(f64, f64)>,
    noise_fraction: f64,
) -> Result<Scm> {
    let det = effect_ranges(&graph, &equations, &root_ranges)?;
    let mut noise = vec![0.0; names.len()];
    let mut ranges = det.clone();
    for node in graph.non_roots() {
        let (lo, hi) = det[node];
        let sd = noise_fraction * (hi - lo);
        noise[node] = sd;
        ranges[node] = (lo - 4.0 * sd, hi + 4.0 * sd);
    }
    Scm::new(names, graph, equations, noise, ranges)
}

/// Pendulum geometry. Angles in degrees; the light angle is measured from
/// the horizontal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumGeometry {
    pub pivot_height: f64,
    pub rod_length: f64,
    pub pendulum_range: (f64, f64),
    pub light_range: (f64, f64),
}

impl Default for PendulumGeometry {
    fn default() -> Self {
        Self {
            pivot_height: 10.0,
            rod_length: 9.5,
            pendulum_range: (-40.0, 40.0),
            light_range: (50.0, 130.0),
        }
    }
}

impl PendulumGeometry {
    // Ground-plane shadow of (px, py) under parallel light at `light` degrees.
    fn shadow(px: f64, py: f64, light_deg: f64) -> f64 {
        px + py / light_deg.to_radians().tan()
    }

    fn endpoints(&self, pendulum_deg: f64, light_deg: f64) -> (f64, f64) {
        let t = pendulum_deg.to_radians();
        let pivot = Self::shadow(0.0, self.pivot_height, light_deg);
        let tip = Self::shadow(
            self.rod_length * t.sin(),
            self.pivot_height - self.rod_length * t.cos(),
            light_deg,
        );
        (pivot, tip)
    }

    /// Midpoint of the shadows of pivot and bob.
    pub fn shadow_position(&self, pendulum_deg: f64, light_deg: f64) -> f64 {
        let (a, b) = self.endpoints(pendulum_deg, light_deg);
        0.5 * (a + b)
    }

    pub fn shadow_length(&self, pendulum_deg: f64, light_deg: f64) -> f64 {
        let (a, b) = self.endpoints(pendulum_deg, light_deg);
        (b - a).abs()
    }
}

pub const PENDULUM_FACTORS: [&str; 4] = [
    "pendulum_angle",
    "light_angle",
    "shadow_position",
    "shadow_length",
];
pub const FLOW_FACTORS: [&str; 4] = ["ball_size", "hole", "water_height", "flow"];

pub fn pendulum_scm() -> Scm {
    pendulum_scm_with(PendulumGeometry::default(), DEFAULT_NOISE_FRACTION)
        .expect("default pendulum is valid")
}

pub fn pendulum_scm_with(geom: PendulumGeometry, noise_fraction: f64) -> Result<Scm> {
    let names = PENDULUM_FACTORS.iter().map(|s| s.to_string()).collect();
    let graph = BinaryGraph::from_edges(4, &[(0, 2), (0, 3), (1, 2), (1, 3)])?;
    let sp: Mechanism = Arc::new(move |p: &[f64]| geom.shadow_position(p[0], p[1]));
    let sl: Mechanism = Arc::new(move |p: &[f64]| geom.shadow_length(p[0], p[1]));
    let roots = vec![
        geom.pendulum_range,
        geom.light_range,
        (0.0, 1.0),
        (0.0, 1.0),
    ];
    finish(
        names,
        graph,
        vec![None, None, Some(sp), Some(sl)],
        roots,
        noise_fraction,
    )
}

/// Container physics for the flow system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPhysics {
    pub cross_section: f64,
    pub base_volume: f64,
    pub discharge: f64,
    pub gravity: f64,
    pub ball_range: (f64, f64),
    pub hole_range: (f64, f64),
}

impl Default for FlowPhysics {
    fn default() -> Self {
        Self {
            cross_section: 50.0,
            base_volume: 250.0,
            discharge: 1.0,
            gravity: 9.8,
            ball_range: (1.0, 3.0),
            hole_range: (4.0, 7.0),
        }
    }
}

impl FlowPhysics {
    /// Base level plus the displacement of a submerged ball.
    pub fn water_height(&self, ball_radius: f64) -> f64 {
        let displaced = 4.0 / 3.0 * std::f64::consts::PI * ball_radius.powi(3);
        (self.base_volume + displaced) / self.cross_section
    }

    /// Torricelli outflow through a hole at height `hole`.
    pub fn flow(&self, water_height: f64, hole: f64) -> f64 {
        self.discharge * (2.0 * self.gravity * (water_height - hole).max(0.0)).sqrt()
    }
}

pub fn flow_scm() -> Scm {
    flow_scm_with(FlowPhysics::default(), DEFAULT_NOISE_FRACTION).expect("default flow is valid")
}

pub fn flow_scm_with(phys: FlowPhysics, noise_fraction: f64) -> Result<Scm> {
    let names = FLOW_FACTORS.iter().map(|s| s.to_string()).collect();
    // ball -> height, height -> flow, hole -> flow
    let graph = BinaryGraph::from_edges(4, &[(0, 2), (2, 3), (1, 3)])?;
    let wh: Mechanism = Arc::new(move |p: &[f64]| phys.water_height(p[0]));
    // parents of flow in index order: hole (1), water_height (2)
    let flow: Mechanism = Arc::new(move |p: &[f64]| phys.flow(p[1], p[0]));
    let roots = vec![phys.ball_range, phys.hole_range, (0.0, 1.0), (0.0, 1.0)];
    finish(
        names,
        graph,
        vec![None, None, Some(wh), Some(flow)],
        roots,
        noise_fraction,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_overhead_light() {
        let g = PendulumGeometry::default();
        assert!(g.shadow_length(0.0, 90.0).abs() < 1e-12);
        assert!(g.shadow_position(0.0, 90.0).abs() < 1e-12);
    }

    #[test]
    fn pendulum_light_at_45_degrees() {
        // pivot shadow at H, bob shadow at H - L; midpoint H - L/2
        let g = PendulumGeometry::default();
        assert!((g.shadow_position(0.0, 45.0) - 5.25).abs() < 1e-12);
        assert!((g.shadow_length(0.0, 45.0) - 9.5).abs() < 1e-12);
    }

    #[test]
    fn pendulum_graph() {
        let scm = pendulum_scm();
        assert_eq!(scm.graph().edges(), vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
        assert_eq!(scm.noise()[0], 0.0);
        assert!(scm.noise()[2] > 0.0);
    }

    #[test]
    fn flow_examples() {
        let phys = FlowPhysics::default();
        assert!((phys.water_height(0.0) - 5.0).abs() < 1e-12);
        assert_eq!(phys.flow(4.0, 4.5), 0.0);
        assert_eq!(phys.flow(4.0, 4.0), 0.0);
        let scm = flow_scm();
        let order = scm.topological_order();
        let pos = |n: usize| order.iter().position(|&o| o == n).unwrap();
        assert!(pos(0) < pos(2) && pos(2) < pos(3));
        assert!(scm.graph().has_edge(0, 2) && scm.graph().has_edge(2, 3));
        assert!(!scm.graph().has_edge(0, 3));
    }

    #[test]
    fn noiseless_sampling_is_deterministic_in_roots() {
        let scm = pendulum_scm().with_noise(vec![0.0; 4]).unwrap();
        let f = scm.sample_factors(200, 3);
        for r in 0..200 {
            let mut row: Vec<f64> = (0..4).map(|c| f[(r, c)]).collect();
            let observed = row.clone();
            scm.complete(&mut row);
            assert_eq!(row, observed);
        }
    }

    #[test]
    fn same_seed_same_table() {
        let scm = flow_scm();
        assert_eq!(scm.sample_factors(50, 9), scm.sample_factors(50, 9));
        assert_ne!(scm.sample_factors(50, 9), scm.sample_factors(50, 10));
    }

    #[test]
    fn samples_stay_in_declared_ranges() {
        for scm in [pendulum_scm(), flow_scm()] {
            let f = scm.sample_factors(2000, 1);
            for (c, &(lo, hi)) in scm.ranges().iter().enumerate() {
                assert!(f.column(c).iter().all(|&v| v >= lo && v <= hi));
            }
        }
    }

    #[test]
    fn rejects_inconsistent_scm() {
        let g = BinaryGraph::from_edges(2, &[(0, 1)]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let r = Scm::new(
            names,
            g,
            vec![None, None],
            vec![0.0, 0.0],
            vec![(0.0, 1.0), (0.0, 1.0)],
        );
        assert!(r.is_err());
    }
}
