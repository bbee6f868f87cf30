//! Collocation point sets for the PINN losses: per-edge interior points in
//! `(0,T) × [0,ℓ_e]`, per-edge initial points in `[0,ℓ_e]`, and per-vertex
//! time snapshots in `(0,T)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{EdgeId, MetricGraph, VertexId};
use crate::problem::Problem;
use crate::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// I.i.d. uniform per coordinate.
    UniformRandom,
    /// Tensor/linear grids, endpoints included on spatial axes.
    Equidistant,
}

/// Requested point counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollocationSizes {
    /// Interior time-space points per edge.
    pub interior: usize,
    /// Initial-time points per edge.
    pub initial: usize,
    /// Time snapshots per vertex.
    pub boundary: usize,
}

/// Fixed set of collocation points, deterministic for a given seed.
#[derive(Debug, Clone)]
pub struct CollocationSet {
    /// `interior[e]` holds `(t, x)` pairs on edge `e`.
    pub interior: Vec<Vec<(f64, f64)>>,
    /// `initial[e]` holds spatial points on edge `e`.
    pub initial: Vec<Vec<f64>>,
    /// `vertex_times[v]` holds time snapshots for vertex `v`.
    pub vertex_times: Vec<Vec<f64>>,
    pub mode: SamplingMode,
    pub seed: u64,
}

/// Draws a collocation set. Uniform mode consumes the RNG in a fixed order
/// (edges in index order: interior then initial; then vertices in index
/// order), so identical seeds give identical sets.
pub fn sample_collocation(
    graph: &MetricGraph,
    problem: &Problem,
    sizes: CollocationSizes,
    mode: SamplingMode,
    seed: u64,
) -> CollocationSet {
    assert!(
        sizes.interior >= 1 && sizes.initial >= 1 && sizes.boundary >= 1,
        "collocation sizes must be >= 1"
    );
    let horizon = problem.horizon;
    let mut rng = rng_for(seed, 1);

    let mut interior = Vec::with_capacity(graph.n_edges());
    let mut initial = Vec::with_capacity(graph.n_edges());
    for (_, edge) in graph.edges() {
        let len = edge.length;
        match mode {
            SamplingMode::UniformRandom => {
                let mut pts = Vec::with_capacity(sizes.interior);
                for _ in 0..sizes.interior {
                    pts.push((open_uniform(&mut rng, horizon), rng.gen_range(0.0..=len)));
                }
                interior.push(pts);
                let mut x0 = Vec::with_capacity(sizes.initial);
                for _ in 0..sizes.initial {
                    x0.push(rng.gen_range(0.0..=len));
                }
                initial.push(x0);
            }
            SamplingMode::Equidistant => {
                interior.push(tensor_grid(sizes.interior, horizon, len));
                initial.push(linspace_closed(sizes.initial, len));
            }
        }
    }

    let mut vertex_times = Vec::with_capacity(graph.n_vertices());
    for _ in graph.vertices() {
        vertex_times.push(match mode {
            SamplingMode::UniformRandom => (0..sizes.boundary)
                .map(|_| open_uniform(&mut rng, horizon))
                .collect(),
            SamplingMode::Equidistant => linspace_open(sizes.boundary, horizon),
        });
    }

    CollocationSet {
        interior,
        initial,
        vertex_times,
        mode,
        seed,
    }
}

impl CollocationSet {
    pub fn interior_points(&self, e: EdgeId) -> &[(f64, f64)] {
        &self.interior[e.0]
    }

    pub fn initial_points(&self, e: EdgeId) -> &[f64] {
        &self.initial[e.0]
    }

    pub fn snapshots(&self, v: VertexId) -> &[f64] {
        &self.vertex_times[v.0]
    }
}

/// Uniform draw from the open interval `(0, hi)`.
fn open_uniform(rng: &mut impl Rng, hi: f64) -> f64 {
    loop {
        let v: f64 = rng.gen_range(0.0..hi);
        if v > 0.0 {
            return v;
        }
    }
}

/// `n` points in `[0, hi]` including both endpoints (a single point sits at
/// the midpoint).
pub(crate) fn linspace_closed(n: usize, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![hi / 2.0];
    }
    // Fraction first so the endpoint lands on `hi` exactly.
    (0..n).map(|i| hi * (i as f64 / (n - 1) as f64)).collect()
}

/// `n` points strictly inside `(0, hi)`.
fn linspace_open(n: usize, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|i| hi * ((i + 1) as f64 / (n + 1) as f64))
        .collect()
}

/// Tensor grid of exactly `n` points on `(0, horizon) × [0, len]`: the time
/// axis gets the largest divisor of `n` not exceeding sqrt(n).
fn tensor_grid(n: usize, horizon: f64, len: f64) -> Vec<(f64, f64)> {
    let mut nt = 1;
    let root = (n as f64).sqrt() as usize;
    for d in (1..=root.max(1)).rev() {
        if n % d == 0 {
            nt = d;
            break;
        }
    }
    let nx = n / nt;
    let ts = linspace_open(nt, horizon);
    let xs = linspace_closed(nx, len);
    let mut pts = Vec::with_capacity(n);
    for &t in &ts {
        for &x in &xs {
            pts.push((t, x));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn setup() -> (crate::graph::MetricGraph, Problem) {
        let g = presets::two_junction_graph();
        let p = presets::default_problem(&g);
        (g, p)
    }

    #[test]
    fn sizes_and_bounds_uniform() {
        let (g, p) = setup();
        let sizes = CollocationSizes {
            interior: 4000,
            initial: 1000,
            boundary: 1000,
        };
        let c = sample_collocation(&g, &p, sizes, SamplingMode::UniformRandom, 42);
        for (id, e) in g.edges() {
            let pts = c.interior_points(id);
            assert_eq!(pts.len(), 4000);
            for &(t, x) in pts {
                assert!(t > 0.0 && t < p.horizon);
                assert!((0.0..=e.length).contains(&x));
            }
            assert_eq!(c.initial_points(id).len(), 1000);
        }
        for v in g.vertices() {
            assert_eq!(c.snapshots(v).len(), 1000);
            for &t in c.snapshots(v) {
                assert!(t > 0.0 && t < p.horizon);
            }
        }
    }

    #[test]
    fn equidistant_two_initial_points_hit_endpoints() {
        let (g, p) = setup();
        let sizes = CollocationSizes {
            interior: 4,
            initial: 2,
            boundary: 3,
        };
        let c = sample_collocation(&g, &p, sizes, SamplingMode::Equidistant, 0);
        assert_eq!(c.initial_points(EdgeId(0)), &[0.0, 1.0]);
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let (g, p) = setup();
        let sizes = CollocationSizes {
            interior: 64,
            initial: 16,
            boundary: 8,
        };
        let a = sample_collocation(&g, &p, sizes, SamplingMode::UniformRandom, 7);
        let b = sample_collocation(&g, &p, sizes, SamplingMode::UniformRandom, 7);
        assert_eq!(a.interior, b.interior);
        assert_eq!(a.initial, b.initial);
        assert_eq!(a.vertex_times, b.vertex_times);
        let c = sample_collocation(&g, &p, sizes, SamplingMode::UniformRandom, 8);
        assert_ne!(a.interior, c.interior);
    }

    proptest! {
        #[test]
        fn points_respect_domain_bounds(
            n_mid in 1usize..5,
            lengths in proptest::collection::vec(0.1f64..4.0, 7),
            seed in 0u64..1000,
            equi in proptest::bool::ANY,
        ) {
            // Path graph with n_mid interior vertices and per-edge lengths.
            let n_edges = n_mid + 1;
            let edges: Vec<(usize, usize, f64)> = (0..n_edges)
                .map(|i| (i, i + 1, lengths[i % lengths.len()]))
                .collect();
            let g = crate::graph::MetricGraph::build(&edges).unwrap();
            let p = Problem::new(
                &g,
                0.05,
                crate::problem::Mobility::Logistic,
                crate::problem::Drift::Constant(1.0),
                Default::default(),
                crate::problem::Initial::zero(),
                2.5,
            )
            .unwrap();
            let sizes = CollocationSizes { interior: 23, initial: 5, boundary: 6 };
            let mode = if equi { SamplingMode::Equidistant } else { SamplingMode::UniformRandom };
            let c = sample_collocation(&g, &p, sizes, mode, seed);
            for (id, e) in g.edges() {
                prop_assert_eq!(c.interior_points(id).len(), 23);
                for &(t, x) in c.interior_points(id) {
                    prop_assert!(t > 0.0 && t < p.horizon);
                    prop_assert!(x >= 0.0 && x <= e.length);
                }
                prop_assert_eq!(c.initial_points(id).len(), 5);
                for &x in c.initial_points(id) {
                    prop_assert!(x >= 0.0 && x <= e.length);
                }
            }
            for v in g.vertices() {
                prop_assert_eq!(c.snapshots(v).len(), 6);
                for &t in c.snapshots(v) {
                    prop_assert!(t > 0.0 && t < p.horizon);
                }
            }
        }
    }
}
