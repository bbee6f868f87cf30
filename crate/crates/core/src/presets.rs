//! Ready-made model graph and problem used by the experiments and tests.

use std::collections::BTreeMap;

use crate::graph::MetricGraph;
use crate::problem::{BoundaryRates, Drift, Initial, Mobility, Problem, Rate};

/// Two-junction model network: four exterior vertices feeding two interior
/// junctions. Edges `v1→v3, v2→v3, v3→v4, v4→v5, v4→v6`, all of length 1.
pub fn two_junction_graph() -> MetricGraph {
    let names: Vec<String> = (1..=6).map(|i| format!("v{i}")).collect();
    MetricGraph::build_named(
        &names,
        &[
            (0, 2, 1.0),
            (1, 2, 1.0),
            (2, 3, 1.0),
            (3, 4, 1.0),
            (3, 5, 1.0),
        ],
    )
    .expect("two-junction graph is valid")
}

/// Default problem on the two-junction graph: ε = 0.01, logistic mobility,
/// unit drift, constant influx at v1/v2 and outflux at v5/v6, zero initial
/// density, horizon T = 10.
pub fn default_problem(graph: &MetricGraph) -> Problem {
    default_problem_with_horizon(graph, 10.0)
}

/// Same as [`default_problem`] but with a custom horizon (shorter horizons
/// are used for smoke-scale runs).
pub fn default_problem_with_horizon(graph: &MetricGraph, horizon: f64) -> Problem {
    let mut boundary = BTreeMap::new();
    boundary.insert(
        0usize,
        BoundaryRates {
            alpha: Rate::Constant(0.9),
            beta: Rate::zero(),
        },
    );
    boundary.insert(
        1usize,
        BoundaryRates {
            alpha: Rate::Constant(0.3),
            beta: Rate::zero(),
        },
    );
    boundary.insert(
        4usize,
        BoundaryRates {
            alpha: Rate::zero(),
            beta: Rate::Constant(0.8),
        },
    );
    boundary.insert(
        5usize,
        BoundaryRates {
            alpha: Rate::zero(),
            beta: Rate::Constant(0.1),
        },
    );
    Problem::new(
        graph,
        0.01,
        Mobility::Logistic,
        Drift::Constant(1.0),
        boundary,
        Initial::zero(),
        horizon,
    )
    .expect("default problem is valid")
}
