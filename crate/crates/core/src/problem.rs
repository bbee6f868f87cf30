//! Problem data for the drift-diffusion equation
//! `∂_t ρ = ∂_x(ε ∂_x ρ − f(ρ) ∂_x V)` on a metric graph: diffusion constant,
//! mobility, drift field, boundary rates, initial density, and time horizon.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::graph::{EdgeId, MetricGraph, VertexId, VertexKind};

/// Mobility nonlinearity `f(ρ)` with `f(0) = f(1) = 0`, together with its
/// first two derivatives (the expanded residual and its parameter gradient
/// need `f'` and `f''` analytically).
#[derive(Clone)]
pub enum Mobility {
    /// `f(ρ) = ρ(1−ρ)`.
    Logistic,
    Custom {
        name: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        ddf: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl Mobility {
    pub fn f(&self, rho: f64) -> f64 {
        match self {
            Mobility::Logistic => rho * (1.0 - rho),
            Mobility::Custom { f, .. } => f(rho),
        }
    }

    pub fn df(&self, rho: f64) -> f64 {
        match self {
            Mobility::Logistic => 1.0 - 2.0 * rho,
            Mobility::Custom { df, .. } => df(rho),
        }
    }

    pub fn ddf(&self, rho: f64) -> f64 {
        match self {
            Mobility::Logistic => -2.0,
            Mobility::Custom { ddf, .. } => ddf(rho),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Mobility::Logistic => "logistic",
            Mobility::Custom { name, .. } => name,
        }
    }
}

impl fmt::Debug for Mobility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mobility({})", self.name())
    }
}

/// Spatial gradient of the potential, `d_e(t, x) = ∂_x V_e(t, x)`, stored
/// directly because only the gradient enters the equations. `dx` is the
/// x-derivative of `d_e` itself (zero for affine potentials).
#[derive(Clone)]
pub enum Drift {
    Constant(f64),
    Custom {
        d: Arc<dyn Fn(EdgeId, f64, f64) -> f64 + Send + Sync>,
        dx: Arc<dyn Fn(EdgeId, f64, f64) -> f64 + Send + Sync>,
    },
}

impl Drift {
    pub fn d(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        match self {
            Drift::Constant(c) => *c,
            Drift::Custom { d, .. } => d(e, t, x),
        }
    }

    pub fn dx(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        match self {
            Drift::Constant(_) => 0.0,
            Drift::Custom { dx, .. } => dx(e, t, x),
        }
    }
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Drift::Constant(c) => write!(f, "Drift::Constant({c})"),
            Drift::Custom { .. } => write!(f, "Drift::Custom"),
        }
    }
}

/// Nonnegative time-dependent rate, constant in the default experiments.
#[derive(Clone)]
pub enum Rate {
    Constant(f64),
    TimeFn(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Rate {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Rate::Constant(c) => *c,
            Rate::TimeFn(f) => f(t),
        }
    }

    pub fn zero() -> Self {
        Rate::Constant(0.0)
    }
}

impl fmt::Debug for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rate::Constant(c) => write!(f, "{c}"),
            Rate::TimeFn(_) => write!(f, "fn(t)"),
        }
    }
}

/// Influx rate `alpha` and outflux rate `beta` at one exterior vertex.
#[derive(Debug, Clone)]
pub struct BoundaryRates {
    pub alpha: Rate,
    pub beta: Rate,
}

impl BoundaryRates {
    pub fn closed() -> Self {
        Self {
            alpha: Rate::zero(),
            beta: Rate::zero(),
        }
    }
}

/// Initial density per edge, with values in `[0, 1]`.
#[derive(Clone)]
pub struct Initial(Arc<dyn Fn(EdgeId, f64) -> f64 + Send + Sync>);

impl Initial {
    pub fn zero() -> Self {
        Self(Arc::new(|_, _| 0.0))
    }

    pub fn constant(c: f64) -> Self {
        Self(Arc::new(move |_, _| c))
    }

    pub fn from_fn(f: impl Fn(EdgeId, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn at(&self, e: EdgeId, x: f64) -> f64 {
        (self.0)(e, x)
    }
}

impl fmt::Debug for Initial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Initial(fn)")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("mobility {0} violates f(0)=f(1)=0: f(0)={1}, f(1)={2}")]
    MobilityEndpoints(String, f64, f64),
    #[error("boundary rates given for vertex {0}, which is not exterior")]
    RatesOnInteriorVertex(usize),
    #[error("initial density out of [0,1] on edge {0} at x={1}: {2}")]
    InitialOutOfBounds(usize, f64, f64),
}

/// Full problem data on a fixed graph. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Problem {
    pub epsilon: f64,
    pub mobility: Mobility,
    pub drift: Drift,
    /// Rates for exterior vertices; missing entries mean a closed boundary.
    boundary: BTreeMap<usize, BoundaryRates>,
    pub initial: Initial,
    pub horizon: f64,
}

impl Problem {
    pub fn new(
        graph: &MetricGraph,
        epsilon: f64,
        mobility: Mobility,
        drift: Drift,
        boundary: BTreeMap<usize, BoundaryRates>,
        initial: Initial,
        horizon: f64,
    ) -> Result<Self, ProblemError> {
        if !(epsilon > 0.0) {
            return Err(ProblemError::NonPositiveEpsilon(epsilon));
        }
        if !(horizon > 0.0) {
            return Err(ProblemError::NonPositiveHorizon(horizon));
        }
        let (f0, f1) = (mobility.f(0.0), mobility.f(1.0));
        if f0 != 0.0 || f1 != 0.0 {
            return Err(ProblemError::MobilityEndpoints(
                mobility.name().to_string(),
                f0,
                f1,
            ));
        }
        for &v in boundary.keys() {
            if graph.kind(VertexId(v)) != VertexKind::Exterior {
                return Err(ProblemError::RatesOnInteriorVertex(v));
            }
        }
        // Spot-check the initial density bounds on a coarse sample per edge.
        for (id, e) in graph.edges() {
            for i in 0..=16 {
                let x = e.length * i as f64 / 16.0;
                let r = initial.at(id, x);
                if !(-1e-12..=1.0 + 1e-12).contains(&r) {
                    return Err(ProblemError::InitialOutOfBounds(id.0, x, r));
                }
            }
        }
        Ok(Self {
            epsilon,
            mobility,
            drift,
            boundary,
            initial,
            horizon,
        })
    }

    /// Rates at an exterior vertex (closed boundary if none were given).
    pub fn rates(&self, v: VertexId) -> BoundaryRates {
        self.boundary
            .get(&v.0)
            .cloned()
            .unwrap_or_else(BoundaryRates::closed)
    }

    pub fn alpha(&self, v: VertexId, t: f64) -> f64 {
        self.boundary.get(&v.0).map_or(0.0, |r| r.alpha.at(t))
    }

    pub fn beta(&self, v: VertexId, t: f64) -> f64 {
        self.boundary.get(&v.0).map_or(0.0, |r| r.beta.at(t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn logistic_mobility_endpoints_and_derivatives() {
        let m = Mobility::Logistic;
        assert_eq!(m.f(0.0), 0.0);
        assert_eq!(m.f(1.0), 0.0);
        assert_eq!(m.f(0.5), 0.25);
        assert_eq!(m.df(0.25), 0.5);
        assert_eq!(m.ddf(0.7), -2.0);
    }

    #[test]
    fn default_problem_rates() {
        let g = presets::two_junction_graph();
        let p = presets::default_problem(&g);
        assert_eq!(p.alpha(VertexId(0), 3.0), 0.9);
        assert_eq!(p.alpha(VertexId(1), 0.1), 0.3);
        assert_eq!(p.beta(VertexId(4), 5.0), 0.8);
        assert_eq!(p.beta(VertexId(5), 5.0), 0.1);
        assert_eq!(p.alpha(VertexId(4), 5.0), 0.0);
        assert_eq!(p.epsilon, 0.01);
        assert_eq!(p.horizon, 10.0);
    }

    #[test]
    fn rejects_rates_on_interior_vertex() {
        let g = presets::two_junction_graph();
        let mut boundary = BTreeMap::new();
        boundary.insert(
            2usize,
            BoundaryRates {
                alpha: Rate::Constant(1.0),
                beta: Rate::zero(),
            },
        );
        let err = Problem::new(
            &g,
            0.01,
            Mobility::Logistic,
            Drift::Constant(1.0),
            boundary,
            Initial::zero(),
            1.0,
        )
        .unwrap_err();
        assert_eq!(err, ProblemError::RatesOnInteriorVertex(2));
    }

    #[test]
    fn rejects_bad_mobility_and_initial() {
        let g = presets::two_junction_graph();
        let bad = Mobility::Custom {
            name: "affine".into(),
            f: Arc::new(|r| r + 0.1),
            df: Arc::new(|_| 1.0),
            ddf: Arc::new(|_| 0.0),
        };
        assert!(matches!(
            Problem::new(
                &g,
                0.01,
                bad,
                Drift::Constant(1.0),
                BTreeMap::new(),
                Initial::zero(),
                1.0
            ),
            Err(ProblemError::MobilityEndpoints(..))
        ));
        assert!(matches!(
            Problem::new(
                &g,
                0.01,
                Mobility::Logistic,
                Drift::Constant(1.0),
                BTreeMap::new(),
                Initial::constant(1.5),
                1.0
            ),
            Err(ProblemError::InitialOutOfBounds(..))
        ));
    }
}
