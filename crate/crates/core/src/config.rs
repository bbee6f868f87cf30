//! File-backed configuration: the graph/problem description and the
//! experiment driver settings. Parsers reject unknown keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::ReferenceConfig;
use crate::graph::{GraphError, MetricGraph};
use crate::problem::{BoundaryRates, Drift, Initial, Mobility, Problem, ProblemError, Rate};
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("unknown vertex name {0:?} in edge list")]
    UnknownVertex(String),
    #[error("unknown vertex name {0:?} in boundary table")]
    UnknownBoundaryVertex(String),
    #[error("unknown mobility {0:?} (supported: logistic)")]
    UnknownMobility(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub origin: String,
    pub terminal: String,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSpec {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RatesSpec {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 0.0,
        }
    }
}

/// Initial density shapes expressible in config files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialSpec {
    #[default]
    Zero,
    Constant(f64),
    /// `offset + amplitude · sin(πx)` per edge.
    SinePi { offset: f64, amplitude: f64 },
}

impl InitialSpec {
    fn build(&self) -> Initial {
        match *self {
            InitialSpec::Zero => Initial::zero(),
            InitialSpec::Constant(c) => Initial::constant(c),
            InitialSpec::SinePi { offset, amplitude } => Initial::from_fn(move |_, x| {
                offset + amplitude * (std::f64::consts::PI * x).sin()
            }),
        }
    }
}

/// Graph plus problem data, JSON-compatible. Unknown keys are rejected at
/// every level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    pub epsilon: f64,
    pub horizon: f64,
    #[serde(default = "default_mobility")]
    pub mobility: String,
    #[serde(default = "default_potential_gradient")]
    pub potential_gradient: f64,
    #[serde(default)]
    pub boundary: BTreeMap<String, RatesSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
}

fn default_mobility() -> String {
    "logistic".to_string()
}

fn default_potential_gradient() -> f64 {
    1.0
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn build(&self) -> Result<(MetricGraph, Problem), ConfigError> {
        let index_of = |name: &str| self.vertices.iter().position(|v| v == name);
        let mut edge_list = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let o = index_of(&e.origin).ok_or_else(|| ConfigError::UnknownVertex(e.origin.clone()))?;
            let t = index_of(&e.terminal)
                .ok_or_else(|| ConfigError::UnknownVertex(e.terminal.clone()))?;
            edge_list.push((o, t, e.length));
        }
        let graph = MetricGraph::build_named(&self.vertices, &edge_list)?;

        if self.mobility != "logistic" {
            return Err(ConfigError::UnknownMobility(self.mobility.clone()));
        }
        let mut boundary = BTreeMap::new();
        for (name, rates) in &self.boundary {
            let idx = index_of(name).ok_or_else(|| ConfigError::UnknownBoundaryVertex(name.clone()))?;
            boundary.insert(
                idx,
                BoundaryRates {
                    alpha: Rate::Constant(rates.alpha),
                    beta: Rate::Constant(rates.beta),
                },
            );
        }
        let problem = Problem::new(
            &graph,
            self.epsilon,
            Mobility::Logistic,
            Drift::Constant(self.potential_gradient),
            boundary,
            self.initial.build(),
            self.horizon,
        )?;
        Ok((graph, problem))
    }

    /// Canonical serialized form, used as cache-key material.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("problem file serializes")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// Spatial intervals per edge (points = n_x + 1).
    pub n_x: usize,
    /// Time intervals (points = n_t + 1).
    pub n_t: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n_x: 200, n_t: 200 }
    }
}

/// Full experiment description: problem file, training scheme, reference
/// and comparison resolutions, outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub problem: PathBuf,
    pub train: TrainConfig,
    pub reference: ReferenceConfig,
    pub comparison: GridSpec,
    pub snapshots: Vec<f64>,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: PathBuf::from("problem.json"),
            train: TrainConfig::default(),
            reference: ReferenceConfig::default(),
            comparison: GridSpec::default(),
            snapshots: Vec::new(),
            output_dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{VertexId, VertexKind};

    fn model_json() -> String {
        r#"{
            "vertices": ["v1", "v2", "v3", "v4", "v5", "v6"],
            "edges": [
                {"origin": "v1", "terminal": "v3", "length": 1.0},
                {"origin": "v2", "terminal": "v3", "length": 1.0},
                {"origin": "v3", "terminal": "v4", "length": 1.0},
                {"origin": "v4", "terminal": "v5", "length": 1.0},
                {"origin": "v4", "terminal": "v6", "length": 1.0}
            ],
            "epsilon": 0.01,
            "horizon": 10.0,
            "mobility": "logistic",
            "potential_gradient": 1.0,
            "boundary": {
                "v1": {"alpha": 0.9},
                "v2": {"alpha": 0.3},
                "v5": {"beta": 0.8},
                "v6": {"beta": 0.1}
            },
            "initial": "zero"
        }"#
        .to_string()
    }

    #[test]
    fn parses_model_problem() {
        let pf: ProblemFile = serde_json::from_str(&model_json()).unwrap();
        let (graph, problem) = pf.build().unwrap();
        assert_eq!(graph.n_edges(), 5);
        assert_eq!(graph.kind(VertexId(2)), VertexKind::Interior);
        assert_eq!(problem.alpha(VertexId(0), 0.0), 0.9);
        assert_eq!(problem.beta(VertexId(5), 0.0), 0.1);
        assert_eq!(problem.epsilon, 0.01);
    }

    #[test]
    fn rejects_unknown_keys_and_names() {
        let with_extra = model_json().replace("\"epsilon\"", "\"unknown_key\": 1, \"epsilon\"");
        assert!(serde_json::from_str::<ProblemFile>(&with_extra).is_err());

        let bad_edge = model_json().replace("\"v2\", \"terminal\": \"v3\"", "\"vX\", \"terminal\": \"v3\"");
        let pf: ProblemFile = serde_json::from_str(&bad_edge).unwrap();
        assert!(matches!(pf.build(), Err(ConfigError::UnknownVertex(_))));

        let bad_mob = model_json().replace("logistic", "parabolic");
        let pf: ProblemFile = serde_json::from_str(&bad_mob).unwrap();
        assert!(matches!(pf.build(), Err(ConfigError::UnknownMobility(_))));
    }

    #[test]
    fn initial_spec_variants() {
        let zero: InitialSpec = serde_json::from_str("\"zero\"").unwrap();
        assert!(matches!(zero, InitialSpec::Zero));
        let c: InitialSpec = serde_json::from_str("{\"constant\": 0.4}").unwrap();
        assert!(matches!(c, InitialSpec::Constant(v) if v == 0.4));
        let s: InitialSpec =
            serde_json::from_str("{\"sine-pi\": {\"offset\": 0.5, \"amplitude\": 0.3}}").unwrap();
        let init = s.build();
        let v = init.at(crate::graph::EdgeId(0), 0.5);
        approx::assert_relative_eq!(v, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn experiment_config_roundtrip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.comparison.n_x, 200);
        assert_eq!(back.reference.cells_per_edge, 2000);
    }
}
