//! Directed metric graphs: vertices, edges with lengths, and the
//! interior/exterior vertex classification shared by every solver.

use thiserror::Error;

/// Dense vertex index, assigned in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub usize);

/// Dense edge index, assigned in input order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

/// A directed edge identified with the interval `[0, length]`.
#[derive(Debug, Clone)]
pub struct Edge {
    pub origin: VertexId,
    pub terminal: VertexId,
    pub length: f64,
}

/// Whether a vertex couples edges (interior) or carries flux boundary
/// conditions (exterior).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    /// At least one incoming and one outgoing edge.
    Interior,
    /// Only incoming or only outgoing edges.
    Exterior,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("edge {0} has non-positive length {1}")]
    NonPositiveLength(usize, f64),
    #[error("edge {0} is a self-loop on vertex {1}")]
    SelfLoop(usize, usize),
    #[error("vertex {0} is not incident to any edge")]
    DisconnectedVertex(usize),
    #[error("closed-system edge {0}: both endpoints are exterior vertices")]
    ClosedSystemEdge(usize),
}

/// A directed graph with edge lengths and a fixed interior/exterior
/// partition of its vertices. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MetricGraph {
    edges: Vec<Edge>,
    vertex_names: Vec<String>,
    kinds: Vec<VertexKind>,
    /// Per vertex: incident edges with `true` for incoming (vertex is terminal).
    incident: Vec<Vec<(EdgeId, bool)>>,
}

impl MetricGraph {
    /// Builds the graph from `(origin, terminal, length)` triples. Vertex
    /// indices must be dense (every index below the maximum appears).
    ///
    /// Rejects self-loops, vertices without incident edges, and edges whose
    /// endpoints would both be exterior (such an edge is a closed system:
    /// mass entering at its origin leaves immediately at its terminal).
    pub fn build(edge_list: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let names: Vec<String> = {
            let max = edge_list
                .iter()
                .flat_map(|&(o, t, _)| [o, t])
                .max()
                .unwrap_or(0);
            (0..=max).map(|i| format!("v{i}")).collect()
        };
        Self::build_named(&names, edge_list)
    }

    /// As [`MetricGraph::build`], with explicit vertex names (dense indices
    /// follow the order of `names`).
    pub fn build_named(
        names: &[String],
        edge_list: &[(usize, usize, f64)],
    ) -> Result<Self, GraphError> {
        if edge_list.is_empty() {
            return Err(GraphError::EmptyEdgeList);
        }
        let n_vertices = names.len();
        let mut edges = Vec::with_capacity(edge_list.len());
        let mut incident: Vec<Vec<(EdgeId, bool)>> = vec![Vec::new(); n_vertices];
        let mut has_in = vec![false; n_vertices];
        let mut has_out = vec![false; n_vertices];

        for (i, &(o, t, len)) in edge_list.iter().enumerate() {
            if !(len > 0.0) {
                return Err(GraphError::NonPositiveLength(i, len));
            }
            if o == t {
                return Err(GraphError::SelfLoop(i, o));
            }
            debug_assert!(o < n_vertices && t < n_vertices);
            edges.push(Edge {
                origin: VertexId(o),
                terminal: VertexId(t),
                length: len,
            });
            incident[o].push((EdgeId(i), false));
            incident[t].push((EdgeId(i), true));
            has_out[o] = true;
            has_in[t] = true;
        }

        for v in 0..n_vertices {
            if incident[v].is_empty() {
                return Err(GraphError::DisconnectedVertex(v));
            }
        }

        let kinds: Vec<VertexKind> = (0..n_vertices)
            .map(|v| {
                if has_in[v] && has_out[v] {
                    VertexKind::Interior
                } else {
                    VertexKind::Exterior
                }
            })
            .collect();

        for (i, e) in edges.iter().enumerate() {
            if kinds[e.origin.0] == VertexKind::Exterior && kinds[e.terminal.0] == VertexKind::Exterior {
                return Err(GraphError::ClosedSystemEdge(i));
            }
        }

        Ok(Self {
            edges,
            vertex_names: names.to_vec(),
            kinds,
            incident,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertex_names.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge(&self, e: EdgeId) -> &Edge {
        &self.edges[e.0]
    }

    pub fn edges(&self) -> impl Iterator<Item = (EdgeId, &Edge)> {
        self.edges.iter().enumerate().map(|(i, e)| (EdgeId(i), e))
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.vertex_names[v.0]
    }

    pub fn kind(&self, v: VertexId) -> VertexKind {
        self.kinds[v.0]
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        (0..self.n_vertices()).map(VertexId)
    }

    pub fn interior_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices().filter(|&v| self.kind(v) == VertexKind::Interior)
    }

    pub fn exterior_vertices(&self) -> impl Iterator<Item = VertexId> + '_ {
        self.vertices().filter(|&v| self.kind(v) == VertexKind::Exterior)
    }

    /// Incident edges of `v` as `(edge, incoming)`, in input order.
    pub fn incident(&self, v: VertexId) -> &[(EdgeId, bool)] {
        &self.incident[v.0]
    }

    /// Outward normal of edge `e` at vertex `v`: -1 at the origin, +1 at the
    /// terminal. `None` if `v` is not an endpoint of `e`.
    pub fn normal(&self, e: EdgeId, v: VertexId) -> Option<f64> {
        let edge = self.edge(e);
        if edge.origin == v {
            Some(-1.0)
        } else if edge.terminal == v {
            Some(1.0)
        } else {
            None
        }
    }

    /// Edge coordinate of vertex `v` on edge `e` (0 at the origin, the edge
    /// length at the terminal).
    pub fn endpoint_coord(&self, e: EdgeId, v: VertexId) -> Option<f64> {
        let edge = self.edge(e);
        if edge.origin == v {
            Some(0.0)
        } else if edge.terminal == v {
            Some(edge.length)
        } else {
            None
        }
    }

    /// Total length of all edges.
    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    /// The edge list in input order, suitable for rebuilding the graph.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        self.edges
            .iter()
            .map(|e| (e.origin.0, e.terminal.0, e.length))
            .collect()
    }
}
