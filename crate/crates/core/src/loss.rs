//! Misfit terms and assembled cost functions for the PINN schemes: PDE
//! residual, Kirchhoff-Neumann flux balance, vertex continuity (three
//! variants), boundary flux, initial data, and the implicit-Euler residual
//! of the time-stepping scheme. Every term returns its value and can
//! accumulate the exact parameter gradient through the jet backward sweep.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use thiserror::Error;

use crate::collocation::CollocationSet;
use crate::graph::{EdgeId, MetricGraph, VertexId, VertexKind};
use crate::net::{EvalJet, JetScratch, Mlp};
use crate::problem::{Initial, Problem};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("binding shape mismatch: {0}")]
    BindingShape(String),
    #[error("vertex {0} is not an endpoint of edge {1}")]
    VertexNotOnEdge(usize, usize),
    #[error("vertex {0} is not interior")]
    NotInterior(usize),
    #[error("vertex {0} is not exterior")]
    NotExterior(usize),
    #[error("aux values for vertex {vertex} have length {found}, expected {expected}")]
    AuxSize {
        vertex: usize,
        expected: usize,
        found: usize,
    },
    #[error("missing aux values for interior vertex {0}")]
    AuxMissing(usize),
    #[error("time step must be positive, got {0}")]
    NonPositiveTau(f64),
}

/// How each edge's density is represented: one network per edge, or a
/// single shared network whose i-th output is edge i.
#[derive(Debug, Clone)]
pub enum NetBinding {
    PerEdge(Vec<Mlp>),
    Shared(Mlp),
}

impl NetBinding {
    pub fn per_edge(nets: Vec<Mlp>, graph: &MetricGraph) -> Result<Self, LossError> {
        if nets.len() != graph.n_edges() {
            return Err(LossError::BindingShape(format!(
                "{} nets for {} edges",
                nets.len(),
                graph.n_edges()
            )));
        }
        for (i, net) in nets.iter().enumerate() {
            if net.output_dim() != 1 {
                return Err(LossError::BindingShape(format!(
                    "edge {i} net has output dim {}, expected 1",
                    net.output_dim()
                )));
            }
        }
        Ok(NetBinding::PerEdge(nets))
    }

    /// A single multi-output network; requires equal edge lengths so the
    /// spatial coordinate means the same thing on every output.
    pub fn shared(net: Mlp, graph: &MetricGraph) -> Result<Self, LossError> {
        if net.output_dim() != graph.n_edges() {
            return Err(LossError::BindingShape(format!(
                "shared net has output dim {}, expected {}",
                net.output_dim(),
                graph.n_edges()
            )));
        }
        let mut lengths = graph.edges().map(|(_, e)| e.length);
        let first = lengths.next().unwrap();
        if lengths.any(|l| l != first) {
            return Err(LossError::BindingShape(
                "shared binding requires equal edge lengths".into(),
            ));
        }
        Ok(NetBinding::Shared(net))
    }

    /// Network and output index serving edge `e`.
    pub fn net(&self, e: EdgeId) -> (&Mlp, usize) {
        match self {
            NetBinding::PerEdge(nets) => (&nets[e.0], 0),
            NetBinding::Shared(net) => (net, e.0),
        }
    }

    pub fn nets(&self) -> &[Mlp] {
        match self {
            NetBinding::PerEdge(nets) => nets,
            NetBinding::Shared(net) => std::slice::from_ref(net),
        }
    }

    pub fn nets_mut(&mut self) -> &mut [Mlp] {
        match self {
            NetBinding::PerEdge(nets) => nets,
            NetBinding::Shared(net) => std::slice::from_mut(net),
        }
    }
}

/// Trainable continuity values at interior vertices, one per time snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxVertexValues {
    pub per_vertex: BTreeMap<usize, Vec<f64>>,
}

impl AuxVertexValues {
    pub fn zeros(graph: &MetricGraph, n_snapshots: usize) -> Self {
        let per_vertex = graph
            .interior_vertices()
            .map(|v| (v.0, vec![0.0; n_snapshots]))
            .collect();
        Self { per_vertex }
    }
}

/// Offsets of each trainable block inside the flattened parameter vector:
/// network blocks in edge order (a single block for a shared net), then aux
/// vertex values in vertex order.
#[derive(Debug, Clone)]
pub struct ThetaLayout {
    net_blocks: Vec<(usize, usize)>,
    shared: bool,
    aux_blocks: BTreeMap<usize, (usize, usize)>,
    total: usize,
}

impl ThetaLayout {
    pub fn new(binding: &NetBinding, aux: Option<&AuxVertexValues>) -> Self {
        let mut net_blocks = Vec::new();
        let mut off = 0;
        for net in binding.nets() {
            let len = net.param_count();
            net_blocks.push((off, len));
            off += len;
        }
        let shared = matches!(binding, NetBinding::Shared(_));
        let mut aux_blocks = BTreeMap::new();
        if let Some(aux) = aux {
            for (&v, vals) in &aux.per_vertex {
                aux_blocks.insert(v, (off, vals.len()));
                off += vals.len();
            }
        }
        Self {
            net_blocks,
            shared,
            aux_blocks,
            total: off,
        }
    }

    pub fn net_block(&self, e: EdgeId) -> (usize, usize) {
        if self.shared {
            self.net_blocks[0]
        } else {
            self.net_blocks[e.0]
        }
    }

    pub fn aux_block(&self, v: VertexId) -> Option<(usize, usize)> {
        self.aux_blocks.get(&v.0).copied()
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flattened trainable vector: network blocks in layout order, then aux
/// vertex values.
pub fn flatten_trainables(binding: &NetBinding, aux: Option<&AuxVertexValues>) -> Vec<f64> {
    let mut theta = Vec::new();
    for net in binding.nets() {
        theta.extend(net.flatten());
    }
    if let Some(aux) = aux {
        for vals in aux.per_vertex.values() {
            theta.extend_from_slice(vals);
        }
    }
    theta
}

/// Writes a flattened trainable vector back into the networks and aux
/// values, inverse of [`flatten_trainables`].
pub fn load_trainables(
    binding: &mut NetBinding,
    aux: Option<&mut AuxVertexValues>,
    layout: &ThetaLayout,
    theta: &[f64],
) {
    debug_assert_eq!(theta.len(), layout.total());
    for (net, &(off, len)) in binding.nets_mut().iter_mut().zip(&layout.net_blocks) {
        net.load_flat(&theta[off..off + len]);
    }
    if let Some(aux) = aux {
        for (&v, vals) in aux.per_vertex.iter_mut() {
            let (off, len) = layout.aux_blocks[&v];
            vals.copy_from_slice(&theta[off..off + len]);
        }
    }
}

/// Destination for gradient accumulation. `only_edge` freezes every other
/// edge's parameters: their contributions are simply not written, which is
/// the alternating-minimization contract.
pub struct GradTarget<'a> {
    pub layout: &'a ThetaLayout,
    pub grad: &'a mut [f64],
    pub only_edge: Option<EdgeId>,
}

impl<'a> GradTarget<'a> {
    pub fn new(layout: &'a ThetaLayout, grad: &'a mut [f64]) -> Self {
        debug_assert_eq!(grad.len(), layout.total());
        Self {
            layout,
            grad,
            only_edge: None,
        }
    }

    fn wants_edge(&self, e: EdgeId) -> bool {
        self.only_edge.map_or(true, |only| only == e)
    }
}

/// Variants of the interior-vertex continuity misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContinuityVariant {
    /// Squared distance of every incident trace to trainable per-snapshot
    /// vertex values.
    AuxValues,
    /// Deviations from the incident mean are summed over edges before
    /// squaring. The deviations cancel algebraically, so this term is
    /// identically zero; it is kept for reference and regression only.
    SummedDeviation,
    /// Each deviation from the incident mean is squared, then summed: zero
    /// exactly when all incident traces agree at every snapshot.
    SquaredDeviation,
}

const PAR_CHUNK: usize = 64;
const PAR_THRESHOLD: usize = 128;

/// Splits `0..n` into fixed chunks and maps them, in parallel for large `n`.
/// Results come back in chunk order, so reductions are bitwise identical
/// whether or not threads are used.
fn run_chunks<R: Send>(n: usize, f: impl Fn(Range<usize>) -> R + Sync + Send) -> Vec<R> {
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(PAR_CHUNK)
        .map(|s| s..(s + PAR_CHUNK).min(n))
        .collect();
    if n >= PAR_THRESHOLD {
        ranges.into_par_iter().map(f).collect()
    } else {
        ranges.into_iter().map(f).collect()
    }
}

/// Merges per-chunk `(sum, partial grad)` pairs in chunk order.
fn merge_chunks(parts: Vec<(f64, Option<Vec<f64>>)>, grad: Option<&mut GradTarget>) -> f64 {
    let mut total = 0.0;
    if let Some(target) = grad {
        for (s, partial) in parts {
            total += s;
            if let Some(p) = partial {
                for (g, v) in target.grad.iter_mut().zip(&p) {
                    *g += v;
                }
            }
        }
    } else {
        for (s, _) in parts {
            total += s;
        }
    }
    total
}

/// Mean squared PDE residual over the edge's collocation points:
/// `r = ∂_t ρ − ε ∂_xx ρ + f'(ρ) ∂_x ρ · d + f(ρ) ∂_x d`.
pub fn residual_misfit(
    binding: &NetBinding,
    edge: EdgeId,
    points: &[(f64, f64)],
    problem: &Problem,
    mut grad: Option<&mut GradTarget>,
) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let (net, out) = binding.net(edge);
    let want_grad = grad.as_ref().map_or(false, |g| g.wants_edge(edge));
    let (block_off, block_len) = grad
        .as_ref()
        .map(|g| g.layout.net_block(edge))
        .unwrap_or((0, 0));
    let eps = problem.epsilon;
    let inv_n = 1.0 / n as f64;

    let parts = run_chunks(n, |range| {
        let mut scratch = JetScratch::new(net);
        let mut partial = want_grad.then(|| vec![0.0; block_len]);
        let mut sum = 0.0;
        for i in range {
            let (t, x) = points[i];
            scratch.forward(net, t, x);
            let j = scratch.jet(out);
            let d = problem.drift.d(edge, t, x);
            let ddx = problem.drift.dx(edge, t, x);
            let fp = problem.mobility.df(j.value);
            let r = j.dt - eps * j.dxx
                + fp * j.dx * d
                + problem.mobility.f(j.value) * ddx;
            sum += r * r * inv_n;
            if let Some(p) = &mut partial {
                let w = 2.0 * r * inv_n;
                let seed = EvalJet {
                    value: w * (problem.mobility.ddf(j.value) * j.dx * d + fp * ddx),
                    dt: w,
                    dx: w * fp * d,
                    dxx: -w * eps,
                };
                scratch.backward(net, out, &seed, p);
            }
        }
        (sum, partial)
    });

    let mut total = 0.0;
    for (s, partial) in parts {
        total += s;
        if let (Some(p), Some(target)) = (partial, grad.as_deref_mut()) {
            for (g, v) in target.grad[block_off..block_off + block_len]
                .iter_mut()
                .zip(&p)
            {
                *g += v;
            }
        }
    }
    total
}

/// Edge flux at an endpoint: `J = −ε ∂_x ρ(t, x_v) + f(ρ(t, x_v)) d(t, x_v)`
/// with `x_v = 0` at the origin, `ℓ_e` at the terminal. The derivative is in
/// the edge coordinate; the caller applies the outward normal.
pub fn vertex_flux(
    binding: &NetBinding,
    edge: EdgeId,
    t: f64,
    vertex: VertexId,
    graph: &MetricGraph,
    problem: &Problem,
) -> Result<f64, LossError> {
    let x = graph
        .endpoint_coord(edge, vertex)
        .ok_or(LossError::VertexNotOnEdge(vertex.0, edge.0))?;
    let (net, out) = binding.net(edge);
    let j = crate::net::eval_jet(net, t, x, out);
    Ok(-problem.epsilon * j.dx + problem.mobility.f(j.value) * problem.drift.d(edge, t, x))
}

/// Shared machinery of the vertex terms: per snapshot, the jets of every
/// incident edge at the vertex go through `combine`, which returns the term
/// value and, when gradients are wanted, one adjoint seed per incident edge.
fn vertex_term(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    // (snapshot index, time, per-edge (jet, normal, drift)) -> (value, seeds)
    combine: impl Fn(usize, f64, &[(EvalJet, f64, f64)]) -> (f64, Option<Vec<EvalJet>>) + Sync,
    mut grad: Option<&mut GradTarget>,
) -> f64 {
    let n = times.len();
    if n == 0 {
        return 0.0;
    }
    let incident = graph.incident(vertex);
    let want_grad = grad.is_some();
    let only_edge = grad.as_ref().and_then(|g| g.only_edge);
    let layout = grad.as_ref().map(|g| g.layout);

    let parts = run_chunks(n, |range| {
        let mut scratches: Vec<JetScratch> = incident
            .iter()
            .map(|&(e, _)| JetScratch::new(binding.net(e).0))
            .collect();
        let mut partial = want_grad.then(|| vec![0.0; layout.unwrap().total()]);
        let mut sum = 0.0;
        let mut evals = vec![(EvalJet::default(), 0.0, 0.0); incident.len()];
        for i in range {
            let t = times[i];
            for (slot, (&(e, _), scratch)) in
                incident.iter().zip(scratches.iter_mut()).enumerate()
            {
                let x = graph.endpoint_coord(e, vertex).unwrap();
                let (net, out) = binding.net(e);
                scratch.forward(net, t, x);
                evals[slot] = (
                    scratch.jet(out),
                    graph.normal(e, vertex).unwrap(),
                    problem.drift.d(e, t, x),
                );
            }
            let (value, seeds) = combine(i, t, &evals);
            sum += value;
            if let (Some(p), Some(seeds)) = (&mut partial, seeds) {
                let layout = layout.unwrap();
                for (slot, (&(e, _), seed)) in incident.iter().zip(&seeds).enumerate() {
                    if only_edge.map_or(false, |only| only != e) {
                        continue;
                    }
                    let (off, len) = layout.net_block(e);
                    let (net, out) = binding.net(e);
                    scratches[slot].backward(net, out, seed, &mut p[off..off + len]);
                }
            }
        }
        (sum, partial)
    });
    merge_chunks(parts, grad.as_deref_mut())
}

/// Kirchhoff-Neumann misfit at an interior vertex: mean over snapshots of
/// the squared signed flux sum `(Σ_e J_e n_e)²`.
pub fn kirchhoff_misfit(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if graph.kind(vertex) != VertexKind::Interior {
        return Err(LossError::NotInterior(vertex.0));
    }
    let inv_n = 1.0 / times.len().max(1) as f64;
    let eps = problem.epsilon;
    Ok(vertex_term(
        binding,
        vertex,
        times,
        graph,
        problem,
        |_i, _t, evals| {
            let s: f64 = evals
                .iter()
                .map(|(j, n_e, d)| (-eps * j.dx + problem.mobility.f(j.value) * d) * n_e)
                .sum();
            let w = 2.0 * s * inv_n;
            let seeds = evals
                .iter()
                .map(|(j, n_e, d)| EvalJet {
                    value: w * n_e * problem.mobility.df(j.value) * d,
                    dx: -w * n_e * eps,
                    ..Default::default()
                })
                .collect();
            (s * s * inv_n, Some(seeds))
        },
        grad,
    ))
}

/// Continuity misfit with trainable vertex values: mean over snapshots of
/// `Σ_e (ρ_e(t_i, v) − ρ_v^i)²`. Gradients flow into the edge parameters
/// and into the aux block.
pub fn continuity_misfit_aux(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    aux: &AuxVertexValues,
    mut grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if graph.kind(vertex) != VertexKind::Interior {
        return Err(LossError::NotInterior(vertex.0));
    }
    let values = aux
        .per_vertex
        .get(&vertex.0)
        .ok_or(LossError::AuxMissing(vertex.0))?;
    if values.len() != times.len() {
        return Err(LossError::AuxSize {
            vertex: vertex.0,
            expected: times.len(),
            found: values.len(),
        });
    }
    let inv_n = 1.0 / times.len().max(1) as f64;
    // Aux adjoints are collected per snapshot index and written after the
    // edge sweep (they live outside the per-edge seed path).
    let aux_grad: std::sync::Mutex<Vec<f64>> =
        std::sync::Mutex::new(vec![0.0; times.len()]);
    let value = vertex_term(
        binding,
        vertex,
        times,
        graph,
        problem,
        |i, _t, evals| {
            let target = values[i];
            let mut term = 0.0;
            let mut aux_adj = 0.0;
            let seeds = evals
                .iter()
                .map(|(j, _, _)| {
                    let diff = j.value - target;
                    term += diff * diff * inv_n;
                    aux_adj -= 2.0 * diff * inv_n;
                    EvalJet {
                        value: 2.0 * diff * inv_n,
                        ..Default::default()
                    }
                })
                .collect();
            aux_grad.lock().unwrap()[i] += aux_adj;
            (term, Some(seeds))
        },
        grad.as_deref_mut(),
    );
    if let Some(target) = grad {
        if target.only_edge.is_none() {
            if let Some((off, len)) = target.layout.aux_block(vertex) {
                let collected = aux_grad.into_inner().unwrap();
                for (g, v) in target.grad[off..off + len].iter_mut().zip(&collected) {
                    *g += v;
                }
            }
        }
    }
    Ok(value)
}

/// Continuity misfit through deviations from the incident mean, in the
/// requested variant (see [`ContinuityVariant`]).
pub fn continuity_misfit_avg(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    variant: ContinuityVariant,
    grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if graph.kind(vertex) != VertexKind::Interior {
        return Err(LossError::NotInterior(vertex.0));
    }
    let inv_n = 1.0 / times.len().max(1) as f64;
    let m = graph.incident(vertex).len() as f64;
    let value = match variant {
        ContinuityVariant::AuxValues => {
            panic!("aux variant goes through continuity_misfit_aux")
        }
        ContinuityVariant::SummedDeviation => vertex_term(
            binding,
            vertex,
            times,
            graph,
            problem,
            |_i, _t, evals| {
                let mean = evals.iter().map(|(j, _, _)| j.value).sum::<f64>() / m;
                let dev_sum: f64 = evals.iter().map(|(j, _, _)| j.value - mean).sum();
                let w = 2.0 * dev_sum * inv_n;
                // d(dev_sum)/d trace_e = 1 − m·(1/m): zero by construction.
                let seeds = evals
                    .iter()
                    .map(|_| EvalJet {
                        value: w * (1.0 - m * (1.0 / m)),
                        ..Default::default()
                    })
                    .collect();
                (dev_sum * dev_sum * inv_n, Some(seeds))
            },
            grad,
        ),
        ContinuityVariant::SquaredDeviation => vertex_term(
            binding,
            vertex,
            times,
            graph,
            problem,
            |_i, _t, evals| {
                let mean = evals.iter().map(|(j, _, _)| j.value).sum::<f64>() / m;
                let mut term = 0.0;
                // Σ_e (trace_e − mean)²: the mean-shift terms cancel in the
                // gradient because the deviations sum to zero.
                let seeds = evals
                    .iter()
                    .map(|(j, _, _)| {
                        let dev = j.value - mean;
                        term += dev * dev * inv_n;
                        EvalJet {
                            value: 2.0 * dev * inv_n,
                            ..Default::default()
                        }
                    })
                    .collect();
                (term, Some(seeds))
            },
            grad,
        ),
    };
    Ok(value)
}

/// Flux-boundary misfit at an exterior vertex: mean over snapshots of
/// `(Σ_e J_e n_e + α(t)(1−ρ) − β(t)ρ)²`, with ρ the trace of the single
/// incident edge, or the incident mean when several edges meet the vertex.
pub fn dirichlet_misfit(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if graph.kind(vertex) != VertexKind::Exterior {
        return Err(LossError::NotExterior(vertex.0));
    }
    let inv_n = 1.0 / times.len().max(1) as f64;
    let eps = problem.epsilon;
    let m = graph.incident(vertex).len() as f64;
    Ok(vertex_term(
        binding,
        vertex,
        times,
        graph,
        problem,
        |_i, t, evals| {
            let alpha = problem.alpha(vertex, t);
            let beta = problem.beta(vertex, t);
            let rho = evals.iter().map(|(j, _, _)| j.value).sum::<f64>() / m;
            let s: f64 = evals
                .iter()
                .map(|(j, n_e, d)| (-eps * j.dx + problem.mobility.f(j.value) * d) * n_e)
                .sum::<f64>()
                + alpha * (1.0 - rho)
                - beta * rho;
            let w = 2.0 * s * inv_n;
            let seeds = evals
                .iter()
                .map(|(j, n_e, d)| EvalJet {
                    value: w * (n_e * problem.mobility.df(j.value) * d - (alpha + beta) / m),
                    dx: -w * n_e * eps,
                    ..Default::default()
                })
                .collect();
            (s * s * inv_n, Some(seeds))
        },
        grad,
    ))
}

/// Initial misfit on one edge: mean squared mismatch of `ρ(0, x)` against
/// the initial density.
pub fn initial_misfit(
    binding: &NetBinding,
    edge: EdgeId,
    points: &[f64],
    problem: &Problem,
    mut grad: Option<&mut GradTarget>,
) -> f64 {
    let n = points.len();
    if n == 0 {
        return 0.0;
    }
    let (net, out) = binding.net(edge);
    let want_grad = grad.as_ref().map_or(false, |g| g.wants_edge(edge));
    let (block_off, block_len) = grad
        .as_ref()
        .map(|g| g.layout.net_block(edge))
        .unwrap_or((0, 0));
    let inv_n = 1.0 / n as f64;

    let parts = run_chunks(n, |range| {
        let mut scratch = JetScratch::new(net);
        let mut partial = want_grad.then(|| vec![0.0; block_len]);
        let mut sum = 0.0;
        for i in range {
            let x = points[i];
            scratch.forward(net, 0.0, x);
            let diff = scratch.jet(out).value - problem.initial.at(edge, x);
            sum += diff * diff * inv_n;
            if let Some(p) = &mut partial {
                let seed = EvalJet {
                    value: 2.0 * diff * inv_n,
                    ..Default::default()
                };
                scratch.backward(net, out, &seed, p);
            }
        }
        (sum, partial)
    });

    let mut total = 0.0;
    for (s, partial) in parts {
        total += s;
        if let (Some(p), Some(target)) = (partial, grad.as_deref_mut()) {
            for (g, v) in target.grad[block_off..block_off + block_len]
                .iter_mut()
                .zip(&p)
            {
                *g += v;
            }
        }
    }
    total
}

/// Density at the previous time level of the implicit-Euler residual.
pub enum PrevLevel<'a> {
    /// Previous step's networks, evaluated at `t_prev`.
    Nets(&'a NetBinding, f64),
    /// The initial condition (first step).
    InitialData(&'a Initial),
    /// Precomputed values aligned with the spatial points (the previous
    /// level is frozen during a step, so trainers evaluate it once).
    Sampled(&'a [f64]),
}

impl PrevLevel<'_> {
    fn value_at(&self, e: EdgeId, x: f64, idx: usize) -> f64 {
        match self {
            PrevLevel::Nets(binding, t_prev) => {
                let (net, out) = binding.net(e);
                net.forward(*t_prev, x, out)
            }
            PrevLevel::InitialData(init) => init.at(e, x),
            PrevLevel::Sampled(vals) => vals[idx],
        }
    }
}

/// Implicit-Euler residual misfit at a fixed time `t_n`: mean over spatial
/// points of `((ρⁿ−ρⁿ⁻¹)/τ − ε ∂_xx ρⁿ + f'(ρⁿ) ∂_x ρⁿ d + f(ρⁿ) ∂_x d)²`.
/// The spatial derivatives come from jets, the time derivative from the
/// difference quotient; only the current step's parameters receive
/// gradients.
pub fn discrete_residual_misfit(
    binding: &NetBinding,
    prev: &PrevLevel,
    edge: EdgeId,
    points: &[f64],
    t_n: f64,
    tau: f64,
    problem: &Problem,
    mut grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if !(tau > 0.0) {
        return Err(LossError::NonPositiveTau(tau));
    }
    let n = points.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (net, out) = binding.net(edge);
    let want_grad = grad.as_ref().map_or(false, |g| g.wants_edge(edge));
    let (block_off, block_len) = grad
        .as_ref()
        .map(|g| g.layout.net_block(edge))
        .unwrap_or((0, 0));
    let eps = problem.epsilon;
    let inv_n = 1.0 / n as f64;

    let parts = run_chunks(n, |range| {
        let mut scratch = JetScratch::new(net);
        let mut partial = want_grad.then(|| vec![0.0; block_len]);
        let mut sum = 0.0;
        for i in range {
            let x = points[i];
            scratch.forward(net, t_n, x);
            let j = scratch.jet(out);
            let d = problem.drift.d(edge, t_n, x);
            let ddx = problem.drift.dx(edge, t_n, x);
            let fp = problem.mobility.df(j.value);
            let r = (j.value - prev.value_at(edge, x, i)) / tau - eps * j.dxx
                + fp * j.dx * d
                + problem.mobility.f(j.value) * ddx;
            sum += r * r * inv_n;
            if let Some(p) = &mut partial {
                let w = 2.0 * r * inv_n;
                let seed = EvalJet {
                    value: w
                        * (1.0 / tau + problem.mobility.ddf(j.value) * j.dx * d + fp * ddx),
                    dt: 0.0,
                    dx: w * fp * d,
                    dxx: -w * eps,
                };
                scratch.backward(net, out, &seed, p);
            }
        }
        (sum, partial)
    });

    let mut total = 0.0;
    for (s, partial) in parts {
        total += s;
        if let (Some(p), Some(target)) = (partial, grad.as_deref_mut()) {
            for (g, v) in target.grad[block_off..block_off + block_len]
                .iter_mut()
                .zip(&p)
            {
                *g += v;
            }
        }
    }
    Ok(total)
}

/// Vertex misfit dispatch: Kirchhoff + continuity at interior vertices, the
/// flux-boundary term at exterior ones.
pub fn vertex_misfit(
    binding: &NetBinding,
    vertex: VertexId,
    times: &[f64],
    graph: &MetricGraph,
    problem: &Problem,
    variant: ContinuityVariant,
    aux: Option<&AuxVertexValues>,
    mut grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    match graph.kind(vertex) {
        VertexKind::Interior => {
            let k = kirchhoff_misfit(binding, vertex, times, graph, problem, grad.as_deref_mut())?;
            let c = match variant {
                ContinuityVariant::AuxValues => {
                    let aux = aux.ok_or(LossError::AuxMissing(vertex.0))?;
                    continuity_misfit_aux(binding, vertex, times, graph, problem, aux, grad)?
                }
                v => continuity_misfit_avg(binding, vertex, times, graph, problem, v, grad)?,
            };
            Ok(k + c)
        }
        VertexKind::Exterior => dirichlet_misfit(binding, vertex, times, graph, problem, grad),
    }
}

/// Global cost: boundary terms over exterior vertices, Kirchhoff plus
/// continuity over interior vertices, residual plus initial data over edges.
/// All terms carry weight one.
pub fn graph_loss(
    binding: &NetBinding,
    graph: &MetricGraph,
    problem: &Problem,
    colloc: &CollocationSet,
    variant: ContinuityVariant,
    aux: Option<&AuxVertexValues>,
    mut grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    let mut total = 0.0;
    for v in graph.vertices() {
        total += vertex_misfit(
            binding,
            v,
            colloc.snapshots(v),
            graph,
            problem,
            variant,
            aux,
            grad.as_deref_mut(),
        )?;
    }
    for (e, _) in graph.edges() {
        total += residual_misfit(
            binding,
            e,
            colloc.interior_points(e),
            problem,
            grad.as_deref_mut(),
        );
        total += initial_misfit(
            binding,
            e,
            colloc.initial_points(e),
            problem,
            grad.as_deref_mut(),
        );
    }
    Ok(total)
}

/// Cost of a single edge: its residual and initial terms plus the vertex
/// terms of both endpoints (continuity in the squared-deviation form).
/// Gradients flow only into this edge's parameters; every other network is
/// treated as constant.
pub fn edge_loss(
    binding: &NetBinding,
    edge: EdgeId,
    graph: &MetricGraph,
    problem: &Problem,
    colloc: &CollocationSet,
    mut grad: Option<&mut GradTarget>,
) -> Result<f64, LossError> {
    if let Some(target) = grad.as_deref_mut() {
        target.only_edge = Some(edge);
    }
    let mut total = residual_misfit(
        binding,
        edge,
        colloc.interior_points(edge),
        problem,
        grad.as_deref_mut(),
    );
    total += initial_misfit(
        binding,
        edge,
        colloc.initial_points(edge),
        problem,
        grad.as_deref_mut(),
    );
    let e = graph.edge(edge);
    for v in [e.origin, e.terminal] {
        total += vertex_misfit(
            binding,
            v,
            colloc.snapshots(v),
            graph,
            problem,
            ContinuityVariant::SquaredDeviation,
            None,
            grad.as_deref_mut(),
        )?;
    }
    Ok(total)
}

/// Per-term values for reporting which conditions dominate the cost.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LossBreakdown {
    pub residual: Vec<f64>,
    pub initial: Vec<f64>,
    pub kirchhoff: Vec<(usize, f64)>,
    pub continuity: Vec<(usize, f64)>,
    pub boundary: Vec<(usize, f64)>,
    pub total: f64,
}

pub fn loss_breakdown(
    binding: &NetBinding,
    graph: &MetricGraph,
    problem: &Problem,
    colloc: &CollocationSet,
    variant: ContinuityVariant,
    aux: Option<&AuxVertexValues>,
) -> Result<LossBreakdown, LossError> {
    let mut out = LossBreakdown {
        residual: Vec::new(),
        initial: Vec::new(),
        kirchhoff: Vec::new(),
        continuity: Vec::new(),
        boundary: Vec::new(),
        total: 0.0,
    };
    for (e, _) in graph.edges() {
        let r = residual_misfit(binding, e, colloc.interior_points(e), problem, None);
        let i = initial_misfit(binding, e, colloc.initial_points(e), problem, None);
        out.residual.push(r);
        out.initial.push(i);
        out.total += r + i;
    }
    for v in graph.vertices() {
        let times = colloc.snapshots(v);
        match graph.kind(v) {
            VertexKind::Interior => {
                let k = kirchhoff_misfit(binding, v, times, graph, problem, None)?;
                let c = match variant {
                    ContinuityVariant::AuxValues => {
                        let aux = aux.ok_or(LossError::AuxMissing(v.0))?;
                        continuity_misfit_aux(binding, v, times, graph, problem, aux, None)?
                    }
                    other => {
                        continuity_misfit_avg(binding, v, times, graph, problem, other, None)?
                    }
                };
                out.kirchhoff.push((v.0, k));
                out.continuity.push((v.0, c));
                out.total += k + c;
            }
            VertexKind::Exterior => {
                let d = dirichlet_misfit(binding, v, times, graph, problem, None)?;
                out.boundary.push((v.0, d));
                out.total += d;
            }
        }
    }
    Ok(out)
}
