//! Training schemes: the global space-time cost (per-edge or shared nets),
//! alternating per-edge minimization, and the implicit-Euler time-stepping
//! scheme with warm starts.

use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collocation::{linspace_closed, sample_collocation, CollocationSizes, SamplingMode};
use crate::experiment::{l2_error, sample_field, Field, SampledField};
use crate::graph::{EdgeId, MetricGraph};
use crate::loss::{
    self, flatten_trainables, load_trainables, AuxVertexValues, ContinuityVariant, GradTarget,
    LossBreakdown, LossError, NetBinding, PrevLevel, ThetaLayout,
};
use crate::net::{Activation, Mlp};
use crate::opt::{
    adam_run, lbfgs_run, AdamConfig, HistoryEntry, LbfgsConfig, LrSchedule, Phase, RunOutcome,
    StopReason,
};
use crate::problem::Problem;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("non-finite loss in {phase}: aborted at iteration {iteration}")]
    NonFinite { phase: String, iteration: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint write failed: {0}")]
    Checkpoint(#[from] crate::net::CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    GraphpinnContinuous,
    GraphpinnOnenet,
    Edgepinn,
    GraphpinnDiscrete,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::GraphpinnContinuous => "graphpinn-continuous",
            Scheme::GraphpinnOnenet => "graphpinn-onenet",
            Scheme::Edgepinn => "edgepinn",
            Scheme::GraphpinnDiscrete => "graphpinn-discrete",
        };
        write!(f, "{s}")
    }
}

/// Per-step budgets of the time-stepping scheme. The first step starts from
/// fresh parameters and gets a larger budget; later steps warm-start from
/// the previous step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscreteConfig {
    pub n_t: usize,
    /// Equidistant spatial points per edge, endpoints included.
    pub spatial_points: usize,
    pub first_adam_steps: usize,
    pub first_adam_lr: f64,
    pub later_adam_steps: usize,
    pub later_adam_lr: f64,
    pub lbfgs_maxiter: usize,
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for DiscreteConfig {
    fn default() -> Self {
        Self {
            n_t: 200,
            spatial_points: 200,
            first_adam_steps: 2000,
            first_adam_lr: 0.01,
            later_adam_steps: 100,
            later_adam_lr: 0.001,
            lbfgs_maxiter: 10_000,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub scheme: Scheme,
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub continuity: ContinuityVariant,
    pub adam_steps: usize,
    pub adam_lr: f64,
    pub lr_schedule: LrSchedule,
    pub lbfgs_maxiter: usize,
    pub lbfgs_maxfun: usize,
    pub collocation: CollocationSizes,
    pub collocation_mode: SamplingMode,
    /// Alternating sweeps over all edges (edgepinn only); the Adam/L-BFGS
    /// budgets above apply per edge visit.
    pub sweeps: usize,
    pub discrete: Option<DiscreteConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::GraphpinnContinuous,
            hidden_layers: 3,
            width: 20,
            activation: Activation::Tanh,
            continuity: ContinuityVariant::SquaredDeviation,
            adam_steps: 1000,
            adam_lr: 0.01,
            lr_schedule: LrSchedule::Constant,
            lbfgs_maxiter: 20_000,
            lbfgs_maxfun: 500_000,
            collocation: CollocationSizes {
                interior: 4000,
                initial: 1000,
                boundary: 1000,
            },
            collocation_mode: SamplingMode::UniformRandom,
            sweeps: 5,
            discrete: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn layer_sizes(&self, output_dim: usize) -> Vec<usize> {
        let mut sizes = vec![2];
        sizes.extend(std::iter::repeat(self.width).take(self.hidden_layers));
        sizes.push(output_dim);
        sizes
    }

    fn validate(&self, graph: &MetricGraph) -> Result<(), TrainError> {
        if self.hidden_layers == 0 || self.width == 0 {
            return Err(TrainError::InvalidConfig(
                "need at least one hidden layer with positive width".into(),
            ));
        }
        if self.scheme == Scheme::GraphpinnDiscrete && self.discrete.is_none() {
            return Err(TrainError::InvalidConfig(
                "graphpinn-discrete needs a [discrete] section".into(),
            ));
        }
        if self.scheme == Scheme::GraphpinnOnenet {
            let mut lengths = graph.edges().map(|(_, e)| e.length);
            let first = lengths.next().unwrap();
            if lengths.any(|l| l != first) {
                return Err(TrainError::InvalidConfig(
                    "graphpinn-onenet requires equal edge lengths".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Summary of one optimizer phase.
#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub label: String,
    pub phase: Phase,
    pub iterations: usize,
    pub fun_evals: usize,
    pub reason: StopReason,
    pub final_loss: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub scheme: Scheme,
    pub history: Vec<HistoryEntry>,
    pub phases: Vec<PhaseSummary>,
    pub final_loss: f64,
    pub l2_error_abs: Option<f64>,
    pub l2_error_rel: Option<f64>,
    pub wall_seconds: f64,
    pub breakdown: Option<LossBreakdown>,
}

/// A trained density field.
#[derive(Debug, Clone)]
pub enum TrainedSolution {
    Continuous(NetBinding),
    Discrete(DiscreteSolution),
}

/// Per-step networks of the time-stepping scheme. The trained object lives
/// on the time nodes `t_n = n·τ` (level 0 is the initial condition);
/// queries between nodes interpolate linearly in time, the standard
/// extension of a nodal time discretization.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub tau: f64,
    pub step_bindings: Vec<NetBinding>,
    pub initial: crate::problem::Initial,
}

impl DiscreteSolution {
    fn level_value(&self, n: usize, e: EdgeId, x: f64) -> f64 {
        if n == 0 {
            self.initial.at(e, x)
        } else {
            let (net, out) = self.step_bindings[n - 1].net(e);
            net.forward(n as f64 * self.tau, x, out)
        }
    }
}

impl Field for DiscreteSolution {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        let n_levels = self.step_bindings.len();
        let lo = ((t / self.tau).floor() as usize).min(n_levels);
        let hi = (lo + 1).min(n_levels);
        let v_lo = self.level_value(lo, e, x);
        if hi == lo {
            return v_lo;
        }
        let w = (t / self.tau - lo as f64).clamp(0.0, 1.0);
        if w == 0.0 {
            return v_lo;
        }
        (1.0 - w) * v_lo + w * self.level_value(hi, e, x)
    }
}

impl Field for TrainedSolution {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        match self {
            TrainedSolution::Continuous(binding) => binding.value(e, t, x),
            TrainedSolution::Discrete(sol) => sol.value(e, t, x),
        }
    }
}

/// Dispatches to the scheme named in the config.
pub fn train(
    graph: &MetricGraph,
    problem: &Problem,
    cfg: &TrainConfig,
    reference: Option<&SampledField>,
) -> Result<(TrainedSolution, TrainReport), TrainError> {
    cfg.validate(graph)?;
    match cfg.scheme {
        Scheme::GraphpinnContinuous | Scheme::GraphpinnOnenet => {
            train_graphpinn_continuous(graph, problem, cfg, reference)
        }
        Scheme::Edgepinn => train_edgepinn(graph, problem, cfg, reference),
        Scheme::GraphpinnDiscrete => train_graphpinn_discrete(graph, problem, cfg, reference),
    }
}

fn fresh_binding(
    graph: &MetricGraph,
    cfg: &TrainConfig,
    shared: bool,
) -> Result<NetBinding, TrainError> {
    let mut master = crate::rng_for(cfg.seed, 0);
    if shared {
        let sizes = cfg.layer_sizes(graph.n_edges());
        let net = Mlp::init(&sizes, cfg.activation, master.gen());
        Ok(NetBinding::shared(net, graph)?)
    } else {
        let sizes = cfg.layer_sizes(1);
        let nets = (0..graph.n_edges())
            .map(|_| Mlp::init(&sizes, cfg.activation, master.gen()))
            .collect();
        Ok(NetBinding::per_edge(nets, graph)?)
    }
}

fn check_outcome(outcome: &RunOutcome, label: &str) -> Result<(), TrainError> {
    if outcome.reason == StopReason::NonFiniteLoss {
        return Err(TrainError::NonFinite {
            phase: label.to_string(),
            iteration: outcome.iterations,
        });
    }
    Ok(())
}

fn push_phase(
    phases: &mut Vec<PhaseSummary>,
    history: &mut Vec<HistoryEntry>,
    outcome: &RunOutcome,
    label: &str,
    phase: Phase,
) {
    history.extend(outcome.history.iter().cloned());
    phases.push(PhaseSummary {
        label: label.to_string(),
        phase,
        iterations: outcome.iterations,
        fun_evals: outcome.fun_evals,
        reason: outcome.reason,
        final_loss: outcome.final_loss,
    });
}

fn errors_against(
    solution: &dyn Field,
    reference: Option<&SampledField>,
) -> (Option<f64>, Option<f64>) {
    match reference {
        Some(reference) => {
            let sampled = sample_field(solution, &reference.grid);
            let err = l2_error(&sampled, reference);
            (Some(err.absolute), err.relative)
        }
        None => (None, None),
    }
}

/// Space-time scheme: one global cost over all edges and vertex conditions,
/// minimized by Adam followed by L-BFGS over the union of all trainable
/// parameters (plus aux continuity values when that variant is active).
pub fn train_graphpinn_continuous(
    graph: &MetricGraph,
    problem: &Problem,
    cfg: &TrainConfig,
    reference: Option<&SampledField>,
) -> Result<(TrainedSolution, TrainReport), TrainError> {
    let start = Instant::now();
    let shared = cfg.scheme == Scheme::GraphpinnOnenet;
    let mut binding = fresh_binding(graph, cfg, shared)?;
    let colloc = sample_collocation(
        graph,
        problem,
        cfg.collocation,
        cfg.collocation_mode,
        cfg.seed,
    );
    let mut aux = (cfg.continuity == ContinuityVariant::AuxValues)
        .then(|| AuxVertexValues::zeros(graph, cfg.collocation.boundary));
    let layout = ThetaLayout::new(&binding, aux.as_ref());
    let theta0 = flatten_trainables(&binding, aux.as_ref());

    let mut history = Vec::new();
    let mut phases = Vec::new();

    let eval = |binding: &mut NetBinding,
                aux: &mut Option<AuxVertexValues>,
                theta: &[f64],
                grad: &mut [f64]|
     -> f64 {
        load_trainables(binding, aux.as_mut(), &layout, theta);
        let mut target = GradTarget::new(&layout, grad);
        loss::graph_loss(
            binding,
            graph,
            problem,
            &colloc,
            cfg.continuity,
            aux.as_ref(),
            Some(&mut target),
        )
        .expect("validated configuration")
    };

    let adam_cfg = AdamConfig {
        schedule: cfg.lr_schedule,
        ..AdamConfig::new(cfg.adam_steps, cfg.adam_lr)
    };
    let adam_out = adam_run(
        |t, g| eval(&mut binding, &mut aux, t, g),
        &theta0,
        &adam_cfg,
    );
    check_outcome(&adam_out, "adam")?;
    push_phase(&mut phases, &mut history, &adam_out, "adam", Phase::Adam);

    let mut lbfgs_cfg = LbfgsConfig::new(cfg.lbfgs_maxiter);
    lbfgs_cfg.maxfun = cfg.lbfgs_maxfun;
    let lbfgs_out = lbfgs_run(
        |t, g| eval(&mut binding, &mut aux, t, g),
        &adam_out.theta,
        &lbfgs_cfg,
    );
    check_outcome(&lbfgs_out, "lbfgs")?;
    push_phase(&mut phases, &mut history, &lbfgs_out, "lbfgs", Phase::Lbfgs);

    load_trainables(&mut binding, aux.as_mut(), &layout, &lbfgs_out.theta);
    let final_loss = loss::graph_loss(
        &binding,
        graph,
        problem,
        &colloc,
        cfg.continuity,
        aux.as_ref(),
        None,
    )?;
    let breakdown =
        loss::loss_breakdown(&binding, graph, problem, &colloc, cfg.continuity, aux.as_ref())?;

    let solution = TrainedSolution::Continuous(binding);
    let (l2_abs, l2_rel) = errors_against(&solution, reference);
    let report = TrainReport {
        scheme: cfg.scheme,
        history,
        phases,
        final_loss,
        l2_error_abs: l2_abs,
        l2_error_rel: l2_rel,
        wall_seconds: start.elapsed().as_secs_f64(),
        breakdown: Some(breakdown),
    };
    Ok((solution, report))
}

/// Alternating scheme: sweeps over edges in input order, each visit
/// minimizing that edge's cost with every other network frozen.
pub fn train_edgepinn(
    graph: &MetricGraph,
    problem: &Problem,
    cfg: &TrainConfig,
    reference: Option<&SampledField>,
) -> Result<(TrainedSolution, TrainReport), TrainError> {
    let start = Instant::now();
    let mut binding = fresh_binding(graph, cfg, false)?;
    let colloc = sample_collocation(
        graph,
        problem,
        cfg.collocation,
        cfg.collocation_mode,
        cfg.seed,
    );
    let layout = ThetaLayout::new(&binding, None);

    let mut history = Vec::new();
    let mut phases = Vec::new();

    for sweep in 0..cfg.sweeps {
        for (e, _) in graph.edges() {
            let (off, len) = layout.net_block(e);
            let theta_e = binding.nets()[e.0].flatten();
            let mut full = vec![0.0; layout.total()];
            let mut eval = |binding: &mut NetBinding, theta: &[f64], grad: &mut [f64]| -> f64 {
                binding.nets_mut()[e.0].load_flat(theta);
                full.fill(0.0);
                let mut target = GradTarget::new(&layout, &mut full);
                let v = loss::edge_loss(binding, e, graph, problem, &colloc, Some(&mut target))
                    .expect("validated configuration");
                grad.copy_from_slice(&full[off..off + len]);
                v
            };

            let adam_cfg = AdamConfig {
                schedule: cfg.lr_schedule,
                ..AdamConfig::new(cfg.adam_steps, cfg.adam_lr)
            };
            let adam_out = adam_run(|t, g| eval(&mut binding, t, g), &theta_e, &adam_cfg);
            let label = format!("sweep{sweep}-edge{}-adam", e.0);
            check_outcome(&adam_out, &label)?;
            push_phase(&mut phases, &mut history, &adam_out, &label, Phase::Adam);

            let mut lbfgs_cfg = LbfgsConfig::new(cfg.lbfgs_maxiter);
            lbfgs_cfg.maxfun = cfg.lbfgs_maxfun;
            let lbfgs_out = lbfgs_run(|t, g| eval(&mut binding, t, g), &adam_out.theta, &lbfgs_cfg);
            let label = format!("sweep{sweep}-edge{}-lbfgs", e.0);
            check_outcome(&lbfgs_out, &label)?;
            push_phase(&mut phases, &mut history, &lbfgs_out, &label, Phase::Lbfgs);

            binding.nets_mut()[e.0].load_flat(&lbfgs_out.theta);
        }
    }

    let final_loss = loss::graph_loss(
        &binding,
        graph,
        problem,
        &colloc,
        ContinuityVariant::SquaredDeviation,
        None,
        None,
    )?;
    let breakdown = loss::loss_breakdown(
        &binding,
        graph,
        problem,
        &colloc,
        ContinuityVariant::SquaredDeviation,
        None,
    )?;
    let solution = TrainedSolution::Continuous(binding);
    let (l2_abs, l2_rel) = errors_against(&solution, reference);
    let report = TrainReport {
        scheme: cfg.scheme,
        history,
        phases,
        final_loss,
        l2_error_abs: l2_abs,
        l2_error_rel: l2_rel,
        wall_seconds: start.elapsed().as_secs_f64(),
        breakdown: Some(breakdown),
    };
    Ok((solution, report))
}

/// Implicit-Euler time stepping: one optimization problem per time level,
/// warm-started from the previous level's parameters.
pub fn train_graphpinn_discrete(
    graph: &MetricGraph,
    problem: &Problem,
    cfg: &TrainConfig,
    reference: Option<&SampledField>,
) -> Result<(TrainedSolution, TrainReport), TrainError> {
    let start = Instant::now();
    let dcfg = cfg
        .discrete
        .clone()
        .ok_or_else(|| TrainError::InvalidConfig("missing [discrete] section".into()))?;
    let tau = problem.horizon / dcfg.n_t as f64;
    let points: Vec<Vec<f64>> = graph
        .edges()
        .map(|(_, e)| linspace_closed(dcfg.spatial_points, e.length))
        .collect();

    let mut binding = fresh_binding(graph, cfg, false)?;
    let mut aux = (cfg.continuity == ContinuityVariant::AuxValues)
        .then(|| AuxVertexValues::zeros(graph, 1));
    let layout = ThetaLayout::new(&binding, aux.as_ref());

    let mut history = Vec::new();
    let mut phases = Vec::new();
    let mut step_bindings: Vec<NetBinding> = Vec::with_capacity(dcfg.n_t);
    let mut final_loss = f64::NAN;

    for n in 1..=dcfg.n_t {
        let t_n = n as f64 * tau;
        let theta0 = flatten_trainables(&binding, aux.as_ref());
        // The previous level is frozen during this step's optimization:
        // evaluate it once per spatial point.
        let prev_values: Vec<Vec<f64>> = graph
            .edges()
            .map(|(e, _)| {
                points[e.0]
                    .iter()
                    .map(|&x| match step_bindings.last() {
                        Some(b) => {
                            let (net, out) = b.net(e);
                            net.forward(t_n - tau, x, out)
                        }
                        None => problem.initial.at(e, x),
                    })
                    .collect()
            })
            .collect();

        let eval = |binding: &mut NetBinding,
                    aux: &mut Option<AuxVertexValues>,
                    theta: &[f64],
                    grad: &mut [f64]|
         -> f64 {
            load_trainables(binding, aux.as_mut(), &layout, theta);
            let mut total = 0.0;
            let mut target = GradTarget::new(&layout, grad);
            for (e, _) in graph.edges() {
                total += loss::discrete_residual_misfit(
                    binding,
                    &PrevLevel::Sampled(&prev_values[e.0]),
                    e,
                    &points[e.0],
                    t_n,
                    tau,
                    problem,
                    Some(&mut target),
                )
                .expect("validated configuration");
            }
            let snapshot = [t_n];
            for v in graph.vertices() {
                total += loss::vertex_misfit(
                    binding,
                    v,
                    &snapshot,
                    graph,
                    problem,
                    cfg.continuity,
                    aux.as_ref(),
                    Some(&mut target),
                )
                .expect("validated configuration");
            }
            total
        };

        let (adam_steps, adam_lr) = if n == 1 {
            (dcfg.first_adam_steps, dcfg.first_adam_lr)
        } else {
            (dcfg.later_adam_steps, dcfg.later_adam_lr)
        };
        let adam_cfg = AdamConfig::new(adam_steps, adam_lr);
        let adam_out = adam_run(|t, g| eval(&mut binding, &mut aux, t, g), &theta0, &adam_cfg);
        let label = format!("step{n}-adam");
        check_outcome(&adam_out, &label)?;
        push_phase(&mut phases, &mut history, &adam_out, &label, Phase::Adam);

        let mut lbfgs_cfg = LbfgsConfig::new(dcfg.lbfgs_maxiter);
        lbfgs_cfg.maxfun = cfg.lbfgs_maxfun;
        let lbfgs_out = lbfgs_run(
            |t, g| eval(&mut binding, &mut aux, t, g),
            &adam_out.theta,
            &lbfgs_cfg,
        );
        let label = format!("step{n}-lbfgs");
        check_outcome(&lbfgs_out, &label)?;
        push_phase(&mut phases, &mut history, &lbfgs_out, &label, Phase::Lbfgs);

        load_trainables(&mut binding, aux.as_mut(), &layout, &lbfgs_out.theta);
        final_loss = lbfgs_out.final_loss;
        step_bindings.push(binding.clone());

        if let Some(dir) = &dcfg.checkpoint_dir {
            let step_dir = dir.join(format!("{}", cfg.scheme)).join(format!("step_{n:04}"));
            std::fs::create_dir_all(&step_dir)
                .map_err(crate::net::CheckpointError::Io)?;
            for (i, net) in binding.nets().iter().enumerate() {
                net.save_checkpoint(&step_dir.join(format!("edge_{i}.ckpt")))?;
            }
        }
    }

    let solution = TrainedSolution::Discrete(DiscreteSolution {
        tau,
        step_bindings,
        initial: problem.initial.clone(),
    });
    let (l2_abs, l2_rel) = errors_against(&solution, reference);
    let report = TrainReport {
        scheme: cfg.scheme,
        history,
        phases,
        final_loss,
        l2_error_abs: l2_abs,
        l2_error_rel: l2_rel,
        wall_seconds: start.elapsed().as_secs_f64(),
        breakdown: None,
    };
    Ok((solution, report))
}
