use graphdd::collocation::CollocationSizes;
use graphdd::loss::*;
use graphdd::presets;
use graphdd::train::*;

fn main() {
    let lbfgs_cap: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let graph = presets::two_junction_graph();
    let problem = presets::default_problem_with_horizon(&graph, 2.0);
    let n_pts = 200;
    let cfg = TrainConfig {
        scheme: Scheme::GraphpinnDiscrete,
        hidden_layers: 2,
        width: 20,
        collocation: CollocationSizes {
            interior: 100,
            initial: 10,
            boundary: 10,
        },
        discrete: Some(DiscreteConfig {
            n_t: 1,
            spatial_points: n_pts,
            lbfgs_maxiter: lbfgs_cap,
            ..DiscreteConfig::default()
        }),
        seed: 1,
        ..TrainConfig::default()
    };
    let (sol, report) = train(&graph, &problem, &cfg, None).unwrap();
    for p in &report.phases {
        println!(
            "{}: iters={} evals={} reason={} final={:.3e}",
            p.label, p.iterations, p.fun_evals, p.reason, p.final_loss
        );
    }
    let TrainedSolution::Discrete(sol) = sol else { panic!() };
    let binding = &sol.step_bindings[0];
    let tau = sol.tau;
    let t1 = tau;
    let prev = PrevLevel::InitialData(&problem.initial);
    for (e, edge) in graph.edges() {
        let pts: Vec<f64> = (0..n_pts)
            .map(|i| edge.length * i as f64 / (n_pts - 1) as f64)
            .collect();
        let r = discrete_residual_misfit(binding, &prev, e, &pts, t1, tau, &problem, None).unwrap();
        println!("edge {} residual {:.3e}", e.0, r);
    }
    for v in graph.vertices() {
        let term = vertex_misfit(
            binding,
            v,
            &[t1],
            &graph,
            &problem,
            ContinuityVariant::SquaredDeviation,
            None,
            None,
        )
        .unwrap();
        println!("vertex {} misfit {:.3e}", v.0, term);
    }
    // Profile of the trained step-1 density on edge 0 near the influx.
    use graphdd::experiment::Field;
    for i in 0..=10 {
        let x = i as f64 / 10.0;
        print!("{:.4} ", sol.value(graphdd::graph::EdgeId(0), t1, x));
    }
    println!();
}
