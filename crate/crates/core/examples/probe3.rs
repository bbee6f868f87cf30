use graphdd::collocation::CollocationSizes;
use graphdd::net::eval_jet;
use graphdd::presets;
use graphdd::train::*;

fn main() {
    let graph = presets::two_junction_graph();
    let problem = presets::default_problem_with_horizon(&graph, 2.0);
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
            spatial_points: 200,
            lbfgs_maxiter: 2000,
            ..DiscreteConfig::default()
        }),
        seed: 1,
        ..TrainConfig::default()
    };
    let (sol, _) = train(&graph, &problem, &cfg, None).unwrap();
    let TrainedSolution::Discrete(sol) = sol else { panic!() };
    let binding = &sol.step_bindings[0];
    let tau = sol.tau;
    let (net, out) = binding.net(graphdd::graph::EdgeId(0));
    println!("tau = {tau}");
    for i in [0, 40, 100, 160, 199] {
        let x = i as f64 / 199.0;
        let j = eval_jet(net, tau, x, out);
        let r = j.value / tau - problem.epsilon * j.dxx + (1.0 - 2.0 * j.value) * j.dx;
        println!(
            "x={x:.3} value={:+.4} dt={:+.3} dx={:+.3} dxx={:+.1} r={:+.3e}",
            j.value, j.dt, j.dx, j.dxx, r
        );
    }
}
