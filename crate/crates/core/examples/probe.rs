use graphdd::collocation::CollocationSizes;
use graphdd::experiment::*;
use graphdd::presets;
use graphdd::train::*;
use std::time::Instant;

fn main() {
    let n_t: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4);
    let lbfgs_cap: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10000);
    let with_ref = std::env::args().nth(3).is_some();
    let later_adam: usize = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let spatial: usize = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let seed: u64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let graph = presets::two_junction_graph();
    let problem = presets::default_problem_with_horizon(&graph, 2.0);
    let reference = with_ref.then(|| {
        let grid = ComparisonGrid::new(&graph, 2.0, 200, 200);
        let t0 = Instant::now();
        let r = fvm_reference(
            &graph,
            &problem,
            &ReferenceConfig {
                cells_per_edge: 2000,
                time_steps: 1000,
                alpha_stab: 1.0,
            },
            &grid,
        )
        .unwrap();
        println!("reference wall: {:.1}s", t0.elapsed().as_secs_f64());
        r
    });
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
            n_t,
            spatial_points: spatial,
            lbfgs_maxiter: lbfgs_cap,
            later_adam_steps: later_adam,
            ..DiscreteConfig::default()
        }),
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (solution, report) = train(&graph, &problem, &cfg, reference.as_ref()).unwrap();
    println!("train wall: {:.1}s", t0.elapsed().as_secs_f64());
    for p in &report.phases {
        println!(
            "{}: iters={} evals={} reason={} final={:.3e}",
            p.label, p.iterations, p.fun_evals, p.reason, p.final_loss
        );
    }
    if let Some(rel) = report.l2_error_rel {
        println!("relative L2 error: {rel:.4}");
    }
    // Mass trajectories: systematic boundary-condition errors show up as
    // mass drift relative to the reference.
    if let Some(r) = &reference {
        use graphdd::experiment::Field;
        if let graphdd::train::TrainedSolution::Discrete(ds) = &solution {
            for frac in [0.25, 0.5, 0.75, 1.0] {
                let t = 2.0 * frac;
                let mut m_pinn = 0.0;
                let mut m_ref = 0.0;
                let nx = 200;
                for e in 0..5 {
                    let e = graphdd::graph::EdgeId(e);
                    for i in 0..=nx {
                        let x = i as f64 / nx as f64;
                        let w = if i == 0 || i == nx { 0.5 } else { 1.0 } / nx as f64;
                        m_pinn += w * ds.value(e, t, x);
                        m_ref += w * r.value(e, t, x);
                    }
                }
                println!("t={t:.2}: mass pinn {m_pinn:.4} ref {m_ref:.4} diff {:+.4}", m_pinn - m_ref);
            }
        }
    }
}
