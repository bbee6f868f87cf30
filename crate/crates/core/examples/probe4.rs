use graphdd::experiment::*;
use graphdd::presets;
use graphdd::train::*;
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let adam: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let lbfgs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let scheme = match args.next().as_deref() {
        Some("onenet") => Scheme::GraphpinnOnenet,
        _ => Scheme::GraphpinnContinuous,
    };
    let width: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let layers: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let graph = presets::two_junction_graph();
    let problem = presets::default_problem(&graph);
    let grid = ComparisonGrid::new(&graph, 10.0, 200, 200);
    let t0 = Instant::now();
    let reference = fvm_reference(
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

    let cfg = TrainConfig {
        scheme,
        hidden_layers: layers,
        width,
        adam_steps: adam,
        lbfgs_maxiter: lbfgs,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, report) = train(&graph, &problem, &cfg, Some(&reference)).unwrap();
    println!("train wall: {:.1}s", t0.elapsed().as_secs_f64());
    for p in &report.phases {
        println!(
            "{}: iters={} evals={} reason={} final={:.3e}",
            p.label, p.iterations, p.fun_evals, p.reason, p.final_loss
        );
    }
    println!(
        "relative L2 error: {:.4}",
        report.l2_error_rel.unwrap_or(f64::NAN)
    );
    // Loss milestones along the run.
    for h in report.history.iter().step_by(200.max(report.history.len() / 20)) {
        println!(
            "  {}:{} loss {:.4e} gnorm {:.3e} t={:.0}s",
            h.phase, h.iteration, h.loss, h.grad_norm, h.elapsed_secs
        );
    }
}
