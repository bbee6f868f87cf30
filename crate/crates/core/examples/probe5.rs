use graphdd::collocation::{sample_collocation, SamplingMode};
use graphdd::experiment::*;
use graphdd::loss::*;
use graphdd::net::Mlp;
use graphdd::opt::*;
use graphdd::presets;
use graphdd::train::{Scheme, TrainConfig};
use rand::Rng;
use std::time::Instant;

fn main() {
    let mut args = std::env::args().skip(1);
    let adam_steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(1000);
    let segments: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);
    let seg_len: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let onenet = args.next().as_deref() == Some("onenet");
    let width: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let layers: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let graph = presets::two_junction_graph();
    let problem = presets::default_problem(&graph);
    let grid = ComparisonGrid::new(&graph, 10.0, 200, 200);
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

    let cfg = TrainConfig {
        scheme: if onenet {
            Scheme::GraphpinnOnenet
        } else {
            Scheme::GraphpinnContinuous
        },
        hidden_layers: layers,
        width,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut master = graphdd::rng_for(cfg.seed, 0);
    let mut binding = if onenet {
        NetBinding::shared(
            Mlp::init(&cfg.layer_sizes(graph.n_edges()), cfg.activation, master.gen()),
            &graph,
        )
        .unwrap()
    } else {
        NetBinding::per_edge(
            (0..graph.n_edges())
                .map(|_| Mlp::init(&cfg.layer_sizes(1), cfg.activation, master.gen()))
                .collect(),
            &graph,
        )
        .unwrap()
    };
    let colloc = sample_collocation(
        &graph,
        &problem,
        cfg.collocation,
        SamplingMode::UniformRandom,
        cfg.seed,
    );
    let layout = ThetaLayout::new(&binding, None);
    let mut theta = flatten_trainables(&binding, None);

    let error_now = |binding: &NetBinding| -> f64 {
        let sampled = sample_field(binding, &grid);
        l2_error(&sampled, &reference).relative.unwrap()
    };
    let t0 = Instant::now();
    println!("init: rel {:.4}", error_now(&binding));

    {
        let adam_cfg = AdamConfig::new(adam_steps, 0.01);
        let out = adam_run(
            |t, g| {
                load_trainables(&mut binding, None, &layout, t);
                let mut target = GradTarget::new(&layout, g);
                graph_loss(
                    &binding,
                    &graph,
                    &problem,
                    &colloc,
                    ContinuityVariant::SquaredDeviation,
                    None,
                    Some(&mut target),
                )
                .unwrap()
            },
            &theta,
            &adam_cfg,
        );
        theta = out.theta;
        load_trainables(&mut binding, None, &layout, &theta);
        println!(
            "after adam {}: loss {:.4e} rel {:.4} t={:.0}s",
            adam_steps,
            out.final_loss,
            error_now(&binding),
            t0.elapsed().as_secs_f64()
        );
    }

    for seg in 1..=segments {
        let mut lb = LbfgsConfig::new(seg_len);
        lb.pgtol = 0.0;
        let out = lbfgs_run(
            |t, g| {
                load_trainables(&mut binding, None, &layout, t);
                let mut target = GradTarget::new(&layout, g);
                graph_loss(
                    &binding,
                    &graph,
                    &problem,
                    &colloc,
                    ContinuityVariant::SquaredDeviation,
                    None,
                    Some(&mut target),
                )
                .unwrap()
            },
            &theta,
            &lb,
        );
        theta = out.theta;
        load_trainables(&mut binding, None, &layout, &theta);
        println!(
            "after lbfgs {}: loss {:.4e} rel {:.4} reason {} t={:.0}s",
            seg * seg_len,
            out.final_loss,
            error_now(&binding),
            out.reason,
            t0.elapsed().as_secs_f64()
        );
    }
}
