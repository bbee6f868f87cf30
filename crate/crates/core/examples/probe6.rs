use graphdd::experiment::*;
use graphdd::fvm::{solve_fvm, FvGrid};
use graphdd::presets;

fn main() {
    let graph = presets::two_junction_graph();
    let problem = presets::default_problem_with_horizon(&graph, 2.0);
    let grid = ComparisonGrid::new(&graph, 2.0, 200, 200);
    // Level-aligned grid: t_j are exactly the n_t=40 nodes, so the floor
    // reconstruction returns nodal values and no staircase error enters.
    let level_grid = ComparisonGrid::new(&graph, 2.0, 200, 40);
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
    // Same spatial resolution, coarse time stepping: isolates the
    // implicit-Euler-in-time error at tau = T/n_t.
    // Matched coarse space grid, refined in time: isolates the
    // implicit-Euler time error at each tau.
    for n_e in [19usize, 39] {
        let fv = FvGrid::uniform(&graph, n_e).unwrap();
        let fine = sample_field(&solve_fvm(&problem, &fv, 4000, 1.0).unwrap(), &grid);
        for n_t in [40usize, 80, 160] {
            match solve_fvm(&problem, &fv, n_t, 1.0) {
                Ok(traj) => {
                    let sampled = sample_field(&traj, &grid);
                    let vs_fine = l2_error(&sampled, &fine);
                    let vs_ref = l2_error(&sampled, &reference);
                    let nodal = l2_error(
                        &sample_field(&traj, &level_grid),
                        &sample_field(&solve_fvm(&problem, &fv, 4000, 1.0).unwrap(), &level_grid),
                    );
                    println!(
                        "n_e={n_e} n_t={n_t}: time-only rel {:.4}, nodal-only rel {:.4}, vs reference rel {:.4}",
                        vs_fine.relative.unwrap(),
                        nodal.relative.unwrap(),
                        vs_ref.relative.unwrap()
                    );
                }
                Err(e) => println!("n_e={n_e} n_t={n_t}: {e}"),
            }
        }
        let vs_ref = l2_error(&fine, &reference);
        println!("n_e={n_e} fine-time spatial error rel {:.4}", vs_ref.relative.unwrap());
    }
}
