//! Command-line harness: reference solves, PINN training, table sweeps,
//! error comparison, and snapshot extraction.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use graphdd::config::{ExperimentConfig, GridSpec, ProblemFile};
use graphdd::experiment::{
    export_snapshots, l2_error, run_experiment, ComparisonGrid, ReferenceConfig, SampledField,
};
use graphdd::fvm::{solve_fvm_with, FvGrid};
use graphdd::train::{DiscreteConfig, Scheme, TrainConfig};

#[derive(Parser)]
#[command(name = "graphdd", version, about = "Drift-diffusion solvers on metric graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the finite-volume reference scheme.
    Fvm(FvmArgs),
    /// Train one PINN scheme against a cached reference solution.
    Train(TrainArgs),
    /// Reproduce an error table over layer/width combinations.
    Sweep(SweepArgs),
    /// Compare two sampled solution files in the graph L² norm.
    Error(ErrorArgs),
    /// Extract per-time snapshots from a sampled solution file.
    Snapshot(SnapshotArgs),
}

#[derive(Args)]
struct FvmArgs {
    /// Graph + problem description (JSON).
    #[arg(long)]
    problem: PathBuf,
    /// Grid parameter n_e per edge.
    #[arg(long, default_value_t = 2000)]
    cells: usize,
    /// Number of time steps.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha_stab: f64,
    /// Trajectory CSV destination (time,id,cell,value).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every n-th time level in the trajectory dump.
    #[arg(long, default_value_t = 1)]
    t_stride: usize,
    /// Snapshot times, comma separated.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<f64>,
    /// Path prefix for snapshot CSVs.
    #[arg(long, default_value = "fvm")]
    snap_prefix: PathBuf,
    /// Spatial points per edge for snapshots (intervals).
    #[arg(long, default_value_t = 200)]
    snap_nx: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Graph + problem description (JSON).
    #[arg(long, required_unless_present = "config")]
    problem: Option<PathBuf>,
    /// Training scheme.
    #[arg(long, value_parser = parse_scheme, required_unless_present = "config")]
    scheme: Option<Scheme>,
    /// RNG seed (initialization and collocation).
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    /// Experiment config file; its values override all flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Directory for cached reference solutions.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    /// Reference resolution: cells per edge.
    #[arg(long, default_value_t = 2000)]
    ref_cells: usize,
    /// Reference resolution: time steps.
    #[arg(long, default_value_t = 1000)]
    ref_steps: usize,
    /// Comparison grid intervals per axis.
    #[arg(long, default_value_t = 200)]
    grid_n: usize,
    /// Snapshot times, comma separated.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<f64>,
}

#[derive(Args, Clone)]
struct TrainFlags {
    #[arg(long, default_value_t = 3)]
    hidden_layers: usize,
    #[arg(long, default_value_t = 20)]
    width: usize,
    #[arg(long, default_value_t = 1000)]
    adam_steps: usize,
    #[arg(long, default_value_t = 0.01)]
    adam_lr: f64,
    #[arg(long, default_value_t = 20000)]
    lbfgs_maxiter: usize,
    #[arg(long, default_value_t = 4000)]
    n_interior: usize,
    #[arg(long, default_value_t = 1000)]
    n_initial: usize,
    #[arg(long, default_value_t = 1000)]
    n_boundary: usize,
    /// Alternating sweeps (edgepinn).
    #[arg(long, default_value_t = 5)]
    sweeps: usize,
    /// Time levels of the discrete scheme.
    #[arg(long, default_value_t = 200)]
    n_t: usize,
    /// Equidistant spatial points per edge (discrete scheme).
    #[arg(long, default_value_t = 200)]
    spatial_points: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, required_unless_present = "config")]
    problem: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme, required_unless_present = "config")]
    scheme: Option<Scheme>,
    #[arg(long, required_unless_present = "config")]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hidden-layer counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    layers: Vec<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "10,20,30,40")]
    widths: Vec<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, default_value_t = 2000)]
    ref_cells: usize,
    #[arg(long, default_value_t = 1000)]
    ref_steps: usize,
    #[arg(long, default_value_t = 200)]
    grid_n: usize,
}

#[derive(Args)]
struct ErrorArgs {
    /// Candidate sampled-field CSV.
    #[arg(long)]
    a: PathBuf,
    /// Reference sampled-field CSV.
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args)]
struct SnapshotArgs {
    /// Sampled-field CSV (as written by `train` or `fvm` runs).
    #[arg(long)]
    field: PathBuf,
    /// Snapshot times, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<f64>,
    #[arg(long, default_value = "snapshot")]
    out_prefix: PathBuf,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    match s {
        "graphpinn-continuous" => Ok(Scheme::GraphpinnContinuous),
        "graphpinn-onenet" => Ok(Scheme::GraphpinnOnenet),
        "edgepinn" => Ok(Scheme::Edgepinn),
        "graphpinn-discrete" => Ok(Scheme::GraphpinnDiscrete),
        other => Err(format!(
            "unknown scheme {other:?} (graphpinn-continuous, graphpinn-onenet, edgepinn, graphpinn-discrete)"
        )),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Fvm(args) => cmd_fvm(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Error(args) => cmd_error(args),
        Command::Snapshot(args) => cmd_snapshot(args),
    }
}

fn cmd_fvm(args: FvmArgs) -> Result<()> {
    let (graph, problem) = ProblemFile::load(&args.problem)?.build()?;
    let grid = FvGrid::uniform(&graph, args.cells)?;
    let tau = problem.horizon / args.steps as f64;

    let mut traj_writer = match &args.out {
        Some(path) => {
            let mut w = std::io::BufWriter::new(
                std::fs::File::create(path).with_context(|| format!("create {}", path.display()))?,
            );
            writeln!(w, "time,id,cell,value")?;
            Some(w)
        }
        None => None,
    };
    // Map snapshot times onto the state index holding on [t_n, t_{n+1}).
    for &t in &args.snapshots {
        if !(0.0..=problem.horizon).contains(&t) {
            bail!("snapshot time {t} outside [0, {}]", problem.horizon);
        }
    }
    let snap_state: Vec<usize> = args
        .snapshots
        .iter()
        .map(|&t| ((t / tau).floor() as usize).min(args.steps))
        .collect();
    let stride = args.t_stride.max(1);

    let mut io_error: Option<std::io::Error> = None;
    let final_state = solve_fvm_with(&problem, &grid, args.steps, args.alpha_stab, |n, state| {
        if io_error.is_some() {
            return;
        }
        if let Some(w) = traj_writer.as_mut() {
            if n % stride == 0 || n == args.steps {
                let result = (|| -> std::io::Result<()> {
                    for (id, _) in graph.edges() {
                        for k in 1..grid.n_cells(id) {
                            writeln!(
                                w,
                                "{},e{},{k},{}",
                                state.time,
                                id.0,
                                state.interior(&grid, id, k)
                            )?;
                        }
                    }
                    for v in graph.vertices() {
                        writeln!(
                            w,
                            "{},{},,{}",
                            state.time,
                            graph.vertex_name(v),
                            state.vertex(&grid, v)
                        )?;
                    }
                    Ok(())
                })();
                if let Err(e) = result {
                    io_error = Some(e);
                }
            }
        }
        for (si, &target) in snap_state.iter().enumerate() {
            if target == n {
                let t = args.snapshots[si];
                let mut name = args.snap_prefix.as_os_str().to_owned();
                name.push(format!("_t{t}.csv"));
                let path = PathBuf::from(name);
                let result = (|| -> std::io::Result<()> {
                    let mut out = String::from("edge,x,value\n");
                    for (id, edge) in graph.edges() {
                        for i in 0..=args.snap_nx {
                            let x = edge.length * (i as f64 / args.snap_nx as f64);
                            let h = grid.h(id);
                            let k = ((x / h).floor() as usize).min(grid.n_cells(id));
                            out.push_str(&format!("{},{x},{}\n", id.0, state.cell(&grid, id, k)));
                        }
                    }
                    std::fs::write(&path, out)
                })();
                if let Err(e) = result {
                    io_error = Some(e);
                }
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e).context("writing outputs");
    }
    println!(
        "fvm: cells={} steps={} final mass={:.6} min={:.3e} max={:.6}",
        args.cells,
        args.steps,
        final_state.total_mass(&grid),
        final_state.min_value(),
        final_state.max_value()
    );
    Ok(())
}

fn experiment_from_train_args(args: &TrainArgs) -> Result<ExperimentConfig> {
    if let Some(path) = &args.config {
        // Per the interface contract, the config file overrides flags.
        return Ok(ExperimentConfig::load(path)?);
    }
    let flags = &args.train;
    let scheme = args.scheme.expect("clap enforces scheme without config");
    let train = TrainConfig {
        scheme,
        hidden_layers: flags.hidden_layers,
        width: flags.width,
        adam_steps: flags.adam_steps,
        adam_lr: flags.adam_lr,
        lbfgs_maxiter: flags.lbfgs_maxiter,
        collocation: graphdd::collocation::CollocationSizes {
            interior: flags.n_interior,
            initial: flags.n_initial,
            boundary: flags.n_boundary,
        },
        sweeps: flags.sweeps,
        discrete: (scheme == Scheme::GraphpinnDiscrete).then(|| DiscreteConfig {
            n_t: flags.n_t,
            spatial_points: flags.spatial_points,
            ..DiscreteConfig::default()
        }),
        seed: args.seed.expect("clap enforces seed without config"),
        ..TrainConfig::default()
    };
    Ok(ExperimentConfig {
        problem: args.problem.clone().expect("clap enforces problem without config"),
        train,
        reference: ReferenceConfig {
            cells_per_edge: args.ref_cells,
            time_steps: args.ref_steps,
            alpha_stab: 1.0,
        },
        comparison: GridSpec {
            n_x: args.grid_n,
            n_t: args.grid_n,
        },
        snapshots: args.snapshots.clone(),
        output_dir: args.out_dir.clone(),
        cache_dir: args.cache_dir.clone(),
    })
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = experiment_from_train_args(&args)?;
    let summary = run_experiment(&cfg)?;
    println!(
        "{}: relative L2 error {}, final loss {:.3e}, wall {:.1}s",
        summary.scheme,
        summary
            .l2_error_rel
            .map_or("n/a".to_string(), |v| format!("{v:.4}")),
        summary.final_loss,
        summary.wall_seconds
    );
    for f in &summary.files {
        log::info!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let base = experiment_from_train_args(&TrainArgs {
        problem: args.problem.clone(),
        scheme: args.scheme,
        seed: args.seed,
        config: args.config.clone(),
        out_dir: args.out_dir.clone(),
        cache_dir: args.cache_dir.clone(),
        train: args.train.clone(),
        ref_cells: args.ref_cells,
        ref_steps: args.ref_steps,
        grid_n: args.grid_n,
        snapshots: Vec::new(),
    })?;
    // Cache the shared reference next to the sweep outputs by default.
    let mut base = base;
    if base.cache_dir.is_none() {
        base.cache_dir = Some(base.output_dir.join("ref-cache"));
    }

    std::fs::create_dir_all(&base.output_dir)
        .with_context(|| format!("create {}", base.output_dir.display()))?;
    let table_path = base.output_dir.join("table.csv");
    let mut table = String::from("hidden_layers,width,l2_rel,l2_abs,final_loss,wall_seconds\n");
    for &layers in &args.layers {
        for &width in &args.widths {
            let mut cell_cfg = base.clone();
            cell_cfg.train.hidden_layers = layers;
            cell_cfg.train.width = width;
            cell_cfg.output_dir = base.output_dir.join(format!("cell_{layers}x{width}"));
            let summary = run_experiment(&cell_cfg)
                .with_context(|| format!("sweep cell {layers}x{width}"))?;
            let rel = summary
                .l2_error_rel
                .map_or("nan".to_string(), |v| v.to_string());
            let abs = summary
                .l2_error_abs
                .map_or("nan".to_string(), |v| v.to_string());
            println!(
                "cell layers={layers} width={width}: rel L2 {}",
                summary
                    .l2_error_rel
                    .map_or("n/a".to_string(), |v| format!("{v:.4}"))
            );
            table.push_str(&format!(
                "{layers},{width},{rel},{abs},{},{}\n",
                summary.final_loss, summary.wall_seconds
            ));
            std::fs::write(&table_path, &table)
                .with_context(|| format!("write {}", table_path.display()))?;
        }
    }
    println!("table written to {}", table_path.display());
    Ok(())
}

fn cmd_error(args: ErrorArgs) -> Result<()> {
    let a = SampledField::read_csv(&args.a)?;
    let b = SampledField::read_csv(&args.b)?;
    if a.grid != b.grid {
        bail!(
            "fields use different grids: {:?} vs {:?}",
            a.grid,
            b.grid
        );
    }
    let err = l2_error(&a, &b);
    match err.relative {
        Some(rel) => println!("absolute {} relative {rel}", err.absolute),
        None => println!("absolute {} relative undefined (zero reference)", err.absolute),
    }
    Ok(())
}

fn cmd_snapshot(args: SnapshotArgs) -> Result<()> {
    let field = SampledField::read_csv(&args.field)?;
    let grid = ComparisonGrid {
        n_x: field.grid.n_x,
        n_t: field.grid.n_t,
        horizon: field.grid.horizon,
        lengths: field.grid.lengths.clone(),
    };
    let paths = export_snapshots(&field, &grid, &args.times, &args.out_prefix)?;
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
