//! Comparison machinery: the common evaluation grid, the graph L² error,
//! field sampling, snapshot/trajectory export, and the disk-cached
//! finite-volume reference solution.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fvm::{self, FvGrid, FvTrajectory};
use crate::graph::{EdgeId, MetricGraph};
use crate::loss::NetBinding;
use crate::problem::Problem;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Fvm(#[from] fvm::FvmError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("snapshot time {0} outside [0, {1}]")]
    TimeOutsideHorizon(f64, f64),
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("malformed field file {path}: {detail}")]
    FieldFormat { path: PathBuf, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Anything evaluable as a density on the graph's space-time cylinder.
pub trait Field {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64;
}

impl Field for FvTrajectory {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        FvTrajectory::value(self, e, t, x)
    }
}

impl Field for NetBinding {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        let (net, out) = self.net(e);
        net.forward(t, x, out)
    }
}

impl<F: Fn(EdgeId, f64, f64) -> f64> Field for F {
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        self(e, t, x)
    }
}

impl Field for SampledField {
    /// Piecewise-constant lookup on the stored grid (floor in both axes).
    fn value(&self, e: EdgeId, t: f64, x: f64) -> f64 {
        let j = ((t / self.grid.dt()).floor() as usize).min(self.grid.n_t);
        let i = ((x / self.grid.dx(e)).floor() as usize).min(self.grid.n_x);
        self.at(e, j, i)
    }
}

/// Equidistant space-time evaluation grid shared by both solutions:
/// `n_x` spatial intervals per edge (`n_x + 1` points including endpoints)
/// and `n_t` time intervals on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonGrid {
    pub n_x: usize,
    pub n_t: usize,
    pub horizon: f64,
    pub lengths: Vec<f64>,
}

impl ComparisonGrid {
    pub fn new(graph: &MetricGraph, horizon: f64, n_x: usize, n_t: usize) -> Self {
        assert!(n_x >= 1 && n_t >= 1);
        Self {
            n_x,
            n_t,
            horizon,
            lengths: graph.edges().map(|(_, e)| e.length).collect(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_t as f64
    }

    pub fn dx(&self, e: EdgeId) -> f64 {
        self.lengths[e.0] / self.n_x as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.horizon * (j as f64 / self.n_t as f64)
    }

    pub fn coord(&self, e: EdgeId, i: usize) -> f64 {
        self.lengths[e.0] * (i as f64 / self.n_x as f64)
    }

    pub fn n_edges(&self) -> usize {
        self.lengths.len()
    }
}

/// A field evaluated on a [`ComparisonGrid`]; per edge, row-major over
/// (time index, space index).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledField {
    pub grid: ComparisonGrid,
    pub values: Vec<Vec<f64>>,
}

pub fn sample_field(f: &dyn Field, grid: &ComparisonGrid) -> SampledField {
    let mut values = Vec::with_capacity(grid.n_edges());
    for e in 0..grid.n_edges() {
        let e = EdgeId(e);
        let mut edge_vals = Vec::with_capacity((grid.n_t + 1) * (grid.n_x + 1));
        for j in 0..=grid.n_t {
            let t = grid.time(j);
            for i in 0..=grid.n_x {
                edge_vals.push(f.value(e, t, grid.coord(e, i)));
            }
        }
        values.push(edge_vals);
    }
    SampledField {
        grid: grid.clone(),
        values,
    }
}

impl SampledField {
    pub fn at(&self, e: EdgeId, j: usize, i: usize) -> f64 {
        self.values[e.0][j * (self.grid.n_x + 1) + i]
    }

    /// Writes `edge,it,ix,value` rows behind a one-line grid header.
    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut out = String::new();
        let lengths: Vec<String> = self.grid.lengths.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!(
            "# field-grid n_x={} n_t={} horizon={} lengths={}\n",
            self.grid.n_x,
            self.grid.n_t,
            self.grid.horizon,
            lengths.join(";")
        ));
        out.push_str("edge,it,ix,value\n");
        for (e, vals) in self.values.iter().enumerate() {
            for j in 0..=self.grid.n_t {
                for i in 0..=self.grid.n_x {
                    out.push_str(&format!(
                        "{e},{j},{i},{}\n",
                        vals[j * (self.grid.n_x + 1) + i]
                    ));
                }
            }
        }
        std::fs::write(path, out).map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let bad = |detail: &str| ExperimentError::FieldFormat {
            path: path.to_path_buf(),
            detail: detail.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let header = header
            .strip_prefix("# field-grid ")
            .ok_or_else(|| bad("missing grid header"))?;
        let mut n_x = None;
        let mut n_t = None;
        let mut horizon = None;
        let mut lengths: Vec<f64> = Vec::new();
        for part in header.split_whitespace() {
            let (key, val) = part.split_once('=').ok_or_else(|| bad("bad header field"))?;
            match key {
                "n_x" => n_x = val.parse().ok(),
                "n_t" => n_t = val.parse().ok(),
                "horizon" => horizon = val.parse().ok(),
                "lengths" => {
                    lengths = val
                        .split(';')
                        .map(|s| s.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad lengths"))?
                }
                _ => return Err(bad(&format!("unknown header key {key}"))),
            }
        }
        let grid = ComparisonGrid {
            n_x: n_x.ok_or_else(|| bad("missing n_x"))?,
            n_t: n_t.ok_or_else(|| bad("missing n_t"))?,
            horizon: horizon.ok_or_else(|| bad("missing horizon"))?,
            lengths,
        };
        let mut values =
            vec![vec![f64::NAN; (grid.n_t + 1) * (grid.n_x + 1)]; grid.lengths.len()];
        for line in lines.skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let mut next = || cols.next().ok_or_else(|| bad("short row"));
            let e: usize = next()?.parse().map_err(|_| bad("bad edge index"))?;
            let j: usize = next()?.parse().map_err(|_| bad("bad time index"))?;
            let i: usize = next()?.parse().map_err(|_| bad("bad space index"))?;
            let v: f64 = next()?.parse().map_err(|_| bad("bad value"))?;
            values[e][j * (grid.n_x + 1) + i] = v;
        }
        Ok(Self { grid, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L2Error {
    pub absolute: f64,
    /// Undefined (None) when the reference norm vanishes but the difference
    /// does not.
    pub relative: Option<f64>,
}

/// Graph L² distance of two sampled fields:
/// `(Σ_e Σ_{i,j} Δx_e Δt (a−b)²)^{1/2}`, relative to `‖b‖`.
pub fn l2_error(a: &SampledField, b: &SampledField) -> L2Error {
    assert_eq!(a.grid, b.grid, "fields must share the comparison grid");
    let grid = &a.grid;
    let dt = grid.dt();
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    for e in 0..grid.n_edges() {
        let dx = grid.dx(EdgeId(e));
        let w = dx * dt;
        for (av, bv) in a.values[e].iter().zip(&b.values[e]) {
            let d = av - bv;
            diff2 += w * d * d;
            ref2 += w * bv * bv;
        }
    }
    let absolute = diff2.sqrt();
    let ref_norm = ref2.sqrt();
    let relative = if ref_norm > 0.0 {
        Some(absolute / ref_norm)
    } else if absolute == 0.0 {
        Some(0.0)
    } else {
        None
    };
    L2Error { absolute, relative }
}

/// Writes one `edge,x,value` CSV per requested time at the grid resolution.
/// Returns the created paths.
pub fn export_snapshots(
    f: &dyn Field,
    grid: &ComparisonGrid,
    times: &[f64],
    prefix: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let mut paths = Vec::with_capacity(times.len());
    for &t in times {
        if !(0.0..=grid.horizon).contains(&t) {
            return Err(ExperimentError::TimeOutsideHorizon(t, grid.horizon));
        }
        let mut name = prefix.as_os_str().to_owned();
        name.push(format!("_t{t}.csv"));
        let path = PathBuf::from(name);
        let mut out = String::from("edge,x,value\n");
        for e in 0..grid.n_edges() {
            let e = EdgeId(e);
            for i in 0..=grid.n_x {
                let x = grid.coord(e, i);
                out.push_str(&format!("{},{},{}\n", e.0, x, f.value(e, t, x)));
            }
        }
        std::fs::write(&path, out).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Full trajectory dump: `time,id,cell,value` rows; vertex rows leave the
/// cell column empty. `stride_t` subsamples the time levels (1 keeps all).
pub fn write_trajectory_csv(
    traj: &FvTrajectory,
    path: &Path,
    stride_t: usize,
) -> Result<(), ExperimentError> {
    let stride = stride_t.max(1);
    let grid = &traj.grid;
    let graph = grid.graph();
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut emit = |line: String| w.write_all(line.as_bytes()).map_err(io_err(path));
    emit("time,id,cell,value\n".into())?;
    for (n, state) in traj.states.iter().enumerate() {
        if n % stride != 0 && n != traj.states.len() - 1 {
            continue;
        }
        let t = state.time;
        for (id, _) in graph.edges() {
            for k in 1..grid.n_cells(id) {
                emit(format!("{t},e{},{k},{}\n", id.0, state.interior(grid, id, k)))?;
            }
        }
        for v in graph.vertices() {
            emit(format!(
                "{t},{},,{}\n",
                graph.vertex_name(v),
                state.vertex(grid, v)
            ))?;
        }
    }
    Ok(())
}

/// Finite-volume reference resolution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub cells_per_edge: usize,
    pub time_steps: usize,
    pub alpha_stab: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            cells_per_edge: 2000,
            time_steps: 1000,
            alpha_stab: 1.0,
        }
    }
}

/// Runs the reference scheme and samples it on the comparison grid without
/// retaining the trajectory (the paper-scale run would not fit in memory).
pub fn fvm_reference(
    graph: &MetricGraph,
    problem: &Problem,
    cfg: &ReferenceConfig,
    grid: &ComparisonGrid,
) -> Result<SampledField, ExperimentError> {
    let fv_grid = FvGrid::uniform(graph, cfg.cells_per_edge)?;
    let tau = problem.horizon / cfg.time_steps as f64;
    // Comparison row j reads the state holding on [t_n, t_{n+1}).
    let mut rows_for_state: Vec<Vec<usize>> = vec![Vec::new(); cfg.time_steps + 1];
    for j in 0..=grid.n_t {
        let n = ((grid.time(j) / tau).floor() as usize).min(cfg.time_steps);
        rows_for_state[n].push(j);
    }
    // Cell index per (edge, comparison column), following the aliasing
    // convention at the endpoints.
    let cell_of: Vec<Vec<usize>> = graph
        .edges()
        .map(|(id, _)| {
            let h = fv_grid.h(id);
            (0..=grid.n_x)
                .map(|i| ((grid.coord(id, i) / h).floor() as usize).min(fv_grid.n_cells(id)))
                .collect()
        })
        .collect();

    let mut values = vec![vec![0.0; (grid.n_t + 1) * (grid.n_x + 1)]; graph.n_edges()];
    fvm::solve_fvm_with(problem, &fv_grid, cfg.time_steps, cfg.alpha_stab, |n, state| {
        for &j in &rows_for_state[n] {
            for (id, _) in graph.edges() {
                let row = &mut values[id.0][j * (grid.n_x + 1)..(j + 1) * (grid.n_x + 1)];
                for (i, slot) in row.iter_mut().enumerate() {
                    *slot = state.cell(&fv_grid, id, cell_of[id.0][i]);
                }
            }
        }
    })?;
    Ok(SampledField {
        grid: grid.clone(),
        values,
    })
}

/// Content-addressed cache of reference solutions: the paper-scale runs are
/// expensive and shared by every sweep cell.
#[derive(Debug, Clone)]
pub struct RefCache {
    dir: PathBuf,
}

impl RefCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// Hash of the canonical description of (problem, reference, grid).
    pub fn key(problem_desc: &str, cfg: &ReferenceConfig, grid: &ComparisonGrid) -> String {
        let mut hasher = Sha256::new();
        hasher.update(problem_desc.as_bytes());
        hasher.update(serde_json::to_vec(cfg).unwrap());
        hasher.update(serde_json::to_vec(grid).unwrap());
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    pub fn get_or_compute(
        &self,
        key: &str,
        compute: impl FnOnce() -> Result<SampledField, ExperimentError>,
    ) -> Result<SampledField, ExperimentError> {
        let path = self.dir.join(format!("ref-{key}.json"));
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            if let Ok(field) = serde_json::from_str::<SampledField>(&text) {
                log::info!("reference cache hit: {}", path.display());
                return Ok(field);
            }
            log::warn!("discarding unreadable cache entry {}", path.display());
        }
        let field = compute()?;
        std::fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(&field)?).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(field)
    }
}

/// One CSV row per history entry.
pub fn write_history_csv(
    history: &[crate::opt::HistoryEntry],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut out = String::from("iteration,phase,loss,grad_norm,elapsed_secs\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.iteration, h.phase, h.loss, h.grad_norm, h.elapsed_secs
        ));
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub scheme: crate::train::Scheme,
    pub l2_error_abs: Option<f64>,
    pub l2_error_rel: Option<f64>,
    pub final_loss: f64,
    pub wall_seconds: f64,
    pub files: Vec<PathBuf>,
}

/// Full experiment: reference solve (cached when a cache dir is set),
/// training, error row, history, sampled solution, and snapshots. Outputs
/// are written as they become available, so earlier files survive a later
/// failure.
pub fn run_experiment(
    cfg: &crate::config::ExperimentConfig,
) -> Result<RunSummary, ExperimentError> {
    let problem_file = crate::config::ProblemFile::load(&cfg.problem)?;
    let (graph, problem) = problem_file.build()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    let grid = ComparisonGrid::new(&graph, problem.horizon, cfg.comparison.n_x, cfg.comparison.n_t);

    let reference = match &cfg.cache_dir {
        Some(dir) => {
            let cache = RefCache::new(dir);
            let key = RefCache::key(&problem_file.canonical(), &cfg.reference, &grid);
            cache.get_or_compute(&key, || fvm_reference(&graph, &problem, &cfg.reference, &grid))?
        }
        None => fvm_reference(&graph, &problem, &cfg.reference, &grid)?,
    };

    let mut files = Vec::new();
    let ref_field_path = cfg.output_dir.join("reference_field.csv");
    reference.write_csv(&ref_field_path)?;
    files.push(ref_field_path);

    let (solution, report) = crate::train::train(&graph, &problem, &cfg.train, Some(&reference))?;

    let report_path = cfg.output_dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .map_err(io_err(&report_path))?;
    files.push(report_path);

    let history_path = cfg.output_dir.join("history.csv");
    write_history_csv(&report.history, &history_path)?;
    files.push(history_path);

    let error_path = cfg.output_dir.join("error.csv");
    let error_row = format!(
        "scheme,hidden_layers,width,l2_abs,l2_rel,final_loss,wall_seconds\n{},{},{},{},{},{},{}\n",
        cfg.train.scheme,
        cfg.train.hidden_layers,
        cfg.train.width,
        report.l2_error_abs.map_or(String::from("nan"), |v| v.to_string()),
        report.l2_error_rel.map_or(String::from("nan"), |v| v.to_string()),
        report.final_loss,
        report.wall_seconds,
    );
    std::fs::write(&error_path, error_row).map_err(io_err(&error_path))?;
    files.push(error_path);

    let solution_field = sample_field(&solution, &grid);
    let solution_path = cfg.output_dir.join("solution_field.csv");
    solution_field.write_csv(&solution_path)?;
    files.push(solution_path);

    if !cfg.snapshots.is_empty() {
        files.extend(export_snapshots(
            &solution,
            &grid,
            &cfg.snapshots,
            &cfg.output_dir.join("pinn"),
        )?);
        files.extend(export_snapshots(
            &reference,
            &grid,
            &cfg.snapshots,
            &cfg.output_dir.join("fvm"),
        )?);
    }

    Ok(RunSummary {
        scheme: cfg.train.scheme,
        l2_error_abs: report.l2_error_abs,
        l2_error_rel: report.l2_error_rel,
        final_loss: report.final_loss,
        wall_seconds: report.wall_seconds,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn smooth_a(e: EdgeId, t: f64, x: f64) -> f64 {
        0.3 + 0.2 * (x * std::f64::consts::PI).sin() * (-0.3 * t).exp() + 0.01 * e.0 as f64
    }

    fn smooth_b(e: EdgeId, t: f64, x: f64) -> f64 {
        0.25 + 0.15 * (x * 2.0).cos() * (1.0 + 0.1 * t) + 0.02 * e.0 as f64
    }

    #[test]
    fn identical_fields_have_zero_error() {
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 2.0, 20, 20);
        let a = sample_field(&smooth_a, &grid);
        let err = l2_error(&a, &a);
        assert_eq!(err.absolute, 0.0);
        assert_eq!(err.relative, Some(0.0));
    }

    #[test]
    fn constant_difference_matches_analytic_norm() {
        // |a − b| ≡ c on measure |Γ|·T gives ‖a−b‖ → c·sqrt(|Γ|·T); the
        // rectangle-rule weights overshoot by (1+1/n_x)(1+1/n_t).
        let g = presets::two_junction_graph();
        let horizon = 2.0;
        let c = 0.37;
        for n in [50usize, 200] {
            let grid = ComparisonGrid::new(&g, horizon, n, n);
            let a = sample_field(&|_: EdgeId, _: f64, _: f64| c, &grid);
            let b = sample_field(&|_: EdgeId, _: f64, _: f64| 0.0, &grid);
            let err = l2_error(&a, &b);
            let expected = c
                * (5.0 * horizon * (1.0 + 1.0 / n as f64) * (1.0 + 1.0 / n as f64)).sqrt();
            assert_relative_eq!(err.absolute, expected, max_relative = 1e-12);
        }
        // The limit value is approached as the grid refines.
        let grid = ComparisonGrid::new(&g, horizon, 400, 400);
        let a = sample_field(&|_: EdgeId, _: f64, _: f64| c, &grid);
        let b = sample_field(&|_: EdgeId, _: f64, _: f64| 0.0, &grid);
        let limit = c * (5.0f64 * horizon).sqrt();
        assert_relative_eq!(l2_error(&a, &b).absolute, limit, max_relative = 1e-2);
    }

    #[test]
    fn error_metric_is_symmetric() {
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 1.5, 30, 40);
        let a = sample_field(&smooth_a, &grid);
        let b = sample_field(&smooth_b, &grid);
        assert_eq!(l2_error(&a, &b).absolute, l2_error(&b, &a).absolute);
    }

    #[test]
    fn zero_reference_norm_leaves_relative_undefined() {
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 1.0, 5, 5);
        let a = sample_field(&|_: EdgeId, _: f64, _: f64| 0.1, &grid);
        let zero = sample_field(&|_: EdgeId, _: f64, _: f64| 0.0, &grid);
        let err = l2_error(&a, &zero);
        assert!(err.relative.is_none());
        assert!(err.absolute > 0.0);
    }

    #[test]
    fn relative_error_stable_under_grid_refinement() {
        let g = presets::two_junction_graph();
        let rels: Vec<f64> = [100usize, 200]
            .iter()
            .map(|&n| {
                let grid = ComparisonGrid::new(&g, 2.0, n, n);
                let a = sample_field(&smooth_a, &grid);
                let b = sample_field(&smooth_b, &grid);
                l2_error(&a, &b).relative.unwrap()
            })
            .collect();
        let change = (rels[0] - rels[1]).abs() / rels[1];
        println!("relative errors {rels:?}, change {change:.3e}");
        assert!(change < 0.01, "refinement changed the metric by {change:.3e}");
    }

    #[test]
    fn golden_l2_regression() {
        // Frozen pair: two fixed smooth fields on the model graph.
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 2.0, 64, 64);
        let a = sample_field(&smooth_a, &grid);
        let b = sample_field(&smooth_b, &grid);
        let err = l2_error(&a, &b);
        assert_relative_eq!(err.absolute, 3.176_500_699_175_281_4e-1, max_relative = 1e-12);
        assert_relative_eq!(
            err.relative.unwrap(),
            2.649_849_028_718_520_6e-1,
            max_relative = 1e-12
        );
    }

    #[test]
    fn field_csv_roundtrip() {
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 1.0, 7, 5);
        let a = sample_field(&smooth_a, &grid);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        a.write_csv(&path).unwrap();
        let back = SampledField::read_csv(&path).unwrap();
        assert_eq!(a.grid, back.grid);
        assert_eq!(a.values, back.values);
    }

    #[test]
    fn snapshots_written_and_validated() {
        let g = presets::two_junction_graph();
        let grid = ComparisonGrid::new(&g, 10.0, 10, 10);
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("snap");
        let paths = export_snapshots(&smooth_a, &grid, &[0.5, 3.0, 9.0], &prefix).unwrap();
        assert_eq!(paths.len(), 3);
        for p in &paths {
            let text = std::fs::read_to_string(p).unwrap();
            // Header plus one row per edge and grid point.
            assert_eq!(text.lines().count(), 1 + 5 * 11);
        }
        assert!(matches!(
            export_snapshots(&smooth_a, &grid, &[11.0], &prefix),
            Err(ExperimentError::TimeOutsideHorizon(..))
        ));
    }

    #[test]
    fn reference_sampling_matches_full_trajectory() {
        let g = presets::two_junction_graph();
        let p = presets::default_problem_with_horizon(&g, 1.0);
        let cfg = ReferenceConfig {
            cells_per_edge: 40,
            time_steps: 50,
            alpha_stab: 1.0,
        };
        let grid = ComparisonGrid::new(&g, 1.0, 33, 17);
        let sampled = fvm_reference(&g, &p, &cfg, &grid).unwrap();
        let full = fvm::solve_fvm(
            &p,
            &crate::fvm::FvGrid::uniform(&g, cfg.cells_per_edge).unwrap(),
            cfg.time_steps,
            cfg.alpha_stab,
        )
        .unwrap();
        let direct = sample_field(&full, &grid);
        assert_eq!(sampled.values, direct.values);
    }

    #[test]
    fn reference_cache_roundtrip() {
        let g = presets::two_junction_graph();
        let p = presets::default_problem_with_horizon(&g, 0.5);
        let cfg = ReferenceConfig {
            cells_per_edge: 20,
            time_steps: 20,
            alpha_stab: 1.0,
        };
        let grid = ComparisonGrid::new(&g, 0.5, 8, 8);
        let dir = tempfile::tempdir().unwrap();
        let cache = RefCache::new(dir.path());
        let key = RefCache::key("test-problem", &cfg, &grid);
        let first = cache
            .get_or_compute(&key, || fvm_reference(&g, &p, &cfg, &grid))
            .unwrap();
        // Second call must read the cached copy.
        let mut computed = false;
        let second = cache
            .get_or_compute(&key, || {
                computed = true;
                fvm_reference(&g, &p, &cfg, &grid)
            })
            .unwrap();
        assert!(!computed, "cache miss on identical key");
        assert_eq!(first.values, second.values);
    }
}
