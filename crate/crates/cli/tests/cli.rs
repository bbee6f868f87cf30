//! End-to-end runs of the binary on smoke-scale configs, including the
//! byte-identical-output determinism contract.

use std::path::Path;
use std::process::Command;

fn graphdd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphdd"))
}

fn problem_path() -> &'static Path {
    Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/two_junction_t2.json"
    ))
}

#[test]
fn fvm_subcommand_writes_trajectory_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let prefix = dir.path().join("ref");
    let output = graphdd()
        .args([
            "fvm",
            "--problem",
            problem_path().to_str().unwrap(),
            "--cells",
            "50",
            "--steps",
            "120",
            "--out",
            traj.to_str().unwrap(),
            "--t-stride",
            "10",
            "--snapshots",
            "0.5,2.0",
            "--snap-prefix",
            prefix.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = std::fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("time,id,cell,value"));
    assert!(text.lines().any(|l| l.contains(",v3,,")));
    assert!(dir.path().join("ref_t0.5.csv").exists());
    assert!(dir.path().join("ref_t2.csv").exists());
    // t = 0 snapshot of a zero initial condition is exactly zero.
    let out0 = graphdd()
        .args([
            "fvm",
            "--problem",
            problem_path().to_str().unwrap(),
            "--cells",
            "20",
            "--steps",
            "10",
            "--snapshots",
            "0",
            "--snap-prefix",
            dir.path().join("zero").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out0.status.success());
    let snap = std::fs::read_to_string(dir.path().join("zero_t0.csv")).unwrap();
    for line in snap.lines().skip(1) {
        assert!(line.ends_with(",0"), "nonzero initial snapshot row: {line}");
    }
}

#[test]
fn train_smoke_run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let output = graphdd()
            .args([
                "train",
                "--problem",
                problem_path().to_str().unwrap(),
                "--scheme",
                "graphpinn-continuous",
                "--seed",
                "3",
                "--out-dir",
                out.to_str().unwrap(),
                "--hidden-layers",
                "1",
                "--width",
                "4",
                "--adam-steps",
                "5",
                "--lbfgs-maxiter",
                "3",
                "--n-interior",
                "40",
                "--n-initial",
                "10",
                "--n-boundary",
                "10",
                "--ref-cells",
                "40",
                "--ref-steps",
                "50",
                "--grid-n",
                "20",
                "--snapshots",
                "0.5,2.0",
            ])
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    };
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run(&out_a);
    run(&out_b);
    // Numeric outputs are byte-identical; wall-clock columns are the one
    // exception, so they are stripped before comparing.
    let strip_timing = |text: String| -> String {
        text.lines()
            .map(|l| {
                let cols: Vec<&str> = l.split(',').collect();
                match *cols.first().unwrap_or(&"") {
                    "iteration" | "scheme" => cols[..cols.len() - 1].join(","),
                    _ if cols.len() >= 5 => cols[..cols.len() - 1].join(","),
                    _ => l.to_string(),
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    for file in [
        "solution_field.csv",
        "reference_field.csv",
        "pinn_t0.5.csv",
        "fvm_t2.csv",
    ] {
        let a = std::fs::read(out_a.join(file)).unwrap();
        let b = std::fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    for file in ["error.csv", "history.csv"] {
        let a = strip_timing(std::fs::read_to_string(out_a.join(file)).unwrap());
        let b = strip_timing(std::fs::read_to_string(out_b.join(file)).unwrap());
        assert_eq!(a, b, "{file} differs between identical runs");
    }

    // The error subcommand agrees with the error column written by train.
    let output = graphdd()
        .args([
            "error",
            "--a",
            out_a.join("solution_field.csv").to_str().unwrap(),
            "--b",
            out_a.join("reference_field.csv").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let printed = String::from_utf8(output.stdout).unwrap();
    let error_csv = std::fs::read_to_string(out_a.join("error.csv")).unwrap();
    let rel_from_train: f64 = error_csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(4)
        .unwrap()
        .parse()
        .unwrap();
    let rel_from_error: f64 = printed
        .split_whitespace()
        .last()
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(rel_from_train, rel_from_error);

    // Snapshot extraction from the stored field file.
    let output = graphdd()
        .args([
            "snapshot",
            "--field",
            out_a.join("solution_field.csv").to_str().unwrap(),
            "--times",
            "1.0",
            "--out-prefix",
            dir.path().join("resnap").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(dir.path().join("resnap_t1.csv").exists());
}

#[test]
fn sweep_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let output = graphdd()
        .args([
            "sweep",
            "--problem",
            problem_path().to_str().unwrap(),
            "--scheme",
            "graphpinn-continuous",
            "--seed",
            "5",
            "--layers",
            "1",
            "--widths",
            "3,4",
            "--out-dir",
            dir.path().join("sweep").to_str().unwrap(),
            "--adam-steps",
            "3",
            "--lbfgs-maxiter",
            "2",
            "--n-interior",
            "30",
            "--n-initial",
            "8",
            "--n-boundary",
            "8",
            "--ref-cells",
            "30",
            "--ref-steps",
            "40",
            "--grid-n",
            "16",
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let table = std::fs::read_to_string(dir.path().join("sweep/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "header plus two cells:\n{table}");
    assert!(table.starts_with("hidden_layers,width,l2_rel"));
    // The shared reference was cached once.
    let cache_entries = std::fs::read_dir(dir.path().join("sweep/ref-cache"))
        .unwrap()
        .count();
    assert_eq!(cache_entries, 1);
}

#[test]
fn seed_required_without_config() {
    let output = graphdd()
        .args([
            "train",
            "--problem",
            problem_path().to_str().unwrap(),
            "--scheme",
            "graphpinn-continuous",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("--seed"), "{stderr}");
}
