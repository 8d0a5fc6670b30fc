//! End-to-end tests of the psdlab binary: artifact layout, determinism,
//! provenance re-execution, and every documented exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use psdlab::linalg::SpdMatrix;
use psdlab::sampler::{
    write_states_csv, write_trace_csv, ChainTrace, Kernel, Observables, StepRecord,
};
use tempfile::TempDir;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_psdlab"))
        .args(args)
        .output()
        .expect("spawn psdlab");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_cfg(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("exp.cfg");
    fs::write(&path, body).unwrap();
    path
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Trace CSVs end in a wall-clock column that legitimately differs between
/// runs; everything before it must be byte-identical.
fn without_last_column(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.rfind(',') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn deviation_from(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("max relative calibration deviation:"))
        .expect("deviation line")
        .trim()
        .parse()
        .expect("deviation value")
}

#[test]
fn help_exits_zero_and_usage_errors_exit_one() {
    let (code, stdout, _) = run(&["--help"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("reproduce-tables"));
    let (code, _, _) = run(&["frobnicate"]);
    assert_eq!(code, 1);
    let (code, _, stderr) = run(&["sample"]);
    assert_eq!(code, 1, "missing --out must be a usage error: {stderr}");
}

#[test]
fn validate_geometry_writes_artifacts_and_prints_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "probes=8\nseed=42\n");
    let out = tmp.path().join("vg");
    let (code, stdout, stderr) = run(&[
        "validate-geometry",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("kendall tau"));
    assert!(deviation_from(&stdout) < 1e-3);

    let calibration = read(&out.join("calibration.csv"));
    assert_eq!(
        calibration.lines().count(),
        9,
        "header plus one row per probe"
    );
    assert!(calibration.starts_with("probe_id,edge,s_delta,fd_delta,eps"));
    let capture = read(&out.join("capture.csv"));
    assert!(capture.starts_with("k,metric,oracle,random"));
    assert!(read(&out.join("config.txt")).contains("probes=8"));
}

#[test]
fn validate_geometry_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "probes=6\nseed=11\n");
    for dir in ["a", "b"] {
        let out = tmp.path().join(dir);
        let (code, _, _) = run(&[
            "validate-geometry",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    for file in ["calibration.csv", "capture.csv"] {
        assert_eq!(
            read(&tmp.path().join("a").join(file)),
            read(&tmp.path().join("b").join(file)),
            "{file} must not depend on anything but (seed, config)"
        );
    }
}

#[test]
fn fd_deviation_shrinks_with_eps() {
    let tmp = TempDir::new().unwrap();
    let mut devs = Vec::new();
    for (name, eps) in [("coarse", "1e-3"), ("fine", "1e-4")] {
        let cfg = write_cfg(tmp.path(), &format!("probes=8\nseed=42\neps={eps}\n"));
        let out = tmp.path().join(name);
        let (code, stdout, _) = run(&[
            "validate-geometry",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        devs.push(deviation_from(&stdout));
    }
    assert!(
        devs[0] >= 2.0 * devs[1],
        "deviation must shrink at least 2x from eps 1e-3 to 1e-4: {devs:?}"
    );
}

#[test]
fn config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let bad_key = write_cfg(tmp.path(), "sed=3\n");
    let (code, _, stderr) = run(&[
        "sample",
        "--config",
        bad_key.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("unknown key"), "{stderr}");

    let cfg = write_cfg(tmp.path(), "n_steps=10\n");
    let (code, _, stderr) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--kernel",
        "leapfrog",
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("kernel"), "{stderr}");

    let (code, _, stderr) = run(&[
        "sample",
        "--config",
        tmp.path().join("nope.cfg").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(stderr.contains("nope.cfg"), "{stderr}");
}

#[test]
fn sample_tiny_run_layout() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "n_steps=100\nn_chains=2\nseed=5\n");
    let out = tmp.path().join("run");
    let t0 = Instant::now();
    let (code, stdout, stderr) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(t0.elapsed().as_secs() < 5, "tiny run must be fast");
    assert!(stdout.contains("kernel=geom_mala"));
    assert!(stdout.contains("kernel=naive_euclid_drift"));

    for kernel in ["geom_mala", "naive_euclid_drift"] {
        for chain in 0..2 {
            let trace = read(&out.join(format!("trace_{kernel}_chain{chain}.csv")));
            assert_eq!(trace.lines().count(), 101, "header plus one row per step");
            assert!(trace.starts_with("step,accepted,trace,logdet,lambda_min,dist_sq,wall_ns"));
            let states = read(&out.join(format!("states_{kernel}_chain{chain}.csv")));
            assert_eq!(states.lines().count(), 101);
            assert!(states.starts_with("step,x00,x01,x02,x11,x12,x22"));
        }
    }
    assert!(out.join("config.txt").exists());
}

#[test]
fn kernel_flag_restricts_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "n_steps=50\nn_chains=1\n");
    let out = tmp.path().join("run");
    let (code, _, _) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--kernel",
        "geom_mala",
    ]);
    assert_eq!(code, 0);
    assert!(out.join("trace_geom_mala_chain0.csv").exists());
    assert!(!out.join("trace_naive_euclid_drift_chain0.csv").exists());
    assert!(read(&out.join("config.txt")).contains("kernel=geom_mala"));
}

#[test]
fn provenance_reexecution_reproduces_everything_but_wall_clock() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "n_steps=80\nn_chains=2\nseed=31\n");
    let first = tmp.path().join("first");
    let (code, _, _) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        first.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // Re-run purely from the provenance file the first run left behind.
    let second = tmp.path().join("second");
    let (code, _, _) = run(&[
        "sample",
        "--config",
        first.join("config.txt").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    for kernel in ["geom_mala", "naive_euclid_drift"] {
        for chain in 0..2 {
            let trace = format!("trace_{kernel}_chain{chain}.csv");
            assert_eq!(
                without_last_column(&read(&first.join(&trace))),
                without_last_column(&read(&second.join(&trace))),
                "{trace} differs beyond the wall-clock column"
            );
            let states = format!("states_{kernel}_chain{chain}.csv");
            assert_eq!(read(&first.join(&states)), read(&second.join(&states)));
        }
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), "n_steps=60\nn_chains=1\nseed=42\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (out, extra) in [(&a, None), (&b, Some("99"))] {
        let mut args = vec![
            "sample",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        if let Some(seed) = extra {
            args.extend(["--seed", seed]);
        }
        let (code, _, _) = run(&args);
        assert_eq!(code, 0);
    }
    assert_ne!(
        read(&a.join("trace_geom_mala_chain0.csv")),
        read(&b.join("trace_geom_mala_chain0.csv"))
    );
    assert!(read(&b.join("config.txt")).contains("seed=99"));
}

/// Fixture sized so both kernels pass the R-hat gate deterministically.
const PIPELINE_CFG: &str = "n_steps=4000\nn_chains=2\nh_naive=0.003\nseed=42\n";

#[test]
fn diagnose_emits_tables_and_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), PIPELINE_CFG);
    let out = tmp.path().join("run");
    let (code, _, _) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // No --config: diagnose picks up the provenance file in the directory.
    let (code, stdout, stderr) = run(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "stderr: {stderr}");
    for table in ["Table 1", "Table 2", "Table 3", "rho_min"] {
        assert!(stdout.contains(table), "missing {table} in:\n{stdout}");
    }

    let report = read(&out.join("report.csv"));
    assert_eq!(
        report.lines().count(),
        9,
        "header plus 2 kernels x 4 observables"
    );
    assert!(report.starts_with("method,observable,mean,sd,rhat,ess,ess_per_sec,mcse"));
    for obs in ["trace", "logdet", "lambda_min", "dist_sq"] {
        assert!(out.join(format!("ecdf_{obs}.csv")).exists());
        assert!(out.join(format!("hist_{obs}.csv")).exists());
    }
}

#[test]
fn reproduce_tables_runs_the_full_pipeline() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(tmp.path(), PIPELINE_CFG);
    let out = tmp.path().join("run");
    let (code, stdout, stderr) = run(&[
        "reproduce-tables",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "stderr: {stderr}");
    assert!(stdout.contains("kernel=geom_mala"));
    assert!(stdout.contains("Table 3"));
    assert!(out.join("report.csv").exists());
    assert!(out.join("trace_naive_euclid_drift_chain1.csv").exists());
    assert!(out.join("hist_logdet.csv").exists());
}

#[test]
fn diagnose_without_traces_or_provenance_exits_one() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let (code, _, stderr) = run(&["diagnose", "--out", empty.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("config"), "{stderr}");

    // Provenance present but traces absent.
    fs::write(empty.join("config.txt"), "n_steps=40\nn_chains=1\n").unwrap();
    let (code, _, stderr) = run(&["diagnose", "--out", empty.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(stderr.contains("trace_geom_mala_chain0.csv"), "{stderr}");
}

/// A chain whose observables orbit `center`, with well-separated state
/// eigenvalues so every gradient in the spectral-gap proxy is defined.
fn synthetic_trace(chain_id: usize, center: f64, n: usize) -> ChainTrace {
    let steps = (0..n)
        .map(|i| {
            let v = center + 0.01 * (i % 5) as f64;
            StepRecord {
                step: i,
                accepted: true,
                obs: Observables {
                    trace: v,
                    logdet: v,
                    lambda_min: v,
                    dist_sq: v,
                },
                wall_ns: (i + 1) as u64 * 1000,
            }
        })
        .collect();
    let states = (0..n)
        .map(|i| {
            let m = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                1.0 + 0.01 * i as f64,
                2.0,
                3.0,
            ]));
            SpdMatrix::from_matrix(m).unwrap()
        })
        .collect();
    ChainTrace {
        chain_id,
        kernel: Kernel::GeomMala,
        steps,
        states,
        burn_in: n / 2,
        wall_secs: 1e-6 * n as f64,
        accept_count: n,
        numeric_failures: 0,
    }
}

#[test]
fn diverged_chains_fail_the_gate_with_exit_three() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    fs::create_dir(&out).unwrap();
    fs::write(
        out.join("config.txt"),
        "n_steps=40\nn_chains=2\nkernel=geom_mala\n",
    )
    .unwrap();
    for (chain, center) in [(0, 0.0), (1, 100.0)] {
        let trace = synthetic_trace(chain, center, 40);
        let mut w = Vec::new();
        write_trace_csv(&trace, &mut w).unwrap();
        fs::write(out.join(format!("trace_geom_mala_chain{chain}.csv")), w).unwrap();
        let mut w = Vec::new();
        write_states_csv(&trace, &mut w).unwrap();
        fs::write(out.join(format!("states_geom_mala_chain{chain}.csv")), w).unwrap();
    }
    let (code, stdout, stderr) = run(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "stderr: {stderr}");
    assert!(stderr.contains("diagnostic gate failed"), "{stderr}");
    // Artifacts are still written so the failure can be inspected.
    assert!(stdout.contains("Table 1"));
    assert!(out.join("report.csv").exists());
}

#[test]
fn corrupt_states_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "n_steps=40\nn_chains=1\nkernel=geom_mala\nseed=3\n",
    );
    let out = tmp.path().join("run");
    let (code, _, _) = run(&[
        "sample",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    // A state row that is symmetric but not positive definite.
    fs::write(
        out.join("states_geom_mala_chain0.csv"),
        "step,x00,x01,x02,x11,x12,x22\n0,-1,0,0,-1,0,-1\n",
    )
    .unwrap();
    let (code, _, stderr) = run(&["diagnose", "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "stderr: {stderr}");
    assert!(stderr.contains("positive definite"), "{stderr}");
}
