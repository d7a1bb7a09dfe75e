//! End-to-end behaviour of the `dem-solve` binary on small problems.

use std::path::Path;
use std::process::Command;

use dem_cli::experiment::read_report;

const BIN: &str = env!("CARGO_BIN_EXE_dem-solve");

fn small_config(dir: &Path, mode: &str, kind: &str, epochs: usize) -> std::path::PathBuf {
    let cfg = format!(
        r#"{{
        "schema_version": 1,
        "geometry": {{"lengths": [4, 1, 1], "dims": [7, 3, 3]}},
        "material": {{"model": "linear_elastic", "E": 1000, "nu": 0.3}},
        "network": {{"kind": "{kind}", "layer_widths": [3, 8, 3], "cheb_order": 2, "seed": 3}},
        "gradient_mode": "{mode}",
        "tractions": [{{"face": "x1", "traction": [0, -2.5, 0]}}],
        "train": {{"max_epochs": {epochs}, "inner_iters_per_epoch": 5}},
        "oracle": {{"enabled": true}},
        "output_dir": "{}"
    }}"#,
        dir.join("cfg_out").display()
    );
    let path = dir.join(format!("{mode}_{kind}.json"));
    std::fs::write(&path, cfg).unwrap();
    path
}

fn dem(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env("DEM_SOLVE_THREADS", "1").output().unwrap()
}

#[test]
fn run_writes_artifacts_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sf", "gcn", 2);
    let out = dir.path().join("run");
    let o = dem(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "metrics.csv", "field.vtk"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let report = read_report(&out.join("report.json")).unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.trim_end(), report.summary());
    assert!(report.oracle.is_some());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), report.loss_history.len() + 1);
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "ad", "mlp", 1);
    let mut texts = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        let o = Command::new(BIN)
            .args(["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .env("DEM_SOLVE_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        texts.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn missing_material_exits_2_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sf", "mlp", 1);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("material");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = dem(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("material"));
}

#[test]
fn empty_load_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sf", "mlp", 1);
    let o = dem(&["sweep", "--config", cfg.to_str().unwrap(), "--loads", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_table_has_one_row_per_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "sf", "gcn", 1);
    let out = dir.path().join("sweep");
    let o = dem(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--loads", "-2.5,-5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("table.csv")).unwrap();
    let headers = r.headers().unwrap().clone();
    assert_eq!(&headers.iter().take(7).collect::<Vec<_>>(), &["method", "mode", "load", "mean_RD", "final_loss", "train_time_s", "diverged"]);
    let rows: Vec<_> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|row| &row[10] == "ok" && !row[3].is_empty()));
    assert!(out.join("gcn_sf_tm5_s3/field.vtk").exists());
}

#[test]
fn demo1d_and_single_grid_refine() {
    let dir = tempfile::tempdir().unwrap();
    let o = dem(&["demo1d", "--out", dir.path().to_str().unwrap(), "--steps", "4"]);
    assert!(o.status.success());
    let demo = std::fs::read_to_string(dir.path().join("demo1d.csv")).unwrap();
    assert_eq!(demo.lines().next(), Some("du,psi_ad,psi_sf"));
    assert_eq!(demo.lines().nth(1), Some("0,-0.5,-0.5"));

    let cfg = small_config(dir.path(), "sf", "mlp", 1);
    let out = dir.path().join("refine");
    let o = dem(&[
        "refine", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--dims", "5,3,3", "--modes", "sf",
        "--methods", "mlp",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let refine = std::fs::read_to_string(out.join("refine.csv")).unwrap();
    assert_eq!(refine.lines().count(), 2);
    assert!(refine.lines().nth(1).unwrap().starts_with("mlp,sf,5x3x3,3,"));
}
