use std::path::Path;
use std::process::Command;

use flexwave::cli::{load_config, ExperimentConfig, RunManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexwave"))
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn empty_config_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.toml");
    std::fs::write(&p, "").unwrap();
    let cfg = load_config(&p).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    assert_eq!(cfg.channel.rms_ds_ns, vec![10.0, 130.0, 250.0, 580.0]);
    assert_eq!(cfg.noise.ebn0_db, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0]);
}

#[test]
fn unknown_key_exits_with_code_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "[eval]\nccdf_blokcs = 10\n").unwrap();
    let out = bin()
        .args(["constellation-dump", "--config"])
        .arg(&p)
        .arg("--out-dir")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ccdf_blokcs"));
}

#[test]
fn bad_flag_exits_with_code_2() {
    let out = bin().args(["papr-ccdf", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_finite_matrix_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("q.csv");
    std::fs::write(&p, "row,col,re,im\n0,0,NaN,0\n0,1,0,0\n1,0,0,0\n1,1,1,0\n").unwrap();
    let out = bin()
        .arg("waveform-dump")
        .arg("--qmat")
        .arg(&p)
        .arg("--out-dir")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn constellation_dump_succeeds_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("o");
    let out = bin().arg("constellation-dump").arg("--out-dir").arg(&o).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&o.join("constellation.csv"));
    assert_eq!(csv.lines().count(), 17);
    let m = RunManifest::from_json(&read(&o.join("manifest.json"))).unwrap();
    assert_eq!(m.command, "constellation-dump");
    assert!(m.verify(&o).is_empty());
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(
        &p,
        "seed = 7\n[channel]\nrms_ds_ns = [50.0]\n[optim]\nsteps = 5\nbatch_size = 8\n\
         [optim.fine_tune]\nsteps = 2\nbatch_size = 8\n[eval]\nccdf_blocks = 600\n",
    )
    .unwrap();
    p
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let first = dir.path().join("a");
    let status = bin().arg("papr-ccdf").arg("--config").arg(&cfg).arg("--out-dir").arg(&first).status().unwrap();
    assert!(status.success());
    let manifest_path = first.join("manifest.json");
    let m = RunManifest::from_json(&read(&manifest_path)).unwrap();
    assert_eq!(m.config, load_config(&manifest_path).unwrap());
    assert_eq!(m.seed, 7);

    let second = dir.path().join("b");
    let status = bin()
        .arg("papr-ccdf")
        .arg("--config")
        .arg(&manifest_path)
        .arg("--out-dir")
        .arg(&second)
        .status()
        .unwrap();
    assert!(status.success());
    let m2 = RunManifest::from_json(&read(&second.join("manifest.json"))).unwrap();
    assert_eq!(m.outputs.len(), m2.outputs.len());
    for (a, b) in m.outputs.iter().zip(&m2.outputs) {
        assert_eq!((&a.path, &a.sha256), (&b.path, &b.sha256));
    }
}

#[test]
fn optimize_writes_per_spread_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dir.path().join("o");
    let status = bin().arg("optimize").arg("--config").arg(&cfg).arg("--out-dir").arg(&o).status().unwrap();
    assert!(status.success());
    for f in ["qmat.csv", "qtaps.csv", "train_trace.csv"] {
        assert!(o.join("rms_50ns").join(f).is_file(), "{f}");
    }
    assert_eq!(read(&o.join("rms_50ns/train_trace.csv")).lines().count(), 1 + 7);
    let q = flexwave::cli::commands::parse_matrix_csv(&read(&o.join("rms_50ns/qmat.csv"))).unwrap();
    assert_eq!((q.rows(), q.cols()), (32, 32));
}
