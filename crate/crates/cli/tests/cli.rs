use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fedsim_core::graph::read_edge_list;
use fedsim_core::runner::read_rounds_csv;

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim"))
        .args(args)
        .args(["--log", "warn"])
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
rounds = 5
num_clients = 6
clients_per_round = 2

[dataset]
scheme = "synthetic"

[sampler]
kind = "fedgs"
alpha = 1.0

[trainer]
local_steps = 2
"#;

#[test]
fn run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedsim(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rounds_csv(fs::File::open(out.join("rounds.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.selected.len() == 2 && r.objective.is_some()));
    assert!(out.join("summary.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("min test loss"));
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = fedsim(&["run", &cfg, "--rounds", "3", "--sampler", "uniform", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_rounds_csv(fs::File::open(out.join("rounds.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.objective.is_none()));
}

#[test]
fn same_seed_same_bytes_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(fedsim(&["run", &cfg, "--workers", "1", "--out", a.to_str().unwrap()]).status.success());
    assert!(fedsim(&["run", &cfg, "--workers", "4", "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(a.join("rounds.csv")).unwrap(), fs::read(b.join("rounds.csv")).unwrap());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[dataset]\nscheme = \"synthetic\"\n[sampler]\nkind = \"fedgs\"\n[availability]\nmode = \"LN\"\nbeta = 1.0\n");
    let o = fedsim(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("availability.beta"));

    let o = fedsim(&["run", "/nonexistent/exp.toml"]);
    assert!(!o.status.success());
}

#[test]
fn graph_verb_writes_an_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let edges = dir.path().join("g.txt");
    let o = fedsim(&["graph", &cfg, "--edges", edges.to_str().unwrap(), "--graph", "functional", "--score"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let g = read_edge_list(&edges).unwrap();
    assert_eq!(g.size(), 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("f1"));
}

#[test]
fn availability_verb_writes_a_trace() {
    let o = fedsim(&["availability", "--clients", "4", "--rounds", "3", "--mode", "LN", "--beta", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "round,client_id,active");
    assert_eq!(lines.len(), 1 + 3 * 4);
}

#[test]
fn data_verb_dumps_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("d.bin");
    let o = fedsim(&["data", "--clients", "5", "--scheme", "two-label", "--dump", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = fedsim_core::datagen::load_dataset(&dump).unwrap();
    assert_eq!(d.num_clients(), 5);
}

#[test]
fn matrix_verb_writes_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.toml");
    fs::write(
        &path,
        r#"
seeds = [0, 1]
[base]
rounds = 3
num_clients = 5
clients_per_round = 2
dataset = { scheme = "synthetic" }
trainer = { local_steps = 1 }
[[samplers]]
kind = "fedgs"
[[samplers]]
kind = "md"
[[availability]]
mode = "MDF"
beta = 0.5
"#,
    )
    .unwrap();
    let out = dir.path().join("m");
    let o = fedsim(&["matrix", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 4);
    assert!(out.join("md_MDF0.5_seed1/rounds.csv").exists());
}
