use std::path::Path;
use std::process::{Command, Output};

fn uwoan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwoan")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("scenario.cfg");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_config_exit_2_names_path() {
    let out = uwoan(&["run", "--config", "/no/such/scenario.cfg", "--seed", "1", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/scenario.cfg"));
}

#[test]
fn bad_config_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    for text in ["n_uwns = 4\n", "t_max = -3\n", "c0 = \"abc\"\n"] {
        let cfg = write_config(tmp.path(), text);
        let o = uwoan(&["run", "--config", &cfg, "--seed", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(uwoan(&[]).status.code(), Some(1));
    assert_eq!(uwoan(&["run", "--seed", "x"]).status.code(), Some(1));
    assert_eq!(uwoan(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(uwoan(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_then_topo() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "n_uwn = 12\nc0 = 0.12\n");
    let out = tmp.path().join("run");
    let o = uwoan(&["run", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "trace.log", "topology.json", "topology.dot"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let report = out.join("report.json");
    let json = uwoan(&["topo", "--report", report.to_str().unwrap(), "--format", "json"]);
    assert!(json.status.success());
    assert_eq!(json.stdout, std::fs::read(out.join("topology.json")).unwrap());
    let dot = uwoan(&["topo", "--report", report.to_str().unwrap(), "--format", "dot"]);
    assert_eq!(dot.stdout, std::fs::read(out.join("topology.dot")).unwrap());
    let svg = uwoan(&["topo", "--report", report.to_str().unwrap(), "--format", "svg"]);
    assert_eq!(svg.status.code(), Some(1));
}

#[test]
fn sweep_row_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "n_uwn = 4\n");
    let csv = tmp.path().join("sweep.csv");
    let o = uwoan(&["sweep", "--config", &cfg, "--c-list", "0.056,0.120,0.151", "--seeds", "100", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    let summary = rows.iter().filter(|r| r.split(',').nth(1) == Some("mean")).count();
    assert_eq!(summary, 3);
    assert_eq!(rows.len() - summary, 300);
}
