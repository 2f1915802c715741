use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Sandbox { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn home(&self) -> PathBuf {
        self.path("runs")
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn cmd(&self, providers: Option<&Path>) -> Command {
        let mut c = Command::new(env!("CARGO_BIN_EXE_qexec"));
        c.env("QEXEC_HOME", self.home()).env_remove("QEXEC_PROVIDERS").current_dir(self.dir.path());
        if let Some(p) = providers {
            c.arg("--providers").arg(p);
        }
        c
    }

    fn run(&self, providers: Option<&Path>, args: &[&str]) -> Output {
        self.cmd(providers).args(args).output().unwrap()
    }

    fn runs(&self) -> Vec<String> {
        match std::fs::read_dir(self.home()) {
            Ok(rd) => rd.map(|e| e.unwrap().file_name().into_string().unwrap()).collect(),
            Err(_) => Vec::new(),
        }
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const BELL: &str = "OPENQASM 2.0;\nqreg q[2];\ncreg c[2];\nh q[0];\ncx q[0],q[1];\nmeasure q -> c;\n";

fn experiment(backends: &str, extra: &str) -> String {
    format!("circuits:\n  - |\n{}\nshots: 256\nbackends: {backends}\n{extra}", indent(BELL))
}

fn indent(text: &str) -> String {
    text.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

#[test]
fn backends_default_config() {
    let s = Sandbox::new();
    let out = s.run(None, &["backends"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("local_ideal") && rows[0].contains("statevector"));
    assert!(rows[1].starts_with("local_noisy") && rows[1].contains("noisy_statevector"));
}

#[test]
fn backends_empty_and_offline() {
    let s = Sandbox::new();
    let empty = s.write("empty.yaml", "{}\n");
    let out = s.run(Some(&empty), &["backends"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 1);

    let p = s.write(
        "p.yaml",
        "ideal: {kind: local_ideal}\nremote: {kind: remote_http, endpoint: 'http://127.0.0.1:9'}\ndown: {kind: local_ideal, online: false}\n",
    );
    let out = s.run(Some(&p), &["backends", "--online", "--json"]);
    assert!(out.status.success());
    let rows: Vec<Value> = serde_json::from_str(&stdout(&out)).unwrap();
    let providers: Vec<&str> = rows.iter().map(|r| r["provider_id"].as_str().unwrap()).collect();
    assert_eq!(providers, ["ideal"]);
    let all = stdout(&s.run(Some(&p), &["backends"]));
    assert!(all.contains("offline") && !all.contains("remote"));
}

#[test]
fn bad_providers_file_is_exit_1() {
    let s = Sandbox::new();
    let p = s.write("p.yaml", "x: {kind: local_ideal, bogus: 1}\n");
    let out = s.run(Some(&p), &["backends"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bogus"));
}

#[test]
fn schema_errors_are_exit_1_without_run_dir() {
    let s = Sandbox::new();
    for (i, text) in [
        experiment("all_online", "colour: blue\n"),
        "circuits: [missing.qasm]\nshots: 5\nbackends: all_online\n".to_string(),
        "circuits: ['OPENQASM 2.0; qreg q[1]; h q[3];']\nshots: 5\nbackends: all_online\n".to_string(),
        "shots: nope\n".to_string(),
    ]
    .iter()
    .enumerate()
    {
        let f = s.write(&format!("e{i}.yaml"), text);
        let out = s.run(None, &["run", f.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(1), "{text}\n{}", stderr(&out));
    }
    assert!(s.runs().is_empty());
}

#[test]
fn preflight_failures_are_exit_2_without_run_dir() {
    let s = Sandbox::new();
    let p = s.write("p.yaml", "ideal: {kind: local_ideal}\ndown: {kind: local_ideal, online: false}\n");
    let cases = [
        experiment("all_online", "split_policy: scatter\n"),
        experiment("all_online", "merge_policy: median\n"),
        experiment("{ideal: [nope]}", ""),
        experiment("{ghost: [statevector]}", ""),
        experiment("{down: [statevector]}", ""),
    ];
    for (i, text) in cases.iter().enumerate() {
        let f = s.write(&format!("e{i}.yaml"), text);
        let out = s.run(Some(&p), &["run", f.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{text}\n{}", stderr(&out));
    }
    assert!(s.runs().is_empty());
}

#[test]
fn failed_job_is_exit_3_and_recorded() {
    let s = Sandbox::new();
    let p = s.write("p.yaml", "ideal: {kind: local_ideal}\nbig: {kind: local_ideal, max_qubits: 30}\n");
    let wide = format!(
        "OPENQASM 2.0;\nqreg q[21];\n{}",
        (0..21).map(|q| format!("h q[{q}];\n")).collect::<String>()
    );
    let text = format!(
        "circuits:\n  - |\n{}\nshots: 4\nbackends: {{big: [statevector]}}\nmerge_policy: sum\n",
        indent(&wide)
    );
    let f = s.write("e.yaml", &text);
    let out = s.run(Some(&p), &["run", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let run_id = stdout(&out).trim().to_string();
    let status = s.run(Some(&p), &["status", &run_id, "--json"]);
    let v: Value = serde_json::from_str(&stdout(&status)).unwrap();
    assert_eq!(v["jobs"][0]["state"], "FAILED");
    assert_eq!(v["exit_code"], 3);
    let merged = stdout(&s.run(None, &["results", &run_id, "--merged"]));
    let merged: Value = serde_json::from_str(&merged).unwrap();
    assert_eq!(merged, serde_json::json!({}));
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(s.home().join(&run_id).join("merged.json")).unwrap()).unwrap();
    assert_eq!(raw["metadata"]["failed_jobs"].as_array().unwrap().len(), 1);
}

#[test]
fn merged_without_policy_is_exit_1() {
    let s = Sandbox::new();
    let f = s.write("e.yaml", &experiment("all_online", ""));
    let out = s.run(None, &["run", f.to_str().unwrap()]);
    assert!(out.status.success());
    let run_id = stdout(&out).trim().to_string();
    let out = s.run(None, &["results", &run_id, "--merged"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no merge policy"));
}

#[test]
fn unknown_run_is_exit_1() {
    let s = Sandbox::new();
    assert_eq!(s.run(None, &["status", "nope"]).status.code(), Some(1));
    assert_eq!(s.run(None, &["results", "../etc"]).status.code(), Some(1));
}

#[test]
fn all_online_expands_with_multiplier() {
    let s = Sandbox::new();
    let p = s.write(
        "p.yaml",
        "a: {kind: local_ideal}\nb: {kind: local_noisy, noise: 0.02}\nc: {kind: local_ideal, online: false}\n",
    );
    let f = s.write("e.yaml", &experiment("all_online", ""));
    let out = s.run(Some(&p), &["run", f.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_id = stdout(&out).trim().to_string();
    let tree: Value = serde_json::from_str(&stdout(&s.run(None, &["results", &run_id]))).unwrap();
    let providers: Vec<&String> = tree.as_object().unwrap().keys().collect();
    assert_eq!(providers, ["a", "b"]);
    assert_eq!(tree["a"]["statevector"][0].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 256);
    assert_eq!(tree["b"]["noisy_statevector"].as_array().unwrap().len(), 1);
}

#[test]
fn results_replay_without_providers() {
    let s = Sandbox::new();
    let f = s.write("e.yaml", &experiment("{local_ideal: [statevector]}", "merge_policy: sum\n"));
    let out = s.run(None, &["run", f.to_str().unwrap()]);
    assert!(out.status.success());
    let run_id = stdout(&out).trim().to_string();
    let broken = s.write("broken.yaml", "x: {kind: nonsense}\n");
    let first = s.run(None, &["results", &run_id, "--csv"]);
    let second = s.cmd(None).env("QEXEC_PROVIDERS", &broken).args(["results", &run_id, "--csv"]).output().unwrap();
    assert!(first.status.success() && second.status.success());
    assert_eq!(first.stdout, second.stdout);
    assert!(stdout(&first).starts_with("provider,backend,job,bitstring,count\n"));
}

#[test]
fn runs_are_append_only() {
    let s = Sandbox::new();
    let f = s.write("e.yaml", &experiment("{local_ideal: [statevector]}", "seed: 3\n"));
    let first = stdout(&s.run(None, &["run", f.to_str().unwrap()])).trim().to_string();
    let dir = s.home().join(&first);
    let snapshot: Vec<(String, Vec<u8>)> = ["experiment.yaml", "dispatch.json", "progress.jsonl", "results.json", "record.json"]
        .iter()
        .map(|n| (n.to_string(), std::fs::read(dir.join(n)).unwrap()))
        .collect();
    let second = stdout(&s.run(None, &["run", f.to_str().unwrap()])).trim().to_string();
    assert_ne!(first, second);
    for (name, bytes) in snapshot {
        assert_eq!(std::fs::read(dir.join(&name)).unwrap(), bytes, "{name} changed");
    }
    let a = std::fs::read(dir.join("results.json")).unwrap();
    let b = std::fs::read(s.home().join(&second).join("results.json")).unwrap();
    assert_eq!(a, b, "same seed, same results");
}

#[test]
fn no_wait_prints_id_then_status_shows_progress() {
    let s = Sandbox::new();
    let p = s.write("p.yaml", "slow: {kind: mock_delay, delay: 800}\nideal: {kind: local_ideal}\n");
    let f = s.write("e.yaml", &experiment("{slow: [mock_statevector], ideal: [statevector]}", ""));
    let started = Instant::now();
    let mut child = s
        .cmd(Some(&p))
        .args(["run", f.to_str().unwrap(), "--no-wait"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let run_id = line.trim().to_string();
    assert!(started.elapsed() < Duration::from_millis(800), "run id not printed immediately");

    let out = s.run(Some(&p), &["status", &run_id]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("in progress"), "{text}");
    let slow_row = text.lines().find(|l| l.contains("slow/mock_statevector")).unwrap();
    assert!(slow_row.contains("QUEUED") || slow_row.contains("RUNNING"), "{slow_row}");

    let partial = s.run(None, &["results", &run_id]);
    assert!(stderr(&partial).contains("still in progress"));

    assert!(child.wait().unwrap().success());
    let text = stdout(&s.run(Some(&p), &["status", &run_id]));
    assert!(text.contains("finished, exit code 0"), "{text}");
    assert_eq!(text.matches("DONE").count(), 2);
}

#[test]
fn inline_and_file_circuits_mix() {
    let s = Sandbox::new();
    s.write("ghz.qasm", "OPENQASM 2.0;\nqreg q[3];\nh q[0];\ncx q[0],q[1];\ncx q[1],q[2];\n");
    let text = format!("circuits:\n  - ghz.qasm\n  - |\n{}\nshots: 100\nbackends: {{local_ideal: [statevector]}}\n", indent(BELL));
    let f = s.write("e.yaml", &text);
    let out = s.run(None, &["run", f.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let run_id = stdout(&out).trim().to_string();
    let dispatch: Value = serde_json::from_str(&std::fs::read_to_string(s.home().join(&run_id).join("dispatch.json")).unwrap()).unwrap();
    let jobs = dispatch["local_ideal"]["statevector"].as_array().unwrap();
    assert_eq!(jobs.len(), 2);
    assert!(jobs[0]["qasm"].as_str().unwrap().contains("// circuit: ghz"));
}
