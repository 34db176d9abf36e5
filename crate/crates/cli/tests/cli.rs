use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use cstgn_core::synthetic::PlantedPartition;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_cstgn");

struct Data {
    dir: TempDir,
    edges: PathBuf,
    communities: PathBuf,
}

fn data() -> Data {
    let dir = tempfile::tempdir().unwrap();
    let (g, cs) = PlantedPartition::small(2).generate().unwrap();
    let edges = dir.path().join("edges.txt");
    g.write_edge_list(fs::File::create(&edges).unwrap()).unwrap();
    let communities = dir.path().join("communities.txt");
    let lines: Vec<String> = cs
        .communities
        .iter()
        .map(|c| c.iter().map(|&u| g.node_id(u)).collect::<Vec<_>>().join(" "))
        .collect();
    fs::write(&communities, lines.join("\n")).unwrap();
    Data { dir, edges, communities }
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn train(d: &Data, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--graph",
        s(&d.edges),
        "--communities",
        s(&d.communities),
        "--hidden",
        "8",
        "--queries",
        "20",
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn trace_epochs(out: &Path) -> Vec<u64> {
    fs::read_to_string(out.join("trace.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect()
}

#[test]
fn one_epoch_gives_one_epoch_of_trace() {
    let d = data();
    let out = d.dir.path().join("run");
    let o = train(&d, &out, &["--epochs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("validation F1"));
    assert_eq!(trace_epochs(&out), vec![1, 1, 1]);
    assert!(out.join("model.ckpt").is_file());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_run"], 1);
}

#[test]
fn same_arguments_give_identical_traces() {
    let d = data();
    let (a, b) = (d.dir.path().join("a"), d.dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&d, out, &["--epochs", "2", "--seed", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(a.join("trace.jsonl")).unwrap(), fs::read(b.join("trace.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn config_file_sets_defaults_and_flags_win() {
    let d = data();
    let cfg = d.dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 1, "patience": 5}"#).unwrap();
    let out = d.dir.path().join("c1");
    let o = train(&d, &out, &["--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(trace_epochs(&out).len(), 3);
    let out = d.dir.path().join("c2");
    let o = train(&d, &out, &["--config", s(&cfg), "--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(trace_epochs(&out), vec![1, 1, 1, 2, 2, 2]);

    fs::write(&cfg, r#"{"epoch": 1}"#).unwrap();
    let o = train(&d, &d.dir.path().join("c3"), &["--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn user_errors_exit_with_one() {
    let d = data();
    let o = run(&["train", "--graph", "/no/such/edges.txt", "--communities", s(&d.communities)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/no/such/edges.txt"));

    let o = run(&["experiment", "bogus", "--graph", s(&d.edges), "--communities", s(&d.communities)]);
    assert_eq!(o.status.code(), Some(1));
    for name in ["ablation_gru", "snapshot_count", "eta_sweep", "hidden_sweep"] {
        assert!(stderr(&o).contains(name), "{}", stderr(&o));
    }

    assert_eq!(run(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    let o = run(&["train", "--graph", s(&d.edges), "--communities", s(&d.communities), "--epochs", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--graph", s(&d.edges), "--communities", s(&d.communities), "--variant", "lstm"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        vec!["ingest"],
        vec!["train"],
        vec!["query"],
        vec!["eval"],
        vec!["experiment"],
        vec!["serve"],
        vec!["session"],
        vec!["session", "feedback"],
        vec!["health"],
        vec!["graph"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let o = run(&args);
        assert!(o.status.success(), "{sub:?}");
        assert!(stdout(&o).contains("Usage"), "{sub:?}");
    }
}

#[test]
fn query_eval_and_experiment() {
    let d = data();
    let out = d.dir.path().join("m");
    assert!(train(&d, &out, &["--epochs", "2"]).status.success());
    let ckpt = out.join("model.ckpt");
    let rec = d.dir.path().join("q.jsonl");
    let query = |nodes: &str, eta: &str, file: &Path| {
        run(&[
            "query",
            "--checkpoint",
            s(&ckpt),
            "--graph",
            s(&d.edges),
            "--nodes",
            nodes,
            "--eta",
            eta,
            "--out",
            s(file),
        ])
    };

    let first = query("n1,n3", "0.5", &rec);
    assert!(first.status.success(), "{}", stderr(&first));
    let text = fs::read_to_string(&rec).unwrap();
    let second = query("n1,n3", "0.5", &rec);
    assert_eq!(stdout(&first), stdout(&second));
    assert_eq!(text, fs::read_to_string(&rec).unwrap());
    let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
    assert_eq!(v["query"], serde_json::json!(["n1", "n3"]));
    assert!(stdout(&first).contains("psi over members"));

    let o = query("n1,n3", "1.0", &rec);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(fs::read_to_string(&rec).unwrap().trim()).unwrap();
    assert!(v["psi"].as_object().unwrap().values().all(|p| p.as_f64().unwrap() < 1.0));
    assert_eq!(v["members"], serde_json::json!(["n1", "n3"]));

    let o = query("n1,zzz", "0.5", &rec);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zzz"));

    let ev = d.dir.path().join("ev");
    let o = run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--graph",
        s(&d.edges),
        "--communities",
        s(&d.communities),
        "--queries",
        "20",
        "--out",
        s(&ev),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["per_query"].as_array().unwrap().len(), 6);
    assert_eq!(fs::read_to_string(ev.join("queries.jsonl")).unwrap().lines().count(), 6);

    let ex = d.dir.path().join("ex");
    let o = run(&[
        "experiment",
        "eta_sweep",
        "--graph",
        s(&d.edges),
        "--communities",
        s(&d.communities),
        "--hidden",
        "8",
        "--epochs",
        "1",
        "--queries",
        "20",
        "--out",
        s(&ex),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(ex.join("eta_sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("label,x,mean_f1"));
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(fs::read_to_string(ex.join("eta_sweep.jsonl")).unwrap().lines().count(), 9);
}

#[test]
fn ingest_round_trips_edges() {
    let d = data();
    let out = d.dir.path().join("ing");
    let o = run(&["ingest", "--graph", s(&d.edges), "--communities", s(&d.communities), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("nodes      40"));
    let again = run(&["ingest", "--graph", s(&out.join("edges.txt")), "--communities", s(&d.communities)]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(stdout(&again), stdout(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["communities"], 2);
}

struct Server {
    child: Child,
    url: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(d: &Data, ckpt: &Path, extra: &[&str]) -> Server {
    let mut child = Command::new(BIN)
        .args(["serve", "--checkpoint", s(ckpt), "--graph", s(&d.edges), "--port", "0"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected first line {line:?}"))
        .to_string();
    assert!(!url.ends_with(":0"), "{url}");
    Server { child, url }
}

fn remote(srv: &Server, args: &[&str]) -> Output {
    Command::new(BIN).args(args).args(["--url", &srv.url]).output().unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn serve_and_drive_a_session() {
    let d = data();
    let out = d.dir.path().join("m");
    assert!(train(&d, &out, &["--epochs", "1"]).status.success());
    let mut srv = serve(&d, &out.join("model.ckpt"), &["--alpha", "0"]);

    let start = Instant::now();
    while !remote(&srv, &["health"]).status.success() {
        assert!(start.elapsed() < Duration::from_secs(30), "service never became ready");
        std::thread::sleep(Duration::from_millis(50));
    }
    let id = json(&remote(&srv, &["session", "create"]))["session_id"].as_str().unwrap().to_string();
    let q = json(&remote(&srv, &["session", "query", &id, "--nodes", "n0,n4"]));
    assert_eq!(q["eta"], 0.5);
    assert_eq!(q["interaction_index"], 0);
    let fb = json(&remote(&srv, &["session", "feedback", &id, "--label", "n5=1", "--label", "n30=0", "--epochs", "2"]));
    assert_eq!(fb["loss_trace"].as_array().unwrap().len(), 2);
    let o = remote(&srv, &["session", "feedback", &id, "--label", "n5=2"]);
    assert_eq!(o.status.code(), Some(1));
    let fin = json(&remote(&srv, &["session", "finalize", &id]));
    assert_eq!(fin["meta_update_norm"], 0.0);
    assert_eq!(remote(&srv, &["session", "finalize", &id]).status.code(), Some(1));
    let view = json(&remote(&srv, &["graph", "--center", "n2", "--radius", "0"]));
    assert_eq!(view["nodes"].as_array().unwrap().len(), 1);

    json(&remote(&srv, &["session", "create"]));
    let pid = srv.child.id().to_string();
    assert!(Command::new("kill").args(["-INT", &pid]).status().unwrap().success());
    let status = srv.child.wait().unwrap();
    assert!(status.success(), "{status:?}");
    let mut log = String::new();
    std::io::Read::read_to_string(&mut srv.child.stderr.take().unwrap(), &mut log).unwrap();
    assert!(log.contains("discarding open sessions"), "{log}");
}

#[test]
fn serve_fails_on_a_taken_port_or_bad_checkpoint() {
    let d = data();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let bogus = d.dir.path().join("bogus.ckpt");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = run(&["serve", "--checkpoint", s(&bogus), "--graph", s(&d.edges), "--port", &port]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot bind"), "{}", stderr(&o));

    let o = run(&["serve", "--checkpoint", s(&bogus), "--graph", s(&d.edges), "--port", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("checkpoint"), "{}", stderr(&o));
}

#[test]
fn health_without_a_service_fails() {
    let free = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let o = run(&["health", "--url", &format!("http://{free}")]);
    assert_eq!(o.status.code(), Some(1));
}
