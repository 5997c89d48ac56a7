use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use causal_amortized::dataset::{read_dataset, Task};
use causal_amortized::graph::Graph;
use causal_amortized::metrics::evaluate;
use causal_amortized::model::{EdgeBeliefs, Model, ModelConfig};
use causal_amortized::rng::stream;
use causal_amortized::train::{RunConfig, Trainer};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_causal-amortized"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).args(["--log-level", "error"]).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY_RUN: &str = r#"{"schedule": {"steps": 20, "d_values": [3, 4], "log_every": 5}, "seed": 4}"#;

#[test]
fn simulate_writes_reproducible_task_directories() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "sim.json", r#"{"tasks": 1, "d": 2, "n": 30, "seed": 5}"#);
    let before = fs::read(&cfg).unwrap();
    let out = tmp.path().join("a");
    let o = run(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["tasks"], 1);
    assert_eq!(summary["domain"], "linear");
    let values = fs::read_to_string(out.join("task_0000/values.csv")).unwrap();
    assert!(values.lines().all(|l| l.split(',').count() == 2));
    assert_eq!(values.lines().count(), 30);
    assert!(out.join("config.json").exists());
    assert_eq!(fs::read(&cfg).unwrap(), before);

    let again = tmp.path().join("b");
    run(&["simulate", "--config", s(&cfg), "--out", s(&again)]);
    assert_eq!(tree(&out), tree(&again));
}

#[test]
fn parallel_simulation_matches_sequential() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "sim.json", r#"{"domain": {"kind": "rff"}, "tasks": 7, "d": 4, "n": 25}"#);
    let (a, b) = (tmp.path().join("seq"), tmp.path().join("par"));
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--seed", "9", "--out", s(&a)])), 0);
    let o = run(&["simulate", "--config", s(&cfg), "--seed", "9", "--parallel", "3", "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree(&a), tree(&b));
    let cfg_json: Value = serde_json::from_slice(&fs::read(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg_json["seed"], 9);
}

#[test]
fn user_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path(), "bad.json", r#"{"tasks": 1, "bogus": true}"#);
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["simulate", "--config", s(&bad), "--out", s(&out)])), 1);
    let bad_run = write(tmp.path(), "run.json", r#"{"schedule": {"stepz": 3}}"#);
    assert_eq!(code(&run(&["train", "--config", s(&bad_run), "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["suite", "everything", "--out", s(&out)])), 1);
    assert_eq!(code(&run(&["predict", "--checkpoint", "/nonexistent", "--data", "/nonexistent"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn training_writes_metrics_checkpoint_and_resolved_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.json", TINY_RUN);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&a)])), 0);
    let metrics = fs::read_to_string(a.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 20 / 5);
    for line in metrics.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["step", "loss", "F_ema", "lambda", "lr"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
    }
    let resolved: RunConfig = serde_json::from_slice(&fs::read(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved.schedule.steps, 20);
    assert_eq!(resolved.seed, 4);

    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn zero_steps_checkpoints_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"schedule": {"steps": 0}, "seed": 12}"#);
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["train", "--config", s(&cfg), "--out", s(&out)])), 0);
    let saved = Model::load(&out.join("checkpoint")).unwrap();
    let init = Trainer::new(serde_json::from_str(r#"{"schedule": {"steps": 0}, "seed": 12}"#).unwrap()).unwrap();
    assert_eq!(saved.named_tensors(), init.state.model.named_tensors());
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap_or_default(), "");
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let tmp = TempDir::new().unwrap();
    let full = write(tmp.path(), "full.json", TINY_RUN);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["train", "--config", s(&full), "--out", s(&a)])), 0);

    // stop a run halfway, as an interrupted job would
    let mut trainer = Trainer::new(serde_json::from_str(TINY_RUN).unwrap()).unwrap();
    for _ in 0..10 {
        trainer.step().unwrap();
    }
    let ck = tmp.path().join("halfway");
    trainer.checkpoint().unwrap().save(&ck).unwrap();

    let o = run(&["train", "--resume", s(&ck), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (x, y) = (Model::load(&a.join("checkpoint")).unwrap(), Model::load(&b.join("checkpoint")).unwrap());
    assert_eq!(x.named_tensors(), y.named_tensors());
    let tail = |dir: &Path| fs::read_to_string(dir.join("metrics.jsonl")).unwrap().lines().skip(2).collect::<Vec<_>>().join("\n");
    assert_eq!(fs::read_to_string(b.join("metrics.jsonl")).unwrap().lines().collect::<Vec<_>>().join("\n"), tail(&a));
}

#[test]
fn non_finite_loss_halts_with_a_diagnostic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.json", r#"{"schedule": {"steps": 50, "d_values": [3], "base_lr": 1e8}, "seed": 1}"#);
    let out = tmp.path().join("o");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let failure: Value = serde_json::from_slice(&fs::read(out.join("failure.json")).unwrap()).unwrap();
    assert!(failure["step"].as_u64().unwrap() >= 1);
    assert!(failure["batch_seed"].is_u64());
}

fn simulate_into(tmp: &Path, tasks: usize, d: usize) -> PathBuf {
    let cfg = write(tmp, "sim.json", &format!(r#"{{"tasks": {tasks}, "d": {d}, "n": 40, "seed": 3}}"#));
    let out = tmp.join("data");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&out)])), 0);
    out
}

fn saved_model(tmp: &Path) -> PathBuf {
    let dir = tmp.join("model");
    Model::init(ModelConfig::default(), &mut stream(2, &[])).unwrap().save(&dir).unwrap();
    dir
}

#[test]
fn predict_is_deterministic_and_equivariant() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path(), 2, 5);
    let ck = saved_model(tmp.path());
    let (p1, p2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    assert_eq!(code(&run(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&p1)])), 0);
    assert_eq!(code(&run(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&p2)])), 0);
    let theta = fs::read_to_string(p1.join("task_0000/theta.csv")).unwrap();
    assert_eq!(theta, fs::read_to_string(p2.join("task_0000/theta.csv")).unwrap());
    let beliefs = EdgeBeliefs::read(&p1.join("task_0001/theta.csv")).unwrap();
    assert!((0..5).all(|i| beliefs.get(i, i) == 0.0));

    // permute the columns of one task on disk and predict it alone
    let task = Task::read_dir(&data.join("task_0000")).unwrap();
    let perm = [3, 0, 4, 1, 2];
    let permuted = Task {
        data: task.data.permute_columns(&perm),
        ..task.clone()
    };
    let pdir = tmp.path().join("permuted");
    permuted.write_dir(&pdir).unwrap();
    let p3 = tmp.path().join("p3");
    assert_eq!(code(&run(&["predict", "--checkpoint", s(&ck), "--data", s(&pdir), "--out", s(&p3)])), 0);
    let got = EdgeBeliefs::read(&p3.join("theta.csv")).unwrap();
    let want = EdgeBeliefs::read(&p1.join("task_0000/theta.csv")).unwrap().permute(&perm);
    let err = got.as_slice().iter().zip(want.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1e-9, "equivariance error {err}");
    assert_eq!(read_dataset(&data.join("task_0000"), None).unwrap(), task.data);
}

#[test]
fn evaluate_matches_the_library() {
    let tmp = TempDir::new().unwrap();
    let truth = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (0, 4)]).unwrap();
    let truth_csv = write(tmp.path(), "truth.csv", &truth.to_csv());
    let empty_csv = write(tmp.path(), "empty.csv", &Graph::empty(5).to_csv());
    let out = tmp.path().join("e");

    let o = run(&["evaluate", "--pred", s(&truth_csv), "--truth", s(&truth_csv), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["f1"], 1.0);
    assert_eq!(r["shd"], 0);

    let o = run(&["evaluate", "--pred", s(&empty_csv), "--truth", s(&truth_csv), "--out", s(&out)]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["shd"], 4);

    let theta: Vec<f64> = (0..25).map(|k| if k % 6 == 0 { 0.0 } else { (k as f64 * 0.37) % 1.0 }).collect();
    let beliefs = EdgeBeliefs::new(5, theta).unwrap();
    let theta_csv = write(tmp.path(), "theta.csv", &beliefs.to_csv());
    let o = run(&["evaluate", "--pred", s(&theta_csv), "--truth", s(&truth_csv), "--tau", "0.4", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let got: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let want = serde_json::to_value(evaluate(&beliefs, &truth, 0.4).unwrap()).unwrap();
    assert_eq!(got, want);

    let small = write(tmp.path(), "small.csv", &Graph::empty(3).to_csv());
    assert_eq!(code(&run(&["evaluate", "--pred", s(&small), "--truth", s(&truth_csv), "--out", s(&out)])), 1);
}

#[test]
fn batch_evaluation_emits_lines_and_an_aggregate() {
    let tmp = TempDir::new().unwrap();
    let data = simulate_into(tmp.path(), 3, 4);
    let ck = saved_model(tmp.path());
    let pred = tmp.path().join("pred");
    assert_eq!(code(&run(&["predict", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&pred)])), 0);
    let out = tmp.path().join("eval");
    let o = run(&["evaluate", "--pred", s(&pred), "--truth", s(&data), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("reports.jsonl")).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[3]["aggregate"]["tasks"], 3);
}

#[test]
fn suites_report_verdicts_through_the_exit_code() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    let o = run(&["suite", "gradients", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_slice(&fs::read(out.join("gradients.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    // a model whose parameters never moved from initialization must fail
    let ck = saved_model(tmp.path());
    let cfg = write(tmp.path(), "suite.json", &format!(r#"{{"checkpoint": {:?}}}"#, s(&ck)));
    let out = tmp.path().join("l");
    let o = run(&["suite", "learning", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["pass"], false);
}
