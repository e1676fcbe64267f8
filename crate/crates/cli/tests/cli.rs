use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;

use clap::CommandFactory;
use moncat_cli::{run, Cli};
use moncat_core::cat::{run_scripted, Mode, SessionConfig};
use moncat_core::data::read_model;
use moncat_core::inference::JointModel;
use moncat_core::learning::LearnReport;
use moncat_server::convert::step_payload;
use moncat_wire::StepPayload;
use tempfile::TempDir;

fn moncat(args: &[&str]) -> i32 {
    let mut full = vec!["moncat"];
    full.extend_from_slice(args);
    run(full)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset and its ground truth.
fn fixture(dir: &Path, students: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("data.csv");
    let model = dir.join("truth.json");
    let students = students.to_string();
    let code = moncat(&[
        "gen",
        "--network",
        "small",
        "--skills",
        "2",
        "--questions",
        "6",
        "--students",
        &students,
        "--seed",
        "3",
        "--data",
        p(&data),
        "--model",
        p(&model),
    ]);
    assert_eq!(code, 0);
    (data, model)
}

#[test]
fn help_lists_every_flag() {
    let mut cmd = Cli::command();
    for sub in ["gen", "train", "simulate", "bench", "serve", "session"] {
        let sc = cmd.find_subcommand_mut(sub).unwrap();
        let help = sc.render_long_help().to_string();
        for arg in sc.get_arguments() {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{}", long)), "{} help lacks --{}", sub, long);
            }
        }
    }
    assert_eq!(moncat(&["--help"]), 0);
    assert_eq!(moncat(&["train", "--help"]), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 50);
    let out = dir.path().join("m.json");
    assert_eq!(
        moncat(&[
            "train",
            "--method",
            "magic",
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(moncat(&["train", "--data", p(&data)]), 2);
    assert_eq!(moncat(&["frobnicate"]), 2);
    assert_eq!(
        moncat(&[
            "--threads",
            "0",
            "train",
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(
        moncat(&[
            "train",
            "--restarts",
            "0",
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--out",
            p(&out)
        ]),
        2
    );
    assert_eq!(moncat(&["bench", "--counts", "10,8"]), 2);
    assert!(!out.exists());
}

#[test]
fn runtime_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let (_, truth) = fixture(dir.path(), 20);
    let missing = dir.path().join("missing.csv");
    let out = dir.path().join("m.json");
    assert_eq!(
        moncat(&[
            "train",
            "--data",
            p(&missing),
            "--structure",
            p(&truth),
            "--out",
            p(&out)
        ]),
        1
    );
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "q0,q1,q2,q3,q4,q5\n0,1,7,0,0,0\n").unwrap();
    assert_eq!(
        moncat(&["train", "--data", p(&bad), "--structure", p(&truth), "--out", p(&out)]),
        1
    );
}

#[test]
fn gen_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    fixture(a.path(), 100);
    fixture(b.path(), 100);
    for f in ["data.csv", "truth.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    let csv = fs::read_to_string(a.path().join("data.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "q0,q1,q2,q3,q4,q5");
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn train_is_deterministic_and_echoes_restarts() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 80);
    let mut outputs = Vec::new();
    for i in 0..2 {
        let model = dir.path().join(format!("m{}.json", i));
        let report = dir.path().join(format!("r{}.json", i));
        let code = moncat(&[
            "train",
            "--method",
            "irem",
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--seed",
            "7",
            "--restarts",
            "10",
            "--max-iterations",
            "40",
            "--out",
            p(&model),
            "--report",
            p(&report),
        ]);
        assert_eq!(code, 0);
        outputs.push((fs::read(&model).unwrap(), fs::read(&report).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);

    let report: LearnReport = serde_json::from_slice(&outputs[0].1).unwrap();
    assert_eq!(report.restarts.len(), 10);
    assert!(report.restarts.iter().all(|r| !r.trace.is_empty()));
    assert!(report.certificate.is_empty());
    read_model(&dir.path().join("m0.json")).unwrap();
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 60);
    let config = dir.path().join("learn.json");
    fs::write(&config, r#"{"method": "grad", "restarts": 3, "max_iterations": 20}"#).unwrap();
    let report = dir.path().join("r.json");
    let model = dir.path().join("m.json");
    let train = |extra: &[&str]| {
        let mut args = vec![
            "train",
            "--config",
            p(&config),
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--out",
            p(&model),
            "--report",
            p(&report),
        ];
        args.extend_from_slice(extra);
        assert_eq!(moncat(&args), 0);
        serde_json::from_slice::<LearnReport>(&fs::read(&report).unwrap()).unwrap()
    };
    let from_file = train(&[]);
    assert_eq!(from_file.restarts.len(), 3);
    assert_eq!(from_file.config.method.name(), "grad");
    let overridden = train(&["--restarts", "2", "--method", "em"]);
    assert_eq!(overridden.restarts.len(), 2);
    assert_eq!(overridden.config.method.name(), "em");
    assert_eq!(overridden.config.max_iterations, 20);

    fs::write(&config, r#"{"restarts": "many"}"#).unwrap();
    assert_eq!(
        moncat(&[
            "train",
            "--config",
            p(&config),
            "--data",
            p(&data),
            "--structure",
            p(&truth),
            "--out",
            p(&model)
        ]),
        1
    );
}

fn simulate(dir: &Path, data: &Path, truth: &Path, out: &str, sizes: &str) -> PathBuf {
    let out = dir.join(out);
    let code = moncat(&[
        "simulate",
        "--data",
        p(data),
        "--structure",
        p(truth),
        "--sizes",
        sizes,
        "--replications",
        "1",
        "--cohort",
        "20",
        "--methods",
        "em",
        "--modes",
        "fixed,adaptive",
        "--restarts",
        "2",
        "--max-iterations",
        "30",
        "--seed",
        "4",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    out
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn simulate_writes_two_curves_per_metric_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 120);
    let a = simulate(dir.path(), &data, &truth, "a", "10");
    let b = simulate(dir.path(), &data, &truth, "b", "10");
    let names = listing(&a);
    assert_eq!(names, listing(&b));
    let metrics = [
        "accuracy",
        "score_error_a",
        "score_error_b",
        "grade_error_a",
        "grade_error_b",
    ];
    for m in metrics {
        let files: Vec<_> = names
            .iter()
            .filter(|n| n.starts_with(&format!("curve_{}_", m)))
            .collect();
        assert_eq!(files.len(), 2, "{}: {:?}", m, files);
    }
    assert!(names.contains(&"curve_grade_error_a_em_n10_adaptive.csv".to_string()));
    assert_eq!(names.len(), 11);
    for n in &names {
        assert_eq!(
            fs::read(a.join(n)).unwrap(),
            fs::read(b.join(n)).unwrap(),
            "{} differs",
            n
        );
    }
    let curve = fs::read_to_string(a.join("curve_grade_error_a_em_n10_fixed.csv")).unwrap();
    let lines: Vec<_> = curve.lines().collect();
    assert_eq!(lines[0], "step,mean,stderr");
    assert_eq!(lines.len(), 1 + 7);
    assert!(lines[7].starts_with("6,0,"));
}

#[test]
fn simulate_sweeps_every_size() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 220);
    let out = simulate(dir.path(), &data, &truth, "sweep", "10,40,160");
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let mut sizes: Vec<u64> = manifest["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["size"].as_u64().unwrap())
        .collect();
    sizes.sort();
    assert_eq!(sizes, vec![10, 40, 160]);
    assert_eq!(manifest["curves"].as_array().unwrap().len(), 6);
}

#[test]
fn simulate_with_fixed_model() {
    let dir = TempDir::new().unwrap();
    let (data, truth) = fixture(dir.path(), 40);
    let out = dir.path().join("fixed");
    let code = moncat(&[
        "simulate",
        "--data",
        p(&data),
        "--model",
        p(&truth),
        "--modes",
        "adaptive",
        "--cohort",
        "15",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let names = listing(&out);
    assert_eq!(names.len(), 6);
    assert!(names.contains(&"curve_accuracy_model_adaptive.csv".to_string()));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["cohort"], 15);
}

#[test]
fn bench_honours_max_naive() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench.csv");
    let code = moncat(&[
        "bench",
        "--counts",
        "6,8,10,12,14",
        "--max-naive",
        "12",
        "--repeats",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(
        csv.lines().next().unwrap(),
        "questions,divorcing_seconds,naive_seconds,max_abs_difference"
    );
    assert_eq!(rows.len(), 5);
    for row in &rows {
        let k: usize = row[0].parse().unwrap();
        assert!(row[1].parse::<f64>().unwrap() >= 0.0);
        if k <= 12 {
            let diff: f64 = row[3].parse().unwrap();
            assert!(diff < 1e-12, "k={} diff={}", k, diff);
        } else {
            assert_eq!(row[2], "infeasible");
            assert_eq!(row[3], "infeasible");
        }
    }
}

fn start_server(model: &Path) -> (String, std::thread::JoinHandle<()>) {
    let m = read_model(model).unwrap();
    let state = Arc::new(moncat_server::AppState::new(vec![("small".into(), m)], None).unwrap());
    let (tx, rx) = std::sync::mpsc::channel();
    let handle = std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum_serve(listener, state).await;
        });
    });
    (format!("http://{}", rx.recv().unwrap()), handle)
}

async fn axum_serve(listener: tokio::net::TcpListener, state: Arc<moncat_server::AppState>) {
    let _ = moncat_server::serve(listener, state, None).await;
}

#[test]
fn session_through_service_matches_engine() {
    let dir = TempDir::new().unwrap();
    let (_, truth) = fixture(dir.path(), 10);
    let (base, _server) = start_server(&truth);
    let answers = [1, 1, 0, 1, 0, 0];
    let mut logs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("s{}.jsonl", i));
        let code = moncat(&[
            "session",
            "--server",
            &base,
            "--model",
            "small",
            "--mode",
            "adaptive",
            "--answers",
            "1,1,0,1,0,0",
            "--out",
            p(&out),
        ]);
        assert_eq!(code, 0);
        logs.push(fs::read(&out).unwrap());
    }
    assert_eq!(logs[0], logs[1]);

    let steps: Vec<StepPayload> = logs[0]
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).unwrap())
        .collect();
    let jm = Arc::new(JointModel::new(read_model(&truth).unwrap()).unwrap());
    let direct = run_scripted(jm.clone(), &answers, SessionConfig::new(&jm, Mode::Adaptive)).unwrap();
    let expected: Vec<_> = direct.iter().map(step_payload).collect();
    assert_eq!(steps, expected);

    assert_eq!(
        moncat(&[
            "session",
            "--server",
            &base,
            "--model",
            "nope",
            "--answers",
            "1,1,0,1,0,0"
        ]),
        1
    );
    assert_eq!(
        moncat(&["session", "--server", &base, "--model", "small", "--answers", "1,1"]),
        2
    );
}

#[test]
fn serve_binary_answers_health_checks() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_moncat"))
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (health, models) = rt.block_on(async {
        let client = moncat_client::Client::new(base);
        (client.health().await.unwrap(), client.models().await.unwrap())
    });
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(models.len(), 1);
    assert_eq!(models[0].id, "exam");
    assert_eq!(models[0].questions, 37);
    assert_eq!(models[0].max_score, 52);
}
