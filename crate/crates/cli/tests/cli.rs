use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use perce_cli::manifest::{sha256_file, RunManifest};
use perce_cli::serve::spawn_loopback;
use perce_core::data::{load_jsonl, GeneratorSpec, Split};
use perce_core::model::Checkpoint;
use perce_core::scoring::{pir, RemoteConfig, RemoteScorer, ScorerBackend};
use perce_core::trainer::render;

fn perce(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perce"))
        .args(args)
        .env_remove("PERCE_AUTH_TOKEN")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_spec(dir: &Path) -> PathBuf {
    let mut spec = GeneratorSpec::desk_default();
    spec.n_users = 6;
    spec.queries_per_user = 4;
    let p = dir.join("spec.json");
    std::fs::write(&p, serde_json::to_string(&spec).unwrap()).unwrap();
    p
}

/// Generates a small corpus and trains one epoch; returns (data, run dir).
fn small_run(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = small_spec(dir);
    let data = dir.join("data.jsonl");
    let o = perce(&[&"gen-data", &"--spec", &spec, &"--out", &data]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"method": "PerCE", "epochs": 1}}"#).unwrap();
    let run = dir.join("run");
    let o = perce(&[&"train", &"--config", &cfg, &"--data", &data, &"--out", &run]);
    assert!(o.status.success(), "{}", stderr(&o));
    (data, run)
}

#[test]
fn gen_data_is_seeded_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let out = |name: &str, seed: &str| {
        let p = dir.path().join(name);
        let o = perce(&[&"--seed", &seed, &"gen-data", &"--spec", &spec, &"--out", &p]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(&p).unwrap()
    };
    let a = out("a.jsonl", "5");
    assert_eq!(a, out("b.jsonl", "5"));
    assert_ne!(a, out("c.jsonl", "6"));
    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(dir.path().join("a.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seed, Some(5));
    assert_eq!(manifest.outputs[0].sha256, sha256_file(&dir.path().join("a.jsonl")).unwrap());
}

#[test]
fn presets_generate_without_a_spec() {
    let dir = tempfile::tempdir().unwrap();
    for preset in ["default", "paraphrased", "slot-heavy"] {
        let p = dir.path().join(format!("{preset}.jsonl"));
        let o = perce(&[&"gen-data", &"--preset", &preset, &"--out", &p]);
        assert!(o.status.success(), "{preset}: {}", stderr(&o));
        assert!(!load_jsonl(&p).unwrap().is_empty());
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = perce(&[&"gen-data", &"--spec", &d.join("missing.json"), &"--out", &d.join("x.jsonl")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spec not found"), "{}", stderr(&o));

    let o = perce(&[&"frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let data = d.join("data.jsonl");
    let spec = small_spec(d);
    assert!(perce(&[&"gen-data", &"--spec", &spec, &"--out", &data]).status.success());
    let o = perce(&[&"eval", &"--checkpoint", &d.join("none.json"), &"--data", &data, &"--report", &d.join("r")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint not found"), "{}", stderr(&o));

    let cfg = d.join("bad.json");
    std::fs::write(&cfg, r#"{"train": {"method": "Focal"}}"#).unwrap();
    let o = perce(&[&"train", &"--config", &cfg, &"--data", &data, &"--out", &d.join("run")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("PerCE"), "{}", stderr(&o));
}

#[test]
fn malformed_jsonl_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path());
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"user_id\": 7";
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let ck = run.join("checkpoint-epoch0.json");
    let o = perce(&[&"eval", &"--checkpoint", &ck, &"--data", &bad, &"--report", &dir.path().join("r")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let spec = small_spec(dir.path());
    assert!(perce(&[&"gen-data", &"--spec", &spec, &"--out", &data]).status.success());
    // Bind then drop a listener to get a port nobody is serving.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let endpoint = format!("http://127.0.0.1:{port}");
    let o = perce(&[
        &"score", &"--backend", &"remote", &"--endpoint", &endpoint, &"--data", &data,
        &"--out", &dir.path().join("s.jsonl"), &"--retries", &"1", &"--timeout-ms", &"500",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn train_writes_artifacts_listed_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path());
    for f in ["metrics.csv", "epoch_metrics.csv", "report.json", "token_diagnostics.jsonl", "resolved_config.json", "checkpoint-epoch0.json"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "train");
    assert!(manifest.config_sha256.is_some());
    assert!(manifest.inputs.iter().any(|e| e.path == data));
    for e in &manifest.outputs {
        assert_eq!(e.sha256, sha256_file(&e.path).unwrap(), "{}", e.path.display());
    }
    assert!(manifest.phase_ms.contains_key("e_step") && manifest.phase_ms.contains_key("m_step"));
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() > 1);
    let train_records = load_jsonl(&data).unwrap().split(Split::Train).len();
    let diagnostics = std::fs::read_to_string(run.join("token_diagnostics.jsonl")).unwrap();
    assert_eq!(diagnostics.lines().count(), train_records);

    let report = dir.path().join("report");
    let ck = run.join("checkpoint-epoch0.json");
    let o = perce(&[&"eval", &"--checkpoint", &ck, &"--data", &data, &"--report", &report, &"--no-generation"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["identification_report.json", "metrics.csv", "pir_histogram.csv", "manifest.json"] {
        assert!(report.join(f).is_file(), "{f} missing");
    }
}

fn post(addr: std::net::SocketAddr, auth: Option<&str>, body: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let auth = auth.map_or(String::new(), |t| format!("Authorization: Bearer {t}\r\n"));
    write!(
        s,
        "POST /v1/score HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\n{auth}Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn loopback_server_enforces_auth_and_matches_local_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path());
    let ck = Checkpoint::load(run.join("checkpoint-epoch0.json")).unwrap();
    let server = spawn_loopback(ck.clone(), Some("sesame".into())).unwrap();

    let body = r#"{"context": "<bos> persona :", "continuation": "you prefer red"}"#;
    assert!(post(server.addr(), None, body).starts_with("HTTP/1.1 401"));
    assert!(post(server.addr(), Some("wrong"), body).starts_with("HTTP/1.1 401"));
    assert!(post(server.addr(), Some("sesame"), body).starts_with("HTTP/1.1 200"));

    let corpus = load_jsonl(&data).unwrap();
    let rendered = render(&corpus, &ck.vocab, &ck.template).unwrap();
    let remote = ScorerBackend::Remote {
        scorer: RemoteScorer::new(RemoteConfig {
            auth_token: Some("sesame".into()),
            ..RemoteConfig::new(server.url())
        })
        .unwrap(),
        vocab: ck.vocab.clone(),
        template: ck.template.clone(),
    };
    for (ex, r) in rendered.iter().zip(remote.pir_batch(&rendered)) {
        let (r, l) = (r.unwrap(), pir(&ck.params, ex).unwrap());
        for (a, b) in r.values.iter().zip(&l.values) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["gen-data", "train", "score", "eval", "serve"] {
        let o = perce(&[&sub, &"--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("--seed"), "{sub}");
    }
}

#[test]
fn ce_and_perce_produce_different_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (data, perce_run) = small_run(dir.path());
    let cfg = dir.path().join("ce.json");
    std::fs::write(&cfg, r#"{"train": {"method": "CE", "epochs": 1}}"#).unwrap();
    let ce_run = dir.path().join("ce");
    let o = perce(&[&"train", &"--config", &cfg, &"--data", &data, &"--out", &ce_run]);
    assert!(o.status.success(), "{}", stderr(&o));
    let hash = |run: &Path| sha256_file(&run.join("checkpoint-epoch0.json")).unwrap();
    assert_ne!(hash(&ce_run), hash(&perce_run));
}

fn pir_column(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["pir"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
        })
        .collect()
}

#[test]
fn remote_score_through_the_cli_matches_local() {
    let dir = tempfile::tempdir().unwrap();
    let (data, run) = small_run(dir.path());
    let ck_path = run.join("checkpoint-epoch0.json");
    let local = dir.path().join("local.jsonl");
    let o = perce(&[&"score", &"--checkpoint", &ck_path, &"--data", &data, &"--out", &local]);
    assert!(o.status.success(), "{}", stderr(&o));
    let local = pir_column(&local);
    assert_eq!(local.len(), load_jsonl(&data).unwrap().len());

    // The remote side builds its vocabulary from the corpus and the default
    // template, exactly as training did.
    let server = spawn_loopback(Checkpoint::load(&ck_path).unwrap(), None).unwrap();
    let remote = dir.path().join("remote.jsonl");
    let url = server.url();
    let o = perce(&[&"score", &"--backend", &"remote", &"--endpoint", &url, &"--data", &data, &"--out", &remote]);
    assert!(o.status.success(), "{}", stderr(&o));
    let remote = pir_column(&remote);
    assert_eq!(remote.len(), local.len());
    for (r, l) in remote.iter().zip(&local) {
        assert_eq!(r.len(), l.len());
        for (a, b) in r.iter().zip(l) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }
}
