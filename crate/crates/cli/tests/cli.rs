use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use pandora_core::corpus::{self, Claim, Dataset, Origin, Polarity, Stance, Veracity};

fn pandora(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pandora"))
        .args(args)
        .current_dir(dir)
        .env_remove("PANDORA_ENDPOINT")
        .env_remove("PANDORA_API_KEY")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_corpus(dir: &Path, n: usize, with_stances: bool) {
    let claims: Vec<Claim> = (0..n)
        .map(|i| Claim {
            id: format!("c{i}"),
            text: format!("Report {i} says the river bridge closed overnight"),
            veracity: if i % 2 == 0 { Veracity::TrueInfo } else { Veracity::Misinformation },
            dataset: Dataset::SS,
            event_or_topic: None,
        })
        .collect();
    corpus::write_claims(&dir.join("claims.jsonl"), &claims).unwrap();
    if with_stances {
        let stances: Vec<Stance> = claims
            .iter()
            .flat_map(|c| {
                [(Polarity::Support, "confirmed"), (Polarity::Refute, "debunked")].map(|(polarity, w)| Stance {
                    claim_id: c.id.clone(),
                    text: format!("{}.", vec![w; 12].join(" ")),
                    polarity,
                    origin: Origin::Human,
                })
            })
            .collect();
        corpus::write_stances(&dir.join("stances.jsonl"), &stances).unwrap();
    }
}

fn write_plan(dir: &Path, body: &str) {
    std::fs::write(dir.join("plan.toml"), body).unwrap();
}

const SMOKE: &str = r#"
output = "out"
seed = 3
group_mode = "both"

[corpus]
claims = "claims.jsonl"
stances = "stances.jsonl"

[[backends]]
name = "scripted"
kind = "scripted"
policy = "follower:p_believe=0.5,p_follow=0.6,p_conform=0.8"
"#;

#[test]
fn missing_plan_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pandora(dir.path(), &["run", "--plan", "nope.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&pandora(dir.path(), &["run", "--bogus"])), 1);
}

#[test]
fn invalid_plan_never_contacts_the_backend() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, false);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    write_plan(
        dir.path(),
        &format!(
            "output = \"out\"\n[corpus]\nclaims = \"claims.jsonl\"\nstances = \"missing.jsonl\"\n\n\
             [[backends]]\nname = \"remote\"\nkind = \"remote\"\nendpoint = \"{url}\"\n"
        ),
    );
    let out = pandora(dir.path(), &["run", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));
    assert_eq!(listener.accept().unwrap_err().kind(), ErrorKind::WouldBlock);
    assert!(!dir.path().join("out").exists());
}

#[test]
fn smoke_run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, true);
    write_plan(dir.path(), SMOKE);
    let start = Instant::now();
    let out = pandora(dir.path(), &["run", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed() < Duration::from_secs(5));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["failed_cells"], 0);
    assert!(dir.path().join("out/manifest.json").is_file());

    let out = pandora(dir.path(), &["report", "--plan", "plan.toml", "--out", "rep"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let written = std::fs::read_dir(dir.path().join("rep")).unwrap().count();
    assert!(written > 0);
}

#[test]
fn global_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, true);
    write_plan(dir.path(), SMOKE);
    let out = pandora(
        dir.path(),
        &["run", "--plan", "plan.toml", "--out", "elsewhere", "--seed", "11", "--concurrency", "1"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/manifest.json").is_file());
    assert!(!dir.path().join("out").exists());
    let out = pandora(dir.path(), &["run", "--plan", "plan.toml", "--backend", "absent"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn generate_persuasion_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 3, false);
    write_plan(
        dir.path(),
        "output = \"out\"\n[corpus]\nclaims = \"claims.jsonl\"\n\n\
         [[backends]]\nname = \"scripted\"\nkind = \"scripted\"\npolicy = \"template\"\n",
    );
    let out = pandora(dir.path(), &["generate-persuasion", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let path = dir.path().join("out/llm_stances.jsonl");
    let stances = corpus::read_stances(&path).unwrap();
    assert_eq!(stances.len(), 6);
    assert!(stances.iter().all(|s| s.origin == Origin::Llm));
    let first = std::fs::read(&path).unwrap();

    let out = pandora(dir.path(), &["generate-persuasion", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["generated"], 0);
    assert_eq!(summary["skipped_existing"], 3);
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn refused_claims_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, false);
    write_plan(
        dir.path(),
        "output = \"out\"\n[corpus]\nclaims = \"claims.jsonl\"\n\n\
         [[backends]]\nname = \"scripted\"\nkind = \"scripted\"\npolicy = \"refuse\"\n",
    );
    let out = pandora(dir.path(), &["generate-persuasion", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 0);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["refused"].as_array().unwrap().len(), 2);
    assert!(corpus::read_stances(&dir.path().join("out/llm_stances.jsonl")).unwrap().is_empty());
}

#[test]
fn unreachable_backend_exits_with_backend_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1, true);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    std::fs::write(
        dir.path().join("endpoint.toml"),
        format!(
            "endpoint = \"http://127.0.0.1:{port}/v1/chat/completions\"\n\
             max_in_flight = 1\ntimeout_secs = 2\nbackoff_base_ms = 1\n"
        ),
    )
    .unwrap();
    write_plan(
        dir.path(),
        "output = \"out\"\ndemographics = [\"young\", \"old\"]\n[corpus]\nclaims = \"claims.jsonl\"\nstances = \"stances.jsonl\"\n\n\
         [[backends]]\nname = \"remote\"\nkind = \"remote\"\nconfig = \"endpoint.toml\"\n",
    );
    let out = pandora(dir.path(), &["run", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn token_stats_and_lexicon_validate() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, true);
    let out = pandora(dir.path(), &["token-stats", "--claims", "claims.jsonl", "--stances", "stances.jsonl"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(serde_json::from_slice::<serde_json::Value>(&out.stdout).is_ok());

    std::fs::write(dir.path().join("bad.lex"), "happy*\n").unwrap();
    assert_eq!(code(&pandora(dir.path(), &["lexicon-validate", "bad.lex"])), 1);
    std::fs::write(dir.path().join("thin.lex"), "[emo_pos]\nhappy*\n").unwrap();
    let out = pandora(dir.path(), &["lexicon-validate", "thin.lex"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("emo_pos"));
}

/// Answers chat completions on a background thread; requests about claim 1 get a 400.
fn spawn_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let (status, payload) = if String::from_utf8_lossy(&body).contains("Report 1 ") {
                (400, r#"{"error":"rejected"}"#.to_string())
            } else {
                let text = "True information. As a young person, I trust it.";
                (200, serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string())
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    url
}

#[test]
fn some_failed_cells_exit_with_partial() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 2, true);
    let url = spawn_stub();
    write_plan(
        dir.path(),
        &format!(
            "output = \"out\"\ndemographics = [\"young\", \"old\"]\n[corpus]\nclaims = \"claims.jsonl\"\nstances = \"stances.jsonl\"\n\n\
             [[backends]]\nname = \"remote\"\nkind = \"remote\"\nendpoint = \"{url}\"\n"
        ),
    );
    let out = pandora(dir.path(), &["run", "--plan", "plan.toml"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    let errors = std::fs::read_to_string(dir.path().join("out/r0/errors.jsonl")).unwrap();
    assert!(errors.contains("c1") && !errors.contains("c0"));
}
