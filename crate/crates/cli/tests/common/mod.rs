#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_conretrieve"));
    cmd.env_remove("RUST_LOG");
    cmd
}

pub fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

#[track_caller]
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Synthetic corpus, mock summaries and a small untrained encoder in `dir`.
pub fn prepare(dir: &Path, dialogues: usize, seed: u64, epochs: usize) {
    let d = dialogues.to_string();
    let s = seed.to_string();
    let e = epochs.to_string();
    ok(dir, &["synth", "--out", "corpus.json", "--dialogues", &d, "--seed", &s]);
    ok(dir, &["summarize", "--corpus", "corpus.json", "--cache", "summaries.jsonl"]);
    ok(
        dir,
        &[
            "train", "--corpus", "corpus.json", "--cache", "summaries.jsonl", "--vocab", "vocab.json",
            "--checkpoint", "model.cnvs", "--epochs", &e, "--dim", "16", "--layers", "1", "--heads", "2",
            "--max-len", "64", "--lr", "1e-3", "--temperature", "0.05", "--seed", &s, "--out", "train.json",
        ],
    );
}

pub fn model_flags() -> Vec<&'static str> {
    vec!["--vocab", "vocab.json", "--checkpoint", "model.cnvs"]
}

pub fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    out.sort();
    out
}

/// Chat endpoint that answers the first `good` requests and returns HTTP 500
/// afterwards.
pub struct FaultServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
}

impl FaultServer {
    pub fn start(good: usize) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let counter = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut length = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    if let Some((name, value)) = line.split_once(':') {
                        if name.eq_ignore_ascii_case("content-length") {
                            length = value.trim().parse().unwrap_or(0);
                        }
                    }
                }
                let mut body = vec![0; length];
                let _ = reader.read_exact(&mut body);
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, payload) = if n < good {
                    ("200 OK", format!(r#"{{"choices":[{{"message":{{"content":"The user wants item {n}."}}}}]}}"#))
                } else {
                    ("500 Internal Server Error", r#"{"error":"injected"}"#.to_string())
                };
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        Self { url, requests }
    }
}
