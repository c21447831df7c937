//! Helpers shared by the integration tests: a scripted chat endpoint on a
//! local socket and a copy of the bundled fixture.

#![allow(dead_code)]

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic")
}

/// Copies the bundled fixture into a fresh temp dir.
pub fn copy_fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_tree(&fixture_dir(), dir.path());
    dir
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// A deterministic chat-completion server. The caption is the first clause
/// of the article, wrapped in a forbidden preamble and quotes. The first
/// request for each distinct body gets a 503 so retries are exercised.
pub struct StubEndpoint {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<serde_json::Value>>>,
}

pub fn start_stub() -> StubEndpoint {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::new(Mutex::new(HashSet::new()));
    let log = Arc::clone(&requests);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (log, seen) = (Arc::clone(&log), Arc::clone(&seen));
            thread::spawn(move || handle(stream, &log, &seen));
        }
    });
    StubEndpoint { base_url, requests }
}

fn handle(stream: TcpStream, log: &Mutex<Vec<serde_json::Value>>, seen: &Mutex<HashSet<Vec<u8>>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();

    let (status, reply) = if !request_line.starts_with("POST ") || !request_line.contains("/v1/chat/completions") {
        ("404 Not Found", "{}".to_string())
    } else if seen.lock().unwrap().insert(body.clone()) {
        ("503 Service Unavailable", "{\"error\":\"warming up\"}".to_string())
    } else {
        let value: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let text = value["messages"][0]["content"]
            .as_array()
            .unwrap()
            .iter()
            .find(|p| p["type"] == "text")
            .and_then(|p| p["text"].as_str())
            .unwrap()
            .to_string();
        log.lock().unwrap().push(value);
        let article = text.split("ARTICLE:\n").nth(1).unwrap_or("");
        let clause = article.split(',').next().unwrap_or("").trim();
        let content = format!("Here is the caption:\n\"{clause}.\"");
        let reply = serde_json::json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
        });
        ("200 OK", reply.to_string())
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.flush();
}

/// Runs the CLI in-process; returns (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = zsecap::cli::run(std::iter::once("zsecap").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}
