#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use bazaar_server::config::Config;
use bazaar_server::{build_agent, serve_on};
use serde_json::{json, Value};
use tempfile::TempDir;

pub const SELLER: &str = "demo-seller";
pub const RENEW: &str = "renew my quest 2";
pub const BULK: &str = "reply to all unread messages on my oak table";

pub fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

pub fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Demo config and data copied into a scratch directory.
pub fn demo_copy() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&demo_dir(), dir.path());
    dir
}

pub fn client() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

pub struct TestServer {
    pub base: String,
    pub dir: TempDir,
    http: ureq::Agent,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
}

impl TestServer {
    pub fn start() -> TestServer {
        TestServer::start_with(|_| {})
    }

    /// Serves the demo on an ephemeral port; `tweak` edits the loaded config.
    pub fn start_with(tweak: impl FnOnce(&mut Config)) -> TestServer {
        let dir = demo_copy();
        let mut config = Config::load(&dir.path().join("config.toml")).unwrap();
        tweak(&mut config);
        let agent = build_agent(&config).unwrap();
        let (addr_tx, addr_rx) = mpsc::channel::<SocketAddr>();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let _ = serve_on(listener, agent, &config, async {
                    let _ = stopped.await;
                })
                .await;
            });
        });
        let addr = addr_rx.recv_timeout(Duration::from_secs(10)).expect("server bound");
        TestServer {
            base: format!("http://{addr}"),
            dir,
            http: client(),
            stop: Some(stop),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut resp = self.http.post(self.url(path)).send_json(&body).unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let mut resp = self.http.get(self.url(path)).call().unwrap();
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn create_session(&self, user: &str) -> String {
        let (status, body) = self.post("/v1/sessions", json!({ "user_id": user }));
        assert_eq!(status, 201, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    pub fn say(&self, session: &str, text: &str) -> (u16, Value) {
        self.post(&format!("/v1/sessions/{session}/messages"), json!({ "text": text }))
    }

    pub fn decide(&self, session: &str, decision: &str) -> (u16, Value) {
        self.post(&format!("/v1/sessions/{session}/decision"), json!({ "decision": decision }))
    }

    /// Replays the session log from seq 1 until an event of kind `until`.
    pub fn replay_until(&self, session: &str, until: &str) -> Vec<SseEvent> {
        let mut stream = SseStream::open(&self.base, session, Resume::FromSeq(1)).unwrap();
        let mut out = Vec::new();
        loop {
            let e = stream.next_event().unwrap();
            let done = e.kind == until;
            out.push(e);
            if done {
                return out;
            }
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseEvent {
    pub seq: u64,
    pub kind: String,
    pub data: Value,
}

pub enum Resume {
    Next,
    FromSeq(u64),
    LastEventId(u64),
}

pub struct SseStream {
    reader: BufReader<Box<dyn Read + Send>>,
}

impl SseStream {
    pub fn open(base: &str, session: &str, resume: Resume) -> Result<SseStream, String> {
        let mut url = format!("{base}/v1/sessions/{session}/events");
        let mut req = client().get(&url);
        match resume {
            Resume::Next => {}
            Resume::FromSeq(n) => {
                url = format!("{url}?from_seq={n}");
                req = client().get(&url);
            }
            Resume::LastEventId(n) => req = req.header("Last-Event-ID", n.to_string()),
        }
        let resp = req.call().map_err(|e| e.to_string())?;
        if resp.status() != 200 {
            return Err(format!("stream open returned {}", resp.status()));
        }
        let reader: Box<dyn Read + Send> = Box::new(resp.into_body().into_reader());
        Ok(SseStream {
            reader: BufReader::new(reader),
        })
    }

    pub fn next_event(&mut self) -> Result<SseEvent, String> {
        let (mut seq, mut kind, mut data) = (None, String::new(), String::new());
        loop {
            let mut line = String::new();
            let n = self.reader.read_line(&mut line).map_err(|e| e.to_string())?;
            if n == 0 {
                return Err("stream closed".into());
            }
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                if let Some(seq) = seq {
                    let data = serde_json::from_str(&data).map_err(|e| e.to_string())?;
                    return Ok(SseEvent { seq, kind, data });
                }
                continue;
            }
            if line.starts_with(':') {
                continue;
            }
            let (field, value) = line.split_once(':').unwrap_or((line, ""));
            let value = value.strip_prefix(' ').unwrap_or(value);
            match field {
                "id" => seq = value.parse().ok(),
                "event" => kind = value.to_string(),
                "data" => {
                    if !data.is_empty() {
                        data.push('\n');
                    }
                    data.push_str(value);
                }
                _ => {}
            }
        }
    }
}

/// One kill-and-reconnect run over the three-step bulk reply task. The
/// subscriber drops its connection after a trial-dependent number of
/// events and resumes from the last seq it saw.
pub fn resume_trial(trial: usize) -> Result<String, String> {
    let server = TestServer::start();
    let session = server.create_session(SELLER);
    let kill_after = 1 + trial % 7;
    let by_header = trial % 2 == 1;

    let base = server.base.clone();
    let sid = session.clone();
    let (ready_tx, ready_rx) = mpsc::channel();
    let subscriber = thread::spawn(move || -> Result<Vec<u64>, String> {
        let mut seen = Vec::new();
        let mut stream = SseStream::open(&base, &sid, Resume::Next)?;
        ready_tx.send(()).unwrap();
        while seen.len() < kill_after {
            seen.push(stream.next_event()?.seq);
        }
        drop(stream);
        thread::sleep(Duration::from_millis(15 * (trial % 3) as u64));
        let last = *seen.last().unwrap();
        let mut stream = if by_header {
            SseStream::open(&base, &sid, Resume::LastEventId(last))?
        } else {
            SseStream::open(&base, &sid, Resume::FromSeq(last + 1))?
        };
        loop {
            let e = stream.next_event()?;
            seen.push(e.seq);
            if e.kind == "final_answer" {
                return Ok(seen);
            }
        }
    });
    ready_rx.recv_timeout(Duration::from_secs(10)).map_err(|e| e.to_string())?;

    let (status, body) = server.say(&session, BULK);
    if status != 200 || body["state"] != "awaiting_confirmation" {
        return Err(format!("message: {status} {body}"));
    }
    let (status, body) = server.decide(&session, "confirm");
    if status != 200 {
        return Err(format!("confirm: {status} {body}"));
    }
    let seen = subscriber.join().map_err(|_| "subscriber panicked".to_string())??;

    let full = server.replay_until(&session, "final_answer");
    let expected: Vec<u64> = (1..=full.len() as u64).collect();
    let full_seqs: Vec<u64> = full.iter().map(|e| e.seq).collect();
    if full_seqs != expected {
        return Err(format!("server log is not contiguous: {full_seqs:?}"));
    }
    let steps = full.iter().filter(|e| e.kind == "thought").count();
    if steps != 3 {
        return Err(format!("expected a 3-step task, saw {steps} thoughts"));
    }
    // the subscriber attached after session_started, so it starts at seq 2
    if seen != expected[1..] {
        return Err(format!("subscriber saw {seen:?}, log has {full_seqs:?}"));
    }
    Ok(format!("{} events, reconnect after {kill_after}", seen.len()))
}
