#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sqlfix_core::pipeline::{read_records, RunRecord};
use sqlfix_core::testing::Fixture;

pub struct Workspace {
    pub fixture: Fixture,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new() -> Self {
        let fixture = Fixture::create();
        let out = fixture.root.join("out");
        Self { fixture, out }
    }

    /// Data paths and scripted backends, shared by every command.
    pub fn base_args(&self) -> Vec<String> {
        let f = &self.fixture;
        [
            ("--questions", &f.questions),
            ("--train-questions", &f.train_questions),
            ("--tables", &f.tables),
            ("--db-root", &f.db_root),
            ("--out", &self.out),
            ("--scripted-llm", &f.llm_rules),
            ("--scripted-sqltool", &f.sqltool_rules),
        ]
        .iter()
        .flat_map(|(k, v)| [k.to_string(), v.display().to_string()])
        .collect()
    }

    pub fn sqlfix(&self, command: &str, extra: &[&str]) -> Output {
        let mut args = vec![command.to_string()];
        args.extend(self.base_args());
        args.extend(extra.iter().map(|s| s.to_string()));
        sqlfix(&args)
    }

    pub fn records(&self) -> Vec<RunRecord> {
        read_records(&self.out.join("run.jsonl")).unwrap()
    }

    pub fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.out.join(name)).unwrap()
    }
}

pub fn sqlfix<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlfix"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn without_wall_time(mut records: Vec<RunRecord>) -> Vec<RunRecord> {
    for r in &mut records {
        r.wall_time = 0.0;
    }
    records
}

/// Answers every HTTP request with `status` and `body`, forever.
pub fn serve_http(status: &'static str, body: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
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
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body_in = vec![0u8; length];
            let _ = reader.read_exact(&mut body_in);
            let _ = write!(
                stream,
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}/v1")
}

/// A local URL nothing listens on.
pub fn closed_port_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}/v1")
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("sqlfix.toml");
    std::fs::write(&path, text).unwrap();
    path
}
