//! In-process HTTP stub speaking the `/embed` wire format.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use agriqrs::embed::hashed_embedding;
use serde_json::{json, Value};

#[allow(dead_code)]
#[derive(Clone, Copy)]
pub enum Mode {
    Normal,
    WrongDim,
    DropOne,
    Fail,
}

pub struct Stub {
    pub url: String,
    requests: Arc<AtomicUsize>,
}

fn read_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn respond(stream: &mut TcpStream, status: &str, body: &Value) {
    let body = body.to_string();
    let _ = write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
}

pub fn stub(dim: usize, mode: Mode) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(AtomicUsize::new(0));
    let seen = requests.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            seen.fetch_add(1, Ordering::SeqCst);
            let texts: Vec<String> = serde_json::from_value(req["texts"].clone()).unwrap_or_default();
            let mut vectors: Vec<Vec<f64>> = texts.iter().map(|t| hashed_embedding(t, dim, 7).0).collect();
            match mode {
                Mode::Normal => respond(&mut stream, "200 OK", &json!({"dim": dim, "embeddings": vectors})),
                Mode::WrongDim => respond(&mut stream, "200 OK", &json!({"dim": dim + 1, "embeddings": vectors})),
                Mode::DropOne => {
                    vectors.pop();
                    respond(&mut stream, "200 OK", &json!({"dim": dim, "embeddings": vectors}))
                }
                Mode::Fail => respond(&mut stream, "500 Internal Server Error", &json!({"error": "encoder failure"})),
            }
        }
    });
    Stub { url, requests }
}

impl Stub {
    #[allow(dead_code)]
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}
