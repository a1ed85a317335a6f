//! Backend contract over line-delimited JSON on TCP.
//!
//! Each request and each response is one JSON object on one line. A generate
//! request is a [`GenerationRequest`]; the server answers with a
//! [`GenerationResponse`]. A grade request `{"instance_id": 3, "grade": [..]}`
//! is answered with a [`Grade`]. Failures come back as `{"error": "..."}` and
//! leave the connection open.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenerationRequest, GenerationResponse, Grade, Grader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireRequest {
    Grade { instance_id: u64, grade: Vec<String> },
    Generate(GenerationRequest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Error { error: String },
    Generated(GenerationResponse),
    Graded(Grade),
}

fn respond<B: Backend + Grader>(backend: &mut B, line: &str) -> WireResponse {
    let request: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return WireResponse::Error {
                error: format!("malformed request: {e}"),
            }
        }
    };
    let result = match request {
        WireRequest::Generate(req) => backend.generate(&req).map(WireResponse::Generated),
        WireRequest::Grade { instance_id, grade } => {
            backend.grade(instance_id, &grade).map(WireResponse::Graded)
        }
    };
    result.unwrap_or_else(|e| WireResponse::Error {
        error: e.to_string(),
    })
}

fn handle_connection<B: Backend + Grader>(mut backend: B, stream: TcpStream) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = respond(&mut backend, &line);
        let mut out = serde_json::to_string(&response).map_err(std::io::Error::other)?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts connections forever, one thread and one fresh backend per
/// connection.
pub fn serve<B, F>(listener: TcpListener, make_backend: F) -> Result<()>
where
    B: Backend + Grader + 'static,
    F: Fn() -> Result<B> + Send + Sync + 'static,
{
    let make_backend = Arc::new(make_backend);
    for stream in listener.incoming() {
        let stream = stream.map_err(|e| Error::Backend(format!("accept failed: {e}")))?;
        let make_backend = Arc::clone(&make_backend);
        thread::spawn(move || {
            let mut stream = stream;
            match make_backend() {
                Ok(backend) => {
                    let _ = handle_connection(backend, stream);
                }
                Err(e) => {
                    let msg = serde_json::to_string(&WireResponse::Error {
                        error: e.to_string(),
                    })
                    .unwrap_or_default();
                    let _ = writeln!(stream, "{msg}");
                }
            }
        });
    }
    Ok(())
}

/// Client side: a [`Backend`] and [`Grader`] that forwards to a server.
pub struct WireBackend {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    peer: String,
}

impl WireBackend {
    pub fn connect(addr: impl ToSocketAddrs + std::fmt::Display) -> Result<Self> {
        let peer = addr.to_string();
        let stream =
            TcpStream::connect(&addr).map_err(|e| Error::Backend(format!("connect to {peer}: {e}")))?;
        let writer = stream
            .try_clone()
            .map_err(|e| Error::Backend(format!("{peer}: {e}")))?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            peer,
        })
    }

    fn call(&mut self, request: &WireRequest) -> Result<WireResponse> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        let io = |e: std::io::Error| Error::Backend(format!("{}: {e}", self.peer));
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.flush().map_err(io)?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(io)?;
        if n == 0 {
            return Err(Error::Backend(format!("{} closed the connection", self.peer)));
        }
        match serde_json::from_str(&reply)? {
            WireResponse::Error { error } => Err(Error::Backend(error)),
            ok => Ok(ok),
        }
    }
}

impl Backend for WireBackend {
    fn generate(&mut self, request: &GenerationRequest) -> Result<GenerationResponse> {
        match self.call(&WireRequest::Generate(request.clone()))? {
            WireResponse::Generated(r) => Ok(r),
            other => Err(Error::Backend(format!("unexpected reply to generate: {other:?}"))),
        }
    }
}

impl Grader for WireBackend {
    fn grade(&mut self, instance_id: u64, answers: &[String]) -> Result<Grade> {
        let request = WireRequest::Grade {
            instance_id,
            grade: answers.to_vec(),
        };
        match self.call(&request)? {
            WireResponse::Graded(g) => Ok(g),
            other => Err(Error::Backend(format!("unexpected reply to grade: {other:?}"))),
        }
    }
}
