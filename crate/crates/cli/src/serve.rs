//! Line-oriented TCP detection service.
//!
//! One request per line: `seq,r0,...,r{N-1}`. One response per line:
//! `{"seq":...,"detections":[{"x":...,"y":...,"class":...,"score":...}]}`.
//! Malformed requests get a one-line `{"error":...}` response and the
//! connection stays open. Lines longer than 64 KiB are rejected.

use std::io::{BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};

use anyhow::Result;
use scandet::geometry::Scan;
use scandet::pipeline::Detector;
use serde::Serialize;

const MAX_LINE: usize = 64 * 1024;

#[derive(Serialize)]
struct DetectionRecord {
    x: f64,
    y: f64,
    class: &'static str,
    score: f64,
}

#[derive(Serialize)]
struct Response {
    seq: u64,
    detections: Vec<DetectionRecord>,
}

#[derive(Serialize)]
struct ErrorResponse {
    error: String,
}

pub fn serve(detector: Detector, port: u16) -> Result<()> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let shared = Arc::new(Mutex::new(detector));
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let shared = Arc::clone(&shared);
        std::thread::spawn(move || {
            if let Err(e) = handle_client(stream, &shared) {
                eprintln!("connection closed: {e}");
            }
        });
    }
    Ok(())
}

fn handle_client(stream: TcpStream, shared: &Mutex<Detector>) -> Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    loop {
        let line = match read_line_capped(&mut reader, MAX_LINE)? {
            Some(l) => l,
            None => return Ok(()),
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match process_line(&line, shared) {
            Ok(r) => serde_json::to_string(&r)?,
            Err(e) => serde_json::to_string(&ErrorResponse {
                error: e.to_string(),
            })?,
        };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
    }
}

/// Read one `\n`-terminated line, erroring out when it exceeds `cap` bytes.
fn read_line_capped(reader: &mut impl Read, cap: usize) -> Result<Option<String>> {
    let mut buf = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match reader.read(&mut byte)? {
            0 => {
                if buf.is_empty() {
                    return Ok(None);
                }
                break;
            }
            _ => {
                if byte[0] == b'\n' {
                    break;
                }
                buf.push(byte[0]);
                anyhow::ensure!(buf.len() <= cap, "request line exceeds {cap} bytes");
            }
        }
    }
    Ok(Some(String::from_utf8(buf)?))
}

fn process_line(line: &str, shared: &Mutex<Detector>) -> Result<Response> {
    let mut detector = shared.lock().unwrap();
    let expected = detector.sensor.num_beams;
    let mut fields = line.trim().split(',');
    let seq: u64 = fields
        .next()
        .unwrap_or("")
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("bad sequence id: {e}"))?;
    let ranges: Vec<f64> = fields
        .map(|f| f.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| anyhow::anyhow!("bad range value: {e}"))?;
    anyhow::ensure!(
        ranges.len() == expected,
        "expected {expected} ranges, got {}",
        ranges.len()
    );
    let scan = Scan {
        ranges,
        seq_id: seq,
        timestamp: 0.0,
    };
    let detections = detector.detect_scan(&scan)?;
    Ok(Response {
        seq,
        detections: detections
            .into_iter()
            .map(|d| DetectionRecord {
                x: d.position.0,
                y: d.position.1,
                class: d.klass.name(),
                score: d.score,
            })
            .collect(),
    })
}
