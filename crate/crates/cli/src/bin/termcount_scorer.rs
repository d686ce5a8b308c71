//! Reference external scorer speaking the line protocol. Scores are query
//! term counts, the same function as the in-process `termcount` scorer.
//!
//! Fault injection flags make it misbehave on purpose for protocol tests.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::Parser;
use serde::Deserialize;
use serde_json::json;
use xrank_core::scoring::TermCountScorer;

#[derive(Parser, Debug, Clone)]
#[command(
    version,
    about = "Term-count scorer over the xrank line protocol (stdio or TCP)"
)]
struct Args {
    /// Listen on this address instead of stdio; port 0 picks a free port.
    /// The bound address is printed on the first line of stdout.
    #[arg(long)]
    listen: Option<String>,
    /// Sleep this long before every scoring response.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
    /// Only start delaying after this many scoring requests were answered.
    #[arg(long, default_value_t = 0)]
    delay_after: u64,
    /// Answer the handshake with garbage.
    #[arg(long)]
    bad_handshake: bool,
    /// After this many scoring requests, answer with a malformed line.
    #[arg(long)]
    malformed_after: Option<u64>,
    /// After this many scoring requests, answer with a protocol error object.
    #[arg(long)]
    fail_after: Option<u64>,
}

#[derive(Deserialize)]
struct Request {
    id: u64,
    query: String,
    texts: Vec<String>,
}

fn serve<R: BufRead, W: Write>(args: &Args, reader: R, mut writer: W) -> Result<()> {
    let mut answered = 0u64;
    for line in reader.lines() {
        let line = line.context("reading request")?;
        if line.trim().is_empty() {
            continue;
        }
        let req: Request = serde_json::from_str(&line).context("parsing request")?;
        let reply = if req.id == 0 && req.texts.is_empty() {
            if args.bad_handshake {
                "this is not json".to_string()
            } else {
                json!({"id": 0, "scores": []}).to_string()
            }
        } else {
            if args.delay_ms > 0 && answered >= args.delay_after {
                thread::sleep(Duration::from_millis(args.delay_ms));
            }
            let reply = if args.malformed_after.is_some_and(|n| answered >= n) {
                "{\"id\": oops".to_string()
            } else if args.fail_after.is_some_and(|n| answered >= n) {
                json!({"id": req.id, "error": "injected failure"}).to_string()
            } else {
                let scores: Vec<f64> = req
                    .texts
                    .iter()
                    .map(|t| TermCountScorer::count(&req.query, t))
                    .collect();
                json!({"id": req.id, "scores": scores}).to_string()
            };
            answered += 1;
            reply
        };
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

fn handle(args: Args, stream: TcpStream) {
    let reader = match stream.try_clone() {
        Ok(s) => BufReader::new(s),
        Err(e) => {
            eprintln!("termcount-scorer: {e}");
            return;
        }
    };
    if let Err(e) = serve(&args, reader, stream) {
        eprintln!("termcount-scorer: connection closed: {e:#}");
    }
}

fn main() -> Result<()> {
    let args = Args::parse();
    match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            println!("{}", listener.local_addr()?);
            std::io::stdout().flush()?;
            for stream in listener.incoming() {
                let stream = stream?;
                let args = args.clone();
                thread::spawn(move || handle(args, stream));
            }
            Ok(())
        }
        None => {
            let stdin = std::io::stdin();
            serve(&args, stdin.lock(), std::io::stdout().lock())
        }
    }
}
