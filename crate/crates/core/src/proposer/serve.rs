//! Proposer side of MP1: hello, then one reply per request line until `bye`
//! or end of input.

use std::io::{self, BufRead, Write};
use std::sync::mpsc;
use std::time::Duration;

use super::mock::MaskProposer;
use super::rle;
use super::wire::{Hello, Inbound, ProposalRequest, Reply, WireError, WireResponse};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ServeStats {
    pub responses: u64,
    pub errors: u64,
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ServeOptions {
    /// Answer each batch of already-queued requests in reverse order, to
    /// exercise host-side reordering.
    pub reverse_batches: bool,
}

enum Step {
    Reply(Reply),
    Bye,
}

fn handle_line(proposer: &mut dyn MaskProposer, line: &str) -> Option<Step> {
    if line.trim().is_empty() {
        return None;
    }
    let msg = match serde_json::from_str::<Inbound>(line) {
        Ok(m) => m,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                .unwrap_or(0);
            return Some(Step::Reply(Reply::Error(WireError {
                id,
                error: format!("malformed request: {e}"),
            })));
        }
    };
    let req = match msg {
        Inbound::Command(c) if c.cmd == "bye" => return Some(Step::Bye),
        Inbound::Command(c) => {
            return Some(Step::Reply(Reply::Error(WireError {
                id: 0,
                error: format!("unknown command {:?}", c.cmd),
            })))
        }
        Inbound::Request(r) => r,
    };
    let id = req.id;
    let result = ProposalRequest::from_wire(&req).and_then(|decoded| proposer.propose(&decoded));
    Some(Step::Reply(match result {
        Ok((mask, conf)) if (mask.height(), mask.width()) == (req.h as usize, req.w as usize) => {
            Reply::Response(WireResponse {
                id,
                rle: rle::encode(&mask),
                conf,
            })
        }
        Ok(_) => Reply::Error(WireError {
            id,
            error: "proposer produced a mask of the wrong size".into(),
        }),
        Err(error) => Reply::Error(WireError { id, error }),
    }))
}

fn write_reply(out: &mut impl Write, reply: &Reply, stats: &mut ServeStats) -> io::Result<()> {
    match reply {
        Reply::Response(_) => stats.responses += 1,
        Reply::Error(_) => stats.errors += 1,
    }
    serde_json::to_writer(&mut *out, reply)?;
    out.write_all(b"\n")?;
    out.flush()
}

pub fn write_hello(out: &mut impl Write, name: &str) -> io::Result<()> {
    serde_json::to_writer(&mut *out, &Hello::new(name))?;
    out.write_all(b"\n")?;
    out.flush()
}

/// Runs a proposer over line-delimited input until `bye` or EOF.
pub fn serve(
    proposer: &mut dyn MaskProposer,
    input: impl BufRead + Send + 'static,
    mut output: impl Write,
    opts: ServeOptions,
) -> io::Result<ServeStats> {
    let mut stats = ServeStats::default();
    write_hello(&mut output, &proposer.name())?;
    if !opts.reverse_batches {
        for line in input.lines() {
            match handle_line(proposer, &line?) {
                Some(Step::Reply(r)) => write_reply(&mut output, &r, &mut stats)?,
                Some(Step::Bye) => break,
                None => {}
            }
        }
        return Ok(stats);
    }

    let (tx, rx) = mpsc::channel::<io::Result<String>>();
    std::thread::spawn(move || {
        for line in input.lines() {
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    'outer: while let Ok(first) = rx.recv() {
        let mut batch = vec![first?];
        // let the host's pipelined requests accumulate
        std::thread::sleep(Duration::from_millis(2));
        while let Ok(more) = rx.try_recv() {
            batch.push(more?);
        }
        let mut replies = Vec::new();
        let mut bye = false;
        for line in &batch {
            match handle_line(proposer, line) {
                Some(Step::Reply(r)) => replies.push(r),
                Some(Step::Bye) => {
                    bye = true;
                    break;
                }
                None => {}
            }
        }
        for r in replies.iter().rev() {
            write_reply(&mut output, r, &mut stats)?;
        }
        if bye {
            break 'outer;
        }
    }
    Ok(stats)
}
