//! Line-oriented event trace: `tick,event,node,rsm,position,detail`.
//!
//! Every line feeds a running SHA-256 so runs can be compared by hash even
//! when the lines themselves are not kept.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

pub const HEADER: &str = "tick,event,node,rsm,position,detail";

#[derive(Clone, Debug)]
pub struct Trace {
    hasher: Sha256,
    lines: Option<Vec<String>>,
    count: u64,
}

impl Trace {
    pub fn new(keep_lines: bool) -> Self {
        Self {
            hasher: Sha256::new(),
            lines: keep_lines.then(Vec::new),
            count: 0,
        }
    }

    pub fn record(&mut self, tick: u64, event: &str, node: u32, rsm: u8, position: Option<u64>, detail: &str) {
        let mut line = String::with_capacity(32 + detail.len());
        let _ = write!(line, "{tick},{event},{node},{rsm},");
        if let Some(p) = position {
            let _ = write!(line, "{p}");
        }
        line.push(',');
        line.push_str(detail);
        self.hasher.update(line.as_bytes());
        self.hasher.update(b"\n");
        self.count += 1;
        if let Some(lines) = &mut self.lines {
            lines.push(line);
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Hex digest of every line recorded so far.
    pub fn hash(&self) -> String {
        self.hasher.clone().finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn lines(&self) -> Option<&[String]> {
        self.lines.as_deref()
    }

    pub fn into_lines(self) -> Option<Vec<String>> {
        self.lines
    }

    /// Header plus lines, newline terminated.
    pub fn render(lines: &[String]) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}
