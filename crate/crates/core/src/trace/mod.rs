//! Event model for serialized depth-first eager executions.
//!
//! A trace is a flat list of [`Event`]s. The root function is implicit:
//! it is open at the start of the trace and closed by end-of-input. Every
//! `spawn`/`create` opens a child frame whose events follow immediately,
//! up to the matching `ret`.

mod gen;
mod validate;

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gen::{gen_lcs_general, gen_lcs_structured, gen_random, lcs_cell_addr, RandomParams};
pub use validate::{validate, Mode, ValidationReport, Violation, ViolationKind};

/// Function instance identifier, as written in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FnId(pub u64);

/// Future handle identifier, as written in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandleId(pub u64);

/// Strand index in serial execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrandId(pub u32);

impl StrandId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StrandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for HandleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

/// Bytes covered by one read or write.
pub const ACCESS_WIDTH: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "t")]
pub enum Event {
    #[serde(rename = "spawn")]
    Spawn {
        #[serde(rename = "f")]
        func: FnId,
    },
    #[serde(rename = "create")]
    Create {
        #[serde(rename = "f")]
        func: FnId,
        #[serde(rename = "h")]
        handle: HandleId,
    },
    #[serde(rename = "sync")]
    Sync,
    #[serde(rename = "get")]
    Get {
        #[serde(rename = "h")]
        handle: HandleId,
    },
    #[serde(rename = "ret")]
    Ret,
    #[serde(rename = "r")]
    Read {
        #[serde(rename = "a")]
        addr: u64,
    },
    #[serde(rename = "w")]
    Write {
        #[serde(rename = "a")]
        addr: u64,
    },
}

impl Event {
    pub fn is_access(&self) -> bool {
        matches!(self, Event::Read { .. } | Event::Write { .. })
    }

    /// Events that end the current strand.
    pub fn is_parallel_control(&self) -> bool {
        matches!(
            self,
            Event::Spawn { .. } | Event::Create { .. } | Event::Sync | Event::Get { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

/// Aggregate counts over a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TraceCounts {
    pub events: usize,
    pub strands: usize,
    pub spawns: usize,
    pub creates: usize,
    pub syncs: usize,
    pub gets: usize,
    pub rets: usize,
    pub reads: usize,
    pub writes: usize,
}

impl TraceCounts {
    pub fn accesses(&self) -> usize {
        self.reads + self.writes
    }

    /// Places where parallelism is created.
    pub fn parallelism_sites(&self) -> usize {
        self.spawns + self.creates
    }

    pub fn future_ops(&self) -> usize {
        self.creates + self.gets
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventSequence {
    pub events: Vec<Event>,
}

impl EventSequence {
    pub fn new(events: Vec<Event>) -> Self {
        EventSequence { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn counts(&self) -> TraceCounts {
        let mut c = TraceCounts {
            events: self.events.len(),
            ..TraceCounts::default()
        };
        for e in &self.events {
            match e {
                Event::Spawn { .. } => c.spawns += 1,
                Event::Create { .. } => c.creates += 1,
                Event::Sync => c.syncs += 1,
                Event::Get { .. } => c.gets += 1,
                Event::Ret => c.rets += 1,
                Event::Read { .. } => c.reads += 1,
                Event::Write { .. } => c.writes += 1,
            }
        }
        // root strand, then per child: its first strand plus the parent's
        // continuation; syncs and gets each start one strand
        c.strands = 1 + 2 * (c.spawns + c.creates) + c.syncs + c.gets;
        c
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ParseError> {
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            let ev: Event = serde_json::from_str(text).map_err(|e| ParseError::Syntax {
                line: i + 1,
                message: e.to_string(),
            })?;
            events.push(ev);
        }
        Ok(EventSequence { events })
    }

    pub fn parse_str(text: &str) -> Result<Self, ParseError> {
        Self::parse(text.as_bytes())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}
