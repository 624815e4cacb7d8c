//! Access history: last writer and reader list per 4-byte word.
//!
//! Cells live in a two-level table. The top level is keyed by address bits
//! `[63:22]`; each leaf covers bits `[21:2]` and is allocated on first touch.
//! A leaf slot packs `writer + 1` in its low half and `reader list + 1` in
//! its high half, so zero means an untouched word.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::trace::{StrandId, ACCESS_WIDTH};

const LEAF_SHIFT: u32 = 22;
const LEAF_CELLS: usize = 1 << (LEAF_SHIFT - 2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RaceKind {
    WriteRead,
    ReadWrite,
    WriteWrite,
}

impl fmt::Display for RaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RaceKind::WriteRead => "write-read",
            RaceKind::ReadWrite => "read-write",
            RaceKind::WriteWrite => "write-write",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RaceReport {
    /// Address of the first byte of the word.
    pub addr: u64,
    pub kind: RaceKind,
    pub prior: StrandId,
    pub current: StrandId,
}

impl fmt::Display for RaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} race at {:#x}: {} vs {}", self.kind, self.addr, self.prior, self.current)
    }
}

/// Read-only view of one word's history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShadowCell {
    pub last_writer: Option<StrandId>,
    pub readers: Vec<StrandId>,
}

#[derive(Debug, Default)]
pub struct ShadowTable {
    top: HashMap<u64, Box<[u64]>>,
    lists: Vec<Vec<StrandId>>,
    free: Vec<u32>,
    queries: u64,
}

fn split(addr: u64) -> (u64, usize) {
    (addr >> LEAF_SHIFT, ((addr >> 2) as usize) & (LEAF_CELLS - 1))
}

/// Word-aligned address of `addr`.
pub fn word_of(addr: u64) -> u64 {
    addr & !(ACCESS_WIDTH - 1)
}

impl ShadowTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of precedence callbacks made so far.
    pub fn queries(&self) -> u64 {
        self.queries
    }

    /// Leaves allocated so far.
    pub fn leaves(&self) -> usize {
        self.top.len()
    }

    pub fn cell(&self, addr: u64) -> ShadowCell {
        let (hi, lo) = split(addr);
        let Some(leaf) = self.top.get(&hi) else {
            return ShadowCell::default();
        };
        let v = leaf[lo];
        ShadowCell {
            last_writer: writer_of(v),
            readers: match list_of(v) {
                Some(i) => self.lists[i].clone(),
                None => Vec::new(),
            },
        }
    }

    fn slot(&mut self, addr: u64) -> &mut u64 {
        let (hi, lo) = split(addr);
        let leaf = self
            .top
            .entry(hi)
            .or_insert_with(|| vec![0u64; LEAF_CELLS].into_boxed_slice());
        &mut leaf[lo]
    }

    /// Checks a read by `s` against the last writer, then records `s`.
    pub fn on_read<E>(
        &mut self,
        addr: u64,
        s: StrandId,
        mut precedes: impl FnMut(StrandId) -> Result<bool, E>,
    ) -> Result<Option<RaceReport>, E> {
        let word = word_of(addr);
        let v = *self.slot(word);
        let mut race = None;
        if let Some(w) = writer_of(v) {
            self.queries += 1;
            if !precedes(w)? {
                race = Some(RaceReport {
                    addr: word,
                    kind: RaceKind::WriteRead,
                    prior: w,
                    current: s,
                });
            }
        }
        let list = match list_of(v) {
            Some(i) => i,
            None => {
                let i = self.alloc_list();
                let slot = self.slot(word);
                *slot = (*slot & 0xffff_ffff) | (((i as u64) + 1) << 32);
                i
            }
        };
        let readers = &mut self.lists[list];
        if readers.last() != Some(&s) {
            readers.push(s);
        }
        Ok(race)
    }

    /// Checks a write by `s` against every reader and the last writer, then
    /// clears the readers and makes `s` the last writer.
    pub fn on_write<E>(
        &mut self,
        addr: u64,
        s: StrandId,
        mut precedes: impl FnMut(StrandId) -> Result<bool, E>,
    ) -> Result<Vec<RaceReport>, E> {
        let word = word_of(addr);
        let v = *self.slot(word);
        let mut races = Vec::new();
        if let Some(i) = list_of(v) {
            for k in 0..self.lists[i].len() {
                let r = self.lists[i][k];
                self.queries += 1;
                if !precedes(r)? {
                    races.push(RaceReport {
                        addr: word,
                        kind: RaceKind::ReadWrite,
                        prior: r,
                        current: s,
                    });
                }
            }
            self.lists[i].clear();
            self.free.push(i as u32);
        }
        if let Some(w) = writer_of(v) {
            self.queries += 1;
            if !precedes(w)? {
                races.push(RaceReport {
                    addr: word,
                    kind: RaceKind::WriteWrite,
                    prior: w,
                    current: s,
                });
            }
        }
        *self.slot(word) = u64::from(s.0) + 1;
        Ok(races)
    }

    fn alloc_list(&mut self) -> usize {
        match self.free.pop() {
            Some(i) => i as usize,
            None => {
                self.lists.push(Vec::new());
                self.lists.len() - 1
            }
        }
    }
}

fn writer_of(v: u64) -> Option<StrandId> {
    match v & 0xffff_ffff {
        0 => None,
        w => Some(StrandId((w - 1) as u32)),
    }
}

fn list_of(v: u64) -> Option<usize> {
    match v >> 32 {
        0 => None,
        i => Some((i - 1) as usize),
    }
}
