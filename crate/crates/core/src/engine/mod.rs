//! Trace replay, race detection, and statistics.

mod verify;

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::dsu::DsuError;
use crate::multibags::MultiBags;
use crate::multibags_plus::MultiBagsPlus;
use crate::reachdag::ReachError;
use crate::shadow::{RaceReport, ShadowTable};
use crate::trace::{validate, Event, EventSequence, FnId, HandleId, Mode, StrandId, ValidationReport};

pub use verify::{answers, verify, Divergence, VerifyOptions, VerifyReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    MultiBags,
    Plus,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algo::MultiBags => "multibags",
            Algo::Plus => "plus",
        })
    }
}

impl Algo {
    /// Validation mode implied by the algorithm.
    pub fn native_mode(self) -> Mode {
        match self {
            Algo::MultiBags => Mode::Structured,
            Algo::Plus => Mode::General,
        }
    }

    pub fn instantiate(self) -> Box<dyn Reachability> {
        match self {
            Algo::MultiBags => Box::new(MultiBags::new()),
            Algo::Plus => Box::new(MultiBagsPlus::new()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChildKind {
    Spawn,
    Create(HandleId),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlgoError {
    #[error("unstructured future use on {0}")]
    UnstructuredFuture(HandleId),
    #[error("single-touch violated on {0}")]
    SingleTouch(HandleId),
    #[error("duplicate handle {0}")]
    DuplicateHandle(HandleId),
    #[error("unknown handle {0}")]
    UnknownHandle(HandleId),
    #[error("return from root")]
    ReturnFromRoot,
    #[error("sync without outstanding spawn")]
    SyncWithoutSpawn,
    #[error("unknown strand {0}")]
    UnknownStrand(StrandId),
    #[error("strand {got} begun out of order, expected {expected}")]
    OutOfOrder { expected: StrandId, got: StrandId },
    #[error(transparent)]
    Dsu(#[from] DsuError),
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl AlgoError {
    /// Errors caused by the trace rather than by a detector bug.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            AlgoError::UnstructuredFuture(_)
                | AlgoError::SingleTouch(_)
                | AlgoError::DuplicateHandle(_)
                | AlgoError::UnknownHandle(_)
                | AlgoError::ReturnFromRoot
                | AlgoError::SyncWithoutSpawn
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlgoCounters {
    pub union_ops: u64,
    pub find_ops: u64,
    pub attached_sets: u64,
    pub both_attached_syncs: u64,
}

/// A reachability structure driven by replay. Strand ids are handed out by
/// the caller in serial order; each callback below starts exactly one new
/// strand, and `precedes` asks about the most recently started one.
pub trait Reachability {
    fn on_root(&mut self, s: StrandId) -> Result<(), AlgoError>;
    /// Entry into a spawned or created child; `first` is its first strand.
    fn on_child_begin(&mut self, kind: ChildKind, func: FnId, first: StrandId) -> Result<(), AlgoError>;
    /// Child returned; `cont` is the parent's continuation strand.
    fn on_return(&mut self, cont: StrandId) -> Result<(), AlgoError>;
    /// Joins the most recent unsynced spawned child; `join` is the sync strand.
    fn on_sync(&mut self, join: StrandId) -> Result<(), AlgoError>;
    fn on_get(&mut self, handle: HandleId, getter: StrandId) -> Result<(), AlgoError>;
    /// Whether executed strand `u` precedes the current strand.
    fn precedes(&mut self, u: StrandId) -> Result<bool, AlgoError>;
    fn counters(&self) -> AlgoCounters;
}

impl<R: Reachability + ?Sized> Reachability for Box<R> {
    fn on_root(&mut self, s: StrandId) -> Result<(), AlgoError> {
        (**self).on_root(s)
    }
    fn on_child_begin(&mut self, kind: ChildKind, func: FnId, first: StrandId) -> Result<(), AlgoError> {
        (**self).on_child_begin(kind, func, first)
    }
    fn on_return(&mut self, cont: StrandId) -> Result<(), AlgoError> {
        (**self).on_return(cont)
    }
    fn on_sync(&mut self, join: StrandId) -> Result<(), AlgoError> {
        (**self).on_sync(join)
    }
    fn on_get(&mut self, handle: HandleId, getter: StrandId) -> Result<(), AlgoError> {
        (**self).on_get(handle, getter)
    }
    fn precedes(&mut self, u: StrandId) -> Result<bool, AlgoError> {
        (**self).precedes(u)
    }
    fn counters(&self) -> AlgoCounters {
        (**self).counters()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid trace: {0}")]
    Invalid(ValidationReport),
    #[error("the multibags algorithm only accepts structured traces")]
    ModeMismatch,
    #[error("line {line}: {source}")]
    Algo { line: usize, source: AlgoError },
    #[error("{0}")]
    Oracle(#[from] crate::oracle::OracleError),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl EngineError {
    pub fn is_input_error(&self) -> bool {
        match self {
            EngineError::Invalid(_) | EngineError::ModeMismatch => true,
            EngineError::Algo { source, .. } => source.is_input_error(),
            EngineError::Oracle(crate::oracle::OracleError::Invalid(_)) => true,
            EngineError::Oracle(crate::oracle::OracleError::TooLarge(_)) => true,
            EngineError::Invariant(_) => false,
        }
    }
}

/// What replay tells its observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    StrandBegin(StrandId),
    Access { addr: u64, write: bool, strand: StrandId },
}

/// Walks `seq` in serial order, driving `algo` and reporting each step.
/// Returns the number of strands.
pub fn replay<R, F>(seq: &EventSequence, algo: &mut R, mut observe: F) -> Result<usize, EngineError>
where
    R: Reachability + ?Sized,
    F: FnMut(&mut R, Step) -> Result<(), EngineError>,
{
    let mut next = 0u32;
    let mut fresh = || {
        let s = StrandId(next);
        next += 1;
        s
    };
    let root = fresh();
    let at = |line: usize| move |source: AlgoError| EngineError::Algo { line, source };
    algo.on_root(root).map_err(at(0))?;
    observe(algo, Step::StrandBegin(root))?;
    let mut cur = root;

    for (i, ev) in seq.events.iter().enumerate() {
        let line = i + 1;
        let started = match *ev {
            Event::Read { addr } => {
                observe(algo, Step::Access { addr, write: false, strand: cur })?;
                continue;
            }
            Event::Write { addr } => {
                observe(algo, Step::Access { addr, write: true, strand: cur })?;
                continue;
            }
            Event::Spawn { func } => {
                let s = fresh();
                algo.on_child_begin(ChildKind::Spawn, func, s).map_err(at(line))?;
                s
            }
            Event::Create { func, handle } => {
                let s = fresh();
                algo.on_child_begin(ChildKind::Create(handle), func, s).map_err(at(line))?;
                s
            }
            Event::Ret => {
                let s = fresh();
                algo.on_return(s).map_err(at(line))?;
                s
            }
            Event::Sync => {
                let s = fresh();
                algo.on_sync(s).map_err(at(line))?;
                s
            }
            Event::Get { handle } => {
                let s = fresh();
                algo.on_get(handle, s).map_err(at(line))?;
                s
            }
        };
        cur = started;
        observe(algo, Step::StrandBegin(cur))?;
    }
    Ok(cur.index() + 1)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Stats {
    pub t1_events: u64,
    /// Memory accesses.
    pub m: u64,
    pub writes: u64,
    /// Spawns plus creates.
    pub n: u64,
    /// Creates plus gets.
    pub k: u64,
    pub creates: u64,
    pub gets: u64,
    pub strands: u64,
    pub queries: u64,
    pub union_ops: u64,
    pub find_ops: u64,
    pub attached_sets: u64,
    pub both_attached_syncs: u64,
    pub elapsed_ms: f64,
}

impl Stats {
    pub fn attached_budget(&self) -> u64 {
        3 * self.creates + 2 * self.gets + 2 * self.both_attached_syncs + 1
    }

    pub fn query_budget(&self) -> u64 {
        2 * self.m + self.writes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport {
    pub algo: Algo,
    pub mode: Mode,
    pub races: Vec<RaceReport>,
    pub stats: Stats,
}

/// Validates `seq` for `mode` and the algorithm's requirements.
pub fn check_input(seq: &EventSequence, algo: Algo, mode: Mode) -> Result<(), EngineError> {
    if algo == Algo::MultiBags && mode != Mode::Structured {
        return Err(EngineError::ModeMismatch);
    }
    // multibags enforces single-touch itself, at the offending GET, next to
    // the creator-precedes-getter check
    let static_mode = if algo == Algo::MultiBags { Mode::General } else { mode };
    let report = validate(seq, static_mode);
    if !report.is_ok() {
        return Err(EngineError::Invalid(report));
    }
    Ok(())
}

pub fn detect(seq: &EventSequence, algo: Algo, mode: Mode) -> Result<DetectReport, EngineError> {
    check_input(seq, algo, mode)?;
    let mut r = algo.instantiate();
    let started = Instant::now();
    let (races, queries) = run_detector(seq, &mut r, |_, _| Ok(()))?;
    let elapsed = started.elapsed();
    let stats = make_stats(seq, &r.counters(), queries, elapsed.as_secs_f64() * 1e3)?;
    log::info!(
        "{algo}: {} events, {} strands, {} races",
        stats.t1_events,
        stats.strands,
        races.len()
    );
    Ok(DetectReport {
        algo,
        mode,
        races,
        stats,
    })
}

/// Replays with shadow memory. `extra` sees every step after the detector
/// has handled it.
pub(crate) fn run_detector<R, F>(
    seq: &EventSequence,
    algo: &mut R,
    mut extra: F,
) -> Result<(Vec<RaceReport>, u64), EngineError>
where
    R: Reachability + ?Sized,
    F: FnMut(&mut R, Step) -> Result<(), EngineError>,
{
    let mut shadow = ShadowTable::new();
    // A report names the running strand as `current` and strands never
    // resume, so duplicates can only come from the same strand.
    let mut seen = HashSet::new();
    let mut seen_for = StrandId(0);
    let mut races = Vec::new();
    let mut keep = |r: RaceReport| {
        if r.current != seen_for {
            seen.clear();
            seen_for = r.current;
        }
        if seen.insert(r) {
            log::debug!("{r}");
            races.push(r);
        }
    };
    replay(seq, algo, |a, step| {
        if let Step::Access { addr, write, strand } = step {
            let q = |u: StrandId| a.precedes(u);
            let wrap = |source| EngineError::Algo { line: 0, source };
            if write {
                for r in shadow.on_write(addr, strand, q).map_err(wrap)? {
                    keep(r);
                }
            } else if let Some(r) = shadow.on_read(addr, strand, q).map_err(wrap)? {
                keep(r);
            }
        }
        extra(a, step)
    })?;
    Ok((races, shadow.queries()))
}

pub(crate) fn make_stats(
    seq: &EventSequence,
    c: &AlgoCounters,
    queries: u64,
    elapsed_ms: f64,
) -> Result<Stats, EngineError> {
    let t = seq.counts();
    let stats = Stats {
        t1_events: t.events as u64,
        m: t.accesses() as u64,
        writes: t.writes as u64,
        n: t.parallelism_sites() as u64,
        k: t.future_ops() as u64,
        creates: t.creates as u64,
        gets: t.gets as u64,
        strands: t.strands as u64,
        queries,
        union_ops: c.union_ops,
        find_ops: c.find_ops,
        attached_sets: c.attached_sets,
        both_attached_syncs: c.both_attached_syncs,
        elapsed_ms,
    };
    let control = t.spawns + t.creates + t.syncs + t.gets;
    if t.accesses() + control + t.rets != t.events {
        return Err(EngineError::Invariant("event counts do not add up".into()));
    }
    if stats.queries > stats.query_budget() {
        return Err(EngineError::Invariant(format!(
            "{} queries exceed 2m + w = {}",
            stats.queries,
            stats.query_budget()
        )));
    }
    Ok(stats)
}
