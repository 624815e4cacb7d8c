//! Explicit strand dag with brute-force reachability, used as ground truth.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::shadow::{word_of, RaceKind};
use crate::trace::{validate, Event, EventSequence, FnId, HandleId, Mode, StrandId, ValidationReport};

/// Largest dag [`Oracle::build`] accepts.
pub const MAX_STRANDS: usize = 5000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid trace: {0}")]
    Invalid(ValidationReport),
    #[error("trace has {0} strands; the oracle handles at most {MAX_STRANDS}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NodeKinds {
    pub spawn: bool,
    pub creator: bool,
    pub sync: bool,
    pub getter: bool,
}

impl NodeKinds {
    pub fn is_regular(&self) -> bool {
        !(self.spawn || self.creator || self.sync || self.getter)
    }

    fn label(&self) -> String {
        let mut v = Vec::new();
        for (on, name) in [
            (self.spawn, "spawn"),
            (self.creator, "creator"),
            (self.sync, "sync"),
            (self.getter, "getter"),
        ] {
            if on {
                v.push(name);
            }
        }
        if v.is_empty() {
            "regular".into()
        } else {
            v.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Continue,
    Spawn,
    Create,
    Join,
    Get,
}

impl EdgeKind {
    pub fn is_future(self) -> bool {
        matches!(self, EdgeKind::Create | EdgeKind::Get)
    }

    fn name(self) -> &'static str {
        match self {
            EdgeKind::Continue => "continue",
            EdgeKind::Spawn => "spawn",
            EdgeKind::Create => "create",
            EdgeKind::Join => "join",
            EdgeKind::Get => "get",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: StrandId,
    pub dst: StrandId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub addr: u64,
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub kinds: NodeKinds,
    /// Function instance the strand belongs to; `None` for the root.
    pub func: Option<FnId>,
    pub accesses: Vec<Access>,
}

/// Race as an unordered strand pair; `prior` is the earlier strand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OracleRace {
    pub addr: u64,
    pub kind: RaceKind,
    pub prior: StrandId,
    pub current: StrandId,
}

#[derive(Debug, Clone)]
pub struct Oracle {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    creators: HashMap<HandleId, StrandId>,
    getters: HashMap<HandleId, Vec<StrandId>>,
    /// `reach[u]` has bit `v` set iff `u` reaches `v` by a nonempty path.
    reach: Vec<Vec<u64>>,
}

struct BFrame {
    func: Option<FnId>,
    handle: Option<HandleId>,
    /// Last strands of returned, unsynced spawned children.
    children: Vec<StrandId>,
}

impl Oracle {
    /// Builds the dag; checks validity in general mode.
    pub fn build(seq: &EventSequence) -> Result<Self, OracleError> {
        let report = validate(seq, Mode::General);
        if !report.is_ok() {
            return Err(OracleError::Invalid(report));
        }
        let strands = seq.counts().strands;
        if strands > MAX_STRANDS {
            return Err(OracleError::TooLarge(strands));
        }
        let mut o = Oracle {
            nodes: Vec::with_capacity(strands),
            edges: Vec::new(),
            creators: HashMap::new(),
            getters: HashMap::new(),
            reach: Vec::new(),
        };
        let mut sinks: HashMap<HandleId, StrandId> = HashMap::new();
        let mut stack = vec![BFrame {
            func: None,
            handle: None,
            children: Vec::new(),
        }];
        // fork strand of each open child frame
        let mut forks: Vec<StrandId> = Vec::new();
        let mut cur = o.push(None);

        for ev in &seq.events {
            match *ev {
                Event::Read { addr } | Event::Write { addr } => {
                    o.nodes[cur.index()].accesses.push(Access {
                        addr: word_of(addr),
                        write: matches!(ev, Event::Write { .. }),
                    });
                }
                Event::Spawn { func } | Event::Create { func, .. } => {
                    let handle = match *ev {
                        Event::Create { handle, .. } => Some(handle),
                        _ => None,
                    };
                    let kinds = &mut o.nodes[cur.index()].kinds;
                    if let Some(h) = handle {
                        kinds.creator = true;
                        o.creators.insert(h, cur);
                    } else {
                        kinds.spawn = true;
                    }
                    let first = o.push(Some(func));
                    o.edge(
                        cur,
                        first,
                        if handle.is_some() { EdgeKind::Create } else { EdgeKind::Spawn },
                    );
                    forks.push(cur);
                    stack.push(BFrame {
                        func: Some(func),
                        handle,
                        children: Vec::new(),
                    });
                    cur = first;
                }
                Event::Ret => {
                    let frame = stack.pop().expect("validated");
                    let fork = forks.pop().expect("validated");
                    let parent = stack.last_mut().expect("validated");
                    match frame.handle {
                        Some(h) => {
                            sinks.insert(h, cur);
                        }
                        None => parent.children.push(cur),
                    }
                    let func = parent.func;
                    let cont = o.push(func);
                    o.edge(fork, cont, EdgeKind::Continue);
                    cur = cont;
                }
                Event::Sync => {
                    let top = stack.last_mut().expect("validated");
                    let child_sink = top.children.pop().expect("validated");
                    let func = top.func;
                    let j = o.push(func);
                    o.nodes[j.index()].kinds.sync = true;
                    o.edge(cur, j, EdgeKind::Continue);
                    o.edge(child_sink, j, EdgeKind::Join);
                    cur = j;
                }
                Event::Get { handle } => {
                    let sink = sinks[&handle];
                    let func = stack.last().expect("validated").func;
                    let g = o.push(func);
                    o.nodes[g.index()].kinds.getter = true;
                    o.edge(cur, g, EdgeKind::Continue);
                    o.edge(sink, g, EdgeKind::Get);
                    o.getters.entry(handle).or_default().push(g);
                    cur = g;
                }
            }
        }
        debug_assert_eq!(o.nodes.len(), strands);
        o.close();
        Ok(o)
    }

    fn push(&mut self, func: Option<FnId>) -> StrandId {
        self.nodes.push(Node {
            kinds: NodeKinds::default(),
            func,
            accesses: Vec::new(),
        });
        StrandId(self.nodes.len() as u32 - 1)
    }

    fn edge(&mut self, src: StrandId, dst: StrandId, kind: EdgeKind) {
        self.edges.push(Edge { src, dst, kind });
    }

    fn close(&mut self) {
        let n = self.nodes.len();
        let words = n.div_ceil(64);
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            succ[e.src.index()].push(e.dst.index());
        }
        let mut reach = vec![vec![0u64; words]; n];
        for u in (0..n).rev() {
            let mut row = vec![0u64; words];
            for &v in &succ[u] {
                debug_assert!(v > u, "edges follow serial order");
                row[v / 64] |= 1 << (v % 64);
                for (r, x) in row.iter_mut().zip(&reach[v]) {
                    *r |= *x;
                }
            }
            reach[u] = row;
        }
        self.reach = reach;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn creator(&self, h: HandleId) -> Option<StrandId> {
        self.creators.get(&h).copied()
    }

    pub fn getters(&self, h: HandleId) -> &[StrandId] {
        self.getters.get(&h).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Strict reachability.
    pub fn reaches(&self, u: StrandId, v: StrandId) -> bool {
        let v = v.index();
        self.reach[u.index()][v / 64] & (1 << (v % 64)) != 0
    }

    pub fn parallel(&self, u: StrandId, v: StrandId) -> bool {
        u != v && !self.reaches(u, v) && !self.reaches(v, u)
    }

    /// All conflicting logically parallel pairs.
    pub fn naive_races(&self) -> BTreeSet<OracleRace> {
        let mut by_addr: HashMap<u64, Vec<(StrandId, bool)>> = HashMap::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for a in &n.accesses {
                by_addr.entry(a.addr).or_default().push((StrandId(i as u32), a.write));
            }
        }
        let mut out = BTreeSet::new();
        for (addr, list) in by_addr {
            for (x, &(a, wa)) in list.iter().enumerate() {
                for &(b, wb) in &list[x + 1..] {
                    if !(wa || wb) || a == b || !self.parallel(a, b) {
                        continue;
                    }
                    let kind = match (wa, wb) {
                        (true, true) => RaceKind::WriteWrite,
                        (true, false) => RaceKind::WriteRead,
                        _ => RaceKind::ReadWrite,
                    };
                    out.insert(OracleRace {
                        addr,
                        kind,
                        prior: a,
                        current: b,
                    });
                }
            }
        }
        out
    }

    /// Heaviest path, with `weight(u)` the cost of strand `u`.
    pub fn longest_path(&self, weight: impl Fn(StrandId, &Node) -> u64) -> u64 {
        let n = self.nodes.len();
        let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
        for e in &self.edges {
            pred[e.dst.index()].push(e.src.index());
        }
        let mut best = vec![0u64; n];
        for v in 0..n {
            let incoming = pred[v].iter().map(|&u| best[u]).max().unwrap_or(0);
            best[v] = incoming + weight(StrandId(v as u32), &self.nodes[v]);
        }
        best.into_iter().max().unwrap_or(0)
    }

    /// GraphViz rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph G {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let _ = writeln!(s, "  s{i} [label=\"s{i}\\n{}\"];", n.kinds.label());
        }
        for e in &self.edges {
            let style = if e.kind.is_future() { ",style=dashed" } else { "" };
            let _ = writeln!(
                s,
                "  s{} -> s{} [label=\"{}\"{style}];",
                e.src.0,
                e.dst.0,
                e.kind.name()
            );
        }
        s.push_str("}\n");
        s
    }
}
