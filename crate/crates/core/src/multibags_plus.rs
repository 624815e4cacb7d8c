//! Reachability for general futures.
//!
//! Three structures cooperate:
//!
//! * `D_SP`, S/P bags as in [`crate::multibags`], except that a GET leaves
//!   it untouched. It answers queries between strands of one SP dag.
//! * `D_NSP`, a second forest whose sets are either *attached* (nodes of
//!   `R`) or *unattached*. An unattached set is a completed or running SP
//!   subdag with no future edges touching it; it is represented in `R` by
//!   its attached predecessor and, once joined, its attached successor.
//! * `R`, a [`ReachDag`] over attached sets carrying the non-SP edges.

use std::collections::HashMap;

use crate::dsu::{AttachField, BagLabel, ElemId, Forest, SetId, SetRecord};
use crate::engine::{AlgoCounters, AlgoError, ChildKind, Reachability};
use crate::reachdag::{RNodeId, ReachDag};
use crate::trace::{FnId, HandleId, StrandId};

#[derive(Debug)]
struct SpawnRecord {
    fork: StrandId,
    left_source: StrandId,
    left_sink: Option<StrandId>,
    right_source: Option<StrandId>,
    child_bag: Option<SetId>,
}

#[derive(Debug)]
enum FrameKind {
    Root,
    Spawned,
    Future { handle: HandleId, creator: StrandId },
}

#[derive(Debug)]
struct Frame {
    bag: SetId,
    kind: FrameKind,
    spawns: Vec<SpawnRecord>,
}

#[derive(Debug, Default)]
struct Handle {
    sink: Option<StrandId>,
}

/// One `D_NSP` set as seen from outside.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NspSetView {
    pub set: SetId,
    pub attached: bool,
    pub att_pred: Option<SetId>,
    pub att_succ: Option<SetId>,
    pub strands: Vec<StrandId>,
}

#[derive(Debug, Default)]
pub struct MultiBagsPlus {
    dsp: Forest,
    dnsp: Forest,
    sp_elem: Vec<ElemId>,
    nsp_elem: Vec<ElemId>,
    r: ReachDag,
    rnode: HashMap<SetId, RNodeId>,
    frames: Vec<Frame>,
    handles: HashMap<HandleId, Handle>,
    both_attached_syncs: u64,
}

impl MultiBagsPlus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn strands(&self) -> usize {
        self.sp_elem.len()
    }

    pub fn current(&self) -> Option<StrandId> {
        self.sp_elem.len().checked_sub(1).map(|i| StrandId(i as u32))
    }

    pub fn attached_sets(&self) -> usize {
        self.r.len()
    }

    pub fn both_attached_syncs(&self) -> u64 {
        self.both_attached_syncs
    }

    pub fn reach_dag(&self) -> &ReachDag {
        &self.r
    }

    pub fn r_node(&self, s: SetId) -> Option<RNodeId> {
        self.rnode.get(&s).copied()
    }

    /// `D_NSP` set containing `u`.
    pub fn nsp_set(&mut self, u: StrandId) -> Result<SetId, AlgoError> {
        let e = *self.nsp_elem.get(u.index()).ok_or(AlgoError::UnknownStrand(u))?;
        Ok(self.dnsp.find(e)?)
    }

    /// `D_SP` label of the bag containing `u`.
    pub fn sp_label(&mut self, u: StrandId) -> Result<BagLabel, AlgoError> {
        let e = *self.sp_elem.get(u.index()).ok_or(AlgoError::UnknownStrand(u))?;
        let set = self.dsp.find(e)?;
        Ok(self.dsp.label(set)?)
    }

    /// Every live `D_NSP` set that holds an executed strand.
    pub fn nsp_sets(&mut self) -> Result<Vec<NspSetView>, AlgoError> {
        let mut slot: HashMap<SetId, usize> = HashMap::new();
        let mut out: Vec<NspSetView> = Vec::new();
        for i in 0..self.nsp_elem.len() {
            let set = self.dnsp.find(self.nsp_elem[i])?;
            let k = match slot.get(&set) {
                Some(&k) => k,
                None => {
                    let rec = self.dnsp.record(set)?;
                    out.push(NspSetView {
                        set,
                        attached: rec.attached,
                        att_pred: rec.att_pred,
                        att_succ: rec.att_succ,
                        strands: Vec::new(),
                    });
                    slot.insert(set, out.len() - 1);
                    out.len() - 1
                }
            };
            out[k].strands.push(StrandId(i as u32));
        }
        Ok(out)
    }

    /// Makes the `D_NSP` set of `s` attached, adding it to `R` with an edge
    /// from its former attached predecessor. Idempotent.
    pub fn attachify(&mut self, s: StrandId) -> Result<RNodeId, AlgoError> {
        let set = self.nsp_set(s)?;
        self.attachify_set(set)
    }

    fn attachify_set(&mut self, set: SetId) -> Result<RNodeId, AlgoError> {
        let rec = self.dnsp.record(set)?;
        if rec.attached {
            return self.node_of(set);
        }
        let pred = rec
            .att_pred
            .ok_or_else(|| AlgoError::Invariant(format!("unattached {set} has no att_pred")))?;
        let pred_node = self.node_of(pred)?;
        let node = self.r.add_node();
        self.rnode.insert(set, node);
        self.dnsp.attach(set)?;
        self.r.add_edge(pred_node, node)?;
        Ok(node)
    }

    fn node_of(&self, set: SetId) -> Result<RNodeId, AlgoError> {
        self.rnode
            .get(&set)
            .copied()
            .ok_or_else(|| AlgoError::Invariant(format!("{set} is not in R")))
    }

    fn expect_next(&self, s: StrandId) -> Result<(), AlgoError> {
        if s.index() != self.sp_elem.len() {
            return Err(AlgoError::OutOfOrder {
                expected: StrandId(self.sp_elem.len() as u32),
                got: s,
            });
        }
        Ok(())
    }

    fn top(&self) -> Result<&Frame, AlgoError> {
        self.frames
            .last()
            .ok_or_else(|| AlgoError::Invariant("no active frame".into()))
    }

    fn cur(&self) -> Result<StrandId, AlgoError> {
        self.current()
            .ok_or_else(|| AlgoError::Invariant("no strand executed".into()))
    }

    /// Attached proxy preceding `x`: its own set if attached, else att_pred.
    fn proxy_pred(&mut self, x: StrandId) -> Result<SetId, AlgoError> {
        let set = self.nsp_set(x)?;
        self.dnsp
            .record(set)?
            .att_pred
            .ok_or_else(|| AlgoError::Invariant(format!("{set} has no att_pred")))
    }

    /// New strand element in `D_SP`, joined into the top frame's S bag.
    fn sp_join_top(&mut self) -> Result<(), AlgoError> {
        let bag = self.top()?.bag;
        let (single, e) = self.dsp.make_set(SetRecord::bag(BagLabel::S, None));
        self.dsp.union_into(bag, single)?;
        self.sp_elem.push(e);
        Ok(())
    }

    fn nsp_fresh_attached(&mut self) -> Result<SetId, AlgoError> {
        let (set, e) = self.dnsp.make_set(SetRecord::bag(BagLabel::S, None));
        self.dnsp.attach(set)?;
        let node = self.r.add_node();
        self.rnode.insert(set, node);
        self.nsp_elem.push(e);
        Ok(set)
    }

    fn nsp_fresh_unattached(&mut self, att_pred: SetId) -> SetId {
        let (set, e) = self.dnsp.make_set(SetRecord::unattached(att_pred));
        self.nsp_elem.push(e);
        set
    }

    /// New strand element in `D_NSP`, joined into the existing set `into`.
    fn nsp_join(&mut self, into: SetId) -> Result<(), AlgoError> {
        let (single, e) = self.dnsp.make_set(SetRecord::bag(BagLabel::S, None));
        self.dnsp.union_into(into, single)?;
        self.nsp_elem.push(e);
        Ok(())
    }

    fn edge(&mut self, a: SetId, b: SetId) -> Result<(), AlgoError> {
        let (na, nb) = (self.node_of(a)?, self.node_of(b)?);
        self.r.add_edge(na, nb)?;
        Ok(())
    }

    fn union_nsp(&mut self, into: SetId, other: SetId) -> Result<(), AlgoError> {
        if into == other {
            return Ok(());
        }
        if self.dnsp.record(into)?.attached && self.dnsp.record(other)?.attached {
            return Err(AlgoError::Invariant(format!(
                "union of attached sets {into} and {other}"
            )));
        }
        self.dnsp.union_into(into, other)?;
        Ok(())
    }

    fn nsp_sync(&mut self, rec: &SpawnRecord, right_sink: StrandId) -> Result<(), AlgoError> {
        let left_sink = rec
            .left_sink
            .ok_or_else(|| AlgoError::Invariant("sync before child return".into()))?;
        let right_source = rec
            .right_source
            .ok_or_else(|| AlgoError::Invariant("sync before child return".into()))?;
        let f = self.nsp_set(rec.fork)?;
        let ls = self.nsp_set(rec.left_source)?;
        let lk = self.nsp_set(left_sink)?;
        let rs = self.nsp_set(right_source)?;
        let rk = self.nsp_set(right_sink)?;
        let l_att = self.dnsp.record(lk)?.attached;
        let r_att = self.dnsp.record(rk)?.attached;

        match (l_att, r_att) {
            (false, false) => {
                for s in [ls, lk, rs, rk] {
                    if self.dnsp.is_live(s) {
                        self.union_nsp(f, s)?;
                    }
                }
                self.nsp_join(f)
            }
            (true, false) | (false, true) => {
                let (a_src, a_sink, u_src, u_sink) = if l_att { (ls, lk, rs, rk) } else { (rs, rk, ls, lk) };
                if !self.dnsp.record(a_src)?.attached {
                    return Err(AlgoError::Invariant(format!(
                        "attached subdag sink {a_sink} with unattached source {a_src}"
                    )));
                }
                if u_src != u_sink {
                    self.union_nsp(u_sink, u_src)?;
                }
                if !self.dnsp.record(f)?.attached {
                    self.union_nsp(a_src, f)?;
                }
                self.dnsp.set_attach_meta(u_sink, AttachField::AttSucc(Some(a_sink)))?;
                self.nsp_join(a_sink)
            }
            (true, true) => {
                self.both_attached_syncs += 1;
                self.attachify_set(f)?;
                let f = self.nsp_set(rec.fork)?;
                if f != ls {
                    self.edge(f, ls)?;
                }
                if f != rs {
                    self.edge(f, rs)?;
                }
                let j = self.nsp_fresh_attached()?;
                self.edge(lk, j)?;
                self.edge(rk, j)?;
                Ok(())
            }
        }
    }

    /// Membership-based query for `u` against the current strand `v`.
    pub fn query(&mut self, u: StrandId) -> Result<bool, AlgoError> {
        let v = self.cur()?;
        if u.index() >= self.sp_elem.len() {
            return Err(AlgoError::UnknownStrand(u));
        }
        if self.sp_label(u)? == BagLabel::S {
            return Ok(true);
        }
        let uu = self.nsp_set(u)?;
        let uv = self.nsp_set(v)?;
        let ru = self.dnsp.record(uu)?;
        let a1 = if ru.attached { Some(uu) } else { ru.att_succ };
        let Some(a1) = a1 else {
            return Ok(false);
        };
        let rv = self.dnsp.record(uv)?;
        let a2 = if rv.attached {
            uv
        } else {
            rv.att_pred
                .ok_or_else(|| AlgoError::Invariant(format!("{uv} has no att_pred")))?
        };
        if a1 == a2 {
            return Ok(uu != uv);
        }
        Ok(self.r.reach(self.node_of(a1)?, self.node_of(a2)?)?)
    }
}

impl Reachability for MultiBagsPlus {
    fn on_root(&mut self, s: StrandId) -> Result<(), AlgoError> {
        if !self.frames.is_empty() {
            return Err(AlgoError::Invariant("root started twice".into()));
        }
        self.expect_next(s)?;
        let (bag, e) = self.dsp.make_set(SetRecord::bag(BagLabel::S, Some(0)));
        self.sp_elem.push(e);
        self.nsp_fresh_attached()?;
        self.frames.push(Frame {
            bag,
            kind: FrameKind::Root,
            spawns: Vec::new(),
        });
        Ok(())
    }

    fn on_child_begin(&mut self, kind: ChildKind, func: FnId, first: StrandId) -> Result<(), AlgoError> {
        self.expect_next(first)?;
        let x = self.cur()?;
        let fkind = match kind {
            ChildKind::Spawn => {
                let pred = self.proxy_pred(x)?;
                self.nsp_fresh_unattached(pred);
                self.frames
                    .last_mut()
                    .expect("active frame")
                    .spawns
                    .push(SpawnRecord {
                        fork: x,
                        left_source: first,
                        left_sink: None,
                        right_source: None,
                        child_bag: None,
                    });
                FrameKind::Spawned
            }
            ChildKind::Create(handle) => {
                if self.handles.contains_key(&handle) {
                    return Err(AlgoError::DuplicateHandle(handle));
                }
                self.handles.insert(handle, Handle::default());
                self.attachify(x)?;
                let xs = self.nsp_set(x)?;
                let y = self.nsp_fresh_attached()?;
                self.edge(xs, y)?;
                FrameKind::Future { handle, creator: x }
            }
        };
        let (bag, e) = self.dsp.make_set(SetRecord::bag(BagLabel::S, Some(func.0)));
        self.sp_elem.push(e);
        self.frames.push(Frame {
            bag,
            kind: fkind,
            spawns: Vec::new(),
        });
        Ok(())
    }

    fn on_return(&mut self, cont: StrandId) -> Result<(), AlgoError> {
        self.expect_next(cont)?;
        if self.frames.len() <= 1 {
            return Err(AlgoError::ReturnFromRoot);
        }
        let sink = self.cur()?;
        let frame = self.frames.pop().expect("checked above");
        self.dsp.relabel(frame.bag, BagLabel::P)?;
        match frame.kind {
            FrameKind::Root => unreachable!("root is never popped"),
            FrameKind::Spawned => {
                let rec = self
                    .frames
                    .last_mut()
                    .expect("parent frame")
                    .spawns
                    .last_mut()
                    .ok_or_else(|| AlgoError::Invariant("spawned frame without record".into()))?;
                rec.left_sink = Some(sink);
                rec.right_source = Some(cont);
                rec.child_bag = Some(frame.bag);
                let fork = rec.fork;
                let pred = self.proxy_pred(fork)?;
                self.sp_join_top()?;
                self.nsp_fresh_unattached(pred);
            }
            FrameKind::Future { handle, creator } => {
                self.handles.entry(handle).or_default().sink = Some(sink);
                self.sp_join_top()?;
                let cs = self.nsp_set(creator)?;
                let c = self.nsp_fresh_attached()?;
                self.edge(cs, c)?;
            }
        }
        Ok(())
    }

    fn on_sync(&mut self, join: StrandId) -> Result<(), AlgoError> {
        self.expect_next(join)?;
        let right_sink = self.cur()?;
        let frame = self
            .frames
            .last_mut()
            .ok_or_else(|| AlgoError::Invariant("no active frame".into()))?;
        let rec = frame.spawns.pop().ok_or(AlgoError::SyncWithoutSpawn)?;
        let bag = frame.bag;
        let child = rec
            .child_bag
            .ok_or_else(|| AlgoError::Invariant("sync before child return".into()))?;
        self.dsp.union_into(bag, child)?;
        self.sp_join_top()?;
        self.nsp_sync(&rec, right_sink)
    }

    fn on_get(&mut self, handle: HandleId, getter: StrandId) -> Result<(), AlgoError> {
        self.expect_next(getter)?;
        let sink = match self.handles.get(&handle) {
            None => return Err(AlgoError::UnknownHandle(handle)),
            Some(h) => h.sink.ok_or(AlgoError::UnstructuredFuture(handle))?,
        };
        let p = self.cur()?;
        self.attachify(p)?;
        self.attachify(sink)?;
        let ps = self.nsp_set(p)?;
        let ks = self.nsp_set(sink)?;
        self.sp_join_top()?;
        let g = self.nsp_fresh_attached()?;
        self.edge(ps, g)?;
        self.edge(ks, g)?;
        Ok(())
    }

    fn precedes(&mut self, u: StrandId) -> Result<bool, AlgoError> {
        self.query(u)
    }

    fn counters(&self) -> AlgoCounters {
        let a = self.dsp.counters();
        let b = self.dnsp.counters();
        AlgoCounters {
            union_ops: a.unions + b.unions,
            find_ops: a.finds + b.finds,
            attached_sets: self.r.len() as u64,
            both_attached_syncs: self.both_attached_syncs,
        }
    }
}
