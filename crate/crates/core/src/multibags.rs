//! S/P bags over a single disjoint-set forest, for structured futures.
//!
//! Each function instance owns one bag. A bag is S-labeled while its
//! function is active and P-labeled once it returns; joining it back (at a
//! SYNC or GET) unions it into the joiner's S bag. A strand precedes the
//! current strand iff it sits in an S bag.

use std::collections::HashMap;

use crate::dsu::{BagLabel, ElemId, Forest, SetId, SetRecord};
use crate::engine::{AlgoCounters, AlgoError, ChildKind, Reachability};
use crate::trace::{FnId, HandleId, StrandId};

#[derive(Debug)]
struct Frame {
    bag: SetId,
    kind: FrameKind,
    /// P bags of returned spawned children, most recent last.
    unsynced: Vec<SetId>,
}

#[derive(Debug, Clone, Copy)]
enum FrameKind {
    Root,
    Spawned,
    Future { handle: HandleId },
}

#[derive(Debug)]
struct Handle {
    bag: Option<SetId>,
    creator: StrandId,
    gotten: bool,
}

/// One bag as seen from outside: its label and executed strands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BagView {
    pub label: BagLabel,
    pub owner: Option<u64>,
    pub strands: Vec<StrandId>,
}

#[derive(Debug, Default)]
pub struct MultiBags {
    forest: Forest,
    elem: Vec<ElemId>,
    frames: Vec<Frame>,
    handles: HashMap<HandleId, Handle>,
}

impl MultiBags {
    pub fn new() -> Self {
        Self::default()
    }

    /// Strands executed so far.
    pub fn strands(&self) -> usize {
        self.elem.len()
    }

    pub fn current(&self) -> Option<StrandId> {
        self.elem.len().checked_sub(1).map(|i| StrandId(i as u32))
    }

    /// Adds `s` to the S bag of the top frame.
    pub fn on_strand_begin(&mut self, s: StrandId) -> Result<(), AlgoError> {
        self.expect_next(s)?;
        let bag = self.top()?.bag;
        let (single, e) = self.forest.make_set(SetRecord::bag(BagLabel::S, None));
        self.forest.union_into(bag, single)?;
        self.elem.push(e);
        Ok(())
    }

    /// Current bag membership, ordered by smallest strand.
    pub fn bags(&mut self) -> Result<Vec<BagView>, AlgoError> {
        let mut by_set: HashMap<SetId, usize> = HashMap::new();
        let mut out: Vec<BagView> = Vec::new();
        for i in 0..self.elem.len() {
            let set = self.forest.find(self.elem[i])?;
            let slot = *by_set.entry(set).or_insert_with(|| {
                out.push(BagView {
                    label: BagLabel::S,
                    owner: None,
                    strands: Vec::new(),
                });
                out.len() - 1
            });
            let rec = self.forest.record(set)?;
            out[slot].label = rec.label;
            out[slot].owner = rec.owner;
            out[slot].strands.push(StrandId(i as u32));
        }
        Ok(out)
    }

    fn top(&self) -> Result<&Frame, AlgoError> {
        self.frames
            .last()
            .ok_or_else(|| AlgoError::Invariant("no active frame".into()))
    }

    fn expect_next(&self, s: StrandId) -> Result<(), AlgoError> {
        if s.index() != self.elem.len() {
            return Err(AlgoError::OutOfOrder {
                expected: StrandId(self.elem.len() as u32),
                got: s,
            });
        }
        Ok(())
    }

    fn label_of(&mut self, u: StrandId) -> Result<BagLabel, AlgoError> {
        let e = *self.elem.get(u.index()).ok_or(AlgoError::UnknownStrand(u))?;
        let set = self.forest.find(e)?;
        Ok(self.forest.label(set)?)
    }
}

impl Reachability for MultiBags {
    fn on_root(&mut self, s: StrandId) -> Result<(), AlgoError> {
        if !self.frames.is_empty() {
            return Err(AlgoError::Invariant("root started twice".into()));
        }
        self.expect_next(s)?;
        let (bag, e) = self.forest.make_set(SetRecord::bag(BagLabel::S, Some(0)));
        self.elem.push(e);
        self.frames.push(Frame {
            bag,
            kind: FrameKind::Root,
            unsynced: Vec::new(),
        });
        Ok(())
    }

    fn on_child_begin(&mut self, kind: ChildKind, func: FnId, first: StrandId) -> Result<(), AlgoError> {
        self.expect_next(first)?;
        let creator = self
            .current()
            .ok_or_else(|| AlgoError::Invariant("child before root".into()))?;
        let fkind = match kind {
            ChildKind::Spawn => FrameKind::Spawned,
            ChildKind::Create(handle) => {
                if self.handles.contains_key(&handle) {
                    return Err(AlgoError::DuplicateHandle(handle));
                }
                self.handles.insert(
                    handle,
                    Handle {
                        bag: None,
                        creator,
                        gotten: false,
                    },
                );
                FrameKind::Future { handle }
            }
        };
        let (bag, e) = self.forest.make_set(SetRecord::bag(BagLabel::S, Some(func.0)));
        self.elem.push(e);
        self.frames.push(Frame {
            bag,
            kind: fkind,
            unsynced: Vec::new(),
        });
        Ok(())
    }

    fn on_return(&mut self, cont: StrandId) -> Result<(), AlgoError> {
        if self.frames.len() <= 1 {
            return Err(AlgoError::ReturnFromRoot);
        }
        let frame = self.frames.pop().expect("checked above");
        self.forest.relabel(frame.bag, BagLabel::P)?;
        match frame.kind {
            FrameKind::Root => unreachable!("root is never popped"),
            FrameKind::Spawned => {
                self.frames
                    .last_mut()
                    .expect("parent frame")
                    .unsynced
                    .push(frame.bag);
            }
            FrameKind::Future { handle, .. } => {
                if let Some(h) = self.handles.get_mut(&handle) {
                    h.bag = Some(frame.bag);
                }
            }
        }
        self.on_strand_begin(cont)
    }

    fn on_sync(&mut self, join: StrandId) -> Result<(), AlgoError> {
        let frame = self
            .frames
            .last_mut()
            .ok_or_else(|| AlgoError::Invariant("no active frame".into()))?;
        let child = frame.unsynced.pop().ok_or(AlgoError::SyncWithoutSpawn)?;
        let bag = frame.bag;
        self.forest.union_into(bag, child)?;
        self.on_strand_begin(join)
    }

    fn on_get(&mut self, handle: HandleId, getter: StrandId) -> Result<(), AlgoError> {
        let (bag, creator) = match self.handles.get(&handle) {
            None => return Err(AlgoError::UnknownHandle(handle)),
            Some(h) if h.gotten => return Err(AlgoError::SingleTouch(handle)),
            Some(h) => match h.bag {
                None => return Err(AlgoError::UnstructuredFuture(handle)),
                Some(b) => (b, h.creator),
            },
        };
        // creator must precede the getter; the P label alone is implied by
        // the return having happened
        if self.forest.label(bag)? != BagLabel::P || self.label_of(creator)? != BagLabel::S {
            return Err(AlgoError::UnstructuredFuture(handle));
        }
        let top = self.top()?.bag;
        self.forest.union_into(top, bag)?;
        self.handles.get_mut(&handle).expect("present").gotten = true;
        self.on_strand_begin(getter)
    }

    fn precedes(&mut self, u: StrandId) -> Result<bool, AlgoError> {
        Ok(self.label_of(u)? == BagLabel::S)
    }

    fn counters(&self) -> AlgoCounters {
        let c = self.forest.counters();
        AlgoCounters {
            union_ops: c.unions,
            find_ops: c.finds,
            attached_sets: 0,
            both_attached_syncs: 0,
        }
    }
}
