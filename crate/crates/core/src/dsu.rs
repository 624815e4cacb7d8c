//! Tagged disjoint-set forest.
//!
//! Elements are linked physically by rank with path compression, while each
//! logical set keeps a [`SetRecord`] in a side table keyed by [`SetId`]. The
//! physical root of a set and its logical identity are decoupled, so
//! [`Forest::union_into`] can always keep the metadata of its first argument
//! no matter which root ends up on top.

use std::fmt;

use thiserror::Error;

/// Identity of a live (or destroyed) logical set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetId(pub u32);

/// Identity of an element. Allocated once per `make_set`, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElemId(pub u32);

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "set#{}", self.0)
    }
}

impl fmt::Display for ElemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "elem#{}", self.0)
    }
}

/// S bags hold strands that precede the current strand; P bags hold strands
/// that may be logically parallel with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BagLabel {
    S,
    P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SetRecord {
    pub label: BagLabel,
    pub attached: bool,
    pub att_pred: Option<SetId>,
    pub att_succ: Option<SetId>,
    /// Function instance the bag belongs to, when that is meaningful.
    pub owner: Option<u64>,
}

impl SetRecord {
    pub fn bag(label: BagLabel, owner: Option<u64>) -> Self {
        SetRecord {
            label,
            attached: false,
            att_pred: None,
            att_succ: None,
            owner,
        }
    }

    pub fn unattached(att_pred: SetId) -> Self {
        SetRecord {
            label: BagLabel::S,
            attached: false,
            att_pred: Some(att_pred),
            att_succ: None,
            owner: None,
        }
    }
}

/// A single attachment field, for [`Forest::set_attach_meta`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachField {
    AttPred(Option<SetId>),
    AttSucc(Option<SetId>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DsuError {
    #[error("unknown element {0}")]
    UnknownElement(ElemId),
    #[error("unknown set {0}")]
    UnknownSet(SetId),
    #[error("set {0} has been destroyed by a union")]
    DeadSet(SetId),
    #[error("cannot union {0} into itself")]
    SelfUnion(SetId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DsuCounters {
    pub make_sets: u64,
    pub unions: u64,
    pub finds: u64,
}

const NONE: u32 = u32::MAX;
const LIVE: u8 = 1;
const ATTACHED: u8 = 2;
const LABEL_P: u8 = 4;

/// Hot part of a [`SetRecord`], kept small so big forests stay in cache.
#[derive(Debug, Clone, Copy)]
struct Meta {
    att_pred: u32,
    att_succ: u32,
    flags: u8,
}

fn pack(id: Option<SetId>) -> u32 {
    id.map_or(NONE, |s| s.0)
}

fn unpack(v: u32) -> Option<SetId> {
    (v != NONE).then_some(SetId(v))
}

#[derive(Debug, Default, Clone)]
pub struct Forest {
    // per element
    parent: Vec<u32>,
    rank: Vec<u8>,
    // per physical root element
    set_of_root: Vec<u32>,
    // per logical set
    root_of_set: Vec<u32>,
    meta: Vec<Meta>,
    owners: Vec<Option<u64>>,
    sizes: Vec<u32>,
    live_count: usize,
    counters: DsuCounters,
}

impl Forest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(elems: usize) -> Self {
        Forest {
            parent: Vec::with_capacity(elems),
            rank: Vec::with_capacity(elems),
            set_of_root: Vec::with_capacity(elems),
            root_of_set: Vec::with_capacity(elems),
            meta: Vec::with_capacity(elems),
            owners: Vec::with_capacity(elems),
            sizes: Vec::with_capacity(elems),
            ..Self::default()
        }
    }

    /// Creates a singleton set holding one fresh element.
    pub fn make_set(&mut self, record: SetRecord) -> (SetId, ElemId) {
        let e = self.parent.len() as u32;
        let s = self.meta.len() as u32;
        self.parent.push(e);
        self.rank.push(0);
        self.set_of_root.push(s);
        self.root_of_set.push(e);
        let mut flags = LIVE;
        if record.attached {
            flags |= ATTACHED;
        }
        if record.label == BagLabel::P {
            flags |= LABEL_P;
        }
        self.meta.push(Meta {
            att_pred: pack(record.att_pred),
            att_succ: pack(record.att_succ),
            flags,
        });
        self.owners.push(record.owner);
        self.sizes.push(1);
        self.live_count += 1;
        self.counters.make_sets += 1;
        (SetId(s), ElemId(e))
    }

    pub fn find(&mut self, e: ElemId) -> Result<SetId, DsuError> {
        let mut x = e.0 as usize;
        if x >= self.parent.len() {
            return Err(DsuError::UnknownElement(e));
        }
        self.counters.finds += 1;
        // path halving
        while self.parent[x] as usize != x {
            let grand = self.parent[self.parent[x] as usize];
            self.parent[x] = grand;
            x = grand as usize;
        }
        Ok(SetId(self.set_of_root[x]))
    }

    /// Unions `b` into `a` and destroys `b`. The survivor is `a` and keeps
    /// `a`'s record exactly.
    pub fn union_into(&mut self, a: SetId, b: SetId) -> Result<SetId, DsuError> {
        if a == b {
            return Err(DsuError::SelfUnion(a));
        }
        self.check_live(a)?;
        self.check_live(b)?;
        self.counters.unions += 1;
        let ra = self.root_of_set[a.0 as usize] as usize;
        let rb = self.root_of_set[b.0 as usize] as usize;
        let root = if self.rank[ra] < self.rank[rb] {
            self.parent[ra] = rb as u32;
            rb
        } else {
            if self.rank[ra] == self.rank[rb] {
                self.rank[ra] += 1;
            }
            self.parent[rb] = ra as u32;
            ra
        };
        self.set_of_root[root] = a.0;
        self.root_of_set[a.0 as usize] = root as u32;
        self.meta[b.0 as usize].flags &= !LIVE;
        self.sizes[a.0 as usize] += self.sizes[b.0 as usize];
        self.sizes[b.0 as usize] = 0;
        self.live_count -= 1;
        Ok(a)
    }

    pub fn record(&self, s: SetId) -> Result<SetRecord, DsuError> {
        let m = self.live_meta(s)?;
        Ok(SetRecord {
            label: if m.flags & LABEL_P != 0 { BagLabel::P } else { BagLabel::S },
            attached: m.flags & ATTACHED != 0,
            att_pred: unpack(m.att_pred),
            att_succ: unpack(m.att_succ),
            owner: self.owners[s.0 as usize],
        })
    }

    /// The label alone, without assembling the whole record.
    pub fn label(&self, s: SetId) -> Result<BagLabel, DsuError> {
        let m = self.live_meta(s)?;
        Ok(if m.flags & LABEL_P != 0 { BagLabel::P } else { BagLabel::S })
    }

    pub fn relabel(&mut self, s: SetId, label: BagLabel) -> Result<(), DsuError> {
        self.check_live(s)?;
        let m = &mut self.meta[s.0 as usize];
        match label {
            BagLabel::S => m.flags &= !LABEL_P,
            BagLabel::P => m.flags |= LABEL_P,
        }
        Ok(())
    }

    pub fn set_attach_meta(&mut self, s: SetId, field: AttachField) -> Result<(), DsuError> {
        self.check_live(s)?;
        let m = &mut self.meta[s.0 as usize];
        match field {
            AttachField::AttPred(p) => m.att_pred = pack(p),
            AttachField::AttSucc(p) => m.att_succ = pack(p),
        }
        Ok(())
    }

    /// Marks `s` attached. An attached set is its own attached predecessor
    /// and successor.
    pub fn attach(&mut self, s: SetId) -> Result<(), DsuError> {
        self.check_live(s)?;
        let m = &mut self.meta[s.0 as usize];
        m.flags |= ATTACHED;
        m.att_pred = s.0;
        m.att_succ = s.0;
        Ok(())
    }

    pub fn is_live(&self, s: SetId) -> bool {
        self.meta.get(s.0 as usize).is_some_and(|m| m.flags & LIVE != 0)
    }

    pub fn size(&self, s: SetId) -> Result<usize, DsuError> {
        self.check_live(s)?;
        Ok(self.sizes[s.0 as usize] as usize)
    }

    pub fn elements(&self) -> usize {
        self.parent.len()
    }

    pub fn live_sets(&self) -> usize {
        self.live_count
    }

    pub fn counters(&self) -> DsuCounters {
        self.counters
    }

    fn live_meta(&self, s: SetId) -> Result<&Meta, DsuError> {
        match self.meta.get(s.0 as usize) {
            None => Err(DsuError::UnknownSet(s)),
            Some(m) if m.flags & LIVE == 0 => Err(DsuError::DeadSet(s)),
            Some(m) => Ok(m),
        }
    }

    fn check_live(&self, s: SetId) -> Result<(), DsuError> {
        self.live_meta(s).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s_bag() -> SetRecord {
        SetRecord::bag(BagLabel::S, None)
    }

    fn p_bag() -> SetRecord {
        SetRecord::bag(BagLabel::P, None)
    }

    #[test]
    fn singleton_identity_and_disjointness() {
        let mut f = Forest::new();
        let (a, ea) = f.make_set(s_bag());
        let (b, eb) = f.make_set(s_bag());
        assert_eq!(f.find(ea).unwrap(), a);
        assert_eq!(f.find(eb).unwrap(), b);
        assert_ne!(a, b);
        assert_eq!(f.record(a).unwrap().label, BagLabel::S);
    }

    #[test]
    fn union_keeps_first_record() {
        let mut f = Forest::new();
        let (a, ea) = f.make_set(s_bag());
        let (b, eb) = f.make_set(p_bag());
        let surv = f.union_into(a, b).unwrap();
        assert_eq!(surv, a);
        assert_eq!(f.find(ea).unwrap(), a);
        assert_eq!(f.find(eb).unwrap(), a);
        assert_eq!(f.record(a).unwrap().label, BagLabel::S);
        assert!(!f.is_live(b));
    }

    #[test]
    fn union_direction_independent_of_rank() {
        // Build a tall set B, then union B into a singleton A: physically A
        // hangs under B's root but the logical survivor is still A.
        let mut f = Forest::new();
        let (b, eb) = f.make_set(p_bag());
        for _ in 0..7 {
            let (x, _) = f.make_set(p_bag());
            f.union_into(b, x).unwrap();
        }
        let (a, ea) = f.make_set(s_bag());
        f.union_into(a, b).unwrap();
        assert_eq!(f.find(eb).unwrap(), a);
        assert_eq!(f.find(ea).unwrap(), a);
        assert_eq!(f.record(a).unwrap().label, BagLabel::S);
        assert_eq!(f.size(a).unwrap(), 9);
    }

    #[test]
    fn chained_unions() {
        let mut f = Forest::new();
        let (a, _) = f.make_set(s_bag());
        let (b, _) = f.make_set(s_bag());
        let (c, ec) = f.make_set(s_bag());
        f.union_into(a, b).unwrap();
        f.union_into(a, c).unwrap();
        assert_eq!(f.find(ec).unwrap(), a);
    }

    #[test]
    fn n_minus_one_unions_leave_one_set() {
        let mut f = Forest::new();
        let ids: Vec<_> = (0..50).map(|_| f.make_set(s_bag()).0).collect();
        for &s in &ids[1..] {
            f.union_into(ids[0], s).unwrap();
        }
        assert_eq!(f.live_sets(), 1);
        assert_eq!(f.size(ids[0]).unwrap(), 50);
        assert_eq!(f.elements(), 50);
    }

    #[test]
    fn usage_errors() {
        let mut f = Forest::new();
        let (a, _) = f.make_set(s_bag());
        let (b, _) = f.make_set(s_bag());
        assert_eq!(f.union_into(a, a), Err(DsuError::SelfUnion(a)));
        f.union_into(a, b).unwrap();
        assert_eq!(f.union_into(a, b), Err(DsuError::DeadSet(b)));
        assert_eq!(f.relabel(b, BagLabel::P), Err(DsuError::DeadSet(b)));
        assert_eq!(f.find(ElemId(99)), Err(DsuError::UnknownElement(ElemId(99))));
        assert_eq!(f.record(SetId(7)).unwrap_err(), DsuError::UnknownSet(SetId(7)));
    }

    #[test]
    fn relabel_and_attach_meta() {
        let mut f = Forest::new();
        let (a, ea) = f.make_set(s_bag());
        let (x, _) = f.make_set(s_bag());
        f.relabel(a, BagLabel::P).unwrap();
        let found = f.find(ea).unwrap();
        assert_eq!(f.record(found).unwrap().label, BagLabel::P);
        f.relabel(a, BagLabel::S).unwrap();
        assert_eq!(f.record(a).unwrap().label, BagLabel::S);

        f.set_attach_meta(a, AttachField::AttSucc(Some(x))).unwrap();
        let rec = f.record(a).unwrap();
        assert_eq!(rec.att_succ, Some(x));
        assert_eq!(rec.att_pred, None);
        assert!(!rec.attached);

        f.attach(x).unwrap();
        let rec = f.record(x).unwrap();
        assert!(rec.attached);
        assert_eq!(rec.att_pred, Some(x));
        assert_eq!(rec.att_succ, Some(x));
    }
}
