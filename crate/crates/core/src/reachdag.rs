//! Dag over attached sets with an eagerly maintained transitive closure.
//!
//! Each node owns a bit row; bit `j` of row `i` is set iff `i` reaches `j`
//! through a nonempty path. Rows are stored as `u64` words and only grow.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RNodeId(pub u32);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReachError {
    #[error("unknown reachability node {0}")]
    UnknownNode(u32),
    #[error("self edge on node {0}")]
    SelfEdge(u32),
    #[error("edge {src} -> {dst} would close a cycle")]
    Cycle { src: u32, dst: u32 },
}

#[derive(Debug, Default, Clone)]
pub struct ReachDag {
    rows: Vec<Vec<u64>>,
    edges: Vec<(RNodeId, RNodeId)>,
}

#[inline]
fn word_bit(i: u32) -> (usize, u64) {
    ((i / 64) as usize, 1u64 << (i % 64))
}

impl ReachDag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Edges in insertion order, duplicates included.
    pub fn edge_log(&self) -> &[(RNodeId, RNodeId)] {
        &self.edges
    }

    pub fn add_node(&mut self) -> RNodeId {
        let id = self.rows.len() as u32;
        self.rows.push(Vec::new());
        RNodeId(id)
    }

    pub fn add_edge(&mut self, src: RNodeId, dst: RNodeId) -> Result<(), ReachError> {
        self.check(src)?;
        self.check(dst)?;
        if src == dst {
            return Err(ReachError::SelfEdge(src.0));
        }
        if self.reach(dst, src)? {
            return Err(ReachError::Cycle {
                src: src.0,
                dst: dst.0,
            });
        }
        self.edges.push((src, dst));
        if self.reach(src, dst)? {
            return Ok(());
        }

        let mut add = self.rows[dst.0 as usize].clone();
        let (w, b) = word_bit(dst.0);
        if add.len() <= w {
            add.resize(w + 1, 0);
        }
        add[w] |= b;

        let (sw, sb) = word_bit(src.0);
        for (i, row) in self.rows.iter_mut().enumerate() {
            let hits_src = i == src.0 as usize || row.get(sw).is_some_and(|x| x & sb != 0);
            if !hits_src {
                continue;
            }
            if row.len() < add.len() {
                row.resize(add.len(), 0);
            }
            for (r, a) in row.iter_mut().zip(&add) {
                *r |= *a;
            }
        }
        Ok(())
    }

    /// Strict reachability: `reach(a, a)` is false.
    pub fn reach(&self, a: RNodeId, b: RNodeId) -> Result<bool, ReachError> {
        self.check(a)?;
        self.check(b)?;
        let (w, bit) = word_bit(b.0);
        Ok(self.rows[a.0 as usize]
            .get(w)
            .is_some_and(|x| x & bit != 0))
    }

    /// Number of nodes `a` reaches.
    pub fn out_degree_closure(&self, a: RNodeId) -> Result<usize, ReachError> {
        self.check(a)?;
        Ok(self.rows[a.0 as usize]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum())
    }

    fn check(&self, n: RNodeId) -> Result<(), ReachError> {
        if (n.0 as usize) < self.rows.len() {
            Ok(())
        } else {
            Err(ReachError::UnknownNode(n.0))
        }
    }
}
