//! Deterministic trace generators: blocked LCS wavefronts (structured and
//! general futures) and a random fuzzing surface.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Event, EventSequence, FnId, HandleId};

const LCS_BASE: u64 = 0x1000_0000;
const RANDOM_BASE: u64 = 0x2000_0000;
const INJECT_ADDR: u64 = 0x3000_0000;

/// Address of the cell written by LCS block `(i, j)` in an `n`-by-`n` grid.
pub fn lcs_cell_addr(n: usize, i: usize, j: usize) -> u64 {
    LCS_BASE + 4 * (i * n + j) as u64
}

fn block_handle(n: usize, i: usize, j: usize) -> HandleId {
    HandleId((i * n + j) as u64)
}

/// Structured-futures LCS over `nblocks`-by-`nblocks` blocks.
///
/// The root strand walks the anti-diagonal wavefronts in order, and within a
/// wavefront visits blocks by increasing `i`. Visiting `(i, j)` first gets
/// the future of `(i, j-1)` (when `j >= 1`) and then creates the future for
/// `(i, j)`. Every handle is gotten at most once, by the root, so creators
/// always precede getters.
///
/// A block reads exactly the neighbour cells that are ordered before it:
/// `(i, j-1)`, `(i-1, j-1)`, and `(i-1, j)` unless `j` is the last column
/// (that block of the previous row is never gotten).
pub fn gen_lcs_structured(nblocks: usize, seed: u64, inject_race: bool) -> EventSequence {
    assert!(nblocks >= 1, "nblocks must be positive");
    let n = nblocks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = pick_injection(n, &mut rng, inject_race);
    let mut ev = Vec::new();

    for d in 0..(2 * n - 1) {
        let lo = d.saturating_sub(n - 1);
        let hi = d.min(n - 1);
        for i in lo..=hi {
            let j = d - i;
            if j >= 1 {
                ev.push(Event::Get {
                    handle: block_handle(n, i, j - 1),
                });
            }
            ev.push(Event::Create {
                func: FnId((i * n + j) as u64 + 1),
                handle: block_handle(n, i, j),
            });
            let mut reads = Vec::new();
            if j >= 1 {
                reads.push(lcs_cell_addr(n, i, j - 1));
            }
            if i >= 1 && j >= 1 {
                reads.push(lcs_cell_addr(n, i - 1, j - 1));
            }
            if i >= 1 && j + 1 < n {
                reads.push(lcs_cell_addr(n, i - 1, j));
            }
            block_body(&mut ev, &mut rng, reads, lcs_cell_addr(n, i, j), injected, (i, j), n);
            ev.push(Event::Ret);
            if inject_race && n == 1 {
                ev.push(Event::Write {
                    addr: lcs_cell_addr(n, 0, 0),
                });
            }
        }
    }
    EventSequence::new(ev)
}

/// General-futures LCS. The root spawns one task per block in row-major
/// order; each task creates the block's future, and the future gets the
/// handles of `(i-1, j)` and `(i, j-1)` before reading its neighbours. The
/// creators of those handles live in sibling tasks, so creators do not
/// precede getters and handles are touched up to twice.
pub fn gen_lcs_general(nblocks: usize, seed: u64, inject_race: bool) -> EventSequence {
    assert!(nblocks >= 1, "nblocks must be positive");
    let n = nblocks;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let injected = pick_injection(n, &mut rng, inject_race);
    let mut ev = Vec::new();

    for i in 0..n {
        for j in 0..n {
            let idx = (i * n + j) as u64;
            ev.push(Event::Spawn {
                func: FnId(2 * idx + 1),
            });
            ev.push(Event::Create {
                func: FnId(2 * idx + 2),
                handle: block_handle(n, i, j),
            });
            if i >= 1 {
                ev.push(Event::Get {
                    handle: block_handle(n, i - 1, j),
                });
            }
            if j >= 1 {
                ev.push(Event::Get {
                    handle: block_handle(n, i, j - 1),
                });
            }
            let mut reads = Vec::new();
            if i >= 1 {
                reads.push(lcs_cell_addr(n, i - 1, j));
            }
            if j >= 1 {
                reads.push(lcs_cell_addr(n, i, j - 1));
            }
            if i >= 1 && j >= 1 {
                reads.push(lcs_cell_addr(n, i - 1, j - 1));
            }
            block_body(&mut ev, &mut rng, reads, lcs_cell_addr(n, i, j), injected, (i, j), n);
            ev.push(Event::Ret); // future
            ev.push(Event::Ret); // task
            if inject_race && n == 1 {
                ev.push(Event::Write {
                    addr: lcs_cell_addr(n, 0, 0),
                });
            }
        }
    }
    ev.extend(std::iter::repeat_n(Event::Sync, n * n));
    EventSequence::new(ev)
}

/// The injected block writes the cell of `(i-1, j+1)`, which sits on the
/// same wavefront and is logically parallel with it.
fn pick_injection(n: usize, rng: &mut ChaCha8Rng, inject: bool) -> Option<(usize, usize)> {
    if !inject || n < 2 {
        return None;
    }
    let i = rng.gen_range(1..n);
    let j = rng.gen_range(0..n - 1);
    Some((i, j))
}

fn block_body(
    ev: &mut Vec<Event>,
    rng: &mut ChaCha8Rng,
    mut reads: Vec<u64>,
    own: u64,
    injected: Option<(usize, usize)>,
    at: (usize, usize),
    n: usize,
) {
    reads.shuffle(rng);
    ev.extend(reads.into_iter().map(|addr| Event::Read { addr }));
    ev.push(Event::Write { addr: own });
    if injected == Some(at) {
        ev.push(Event::Write {
            addr: lcs_cell_addr(n, at.0 - 1, at.1 + 1),
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomParams {
    /// Events emitted before the final unwinding syncs and returns.
    pub n_events: usize,
    pub p_spawn: f64,
    pub p_create: f64,
    pub p_get: f64,
    pub p_access: f64,
    pub seed: u64,
    /// Adds one spawn/write/return/write/sync gadget on a dedicated address.
    pub inject_race: bool,
    /// Restrict gets to single-touch handles whose creator precedes the getter.
    pub structured: bool,
    pub max_depth: usize,
    /// Number of distinct 4-byte words the random accesses draw from.
    pub addr_pool: usize,
    pub p_write: f64,
}

impl Default for RandomParams {
    fn default() -> Self {
        RandomParams {
            n_events: 200,
            p_spawn: 0.12,
            p_create: 0.08,
            p_get: 0.08,
            p_access: 0.5,
            seed: 0,
            inject_race: false,
            structured: false,
            max_depth: 8,
            addr_pool: 24,
            p_write: 0.4,
        }
    }
}

impl RandomParams {
    pub fn injected_addr() -> u64 {
        INJECT_ADDR
    }
}

struct GenFrame {
    handle: Option<HandleId>,
    unsynced: usize,
    created: Vec<HandleId>,
}

struct GenHandle {
    id: HandleId,
    closed: bool,
    gotten: bool,
}

/// Random well-formed trace. In general mode gets may target any returned
/// future; in structured mode only single-touch gets of futures created by
/// a frame that is still on the stack.
pub fn gen_random(p: &RandomParams) -> EventSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut ev = Vec::with_capacity(p.n_events + 64);
    let mut stack = vec![GenFrame {
        handle: None,
        unsynced: 0,
        created: Vec::new(),
    }];
    let mut handles: Vec<GenHandle> = Vec::new();
    let mut next_fn = 1u64;
    let gadget_at = if p.inject_race {
        Some(rng.gen_range(0..p.n_events.max(1)))
    } else {
        None
    };

    let w_close = (1.0 - (p.p_spawn + p.p_create + p.p_get + p.p_access)).max(0.05);
    let weights = [p.p_spawn, p.p_create, p.p_get, p.p_access, w_close];
    let total: f64 = weights.iter().sum();

    let mut emitted = 0;
    while emitted < p.n_events {
        if gadget_at == Some(emitted) {
            ev.push(Event::Spawn { func: FnId(next_fn) });
            next_fn += 1;
            ev.push(Event::Write { addr: INJECT_ADDR });
            ev.push(Event::Ret);
            ev.push(Event::Write { addr: INJECT_ADDR });
            ev.push(Event::Sync);
            emitted += 5;
            continue;
        }
        let mut x = rng.gen::<f64>() * total;
        let mut choice = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if x < *w {
                choice = k;
                break;
            }
            x -= w;
        }
        let depth_ok = stack.len() < p.max_depth;
        let emitted_event = match choice {
            0 if depth_ok => {
                ev.push(Event::Spawn { func: FnId(next_fn) });
                next_fn += 1;
                stack.last_mut().unwrap().unsynced += 1;
                stack.push(GenFrame {
                    handle: None,
                    unsynced: 0,
                    created: Vec::new(),
                });
                true
            }
            1 if depth_ok => {
                let h = HandleId(handles.len() as u64);
                handles.push(GenHandle {
                    id: h,
                    closed: false,
                    gotten: false,
                });
                ev.push(Event::Create {
                    func: FnId(next_fn),
                    handle: h,
                });
                next_fn += 1;
                stack.last_mut().unwrap().created.push(h);
                stack.push(GenFrame {
                    handle: Some(h),
                    unsynced: 0,
                    created: Vec::new(),
                });
                true
            }
            2 => {
                let pick = if p.structured {
                    let eligible: Vec<HandleId> = stack
                        .iter()
                        .flat_map(|f| f.created.iter().copied())
                        .filter(|h| {
                            let st = &handles[h.0 as usize];
                            st.closed && !st.gotten
                        })
                        .collect();
                    eligible.choose(&mut rng).copied()
                } else {
                    let eligible: Vec<HandleId> =
                        handles.iter().filter(|h| h.closed).map(|h| h.id).collect();
                    eligible.choose(&mut rng).copied()
                };
                match pick {
                    Some(h) => {
                        handles[h.0 as usize].gotten = true;
                        ev.push(Event::Get { handle: h });
                        true
                    }
                    None => false,
                }
            }
            4 => {
                let top = stack.last_mut().unwrap();
                if top.unsynced > 0 {
                    top.unsynced -= 1;
                    ev.push(Event::Sync);
                    true
                } else if stack.len() > 1 {
                    let f = stack.pop().unwrap();
                    if let Some(h) = f.handle {
                        handles[h.0 as usize].closed = true;
                    }
                    ev.push(Event::Ret);
                    true
                } else {
                    false
                }
            }
            _ => false,
        };
        if !emitted_event {
            let addr = RANDOM_BASE + 4 * rng.gen_range(0..p.addr_pool.max(1)) as u64;
            if rng.gen_bool(p.p_write.clamp(0.0, 1.0)) {
                ev.push(Event::Write { addr });
            } else {
                ev.push(Event::Read { addr });
            }
        }
        emitted += 1;
    }

    while let Some(top) = stack.last_mut() {
        for _ in 0..top.unsynced {
            ev.push(Event::Sync);
        }
        top.unsynced = 0;
        if stack.len() == 1 {
            break;
        }
        stack.pop();
        ev.push(Event::Ret);
    }
    EventSequence::new(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{validate, Mode};

    #[test]
    fn lcs_structured_counts() {
        let c = gen_lcs_structured(1, 0, false).counts();
        assert_eq!((c.creates, c.gets), (1, 0));
        let c = gen_lcs_structured(4, 3, false).counts();
        assert_eq!((c.creates, c.gets), (16, 12));
        for n in 1..=6 {
            let s = gen_lcs_structured(n, n as u64, true);
            assert!(validate(&s, Mode::Structured).is_ok());
        }
    }

    #[test]
    fn lcs_general_counts() {
        let c = gen_lcs_general(1, 0, false).counts();
        assert_eq!((c.creates, c.gets), (1, 0));
        let c = gen_lcs_general(3, 0, false).counts();
        assert_eq!((c.creates, c.gets), (9, 12));
        for n in 1..=5 {
            let s = gen_lcs_general(n, 1, true);
            assert!(validate(&s, Mode::General).is_ok());
        }
        // (0,0) is gotten by both (1,0) and (0,1)
        assert!(!validate(&gen_lcs_general(2, 0, false), Mode::Structured).is_ok());
    }

    #[test]
    fn random_is_deterministic() {
        let p = RandomParams {
            seed: 77,
            ..RandomParams::default()
        };
        assert_eq!(gen_random(&p), gen_random(&p));
        let q = RandomParams { seed: 78, ..p.clone() };
        assert_ne!(gen_random(&p), gen_random(&q));
    }

    #[test]
    fn random_without_futures_is_fork_join() {
        let p = RandomParams {
            p_create: 0.0,
            p_get: 0.0,
            seed: 5,
            ..RandomParams::default()
        };
        let c = gen_random(&p).counts();
        assert_eq!(c.future_ops(), 0);
        assert!(c.spawns > 0);
    }

    #[test]
    fn random_traces_validate() {
        for seed in 0..500 {
            let structured = seed % 3 == 0;
            let p = RandomParams {
                seed,
                structured,
                inject_race: seed % 5 == 0,
                n_events: 50 + (seed as usize % 200),
                ..RandomParams::default()
            };
            let s = gen_random(&p);
            assert!(validate(&s, Mode::General).is_ok(), "seed {seed}");
            if structured {
                assert!(validate(&s, Mode::Structured).is_ok(), "seed {seed}");
            }
        }
    }
}
