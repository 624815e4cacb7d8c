use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use futurerd::dsu::{BagLabel, ElemId, Forest, SetId, SetRecord};
use futurerd::engine::{detect, replay, Algo, Step};
use futurerd::multibags::MultiBags;
use futurerd::multibags_plus::MultiBagsPlus;
use futurerd::oracle::Oracle;
use futurerd::reachdag::{RNodeId, ReachDag};
use futurerd::shadow::{RaceKind, ShadowTable};
use futurerd::trace::{
    gen_lcs_general, gen_random, validate, Event, EventSequence, FnId, HandleId, Mode, RandomParams, StrandId,
};

fn params() -> impl Strategy<Value = RandomParams> {
    (
        20usize..250,
        0.0f64..0.3,
        0.0f64..0.2,
        0.0f64..0.2,
        0.1f64..0.8,
        any::<u64>(),
        any::<bool>(),
        any::<bool>(),
        1usize..10,
    )
        .prop_map(|(n, ps, pc, pg, pa, seed, inject, structured, depth)| RandomParams {
            n_events: n,
            p_spawn: ps,
            p_create: pc,
            p_get: pg,
            p_access: pa,
            seed,
            inject_race: inject,
            structured,
            max_depth: depth,
            ..RandomParams::default()
        })
}

#[derive(Debug, Clone)]
enum DsuOp {
    Make(bool),
    Union(usize, usize),
    Find(usize),
    Relabel(usize, bool),
}

fn dsu_ops() -> impl Strategy<Value = Vec<DsuOp>> {
    prop::collection::vec(
        prop_oneof![
            2 => any::<bool>().prop_map(DsuOp::Make),
            2 => (any::<usize>(), any::<usize>()).prop_map(|(a, b)| DsuOp::Union(a, b)),
            4 => any::<usize>().prop_map(DsuOp::Find),
            1 => (any::<usize>(), any::<bool>()).prop_map(|(a, p)| DsuOp::Relabel(a, p)),
        ],
        10_000..12_000,
    )
}

fn label(p: bool) -> BagLabel {
    if p {
        BagLabel::P
    } else {
        BagLabel::S
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dsu_matches_naive_model(ops in dsu_ops()) {
        let mut f = Forest::new();
        // naive: logical set of each element, label of each set
        let mut set_of: Vec<SetId> = Vec::new();
        let mut labels: HashMap<SetId, BagLabel> = HashMap::new();
        let mut live: Vec<SetId> = Vec::new();
        for op in ops {
            match op {
                DsuOp::Make(p) => {
                    let (s, e) = f.make_set(SetRecord::bag(label(p), None));
                    prop_assert_eq!(e, ElemId(set_of.len() as u32));
                    set_of.push(s);
                    labels.insert(s, label(p));
                    live.push(s);
                }
                DsuOp::Union(a, b) if live.len() >= 2 => {
                    let a = live[a % live.len()];
                    let b = live[b % live.len()];
                    if a == b {
                        continue;
                    }
                    prop_assert_eq!(f.union_into(a, b).unwrap(), a);
                    for s in set_of.iter_mut().filter(|s| **s == b) {
                        *s = a;
                    }
                    live.retain(|&s| s != b);
                    prop_assert!(!f.is_live(b));
                }
                DsuOp::Find(x) if !set_of.is_empty() => {
                    let x = x % set_of.len();
                    let s = f.find(ElemId(x as u32)).unwrap();
                    prop_assert_eq!(s, set_of[x]);
                    prop_assert_eq!(f.record(s).unwrap().label, labels[&s]);
                }
                DsuOp::Relabel(a, p) if !live.is_empty() => {
                    let a = live[a % live.len()];
                    f.relabel(a, label(p)).unwrap();
                    labels.insert(a, label(p));
                }
                _ => {}
            }
        }
        prop_assert_eq!(f.live_sets(), live.len());
        for &s in &live {
            let members = set_of.iter().filter(|&&x| x == s).count();
            prop_assert_eq!(f.size(s).unwrap(), members);
        }
    }
}

#[allow(clippy::needless_range_loop)]
fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; n]; n];
    for &(a, b) in edges {
        m[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    m
}

proptest! {
    #[allow(clippy::needless_range_loop)]
    #[test]
    fn reach_dag_matches_floyd_warshall(
        n in 1usize..70,
        raw in prop::collection::vec((any::<usize>(), any::<usize>()), 0..200),
        perm_seed in any::<u64>(),
    ) {
        // edges go forward in a shuffled order, so the graph stays acyclic
        let mut order: Vec<usize> = (0..n).collect();
        let mut x = perm_seed | 1;
        for i in (1..n).rev() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            order.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let mut edges = Vec::new();
        let mut r = ReachDag::new();
        for _ in 0..n {
            r.add_node();
        }
        for (a, b) in raw {
            let (a, b) = (a % n, b % n);
            if a >= b {
                continue;
            }
            edges.push((order[a], order[b]));
            r.add_edge(RNodeId(order[a] as u32), RNodeId(order[b] as u32)).unwrap();
        }
        let fw = closure(n, &edges);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(r.reach(RNodeId(i as u32), RNodeId(j as u32)).unwrap(), fw[i][j], "{} -> {}", i, j);
            }
        }
        if let Some(&(a, b)) = edges.first() {
            prop_assert!(r.add_edge(RNodeId(b as u32), RNodeId(a as u32)).is_err());
        }
    }
}

fn event() -> impl Strategy<Value = Event> {
    prop_oneof![
        any::<u64>().prop_map(|f| Event::Spawn { func: FnId(f) }),
        (any::<u64>(), any::<u64>()).prop_map(|(f, h)| Event::Create {
            func: FnId(f),
            handle: HandleId(h)
        }),
        Just(Event::Sync),
        any::<u64>().prop_map(|h| Event::Get { handle: HandleId(h) }),
        Just(Event::Ret),
        any::<u64>().prop_map(|a| Event::Read { addr: a }),
        any::<u64>().prop_map(|a| Event::Write { addr: a }),
    ]
}

proptest! {
    #[test]
    fn trace_round_trip(events in prop::collection::vec(event(), 0..100)) {
        let seq = EventSequence::new(events);
        let text = seq.to_jsonl();
        prop_assert_eq!(EventSequence::parse_str(&text).unwrap(), seq);
    }

    #[test]
    fn random_traces_validate(p in params()) {
        let seq = gen_random(&p);
        let mode = if p.structured { Mode::Structured } else { Mode::General };
        let rep = validate(&seq, mode);
        prop_assert!(rep.is_ok(), "{:?}", rep);
        let c = seq.counts();
        prop_assert_eq!(c.strands, 1 + 2 * (c.spawns + c.creates) + c.syncs + c.gets);
    }
}

/// Checks the attached-set invariants on every executed prefix.
fn check_attachment(seq: &EventSequence) -> Result<(), TestCaseError> {
    let oracle = Oracle::build(seq).unwrap();
    let mut m = MultiBagsPlus::new();
    let mut failure = None;
    // step at which each (set, att_succ) pair was first seen: the join
    // strand that closed the set
    let mut succ_since: HashMap<(SetId, SetId), StrandId> = HashMap::new();
    replay(seq, &mut m, |m, step| {
        let Step::StrandBegin(v) = step else {
            return Ok(());
        };
        if failure.is_some() {
            return Ok(());
        }
        let sets = m.nsp_sets().unwrap();
        let members: HashMap<SetId, &[StrandId]> = sets.iter().map(|s| (s.set, &s.strands[..])).collect();
        let mut set_of = HashMap::new();
        for s in &sets {
            for &x in &s.strands {
                set_of.insert(x, s);
            }
        }
        for s in sets.iter().filter(|s| !s.attached) {
            let pred = s.att_pred.expect("unattached set without att_pred");
            for &a in members[&pred] {
                for &u in &s.strands {
                    // a member added to the predecessor after u executed
                    // cannot precede it
                    if a < u && !oracle.reaches(a, u) {
                        failure = Some(format!("at {v}: att_pred member {a} does not reach {u}"));
                    }
                }
            }
            if let Some(succ) = s.att_succ {
                let since = *succ_since.entry((s.set, succ)).or_insert(v);
                for &w in members[&succ].iter().filter(|&&w| w >= since) {
                    for &u in &s.strands {
                        if !oracle.reaches(u, w) {
                            failure = Some(format!("at {v}: {u} does not reach att_succ member {w}"));
                        }
                    }
                }
            }
        }
        for e in oracle.edges().iter().filter(|e| e.kind.is_future()) {
            if e.src > v || e.dst > v {
                continue;
            }
            for x in [e.src, e.dst] {
                if !set_of[&x].attached {
                    failure = Some(format!("at {v}: {x} has a {:?} edge but is unattached", e.kind));
                }
            }
        }
        Ok(())
    })
    .unwrap();
    match failure {
        Some(f) => Err(TestCaseError::fail(f)),
        None => Ok(()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn attached_set_invariants(p in params()) {
        check_attachment(&gen_random(&RandomParams { n_events: p.n_events.min(150), ..p }))?;
    }

    #[test]
    fn attached_set_invariants_lcs(n in 1usize..5, seed in any::<u64>(), inject in any::<bool>()) {
        check_attachment(&gen_lcs_general(n, seed, inject))?;
    }
}

#[derive(Debug, Clone, Copy)]
enum Access {
    Read(u8, bool),
    Write(u8, bool),
}

proptest! {
    #[test]
    fn shadow_history(
        ops in prop::collection::vec(
            prop_oneof![
                (any::<u8>(), any::<bool>()).prop_map(|(a, p)| Access::Read(a % 8, p)),
                (any::<u8>(), any::<bool>()).prop_map(|(a, p)| Access::Write(a % 8, p)),
            ],
            1..300,
        ),
        step in prop::collection::vec(any::<bool>(), 300),
    ) {
        let mut t = ShadowTable::new();
        let mut s = 0u32;
        let mut queries = 0u64;
        for (i, op) in ops.into_iter().enumerate() {
            if step[i] {
                s += 1;
            }
            let cur = StrandId(s);
            match op {
                Access::Read(a, ans) => {
                    let addr = 0x4000 + 4 * a as u64;
                    let before = t.cell(addr);
                    let r = t.on_read(addr, cur, |_| Ok::<_, ()>(ans)).unwrap();
                    queries += before.last_writer.is_some() as u64;
                    prop_assert_eq!(r.is_some(), before.last_writer.is_some() && !ans);
                    if let Some(r) = r {
                        prop_assert_eq!(r.kind, RaceKind::WriteRead);
                        prop_assert_eq!(Some(r.prior), before.last_writer);
                    }
                    let after = t.cell(addr);
                    prop_assert_eq!(after.last_writer, before.last_writer);
                    prop_assert_eq!(after.readers.last(), Some(&cur));
                    prop_assert!(after.readers.windows(2).all(|w| w[0] != w[1]));
                }
                Access::Write(a, ans) => {
                    let addr = 0x4000 + 4 * a as u64;
                    let before = t.cell(addr);
                    let rs = t.on_write(addr, cur, |_| Ok::<_, ()>(ans)).unwrap();
                    let asked = before.readers.len() + before.last_writer.is_some() as usize;
                    queries += asked as u64;
                    prop_assert_eq!(rs.len(), if ans { 0 } else { asked });
                    let after = t.cell(addr);
                    prop_assert_eq!(after.last_writer, Some(cur));
                    prop_assert!(after.readers.is_empty());
                }
            }
        }
        prop_assert_eq!(t.queries(), queries);
    }
}

/// Rewrites every SPAWN as a CREATE and every SYNC as a GET of the most
/// recent unsynced child.
fn desugar(seq: &EventSequence) -> EventSequence {
    let mut frames: Vec<Vec<HandleId>> = vec![Vec::new()];
    let mut next = 1u64 << 40;
    let mut out = Vec::new();
    for ev in &seq.events {
        match *ev {
            Event::Spawn { func } => {
                let h = HandleId(next);
                next += 1;
                frames.last_mut().unwrap().push(h);
                frames.push(Vec::new());
                out.push(Event::Create { func, handle: h });
            }
            Event::Create { .. } => {
                frames.push(Vec::new());
                out.push(*ev);
            }
            Event::Ret => {
                frames.pop();
                out.push(*ev);
            }
            Event::Sync => {
                let h = frames.last_mut().unwrap().pop().unwrap();
                out.push(Event::Get { handle: h });
            }
            _ => out.push(*ev),
        }
    }
    EventSequence::new(out)
}

type Bags = Vec<(BagLabel, Option<u64>, Vec<StrandId>)>;

fn bag_states(seq: &EventSequence) -> Vec<Bags> {
    let mut mb = MultiBags::new();
    let mut out = Vec::new();
    replay(seq, &mut mb, |m, step| {
        if let Step::StrandBegin(_) = step {
            let mut bags: Vec<_> = m.bags().unwrap().into_iter().map(|b| (b.label, b.owner, b.strands)).collect();
            bags.sort_by(|a, b| a.2.cmp(&b.2));
            out.push(bags);
        }
        Ok(())
    })
    .unwrap();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sync_as_get_same_bags(p in params()) {
        let seq = gen_random(&RandomParams { p_create: 0.0, p_get: 0.0, structured: true, ..p });
        prop_assert_eq!(seq.counts().creates, 0);
        let sugar = desugar(&seq);
        prop_assert!(validate(&sugar, Mode::Structured).is_ok());
        prop_assert_eq!(bag_states(&seq), bag_states(&sugar));
    }

    #[test]
    fn dsu_work_linear_in_events(p in params()) {
        let seq = gen_random(&p);
        let events = seq.len() as u64 + 1;
        for algo in [Algo::MultiBags, Algo::Plus] {
            if algo == Algo::MultiBags && !p.structured {
                continue;
            }
            let st = detect(&seq, algo, algo.native_mode()).unwrap().stats;
            prop_assert!(st.union_ops <= 2 * events, "{} unions for {} events", st.union_ops, events);
            prop_assert!(st.find_ops <= 8 * events, "{} finds for {} events", st.find_ops, events);
        }
    }

    #[test]
    fn detect_json_deterministic(p in params()) {
        let seq = gen_random(&p);
        let run = || {
            let mut v = serde_json::to_value(detect(&seq, Algo::Plus, Mode::General).unwrap()).unwrap();
            v["stats"].as_object_mut().unwrap().remove("elapsed_ms");
            v
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn desugared_trace_keeps_strand_count() {
    let seq = gen_random(&RandomParams {
        p_create: 0.0,
        p_get: 0.0,
        structured: true,
        n_events: 400,
        ..RandomParams::default()
    });
    let sugar = desugar(&seq);
    assert_eq!(seq.counts().strands, sugar.counts().strands);
    let a: BTreeSet<_> = Oracle::build(&seq).unwrap().naive_races();
    let b: BTreeSet<_> = Oracle::build(&sugar).unwrap().naive_races();
    assert_eq!(a, b);
}
