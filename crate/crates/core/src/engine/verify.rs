use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_input, make_stats, replay, run_detector, Algo, AlgoCounters, AlgoError, ChildKind, EngineError, Reachability, Stats, Step};
use crate::oracle::{Oracle, OracleRace};
use crate::shadow::RaceReport;
use crate::trace::{EventSequence, FnId, HandleId, StrandId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Queries per step when sampling. Forces sampling when set.
    pub sample: Option<usize>,
    pub seed: u64,
    /// Traces with at most this many strands are checked exhaustively.
    pub exhaustive_limit: usize,
    /// Flip the answer of the n-th precedence query (harness self-test).
    pub fault_at: Option<u64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            sample: None,
            seed: 0,
            exhaustive_limit: 300,
            fault_at: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Strand executing when the answer was wrong.
    pub current: StrandId,
    pub u: StrandId,
    pub expected: bool,
    pub got: bool,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "at {}: precedes({}) = {}, oracle says {}",
            self.current, self.u, self.got, self.expected
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub algo: Algo,
    pub strands: usize,
    pub exhaustive: bool,
    pub checks: u64,
    pub divergence: Option<Divergence>,
    pub detector_races: Vec<RaceReport>,
    #[serde(skip)]
    pub oracle_races: BTreeSet<OracleRace>,
    /// Reports that do not name a racing pair of the oracle dag.
    pub unsound_reports: Vec<RaceReport>,
    /// Racing word addresses agree between detector and oracle.
    pub addresses_match: bool,
    /// Every oracle racing pair was reported by the detector.
    pub pairs_match: bool,
    pub stats: Stats,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none() && self.unsound_reports.is_empty() && self.addresses_match
    }

    pub fn missed_pairs(&self) -> usize {
        let got: HashSet<_> = self.detector_races.iter().map(as_oracle).collect();
        self.oracle_races.iter().filter(|r| !got.contains(r)).count()
    }
}

fn as_oracle(r: &RaceReport) -> OracleRace {
    OracleRace {
        addr: r.addr,
        kind: r.kind,
        prior: r.prior,
        current: r.current,
    }
}

struct Faulty<R> {
    inner: R,
    calls: u64,
    at: Option<u64>,
}

impl<R: Reachability> Reachability for Faulty<R> {
    fn on_root(&mut self, s: StrandId) -> Result<(), AlgoError> {
        self.inner.on_root(s)
    }
    fn on_child_begin(&mut self, kind: ChildKind, func: FnId, first: StrandId) -> Result<(), AlgoError> {
        self.inner.on_child_begin(kind, func, first)
    }
    fn on_return(&mut self, cont: StrandId) -> Result<(), AlgoError> {
        self.inner.on_return(cont)
    }
    fn on_sync(&mut self, join: StrandId) -> Result<(), AlgoError> {
        self.inner.on_sync(join)
    }
    fn on_get(&mut self, handle: HandleId, getter: StrandId) -> Result<(), AlgoError> {
        self.inner.on_get(handle, getter)
    }
    fn precedes(&mut self, u: StrandId) -> Result<bool, AlgoError> {
        self.calls += 1;
        let ans = self.inner.precedes(u)?;
        Ok(if Some(self.calls) == self.at { !ans } else { ans })
    }
    fn counters(&self) -> AlgoCounters {
        self.inner.counters()
    }
}

/// Replays `seq` with `algo` next to the oracle dag, comparing every
/// precedence answer after each strand begins and the final race sets.
pub fn verify(seq: &EventSequence, algo: Algo, opts: &VerifyOptions) -> Result<VerifyReport, EngineError> {
    check_input(seq, algo, algo.native_mode())?;
    let oracle = Oracle::build(seq)?;
    let strands = oracle.len();
    let exhaustive = opts.sample.is_none() && strands <= opts.exhaustive_limit;
    let per_step = opts.sample.unwrap_or(64);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = 0u64;
    let mut divergence: Option<Divergence> = None;

    let mut r = Faulty {
        inner: algo.instantiate(),
        calls: 0,
        at: opts.fault_at,
    };
    let started = Instant::now();
    let (races, queries) = run_detector(seq, &mut r, |a, step| {
        let Step::StrandBegin(v) = step else {
            return Ok(());
        };
        if divergence.is_some() || v.0 == 0 {
            return Ok(());
        }
        let mut check = |u: StrandId| -> Result<bool, EngineError> {
            checks += 1;
            let got = a
                .precedes(u)
                .map_err(|source| EngineError::Algo { line: 0, source })?;
            let expected = oracle.reaches(u, v);
            if got != expected {
                divergence = Some(Divergence {
                    current: v,
                    u,
                    expected,
                    got,
                });
                return Ok(false);
            }
            Ok(true)
        };
        if exhaustive {
            for u in 0..v.0 {
                if !check(StrandId(u))? {
                    break;
                }
            }
        } else {
            for _ in 0..per_step {
                if !check(StrandId(rng.gen_range(0..v.0)))? {
                    break;
                }
            }
        }
        Ok(())
    })?;
    let elapsed = started.elapsed().as_secs_f64() * 1e3;
    let stats = make_stats(seq, &r.counters(), queries, elapsed)?;

    let oracle_races = oracle.naive_races();
    let unsound_reports: Vec<RaceReport> = races
        .iter()
        .filter(|x| !oracle_races.contains(&as_oracle(x)))
        .copied()
        .collect();
    let det_addrs: BTreeSet<u64> = races.iter().map(|x| x.addr).collect();
    let orc_addrs: BTreeSet<u64> = oracle_races.iter().map(|x| x.addr).collect();
    let reported: HashSet<OracleRace> = races.iter().map(as_oracle).collect();
    let pairs_match = oracle_races.iter().all(|x| reported.contains(x)) && unsound_reports.is_empty();
    if let Some(d) = &divergence {
        log::info!("divergence {d}");
    }
    Ok(VerifyReport {
        algo,
        strands,
        exhaustive,
        checks,
        divergence,
        detector_races: races,
        oracle_races,
        unsound_reports,
        addresses_match: det_addrs == orc_addrs,
        pairs_match,
        stats,
    })
}

/// Every precedence answer `precedes(u)`, `u < v`, at every strand `v`, in
/// replay order. For comparing algorithms on small traces.
pub fn answers(seq: &EventSequence, algo: Algo) -> Result<Vec<bool>, EngineError> {
    check_input(seq, algo, algo.native_mode())?;
    let mut r = algo.instantiate();
    let mut out = Vec::new();
    replay(seq, &mut r, |a, step| {
        if let Step::StrandBegin(v) = step {
            for u in 0..v.0 {
                out.push(
                    a.precedes(StrandId(u))
                        .map_err(|source| EngineError::Algo { line: 0, source })?,
                );
            }
        }
        Ok(())
    })?;
    Ok(out)
}
