//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::engine::{detect, verify, Algo, EngineError, VerifyOptions};
use crate::oracle::Oracle;
use crate::trace::{gen_lcs_general, gen_lcs_structured, gen_random, EventSequence, Mode, RandomParams};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_RACES: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

/// Environment variable that makes `verify` flip the n-th precedence answer.
pub const FAULT_ENV: &str = "FUTURERD_INJECT_FAULT";

#[derive(Debug, Parser)]
#[command(name = "futurerd", version, about = "Race detection on task-parallel traces with futures")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replay a trace and report determinacy races.
    Detect(DetectArgs),
    /// Check the detector against the explicit dag.
    Verify(VerifyArgs),
    /// Write a generated trace.
    Gen(GenArgs),
    /// Print trace counts.
    Stats {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    Multibags,
    Plus,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Multibags => Algo::MultiBags,
            AlgoArg::Plus => Algo::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Structured,
    General,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Structured => Mode::Structured,
            ModeArg::General => Mode::General,
        }
    }
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long, value_enum, default_value = "plus")]
    algo: AlgoArg,
    /// Defaults to structured for multibags and general for plus.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    trace: PathBuf,
    /// Print the JSON report instead of text.
    #[arg(long)]
    json: bool,
    #[arg(long)]
    stats: bool,
    /// Write the strand dag as GraphViz.
    #[arg(long, value_name = "FILE")]
    dump_dag: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "plus")]
    algo: AlgoArg,
    #[arg(long)]
    trace: PathBuf,
    /// Sampled queries per strand instead of exhaustive checking.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenKind {
    LcsStructured,
    LcsGeneral,
    Random,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Blocks per side for the LCS generators.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    inject_race: bool,
    #[arg(long, default_value_t = 200)]
    events: usize,
    #[arg(long, default_value_t = 0.12)]
    p_spawn: f64,
    #[arg(long, default_value_t = 0.08)]
    p_create: f64,
    #[arg(long, default_value_t = 0.08)]
    p_get: f64,
    #[arg(long, default_value_t = 0.5)]
    p_access: f64,
    /// Random traces obey the structured-future restrictions.
    #[arg(long)]
    structured: bool,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure {
            code: if e.is_input_error() { EXIT_INPUT } else { EXIT_FAILURE },
            message: e.to_string(),
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FUTURERD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_CLEAN };
        }
    };
    let out = std::io::stdout();
    let mut out = out.lock();
    let res = match cli.cmd {
        Command::Detect(a) => cmd_detect(a, &mut out),
        Command::Verify(a) => cmd_verify(a, &mut out),
        Command::Gen(a) => cmd_gen(a),
        Command::Stats { trace } => cmd_stats(&trace, &mut out),
    };
    let _ = out.flush();
    match res {
        Ok(code) => code,
        Err(f) => {
            eprintln!("futurerd: {}", f.message);
            f.code
        }
    }
}

fn load(path: &Path) -> Result<EventSequence, Failure> {
    let file = File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    EventSequence::parse(BufReader::new(file)).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn io_fail(e: std::io::Error) -> Failure {
    Failure {
        code: EXIT_FAILURE,
        message: e.to_string(),
    }
}

fn cmd_detect(a: DetectArgs, out: &mut impl Write) -> Result<i32, Failure> {
    let seq = load(&a.trace)?;
    let algo = Algo::from(a.algo);
    let mode = a.mode.map(Mode::from).unwrap_or(algo.native_mode());
    let report = detect(&seq, algo, mode)?;
    if let Some(path) = &a.dump_dag {
        let dag = Oracle::build(&seq).map_err(EngineError::from)?;
        std::fs::write(path, dag.to_dot()).map_err(io_fail)?;
    }
    if a.json {
        serde_json::to_writer(&mut *out, &report).map_err(|e| io_fail(e.into()))?;
        writeln!(out).map_err(io_fail)?;
    } else {
        for r in &report.races {
            writeln!(out, "{r}").map_err(io_fail)?;
        }
        writeln!(out, "{} race(s)", report.races.len()).map_err(io_fail)?;
        if a.stats {
            let text = serde_json::to_string_pretty(&report.stats).map_err(|e| io_fail(e.into()))?;
            writeln!(out, "{text}").map_err(io_fail)?;
        }
    }
    Ok(if report.races.is_empty() { EXIT_CLEAN } else { EXIT_RACES })
}

fn cmd_verify(a: VerifyArgs, out: &mut impl Write) -> Result<i32, Failure> {
    let seq = load(&a.trace)?;
    let fault_at = std::env::var(FAULT_ENV)
        .ok()
        .map(|v| v.trim().parse::<u64>().unwrap_or(1).max(1));
    let opts = VerifyOptions {
        sample: a.sample,
        seed: a.seed,
        fault_at,
        ..VerifyOptions::default()
    };
    let rep = verify(&seq, a.algo.into(), &opts)?;
    writeln!(
        out,
        "{}: {} strands, {} checks ({})",
        rep.algo,
        rep.strands,
        rep.checks,
        if rep.exhaustive { "exhaustive" } else { "sampled" }
    )
    .map_err(io_fail)?;
    writeln!(
        out,
        "races: detector {}, oracle pairs {}, missed pairs {}, unsound {}, addresses {}",
        rep.detector_races.len(),
        rep.oracle_races.len(),
        rep.missed_pairs(),
        rep.unsound_reports.len(),
        if rep.addresses_match { "match" } else { "differ" }
    )
    .map_err(io_fail)?;
    if let Some(d) = &rep.divergence {
        writeln!(out, "DIVERGENCE {d}").map_err(io_fail)?;
    }
    for r in &rep.unsound_reports {
        writeln!(out, "UNSOUND {r}").map_err(io_fail)?;
    }
    if !rep.ok() {
        return Ok(EXIT_FAILURE);
    }
    writeln!(out, "ok").map_err(io_fail)?;
    Ok(if rep.detector_races.is_empty() { EXIT_CLEAN } else { EXIT_RACES })
}

fn cmd_gen(a: GenArgs) -> Result<i32, Failure> {
    let seq = match a.kind {
        GenKind::LcsStructured | GenKind::LcsGeneral if a.n == 0 => {
            return Err(Failure::input("--n must be positive"));
        }
        GenKind::LcsStructured => gen_lcs_structured(a.n, a.seed, a.inject_race),
        GenKind::LcsGeneral => gen_lcs_general(a.n, a.seed, a.inject_race),
        GenKind::Random => {
            for p in [a.p_spawn, a.p_create, a.p_get, a.p_access] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Failure::input("probabilities must lie in [0, 1]"));
                }
            }
            gen_random(&RandomParams {
                n_events: a.events,
                p_spawn: a.p_spawn,
                p_create: a.p_create,
                p_get: a.p_get,
                p_access: a.p_access,
                seed: a.seed,
                inject_race: a.inject_race,
                structured: a.structured,
                ..RandomParams::default()
            })
        }
    };
    let file = File::create(&a.output).map_err(io_fail)?;
    let mut w = BufWriter::new(file);
    seq.write_jsonl(&mut w).map_err(io_fail)?;
    w.flush().map_err(io_fail)?;
    Ok(EXIT_CLEAN)
}

fn cmd_stats(trace: &Path, out: &mut impl Write) -> Result<i32, Failure> {
    let seq = load(trace)?;
    let c = seq.counts();
    let text = serde_json::to_string_pretty(&c).map_err(|e| io_fail(e.into()))?;
    writeln!(out, "{text}").map_err(io_fail)?;
    Ok(EXIT_CLEAN)
}
