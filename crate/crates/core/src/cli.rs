//! The `wssp` command line.
//!
//! | command      | exit codes                                                  |
//! |--------------|-------------------------------------------------------------|
//! | instrument   | 0 ok, 1 error, 4 ambiguous stack pointer without override   |
//! | audit        | 0 all pass, 2 any fail, 3 unknown without fail, 1 error     |
//! | analyze      | 0 ok, 1 error                                               |
//! | run          | 0 Silent, 10 SspFault, 11 MemoryFault, 12 Timeout, 13 StartupAbort, 1 error |
//! | fault-inject | 0 ok, 1 error                                               |
//! | eval         | 0 no mismatches, 2 mismatches, 1 error                      |
//! | corpus       | 0 ok, 1 error                                               |

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audit::audit;
use crate::corpus::{default_corpus, load_corpus, write_corpus};
use crate::eval::evaluate;
use crate::harness::{run, OutcomeCategory, RandomMode, RunSpec};
use crate::layout::{classify_layout, detect_frames, find_stack_pointer, FrameInfo, LayoutReport, SpLookup};
use crate::model::{decode, encode, WasmModule};
use crate::ssp::{inject_fault_random, instrument, legacy_instrument, SelectionMode, SspConfig, SspError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_MISMATCH: i32 = 2;
pub const EXIT_AMBIGUOUS_SP: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "wssp", version, about = "Stack smashing protection for wasm32/WASI binaries")]
pub struct Cli {
    /// Increase log verbosity (repeatable). Logs go to stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    Heuristic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FlavorArg {
    Hardened,
    Legacy,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Add canary checks to every recognized stack frame.
    Instrument {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        mode: ModeArg,
        /// Minimum frame size in heuristic mode.
        #[arg(long)]
        threshold: Option<u32>,
        #[arg(long, value_enum, default_value = "hardened")]
        flavor: FlavorArg,
        /// Stack pointer global, for modules where discovery is ambiguous.
        #[arg(long)]
        sp_global: Option<u32>,
        /// Export the reference value (or its address for legacy builds).
        #[arg(long)]
        debug_export: bool,
        /// Linear-memory slot for the legacy reference value.
        #[arg(long)]
        guard_addr: Option<u32>,
    },
    /// Check a binary against the SSP robustness properties.
    Audit {
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Report the stack pointer, frames and memory layout.
    Analyze {
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Execute a guest and classify the outcome.
    Run {
        input: PathBuf,
        /// host, fail, or fixed:HEX (repeated cyclically).
        #[arg(long, default_value = "host", value_parser = parse_random)]
        random: RandomMode,
        #[arg(long, default_value_t = 20_000)]
        timeout_ms: u64,
        #[arg(long)]
        stdin: Option<PathBuf>,
        /// Arguments passed to the guest after its program name.
        #[arg(last = true)]
        args: Vec<String>,
    },
    /// Replace the random_get import with a stub that always fails.
    FaultInject {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build every flavor of a corpus, run it, and compare with expectations.
    Eval {
        /// Corpus directory; the built-in corpus is used when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Write the built-in corpus into the directory before evaluating.
        #[arg(long, requires = "corpus")]
        regenerate: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value_t = 20_000)]
        timeout_ms: u64,
        /// Print the JSON report instead of the summary table.
        #[arg(long)]
        json: bool,
    },
    /// Write the built-in corpus (modules plus manifest) to a directory.
    Corpus { dir: PathBuf },
}

fn parse_random(s: &str) -> Result<RandomMode, String> {
    s.parse()
}

struct Failure(i32, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_ERROR, e.to_string())
    }
}

type CmdResult = Result<i32, Failure>;

fn read_module(path: &Path) -> Result<WasmModule, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure(EXIT_ERROR, format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| Failure(EXIT_ERROR, format!("{}: {e}", path.display())))
}

fn write_module(path: &Path, m: &WasmModule) -> Result<(), Failure> {
    let bytes = encode(m)?;
    std::fs::write(path, bytes).map_err(|e| Failure(EXIT_ERROR, format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(v: &T) -> Result<(), Failure> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_instrument(
    input: &Path,
    output: &Path,
    mode: ModeArg,
    threshold: Option<u32>,
    flavor: FlavorArg,
    sp_global: Option<u32>,
    debug_export: bool,
    guard_addr: Option<u32>,
) -> CmdResult {
    let m = read_module(input)?;
    let mut cfg = SspConfig {
        mode: match mode {
            ModeArg::All => SelectionMode::All,
            ModeArg::Heuristic => SelectionMode::Heuristic,
        },
        sp_global,
        debug_export,
        legacy_guard_addr: guard_addr,
        ..SspConfig::default()
    };
    if let Some(t) = threshold {
        cfg.heuristic_threshold = t;
    }
    let sp = match sp_global {
        Some(g) => g,
        None => match find_stack_pointer(&m) {
            SpLookup::Found { global, .. } => global,
            SpLookup::Ambiguous(c) => return Err(Failure(EXIT_AMBIGUOUS_SP, SspError::AmbiguousStackPointer(c).to_string())),
            SpLookup::Absent => return Err(Failure(EXIT_ERROR, SspError::NoStackPointer.to_string())),
        },
    };
    let frames = detect_frames(&m, sp);
    let result = match flavor {
        FlavorArg::Hardened => instrument(&m, &cfg, &frames),
        FlavorArg::Legacy => legacy_instrument(&m, &cfg, &frames),
    };
    let (out, summary) = result.map_err(|e| match e {
        SspError::AmbiguousStackPointer(_) => Failure(EXIT_AMBIGUOUS_SP, e.to_string()),
        e => Failure(EXIT_ERROR, e.to_string()),
    })?;
    write_module(output, &out)?;
    print_json(&summary)?;
    Ok(EXIT_OK)
}

fn cmd_audit(input: &Path, json: bool) -> CmdResult {
    let report = audit(&read_module(input)?);
    if json {
        print_json(&report)?;
    } else {
        println!("guard location: {}", serde_json::to_string(&report.guard_location)?);
        println!("layout: {:?}", report.layout.layout);
        let p = &report.properties;
        for (name, v) in [("P1", &p.p1), ("P2a", &p.p2a), ("P2b", &p.p2b), ("P3", &p.p3)] {
            println!("{name:<4} {:<8} {}", format!("{:?}", v.verdict), v.rationale);
            for e in &v.evidence {
                println!("       {}: {}", e.site, e.description);
            }
        }
    }
    Ok(report.exit_code())
}

#[derive(Serialize)]
struct Analysis {
    layout: LayoutReport,
    frames: Vec<FrameInfo>,
}

fn cmd_analyze(input: &Path, json: bool) -> CmdResult {
    let m = read_module(input)?;
    let layout = classify_layout(&m);
    let frames = layout.sp_global.map(|sp| detect_frames(&m, sp)).unwrap_or_default();
    if json {
        print_json(&Analysis { layout, frames })?;
    } else {
        println!("stack pointer: {:?} (initial {:?})", layout.sp_global, layout.sp_initial);
        println!("layout: {:?}, data {:?}, stack {:?}", layout.layout, layout.data_range, layout.stack_region);
        for e in &layout.evidence {
            println!("  {e}");
        }
        for f in &frames {
            let name = m.func_name(f.func_index).unwrap_or("?");
            let state = match (f.recognized, &f.note) {
                (true, _) => format!("frame {} bytes ({:?})", f.frame_size, f.pattern),
                (false, Some(n)) => format!("unrecognized: {n}"),
                (false, None) => "frameless".into(),
            };
            println!("func {:>4} {name:<24} {state}", f.func_index);
        }
    }
    Ok(EXIT_OK)
}

pub fn run_exit_code(c: OutcomeCategory) -> i32 {
    match c {
        OutcomeCategory::Silent => 0,
        OutcomeCategory::SspFault => 10,
        OutcomeCategory::MemoryFault => 11,
        OutcomeCategory::Timeout => 12,
        OutcomeCategory::StartupAbort => 13,
    }
}

fn cmd_run(input: &Path, random: RandomMode, timeout_ms: u64, stdin: Option<&Path>, args: Vec<String>) -> CmdResult {
    let module = std::fs::read(input).map_err(|e| Failure(EXIT_ERROR, format!("{}: {e}", input.display())))?;
    let mut spec = RunSpec::new(module, random).with_timeout(Duration::from_millis(timeout_ms));
    if let Some(p) = stdin {
        spec.stdin = std::fs::read(p).map_err(|e| Failure(EXIT_ERROR, format!("{}: {e}", p.display())))?;
    }
    spec.argv = std::iter::once(input.display().to_string()).chain(args).collect();
    let report = run(&spec)?;
    print_json(&report)?;
    Ok(run_exit_code(report.outcome.category()))
}

fn cmd_fault_inject(input: &Path, output: &Path) -> CmdResult {
    let out = inject_fault_random(&read_module(input)?)?;
    write_module(output, &out)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    #[serde(flatten)]
    report: &'a crate::harness::EvalReport,
    mismatches: &'a [crate::eval::Mismatch],
}

fn cmd_eval(
    corpus: Option<&Path>,
    regenerate: bool,
    report: Option<&Path>,
    jobs: usize,
    timeout_ms: u64,
    json: bool,
) -> CmdResult {
    let guests = match corpus {
        Some(dir) => {
            if regenerate {
                write_corpus(dir, &default_corpus())?;
            }
            load_corpus(dir)?
        }
        None => default_corpus(),
    };
    log::info!("evaluating {} guests with {} jobs", guests.len(), jobs);
    let e = evaluate(&guests, jobs, Duration::from_millis(timeout_ms));
    let out = EvalOutput { report: &e.report, mismatches: &e.mismatches };
    if let Some(p) = report {
        let text = serde_json::to_string_pretty(&out)?;
        std::fs::write(p, text).map_err(|err| Failure(EXIT_ERROR, format!("{}: {err}", p.display())))?;
    }
    if json {
        print_json(&out)?;
    } else {
        print!("{}", e.report.table());
        println!("{} runs, {} mismatches", e.report.runs.len(), e.mismatches.len());
    }
    if e.mismatches.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprint!("{}", e.diff());
        Ok(EXIT_MISMATCH)
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Instrument { input, output, mode, threshold, flavor, sp_global, debug_export, guard_addr } => {
            if threshold.is_some() && matches!(mode, ModeArg::All) {
                return Err(Failure(EXIT_ERROR, "--threshold only applies to --mode heuristic".into()));
            }
            if guard_addr.is_some() && matches!(flavor, FlavorArg::Hardened) {
                return Err(Failure(EXIT_ERROR, "--guard-addr only applies to --flavor legacy".into()));
            }
            cmd_instrument(&input, &output, mode, threshold, flavor, sp_global, debug_export, guard_addr)
        }
        Command::Audit { input, json } => cmd_audit(&input, json),
        Command::Analyze { input, json } => cmd_analyze(&input, json),
        Command::Run { input, random, timeout_ms, stdin, args } => {
            if timeout_ms == 0 {
                return Err(Failure(EXIT_ERROR, "--timeout-ms must be positive".into()));
            }
            cmd_run(&input, random, timeout_ms, stdin.as_deref(), args)
        }
        Command::FaultInject { input, output } => cmd_fault_inject(&input, &output),
        Command::Eval { corpus, regenerate, report, jobs, timeout_ms, json } => {
            cmd_eval(corpus.as_deref(), regenerate, report.as_deref(), jobs.max(1), timeout_ms, json)
        }
        Command::Corpus { dir } => {
            write_corpus(&dir, &default_corpus())?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().target(env_logger::Target::Stderr).try_init();
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
