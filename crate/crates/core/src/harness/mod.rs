//! Runs guests in an embedded engine and sorts each execution into one
//! outcome category.

mod wasi;

use std::collections::BTreeMap;
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;
use wasmtime::{Config, Engine, Instance, Linker, Module, Store, Trap, Val, WasmBacktrace};

use crate::ssp::{Flavor, DEBUG_GUARD_ADDR_EXPORT, DEBUG_GUARD_EXPORT};
pub use wasi::ProcExit;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(20);
/// Optional fuel budget per run, read from the environment.
pub const FUEL_ENV: &str = "WSSP_ENGINE_FUEL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "bytes", rename_all = "snake_case")]
pub enum RandomMode {
    /// Entropy from the host OS.
    Host,
    /// Cycles through the given bytes.
    Fixed(Vec<u8>),
    /// `random_get` reports an I/O error and leaves the buffer alone.
    Fail,
}

impl std::str::FromStr for RandomMode {
    type Err = String;

    /// `host`, `fail`, or `fixed:HEX` (at least 4 bytes, used cyclically).
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "host" => Ok(RandomMode::Host),
            "fail" => Ok(RandomMode::Fail),
            _ => {
                let hex = s.strip_prefix("fixed:").ok_or_else(|| format!("expected host, fail or fixed:HEX, got {s:?}"))?;
                if hex.len() % 2 != 0 || hex.len() < 8 {
                    return Err("fixed entropy needs an even number of hex digits, at least 8".into());
                }
                (0..hex.len())
                    .step_by(2)
                    .map(|i| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| format!("bad hex {hex:?}: {e}")))
                    .collect::<Result<Vec<u8>, _>>()
                    .map(RandomMode::Fixed)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub module: Vec<u8>,
    pub random_mode: RandomMode,
    pub timeout: Duration,
    pub stdin: Vec<u8>,
    pub argv: Vec<String>,
    pub env: Vec<(String, String)>,
    pub fail_symbol: String,
    pub init_symbol: String,
    /// Overrides `WSSP_ENGINE_FUEL` when set.
    pub fuel: Option<u64>,
}

impl RunSpec {
    pub fn new(module: Vec<u8>, random_mode: RandomMode) -> Self {
        RunSpec {
            module,
            random_mode,
            timeout: DEFAULT_TIMEOUT,
            stdin: vec![],
            argv: vec!["guest".into()],
            env: vec![],
            fail_symbol: "__stack_chk_fail".into(),
            init_symbol: "__ssp_init".into(),
            fuel: None,
        }
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    fn check(&self) -> Result<(), HarnessError> {
        if let RandomMode::Fixed(b) = &self.random_mode {
            if b.len() < 4 {
                return Err(HarnessError::InvalidSpec("fixed entropy needs at least 4 bytes".into()));
            }
        }
        if self.timeout.is_zero() {
            return Err(HarnessError::InvalidSpec("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("engine rejected module: {0}")]
    EngineReject(String),
    #[error("invalid run spec: {0}")]
    InvalidSpec(String),
    #[error("harness error: {0}")]
    Harness(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
pub enum OutcomeCategory {
    Silent,
    MemoryFault,
    SspFault,
    Timeout,
    StartupAbort,
}

impl OutcomeCategory {
    pub const ALL: [OutcomeCategory; 5] = [
        OutcomeCategory::Silent,
        OutcomeCategory::MemoryFault,
        OutcomeCategory::SspFault,
        OutcomeCategory::Timeout,
        OutcomeCategory::StartupAbort,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeCategory::Silent => "Silent",
            OutcomeCategory::MemoryFault => "MemoryFault",
            OutcomeCategory::SspFault => "SspFault",
            OutcomeCategory::Timeout => "Timeout",
            OutcomeCategory::StartupAbort => "StartupAbort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "category")]
pub enum RunOutcome {
    Silent { exit_code: i32, stdout: String },
    /// Engine trap outside the fail routine and initializer.
    MemoryFault { trap: String, symbol: Option<String> },
    SspFault { symbol: String },
    Timeout,
    StartupAbort,
}

impl RunOutcome {
    pub fn category(&self) -> OutcomeCategory {
        match self {
            RunOutcome::Silent { .. } => OutcomeCategory::Silent,
            RunOutcome::MemoryFault { .. } => OutcomeCategory::MemoryFault,
            RunOutcome::SspFault { .. } => OutcomeCategory::SspFault,
            RunOutcome::Timeout => OutcomeCategory::Timeout,
            RunOutcome::StartupAbort => OutcomeCategory::StartupAbort,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub duration_ms: u64,
    #[serde(skip)]
    pub stdout: Vec<u8>,
    #[serde(skip)]
    pub stderr: Vec<u8>,
    /// Reference value read through the debug export, when present.
    pub debug_guard: Option<u32>,
}

fn fuel_budget(spec: &RunSpec) -> Option<u64> {
    spec.fuel.or_else(|| {
        let raw = std::env::var(FUEL_ENV).ok()?;
        match raw.trim().parse() {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("ignoring {FUEL_ENV}={raw:?}: not an unsigned integer");
                None
            }
        }
    })
}

fn read_debug_guard(store: &mut Store<wasi::Ctx>, instance: &Instance) -> Option<u32> {
    if let Some(g) = instance.get_global(&mut *store, DEBUG_GUARD_EXPORT) {
        if let Val::I32(v) = g.get(&mut *store) {
            return Some(v as u32);
        }
    }
    let addr = match instance.get_global(&mut *store, DEBUG_GUARD_ADDR_EXPORT)?.get(&mut *store) {
        Val::I32(a) => a as u32 as usize,
        _ => return None,
    };
    let mem = instance.get_memory(&mut *store, "memory")?;
    let bytes = mem.data(&*store).get(addr..addr + 4)?;
    Some(u32::from_le_bytes(bytes.try_into().ok()?))
}

/// Stops the watchdog when dropped.
struct Watchdog(Option<mpsc::Sender<()>>, Option<std::thread::JoinHandle<()>>);

impl Watchdog {
    fn start(engine: &Engine, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::channel::<()>();
        let engine = engine.clone();
        let h = std::thread::spawn(move || {
            if let Err(mpsc::RecvTimeoutError::Timeout) = rx.recv_timeout(timeout) {
                engine.increment_epoch();
            }
        });
        Watchdog(Some(tx), Some(h))
    }
}

impl Drop for Watchdog {
    fn drop(&mut self) {
        drop(self.0.take());
        if let Some(h) = self.1.take() {
            let _ = h.join();
        }
    }
}

fn classify(err: &wasmtime::Error, spec: &RunSpec, stdout: &[u8]) -> Result<RunOutcome, HarnessError> {
    if let Some(ProcExit(code)) = err.downcast_ref::<ProcExit>() {
        return Ok(RunOutcome::Silent { exit_code: *code, stdout: String::from_utf8_lossy(stdout).into_owned() });
    }
    let Some(trap) = err.downcast_ref::<Trap>() else {
        return Err(HarnessError::Harness(format!("{err:#}")));
    };
    if matches!(trap, Trap::Interrupt | Trap::OutOfFuel) {
        return Ok(RunOutcome::Timeout);
    }
    let symbol = err
        .downcast_ref::<WasmBacktrace>()
        .and_then(|bt| bt.frames().first())
        .and_then(|f| f.func_name().map(str::to_owned));
    Ok(match symbol.as_deref() {
        Some(s) if s == spec.fail_symbol => RunOutcome::SspFault { symbol: s.to_owned() },
        Some(s) if s == spec.init_symbol && stdout.is_empty() => RunOutcome::StartupAbort,
        _ => RunOutcome::MemoryFault { trap: format!("{trap:?}"), symbol },
    })
}

/// Runs only the engine's validator over `bytes`.
pub fn engine_validate(bytes: &[u8]) -> Result<(), HarnessError> {
    let engine = Engine::new(&Config::new()).map_err(|e| HarnessError::Harness(format!("{e:#}")))?;
    Module::validate(&engine, bytes).map_err(|e| HarnessError::EngineReject(format!("{e:#}")))
}

/// Executes `_start` (after any start function) and classifies the result.
pub fn run(spec: &RunSpec) -> Result<RunReport, HarnessError> {
    spec.check()?;
    let fuel = fuel_budget(spec);
    let mut config = Config::new();
    config.epoch_interruption(true);
    config.consume_fuel(fuel.is_some());
    let engine = Engine::new(&config).map_err(|e| HarnessError::Harness(format!("{e:#}")))?;
    let module = Module::new(&engine, &spec.module).map_err(|e| HarnessError::EngineReject(format!("{e:#}")))?;

    let mut linker = Linker::new(&engine);
    wasi::link(&mut linker, &module).map_err(|e| HarnessError::Harness(format!("{e:#}")))?;
    linker
        .define_unknown_imports_as_default_values(&mut Store::new(&engine, ctx(spec)), &module)
        .map_err(|e| HarnessError::EngineReject(format!("{e:#}")))?;

    let mut store = Store::new(&engine, ctx(spec));
    store.set_epoch_deadline(1);
    store.epoch_deadline_trap();
    if let Some(f) = fuel {
        store.set_fuel(f).map_err(|e| HarnessError::Harness(format!("{e:#}")))?;
    }

    let started = Instant::now();
    let watchdog = Watchdog::start(&engine, spec.timeout);
    let mut instance = None;
    let result = linker.instantiate(&mut store, &module).and_then(|inst| {
        instance = Some(inst);
        match inst.get_typed_func::<(), ()>(&mut store, "_start") {
            Ok(f) => f.call(&mut store, ()),
            Err(_) if inst.get_export(&mut store, "_start").is_none() => Ok(()),
            Err(e) => Err(e),
        }
    });
    drop(watchdog);
    let duration_ms = started.elapsed().as_millis() as u64;

    let outcome = match &result {
        Ok(()) => RunOutcome::Silent {
            exit_code: 0,
            stdout: String::from_utf8_lossy(&store.data().stdout).into_owned(),
        },
        Err(e) => classify(e, spec, &store.data().stdout)?,
    };
    let debug_guard = instance.and_then(|i| read_debug_guard(&mut store, &i));
    let data = store.data_mut();
    Ok(RunReport {
        outcome,
        duration_ms,
        stdout: std::mem::take(&mut data.stdout),
        stderr: std::mem::take(&mut data.stderr),
        debug_guard,
    })
}

fn ctx(spec: &RunSpec) -> wasi::Ctx {
    wasi::Ctx {
        stdout: vec![],
        stderr: vec![],
        stdin: spec.stdin.clone(),
        stdin_pos: 0,
        random: spec.random_mode.clone(),
        random_cursor: 0,
        args: spec.argv.clone(),
        env: spec.env.iter().map(|(k, v)| format!("{k}={v}")).collect(),
        started: Instant::now(),
    }
}

#[derive(Debug, Clone)]
pub struct MatrixEntry {
    pub name: String,
    pub flavor: Flavor,
    /// Label for the entropy configuration (for reporting only).
    pub mode: String,
    pub spec: RunSpec,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub name: String,
    pub flavor: Flavor,
    pub mode: String,
    pub outcome: Option<RunOutcome>,
    pub error: Option<String>,
    pub duration_ms: u64,
    #[serde(skip)]
    pub debug_guard: Option<u32>,
}

impl RunRecord {
    /// Category name, or `"Error"` when the run could not be carried out.
    pub fn label(&self) -> &'static str {
        self.outcome.as_ref().map(|o| o.category().as_str()).unwrap_or("Error")
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvalReport {
    pub runs: Vec<RunRecord>,
    pub summary: BTreeMap<String, BTreeMap<String, u32>>,
}

impl EvalReport {
    fn from_runs(runs: Vec<RunRecord>) -> Self {
        let mut summary: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        for r in &runs {
            *summary.entry(r.flavor.as_str().into()).or_default().entry(r.label().into()).or_default() += 1;
        }
        EvalReport { runs, summary }
    }

    /// Aligned text table: one row per flavor, one column per category.
    pub fn table(&self) -> String {
        let mut cols: Vec<String> = OutcomeCategory::ALL.iter().map(|c| c.as_str().to_string()).collect();
        if self.summary.values().any(|m| m.contains_key("Error")) {
            cols.push("Error".into());
        }
        let mut out = format!("{:<10}", "flavor");
        for c in &cols {
            out.push_str(&format!(" {c:>12}"));
        }
        out.push('\n');
        for f in Flavor::ALL {
            let Some(row) = self.summary.get(f.as_str()) else { continue };
            out.push_str(&format!("{:<10}", f.as_str()));
            for c in &cols {
                out.push_str(&format!(" {:>12}", row.get(c).copied().unwrap_or(0)));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every entry on up to `jobs` worker threads, each run in its own
/// engine. Failures are recorded per entry and never stop the matrix.
pub fn run_matrix(entries: &[MatrixEntry], jobs: usize) -> EvalReport {
    let jobs = jobs.max(1).min(entries.len().max(1));
    let next = Mutex::new(0usize);
    let slots: Vec<Mutex<Option<RunRecord>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(e) = entries.get(i) else { break };
                let started = Instant::now();
                let rec = match run(&e.spec) {
                    Ok(r) => RunRecord {
                        name: e.name.clone(),
                        flavor: e.flavor,
                        mode: e.mode.clone(),
                        outcome: Some(r.outcome),
                        error: None,
                        duration_ms: r.duration_ms,
                        debug_guard: r.debug_guard,
                    },
                    Err(err) => RunRecord {
                        name: e.name.clone(),
                        flavor: e.flavor,
                        mode: e.mode.clone(),
                        outcome: None,
                        error: Some(err.to_string()),
                        duration_ms: started.elapsed().as_millis() as u64,
                        debug_guard: None,
                    },
                };
                log::debug!("{} [{} {}] -> {}", rec.name, rec.flavor.as_str(), rec.mode, rec.label());
                *slots[i].lock().unwrap() = Some(rec);
            });
        }
    });
    EvalReport::from_runs(slots.into_iter().map(|m| m.into_inner().unwrap().expect("every entry ran")).collect())
}
