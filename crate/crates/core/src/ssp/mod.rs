//! Stack smashing protection as a binary rewrite.
//!
//! The hardened scheme keeps the reference value in a mutable wasm global,
//! which guest stores cannot reach, and traps during start-up when the host
//! fails to provide randomness. The legacy scheme mirrors the wasi-libc
//! behaviour (reference value in linear memory, deterministic fallback) and
//! exists only as an audit baseline.

mod fault;
mod init;
mod rewrite;

use serde::Serialize;
use thiserror::Error;

use crate::layout::{find_stack_pointer, FrameInfo, SpLookup};
use crate::model::{
    encode, remap_function_indices, ConstExpr, DataSegment, ExternalKind, FuncBody, FuncType, GlobalDef,
    GlobalType, Import, ImportKind, Instr, ModelError, ValType, WasmModule, PAGE_SIZE, WASI_MODULE,
};

pub use fault::inject_fault_random;
pub use init::{build_init_function, build_legacy_init_function, LEGACY_FALLBACK_MULTIPLIER};
pub use rewrite::GuardAccess;

pub const RANDOM_GET: &str = "random_get";
pub const DEBUG_GUARD_EXPORT: &str = "__ssp_debug_guard";
pub const DEBUG_GUARD_ADDR_EXPORT: &str = "__ssp_debug_guard_addr";

#[derive(Debug, Error)]
pub enum SspError {
    #[error("no stack pointer global found")]
    NoStackPointer,
    #[error("ambiguous stack pointer candidates {0:?}; pass an explicit stack pointer global")]
    AmbiguousStackPointer(Vec<u32>),
    #[error("global {0} is not a mutable i32 and cannot be the stack pointer")]
    BadStackPointer(u32),
    #[error("existing import {WASI_MODULE}.{RANDOM_GET} has signature {0}, expected (i32, i32) -> i32")]
    RandomImportConflict(String),
    #[error("cannot rewrite frame of function {func}: {detail}")]
    FrameRewriteConflict { func: u32, detail: String },
    #[error("module is already instrumented ({0} present)")]
    AlreadyInstrumented(String),
    #[error("module does not import {WASI_MODULE}.{RANDOM_GET}")]
    ImportNotFound,
    #[error("no place to run the initializer: {0}")]
    NoInitHook(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Every recognized frame.
    All,
    /// Only frames of at least `heuristic_threshold` bytes.
    Heuristic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitHook {
    /// Start section when free, else head of the start function, else head of
    /// the exported `_start`.
    Auto,
    StartSection,
    PrependToStart,
    PrependToExport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SspConfig {
    pub mode: SelectionMode,
    pub heuristic_threshold: u32,
    /// Bytes added to each protected frame; the canary occupies the first 4.
    pub canary_slot_bytes: u32,
    pub guard_global_name: String,
    pub fail_func_name: String,
    pub init_func_name: String,
    pub init_hook: InitHook,
    pub wipe_scratch: bool,
    /// Stack pointer override for modules where discovery is ambiguous.
    pub sp_global: Option<u32>,
    /// Export the reference value (or its address, for the legacy scheme).
    pub debug_export: bool,
    /// Linear-memory slot for the legacy scheme's reference value.
    pub legacy_guard_addr: Option<u32>,
}

impl Default for SspConfig {
    fn default() -> Self {
        SspConfig {
            mode: SelectionMode::All,
            heuristic_threshold: 8,
            canary_slot_bytes: 16,
            guard_global_name: "__stack_chk_guard".into(),
            fail_func_name: "__stack_chk_fail".into(),
            init_func_name: "__ssp_init".into(),
            init_hook: InitHook::Auto,
            wipe_scratch: true,
            sp_global: None,
            debug_export: false,
            legacy_guard_addr: None,
        }
    }
}

impl SspConfig {
    fn check(&self) -> Result<(), SspError> {
        if self.canary_slot_bytes == 0 || !self.canary_slot_bytes.is_multiple_of(16) {
            return Err(SspError::InvalidConfig(format!(
                "canary slot must be a positive multiple of 16 bytes, got {}",
                self.canary_slot_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    None,
    Legacy,
    Hardened,
}

impl Flavor {
    pub const ALL: [Flavor; 3] = [Flavor::None, Flavor::Legacy, Flavor::Hardened];

    pub fn as_str(self) -> &'static str {
        match self {
            Flavor::None => "none",
            Flavor::Legacy => "legacy",
            Flavor::Hardened => "hardened",
        }
    }
}

impl std::str::FromStr for Flavor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Flavor::None),
            "legacy" => Ok(Flavor::Legacy),
            "hardened" => Ok(Flavor::Hardened),
            _ => Err(format!("unknown flavor {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    BelowThreshold,
    Unrecognized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedFunction {
    pub func_index: u32,
    pub reason: SkipReason,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InjectedFunctions {
    pub init: u32,
    pub fail: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstrumentationSummary {
    pub flavor: Flavor,
    pub sp_global: u32,
    pub functions_instrumented: u32,
    pub functions_skipped: Vec<SkippedFunction>,
    pub functions_frameless: u32,
    pub guard_global_index: Option<u32>,
    pub guard_address: Option<u32>,
    pub random_get_index: u32,
    pub injected_func_indices: InjectedFunctions,
    pub size_delta_bytes: i64,
}

fn random_get_type() -> FuncType {
    FuncType::new([ValType::I32, ValType::I32], [ValType::I32])
}

fn resolve_sp(m: &WasmModule, cfg: &SspConfig) -> Result<u32, SspError> {
    let sp = match cfg.sp_global {
        Some(g) => g,
        None => match find_stack_pointer(m) {
            SpLookup::Found { global, .. } => global,
            SpLookup::Absent => return Err(SspError::NoStackPointer),
            SpLookup::Ambiguous(c) => return Err(SspError::AmbiguousStackPointer(c)),
        },
    };
    match m.global_type(sp) {
        Some(GlobalType { ty: ValType::I32, mutable: true }) => Ok(sp),
        _ => Err(SspError::BadStackPointer(sp)),
    }
}

fn refuse_reinstrumentation(m: &WasmModule, cfg: &SspConfig) -> Result<(), SspError> {
    if m.global_by_name(&cfg.guard_global_name).is_some() {
        return Err(SspError::AlreadyInstrumented(format!("global {}", cfg.guard_global_name)));
    }
    if m.func_by_name(&cfg.init_func_name).is_some() {
        return Err(SspError::AlreadyInstrumented(format!("function {}", cfg.init_func_name)));
    }
    Ok(())
}

/// Finds or adds the `random_get` import. Returns the adjusted module, the
/// import's function index and how many function imports were inserted.
fn ensure_random_get(mut m: WasmModule) -> Result<(WasmModule, u32, u32), SspError> {
    if let Some((idx, t)) = m.find_func_import(WASI_MODULE, RANDOM_GET) {
        let ty = m.types.get(t as usize).cloned().unwrap_or_default();
        if ty != random_get_type() {
            return Err(SspError::RandomImportConflict(format!("{:?} -> {:?}", ty.params, ty.results)));
        }
        return Ok((m, idx, 0));
    }
    let t = m.ensure_type(random_get_type());
    m.imports.push(Import { module: WASI_MODULE.into(), field: RANDOM_GET.into(), kind: ImportKind::Func(t) });
    let idx = m.imported_func_count() - 1;
    let mut m = remap_function_indices(m, 1);
    m.names_mut().functions.insert(idx, RANDOM_GET.into());
    Ok((m, idx, 1))
}

fn add_function(m: &mut WasmModule, name: &str, ty: FuncType, body: FuncBody) -> u32 {
    let t = m.ensure_type(ty);
    m.functions.push(t);
    m.code.push(body);
    let idx = m.total_funcs() - 1;
    m.names_mut().functions.insert(idx, name.into());
    idx
}

fn hook_init(m: &mut WasmModule, hook: &InitHook, init: u32) -> Result<(), SspError> {
    let prepend = |m: &mut WasmModule, f: u32| -> Result<(), SspError> {
        let body = m
            .body_mut(f)
            .ok_or_else(|| SspError::NoInitHook(format!("function {f} is imported")))?;
        body.instrs.insert(0, Instr::Call(init));
        Ok(())
    };
    match hook {
        InitHook::StartSection => {
            if m.start.is_some() {
                return Err(SspError::NoInitHook("module already has a start function".into()));
            }
            m.start = Some(init);
            Ok(())
        }
        InitHook::PrependToStart => {
            let s = m.start.ok_or_else(|| SspError::NoInitHook("module has no start function".into()))?;
            prepend(m, s)
        }
        InitHook::PrependToExport(name) => {
            let f = m
                .find_export(name, ExternalKind::Func)
                .ok_or_else(|| SspError::NoInitHook(format!("no exported function {name:?}")))?;
            prepend(m, f)
        }
        InitHook::Auto => match m.start {
            None => {
                m.start = Some(init);
                Ok(())
            }
            Some(s) if m.body(s).is_some() => prepend(m, s),
            Some(_) => hook_init(m, &InitHook::PrependToExport("_start".into()), init),
        },
    }
}

struct Prepared {
    m: WasmModule,
    sp: u32,
    random_get: u32,
    frames: Vec<FrameInfo>,
}

fn prepare(m: &WasmModule, cfg: &SspConfig, frames: &[FrameInfo]) -> Result<Prepared, SspError> {
    cfg.check()?;
    refuse_reinstrumentation(m, cfg)?;
    let sp = resolve_sp(m, cfg)?;
    let old_imports = m.imported_func_count();
    let (m, random_get, inserted) = ensure_random_get(m.clone())?;
    let frames = frames
        .iter()
        .cloned()
        .map(|mut f| {
            if f.func_index >= old_imports {
                f.func_index += inserted;
            }
            f
        })
        .collect();
    Ok(Prepared { m, sp, random_get, frames })
}

/// Rewrites the selected frames. Returns (instrumented, skipped, frameless).
fn rewrite_frames(
    m: &mut WasmModule,
    cfg: &SspConfig,
    frames: &[FrameInfo],
    sp: u32,
    guard: GuardAccess,
    fail: u32,
) -> Result<(u32, Vec<SkippedFunction>, u32), SspError> {
    let mut instrumented = 0;
    let mut skipped = Vec::new();
    let mut frameless = 0;
    for f in frames {
        if f.is_frameless() {
            frameless += 1;
            continue;
        }
        if !f.recognized {
            log::warn!("skipping function {}: {}", f.func_index, f.note.as_deref().unwrap_or("unrecognized frame"));
            skipped.push(SkippedFunction { func_index: f.func_index, reason: SkipReason::Unrecognized, detail: f.note.clone() });
            continue;
        }
        if f.sp_global != sp {
            return Err(SspError::FrameRewriteConflict {
                func: f.func_index,
                detail: format!("frame uses stack pointer {} but {} was selected", f.sp_global, sp),
            });
        }
        if cfg.mode == SelectionMode::Heuristic && f.frame_size < cfg.heuristic_threshold {
            skipped.push(SkippedFunction {
                func_index: f.func_index,
                reason: SkipReason::BelowThreshold,
                detail: Some(format!("{} < {} bytes", f.frame_size, cfg.heuristic_threshold)),
            });
            continue;
        }
        let body = m.body_mut(f.func_index).ok_or_else(|| SspError::FrameRewriteConflict {
            func: f.func_index,
            detail: "not a defined function".into(),
        })?;
        rewrite::protect_frame(body, f, cfg.canary_slot_bytes, guard, fail)?;
        instrumented += 1;
    }
    Ok((instrumented, skipped, frameless))
}

fn size_delta(before: &WasmModule, after: &WasmModule) -> Result<i64, SspError> {
    Ok(encode(after)?.len() as i64 - encode(before)?.len() as i64)
}

/// Hardened instrumentation: reference value in a fresh mutable global,
/// filled from `random_get` at start-up, trapping when that fails.
pub fn instrument(
    m: &WasmModule,
    cfg: &SspConfig,
    frames: &[FrameInfo],
) -> Result<(WasmModule, InstrumentationSummary), SspError> {
    let Prepared { m: mut out, sp, random_get, frames } = prepare(m, cfg, frames)?;

    out.globals.push(GlobalDef { ty: GlobalType { ty: ValType::I32, mutable: true }, init: ConstExpr::I32(0) });
    let guard = out.total_globals() - 1;
    out.names_mut().globals.insert(guard, cfg.guard_global_name.clone());

    let fail = out.total_funcs();
    let (instrumented, skipped, frameless) =
        rewrite_frames(&mut out, cfg, &frames, sp, GuardAccess::Global(guard), fail)?;

    let fail_idx = add_function(&mut out, &cfg.fail_func_name, FuncType::default(), fail_body());
    debug_assert_eq!(fail_idx, fail);
    let init_body = build_init_function(cfg, sp, random_get, guard);
    let init = add_function(&mut out, &cfg.init_func_name, FuncType::default(), init_body);
    hook_init(&mut out, &cfg.init_hook, init)?;

    if cfg.debug_export {
        out.exports.push(crate::model::Export { name: DEBUG_GUARD_EXPORT.into(), kind: ExternalKind::Global, index: guard });
    }

    let summary = InstrumentationSummary {
        flavor: Flavor::Hardened,
        sp_global: sp,
        functions_instrumented: instrumented,
        functions_skipped: skipped,
        functions_frameless: frameless,
        guard_global_index: Some(guard),
        guard_address: None,
        random_get_index: random_get,
        injected_func_indices: InjectedFunctions { init, fail },
        size_delta_bytes: size_delta(m, &out)?,
    };
    Ok((out, summary))
}

/// The abort routine: a single `unreachable`.
fn fail_body() -> FuncBody {
    FuncBody { locals: vec![], instrs: vec![Instr::Unreachable, Instr::End] }
}

fn memory_bytes(m: &WasmModule) -> Option<u64> {
    m.memories
        .first()
        .map(|l| l.min)
        .or_else(|| {
            m.imports.iter().find_map(|i| match i.kind {
                ImportKind::Memory(l) => Some(l.min),
                _ => None,
            })
        })
        .map(|p| u64::from(p) * PAGE_SIZE)
}

/// Picks (or validates) the legacy guard slot and makes sure it is covered by
/// the data zone.
fn reserve_guard_slot(m: &mut WasmModule, cfg: &SspConfig) -> Result<u32, SspError> {
    let addr = match cfg.legacy_guard_addr {
        Some(a) => a,
        None => {
            let (_, hi) = m.data_range().ok_or_else(|| {
                SspError::InvalidConfig("no data zone to place the legacy guard in; pass a guard address".into())
            })?;
            hi.next_multiple_of(16)
        }
    };
    if addr % 4 != 0 {
        return Err(SspError::InvalidConfig(format!("guard address {addr} is not 4-byte aligned")));
    }
    let mem = memory_bytes(m).ok_or_else(|| SspError::InvalidConfig("module has no memory".into()))?;
    if u64::from(addr) + 4 > mem {
        return Err(SspError::InvalidConfig(format!("guard address {addr} lies outside the initial memory")));
    }
    let covered = m.data.iter().filter_map(DataSegment::const_range).any(|(lo, hi)| lo <= addr && addr + 4 <= hi);
    if !covered {
        m.data.push(DataSegment::active(addr as i32, vec![0u8; 4]));
        if let Some(n) = m.data_count.as_mut() {
            *n += 1;
        }
    }
    Ok(addr)
}

/// Baseline instrumentation mirroring the existing toolchain: reference
/// value in linear memory, deterministic fallback when `random_get` fails.
pub fn legacy_instrument(
    m: &WasmModule,
    cfg: &SspConfig,
    frames: &[FrameInfo],
) -> Result<(WasmModule, InstrumentationSummary), SspError> {
    let Prepared { m: mut out, sp, random_get, frames } = prepare(m, cfg, frames)?;
    let addr = reserve_guard_slot(&mut out, cfg)?;

    let fail = out.total_funcs();
    let (instrumented, skipped, frameless) =
        rewrite_frames(&mut out, cfg, &frames, sp, GuardAccess::Linear(addr), fail)?;

    add_function(&mut out, &cfg.fail_func_name, FuncType::default(), fail_body());
    let init = add_function(
        &mut out,
        &cfg.init_func_name,
        FuncType::default(),
        build_legacy_init_function(addr, random_get),
    );
    hook_init(&mut out, &cfg.init_hook, init)?;

    if cfg.debug_export {
        out.globals.push(GlobalDef {
            ty: GlobalType { ty: ValType::I32, mutable: false },
            init: ConstExpr::I32(addr as i32),
        });
        let g = out.total_globals() - 1;
        out.exports.push(crate::model::Export { name: DEBUG_GUARD_ADDR_EXPORT.into(), kind: ExternalKind::Global, index: g });
    }

    let summary = InstrumentationSummary {
        flavor: Flavor::Legacy,
        sp_global: sp,
        functions_instrumented: instrumented,
        functions_skipped: skipped,
        functions_frameless: frameless,
        guard_global_index: None,
        guard_address: Some(addr),
        random_get_index: random_get,
        injected_func_indices: InjectedFunctions { init, fail },
        size_delta_bytes: size_delta(m, &out)?,
    };
    Ok((out, summary))
}

/// Builds the requested flavor, discovering frames on the way.
pub fn build_flavor(
    m: &WasmModule,
    flavor: Flavor,
    cfg: &SspConfig,
) -> Result<(WasmModule, Option<InstrumentationSummary>), SspError> {
    if flavor == Flavor::None {
        return Ok((m.clone(), None));
    }
    let sp = resolve_sp(m, cfg)?;
    let frames = crate::layout::detect_frames(m, sp);
    let cfg = SspConfig { sp_global: Some(sp), ..cfg.clone() };
    let (out, summary) = match flavor {
        Flavor::Hardened => instrument(m, &cfg, &frames)?,
        Flavor::Legacy => legacy_instrument(m, &cfg, &frames)?,
        Flavor::None => unreachable!(),
    };
    Ok((out, Some(summary)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{detect_frames, STACK_POINTER_NAME};
    use crate::model::build::ModuleBuilder;
    use crate::model::{decode, validate, MemArg};

    fn frame_body(size: i32) -> Vec<Instr> {
        vec![
            Instr::GlobalGet(0),
            Instr::I32Const(size),
            Instr::I32Sub,
            Instr::LocalTee(0),
            Instr::GlobalSet(0),
            Instr::LocalGet(0),
            Instr::I32Const(0x41),
            Instr::I32Store8(MemArg::byte(0)),
            Instr::LocalGet(0),
            Instr::I32Const(size),
            Instr::I32Add,
            Instr::GlobalSet(0),
        ]
    }

    /// `_start` (frameless) calls a 4-byte and a 32-byte frame.
    fn sample(with_random: bool) -> WasmModule {
        let mut b = ModuleBuilder::new();
        if with_random {
            b.import_func(WASI_MODULE, RANDOM_GET, random_get_type());
        }
        b.memory(2, None);
        b.global(ValType::I32, true, ConstExpr::I32(65536), Some(STACK_POINTER_NAME));
        let small = b.func("small", FuncType::default(), vec![(1, ValType::I32)], frame_body(4));
        let big = b.func("big", FuncType::default(), vec![(1, ValType::I32)], frame_body(32));
        let start = b.func("_start", FuncType::default(), vec![], vec![Instr::Call(small), Instr::Call(big)]);
        b.export("_start", ExternalKind::Func, start);
        b.data(65536, b"hello".to_vec());
        b.finish()
    }

    fn run(m: &WasmModule, cfg: &SspConfig) -> Result<(WasmModule, InstrumentationSummary), SspError> {
        instrument(m, cfg, &detect_frames(m, 0))
    }

    #[test]
    fn hardened_adds_import_global_and_functions() {
        let m = sample(false);
        let (out, s) = run(&m, &SspConfig::default()).unwrap();
        assert!(validate(&out).is_empty(), "{:?}", validate(&out));
        assert_eq!(s.random_get_index, 0);
        assert_eq!(s.functions_instrumented, 2);
        assert_eq!(s.functions_frameless, 1);
        assert!(s.functions_skipped.is_empty());
        let g = s.guard_global_index.unwrap();
        assert_eq!(out.global_name(g), Some("__stack_chk_guard"));
        assert_eq!(out.global_type(g), Some(GlobalType { ty: ValType::I32, mutable: true }));
        assert_eq!(out.func_name(s.injected_func_indices.fail), Some("__stack_chk_fail"));
        assert_eq!(out.start, Some(s.injected_func_indices.init));
        // _start moved from 2 to 3 and still calls the shifted frames
        let start = out.find_export("_start", ExternalKind::Func).unwrap();
        assert_eq!(out.body(start).unwrap().instrs[..2], [Instr::Call(1), Instr::Call(2)]);
        let bytes = encode(&out).unwrap();
        assert_eq!(decode(&bytes).unwrap(), out);
        assert_eq!(s.size_delta_bytes, bytes.len() as i64 - encode(&m).unwrap().len() as i64);
        // only the initializer writes the reference value
        let writers: Vec<u32> = (out.imported_func_count()..out.total_funcs())
            .filter(|f| out.body(*f).unwrap().instrs.contains(&Instr::GlobalSet(g)))
            .collect();
        assert_eq!(writers, vec![s.injected_func_indices.init]);
    }

    #[test]
    fn existing_import_is_reused() {
        let (out, s) = run(&sample(true), &SspConfig::default()).unwrap();
        assert_eq!(s.random_get_index, 0);
        assert_eq!(out.imported_func_count(), 1);
    }

    #[test]
    fn wrong_random_get_signature() {
        let mut b = ModuleBuilder::new();
        b.import_func(WASI_MODULE, RANDOM_GET, FuncType::new([ValType::I32], [ValType::I32]));
        b.global(ValType::I32, true, ConstExpr::I32(65536), Some(STACK_POINTER_NAME));
        let m = b.finish();
        assert!(matches!(run(&m, &SspConfig::default()), Err(SspError::RandomImportConflict(_))));
    }

    #[test]
    fn second_pass_is_refused() {
        let (out, _) = run(&sample(false), &SspConfig::default()).unwrap();
        assert!(matches!(run(&out, &SspConfig::default()), Err(SspError::AlreadyInstrumented(_))));
    }

    #[test]
    fn missing_stack_pointer() {
        let m = WasmModule::default();
        assert!(matches!(instrument(&m, &SspConfig::default(), &[]), Err(SspError::NoStackPointer)));
    }

    #[test]
    fn heuristic_skips_small_frames() {
        let cfg = SspConfig { mode: SelectionMode::Heuristic, ..Default::default() };
        let (_, s) = run(&sample(false), &cfg).unwrap();
        assert_eq!(s.functions_instrumented, 1);
        assert_eq!(s.functions_skipped.len(), 1);
        assert_eq!(s.functions_skipped[0].reason, SkipReason::BelowThreshold);
        assert_eq!(s.functions_skipped[0].func_index, 1);
    }

    #[test]
    fn init_hook_variants() {
        let m = sample(false);
        let cfg = SspConfig { init_hook: InitHook::PrependToExport("_start".into()), ..Default::default() };
        let (out, s) = run(&m, &cfg).unwrap();
        assert_eq!(out.start, None);
        let start = out.find_export("_start", ExternalKind::Func).unwrap();
        assert_eq!(out.body(start).unwrap().instrs[0], Instr::Call(s.injected_func_indices.init));

        let cfg = SspConfig { init_hook: InitHook::PrependToStart, ..Default::default() };
        assert!(matches!(run(&m, &cfg), Err(SspError::NoInitHook(_))));

        let mut with_start = m.clone();
        with_start.start = Some(2);
        let (out, s) = run(&with_start, &SspConfig::default()).unwrap();
        assert_eq!(out.start, Some(3));
        assert_eq!(out.body(3).unwrap().instrs[0], Instr::Call(s.injected_func_indices.init));
    }

    #[test]
    fn debug_export() {
        let cfg = SspConfig { debug_export: true, ..Default::default() };
        let (out, s) = run(&sample(false), &cfg).unwrap();
        assert_eq!(out.find_export(DEBUG_GUARD_EXPORT, ExternalKind::Global), s.guard_global_index);
    }

    #[test]
    fn legacy_places_guard_after_data() {
        let m = sample(false);
        let (out, s) = legacy_instrument(&m, &SspConfig::default(), &detect_frames(&m, 0)).unwrap();
        assert!(validate(&out).is_empty());
        assert_eq!(s.guard_address, Some(65552));
        assert_eq!(s.guard_global_index, None);
        assert!(out.data.iter().any(|d| d.const_range() == Some((65552, 65556))));
        let init = out.body(s.injected_func_indices.init).unwrap();
        assert!(init.instrs.contains(&Instr::I32Const(LEGACY_FALLBACK_MULTIPLIER)));
    }

    #[test]
    fn legacy_explicit_slot_must_fit() {
        let m = sample(false);
        let cfg = SspConfig { legacy_guard_addr: Some(2 * 65536), ..Default::default() };
        assert!(matches!(
            legacy_instrument(&m, &cfg, &detect_frames(&m, 0)),
            Err(SspError::InvalidConfig(_))
        ));
    }

    #[test]
    fn slot_size_must_be_multiple_of_16() {
        let cfg = SspConfig { canary_slot_bytes: 8, ..Default::default() };
        assert!(matches!(run(&sample(false), &cfg), Err(SspError::InvalidConfig(_))));
    }
}
