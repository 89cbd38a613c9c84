//! Static audit of SSP robustness.
//!
//! * P1: the reference value stays secret even when the host cannot supply
//!   randomness (no deterministic fallback).
//! * P2a: the reference value cannot be reached by a contiguous overflow from
//!   the stack.
//! * P2b: the reference value's storage is not writable by guest stores.
//! * P3: execution stops immediately once a corrupted canary is detected.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::layout::{classify_layout, reachable_by_ascending_overflow, LayoutReport};
use crate::model::{Instr, WasmModule, WASI_MODULE};
use crate::ssp::{LEGACY_FALLBACK_MULTIPLIER, RANDOM_GET};

pub const GUARD_NAME: &str = "__stack_chk_guard";
pub const FAIL_NAME: &str = "__stack_chk_fail";
/// Instructions examined from the entry of the fail routine.
pub const P3_BUDGET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuardLocation {
    Global { index: u32 },
    LinearMemory { address: u32 },
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    Pass,
    Fail,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub site: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub rationale: String,
    pub evidence: Vec<Evidence>,
}

impl Verdict {
    fn new(verdict: VerdictKind, rationale: impl Into<String>) -> Self {
        Verdict { verdict, rationale: rationale.into(), evidence: vec![] }
    }

    fn pass(r: impl Into<String>) -> Self {
        Self::new(VerdictKind::Pass, r)
    }

    fn fail(r: impl Into<String>) -> Self {
        Self::new(VerdictKind::Fail, r)
    }

    fn unknown(r: impl Into<String>) -> Self {
        Self::new(VerdictKind::Unknown, r)
    }

    fn with(mut self, site: impl Into<String>, description: impl Into<String>) -> Self {
        self.evidence.push(Evidence { site: site.into(), description: description.into() });
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Properties {
    #[serde(rename = "P1")]
    pub p1: Verdict,
    #[serde(rename = "P2a")]
    pub p2a: Verdict,
    #[serde(rename = "P2b")]
    pub p2b: Verdict,
    #[serde(rename = "P3")]
    pub p3: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RobustnessReport {
    pub guard_location: GuardLocation,
    pub layout: LayoutReport,
    pub properties: Properties,
}

impl RobustnessReport {
    pub fn verdicts(&self) -> [(&'static str, VerdictKind); 4] {
        let p = &self.properties;
        [("P1", p.p1.verdict), ("P2a", p.p2a.verdict), ("P2b", p.p2b.verdict), ("P3", p.p3.verdict)]
    }

    /// 0 when every property passes, 2 when any fails, 3 when some are unknown
    /// and none fail.
    pub fn exit_code(&self) -> i32 {
        let v = self.verdicts().map(|(_, v)| v);
        if v.contains(&VerdictKind::Fail) {
            2
        } else if v.contains(&VerdictKind::Unknown) {
            3
        } else {
            0
        }
    }
}

fn site(m: &WasmModule, func: u32, pc: usize) -> String {
    match m.func_name(func) {
        Some(n) => format!("func {func} ({n}) instr {pc}"),
        None => format!("func {func} instr {pc}"),
    }
}

fn body_starts_with_unreachable(m: &WasmModule, f: u32) -> bool {
    m.body(f).is_some_and(|b| b.instrs.first() == Some(&Instr::Unreachable))
}

fn is_fail_candidate(m: &WasmModule, f: u32) -> bool {
    m.func_name(f) == Some(FAIL_NAME) || body_starts_with_unreachable(m, f)
}

/// Guard access ending right before `end`: `global.get g` or
/// `i32.const a; i32.load off`. Returns the location and its first index.
fn guard_access_before(instrs: &[Instr], end: usize) -> Option<(GuardLocation, usize)> {
    let last = instrs.get(end.checked_sub(1)?)?;
    match last {
        Instr::GlobalGet(g) => Some((GuardLocation::Global { index: *g }, end - 1)),
        Instr::I32Load(arg) => match instrs.get(end.checked_sub(2)?)? {
            Instr::I32Const(a) => Some((
                GuardLocation::LinearMemory { address: (*a as u32).wrapping_add(arg.offset) },
                end - 2,
            )),
            _ => None,
        },
        _ => None,
    }
}

/// Frame-relative load ending right before `end`: `(local.get|global.get); i32.load`.
fn frame_load_before(instrs: &[Instr], end: usize) -> bool {
    end >= 2
        && matches!(instrs[end - 1], Instr::I32Load(_))
        && matches!(instrs[end - 2], Instr::LocalGet(_) | Instr::GlobalGet(_))
}

#[derive(Debug, Clone, Copy)]
struct CanaryCheck {
    guard: GuardLocation,
    fail: u32,
}

fn canary_checks(m: &WasmModule) -> Vec<CanaryCheck> {
    let mut out = Vec::new();
    for body in &m.code {
        let ins = &body.instrs;
        for k in 0..ins.len() {
            let fail = match (&ins[k], ins.get(k + 1), ins.get(k + 2)) {
                (Instr::I32Ne, Some(Instr::If(_)), Some(Instr::Call(f))) => *f,
                (Instr::I32Eq, Some(Instr::BrIf(_)), Some(Instr::Call(f))) => *f,
                _ => continue,
            };
            if !is_fail_candidate(m, fail) {
                continue;
            }
            // operands in either order: frame load then guard, or guard then frame load
            let guard = match guard_access_before(ins, k) {
                Some((g, start)) if frame_load_before(ins, start) => Some(g),
                _ if frame_load_before(ins, k) => guard_access_before(ins, k - 2).map(|(g, _)| g),
                _ => None,
            };
            if let Some(guard) = guard {
                out.push(CanaryCheck { guard, fail });
            }
        }
    }
    out
}

/// Where the reference value lives: a global named `__stack_chk_guard`, or
/// whatever the canary comparisons read.
pub fn locate_guard(m: &WasmModule) -> GuardLocation {
    if let Some(g) = m.global_by_name(GUARD_NAME) {
        return GuardLocation::Global { index: g };
    }
    let checks = canary_checks(m);
    let mut counts: Vec<(GuardLocation, usize)> = Vec::new();
    for c in &checks {
        match counts.iter_mut().find(|(g, _)| *g == c.guard) {
            Some((_, n)) => *n += 1,
            None => counts.push((c.guard, 1)),
        }
    }
    counts.into_iter().max_by_key(|(_, n)| *n).map(|(g, _)| g).unwrap_or(GuardLocation::NotFound)
}

#[derive(Debug)]
enum PathEnd {
    Terminates(usize, String),
    WritesGuard(usize, String),
    Undecided(usize, String),
}

/// Walks an error path starting at `pc` until it terminates, writes the
/// reference value, or leaves the region the linear scan can follow.
fn walk_error_path(m: &WasmModule, instrs: &[Instr], start: usize, guard: GuardLocation, proc_exit: Option<u32>) -> PathEnd {
    // tiny constant tracker for store addresses
    let mut stack: Vec<Option<i64>> = Vec::new();
    let pop = |s: &mut Vec<Option<i64>>| s.pop().flatten();
    let mut depth: u32 = 0;
    let mut pc = start;
    while pc < instrs.len() {
        let i = &instrs[pc];
        match i {
            Instr::Unreachable if depth == 0 => return PathEnd::Terminates(pc, "unreachable".into()),
            Instr::Call(f) if depth == 0 && Some(*f) == proc_exit => {
                return PathEnd::Terminates(pc, "call to proc_exit".into())
            }
            Instr::Call(f) if depth == 0 && body_starts_with_unreachable(m, *f) => {
                return PathEnd::Terminates(pc, format!("call to trapping function {f}"))
            }
            Instr::Call(f) if *f < m.imported_func_count() => stack.clear(),
            Instr::Call(f) | Instr::CallIndirect { type_index: f, .. } => {
                return PathEnd::Undecided(pc, format!("call with unknown effect (index {f})"))
            }
            Instr::GlobalSet(g) => {
                if guard == (GuardLocation::Global { index: *g }) {
                    return PathEnd::WritesGuard(pc, format!("global.set {g}"));
                }
                pop(&mut stack);
            }
            i if i.is_store() => {
                let off = match i {
                    Instr::I32Store(a) | Instr::I32Store8(a) | Instr::I32Store16(a) => Some(a.offset),
                    _ => None,
                };
                pop(&mut stack);
                let addr = pop(&mut stack);
                if let GuardLocation::LinearMemory { address } = guard {
                    match (addr, off) {
                        (Some(a), Some(o)) => {
                            let target = (a as u32).wrapping_add(o);
                            if target.abs_diff(address) < 4 {
                                return PathEnd::WritesGuard(pc, format!("store to guard slot {target}"));
                            }
                        }
                        _ => return PathEnd::Undecided(pc, "store to an address the scan cannot resolve".into()),
                    }
                }
                stack.clear();
            }
            Instr::I32Const(v) => stack.push(Some(i64::from(*v as u32))),
            Instr::I32Mul | Instr::I32Add => {
                let (b, a) = (pop(&mut stack), pop(&mut stack));
                let r = match (i, a, b) {
                    (Instr::I32Mul, Some(a), Some(b)) => Some(((a as u32).wrapping_mul(b as u32)) as i64),
                    (Instr::I32Add, Some(a), Some(b)) => Some(((a as u32).wrapping_add(b as u32)) as i64),
                    _ => None,
                };
                stack.push(r);
            }
            Instr::Return => return PathEnd::Undecided(pc, "returns without trapping".into()),
            Instr::Br(l) | Instr::BrIf(l) if *l >= depth => {
                return PathEnd::Undecided(pc, "branches out of the scanned region".into())
            }
            Instr::BrTable { .. } => return PathEnd::Undecided(pc, "br_table in error path".into()),
            Instr::Block(_) | Instr::Loop(_) | Instr::If(_) => {
                if matches!(i, Instr::If(_)) {
                    pop(&mut stack);
                }
                depth += 1;
            }
            Instr::Else if depth == 0 => {
                // end of the error arm: resume after the matching end
                pc = match matching_end(instrs, pc + 1) {
                    Some(e) => e + 1,
                    None => return PathEnd::Undecided(pc, "unbalanced nesting".into()),
                };
                stack.clear();
                continue;
            }
            Instr::End if depth == 0 => {
                if pc + 1 == instrs.len() {
                    return PathEnd::Undecided(pc, "reaches the function end without trapping".into());
                }
            }
            Instr::End => depth -= 1,
            Instr::LocalGet(_) | Instr::GlobalGet(_) => stack.push(None),
            i if i.is_load() => {
                pop(&mut stack);
                stack.push(None);
            }
            _ => stack.clear(),
        }
        pc += 1;
    }
    PathEnd::Undecided(pc, "ran off the body".into())
}

/// Index of the `end` closing the block whose body starts at `from`.
fn matching_end(instrs: &[Instr], from: usize) -> Option<usize> {
    let mut d = 0u32;
    for (pc, i) in instrs.iter().enumerate().skip(from) {
        if i.opens_block() {
            d += 1;
        } else if *i == Instr::End {
            if d == 0 {
                return Some(pc);
            }
            d -= 1;
        }
    }
    None
}

/// `else` at the same level as the block body starting at `from`, if any.
fn matching_else(instrs: &[Instr], from: usize) -> Option<usize> {
    let mut d = 0u32;
    for (pc, i) in instrs.iter().enumerate().skip(from) {
        match i {
            i if i.opens_block() => d += 1,
            Instr::End if d == 0 => return None,
            Instr::End => d -= 1,
            Instr::Else if d == 0 => return Some(pc),
            _ => {}
        }
    }
    None
}

/// Start of the errno≠0 path for a `random_get` result consumed at `pc`.
fn error_path_start(instrs: &[Instr], pc: usize) -> Result<usize, String> {
    match (instrs.get(pc), instrs.get(pc + 1)) {
        (Some(Instr::If(_)), _) => Ok(pc + 1),
        (Some(Instr::I32Eqz), Some(Instr::If(_))) => {
            let body = pc + 2;
            match matching_else(instrs, body) {
                Some(e) => Ok(e + 1),
                None => matching_end(instrs, body).map(|e| e + 1).ok_or_else(|| "unbalanced nesting".into()),
            }
        }
        (Some(Instr::LocalSet(l) | Instr::LocalTee(l)), _) => {
            let tee = matches!(instrs[pc], Instr::LocalTee(_));
            if tee && matches!(instrs.get(pc + 1), Some(Instr::If(_))) {
                return Ok(pc + 2);
            }
            let next = instrs[pc + 1..]
                .iter()
                .position(|i| *i == Instr::LocalGet(*l))
                .map(|p| pc + 1 + p)
                .ok_or_else(|| "errno stored in a local that is never read".to_string())?;
            error_path_start(instrs, next + 1)
        }
        (Some(Instr::Drop), _) => Err("errno is discarded".into()),
        _ => Err("errno consumer not recognized by the linear scan".into()),
    }
}

fn has_fallback_multiply(instrs: &[Instr], from: usize, to: usize) -> bool {
    let w = &instrs[from..to.min(instrs.len())];
    w.iter()
        .position(|i| *i == Instr::I32Const(LEGACY_FALLBACK_MULTIPLIER))
        .is_some_and(|p| w[p..].contains(&Instr::I32Mul))
}

/// P1: does the initializer refuse to run on a `random_get` failure, or does
/// it install a predictable reference value?
pub fn check_p1(m: &WasmModule) -> Verdict {
    check_p1_with(m, locate_guard(m))
}

fn check_p1_with(m: &WasmModule, guard: GuardLocation) -> Verdict {
    let Some((rg, _)) = m.find_func_import(WASI_MODULE, RANDOM_GET) else {
        return Verdict::unknown("module does not import random_get");
    };
    if guard == GuardLocation::NotFound {
        return Verdict::unknown("no reference value located");
    }
    let proc_exit = m.find_func_import(WASI_MODULE, "proc_exit").map(|(i, _)| i);
    let imported = m.imported_func_count();

    let mut passes = Vec::new();
    let mut undecided = Vec::new();
    for (i, body) in m.code.iter().enumerate() {
        let func = imported + i as u32;
        let ins = &body.instrs;
        for pc in 0..ins.len() {
            if ins[pc] != Instr::Call(rg) {
                continue;
            }
            let start = match error_path_start(ins, pc + 1) {
                Ok(s) => s,
                Err(why) => {
                    if why.contains("discarded") {
                        return Verdict::fail("random_get errors are ignored; the reference value comes from an unfilled buffer")
                            .with(site(m, func, pc), why);
                    }
                    undecided.push((site(m, func, pc), why));
                    continue;
                }
            };
            match walk_error_path(m, ins, start, guard, proc_exit) {
                PathEnd::WritesGuard(at, what) => {
                    let mut v = Verdict::fail("error branch installs a reference value without entropy")
                        .with(site(m, func, at), format!("guard write in error branch: {what}"));
                    if has_fallback_multiply(ins, start, at + 1) {
                        v = v.with(site(m, func, at), "const 1103515245 multiply in error branch");
                    }
                    return v;
                }
                PathEnd::Terminates(at, how) => passes.push((site(m, func, at), format!("error branch stops via {how}"))),
                PathEnd::Undecided(at, why) => undecided.push((site(m, func, at), why)),
            }
        }
    }
    if !undecided.is_empty() {
        let mut v = Verdict::unknown("error handling of random_get could not be decided by the linear scan");
        for (s, d) in undecided {
            v = v.with(s, d);
        }
        return v;
    }
    if passes.is_empty() {
        return Verdict::unknown("no call to random_get found");
    }
    let mut v = Verdict::pass("every random_get error path terminates before the reference value is written");
    for (s, d) in passes {
        v = v.with(s, d);
    }
    v
}

/// P2a (overflow reachability) and P2b (storage writability).
pub fn check_p2(m: &WasmModule) -> (Verdict, Verdict) {
    check_p2_with(locate_guard(m), &classify_layout(m))
}

fn check_p2_with(guard: GuardLocation, layout: &LayoutReport) -> (Verdict, Verdict) {
    match guard {
        GuardLocation::Global { index } => {
            let why = "stored outside linear memory, VM-managed";
            let e = format!("global {index}");
            (
                Verdict::pass(why).with(e.clone(), "guard is a wasm global; guest stores cannot address it"),
                Verdict::pass(why).with(e, "guard is a wasm global; guest stores cannot address it"),
            )
        }
        GuardLocation::LinearMemory { address } => {
            let e = format!("linear memory {address}");
            let p2b = Verdict::fail("linear memory has no write protection")
                .with(e.clone(), "every address in linear memory is writable by the guest");
            let region = match layout.stack_region {
                Some((lo, hi)) => format!("{:?} layout, stack region [{lo}, {hi})", layout.layout),
                None => format!("{:?} layout", layout.layout),
            };
            let p2a = match reachable_by_ascending_overflow(layout, address) {
                Some(true) => Verdict::fail("guard lies above the stack and is reachable by an ascending overflow")
                    .with(e, region),
                Some(false) => Verdict::pass("guard lies below the stack; ascending overflows cannot reach it")
                    .with(e, region),
                None => Verdict::unknown("memory layout could not be classified").with(e, "layout unknown"),
            };
            (p2a, p2b)
        }
        GuardLocation::NotFound => (
            Verdict::unknown("no reference value located"),
            Verdict::unknown("no reference value located"),
        ),
    }
}

fn fail_targets(m: &WasmModule) -> BTreeSet<u32> {
    let mut t: BTreeSet<u32> = canary_checks(m).into_iter().map(|c| c.fail).collect();
    if t.is_empty() {
        if let Some(f) = m.func_by_name(FAIL_NAME) {
            t.insert(f);
        }
    }
    t
}

/// P3: the fail routine reaches `unreachable` within a few instructions
/// without loading memory or calling anything first.
pub fn check_p3(m: &WasmModule) -> Verdict {
    let targets = fail_targets(m);
    if targets.is_empty() {
        return Verdict::unknown("no canary-check fail routine found");
    }
    let mut passes = Vec::new();
    for f in targets {
        let Some(body) = m.body(f) else {
            return Verdict::fail("fail routine is imported; its behaviour is outside the module")
                .with(site(m, f, 0), "imported function");
        };
        let mut verdict = None;
        for (pc, i) in body.instrs.iter().take(P3_BUDGET).enumerate() {
            match i {
                Instr::Unreachable => {
                    verdict = Some(Ok((pc, "unreachable reached".to_string())));
                    break;
                }
                Instr::Call(c) => {
                    verdict = Some(Err((pc, format!("call to function {c} before trapping"))));
                    break;
                }
                Instr::CallIndirect { .. } => {
                    verdict = Some(Err((pc, "indirect call before trapping".to_string())));
                    break;
                }
                i if i.is_load() => {
                    verdict = Some(Err((pc, "memory load before trapping".to_string())));
                    break;
                }
                Instr::Return | Instr::Br(_) | Instr::BrIf(_) | Instr::BrTable { .. } | Instr::End => {
                    verdict = Some(Err((pc, "may return without trapping".to_string())));
                    break;
                }
                _ => {}
            }
        }
        match verdict {
            Some(Ok((pc, d))) => passes.push((site(m, f, pc), d)),
            Some(Err((pc, d))) => {
                return Verdict::fail("fail routine does not terminate immediately").with(site(m, f, pc), d)
            }
            None => {
                return Verdict::fail(format!("no trap within {P3_BUDGET} instructions of the fail routine entry"))
                    .with(site(m, f, 0), "budget exhausted")
            }
        }
    }
    let mut v = Verdict::pass("fail routine traps immediately");
    for (s, d) in passes {
        v = v.with(s, d);
    }
    v
}

pub fn audit(m: &WasmModule) -> RobustnessReport {
    let guard_location = locate_guard(m);
    let layout = classify_layout(m);
    let p1 = check_p1_with(m, guard_location);
    let (p2a, p2b) = check_p2_with(guard_location, &layout);
    let p3 = check_p3(m);
    RobustnessReport { guard_location, layout, properties: Properties { p1, p2a, p2b, p3 } }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{detect_frames, STACK_POINTER_NAME};
    use crate::model::build::ModuleBuilder;
    use crate::model::{BlockType, ConstExpr, ExternalKind, FuncType, MemArg, ValType};
    use crate::ssp::{instrument, legacy_instrument, SspConfig};

    fn guest(sp_init: i32, data_at: u32) -> WasmModule {
        let mut b = ModuleBuilder::new();
        b.memory(2, None);
        b.global(ValType::I32, true, ConstExpr::I32(sp_init), Some(STACK_POINTER_NAME));
        let f = b.func(
            "vuln",
            FuncType::default(),
            vec![(1, ValType::I32)],
            vec![
                Instr::GlobalGet(0),
                Instr::I32Const(16),
                Instr::I32Sub,
                Instr::LocalTee(0),
                Instr::GlobalSet(0),
                Instr::LocalGet(0),
                Instr::I32Const(0x41),
                Instr::I32Store8(MemArg::byte(0)),
                Instr::LocalGet(0),
                Instr::I32Const(16),
                Instr::I32Add,
                Instr::GlobalSet(0),
            ],
        );
        let s = b.func("_start", FuncType::default(), vec![], vec![Instr::Call(f)]);
        b.export("_start", ExternalKind::Func, s);
        b.data(data_at, vec![0u8; 4]);
        b.data(data_at + 16, b"marker".to_vec());
        b.finish()
    }

    fn build(m: &WasmModule, legacy: bool) -> WasmModule {
        let frames = detect_frames(m, 0);
        let slot = m.data[0].const_range().unwrap().0;
        let cfg = SspConfig { legacy_guard_addr: Some(slot), ..Default::default() };
        if legacy {
            legacy_instrument(m, &cfg, &frames).unwrap().0
        } else {
            instrument(m, &cfg, &frames).unwrap().0
        }
    }

    fn kinds(r: &RobustnessReport) -> [VerdictKind; 4] {
        r.verdicts().map(|(_, v)| v)
    }

    use VerdictKind::{Fail, Pass, Unknown};

    #[test]
    fn empty_module_is_all_unknown() {
        let r = audit(&WasmModule::default());
        assert_eq!(r.guard_location, GuardLocation::NotFound);
        assert_eq!(kinds(&r), [Unknown; 4]);
        assert_eq!(r.exit_code(), 3);
    }

    #[test]
    fn uninstrumented_guard_not_found() {
        let m = guest(65536, 65536);
        assert_eq!(locate_guard(&m), GuardLocation::NotFound);
        assert_eq!(check_p3(&m).verdict, Unknown);
    }

    #[test]
    fn truth_table() {
        let stack_first = guest(65536, 65536);
        let no_stack_first = guest(65536, 1024);

        let r = audit(&build(&stack_first, true));
        assert_eq!(r.guard_location, GuardLocation::LinearMemory { address: 65536 });
        assert_eq!(kinds(&r), [Fail, Fail, Fail, Pass]);
        assert!(r.properties.p1.evidence.iter().any(|e| e.description == "const 1103515245 multiply in error branch"));
        assert_eq!(r.exit_code(), 2);

        let r = audit(&build(&no_stack_first, true));
        assert_eq!(r.guard_location, GuardLocation::LinearMemory { address: 1024 });
        assert_eq!(kinds(&r), [Fail, Pass, Fail, Pass]);

        for m in [&stack_first, &no_stack_first] {
            let r = audit(&build(m, false));
            assert!(matches!(r.guard_location, GuardLocation::Global { .. }));
            assert_eq!(kinds(&r), [Pass; 4], "{:#?}", r.properties);
            assert_eq!(r.properties.p2b.rationale, "stored outside linear memory, VM-managed");
            assert_eq!(r.exit_code(), 0);
        }
    }

    #[test]
    fn guard_found_by_pattern_without_names() {
        let mut m = build(&guest(65536, 65536), false);
        let g = locate_guard(&m);
        m.names = None;
        assert_eq!(locate_guard(&m), g);
        assert_eq!(check_p3(&m).verdict, Pass);
    }

    #[test]
    fn p3_flips_when_fail_routine_calls_first() {
        let mut m = build(&guest(65536, 65536), false);
        assert_eq!(check_p3(&m).verdict, Pass);
        let fail = m.func_by_name(FAIL_NAME).unwrap();
        let start = m.find_export("_start", ExternalKind::Func).unwrap();
        m.body_mut(fail).unwrap().instrs.insert(0, Instr::Call(start));
        let v = check_p3(&m);
        assert_eq!(v.verdict, Fail);
        assert!(v.evidence[0].description.contains("call"));
    }

    #[test]
    fn p1_variants() {
        let base = build(&guest(65536, 65536), false);
        let init = base.func_by_name("__ssp_init").unwrap();
        let guard = base.global_by_name(GUARD_NAME).unwrap();
        let rg = base.find_func_import(WASI_MODULE, RANDOM_GET).unwrap().0;

        // errno dropped
        let mut m = base.clone();
        let ins = &mut m.body_mut(init).unwrap().instrs;
        let at = ins.iter().position(|i| *i == Instr::Call(rg)).unwrap();
        ins.splice(at + 1..at + 4, [Instr::Drop]);
        assert_eq!(check_p1(&m).verdict, Fail);

        // eqz form with the trap in the else arm
        let mut m = base.clone();
        let ins = &mut m.body_mut(init).unwrap().instrs;
        ins.splice(
            at + 1..at + 4,
            [Instr::I32Eqz, Instr::If(BlockType::Empty), Instr::Nop, Instr::Else, Instr::Unreachable, Instr::End],
        );
        assert_eq!(check_p1(&m).verdict, Pass);

        // fallback write in the error branch
        let mut m = base.clone();
        let ins = &mut m.body_mut(init).unwrap().instrs;
        ins.splice(at + 2..at + 3, [Instr::I32Const(7), Instr::GlobalSet(guard)]);
        assert_eq!(check_p1(&m).verdict, Fail);

        // an opaque call in the error branch cannot be decided
        let mut m = base.clone();
        let start = m.find_export("_start", ExternalKind::Func).unwrap();
        let ins = &mut m.body_mut(init).unwrap().instrs;
        ins.splice(at + 2..at + 3, [Instr::Call(start)]);
        assert_eq!(check_p1(&m).verdict, Unknown);
    }

    #[test]
    fn audit_is_deterministic() {
        let m = build(&guest(65536, 65536), true);
        assert_eq!(audit(&m), audit(&m));
        let json = serde_json::to_value(audit(&m)).unwrap();
        assert_eq!(json["properties"]["P1"]["verdict"], "Fail");
        assert_eq!(json["guard_location"]["kind"], "linear_memory");
    }
}
