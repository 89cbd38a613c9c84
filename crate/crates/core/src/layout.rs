//! Shadow-stack discovery: which global is the stack pointer, what each
//! function's frame looks like, and how the stack sits relative to static data.

use serde::Serialize;

use crate::model::{ConstExpr, Instr, ValType, WasmModule};

pub const STACK_POINTER_NAME: &str = "__stack_pointer";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    StackFirst,
    NoStackFirst,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayoutReport {
    pub sp_global: Option<u32>,
    pub sp_initial: Option<u32>,
    pub layout: Layout,
    pub data_range: Option<(u32, u32)>,
    pub stack_region: Option<(u32, u32)>,
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpLookup {
    Found { global: u32, evidence: String },
    Absent,
    Ambiguous(Vec<u32>),
}

impl SpLookup {
    pub fn global(&self) -> Option<u32> {
        match self {
            SpLookup::Found { global, .. } => Some(*global),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FramePattern {
    /// `global.get sp; i32.const k; i32.sub; local.tee t; global.set sp`
    TeeSet,
    /// `global.get sp; i32.const k; i32.sub; global.set sp`
    GetSubSet,
    Unrecognized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FrameInfo {
    pub func_index: u32,
    pub sp_global: u32,
    pub frame_size: u32,
    pub frame_local: Option<u32>,
    /// Half-open instruction index range of the prologue.
    pub prologue_span: Option<(usize, usize)>,
    pub epilogue_sites: Vec<(usize, usize)>,
    pub recognized: bool,
    pub pattern: FramePattern,
    /// Why a function that touches the stack pointer was not recognized.
    pub note: Option<String>,
}

impl FrameInfo {
    /// A function that never moves the stack pointer.
    pub fn is_frameless(&self) -> bool {
        self.prologue_span.is_none() && self.note.is_none()
    }
}

fn is_mutable_i32(m: &WasmModule, g: u32) -> bool {
    m.global_type(g).is_some_and(|t| t.mutable && t.ty == ValType::I32)
}

#[derive(Debug, Clone, Copy)]
struct PrologueMatch {
    start: usize,
    end: usize,
    global: u32,
    size: i32,
    tee: Option<u32>,
}

fn prologues(instrs: &[Instr]) -> Vec<PrologueMatch> {
    let mut out = Vec::new();
    for pc in 0..instrs.len() {
        let Instr::GlobalGet(g) = instrs[pc] else { continue };
        let (Some(Instr::I32Const(k)), Some(Instr::I32Sub)) = (instrs.get(pc + 1), instrs.get(pc + 2)) else {
            continue;
        };
        match (instrs.get(pc + 3), instrs.get(pc + 4)) {
            (Some(Instr::LocalTee(t)), Some(Instr::GlobalSet(g2))) if *g2 == g => {
                out.push(PrologueMatch { start: pc, end: pc + 5, global: g, size: *k, tee: Some(*t) })
            }
            (Some(Instr::GlobalSet(g2)), _) if *g2 == g => {
                out.push(PrologueMatch { start: pc, end: pc + 4, global: g, size: *k, tee: None })
            }
            _ => {}
        }
    }
    out
}

/// Epilogue: `(local.get t | global.get sp); i32.const k; i32.add; global.set sp`.
fn epilogues(instrs: &[Instr], sp: u32, tee: Option<u32>) -> Vec<(usize, usize, i32)> {
    let mut out = Vec::new();
    for pc in 0..instrs.len().saturating_sub(3) {
        let base_ok = match instrs[pc] {
            Instr::GlobalGet(g) => g == sp,
            Instr::LocalGet(l) => Some(l) == tee,
            _ => false,
        };
        if !base_ok {
            continue;
        }
        if let (Instr::I32Const(k), Instr::I32Add, Instr::GlobalSet(g)) = (&instrs[pc + 1], &instrs[pc + 2], &instrs[pc + 3]) {
            if *g == sp {
                out.push((pc, pc + 4, *k));
            }
        }
    }
    out
}

/// Nesting depth before each instruction (0 = function level).
fn depths(instrs: &[Instr]) -> Vec<u32> {
    let mut d = 0u32;
    instrs
        .iter()
        .map(|i| {
            let here = match i {
                Instr::End | Instr::Else => d.saturating_sub(1),
                _ => d,
            };
            if i.opens_block() {
                d += 1;
            } else if matches!(i, Instr::End) {
                d = d.saturating_sub(1);
            }
            here
        })
        .collect()
}

/// Locates the shadow-stack pointer global: by name first, then by the unique
/// mutable i32 global that appears in a frame-allocation prologue.
pub fn find_stack_pointer(m: &WasmModule) -> SpLookup {
    if let Some(g) = m.global_by_name(STACK_POINTER_NAME) {
        if is_mutable_i32(m, g) {
            return SpLookup::Found { global: g, evidence: format!("global {g} is named {STACK_POINTER_NAME}") };
        }
    }
    let mut candidates: Vec<u32> = Vec::new();
    let mut first_site = None;
    let imported = m.imported_func_count();
    for (i, body) in m.code.iter().enumerate() {
        for p in prologues(&body.instrs) {
            if is_mutable_i32(m, p.global) && !candidates.contains(&p.global) {
                candidates.push(p.global);
                first_site.get_or_insert((imported + i as u32, p.start));
            }
        }
    }
    match candidates.as_slice() {
        [] => SpLookup::Absent,
        [g] => {
            let (f, pc) = first_site.unwrap();
            SpLookup::Found {
                global: *g,
                evidence: format!("global {g} decremented by a frame prologue (function {f}, instr {pc})"),
            }
        }
        _ => {
            candidates.sort_unstable();
            SpLookup::Ambiguous(candidates)
        }
    }
}

fn unrecognized(func: u32, sp: u32, size: u32, prologue: Option<(usize, usize)>, note: impl Into<String>) -> FrameInfo {
    FrameInfo {
        func_index: func,
        sp_global: sp,
        frame_size: size,
        frame_local: None,
        prologue_span: prologue,
        epilogue_sites: vec![],
        recognized: false,
        pattern: FramePattern::Unrecognized,
        note: Some(note.into()),
    }
}

fn analyze_frame(func: u32, instrs: &[Instr], sp: u32) -> FrameInfo {
    let sets: Vec<usize> = instrs
        .iter()
        .enumerate()
        .filter(|(_, i)| **i == Instr::GlobalSet(sp))
        .map(|(pc, _)| pc)
        .collect();
    let depth = depths(instrs);
    let pro: Vec<PrologueMatch> =
        prologues(instrs).into_iter().filter(|p| p.global == sp && depth[p.start] == 0).collect();

    let p = match pro.as_slice() {
        [] if sets.is_empty() => {
            return FrameInfo {
                func_index: func,
                sp_global: sp,
                frame_size: 0,
                frame_local: None,
                prologue_span: None,
                epilogue_sites: vec![],
                recognized: false,
                pattern: FramePattern::Unrecognized,
                note: None,
            }
        }
        [] => return unrecognized(func, sp, 0, None, "stack pointer written outside a recognized prologue"),
        [p] => *p,
        _ => return unrecognized(func, sp, 0, None, "more than one frame prologue"),
    };
    let span = Some((p.start, p.end));
    let Ok(size) = u32::try_from(p.size) else {
        return unrecognized(func, sp, 0, span, "negative frame size");
    };
    if size == 0 {
        return unrecognized(func, sp, 0, span, "zero-sized frame");
    }

    let epi = epilogues(instrs, sp, p.tee);
    if epi.is_empty() {
        return unrecognized(func, sp, size, span, "no frame epilogue");
    }
    if let Some((pc, _, k)) = epi.iter().find(|(_, _, k)| *k != p.size) {
        return unrecognized(
            func,
            sp,
            size,
            span,
            format!("epilogue at instr {pc} restores {k} bytes, prologue allocates {size}"),
        );
    }
    if epi.iter().any(|(s, _, _)| *s < p.end) {
        return unrecognized(func, sp, size, span, "epilogue precedes prologue");
    }
    let owned_sets: Vec<usize> = std::iter::once(p.end - 1).chain(epi.iter().map(|(_, e, _)| e - 1)).collect();
    if let Some(pc) = sets.iter().find(|pc| !owned_sets.contains(pc)) {
        return unrecognized(func, sp, size, span, format!("stack pointer also written at instr {pc}"));
    }
    if let Some(t) = p.tee {
        let rewritten = instrs.iter().enumerate().any(|(pc, i)| {
            pc != p.end - 2 && matches!(i, Instr::LocalSet(l) | Instr::LocalTee(l) if *l == t)
        });
        if rewritten {
            return unrecognized(func, sp, size, span, format!("frame base local {t} is reassigned"));
        }
    }

    // every way out of the function must pass through an epilogue
    let ends_epilogue = |pc: usize| epi.iter().any(|(_, e, _)| *e == pc);
    for (pc, i) in instrs.iter().enumerate() {
        let exits = match i {
            Instr::Return => true,
            Instr::Br(l) | Instr::BrIf(l) => *l == depth[pc],
            Instr::BrTable { targets, default } => {
                targets.iter().chain(std::iter::once(default)).any(|l| *l == depth[pc])
            }
            _ => false,
        };
        if !exits {
            continue;
        }
        if !matches!(i, Instr::Return) {
            return unrecognized(func, sp, size, span, format!("branch to function exit at instr {pc}"));
        }
        if !ends_epilogue(pc) {
            return unrecognized(func, sp, size, span, format!("return at instr {pc} without epilogue"));
        }
    }
    let last = instrs.len() - 1;
    let falls_through = !matches!(
        instrs.get(last.wrapping_sub(1)),
        Some(Instr::Return | Instr::Unreachable | Instr::Br(_) | Instr::BrTable { .. })
    );
    if falls_through && !ends_epilogue(last) {
        return unrecognized(func, sp, size, span, "function end reached without epilogue");
    }

    FrameInfo {
        func_index: func,
        sp_global: sp,
        frame_size: size,
        frame_local: p.tee,
        prologue_span: span,
        epilogue_sites: epi.iter().map(|(s, e, _)| (*s, *e)).collect(),
        recognized: true,
        pattern: if p.tee.is_some() { FramePattern::TeeSet } else { FramePattern::GetSubSet },
        note: None,
    }
}

/// One `FrameInfo` per defined function. Frames are only marked recognized
/// when prologue and every epilogue agree on the frame size.
pub fn detect_frames(m: &WasmModule, sp: u32) -> Vec<FrameInfo> {
    let imported = m.imported_func_count();
    m.code
        .iter()
        .enumerate()
        .map(|(i, body)| analyze_frame(imported + i as u32, &body.instrs, sp))
        .collect()
}

/// Classifies the linear-memory layout from the stack pointer's initial value
/// and the span of the active data segments.
pub fn classify_layout(m: &WasmModule) -> LayoutReport {
    let mut evidence = Vec::new();
    let sp = match find_stack_pointer(m) {
        SpLookup::Found { global, evidence: e } => {
            evidence.push(e);
            Some(global)
        }
        SpLookup::Absent => {
            evidence.push("no stack pointer global found".into());
            None
        }
        SpLookup::Ambiguous(c) => {
            evidence.push(format!("ambiguous stack pointer candidates {c:?}"));
            None
        }
    };
    let sp_initial = sp.and_then(|g| m.defined_global(g)).and_then(|g| match g.init {
        ConstExpr::I32(v) => Some(v as u32),
        _ => None,
    });
    if let Some(v) = sp_initial {
        evidence.push(format!("stack pointer initialized to {v}"));
    }
    let data_range = m.data_range();
    match data_range {
        Some((lo, hi)) => evidence.push(format!("active data spans [{lo}, {hi})")),
        None => evidence.push("no active data segments with constant offsets".into()),
    }

    let (layout, stack_region) = match (sp_initial, data_range) {
        (Some(init), Some((lo, _))) if init <= lo => {
            evidence.push("stack lies below static data (stack-first)".into());
            (Layout::StackFirst, Some((0, init)))
        }
        (Some(init), Some((_, hi))) if init >= hi => {
            evidence.push("static data lies below the stack (no-stack-first)".into());
            (Layout::NoStackFirst, Some((hi, init)))
        }
        (Some(_), Some(_)) => {
            evidence.push("stack pointer starts inside the data zone".into());
            (Layout::Unknown, None)
        }
        _ => (Layout::Unknown, None),
    };
    LayoutReport { sp_global: sp, sp_initial, layout, data_range, stack_region, evidence }
}

/// Whether a contiguous ascending write starting in the stack can reach
/// `target`. `None` when the layout is unknown.
pub fn reachable_by_ascending_overflow(report: &LayoutReport, target: u32) -> Option<bool> {
    if report.layout == Layout::Unknown {
        return None;
    }
    report.stack_region.map(|(lo, _)| target > lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build::ModuleBuilder;
    use crate::model::{FuncType, MemArg};
    use proptest::prelude::*;

    fn tee_frame(sp: u32, size: i32, epilogue: i32) -> Vec<Instr> {
        vec![
            Instr::GlobalGet(sp),
            Instr::I32Const(size),
            Instr::I32Sub,
            Instr::LocalTee(0),
            Instr::GlobalSet(sp),
            Instr::LocalGet(0),
            Instr::I32Const(7),
            Instr::I32Store8(MemArg::byte(0)),
            Instr::LocalGet(0),
            Instr::I32Const(epilogue),
            Instr::I32Add,
            Instr::GlobalSet(sp),
            Instr::End,
        ]
    }

    fn module_with(bodies: Vec<Vec<Instr>>, named: bool) -> WasmModule {
        let mut b = ModuleBuilder::new();
        b.memory(2, None);
        b.global(ValType::I32, true, ConstExpr::I32(0), Some("heap_base"));
        b.global(ValType::I32, true, ConstExpr::I32(65536), named.then_some(STACK_POINTER_NAME));
        for (i, instrs) in bodies.into_iter().enumerate() {
            b.func(&format!("f{i}"), FuncType::default(), vec![(1, ValType::I32)], instrs);
        }
        b.finish()
    }

    #[test]
    fn no_mutable_globals_means_no_stack_pointer() {
        let mut b = ModuleBuilder::new();
        b.global(ValType::I32, false, ConstExpr::I32(5), None);
        assert_eq!(find_stack_pointer(&b.finish()), SpLookup::Absent);
    }

    #[test]
    fn finds_named_and_unnamed_stack_pointer() {
        let named = module_with(vec![vec![Instr::End]], true);
        assert_eq!(find_stack_pointer(&named).global(), Some(1));
        let unnamed = module_with(vec![tee_frame(1, 32, 32)], false);
        assert_eq!(find_stack_pointer(&unnamed).global(), Some(1));
    }

    #[test]
    fn ambiguous_candidates_are_refused() {
        let m = module_with(vec![tee_frame(0, 16, 16), tee_frame(1, 32, 32)], false);
        assert_eq!(find_stack_pointer(&m), SpLookup::Ambiguous(vec![0, 1]));
    }

    #[test]
    fn frame_detection() {
        let m = module_with(vec![vec![Instr::Nop, Instr::End], tee_frame(1, 32, 32), tee_frame(1, 32, 16)], true);
        let frames = detect_frames(&m, 1);
        assert_eq!(frames.len(), 3);
        assert!(!frames[0].recognized);
        assert_eq!(frames[0].frame_size, 0);
        assert!(frames[0].is_frameless());
        assert!(frames[1].recognized);
        assert_eq!(frames[1].frame_size, 32);
        assert_eq!(frames[1].pattern, FramePattern::TeeSet);
        assert_eq!(frames[1].prologue_span, Some((0, 5)));
        assert_eq!(frames[1].epilogue_sites, vec![(8, 12)]);
        assert!(!frames[2].recognized);
        assert!(frames[2].note.as_deref().unwrap().contains("restores 16"));
    }

    #[test]
    fn early_return_gives_two_epilogues() {
        let sp = 1;
        let body = vec![
            Instr::GlobalGet(sp),
            Instr::I32Const(16),
            Instr::I32Sub,
            Instr::GlobalSet(sp),
            Instr::I32Const(1),
            Instr::If(crate::model::BlockType::Empty),
            Instr::GlobalGet(sp),
            Instr::I32Const(16),
            Instr::I32Add,
            Instr::GlobalSet(sp),
            Instr::Return,
            Instr::End,
            Instr::GlobalGet(sp),
            Instr::I32Const(16),
            Instr::I32Add,
            Instr::GlobalSet(sp),
            Instr::End,
        ];
        let m = module_with(vec![body.clone()], true);
        let f = &detect_frames(&m, sp)[0];
        assert!(f.recognized, "{f:?}");
        assert_eq!(f.pattern, FramePattern::GetSubSet);
        assert_eq!(f.epilogue_sites.len(), 2);

        // drop the early epilogue: the bare return now escapes the frame
        let mut broken = body;
        broken.drain(6..10);
        let m = module_with(vec![broken], true);
        let f = &detect_frames(&m, sp)[0];
        assert!(!f.recognized);
    }

    #[test]
    fn layout_classification() {
        let mut b = ModuleBuilder::new();
        b.memory(2, None);
        b.global(ValType::I32, true, ConstExpr::I32(65536), Some(STACK_POINTER_NAME));
        b.data(1024, vec![0u8; 1024]);
        let r = classify_layout(&b.finish());
        assert_eq!(r.layout, Layout::NoStackFirst);
        assert_eq!(r.stack_region, Some((2048, 65536)));

        let mut b = ModuleBuilder::new();
        b.memory(2, None);
        b.global(ValType::I32, true, ConstExpr::I32(65536), Some(STACK_POINTER_NAME));
        b.data(65536, vec![0u8; 1024]);
        let r = classify_layout(&b.finish());
        assert_eq!(r.layout, Layout::StackFirst);
        assert_eq!(r.data_range, Some((65536, 66560)));

        assert_eq!(classify_layout(&WasmModule::default()).layout, Layout::Unknown);
    }

    #[test]
    fn reachability() {
        let stack_first = LayoutReport {
            sp_global: Some(0),
            sp_initial: Some(65536),
            layout: Layout::StackFirst,
            data_range: Some((65536, 66560)),
            stack_region: Some((0, 65536)),
            evidence: vec![],
        };
        assert_eq!(reachable_by_ascending_overflow(&stack_first, 65536), Some(true));
        assert_eq!(reachable_by_ascending_overflow(&stack_first, 1000), Some(true));
        let no_stack_first = LayoutReport {
            layout: Layout::NoStackFirst,
            data_range: Some((1024, 2048)),
            stack_region: Some((2048, 65536)),
            ..stack_first.clone()
        };
        assert_eq!(reachable_by_ascending_overflow(&no_stack_first, 1024), Some(false));
        assert_eq!(reachable_by_ascending_overflow(&no_stack_first, 4096), Some(true));
        let unknown = LayoutReport { layout: Layout::Unknown, stack_region: None, ..stack_first };
        assert_eq!(reachable_by_ascending_overflow(&unknown, 4096), None);
    }

    proptest! {
        #[test]
        fn reachability_is_monotone(lo in 0u32..100_000, a in any::<u32>(), b in any::<u32>()) {
            let r = LayoutReport {
                sp_global: Some(0),
                sp_initial: Some(lo.saturating_add(1000)),
                layout: Layout::NoStackFirst,
                data_range: Some((0, lo)),
                stack_region: Some((lo, lo.saturating_add(1000))),
                evidence: vec![],
            };
            let (x, y) = (a.min(b), a.max(b));
            let rx = reachable_by_ascending_overflow(&r, x).unwrap();
            let ry = reachable_by_ascending_overflow(&r, y).unwrap();
            prop_assert!(!rx || ry);
        }

        #[test]
        fn mismatched_constants_never_recognized(size in 1i32..4096, delta in 1i32..64) {
            let m = module_with(vec![tee_frame(1, size, size + delta)], true);
            prop_assert!(!detect_frames(&m, 1)[0].recognized);
            let m = module_with(vec![tee_frame(1, size, size)], true);
            prop_assert!(detect_frames(&m, 1)[0].recognized);
        }
    }
}
