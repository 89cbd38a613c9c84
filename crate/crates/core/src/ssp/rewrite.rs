//! Per-frame canary insertion.

use super::SspError;
use crate::layout::{FrameInfo, FramePattern};
use crate::model::{BlockType, FuncBody, Instr, MemArg};

/// Where the reference value lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardAccess {
    Global(u32),
    Linear(u32),
}

impl GuardAccess {
    pub(crate) fn load(self) -> Vec<Instr> {
        match self {
            GuardAccess::Global(g) => vec![Instr::GlobalGet(g)],
            GuardAccess::Linear(a) => vec![Instr::I32Const(a as i32), Instr::I32Load(MemArg::word(0))],
        }
    }
}

fn conflict(f: &FrameInfo, detail: impl Into<String>) -> SspError {
    SspError::FrameRewriteConflict { func: f.func_index, detail: detail.into() }
}

/// Checks that `instrs[s..e]` is the sequence `FrameInfo` claims it is.
fn expect_site(f: &FrameInfo, instrs: &[Instr], (s, e): (usize, usize), prologue: bool) -> Result<(), SspError> {
    let site = instrs.get(s..e).ok_or_else(|| conflict(f, format!("site {s}..{e} lies outside the body")))?;
    let size = f.frame_size as i32;
    let ok = match (prologue, f.pattern, f.frame_local, site) {
        (true, FramePattern::TeeSet, Some(t), [Instr::GlobalGet(g), Instr::I32Const(k), Instr::I32Sub, Instr::LocalTee(t2), Instr::GlobalSet(g2)]) => {
            *g == f.sp_global && *g2 == f.sp_global && *k == size && *t2 == t
        }
        (true, FramePattern::GetSubSet, None, [Instr::GlobalGet(g), Instr::I32Const(k), Instr::I32Sub, Instr::GlobalSet(g2)]) => {
            *g == f.sp_global && *g2 == f.sp_global && *k == size
        }
        (false, _, tee, [base, Instr::I32Const(k), Instr::I32Add, Instr::GlobalSet(g)]) => {
            let base_ok = match base {
                Instr::GlobalGet(b) => *b == f.sp_global,
                Instr::LocalGet(l) => Some(*l) == tee,
                _ => false,
            };
            base_ok && *k == size && *g == f.sp_global
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        let what = if prologue { "prologue" } else { "epilogue" };
        Err(conflict(f, format!("{what} at {s}..{e} does not match the frame description")))
    }
}

/// Grows the frame by `slot` bytes, stores the reference value just above the
/// original frame after the prologue, and checks it before every epilogue.
pub(crate) fn protect_frame(
    body: &mut FuncBody,
    f: &FrameInfo,
    slot: u32,
    guard: GuardAccess,
    fail: u32,
) -> Result<(), SspError> {
    let prologue = f.prologue_span.ok_or_else(|| conflict(f, "frame has no prologue"))?;
    expect_site(f, &body.instrs, prologue, true)?;
    if f.epilogue_sites.is_empty() {
        return Err(conflict(f, "frame has no epilogue"));
    }
    for &site in &f.epilogue_sites {
        expect_site(f, &body.instrs, site, false)?;
    }
    let s = f.frame_size;
    let grown = s
        .checked_add(slot)
        .and_then(|n| i32::try_from(n).ok())
        .ok_or_else(|| conflict(f, "frame size overflows"))?;
    let base = match (f.pattern, f.frame_local) {
        (FramePattern::TeeSet, Some(t)) => Instr::LocalGet(t),
        _ => Instr::GlobalGet(f.sp_global),
    };

    let mut store = vec![base.clone()];
    store.extend(guard.load());
    store.push(Instr::I32Store(MemArg::word(s)));
    for off in (4..slot).step_by(4) {
        store.extend([base.clone(), Instr::I32Const(0), Instr::I32Store(MemArg::word(s + off))]);
    }
    let mut check = vec![base.clone(), Instr::I32Load(MemArg::word(s))];
    check.extend(guard.load());
    check.extend([Instr::I32Ne, Instr::If(BlockType::Empty), Instr::Call(fail), Instr::End]);

    // an epilogue may start right where the prologue ends; splicing the check
    // first leaves the store in front of it
    let mut edits: Vec<(usize, Vec<Instr>)> = Vec::new();
    for &(start, _) in &f.epilogue_sites {
        body.instrs[start + 1] = Instr::I32Const(grown);
        edits.push((start, check.clone()));
    }
    body.instrs[prologue.0 + 1] = Instr::I32Const(grown);
    edits.push((prologue.1, store));
    edits.sort_by_key(|e| std::cmp::Reverse(e.0));
    for (at, code) in edits {
        body.instrs.splice(at..at, code);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::FramePattern;

    fn frame() -> (FuncBody, FrameInfo) {
        let body = FuncBody {
            locals: vec![(1, crate::model::ValType::I32)],
            instrs: vec![
                Instr::GlobalGet(0),
                Instr::I32Const(32),
                Instr::I32Sub,
                Instr::LocalTee(0),
                Instr::GlobalSet(0),
                Instr::LocalGet(0),
                Instr::I32Const(32),
                Instr::I32Add,
                Instr::GlobalSet(0),
                Instr::End,
            ],
        };
        let info = FrameInfo {
            func_index: 0,
            sp_global: 0,
            frame_size: 32,
            frame_local: Some(0),
            prologue_span: Some((0, 5)),
            epilogue_sites: vec![(5, 9)],
            recognized: true,
            pattern: FramePattern::TeeSet,
            note: None,
        };
        (body, info)
    }

    #[test]
    fn rewritten_shape() {
        let (mut body, info) = frame();
        protect_frame(&mut body, &info, 16, GuardAccess::Global(3), 9).unwrap();
        let i = &body.instrs;
        assert_eq!(i[1], Instr::I32Const(48));
        assert_eq!(&i[5..8], &[Instr::LocalGet(0), Instr::GlobalGet(3), Instr::I32Store(MemArg::word(32))]);
        // three padding words
        assert_eq!(i[8..17].iter().filter(|x| matches!(x, Instr::I32Store(_))).count(), 3);
        assert_eq!(
            &i[17..24],
            &[
                Instr::LocalGet(0),
                Instr::I32Load(MemArg::word(32)),
                Instr::GlobalGet(3),
                Instr::I32Ne,
                Instr::If(BlockType::Empty),
                Instr::Call(9),
                Instr::End,
            ]
        );
        assert_eq!(&i[24..28], &[Instr::LocalGet(0), Instr::I32Const(48), Instr::I32Add, Instr::GlobalSet(0)]);
    }

    #[test]
    fn stale_frame_description_is_a_conflict() {
        let (mut body, mut info) = frame();
        info.frame_size = 16;
        let before = body.clone();
        assert!(matches!(
            protect_frame(&mut body, &info, 16, GuardAccess::Global(3), 9),
            Err(SspError::FrameRewriteConflict { .. })
        ));
        assert_eq!(body, before);
    }

    #[test]
    fn linear_guard_access() {
        let (mut body, info) = frame();
        protect_frame(&mut body, &info, 16, GuardAccess::Linear(1024), 9).unwrap();
        assert_eq!(&body.instrs[6..8], &[Instr::I32Const(1024), Instr::I32Load(MemArg::word(0))]);
    }
}
