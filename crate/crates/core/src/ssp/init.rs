//! Start-up routines that fill the reference value.

use super::SspConfig;
use crate::model::{BlockType, FuncBody, Instr, MemArg};

/// Multiplier the legacy scheme applies to the slot address when the host
/// reports a `random_get` failure.
pub const LEGACY_FALLBACK_MULTIPLIER: i32 = 1103515245;

const SCRATCH: i32 = 16;

/// Hardened initializer. Borrows 16 bytes of shadow stack as the
/// `random_get` buffer, traps when the call reports an error, and never
/// writes a fallback value.
pub fn build_init_function(cfg: &SspConfig, sp: u32, random_get: u32, guard: u32) -> FuncBody {
    let mut i = vec![
        Instr::GlobalGet(sp),
        Instr::I32Const(SCRATCH),
        Instr::I32Sub,
        Instr::GlobalSet(sp),
        Instr::GlobalGet(sp),
        Instr::I32Const(4),
        Instr::Call(random_get),
        Instr::If(BlockType::Empty),
        Instr::Unreachable,
        Instr::End,
        Instr::GlobalGet(sp),
        Instr::I32Load(MemArg::word(0)),
        Instr::GlobalSet(guard),
    ];
    if cfg.wipe_scratch {
        i.extend([Instr::GlobalGet(sp), Instr::I32Const(0), Instr::I32Store(MemArg::word(0))]);
    }
    i.extend([
        Instr::GlobalGet(sp),
        Instr::I32Const(SCRATCH),
        Instr::I32Add,
        Instr::GlobalSet(sp),
        Instr::End,
    ]);
    FuncBody { locals: vec![], instrs: i }
}

/// Legacy initializer: reads entropy straight into the slot and, on error,
/// stores `addr * 1103515245` there instead of stopping.
pub fn build_legacy_init_function(addr: u32, random_get: u32) -> FuncBody {
    let a = addr as i32;
    FuncBody {
        locals: vec![],
        instrs: vec![
            Instr::I32Const(a),
            Instr::I32Const(4),
            Instr::Call(random_get),
            Instr::If(BlockType::Empty),
            Instr::I32Const(a),
            Instr::I32Const(a),
            Instr::I32Const(LEGACY_FALLBACK_MULTIPLIER),
            Instr::I32Mul,
            Instr::I32Store(MemArg::word(0)),
            Instr::End,
            Instr::End,
        ],
    }
}
