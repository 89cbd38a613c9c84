use crate::leb;

use super::ValType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockType {
    Empty,
    Value(ValType),
    Func(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemArg {
    /// log2 of the alignment.
    pub align: u32,
    pub offset: u32,
}

impl MemArg {
    pub const fn new(align: u32, offset: u32) -> Self {
        MemArg { align, offset }
    }

    /// Natural alignment for a 4-byte access.
    pub const fn word(offset: u32) -> Self {
        MemArg { align: 2, offset }
    }

    pub const fn byte(offset: u32) -> Self {
        MemArg { align: 0, offset }
    }
}

/// One instruction. Opcodes the analyses and passes care about are modeled;
/// everything else is carried as its exact original encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instr {
    Unreachable,
    Nop,
    Block(BlockType),
    Loop(BlockType),
    If(BlockType),
    Else,
    End,
    Br(u32),
    BrIf(u32),
    BrTable { targets: Vec<u32>, default: u32 },
    Return,
    Call(u32),
    CallIndirect { type_index: u32, table: u32 },
    Drop,
    Select,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    I32Load(MemArg),
    I32Load8S(MemArg),
    I32Load8U(MemArg),
    I32Load16S(MemArg),
    I32Load16U(MemArg),
    I32Store(MemArg),
    I32Store8(MemArg),
    I32Store16(MemArg),
    MemorySize,
    MemoryGrow,
    I32Const(i32),
    I64Const(i64),
    I32Eqz,
    I32Eq,
    I32Ne,
    I32LtS,
    I32LtU,
    I32GtS,
    I32GtU,
    I32GeU,
    I32Add,
    I32Sub,
    I32Mul,
    I32DivU,
    I32RemU,
    I32And,
    I32Or,
    I32Xor,
    I32Shl,
    I32ShrU,
    /// Raw encoding (opcode and immediates) of an instruction not modeled above.
    Opaque(Vec<u8>),
}

/// Opcode byte for every modeled instruction without immediates.
pub(super) const SIMPLE_OPS: &[(u8, Instr)] = &[
    (0x00, Instr::Unreachable),
    (0x01, Instr::Nop),
    (0x05, Instr::Else),
    (0x0b, Instr::End),
    (0x0f, Instr::Return),
    (0x1a, Instr::Drop),
    (0x1b, Instr::Select),
    (0x45, Instr::I32Eqz),
    (0x46, Instr::I32Eq),
    (0x47, Instr::I32Ne),
    (0x48, Instr::I32LtS),
    (0x49, Instr::I32LtU),
    (0x4a, Instr::I32GtS),
    (0x4b, Instr::I32GtU),
    (0x4f, Instr::I32GeU),
    (0x6a, Instr::I32Add),
    (0x6b, Instr::I32Sub),
    (0x6c, Instr::I32Mul),
    (0x6e, Instr::I32DivU),
    (0x70, Instr::I32RemU),
    (0x71, Instr::I32And),
    (0x72, Instr::I32Or),
    (0x73, Instr::I32Xor),
    (0x74, Instr::I32Shl),
    (0x76, Instr::I32ShrU),
];

impl Instr {
    pub fn raw(bytes: &[u8]) -> Instr {
        Instr::Opaque(bytes.to_vec())
    }

    /// Memory-reading instruction, modeled or opaque.
    pub fn is_load(&self) -> bool {
        match self {
            Instr::I32Load(_)
            | Instr::I32Load8S(_)
            | Instr::I32Load8U(_)
            | Instr::I32Load16S(_)
            | Instr::I32Load16U(_) => true,
            Instr::Opaque(b) => match b.first() {
                Some(0x28..=0x35) => true,
                // memory.init / memory.copy read memory or data
                Some(0xfc) => matches!(b.get(1), Some(8) | Some(10)),
                _ => false,
            },
            _ => false,
        }
    }

    pub fn is_store(&self) -> bool {
        match self {
            Instr::I32Store(_) | Instr::I32Store8(_) | Instr::I32Store16(_) => true,
            Instr::Opaque(b) => match b.first() {
                Some(0x36..=0x3e) => true,
                Some(0xfc) => matches!(b.get(1), Some(8) | Some(10) | Some(11)),
                _ => false,
            },
            _ => false,
        }
    }

    pub fn is_call(&self) -> bool {
        matches!(self, Instr::Call(_) | Instr::CallIndirect { .. })
    }

    /// Opens a structured block (matched by `End`).
    pub fn opens_block(&self) -> bool {
        matches!(self, Instr::Block(_) | Instr::Loop(_) | Instr::If(_))
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        if let Some((op, _)) = SIMPLE_OPS.iter().find(|(_, i)| i == self) {
            out.push(*op);
            return;
        }
        match self {
            Instr::Block(bt) => {
                out.push(0x02);
                encode_block_type(out, *bt);
            }
            Instr::Loop(bt) => {
                out.push(0x03);
                encode_block_type(out, *bt);
            }
            Instr::If(bt) => {
                out.push(0x04);
                encode_block_type(out, *bt);
            }
            Instr::Br(l) => op_u32(out, 0x0c, *l),
            Instr::BrIf(l) => op_u32(out, 0x0d, *l),
            Instr::BrTable { targets, default } => {
                out.push(0x0e);
                leb::write_unsigned(out, targets.len() as u64);
                for t in targets {
                    leb::write_unsigned(out, u64::from(*t));
                }
                leb::write_unsigned(out, u64::from(*default));
            }
            Instr::Call(f) => op_u32(out, 0x10, *f),
            Instr::CallIndirect { type_index, table } => {
                op_u32(out, 0x11, *type_index);
                leb::write_unsigned(out, u64::from(*table));
            }
            Instr::LocalGet(i) => op_u32(out, 0x20, *i),
            Instr::LocalSet(i) => op_u32(out, 0x21, *i),
            Instr::LocalTee(i) => op_u32(out, 0x22, *i),
            Instr::GlobalGet(i) => op_u32(out, 0x23, *i),
            Instr::GlobalSet(i) => op_u32(out, 0x24, *i),
            Instr::I32Load(m) => op_mem(out, 0x28, *m),
            Instr::I32Load8S(m) => op_mem(out, 0x2c, *m),
            Instr::I32Load8U(m) => op_mem(out, 0x2d, *m),
            Instr::I32Load16S(m) => op_mem(out, 0x2e, *m),
            Instr::I32Load16U(m) => op_mem(out, 0x2f, *m),
            Instr::I32Store(m) => op_mem(out, 0x36, *m),
            Instr::I32Store8(m) => op_mem(out, 0x3a, *m),
            Instr::I32Store16(m) => op_mem(out, 0x3b, *m),
            Instr::MemorySize => out.extend_from_slice(&[0x3f, 0x00]),
            Instr::MemoryGrow => out.extend_from_slice(&[0x40, 0x00]),
            Instr::I32Const(v) => {
                out.push(0x41);
                leb::write_signed(out, i64::from(*v));
            }
            Instr::I64Const(v) => {
                out.push(0x42);
                leb::write_signed(out, *v);
            }
            Instr::Opaque(bytes) => out.extend_from_slice(bytes),
            _ => unreachable!("simple op missing from SIMPLE_OPS: {self:?}"),
        }
    }
}

fn op_u32(out: &mut Vec<u8>, op: u8, v: u32) {
    out.push(op);
    leb::write_unsigned(out, u64::from(v));
}

fn op_mem(out: &mut Vec<u8>, op: u8, m: MemArg) {
    out.push(op);
    leb::write_unsigned(out, u64::from(m.align));
    leb::write_unsigned(out, u64::from(m.offset));
}

fn encode_block_type(out: &mut Vec<u8>, bt: BlockType) {
    match bt {
        BlockType::Empty => out.push(0x40),
        BlockType::Value(v) => out.push(v.byte()),
        BlockType::Func(t) => leb::write_signed(out, i64::from(t)),
    }
}
