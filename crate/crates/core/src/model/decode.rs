use std::collections::BTreeMap;

use crate::leb;

use super::instr::SIMPLE_OPS;
use super::*;

pub(super) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    pub(super) fn new(data: &'a [u8], base: usize) -> Self {
        Reader { data, pos: 0, base }
    }

    pub(super) fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub(super) fn err(&self, reason: impl Into<String>) -> ModelError {
        ModelError::Malformed { offset: self.offset(), reason: reason.into() }
    }

    pub(super) fn eof(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        let b = *self.data.get(self.pos).ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        Ok(b)
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.data.len())
            .ok_or_else(|| self.err("unexpected end of input"))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        let (v, n) = leb::read_unsigned(&self.data[self.pos..], 32).map_err(|e| self.err(e.to_string()))?;
        self.pos += n;
        Ok(v as u32)
    }

    fn s32(&mut self) -> Result<i32, ModelError> {
        let (v, n) = leb::read_signed(&self.data[self.pos..], 32).map_err(|e| self.err(e.to_string()))?;
        self.pos += n;
        Ok(v as i32)
    }

    fn s33(&mut self) -> Result<i64, ModelError> {
        let (v, n) = leb::read_signed(&self.data[self.pos..], 33).map_err(|e| self.err(e.to_string()))?;
        self.pos += n;
        Ok(v)
    }

    fn s64(&mut self) -> Result<i64, ModelError> {
        let (v, n) = leb::read_signed(&self.data[self.pos..], 64).map_err(|e| self.err(e.to_string()))?;
        self.pos += n;
        Ok(v)
    }

    fn name(&mut self) -> Result<String, ModelError> {
        let len = self.u32()? as usize;
        let at = self.offset();
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| ModelError::Malformed { offset: at, reason: "invalid UTF-8 in name".into() })
    }

    fn sub(&mut self, len: usize) -> Result<Reader<'a>, ModelError> {
        let base = self.offset();
        let data = self.bytes(len)?;
        Ok(Reader::new(data, base))
    }

    fn val_type(&mut self) -> Result<ValType, ModelError> {
        let b = self.u8()?;
        ValType::from_byte(b).ok_or_else(|| self.err(format!("unsupported value type {b:#04x}")))
    }

    fn limits(&mut self) -> Result<Limits, ModelError> {
        match self.u8()? {
            0 => Ok(Limits { min: self.u32()?, max: None }),
            1 => {
                let min = self.u32()?;
                let max = self.u32()?;
                Ok(Limits { min, max: Some(max) })
            }
            f => Err(self.err(format!("unsupported limits flags {f:#04x} (shared or 64-bit memory)"))),
        }
    }

    fn table_type(&mut self) -> Result<TableType, ModelError> {
        let elem = self.u8()?;
        if elem != 0x70 && elem != 0x6f {
            return Err(self.err(format!("unsupported table element type {elem:#04x}")));
        }
        Ok(TableType { elem, limits: self.limits()? })
    }

    fn global_type(&mut self) -> Result<GlobalType, ModelError> {
        let ty = self.val_type()?;
        let mutable = match self.u8()? {
            0 => false,
            1 => true,
            m => return Err(self.err(format!("bad mutability flag {m}"))),
        };
        Ok(GlobalType { ty, mutable })
    }

    fn const_expr(&mut self) -> Result<ConstExpr, ModelError> {
        let expr = match self.u8()? {
            0x41 => ConstExpr::I32(self.s32()?),
            0x42 => ConstExpr::I64(self.s64()?),
            0x43 => ConstExpr::F32(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap())),
            0x44 => ConstExpr::F64(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap())),
            0x23 => ConstExpr::GlobalGet(self.u32()?),
            op => return Err(self.err(format!("unsupported constant expression opcode {op:#04x}"))),
        };
        if self.u8()? != 0x0b {
            return Err(self.err("constant expression must be a single instruction followed by end"));
        }
        Ok(expr)
    }

    fn mem_arg(&mut self) -> Result<MemArg, ModelError> {
        let align = self.u32()?;
        let offset = self.u32()?;
        Ok(MemArg { align, offset })
    }

    fn block_type(&mut self) -> Result<BlockType, ModelError> {
        let b = *self.data.get(self.pos).ok_or_else(|| self.err("unexpected end of input"))?;
        if b == 0x40 {
            self.pos += 1;
            return Ok(BlockType::Empty);
        }
        if let Some(v) = ValType::from_byte(b) {
            self.pos += 1;
            return Ok(BlockType::Value(v));
        }
        let idx = self.s33()?;
        u32::try_from(idx).map(BlockType::Func).map_err(|_| self.err("bad block type"))
    }

    fn instr(&mut self) -> Result<Instr, ModelError> {
        let start = self.pos;
        let op = self.u8()?;
        if let Some((_, i)) = SIMPLE_OPS.iter().find(|(o, _)| *o == op) {
            return Ok(i.clone());
        }
        let instr = match op {
            0x02 => Instr::Block(self.block_type()?),
            0x03 => Instr::Loop(self.block_type()?),
            0x04 => Instr::If(self.block_type()?),
            0x0c => Instr::Br(self.u32()?),
            0x0d => Instr::BrIf(self.u32()?),
            0x0e => {
                let n = self.u32()?;
                let mut targets = Vec::with_capacity((n as usize).min(1024));
                for _ in 0..n {
                    targets.push(self.u32()?);
                }
                Instr::BrTable { targets, default: self.u32()? }
            }
            0x10 => Instr::Call(self.u32()?),
            0x11 => {
                let type_index = self.u32()?;
                Instr::CallIndirect { type_index, table: self.u32()? }
            }
            0x20 => Instr::LocalGet(self.u32()?),
            0x21 => Instr::LocalSet(self.u32()?),
            0x22 => Instr::LocalTee(self.u32()?),
            0x23 => Instr::GlobalGet(self.u32()?),
            0x24 => Instr::GlobalSet(self.u32()?),
            0x28 => Instr::I32Load(self.mem_arg()?),
            0x2c => Instr::I32Load8S(self.mem_arg()?),
            0x2d => Instr::I32Load8U(self.mem_arg()?),
            0x2e => Instr::I32Load16S(self.mem_arg()?),
            0x2f => Instr::I32Load16U(self.mem_arg()?),
            0x36 => Instr::I32Store(self.mem_arg()?),
            0x3a => Instr::I32Store8(self.mem_arg()?),
            0x3b => Instr::I32Store16(self.mem_arg()?),
            0x3f | 0x40 => {
                if self.u8()? != 0 {
                    return Err(self.err("only memory index 0 is supported"));
                }
                if op == 0x3f {
                    Instr::MemorySize
                } else {
                    Instr::MemoryGrow
                }
            }
            0x41 => Instr::I32Const(self.s32()?),
            0x42 => Instr::I64Const(self.s64()?),
            _ => {
                self.skip_opaque(op)?;
                Instr::Opaque(self.data[start..self.pos].to_vec())
            }
        };
        Ok(instr)
    }

    /// Advances past the immediates of an unmodeled opcode.
    fn skip_opaque(&mut self, op: u8) -> Result<(), ModelError> {
        match op {
            0x1c => {
                let n = self.u32()?;
                for _ in 0..n {
                    self.val_type()?;
                }
            }
            0x25 | 0x26 => {
                self.u32()?;
            }
            0x28..=0x3e => {
                self.mem_arg()?;
            }
            0x43 => {
                self.bytes(4)?;
            }
            0x44 => {
                self.bytes(8)?;
            }
            0x45..=0xc4 => {}
            0xd0 => {
                self.u8()?;
            }
            0xd1 => {}
            0xfc => {
                let sub = self.u32()?;
                match sub {
                    0..=7 => {}
                    8 => {
                        self.u32()?;
                        self.zero_byte()?;
                    }
                    9 | 13 | 15 | 16 | 17 => {
                        self.u32()?;
                    }
                    10 => {
                        self.zero_byte()?;
                        self.zero_byte()?;
                    }
                    11 => self.zero_byte()?,
                    12 | 14 => {
                        self.u32()?;
                        self.u32()?;
                    }
                    _ => return Err(self.err(format!("unsupported opcode 0xfc {sub}"))),
                }
            }
            0x12 | 0x13 => return Err(self.err("tail calls are not supported")),
            0xd2 => return Err(self.err("ref.func is not supported")),
            0xfd => return Err(self.err("SIMD is not supported")),
            0xfe => return Err(self.err("threads/atomics are not supported")),
            _ => return Err(self.err(format!("unknown opcode {op:#04x}"))),
        }
        Ok(())
    }

    fn zero_byte(&mut self) -> Result<(), ModelError> {
        if self.u8()? != 0 {
            return Err(self.err("only memory index 0 is supported"));
        }
        Ok(())
    }

    fn func_body(&mut self) -> Result<FuncBody, ModelError> {
        let mut locals = Vec::new();
        let mut total: u64 = 0;
        for _ in 0..self.u32()? {
            let n = self.u32()?;
            total += u64::from(n);
            if total > u64::from(u32::MAX) {
                return Err(self.err("too many locals"));
            }
            locals.push((n, self.val_type()?));
        }
        let mut instrs = Vec::new();
        // true for `if` frames, where `else` is permitted
        let mut frames: Vec<bool> = Vec::new();
        loop {
            if self.eof() {
                return Err(self.err("function body ends without final end (unbalanced nesting)"));
            }
            let instr = self.instr()?;
            match &instr {
                Instr::Block(_) | Instr::Loop(_) => frames.push(false),
                Instr::If(_) => frames.push(true),
                Instr::Else => {
                    if frames.last() != Some(&true) {
                        return Err(self.err("else outside of if (unbalanced nesting)"));
                    }
                    *frames.last_mut().unwrap() = false;
                }
                Instr::End if frames.pop().is_none() => {
                    instrs.push(instr);
                    break;
                }
                _ => {}
            }
            instrs.push(instr);
        }
        if !self.eof() {
            return Err(self.err("trailing bytes after function end (unbalanced nesting)"));
        }
        Ok(FuncBody { locals, instrs })
    }
}

fn section_rank(id: u8) -> Option<u8> {
    Some(match id {
        1..=9 => id,
        12 => 10,
        10 => 11,
        11 => 12,
        _ => return None,
    })
}

/// Decodes a binary module.
pub fn decode(bytes: &[u8]) -> Result<WasmModule, ModelError> {
    let mut r = Reader::new(bytes, 0);
    if r.bytes(4).ok() != Some(b"\0asm".as_slice()) {
        return Err(ModelError::Malformed { offset: 0, reason: "missing \\0asm magic".into() });
    }
    let version = r.bytes(4).map_err(|_| ModelError::Malformed { offset: 4, reason: "truncated version".into() })?;
    if version != [1, 0, 0, 0] {
        return Err(ModelError::Malformed {
            offset: 4,
            reason: format!("unsupported version {}", u32::from_le_bytes(version.try_into().unwrap())),
        });
    }

    let mut m = WasmModule::default();
    let mut last_rank = 0u8;
    let mut last_id = 0u8;
    let mut func_count: Option<u32> = None;
    let mut body_offsets = Vec::new();

    while !r.eof() {
        let id = r.u8()?;
        let size = r.u32()? as usize;
        let mut s = r.sub(size)?;
        if id == 0 {
            let name = s.name()?;
            let payload_base = s.offset();
            let payload = s.bytes(size - (s.pos))?;
            if name == "name" && m.names.is_none() {
                match parse_names(&mut Reader::new(payload, payload_base)) {
                    Ok(n) => {
                        m.names = Some(n);
                        continue;
                    }
                    Err(e) => log::warn!("keeping unparseable name section verbatim: {e}"),
                }
            }
            m.custom.push(CustomSection { name, after: last_id, data: payload.to_vec() });
            continue;
        }
        let rank = section_rank(id).ok_or_else(|| ModelError::Malformed {
            offset: s.offset(),
            reason: format!("unknown section id {id}"),
        })?;
        if rank <= last_rank {
            return Err(s.err(format!("section {id} out of order or duplicated")));
        }
        last_rank = rank;
        last_id = id;

        match id {
            1 => {
                for _ in 0..s.u32()? {
                    if s.u8()? != 0x60 {
                        return Err(s.err("expected function type (0x60)"));
                    }
                    let mut params = Vec::new();
                    for _ in 0..s.u32()? {
                        params.push(s.val_type()?);
                    }
                    let mut results = Vec::new();
                    for _ in 0..s.u32()? {
                        results.push(s.val_type()?);
                    }
                    m.types.push(FuncType { params, results });
                }
            }
            2 => {
                for _ in 0..s.u32()? {
                    let module = s.name()?;
                    let field = s.name()?;
                    let kind = match s.u8()? {
                        0 => ImportKind::Func(s.u32()?),
                        1 => ImportKind::Table(s.table_type()?),
                        2 => ImportKind::Memory(s.limits()?),
                        3 => ImportKind::Global(s.global_type()?),
                        k => return Err(s.err(format!("unknown import kind {k}"))),
                    };
                    m.imports.push(Import { module, field, kind });
                }
            }
            3 => {
                let n = s.u32()?;
                for _ in 0..n {
                    m.functions.push(s.u32()?);
                }
                func_count = Some(n);
            }
            4 => {
                for _ in 0..s.u32()? {
                    m.tables.push(s.table_type()?);
                }
            }
            5 => {
                for _ in 0..s.u32()? {
                    m.memories.push(s.limits()?);
                }
            }
            6 => {
                for _ in 0..s.u32()? {
                    let ty = s.global_type()?;
                    let init = s.const_expr()?;
                    m.globals.push(GlobalDef { ty, init });
                }
            }
            7 => {
                for _ in 0..s.u32()? {
                    let name = s.name()?;
                    let k = s.u8()?;
                    let kind = ExternalKind::from_byte(k).ok_or_else(|| s.err(format!("unknown export kind {k}")))?;
                    let index = s.u32()?;
                    m.exports.push(Export { name, kind, index });
                }
            }
            8 => m.start = Some(s.u32()?),
            9 => {
                for _ in 0..s.u32()? {
                    let flags = s.u32()?;
                    let table = match flags {
                        0 => 0,
                        2 => s.u32()?,
                        f => return Err(s.err(format!("unsupported element segment flags {f}"))),
                    };
                    let offset = s.const_expr()?;
                    if flags == 2 && s.u8()? != 0 {
                        return Err(s.err("unsupported element kind"));
                    }
                    let mut funcs = Vec::new();
                    for _ in 0..s.u32()? {
                        funcs.push(s.u32()?);
                    }
                    m.elements.push(ElementSegment { table, offset, funcs });
                }
            }
            12 => m.data_count = Some(s.u32()?),
            10 => {
                let n = s.u32()?;
                if func_count.unwrap_or(0) != n {
                    return Err(s.err("function and code section counts differ"));
                }
                for _ in 0..n {
                    let len = s.u32()? as usize;
                    body_offsets.push(s.offset());
                    let mut body = s.sub(len)?;
                    m.code.push(body.func_body()?);
                }
            }
            11 => {
                for _ in 0..s.u32()? {
                    let mode = match s.u32()? {
                        0 => DataMode::Active { memory: 0, offset: s.const_expr()? },
                        1 => DataMode::Passive,
                        2 => {
                            let memory = s.u32()?;
                            DataMode::Active { memory, offset: s.const_expr()? }
                        }
                        f => return Err(s.err(format!("unsupported data segment flags {f}"))),
                    };
                    let len = s.u32()? as usize;
                    let bytes = s.bytes(len)?.to_vec();
                    m.data.push(DataSegment { mode, bytes });
                }
            }
            _ => unreachable!(),
        }
        if !s.eof() {
            return Err(s.err(format!("section {id} has trailing bytes")));
        }
    }

    if m.functions.len() != m.code.len() {
        return Err(ModelError::Malformed {
            offset: bytes.len(),
            reason: "function and code section counts differ".into(),
        });
    }
    if m.total_memories() > 1 {
        return Err(ModelError::Malformed { offset: 0, reason: "multiple memories are not supported".into() });
    }
    if let Some(v) = validate(&m).into_iter().find(Violation::is_structural) {
        let offset = v.func().and_then(|f| f.checked_sub(m.imported_func_count())).and_then(|i| body_offsets.get(i as usize)).copied().unwrap_or(0);
        return Err(ModelError::Malformed { offset, reason: v.to_string() });
    }
    Ok(m)
}

fn name_map(r: &mut Reader<'_>) -> Result<BTreeMap<u32, String>, ModelError> {
    let mut map = BTreeMap::new();
    for _ in 0..r.u32()? {
        let idx = r.u32()?;
        map.insert(idx, r.name()?);
    }
    Ok(map)
}

fn parse_names(r: &mut Reader<'_>) -> Result<NameSection, ModelError> {
    let mut names = NameSection::default();
    while !r.eof() {
        let id = r.u8()?;
        let len = r.u32()? as usize;
        let mut s = r.sub(len)?;
        match id {
            0 => names.module = Some(s.name()?),
            1 => names.functions = name_map(&mut s)?,
            2 => {
                for _ in 0..s.u32()? {
                    let f = s.u32()?;
                    names.locals.insert(f, name_map(&mut s)?);
                }
            }
            7 => names.globals = name_map(&mut s)?,
            _ => {
                names.other.push((id, s.bytes(len)?.to_vec()));
            }
        }
        if !s.eof() {
            return Err(s.err(format!("name subsection {id} has trailing bytes")));
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_module() {
        let m = decode(b"\0asm\x01\0\0\0").unwrap();
        assert_eq!(m, WasmModule::default());
    }

    #[test]
    fn rejects_version_2() {
        let err = decode(b"\0asm\x02\0\0\0").unwrap_err();
        assert!(matches!(err, ModelError::Malformed { offset: 4, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"\0asn\x01\0\0\0").is_err());
        assert!(decode(b"\0asm\x01\0").is_err());
        // type section claims 5 bytes, only 2 present
        assert!(decode(b"\0asm\x01\0\0\0\x01\x05\x01\x60").is_err());
    }

    #[test]
    fn rejects_bad_leb() {
        // section size with 6 continuation bytes
        let err = decode(b"\0asm\x01\0\0\0\x01\x80\x80\x80\x80\x80\x00").unwrap_err();
        assert!(err.to_string().contains("LEB128"), "{err}");
    }

    #[test]
    fn rejects_unbalanced_body() {
        // type () -> (), one function whose body is `block` without matching end
        let bytes = b"\0asm\x01\0\0\0\x01\x04\x01\x60\x00\x00\x03\x02\x01\x00\x0a\x05\x01\x03\x00\x02\x40";
        let err = decode(bytes).unwrap_err();
        assert!(err.to_string().contains("unbalanced"), "{err}");
    }

    #[test]
    fn rejects_out_of_range_call() {
        // body: call 7; end
        let bytes = b"\0asm\x01\0\0\0\x01\x04\x01\x60\x00\x00\x03\x02\x01\x00\x0a\x06\x01\x04\x00\x10\x07\x0b";
        let err = decode(bytes).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn opaque_keeps_padded_immediates() {
        // f32.const with raw bits, and an opaque i64.load whose offset LEB is padded
        let body = [0x00, 0x43, 1, 2, 3, 4, 0x1a, 0x41, 0x00, 0x29, 0x03, 0x80, 0x00, 0x1a, 0x0b];
        let mut bytes = b"\0asm\x01\0\0\0\x01\x04\x01\x60\x00\x00\x03\x02\x01\x00\x05\x03\x01\x00\x01".to_vec();
        bytes.extend_from_slice(&[0x0a, (body.len() + 2) as u8, 0x01, body.len() as u8]);
        bytes.extend_from_slice(&body);
        let m = decode(&bytes).unwrap();
        let instrs = &m.code[0].instrs;
        assert_eq!(instrs[0], Instr::Opaque(vec![0x43, 1, 2, 3, 4]));
        assert_eq!(instrs[3], Instr::Opaque(vec![0x29, 0x03, 0x80, 0x00]));
        assert!(instrs[3].is_load());
        // opaque bytes survive re-encoding verbatim
        let again = encode(&m).unwrap();
        assert_eq!(decode(&again).unwrap(), m);
        assert!(again.windows(4).any(|w| w == [0x29, 0x03, 0x80, 0x00]));
    }
}
