use std::collections::BTreeMap;

use crate::leb;

use super::*;

fn len_u32(n: usize, what: &'static str) -> Result<u64, ModelError> {
    u32::try_from(n).map(u64::from).map_err(|_| ModelError::EncodeOverflow { what })
}

fn write_name(out: &mut Vec<u8>, s: &str) -> Result<(), ModelError> {
    leb::write_unsigned(out, len_u32(s.len(), "name length")?);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn write_limits(out: &mut Vec<u8>, l: &Limits) {
    match l.max {
        None => {
            out.push(0);
            leb::write_unsigned(out, u64::from(l.min));
        }
        Some(max) => {
            out.push(1);
            leb::write_unsigned(out, u64::from(l.min));
            leb::write_unsigned(out, u64::from(max));
        }
    }
}

fn write_global_type(out: &mut Vec<u8>, g: &GlobalType) {
    out.push(g.ty.byte());
    out.push(u8::from(g.mutable));
}

fn write_const_expr(out: &mut Vec<u8>, e: &ConstExpr) {
    match e {
        ConstExpr::I32(v) => {
            out.push(0x41);
            leb::write_signed(out, i64::from(*v));
        }
        ConstExpr::I64(v) => {
            out.push(0x42);
            leb::write_signed(out, *v);
        }
        ConstExpr::F32(bits) => {
            out.push(0x43);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        ConstExpr::F64(bits) => {
            out.push(0x44);
            out.extend_from_slice(&bits.to_le_bytes());
        }
        ConstExpr::GlobalGet(g) => {
            out.push(0x23);
            leb::write_unsigned(out, u64::from(*g));
        }
    }
    out.push(0x0b);
}

fn write_section(out: &mut Vec<u8>, id: u8, payload: &[u8]) -> Result<(), ModelError> {
    out.push(id);
    leb::write_unsigned(out, len_u32(payload.len(), "section size")?);
    out.extend_from_slice(payload);
    Ok(())
}

/// Builds a vector section payload (count + items) when `items` is non-empty.
fn vec_section<T>(
    out: &mut Vec<u8>,
    id: u8,
    items: &[T],
    mut item: impl FnMut(&mut Vec<u8>, &T) -> Result<(), ModelError>,
) -> Result<(), ModelError> {
    if items.is_empty() {
        return Ok(());
    }
    let mut payload = Vec::new();
    leb::write_unsigned(&mut payload, len_u32(items.len(), "section item count")?);
    for it in items {
        item(&mut payload, it)?;
    }
    write_section(out, id, &payload)
}

fn write_customs(out: &mut Vec<u8>, m: &WasmModule, after: u8) -> Result<(), ModelError> {
    for c in m.custom.iter().filter(|c| c.after == after) {
        let mut payload = Vec::new();
        write_name(&mut payload, &c.name)?;
        payload.extend_from_slice(&c.data);
        write_section(out, 0, &payload)?;
    }
    Ok(())
}

fn write_name_map(out: &mut Vec<u8>, map: &BTreeMap<u32, String>) -> Result<(), ModelError> {
    leb::write_unsigned(out, len_u32(map.len(), "name map size")?);
    for (idx, name) in map {
        leb::write_unsigned(out, u64::from(*idx));
        write_name(out, name)?;
    }
    Ok(())
}

fn names_payload(n: &NameSection) -> Result<Vec<u8>, ModelError> {
    let mut subsections: Vec<(u8, Vec<u8>)> = Vec::new();
    if let Some(module) = &n.module {
        let mut p = Vec::new();
        write_name(&mut p, module)?;
        subsections.push((0, p));
    }
    if !n.functions.is_empty() {
        let mut p = Vec::new();
        write_name_map(&mut p, &n.functions)?;
        subsections.push((1, p));
    }
    if !n.locals.is_empty() {
        let mut p = Vec::new();
        leb::write_unsigned(&mut p, len_u32(n.locals.len(), "local name map size")?);
        for (f, map) in &n.locals {
            leb::write_unsigned(&mut p, u64::from(*f));
            write_name_map(&mut p, map)?;
        }
        subsections.push((2, p));
    }
    if !n.globals.is_empty() {
        let mut p = Vec::new();
        write_name_map(&mut p, &n.globals)?;
        subsections.push((7, p));
    }
    subsections.extend(n.other.iter().cloned());
    subsections.sort_by_key(|(id, _)| *id);

    let mut payload = Vec::new();
    write_name(&mut payload, "name")?;
    for (id, p) in subsections {
        payload.push(id);
        leb::write_unsigned(&mut payload, len_u32(p.len(), "name subsection size")?);
        payload.extend_from_slice(&p);
    }
    Ok(payload)
}

pub fn encode_body(body: &FuncBody) -> Result<Vec<u8>, ModelError> {
    let mut b = Vec::new();
    leb::write_unsigned(&mut b, len_u32(body.locals.len(), "local declaration count")?);
    for (n, ty) in &body.locals {
        leb::write_unsigned(&mut b, u64::from(*n));
        b.push(ty.byte());
    }
    for i in &body.instrs {
        i.encode(&mut b);
    }
    Ok(b)
}

/// Encodes a module. Output is canonical: sections in binary-format order,
/// minimal LEB128, empty sections omitted, the name section after all known
/// sections.
pub fn encode(m: &WasmModule) -> Result<Vec<u8>, ModelError> {
    let mut out = b"\0asm\x01\0\0\0".to_vec();
    write_customs(&mut out, m, 0)?;

    vec_section(&mut out, 1, &m.types, |p, t| {
        p.push(0x60);
        leb::write_unsigned(p, len_u32(t.params.len(), "param count")?);
        p.extend(t.params.iter().map(|v| v.byte()));
        leb::write_unsigned(p, len_u32(t.results.len(), "result count")?);
        p.extend(t.results.iter().map(|v| v.byte()));
        Ok(())
    })?;
    write_customs(&mut out, m, 1)?;

    vec_section(&mut out, 2, &m.imports, |p, i| {
        write_name(p, &i.module)?;
        write_name(p, &i.field)?;
        match &i.kind {
            ImportKind::Func(t) => {
                p.push(0);
                leb::write_unsigned(p, u64::from(*t));
            }
            ImportKind::Table(t) => {
                p.push(1);
                p.push(t.elem);
                write_limits(p, &t.limits);
            }
            ImportKind::Memory(l) => {
                p.push(2);
                write_limits(p, l);
            }
            ImportKind::Global(g) => {
                p.push(3);
                write_global_type(p, g);
            }
        }
        Ok(())
    })?;
    write_customs(&mut out, m, 2)?;

    vec_section(&mut out, 3, &m.functions, |p, t| {
        leb::write_unsigned(p, u64::from(*t));
        Ok(())
    })?;
    write_customs(&mut out, m, 3)?;

    vec_section(&mut out, 4, &m.tables, |p, t| {
        p.push(t.elem);
        write_limits(p, &t.limits);
        Ok(())
    })?;
    write_customs(&mut out, m, 4)?;

    vec_section(&mut out, 5, &m.memories, |p, l| {
        write_limits(p, l);
        Ok(())
    })?;
    write_customs(&mut out, m, 5)?;

    vec_section(&mut out, 6, &m.globals, |p, g| {
        write_global_type(p, &g.ty);
        write_const_expr(p, &g.init);
        Ok(())
    })?;
    write_customs(&mut out, m, 6)?;

    vec_section(&mut out, 7, &m.exports, |p, e| {
        write_name(p, &e.name)?;
        p.push(e.kind.byte());
        leb::write_unsigned(p, u64::from(e.index));
        Ok(())
    })?;
    write_customs(&mut out, m, 7)?;

    if let Some(start) = m.start {
        let mut p = Vec::new();
        leb::write_unsigned(&mut p, u64::from(start));
        write_section(&mut out, 8, &p)?;
    }
    write_customs(&mut out, m, 8)?;

    vec_section(&mut out, 9, &m.elements, |p, e| {
        if e.table == 0 {
            p.push(0);
            write_const_expr(p, &e.offset);
        } else {
            p.push(2);
            leb::write_unsigned(p, u64::from(e.table));
            write_const_expr(p, &e.offset);
            p.push(0);
        }
        leb::write_unsigned(p, len_u32(e.funcs.len(), "element count")?);
        for f in &e.funcs {
            leb::write_unsigned(p, u64::from(*f));
        }
        Ok(())
    })?;
    write_customs(&mut out, m, 9)?;

    if let Some(n) = m.data_count {
        let mut p = Vec::new();
        leb::write_unsigned(&mut p, u64::from(n));
        write_section(&mut out, 12, &p)?;
    }
    write_customs(&mut out, m, 12)?;

    vec_section(&mut out, 10, &m.code, |p, body| {
        let b = encode_body(body)?;
        leb::write_unsigned(p, len_u32(b.len(), "function body size")?);
        p.extend_from_slice(&b);
        Ok(())
    })?;
    write_customs(&mut out, m, 10)?;

    vec_section(&mut out, 11, &m.data, |p, d| {
        match &d.mode {
            DataMode::Active { memory: 0, offset } => {
                p.push(0);
                write_const_expr(p, offset);
            }
            DataMode::Active { memory, offset } => {
                p.push(2);
                leb::write_unsigned(p, u64::from(*memory));
                write_const_expr(p, offset);
            }
            DataMode::Passive => p.push(1),
        }
        leb::write_unsigned(p, len_u32(d.bytes.len(), "data segment size")?);
        p.extend_from_slice(&d.bytes);
        Ok(())
    })?;

    if let Some(names) = &m.names {
        write_section(&mut out, 0, &names_payload(names)?)?;
    }
    write_customs(&mut out, m, 11)?;
    Ok(out)
}
