//! In-memory representation of a wasm32 module (core 1.0 + mutable globals,
//! plus the handful of post-MVP encodings current toolchains emit by default).
//!
//! Values are plain data: every transform takes a module and returns a new one.

mod decode;
mod encode;
mod instr;
mod remap;
mod validate;

pub mod build;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use decode::decode;
pub use encode::encode;
pub use instr::{BlockType, Instr, MemArg};
pub use remap::{remap_function_indices, remap_functions};
pub use validate::{validate, Violation};

pub const WASI_MODULE: &str = "wasi_snapshot_preview1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed module at offset {offset:#x}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("{what} does not fit in u32")]
    EncodeOverflow { what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ValType {
    I32,
    I64,
    F32,
    F64,
}

impl ValType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x7f => ValType::I32,
            0x7e => ValType::I64,
            0x7d => ValType::F32,
            0x7c => ValType::F64,
            _ => return None,
        })
    }

    pub fn byte(self) -> u8 {
        match self {
            ValType::I32 => 0x7f,
            ValType::I64 => 0x7e,
            ValType::F32 => 0x7d,
            ValType::F64 => 0x7c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FuncType {
    pub params: Vec<ValType>,
    pub results: Vec<ValType>,
}

impl FuncType {
    pub fn new(params: impl Into<Vec<ValType>>, results: impl Into<Vec<ValType>>) -> Self {
        FuncType { params: params.into(), results: results.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub min: u32,
    pub max: Option<u32>,
}

pub const PAGE_SIZE: u64 = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableType {
    /// Element reference type byte (0x70 = funcref).
    pub elem: u8,
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalType {
    pub ty: ValType,
    pub mutable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportKind {
    Func(u32),
    Table(TableType),
    Memory(Limits),
    Global(GlobalType),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Import {
    pub module: String,
    pub field: String,
    pub kind: ImportKind,
}

/// A constant initializer expression (the trailing `end` is implicit).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstExpr {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    GlobalGet(u32),
}

impl ConstExpr {
    pub fn as_i32(&self) -> Option<i32> {
        match self {
            ConstExpr::I32(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub ty: GlobalType,
    pub init: ConstExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalKind {
    Func,
    Table,
    Memory,
    Global,
}

impl ExternalKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => ExternalKind::Func,
            1 => ExternalKind::Table,
            2 => ExternalKind::Memory,
            3 => ExternalKind::Global,
            _ => return None,
        })
    }

    pub fn byte(self) -> u8 {
        match self {
            ExternalKind::Func => 0,
            ExternalKind::Table => 1,
            ExternalKind::Memory => 2,
            ExternalKind::Global => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Export {
    pub name: String,
    pub kind: ExternalKind,
    pub index: u32,
}

/// Active funcref element segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSegment {
    pub table: u32,
    pub offset: ConstExpr,
    pub funcs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataMode {
    Active { memory: u32, offset: ConstExpr },
    Passive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSegment {
    pub mode: DataMode,
    pub bytes: Vec<u8>,
}

impl DataSegment {
    pub fn active(offset: i32, bytes: impl Into<Vec<u8>>) -> Self {
        DataSegment {
            mode: DataMode::Active { memory: 0, offset: ConstExpr::I32(offset) },
            bytes: bytes.into(),
        }
    }

    /// Address range `[lo, hi)` for an active segment with a constant offset.
    pub fn const_range(&self) -> Option<(u32, u32)> {
        match &self.mode {
            DataMode::Active { offset: ConstExpr::I32(off), .. } => {
                let lo = *off as u32;
                let hi = u64::from(lo) + self.bytes.len() as u64;
                Some((lo, u32::try_from(hi).ok()?))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FuncBody {
    /// Run-length encoded local declarations, as in the binary format.
    pub locals: Vec<(u32, ValType)>,
    /// Instructions including the terminating `end`.
    pub instrs: Vec<Instr>,
}

impl FuncBody {
    pub fn local_count(&self) -> u64 {
        self.locals.iter().map(|(n, _)| u64::from(*n)).sum()
    }
}

/// Where a custom section sat relative to the known sections: the id of the
/// last known section preceding it (0 = before any known section).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CustomSection {
    pub name: String,
    pub after: u8,
    pub data: Vec<u8>,
}

/// Parsed "name" custom section. Subsections that are not interpreted are kept
/// as raw payloads.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NameSection {
    pub module: Option<String>,
    pub functions: BTreeMap<u32, String>,
    pub locals: BTreeMap<u32, BTreeMap<u32, String>>,
    pub globals: BTreeMap<u32, String>,
    pub other: Vec<(u8, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WasmModule {
    pub types: Vec<FuncType>,
    pub imports: Vec<Import>,
    /// Type index of each defined function.
    pub functions: Vec<u32>,
    pub tables: Vec<TableType>,
    pub memories: Vec<Limits>,
    pub globals: Vec<GlobalDef>,
    pub exports: Vec<Export>,
    pub start: Option<u32>,
    pub elements: Vec<ElementSegment>,
    pub data_count: Option<u32>,
    pub code: Vec<FuncBody>,
    pub data: Vec<DataSegment>,
    pub names: Option<NameSection>,
    pub custom: Vec<CustomSection>,
}

impl WasmModule {
    pub fn imported_func_count(&self) -> u32 {
        self.imports.iter().filter(|i| matches!(i.kind, ImportKind::Func(_))).count() as u32
    }

    pub fn imported_global_count(&self) -> u32 {
        self.imports.iter().filter(|i| matches!(i.kind, ImportKind::Global(_))).count() as u32
    }

    pub fn imported_table_count(&self) -> u32 {
        self.imports.iter().filter(|i| matches!(i.kind, ImportKind::Table(_))).count() as u32
    }

    pub fn imported_memory_count(&self) -> u32 {
        self.imports.iter().filter(|i| matches!(i.kind, ImportKind::Memory(_))).count() as u32
    }

    pub fn total_funcs(&self) -> u32 {
        self.imported_func_count() + self.functions.len() as u32
    }

    pub fn total_globals(&self) -> u32 {
        self.imported_global_count() + self.globals.len() as u32
    }

    pub fn total_tables(&self) -> u32 {
        self.imported_table_count() + self.tables.len() as u32
    }

    pub fn total_memories(&self) -> u32 {
        self.imported_memory_count() + self.memories.len() as u32
    }

    /// Type index of a function in the function index space.
    pub fn func_type_index(&self, func: u32) -> Option<u32> {
        let imported = self.imported_func_count();
        if func < imported {
            self.imports
                .iter()
                .filter_map(|i| match i.kind {
                    ImportKind::Func(t) => Some(t),
                    _ => None,
                })
                .nth(func as usize)
        } else {
            self.functions.get((func - imported) as usize).copied()
        }
    }

    pub fn func_type(&self, func: u32) -> Option<&FuncType> {
        self.func_type_index(func).and_then(|t| self.types.get(t as usize))
    }

    pub fn global_type(&self, global: u32) -> Option<GlobalType> {
        let imported = self.imported_global_count();
        if global < imported {
            self.imports
                .iter()
                .filter_map(|i| match i.kind {
                    ImportKind::Global(g) => Some(g),
                    _ => None,
                })
                .nth(global as usize)
        } else {
            self.globals.get((global - imported) as usize).map(|g| g.ty)
        }
    }

    /// Defined global by absolute index.
    pub fn defined_global(&self, global: u32) -> Option<&GlobalDef> {
        global
            .checked_sub(self.imported_global_count())
            .and_then(|i| self.globals.get(i as usize))
    }

    /// Body of a defined function by absolute index.
    pub fn body(&self, func: u32) -> Option<&FuncBody> {
        func.checked_sub(self.imported_func_count()).and_then(|i| self.code.get(i as usize))
    }

    pub fn body_mut(&mut self, func: u32) -> Option<&mut FuncBody> {
        let imported = self.imported_func_count();
        func.checked_sub(imported).and_then(move |i| self.code.get_mut(i as usize))
    }

    /// Absolute function index of an import, if present.
    pub fn find_func_import(&self, module: &str, field: &str) -> Option<(u32, u32)> {
        self.imports
            .iter()
            .filter_map(|i| match i.kind {
                ImportKind::Func(t) => Some((i, t)),
                _ => None,
            })
            .enumerate()
            .find(|(_, (i, _))| i.module == module && i.field == field)
            .map(|(idx, (_, t))| (idx as u32, t))
    }

    pub fn find_export(&self, name: &str, kind: ExternalKind) -> Option<u32> {
        self.exports.iter().find(|e| e.name == name && e.kind == kind).map(|e| e.index)
    }

    pub fn func_name(&self, func: u32) -> Option<&str> {
        self.names.as_ref().and_then(|n| n.functions.get(&func)).map(String::as_str)
    }

    pub fn global_name(&self, global: u32) -> Option<&str> {
        self.names.as_ref().and_then(|n| n.globals.get(&global)).map(String::as_str)
    }

    /// Function index carrying `name` in the name section, or exported under it.
    pub fn func_by_name(&self, name: &str) -> Option<u32> {
        self.names
            .as_ref()
            .and_then(|n| n.functions.iter().find(|(_, v)| *v == name).map(|(k, _)| *k))
            .or_else(|| self.find_export(name, ExternalKind::Func))
    }

    /// Global index carrying `name` in the name section, exported under it, or
    /// imported with that field name.
    pub fn global_by_name(&self, name: &str) -> Option<u32> {
        if let Some(i) = self
            .names
            .as_ref()
            .and_then(|n| n.globals.iter().find(|(_, v)| *v == name).map(|(k, _)| *k))
        {
            return Some(i);
        }
        if let Some(i) = self.find_export(name, ExternalKind::Global) {
            return Some(i);
        }
        self.imports
            .iter()
            .filter(|i| matches!(i.kind, ImportKind::Global(_)))
            .position(|i| i.field == name)
            .map(|p| p as u32)
    }

    /// Returns the type index for `ty`, appending it if absent.
    pub fn ensure_type(&mut self, ty: FuncType) -> u32 {
        if let Some(p) = self.types.iter().position(|t| *t == ty) {
            return p as u32;
        }
        self.types.push(ty);
        (self.types.len() - 1) as u32
    }

    pub fn names_mut(&mut self) -> &mut NameSection {
        self.names.get_or_insert_with(NameSection::default)
    }

    /// `[lo, hi)` spanning all active data segments with constant offsets.
    pub fn data_range(&self) -> Option<(u32, u32)> {
        self.data
            .iter()
            .filter_map(DataSegment::const_range)
            .filter(|(lo, hi)| hi > lo)
            .fold(None, |acc, (lo, hi)| match acc {
                None => Some((lo, hi)),
                Some((a, b)) => Some((a.min(lo), b.max(hi))),
            })
    }
}
