//! Small builder for assembling modules in code.

use super::*;

#[derive(Debug, Default)]
pub struct ModuleBuilder {
    m: WasmModule,
}

impl ModuleBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn memory(&mut self, min_pages: u32, max_pages: Option<u32>) -> &mut Self {
        self.m.memories.push(Limits { min: min_pages, max: max_pages });
        self
    }

    /// Adds a function import. All imports must be added before any function is
    /// declared, so the index space stays consistent.
    pub fn import_func(&mut self, module: &str, field: &str, ty: FuncType) -> u32 {
        assert!(self.m.functions.is_empty(), "imports must precede defined functions");
        let t = self.m.ensure_type(ty);
        self.m.imports.push(Import { module: module.into(), field: field.into(), kind: ImportKind::Func(t) });
        let idx = self.m.imported_func_count() - 1;
        self.m.names_mut().functions.insert(idx, field.into());
        idx
    }

    pub fn global(&mut self, ty: ValType, mutable: bool, init: ConstExpr, name: Option<&str>) -> u32 {
        self.m.globals.push(GlobalDef { ty: GlobalType { ty, mutable }, init });
        let idx = self.m.total_globals() - 1;
        if let Some(n) = name {
            self.m.names_mut().globals.insert(idx, n.into());
        }
        idx
    }

    /// Reserves a function index; the body is supplied later with `define`.
    pub fn declare(&mut self, name: &str, ty: FuncType) -> u32 {
        let t = self.m.ensure_type(ty);
        self.m.functions.push(t);
        self.m.code.push(FuncBody { locals: vec![], instrs: vec![Instr::End] });
        let idx = self.m.total_funcs() - 1;
        self.m.names_mut().functions.insert(idx, name.into());
        idx
    }

    /// Appends the function's closing `end` unless `instrs` already has it.
    pub fn define(&mut self, func: u32, locals: Vec<(u32, ValType)>, mut instrs: Vec<Instr>) -> &mut Self {
        let opened = instrs.iter().filter(|i| i.opens_block()).count();
        let closed = instrs.iter().filter(|i| **i == Instr::End).count();
        if closed <= opened {
            instrs.push(Instr::End);
        }
        *self.m.body_mut(func).expect("declared function") = FuncBody { locals, instrs };
        self
    }

    pub fn func(&mut self, name: &str, ty: FuncType, locals: Vec<(u32, ValType)>, instrs: Vec<Instr>) -> u32 {
        let f = self.declare(name, ty);
        self.define(f, locals, instrs);
        f
    }

    pub fn export(&mut self, name: &str, kind: ExternalKind, index: u32) -> &mut Self {
        self.m.exports.push(Export { name: name.into(), kind, index });
        self
    }

    pub fn data(&mut self, offset: u32, bytes: impl Into<Vec<u8>>) -> &mut Self {
        self.m.data.push(DataSegment::active(offset as i32, bytes));
        self
    }

    pub fn start(&mut self, func: u32) -> &mut Self {
        self.m.start = Some(func);
        self
    }

    pub fn module(&self) -> &WasmModule {
        &self.m
    }

    pub fn finish(self) -> WasmModule {
        self.m
    }
}
