use std::fmt;

use super::*;

/// A validation finding. Operand-stack typing is left to the execution engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfRangeIndex { space: &'static str, index: u32, bound: u32, func: Option<u32> },
    UnbalancedNesting { func: u32 },
    GlobalTypeMismatch { global: u32, detail: String },
    ImmutableGlobalSet { func: u32, global: u32 },
    FunctionCodeMismatch { functions: u32, bodies: u32 },
    MultipleMemories { count: u32 },
    DataOutOfBounds { segment: u32 },
    BadStartSignature { func: u32 },
}

impl Violation {
    /// Index and nesting errors, which the decoder reports as malformed input.
    pub fn is_structural(&self) -> bool {
        matches!(self, Violation::OutOfRangeIndex { .. } | Violation::UnbalancedNesting { .. })
    }

    pub fn func(&self) -> Option<u32> {
        match self {
            Violation::OutOfRangeIndex { func, .. } => *func,
            Violation::UnbalancedNesting { func } | Violation::ImmutableGlobalSet { func, .. } => Some(*func),
            _ => None,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRangeIndex { space, index, bound, func } => {
                write!(f, "{space} index {index} out of range (bound {bound})")?;
                if let Some(func) = func {
                    write!(f, " in function {func}")?;
                }
                Ok(())
            }
            Violation::UnbalancedNesting { func } => write!(f, "unbalanced block nesting in function {func}"),
            Violation::GlobalTypeMismatch { global, detail } => write!(f, "global {global}: {detail}"),
            Violation::ImmutableGlobalSet { func, global } => {
                write!(f, "function {func} sets immutable global {global}")
            }
            Violation::FunctionCodeMismatch { functions, bodies } => {
                write!(f, "{functions} functions declared but {bodies} bodies present")
            }
            Violation::MultipleMemories { count } => write!(f, "{count} memories declared, at most one supported"),
            Violation::DataOutOfBounds { segment } => {
                write!(f, "data segment {segment} exceeds the declared minimum memory")
            }
            Violation::BadStartSignature { func } => write!(f, "start function {func} must have type [] -> []"),
        }
    }
}

fn const_type(m: &WasmModule, e: &ConstExpr) -> Option<ValType> {
    match e {
        ConstExpr::I32(_) => Some(ValType::I32),
        ConstExpr::I64(_) => Some(ValType::I64),
        ConstExpr::F32(_) => Some(ValType::F32),
        ConstExpr::F64(_) => Some(ValType::F64),
        ConstExpr::GlobalGet(g) => m.global_type(*g).map(|t| t.ty),
    }
}

struct Check<'m> {
    m: &'m WasmModule,
    out: Vec<Violation>,
}

impl Check<'_> {
    fn range(&mut self, space: &'static str, index: u32, bound: u32, func: Option<u32>) -> bool {
        if index >= bound {
            self.out.push(Violation::OutOfRangeIndex { space, index, bound, func });
            false
        } else {
            true
        }
    }

    fn const_expr(&mut self, e: &ConstExpr) {
        if let ConstExpr::GlobalGet(g) = e {
            let bound = self.m.imported_global_count();
            self.range("global (constant expression)", *g, bound, None);
        }
    }

    fn body(&mut self, func: u32, body: &FuncBody) {
        let m = self.m;
        let n_types = m.types.len() as u32;
        let n_funcs = m.total_funcs();
        let n_globals = m.total_globals();
        let n_tables = m.total_tables();
        let has_memory = m.total_memories() > 0;
        let n_locals = m.func_type(func).map(|t| t.params.len() as u64).unwrap_or(0) + body.local_count();
        let n_locals = u32::try_from(n_locals).unwrap_or(u32::MAX);
        let f = Some(func);

        // depth = number of enclosing labels, including the function body itself
        let mut depth: u32 = 1;
        let mut finished_at = None;
        for (pc, instr) in body.instrs.iter().enumerate() {
            if finished_at.is_some() {
                self.out.push(Violation::UnbalancedNesting { func });
                return;
            }
            match instr {
                Instr::Block(bt) | Instr::Loop(bt) | Instr::If(bt) => {
                    if let BlockType::Func(t) = bt {
                        self.range("type", *t, n_types, f);
                    }
                    depth += 1;
                }
                Instr::End => {
                    depth -= 1;
                    if depth == 0 {
                        finished_at = Some(pc);
                    }
                }
                Instr::Br(l) | Instr::BrIf(l) => {
                    self.range("label", *l, depth, f);
                }
                Instr::BrTable { targets, default } => {
                    for l in targets.iter().chain(std::iter::once(default)) {
                        self.range("label", *l, depth, f);
                    }
                }
                Instr::Call(t) => {
                    self.range("function", *t, n_funcs, f);
                }
                Instr::CallIndirect { type_index, table } => {
                    self.range("type", *type_index, n_types, f);
                    self.range("table", *table, n_tables, f);
                }
                Instr::LocalGet(i) | Instr::LocalSet(i) | Instr::LocalTee(i) => {
                    self.range("local", *i, n_locals, f);
                }
                Instr::GlobalGet(g) => {
                    self.range("global", *g, n_globals, f);
                }
                Instr::GlobalSet(g) => {
                    if self.range("global", *g, n_globals, f) && !m.global_type(*g).is_some_and(|t| t.mutable) {
                        self.out.push(Violation::ImmutableGlobalSet { func, global: *g });
                    }
                }
                i if !has_memory
                    && (i.is_load()
                        || i.is_store()
                        || matches!(i, Instr::MemorySize | Instr::MemoryGrow)) =>
                {
                    self.range("memory", 0, 0, f);
                }
                _ => {}
            }
        }
        if finished_at.is_none() {
            self.out.push(Violation::UnbalancedNesting { func });
        }
    }
}

/// Checks index references, global typing and block nesting.
pub fn validate(m: &WasmModule) -> Vec<Violation> {
    let mut c = Check { m, out: Vec::new() };
    let n_types = m.types.len() as u32;
    let n_funcs = m.total_funcs();

    if m.functions.len() != m.code.len() {
        c.out.push(Violation::FunctionCodeMismatch {
            functions: m.functions.len() as u32,
            bodies: m.code.len() as u32,
        });
    }
    if m.total_memories() > 1 {
        c.out.push(Violation::MultipleMemories { count: m.total_memories() });
    }
    for imp in &m.imports {
        if let ImportKind::Func(t) = imp.kind {
            c.range("type", t, n_types, None);
        }
    }
    for t in &m.functions {
        c.range("type", *t, n_types, None);
    }
    let imported_globals = m.imported_global_count();
    for (i, g) in m.globals.iter().enumerate() {
        let idx = imported_globals + i as u32;
        c.const_expr(&g.init);
        match const_type(m, &g.init) {
            Some(t) if t != g.ty.ty => c.out.push(Violation::GlobalTypeMismatch {
                global: idx,
                detail: format!("declared {:?} but initialized with {:?}", g.ty.ty, t),
            }),
            _ => {}
        }
    }
    for e in &m.exports {
        let bound = match e.kind {
            ExternalKind::Func => n_funcs,
            ExternalKind::Table => m.total_tables(),
            ExternalKind::Memory => m.total_memories(),
            ExternalKind::Global => m.total_globals(),
        };
        c.range("export", e.index, bound, None);
    }
    if let Some(s) = m.start {
        if c.range("function", s, n_funcs, None) && m.func_type(s).is_some_and(|t| !t.params.is_empty() || !t.results.is_empty()) {
            c.out.push(Violation::BadStartSignature { func: s });
        }
    }
    for e in &m.elements {
        c.range("table", e.table, m.total_tables(), None);
        c.const_expr(&e.offset);
        for f in &e.funcs {
            c.range("function", *f, n_funcs, None);
        }
    }
    let min_bytes = m
        .memories
        .first()
        .map(|l| l.min)
        .or_else(|| {
            m.imports.iter().find_map(|i| match i.kind {
                ImportKind::Memory(l) => Some(l.min),
                _ => None,
            })
        })
        .map(|p| u64::from(p) * PAGE_SIZE);
    for (i, d) in m.data.iter().enumerate() {
        if let DataMode::Active { memory, offset } = &d.mode {
            c.range("memory", *memory, m.total_memories(), None);
            c.const_expr(offset);
            if let (Some((_, hi)), Some(min)) = (d.const_range(), min_bytes) {
                if u64::from(hi) > min {
                    c.out.push(Violation::DataOutOfBounds { segment: i as u32 });
                }
            } else if d.const_range().is_none() && matches!(offset, ConstExpr::I32(_)) {
                c.out.push(Violation::DataOutOfBounds { segment: i as u32 });
            }
        }
    }
    let imported_funcs = m.imported_func_count();
    for (i, body) in m.code.iter().enumerate() {
        c.body(imported_funcs + i as u32, body);
    }
    c.out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_func(instrs: Vec<Instr>) -> WasmModule {
        WasmModule {
            types: vec![FuncType::default()],
            functions: vec![0, 0, 0],
            code: vec![
                FuncBody { locals: vec![], instrs },
                FuncBody { locals: vec![], instrs: vec![Instr::End] },
                FuncBody { locals: vec![], instrs: vec![Instr::End] },
            ],
            ..Default::default()
        }
    }

    #[test]
    fn empty_module_is_valid() {
        assert!(validate(&WasmModule::default()).is_empty());
    }

    #[test]
    fn call_out_of_range() {
        let m = one_func(vec![Instr::Call(7), Instr::End]);
        let v = validate(&m);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::OutOfRangeIndex { space: "function", index: 7, bound: 3, .. }));
    }

    #[test]
    fn nesting_and_labels() {
        let m = one_func(vec![Instr::Block(BlockType::Empty), Instr::Br(1), Instr::End]);
        assert_eq!(validate(&m), vec![Violation::UnbalancedNesting { func: 0 }]);
        let m = one_func(vec![Instr::Block(BlockType::Empty), Instr::Br(2), Instr::End, Instr::End]);
        assert!(matches!(validate(&m)[0], Violation::OutOfRangeIndex { space: "label", .. }));
    }

    #[test]
    fn global_typing() {
        let mut m = one_func(vec![Instr::GlobalSet(0), Instr::End]);
        m.globals.push(GlobalDef {
            ty: GlobalType { ty: ValType::I32, mutable: false },
            init: ConstExpr::I64(1),
        });
        let v = validate(&m);
        assert!(v.iter().any(|x| matches!(x, Violation::GlobalTypeMismatch { global: 0, .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::ImmutableGlobalSet { func: 0, global: 0 })));
    }

    #[test]
    fn data_must_fit_minimum_memory() {
        let mut m = WasmModule {
            memories: vec![Limits { min: 1, max: None }],
            data: vec![DataSegment::active(65530, vec![0; 8])],
            ..Default::default()
        };
        assert_eq!(validate(&m), vec![Violation::DataOutOfBounds { segment: 0 }]);
        m.data[0] = DataSegment::active(65528, vec![0; 8]);
        assert!(validate(&m).is_empty());
    }
}
