use super::*;

/// Rewrites every function-index reference (calls, element segments, function
/// exports, start, and name-section keys) through `map`.
pub fn remap_functions(mut m: WasmModule, map: impl Fn(u32) -> u32) -> WasmModule {
    for body in &mut m.code {
        for instr in &mut body.instrs {
            if let Instr::Call(f) = instr {
                *f = map(*f);
            }
        }
    }
    for seg in &mut m.elements {
        for f in &mut seg.funcs {
            *f = map(*f);
        }
    }
    for e in &mut m.exports {
        if e.kind == ExternalKind::Func {
            e.index = map(e.index);
        }
    }
    if let Some(s) = &mut m.start {
        *s = map(*s);
    }
    if let Some(names) = &mut m.names {
        names.functions = std::mem::take(&mut names.functions).into_iter().map(|(k, v)| (map(k), v)).collect();
        names.locals = std::mem::take(&mut names.locals).into_iter().map(|(k, v)| (map(k), v)).collect();
    }
    m
}

/// Shifts references to defined functions after `inserted` function imports
/// were appended to the import list. References to the imports that existed
/// before are left alone.
pub fn remap_function_indices(m: WasmModule, inserted: u32) -> WasmModule {
    if inserted == 0 {
        return m;
    }
    let old_imports = m.imported_func_count() - inserted;
    remap_functions(m, |f| if f >= old_imports { f + inserted } else { f })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WasmModule {
        let mut m = WasmModule {
            types: vec![FuncType::default()],
            functions: vec![0, 0],
            tables: vec![TableType { elem: 0x70, limits: Limits { min: 2, max: None } }],
            code: vec![
                FuncBody { locals: vec![], instrs: vec![Instr::Call(1), Instr::End] },
                FuncBody { locals: vec![], instrs: vec![Instr::Call(0), Instr::End] },
            ],
            elements: vec![ElementSegment { table: 0, offset: ConstExpr::I32(0), funcs: vec![1] }],
            exports: vec![Export { name: "_start".into(), kind: ExternalKind::Func, index: 0 }],
            ..Default::default()
        };
        m.names_mut().functions.insert(1, "callee".into());
        m
    }

    #[test]
    fn zero_insertions_is_identity() {
        assert_eq!(remap_function_indices(sample(), 0), sample());
    }

    #[test]
    fn shifts_defined_functions() {
        let mut m = sample();
        m.imports.push(Import { module: "env".into(), field: "noop".into(), kind: ImportKind::Func(0) });
        let r = remap_function_indices(m, 1);
        assert_eq!(r.elements[0].funcs, vec![2]);
        assert_eq!(r.code[1].instrs[0], Instr::Call(1));
        assert_eq!(r.code[0].instrs[0], Instr::Call(2));
        assert_eq!(r.exports[0].index, 1);
        assert_eq!(r.func_name(2), Some("callee"));
    }

    #[test]
    fn leaves_existing_imports_alone() {
        let mut m = sample();
        m.imports.push(Import { module: "env".into(), field: "old".into(), kind: ImportKind::Func(0) });
        let m = remap_function_indices(m, 0);
        // now calls to 0 mean the import; insert two more imports after it
        let mut m = m;
        m.code[0].instrs[0] = Instr::Call(0);
        m.imports.push(Import { module: "env".into(), field: "a".into(), kind: ImportKind::Func(0) });
        m.imports.push(Import { module: "env".into(), field: "b".into(), kind: ImportKind::Func(0) });
        m.exports[0].index = 3;
        let r = remap_function_indices(m, 2);
        assert_eq!(r.code[0].instrs[0], Instr::Call(0));
        assert_eq!(r.exports[0].index, 5);
    }
}
