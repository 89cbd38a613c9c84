//! Replaces the `random_get` import with a local stub that always fails.

use super::{SspError, RANDOM_GET};
use crate::model::{remap_functions, FuncBody, ImportKind, Instr, WasmModule, WASI_MODULE};

/// Name given to the stub in the name section.
pub const FAULT_STUB_NAME: &str = "__wssp_random_get_fault";

/// Removes the `random_get` import and appends a defined function of the same
/// type returning errno 1. Calls to the import now reach the stub; the
/// remaining function indices shift down by one.
pub fn inject_fault_random(m: &WasmModule) -> Result<WasmModule, SspError> {
    let (r, ty) = m.find_func_import(WASI_MODULE, RANDOM_GET).ok_or(SspError::ImportNotFound)?;
    let pos = m
        .imports
        .iter()
        .position(|i| i.module == WASI_MODULE && i.field == RANDOM_GET && matches!(i.kind, ImportKind::Func(_)))
        .expect("import located above");
    let stub = m.total_funcs() - 1;
    let mut out = m.clone();
    out.imports.remove(pos);
    let mut out = remap_functions(out, |f| match f.cmp(&r) {
        std::cmp::Ordering::Less => f,
        std::cmp::Ordering::Equal => stub,
        std::cmp::Ordering::Greater => f - 1,
    });
    out.functions.push(ty);
    out.code.push(FuncBody { locals: vec![], instrs: vec![Instr::I32Const(1), Instr::End] });
    out.names_mut().functions.insert(stub, FAULT_STUB_NAME.into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build::ModuleBuilder;
    use crate::model::{validate, ExternalKind, FuncType, ValType};

    #[test]
    fn stub_takes_over_calls() {
        let mut b = ModuleBuilder::new();
        let ty = FuncType::new([ValType::I32, ValType::I32], [ValType::I32]);
        let before = b.import_func("wasi_snapshot_preview1", "fd_write", FuncType::new([ValType::I32; 4], [ValType::I32]));
        let rg = b.import_func(WASI_MODULE, RANDOM_GET, ty);
        let after = b.import_func("wasi_snapshot_preview1", "proc_exit", FuncType::new([ValType::I32], []));
        let main = b.func(
            "main",
            FuncType::default(),
            vec![],
            vec![
                Instr::I32Const(0),
                Instr::I32Const(4),
                Instr::Call(rg),
                Instr::Drop,
                Instr::I32Const(0),
                Instr::Call(after),
                Instr::I32Const(0),
                Instr::I32Const(0),
                Instr::I32Const(0),
                Instr::I32Const(0),
                Instr::Call(before),
                Instr::Drop,
            ],
        );
        b.export("_start", ExternalKind::Func, main);
        let m = b.finish();

        let out = inject_fault_random(&m).unwrap();
        assert!(validate(&out).is_empty());
        assert_eq!(out.imported_func_count(), 2);
        let main2 = out.find_export("_start", ExternalKind::Func).unwrap();
        assert_eq!(main2, 2);
        let body = out.body(main2).unwrap();
        assert_eq!(body.instrs[2], Instr::Call(3));
        assert_eq!(body.instrs[5], Instr::Call(1));
        assert_eq!(body.instrs[10], Instr::Call(0));
        assert_eq!(out.body(3).unwrap().instrs, vec![Instr::I32Const(1), Instr::End]);
        assert_eq!(out.func_name(3), Some(FAULT_STUB_NAME));
        assert_eq!(out.func_name(1), Some("proc_exit"));
    }

    #[test]
    fn missing_import() {
        assert!(matches!(inject_fault_random(&WasmModule::default()), Err(SspError::ImportNotFound)));
    }
}
