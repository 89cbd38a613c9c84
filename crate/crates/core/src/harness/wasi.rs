//! The slice of WASI preview 1 the harness provides.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use wasmtime::{Caller, Extern, Linker, Memory, Module, Val, ValType};

use super::RandomMode;
use crate::model::WASI_MODULE;

const ERRNO_SUCCESS: i32 = 0;
const ERRNO_BADF: i32 = 8;
const ERRNO_FAULT: i32 = 21;
const ERRNO_INVAL: i32 = 28;
pub(crate) const ERRNO_IO: i32 = 29;
pub(crate) const ERRNO_NOSYS: i32 = 52;

/// `proc_exit` unwinds the guest through this error.
#[derive(Debug, Clone, Copy)]
pub struct ProcExit(pub i32);

impl std::fmt::Display for ProcExit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "proc_exit({})", self.0)
    }
}

impl std::error::Error for ProcExit {}

pub(crate) struct Ctx {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub stdin: Vec<u8>,
    pub stdin_pos: usize,
    pub random: RandomMode,
    pub random_cursor: usize,
    pub args: Vec<String>,
    pub env: Vec<String>,
    pub started: Instant,
}

fn memory(caller: &mut Caller<'_, Ctx>) -> Option<Memory> {
    caller.get_export("memory").and_then(Extern::into_memory)
}

fn read_u32(mem: &[u8], at: u32) -> Option<u32> {
    let at = at as usize;
    mem.get(at..at.checked_add(4)?).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

fn write_bytes(mem: &mut [u8], at: u32, bytes: &[u8]) -> bool {
    let at = at as usize;
    match at.checked_add(bytes.len()).and_then(|end| mem.get_mut(at..end)) {
        Some(dst) => {
            dst.copy_from_slice(bytes);
            true
        }
        None => false,
    }
}

fn iovecs(mem: &[u8], iovs: u32, n: u32) -> Option<Vec<(u32, u32)>> {
    (0..n)
        .map(|i| {
            let at = iovs.checked_add(i.checked_mul(8)?)?;
            Some((read_u32(mem, at)?, read_u32(mem, at.checked_add(4)?)?))
        })
        .collect()
}

fn fd_write(mut caller: Caller<'_, Ctx>, fd: i32, iovs: i32, n: i32, nwritten: i32) -> i32 {
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    let (mem, ctx) = memory.data_and_store_mut(&mut caller);
    let Some(vecs) = iovecs(mem, iovs as u32, n as u32) else { return ERRNO_FAULT };
    let mut out = Vec::new();
    for (ptr, len) in vecs {
        match (ptr as usize).checked_add(len as usize).and_then(|end| mem.get(ptr as usize..end)) {
            Some(b) => out.extend_from_slice(b),
            None => return ERRNO_FAULT,
        }
    }
    let total = out.len() as u32;
    match fd {
        1 => ctx.stdout.extend_from_slice(&out),
        2 => ctx.stderr.extend_from_slice(&out),
        _ => return ERRNO_BADF,
    }
    if !write_bytes(mem, nwritten as u32, &total.to_le_bytes()) {
        return ERRNO_FAULT;
    }
    ERRNO_SUCCESS
}

fn fd_read(mut caller: Caller<'_, Ctx>, fd: i32, iovs: i32, n: i32, nread: i32) -> i32 {
    if fd != 0 {
        return ERRNO_BADF;
    }
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    let (mem, ctx) = memory.data_and_store_mut(&mut caller);
    let Some(vecs) = iovecs(mem, iovs as u32, n as u32) else { return ERRNO_FAULT };
    let mut total = 0u32;
    for (ptr, len) in vecs {
        let rest = &ctx.stdin[ctx.stdin_pos..];
        let take = rest.len().min(len as usize);
        if !write_bytes(mem, ptr, &rest[..take]) {
            return ERRNO_FAULT;
        }
        ctx.stdin_pos += take;
        total += take as u32;
    }
    if !write_bytes(mem, nread as u32, &total.to_le_bytes()) {
        return ERRNO_FAULT;
    }
    ERRNO_SUCCESS
}

fn random_get(mut caller: Caller<'_, Ctx>, buf: i32, len: i32) -> i32 {
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    let (mem, ctx) = memory.data_and_store_mut(&mut caller);
    let len = len as u32 as usize;
    let bytes = match &ctx.random {
        RandomMode::Fail => return ERRNO_IO,
        RandomMode::Host => {
            let mut b = vec![0u8; len];
            if getrandom::fill(&mut b).is_err() {
                return ERRNO_IO;
            }
            b
        }
        RandomMode::Fixed(src) => {
            let b: Vec<u8> = (0..len).map(|i| src[(ctx.random_cursor + i) % src.len()]).collect();
            ctx.random_cursor = (ctx.random_cursor + len) % src.len();
            b
        }
    };
    if write_bytes(mem, buf as u32, &bytes) {
        ERRNO_SUCCESS
    } else {
        ERRNO_FAULT
    }
}

/// Shared shape of `args_*` and `environ_*`: a pointer table plus a buffer of
/// NUL-terminated strings.
fn strings_get(mut caller: Caller<'_, Ctx>, which: fn(&Ctx) -> &Vec<String>, ptrs: i32, buf: i32) -> i32 {
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    let (mem, ctx) = memory.data_and_store_mut(&mut caller);
    let mut cursor = buf as u32;
    for (i, s) in which(ctx).iter().enumerate() {
        let slot = (ptrs as u32).wrapping_add(4 * i as u32);
        let mut bytes = s.as_bytes().to_vec();
        bytes.push(0);
        if !write_bytes(mem, slot, &cursor.to_le_bytes()) || !write_bytes(mem, cursor, &bytes) {
            return ERRNO_FAULT;
        }
        cursor = cursor.wrapping_add(bytes.len() as u32);
    }
    ERRNO_SUCCESS
}

fn strings_sizes(mut caller: Caller<'_, Ctx>, which: fn(&Ctx) -> &Vec<String>, count: i32, size: i32) -> i32 {
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    let (mem, ctx) = memory.data_and_store_mut(&mut caller);
    let v = which(ctx);
    let n = v.len() as u32;
    let bytes: u32 = v.iter().map(|s| s.len() as u32 + 1).sum();
    if write_bytes(mem, count as u32, &n.to_le_bytes()) && write_bytes(mem, size as u32, &bytes.to_le_bytes()) {
        ERRNO_SUCCESS
    } else {
        ERRNO_FAULT
    }
}

fn clock_time_get(mut caller: Caller<'_, Ctx>, id: i32, _precision: i64, out: i32) -> i32 {
    let now = match id {
        0 => SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0),
        1 => caller.data().started.elapsed().as_nanos() as u64,
        _ => return ERRNO_INVAL,
    };
    let Some(memory) = memory(&mut caller) else { return ERRNO_FAULT };
    if write_bytes(memory.data_mut(&mut caller), out as u32, &now.to_le_bytes()) {
        ERRNO_SUCCESS
    } else {
        ERRNO_FAULT
    }
}

const PROVIDED: &[&str] = &[
    "fd_write",
    "fd_read",
    "random_get",
    "proc_exit",
    "args_get",
    "args_sizes_get",
    "environ_get",
    "environ_sizes_get",
    "clock_time_get",
];

pub(crate) fn link(linker: &mut Linker<Ctx>, module: &Module) -> wasmtime::Result<()> {
    let w = WASI_MODULE;
    linker.func_wrap(w, "fd_write", fd_write)?;
    linker.func_wrap(w, "fd_read", fd_read)?;
    linker.func_wrap(w, "random_get", random_get)?;
    linker.func_wrap(w, "proc_exit", |code: i32| -> wasmtime::Result<()> {
        Err(wasmtime::Error::new(ProcExit(code)))
    })?;
    linker.func_wrap(w, "args_get", |c: Caller<'_, Ctx>, p: i32, b: i32| strings_get(c, |x| &x.args, p, b))?;
    linker.func_wrap(w, "args_sizes_get", |c: Caller<'_, Ctx>, n: i32, s: i32| {
        strings_sizes(c, |x| &x.args, n, s)
    })?;
    linker.func_wrap(w, "environ_get", |c: Caller<'_, Ctx>, p: i32, b: i32| strings_get(c, |x| &x.env, p, b))?;
    linker.func_wrap(w, "environ_sizes_get", |c: Caller<'_, Ctx>, n: i32, s: i32| {
        strings_sizes(c, |x| &x.env, n, s)
    })?;
    linker.func_wrap(w, "clock_time_get", clock_time_get)?;

    // everything else in the WASI namespace answers ENOSYS
    for imp in module.imports() {
        if imp.module() != w || PROVIDED.contains(&imp.name()) {
            continue;
        }
        if let wasmtime::ExternType::Func(ty) = imp.ty() {
            let results: Vec<ValType> = ty.results().collect();
            linker.func_new(w, imp.name(), ty.clone(), move |_, _, out| {
                for (slot, t) in out.iter_mut().zip(&results) {
                    *slot = match t {
                        ValType::I32 => Val::I32(ERRNO_NOSYS),
                        ValType::I64 => Val::I64(0),
                        ValType::F32 => Val::F32(0),
                        ValType::F64 => Val::F64(0),
                        _ => Val::null_extern_ref(),
                    };
                }
                Ok(())
            })?;
        }
    }
    Ok(())
}
