//! Guest programs assembled instruction by instruction.

use crate::layout::{Layout, STACK_POINTER_NAME};
use crate::model::build::ModuleBuilder;
use crate::model::{
    BlockType, ConstExpr, ExternalKind, FuncType, Instr, MemArg, ValType, WasmModule, WASI_MODULE,
};

/// Where things live in a guest's linear memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub layout: Layout,
    pub memory_pages: u32,
    pub sp_init: u32,
    /// Slot reserved for a linear-memory reference value.
    pub guard_slot: u32,
    /// Scratch for fd_write iovecs and the written-bytes counter.
    pub iov: u32,
    pub strings: u32,
    pub heap: u32,
}

impl Geometry {
    pub fn new(layout: Layout) -> Self {
        match layout {
            Layout::NoStackFirst => Geometry {
                layout,
                memory_pages: 2,
                sp_init: 65536,
                guard_slot: 1024,
                iov: 2048,
                strings: 3072,
                heap: 8192,
            },
            _ => Geometry {
                layout: Layout::StackFirst,
                memory_pages: 2,
                sp_init: 65536,
                guard_slot: 65536,
                iov: 65536 + 1024,
                strings: 65536 + 2048,
                heap: 65536 + 8192,
            },
        }
    }
}

pub(crate) const SP: u32 = 0;

pub(crate) struct Guest {
    pub b: ModuleBuilder,
    pub g: Geometry,
    pub fd_write: u32,
    pub proc_exit: Option<u32>,
    strings: Vec<u8>,
}

impl Guest {
    pub fn new(layout: Layout, with_proc_exit: bool) -> Self {
        let g = Geometry::new(layout);
        let mut b = ModuleBuilder::new();
        let fd_write = b.import_func(WASI_MODULE, "fd_write", FuncType::new([ValType::I32; 4], [ValType::I32]));
        let proc_exit =
            with_proc_exit.then(|| b.import_func(WASI_MODULE, "proc_exit", FuncType::new([ValType::I32], [])));
        b.memory(g.memory_pages, None);
        let sp = b.global(ValType::I32, true, ConstExpr::I32(g.sp_init as i32), Some(STACK_POINTER_NAME));
        debug_assert_eq!(sp, SP);
        Guest { b, g, fd_write, proc_exit, strings: Vec::new() }
    }

    /// Places a string in the data zone and returns (address, length).
    pub fn string(&mut self, s: &[u8]) -> (i32, i32) {
        let at = self.g.strings + self.strings.len() as u32;
        self.strings.extend_from_slice(s);
        (at as i32, s.len() as i32)
    }

    /// `fd_write(1, [ptr, len])` where ptr and len are left on the stack by
    /// `ptr` and `len`.
    pub fn print_dyn(&self, ptr: Vec<Instr>, len: Vec<Instr>) -> Vec<Instr> {
        let iov = self.g.iov as i32;
        let mut v = vec![Instr::I32Const(iov)];
        v.extend(ptr);
        v.push(Instr::I32Store(MemArg::word(0)));
        v.push(Instr::I32Const(iov));
        v.extend(len);
        v.push(Instr::I32Store(MemArg::word(4)));
        v.extend([
            Instr::I32Const(1),
            Instr::I32Const(iov),
            Instr::I32Const(1),
            Instr::I32Const(iov + 8),
            Instr::Call(self.fd_write),
            Instr::Drop,
        ]);
        v
    }

    pub fn print(&self, (ptr, len): (i32, i32)) -> Vec<Instr> {
        self.print_dyn(vec![Instr::I32Const(ptr)], vec![Instr::I32Const(len)])
    }

    pub fn start(&mut self, body: Vec<Instr>) -> u32 {
        let s = self.b.func("_start", FuncType::default(), vec![], body);
        self.b.export("_start", ExternalKind::Func, s);
        s
    }

    pub fn finish(mut self) -> WasmModule {
        self.b.export("memory", ExternalKind::Memory, 0);
        self.b.data(self.g.guard_slot, vec![0u8; 4]);
        if !self.strings.is_empty() {
            self.b.data(self.g.strings, std::mem::take(&mut self.strings));
        }
        self.b.finish()
    }
}

/// `global.get sp; i32.const size; i32.sub; local.tee base; global.set sp`
pub(crate) fn prologue(size: u32, base: u32) -> Vec<Instr> {
    vec![
        Instr::GlobalGet(SP),
        Instr::I32Const(size as i32),
        Instr::I32Sub,
        Instr::LocalTee(base),
        Instr::GlobalSet(SP),
    ]
}

pub(crate) fn epilogue(size: u32, base: u32) -> Vec<Instr> {
    vec![Instr::LocalGet(base), Instr::I32Const(size as i32), Instr::I32Add, Instr::GlobalSet(SP)]
}

/// Prologue and epilogue that address the frame through the stack pointer
/// itself, without a base local.
pub(crate) fn prologue_sp(size: u32) -> Vec<Instr> {
    vec![Instr::GlobalGet(SP), Instr::I32Const(size as i32), Instr::I32Sub, Instr::GlobalSet(SP)]
}

pub(crate) fn epilogue_sp(size: u32) -> Vec<Instr> {
    vec![Instr::GlobalGet(SP), Instr::I32Const(size as i32), Instr::I32Add, Instr::GlobalSet(SP)]
}

/// Loop that exits once `stop` leaves a nonzero i32, otherwise runs `body`
/// and increments local `i`.
pub(crate) fn counted_loop(i: u32, stop: Vec<Instr>, body: Vec<Instr>) -> Vec<Instr> {
    let mut v = vec![Instr::Block(BlockType::Empty), Instr::Loop(BlockType::Empty)];
    v.extend(stop);
    v.push(Instr::BrIf(1));
    v.extend(body);
    v.extend([
        Instr::LocalGet(i),
        Instr::I32Const(1),
        Instr::I32Add,
        Instr::LocalSet(i),
        Instr::Br(0),
        Instr::End,
        Instr::End,
    ]);
    v
}

pub(crate) fn round16(n: u32) -> u32 {
    n.max(1).div_ceil(16) * 16
}

/// `print_u32(n)`: decimal digits plus newline, built right to left in a
/// 16-byte frame.
pub(crate) fn add_print_u32(g: &mut Guest) -> u32 {
    const N: u32 = 0;
    const BASE: u32 = 1;
    const P: u32 = 2;
    let mut body = prologue(16, BASE);
    body.extend([
        Instr::LocalGet(BASE),
        Instr::I32Const(15),
        Instr::I32Add,
        Instr::LocalTee(P),
        Instr::I32Const(b'\n' as i32),
        Instr::I32Store8(MemArg::byte(0)),
        Instr::Loop(BlockType::Empty),
        Instr::LocalGet(P),
        Instr::I32Const(1),
        Instr::I32Sub,
        Instr::LocalTee(P),
        Instr::LocalGet(N),
        Instr::I32Const(10),
        Instr::I32RemU,
        Instr::I32Const(b'0' as i32),
        Instr::I32Add,
        Instr::I32Store8(MemArg::byte(0)),
        Instr::LocalGet(N),
        Instr::I32Const(10),
        Instr::I32DivU,
        Instr::LocalTee(N),
        Instr::BrIf(0),
        Instr::End,
    ]);
    body.extend(g.print_dyn(
        vec![Instr::LocalGet(P)],
        vec![Instr::LocalGet(BASE), Instr::I32Const(16), Instr::I32Add, Instr::LocalGet(P), Instr::I32Sub],
    ));
    body.extend(epilogue(16, BASE));
    g.b.func("print_u32", FuncType::new([ValType::I32], []), vec![(2, ValType::I32)], body)
}

/// Guest A: `vuln` owns a `buffer`-byte array and writes `overflow` bytes of
/// 0x41 upward from its start, then prints a marker.
pub(crate) fn guest_a(buffer: u32, overflow: u32, layout: Layout) -> (WasmModule, u32, u32) {
    let mut g = Guest::new(layout, false);
    let size = round16(buffer);
    let marker = g.string(b"guest A: returned\n");
    const BASE: u32 = 0;
    const I: u32 = 1;
    let mut body = prologue(size, BASE);
    body.extend([Instr::I32Const(0), Instr::LocalSet(I)]);
    body.extend(counted_loop(
        I,
        vec![Instr::LocalGet(I), Instr::I32Const(overflow as i32), Instr::I32GeU],
        vec![
            Instr::LocalGet(BASE),
            Instr::LocalGet(I),
            Instr::I32Add,
            Instr::I32Const(0x41),
            Instr::I32Store8(MemArg::byte(0)),
        ],
    ));
    body.extend(g.print(marker));
    body.extend(epilogue(size, BASE));
    let vuln = g.b.func("vuln", FuncType::default(), vec![(2, ValType::I32)], body);
    g.start(vec![Instr::Call(vuln)]);
    (g.finish(), vuln, size)
}

/// Guest B: writes `attack` (little-endian, repeated) from the buffer start
/// up to `end`, covering the canary and, in the stack-first layout, the
/// linear-memory guard slot.
pub(crate) fn guest_b(attack: u32, layout: Layout) -> (WasmModule, u32, u32, u32) {
    let mut g = Guest::new(layout, false);
    let end = match layout {
        Layout::StackFirst => g.g.guard_slot + 4,
        _ => g.g.sp_init,
    };
    let size = 16;
    let marker = g.string(b"guest B: returned\n");
    const BASE: u32 = 0;
    const P: u32 = 1;
    let mut body = prologue(size, BASE);
    body.extend([Instr::LocalGet(BASE), Instr::LocalSet(P)]);
    body.extend(counted_loop(
        P,
        vec![Instr::LocalGet(P), Instr::I32Const(end as i32), Instr::I32GeU],
        vec![
            Instr::LocalGet(P),
            Instr::I32Const(attack as i32),
            Instr::LocalGet(P),
            Instr::I32Const(3),
            Instr::I32And,
            Instr::I32Const(3),
            Instr::I32Shl,
            Instr::I32ShrU,
            Instr::I32Store8(MemArg::byte(0)),
        ],
    ));
    body.extend(g.print(marker));
    body.extend(epilogue(size, BASE));
    let vuln = g.b.func("vuln", FuncType::default(), vec![(2, ValType::I32)], body);
    g.start(vec![Instr::Call(vuln)]);
    (g.finish(), vuln, size, end)
}

pub(crate) fn benign_hello(layout: Layout) -> WasmModule {
    let mut g = Guest::new(layout, false);
    let s = g.string(b"hello, world\n");
    let body = g.print(s);
    g.start(body);
    g.finish()
}

/// Recursive factorial with a 16-byte frame that spills `n`.
pub(crate) fn benign_factorial(layout: Layout, n: u32) -> (WasmModule, Vec<(u32, u32)>) {
    let mut g = Guest::new(layout, false);
    let print_u32 = add_print_u32(&mut g);
    const N: u32 = 0;
    const BASE: u32 = 1;
    const R: u32 = 2;
    let fact = g.b.declare("factorial", FuncType::new([ValType::I32], [ValType::I32]));
    let mut body = prologue(16, BASE);
    body.extend([
        Instr::LocalGet(BASE),
        Instr::LocalGet(N),
        Instr::I32Store(MemArg::word(0)),
        Instr::I32Const(1),
        Instr::LocalSet(R),
        Instr::LocalGet(N),
        Instr::I32Const(2),
        Instr::I32GeU,
        Instr::If(BlockType::Empty),
        Instr::LocalGet(N),
        Instr::I32Const(1),
        Instr::I32Sub,
        Instr::Call(fact),
        Instr::LocalGet(BASE),
        Instr::I32Load(MemArg::word(0)),
        Instr::I32Mul,
        Instr::LocalSet(R),
        Instr::End,
        Instr::LocalGet(R),
    ]);
    body.extend(epilogue(16, BASE));
    g.b.define(fact, vec![(2, ValType::I32)], body);
    g.start(vec![Instr::I32Const(n as i32), Instr::Call(fact), Instr::Call(print_u32)]);
    (g.finish(), vec![(print_u32, 16), (fact, 16)])
}

/// `parity(x)` has two exits, each with its own epilogue.
pub(crate) fn benign_early_return(layout: Layout) -> (WasmModule, u32) {
    let mut g = Guest::new(layout, false);
    let odd = g.string(b"odd\n");
    let even = g.string(b"even\n");
    const X: u32 = 0;
    let mut body = prologue_sp(32);
    body.extend([
        Instr::GlobalGet(SP),
        Instr::LocalGet(X),
        Instr::I32Store(MemArg::word(8)),
        Instr::GlobalGet(SP),
        Instr::I32Load(MemArg::word(8)),
        Instr::I32Const(1),
        Instr::I32And,
        Instr::If(BlockType::Empty),
    ]);
    body.extend(g.print(odd));
    body.push(Instr::I32Const(1));
    body.extend(epilogue_sp(32));
    body.extend([Instr::Return, Instr::End]);
    body.extend(g.print(even));
    body.push(Instr::I32Const(0));
    body.extend(epilogue_sp(32));
    let parity = g.b.func("parity", FuncType::new([ValType::I32], [ValType::I32]), vec![], body);
    g.start(vec![
        Instr::I32Const(3),
        Instr::Call(parity),
        Instr::Drop,
        Instr::I32Const(4),
        Instr::Call(parity),
        Instr::Drop,
    ]);
    (g.finish(), parity)
}

/// Four-byte frame holding "abc\n", printed from the stack.
pub(crate) fn benign_frame4(layout: Layout) -> (WasmModule, u32) {
    let mut g = Guest::new(layout, false);
    const BASE: u32 = 0;
    let mut body = prologue(4, BASE);
    body.extend([
        Instr::LocalGet(BASE),
        Instr::I32Const(i32::from_le_bytes(*b"abc\n")),
        Instr::I32Store(MemArg::word(0)),
    ]);
    body.extend(g.print_dyn(vec![Instr::LocalGet(BASE)], vec![Instr::I32Const(4)]));
    body.extend(epilogue(4, BASE));
    let f = g.b.func("small_frame", FuncType::default(), vec![(1, ValType::I32)], body);
    g.start(vec![Instr::Call(f)]);
    (g.finish(), f)
}

/// 256-byte frame filled with a repeating alphabet and a trailing newline.
pub(crate) fn benign_frame256(layout: Layout) -> (WasmModule, u32) {
    let mut g = Guest::new(layout, false);
    const BASE: u32 = 0;
    const I: u32 = 1;
    let mut body = prologue(256, BASE);
    body.extend([Instr::I32Const(0), Instr::LocalSet(I)]);
    body.extend(counted_loop(
        I,
        vec![Instr::LocalGet(I), Instr::I32Const(255), Instr::I32GeU],
        vec![
            Instr::LocalGet(BASE),
            Instr::LocalGet(I),
            Instr::I32Add,
            Instr::LocalGet(I),
            Instr::I32Const(26),
            Instr::I32RemU,
            Instr::I32Const(b'a' as i32),
            Instr::I32Add,
            Instr::I32Store8(MemArg::byte(0)),
        ],
    ));
    body.extend([Instr::LocalGet(BASE), Instr::I32Const(b'\n' as i32), Instr::I32Store8(MemArg::byte(255))]);
    body.extend(g.print_dyn(vec![Instr::LocalGet(BASE)], vec![Instr::I32Const(256)]));
    body.extend(epilogue(256, BASE));
    let f = g.b.func("alphabet", FuncType::default(), vec![(2, ValType::I32)], body);
    g.start(vec![Instr::Call(f)]);
    (g.finish(), f)
}

/// Prints from a 16-byte frame, then leaves through `proc_exit(code)`.
pub(crate) fn benign_exit(layout: Layout, code: i32) -> (WasmModule, u32) {
    let mut g = Guest::new(layout, true);
    const BASE: u32 = 0;
    let mut body = prologue(16, BASE);
    body.extend([
        Instr::LocalGet(BASE),
        Instr::I32Const(i32::from_le_bytes(*b"bye\n")),
        Instr::I32Store(MemArg::word(4)),
    ]);
    body.extend(g.print_dyn(
        vec![Instr::LocalGet(BASE), Instr::I32Const(4), Instr::I32Add],
        vec![Instr::I32Const(4)],
    ));
    body.extend(epilogue(16, BASE));
    let f = g.b.func("say_bye", FuncType::default(), vec![(1, ValType::I32)], body);
    let exit = g.proc_exit.expect("imported");
    g.start(vec![Instr::Call(f), Instr::I32Const(code), Instr::Call(exit)]);
    (g.finish(), f)
}

/// Overflows a heap block instead of a stack buffer. SSP does not see it.
pub(crate) fn heap_overflow(layout: Layout) -> (WasmModule, u32) {
    let mut g = Guest::new(layout, false);
    let marker = g.string(b"heap overflow unnoticed\n");
    let heap = g.g.heap as i32;
    const I: u32 = 0;
    const BASE: u32 = 1;
    let mut body = prologue(16, BASE);
    body.extend([Instr::I32Const(0), Instr::LocalSet(I)]);
    // a 16-byte heap block overrun by 32 bytes
    body.extend(counted_loop(
        I,
        vec![Instr::LocalGet(I), Instr::I32Const(48), Instr::I32GeU],
        vec![
            Instr::LocalGet(I),
            Instr::I32Const(0x41),
            Instr::I32Store8(MemArg::byte(heap as u32)),
        ],
    ));
    body.extend(g.print(marker));
    body.extend(epilogue(16, BASE));
    let f = g.b.func("heap_user", FuncType::default(), vec![(2, ValType::I32)], body);
    g.start(vec![Instr::Call(f)]);
    (g.finish(), f)
}

/// Stores past the end of linear memory.
pub(crate) fn oob_store(layout: Layout) -> WasmModule {
    let mut g = Guest::new(layout, false);
    let end = (g.g.memory_pages * 65536) as i32;
    g.start(vec![Instr::I32Const(end), Instr::I32Const(1), Instr::I32Store(MemArg::word(0))]);
    g.finish()
}

/// Loops forever. Only used with short timeouts.
pub fn spin(layout: Layout) -> WasmModule {
    let mut g = Guest::new(layout, false);
    g.start(vec![Instr::Loop(BlockType::Empty), Instr::Br(0), Instr::End]);
    g.finish()
}
