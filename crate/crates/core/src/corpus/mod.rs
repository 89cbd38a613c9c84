//! Ground-truth guests with their expected outcome for every build flavor and
//! entropy configuration.

mod guests;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::{OutcomeCategory, RandomMode};
use crate::layout::Layout;
use crate::model::{decode, encode, ModelError, WasmModule};
use crate::ssp::{Flavor, SspConfig, LEGACY_FALLBACK_MULTIPLIER};

pub use guests::{spin, Geometry};

/// Entropy served to guests in Fixed mode. Contains no 0x41 byte, so the
/// overflow pattern can never reproduce it by accident.
pub const FIXED_ENTROPY: [u8; 4] = [0xDE, 0xAD, 0xBE, 0xEF];
pub const DEFAULT_ATTACK: u32 = 0x4141_4141;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{name}: {source}")]
    Module { name: String, source: ModelError },
}

/// How `random_get` behaves in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// Host serves `FIXED_ENTROPY`.
    Fixed,
    /// Host reports an error.
    Fail,
    /// The module's import was replaced by an always-failing stub.
    Injected,
}

impl EntropyMode {
    pub const ALL: [EntropyMode; 3] = [EntropyMode::Fixed, EntropyMode::Fail, EntropyMode::Injected];

    pub fn as_str(self) -> &'static str {
        match self {
            EntropyMode::Fixed => "fixed",
            EntropyMode::Fail => "fail",
            EntropyMode::Injected => "injected",
        }
    }

    pub fn random_mode(self) -> RandomMode {
        match self {
            EntropyMode::Fail => RandomMode::Fail,
            EntropyMode::Fixed | EntropyMode::Injected => RandomMode::Fixed(FIXED_ENTROPY.to_vec()),
        }
    }

    /// Combinations that make sense for a flavor. Uninstrumented guests do
    /// not import `random_get`, so there is nothing to inject.
    pub fn applicable(flavor: Flavor) -> &'static [EntropyMode] {
        match flavor {
            Flavor::None => &[EntropyMode::Fixed, EntropyMode::Fail],
            _ => &Self::ALL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuestKind {
    OverflowA,
    BypassB,
    Benign,
    HeapOverflow,
    OobStore,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parameters {
    pub buffer_size: Option<u32>,
    pub overflow_len: Option<u32>,
    pub attack_value: Option<u32>,
    pub frame_size: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedCell {
    pub flavor: Flavor,
    pub random: EntropyMode,
    pub outcome: OutcomeCategory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSize {
    pub func: u32,
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub sp_global: u32,
    pub frame_sizes: Vec<FrameSize>,
    /// Linear-memory slot the legacy scheme uses for its reference value.
    pub guard_slot: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuestTemplate {
    pub name: String,
    pub kind: GuestKind,
    pub layout: Layout,
    pub parameters: Parameters,
    pub expected: Vec<ExpectedCell>,
    /// Standard output of every Silent run.
    pub stdout: Option<String>,
    pub exit_code: i32,
    pub ground_truth: GroundTruth,
}

impl GuestTemplate {
    pub fn expected_for(&self, flavor: Flavor, random: EntropyMode) -> Option<OutcomeCategory> {
        self.expected.iter().find(|c| c.flavor == flavor && c.random == random).map(|c| c.outcome)
    }

    /// Instrumentation settings that match the ground truth.
    pub fn ssp_config(&self) -> SspConfig {
        SspConfig {
            sp_global: Some(self.ground_truth.sp_global),
            legacy_guard_addr: Some(self.ground_truth.guard_slot),
            ..SspConfig::default()
        }
    }
}

pub type Guest = (WasmModule, GuestTemplate);

fn expected_table(f: impl Fn(Flavor, EntropyMode) -> OutcomeCategory) -> Vec<ExpectedCell> {
    let mut out = Vec::new();
    for flavor in Flavor::ALL {
        for &random in EntropyMode::applicable(flavor) {
            // the hardened initializer refuses to start without entropy
            let outcome = if flavor == Flavor::Hardened && random != EntropyMode::Fixed {
                OutcomeCategory::StartupAbort
            } else {
                f(flavor, random)
            };
            out.push(ExpectedCell { flavor, random, outcome });
        }
    }
    out
}

/// Reference value bytes as installed by each scheme's initializer.
fn guard_bytes(flavor: Flavor, random: EntropyMode, slot: u32) -> [u8; 4] {
    match (flavor, random) {
        (_, EntropyMode::Fixed) => FIXED_ENTROPY,
        _ => slot.wrapping_mul(LEGACY_FALLBACK_MULTIPLIER as u32).to_le_bytes(),
    }
}

/// Replays a stack write against a byte map of the canary and guard slots and
/// reports whether the epilogue check fires.
fn simulate_overflow(
    g: &Geometry,
    frame: u32,
    flavor: Flavor,
    random: EntropyMode,
    write: impl Fn(u32) -> Vec<(u32, u8)>,
) -> OutcomeCategory {
    if flavor == Flavor::None {
        return OutcomeCategory::Silent;
    }
    let base = g.sp_init - (frame + 16);
    let guard = guard_bytes(flavor, random, g.guard_slot);
    let mut mem: BTreeMap<u32, u8> = BTreeMap::new();
    for (i, b) in guard.iter().enumerate() {
        mem.insert(base + frame + i as u32, *b);
        if flavor == Flavor::Legacy {
            mem.insert(g.guard_slot + i as u32, *b);
        }
    }
    for (addr, byte) in write(base) {
        assert!(addr < g.iov || addr >= g.iov + 16, "attack write would clobber the iovec scratch");
        if let Some(slot) = mem.get_mut(&addr) {
            *slot = byte;
        }
    }
    let read = |at: u32| -> [u8; 4] { std::array::from_fn(|i| mem[&(at + i as u32)]) };
    let canary = read(base + frame);
    let reference = if flavor == Flavor::Legacy { read(g.guard_slot) } else { guard };
    if canary == reference {
        OutcomeCategory::Silent
    } else {
        OutcomeCategory::SspFault
    }
}

fn ground_truth(g: &Geometry, frames: Vec<(u32, u32)>) -> GroundTruth {
    GroundTruth {
        sp_global: guests::SP,
        frame_sizes: frames.into_iter().map(|(func, size)| FrameSize { func, size }).collect(),
        guard_slot: g.guard_slot,
    }
}

fn layout_tag(l: Layout) -> &'static str {
    match l {
        Layout::StackFirst => "sf",
        Layout::NoStackFirst => "nsf",
        Layout::Unknown => "unknown",
    }
}

fn check_layout(layout: Layout) -> Result<(), CorpusError> {
    if layout == Layout::Unknown {
        return Err(CorpusError::InvalidParameter("guests need a stack-first or no-stack-first layout".into()));
    }
    Ok(())
}

/// Guest A: ascending byte-wise overflow of `overflow_len` bytes from a
/// `buffer`-byte stack array.
pub fn gen_guest_a(buffer: u32, overflow_len: u32, layout: Layout) -> Result<Guest, CorpusError> {
    if buffer == 0 {
        return Err(CorpusError::InvalidParameter("buffer size must be at least 1".into()));
    }
    check_layout(layout)?;
    let g = Geometry::new(layout);
    let (m, vuln, size) = guests::guest_a(buffer, overflow_len, layout);
    let expected = expected_table(|flavor, random| {
        simulate_overflow(&g, size, flavor, random, |base| (0..overflow_len).map(|i| (base + i, 0x41)).collect())
    });
    let t = GuestTemplate {
        name: format!("guest_a_b{buffer}_l{overflow_len}_{}", layout_tag(layout)),
        kind: GuestKind::OverflowA,
        layout,
        parameters: Parameters {
            buffer_size: Some(buffer),
            overflow_len: Some(overflow_len),
            attack_value: Some(0x41),
            frame_size: Some(size),
        },
        expected,
        stdout: Some("guest A: returned\n".into()),
        exit_code: 0,
        ground_truth: ground_truth(&g, vec![(vuln, size)]),
    };
    Ok((m, t))
}

/// Guest B: overwrites the canary and keeps going until the legacy guard
/// slot (stack-first) or the top of the stack (no-stack-first) is covered
/// with `attack_value`.
pub fn gen_guest_b_bypass(attack_value: u32, layout: Layout) -> Result<Guest, CorpusError> {
    check_layout(layout)?;
    let g = Geometry::new(layout);
    let (m, vuln, size, end) = guests::guest_b(attack_value, layout);
    let bytes = attack_value.to_le_bytes();
    let expected = expected_table(|flavor, random| {
        simulate_overflow(&g, size, flavor, random, |base| {
            (base..end).map(|a| (a, bytes[(a % 4) as usize])).collect()
        })
    });
    let t = GuestTemplate {
        name: format!("guest_b_{attack_value:08x}_{}", layout_tag(layout)),
        kind: GuestKind::BypassB,
        layout,
        parameters: Parameters {
            buffer_size: Some(size),
            overflow_len: None,
            attack_value: Some(attack_value),
            frame_size: Some(size),
        },
        expected,
        stdout: Some("guest B: returned\n".into()),
        exit_code: 0,
        ground_truth: ground_truth(&g, vec![(vuln, size)]),
    };
    Ok((m, t))
}

#[allow(clippy::too_many_arguments)]
fn fixed_outcome(
    name: &str,
    kind: GuestKind,
    layout: Layout,
    m: WasmModule,
    frames: Vec<(u32, u32)>,
    outcome: OutcomeCategory,
    stdout: Option<&str>,
    exit_code: i32,
) -> Guest {
    let g = Geometry::new(layout);
    let frame_size = frames.iter().map(|(_, s)| *s).max();
    let t = GuestTemplate {
        name: format!("{name}_{}", layout_tag(layout)),
        kind,
        layout,
        parameters: Parameters { frame_size, ..Default::default() },
        expected: expected_table(|_, _| outcome),
        stdout: stdout.map(str::to_owned),
        exit_code,
        ground_truth: ground_truth(&g, frames),
    };
    (m, t)
}

fn factorial(n: u32) -> u32 {
    (1..=n).product()
}

fn alphabet_line() -> String {
    let mut s: String = (0..255u8).map(|i| (b'a' + i % 26) as char).collect();
    s.push('\n');
    s
}

/// Programs without memory errors: same stdout and exit code in every flavor.
pub fn gen_benign_suite() -> Vec<Guest> {
    let l = Layout::StackFirst;
    let silent = OutcomeCategory::Silent;
    let (fact, fact_frames) = guests::benign_factorial(l, 10);
    let (early, parity) = guests::benign_early_return(l);
    let (f4, f4_idx) = guests::benign_frame4(l);
    let (f256, f256_idx) = guests::benign_frame256(l);
    let (bye, bye_idx) = guests::benign_exit(l, 3);
    vec![
        fixed_outcome("benign_hello", GuestKind::Benign, l, guests::benign_hello(l), vec![], silent, Some("hello, world\n"), 0),
        fixed_outcome(
            "benign_factorial",
            GuestKind::Benign,
            l,
            fact,
            fact_frames,
            silent,
            Some(&format!("{}\n", factorial(10))),
            0,
        ),
        fixed_outcome("benign_early_return", GuestKind::Benign, l, early, vec![(parity, 32)], silent, Some("odd\neven\n"), 0),
        fixed_outcome("benign_frame4", GuestKind::Benign, l, f4, vec![(f4_idx, 4)], silent, Some("abc\n"), 0),
        fixed_outcome("benign_frame256", GuestKind::Benign, l, f256, vec![(f256_idx, 256)], silent, Some(&alphabet_line()), 0),
        fixed_outcome("benign_exit", GuestKind::Benign, l, bye, vec![(bye_idx, 16)], silent, Some("bye\n"), 3),
    ]
}

/// Negative control: a heap overflow goes unnoticed in every flavor.
pub fn gen_heap_overflow(layout: Layout) -> Result<Guest, CorpusError> {
    check_layout(layout)?;
    let (m, f) = guests::heap_overflow(layout);
    Ok(fixed_outcome(
        "heap_overflow",
        GuestKind::HeapOverflow,
        layout,
        m,
        vec![(f, 16)],
        OutcomeCategory::Silent,
        Some("heap overflow unnoticed\n"),
        0,
    ))
}

/// A store past the end of memory traps as a memory fault.
pub fn gen_oob_store(layout: Layout) -> Result<Guest, CorpusError> {
    check_layout(layout)?;
    Ok(fixed_outcome("oob_store", GuestKind::OobStore, layout, guests::oob_store(layout), vec![], OutcomeCategory::MemoryFault, None, 0))
}

/// Module with data and stack pointer arranged per `layout`; `Unknown`
/// yields a module without a stack pointer.
pub fn gen_layout_fixture(layout: Layout) -> WasmModule {
    match layout {
        Layout::Unknown => {
            let mut b = crate::model::build::ModuleBuilder::new();
            b.memory(1, None);
            b.data(1024, b"no stack here".to_vec());
            b.finish()
        }
        l => guests::benign_hello(l),
    }
}

/// Overflow lengths of guest A in the default corpus (buffer of 16 bytes).
pub const DEFAULT_OVERFLOWS: [u32; 12] = [0, 8, 16, 17, 19, 20, 32, 33, 35, 36, 48, 64];

/// Full evaluation corpus.
pub fn default_corpus() -> Vec<Guest> {
    let mut out = Vec::new();
    for layout in [Layout::StackFirst, Layout::NoStackFirst] {
        for l in DEFAULT_OVERFLOWS {
            out.push(gen_guest_a(16, l, layout).expect("valid parameters"));
        }
        out.push(gen_guest_b_bypass(DEFAULT_ATTACK, layout).expect("valid parameters"));
        out.push(gen_heap_overflow(layout).expect("valid parameters"));
        out.push(gen_oob_store(layout).expect("valid parameters"));
    }
    out.push(gen_guest_b_bypass(0x1234_5678, Layout::StackFirst).expect("valid parameters"));
    out.extend(gen_benign_suite());
    out
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    #[serde(flatten)]
    template: GuestTemplate,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    guests: Vec<ManifestEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// Writes `<name>.wasm` per guest plus `manifest.json`.
pub fn write_corpus(dir: &Path, guests: &[Guest]) -> Result<(), CorpusError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut entries = Vec::new();
    for (m, t) in guests {
        let file = format!("{}.wasm", t.name);
        let bytes = encode(m).map_err(|source| CorpusError::Module { name: t.name.clone(), source })?;
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(io(&path))?;
        entries.push(ManifestEntry { file, template: t.clone() });
    }
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&Manifest { guests: entries })?;
    std::fs::write(&path, json).map_err(io(&path))?;
    Ok(())
}

/// Reads a corpus directory. A directory without a manifest is an empty
/// corpus.
pub fn load_corpus(dir: &Path) -> Result<Vec<Guest>, CorpusError> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        std::fs::read_dir(dir).map_err(io(dir))?;
        return Ok(vec![]);
    }
    let raw = std::fs::read_to_string(&path).map_err(io(&path))?;
    let manifest: Manifest = serde_json::from_str(&raw)?;
    manifest
        .guests
        .into_iter()
        .map(|e| {
            let p = dir.join(&e.file);
            let bytes = std::fs::read(&p).map_err(io(&p))?;
            let m = decode(&bytes).map_err(|source| CorpusError::Module { name: e.template.name.clone(), source })?;
            Ok((m, e.template))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{classify_layout, detect_frames, find_stack_pointer};
    use crate::model::validate;
    use OutcomeCategory::{Silent, SspFault, StartupAbort};

    #[test]
    fn every_guest_is_valid_and_frames_match_ground_truth() {
        for (m, t) in default_corpus() {
            assert!(validate(&m).is_empty(), "{}: {:?}", t.name, validate(&m));
            assert_eq!(find_stack_pointer(&m).global(), Some(t.ground_truth.sp_global), "{}", t.name);
            let frames = detect_frames(&m, t.ground_truth.sp_global);
            for fs in &t.ground_truth.frame_sizes {
                let f = frames.iter().find(|f| f.func_index == fs.func).unwrap();
                assert!(f.recognized, "{}: {:?}", t.name, f);
                assert_eq!(f.frame_size, fs.size, "{}", t.name);
            }
            let recognized = frames.iter().filter(|f| f.recognized).count();
            assert_eq!(recognized, t.ground_truth.frame_sizes.len(), "{}", t.name);
            assert_eq!(classify_layout(&m).layout, t.layout, "{}", t.name);
        }
    }

    #[test]
    fn names_are_unique() {
        let c = default_corpus();
        let mut names: Vec<_> = c.iter().map(|(_, t)| t.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), c.len());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = encode(&gen_guest_a(16, 20, Layout::StackFirst).unwrap().0).unwrap();
        let b = encode(&gen_guest_a(16, 20, Layout::StackFirst).unwrap().0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn guest_a_expectations() {
        let (_, t) = gen_guest_a(16, 16, Layout::StackFirst).unwrap();
        assert!(t.expected.iter().all(|c| c.outcome == Silent || c.outcome == StartupAbort));
        let (_, t) = gen_guest_a(16, 17, Layout::StackFirst).unwrap();
        assert_eq!(t.expected_for(Flavor::Hardened, EntropyMode::Fixed), Some(SspFault));
        assert_eq!(t.expected_for(Flavor::None, EntropyMode::Fixed), Some(Silent));
        // the legacy guard slot sits 16 bytes above the canary: once the
        // pattern covers it completely the check passes again
        let (_, t) = gen_guest_a(16, 36, Layout::StackFirst).unwrap();
        assert_eq!(t.expected_for(Flavor::Legacy, EntropyMode::Fixed), Some(Silent));
        assert_eq!(t.expected_for(Flavor::Hardened, EntropyMode::Fixed), Some(SspFault));
        let (_, t) = gen_guest_a(16, 36, Layout::NoStackFirst).unwrap();
        assert_eq!(t.expected_for(Flavor::Legacy, EntropyMode::Fixed), Some(SspFault));
    }

    #[test]
    fn guest_b_expectations() {
        let (_, t) = gen_guest_b_bypass(DEFAULT_ATTACK, Layout::StackFirst).unwrap();
        assert_eq!(t.expected_for(Flavor::Legacy, EntropyMode::Fixed), Some(Silent));
        assert_eq!(t.expected_for(Flavor::Legacy, EntropyMode::Fail), Some(Silent));
        assert_eq!(t.expected_for(Flavor::Hardened, EntropyMode::Fixed), Some(SspFault));
        assert_eq!(t.expected_for(Flavor::Hardened, EntropyMode::Injected), Some(StartupAbort));
        let (_, t) = gen_guest_b_bypass(DEFAULT_ATTACK, Layout::NoStackFirst).unwrap();
        assert_eq!(t.expected_for(Flavor::Legacy, EntropyMode::Fixed), Some(SspFault));
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_guest_a(0, 4, Layout::StackFirst).is_err());
        assert!(gen_guest_b_bypass(1, Layout::Unknown).is_err());
    }

    #[test]
    fn layout_fixtures() {
        assert_eq!(classify_layout(&gen_layout_fixture(Layout::StackFirst)).layout, Layout::StackFirst);
        assert_eq!(classify_layout(&gen_layout_fixture(Layout::NoStackFirst)).layout, Layout::NoStackFirst);
        assert_eq!(classify_layout(&gen_layout_fixture(Layout::Unknown)).layout, Layout::Unknown);
    }

    #[test]
    fn corpus_round_trips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let guests = gen_benign_suite();
        write_corpus(dir.path(), &guests).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), guests.len());
        for ((m1, t1), (m2, t2)) in guests.iter().zip(&back) {
            assert_eq!(t1, t2);
            assert_eq!(encode(m1).unwrap(), encode(m2).unwrap());
        }
        let empty = tempfile::tempdir().unwrap();
        assert!(load_corpus(empty.path()).unwrap().is_empty());
    }
}
