use proptest::prelude::*;

use wssp_core::audit::audit;
use wssp_core::corpus::gen_guest_a;
use wssp_core::harness::{engine_validate, run, OutcomeCategory, RandomMode, RunSpec};
use wssp_core::layout::Layout;
use wssp_core::model::{decode, encode, validate, WASI_MODULE};
use wssp_core::ssp::{build_flavor, inject_fault_random, Flavor, SspConfig, SspError, RANDOM_GET};

fn layout() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::StackFirst), Just(Layout::NoStackFirst)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn hardened_detects_exactly_canary_overwrites(buffer in 1u32..64, len in 0u32..96, layout in layout()) {
        let (m, t) = gen_guest_a(buffer, len, layout).unwrap();
        let (h, _) = build_flavor(&m, Flavor::Hardened, &t.ssp_config()).unwrap();
        let frame = buffer.div_ceil(16) * 16;
        let want = if len > frame { OutcomeCategory::SspFault } else { OutcomeCategory::Silent };
        let r = run(&RunSpec::new(encode(&h).unwrap(), RandomMode::Fixed(vec![0xDE, 0xAD, 0xBE, 0xEF]))).unwrap();
        prop_assert_eq!(r.outcome.category(), want);
    }

    #[test]
    fn every_flavor_is_valid_and_round_trips(buffer in 1u32..300, len in 0u32..40, layout in layout()) {
        let (m, t) = gen_guest_a(buffer, len, layout).unwrap();
        for flavor in Flavor::ALL {
            let (out, _) = build_flavor(&m, flavor, &t.ssp_config()).unwrap();
            prop_assert!(validate(&out).is_empty());
            let bytes = encode(&out).unwrap();
            prop_assert!(engine_validate(&bytes).is_ok());
            prop_assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn fixed_entropy_sets_guard(bytes in proptest::collection::vec(any::<u8>(), 4..12)) {
        let (m, t) = gen_guest_a(16, 0, Layout::StackFirst).unwrap();
        let cfg = SspConfig { debug_export: true, ..t.ssp_config() };
        let (h, _) = build_flavor(&m, Flavor::Hardened, &cfg).unwrap();
        let r = run(&RunSpec::new(encode(&h).unwrap(), RandomMode::Fixed(bytes.clone()))).unwrap();
        prop_assert_eq!(r.debug_guard, Some(u32::from_le_bytes(bytes[..4].try_into().unwrap())));
    }

    #[test]
    fn fault_injection_keeps_shape(buffer in 1u32..64, flavor in prop_oneof![Just(Flavor::Legacy), Just(Flavor::Hardened)]) {
        let (m, t) = gen_guest_a(buffer, 0, Layout::StackFirst).unwrap();
        let (out, _) = build_flavor(&m, flavor, &t.ssp_config()).unwrap();
        let f = inject_fault_random(&out).unwrap();
        prop_assert_eq!(f.total_funcs(), out.total_funcs());
        prop_assert!(f.find_func_import(WASI_MODULE, RANDOM_GET).is_none());
        prop_assert!(validate(&f).is_empty());
        prop_assert!(engine_validate(&encode(&f).unwrap()).is_ok());
    }
}

#[test]
fn second_instrumentation_is_refused() {
    let (m, t) = gen_guest_a(16, 0, Layout::StackFirst).unwrap();
    for flavor in [Flavor::Legacy, Flavor::Hardened] {
        let (once, _) = build_flavor(&m, flavor, &t.ssp_config()).unwrap();
        for again in [Flavor::Legacy, Flavor::Hardened] {
            let err = build_flavor(&once, again, &t.ssp_config()).unwrap_err();
            assert!(matches!(err, SspError::AlreadyInstrumented(_)), "{err:?}");
        }
    }
}

#[test]
fn audit_is_stable_under_round_trip() {
    let (m, t) = gen_guest_a(16, 0, Layout::NoStackFirst).unwrap();
    for flavor in Flavor::ALL {
        let (out, _) = build_flavor(&m, flavor, &t.ssp_config()).unwrap();
        let again = decode(&encode(&out).unwrap()).unwrap();
        assert_eq!(audit(&out), audit(&again));
    }
}
