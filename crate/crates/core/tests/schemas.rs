//! Every JSON document the CLI emits conforms to its schema under docs/schemas.

use std::path::{Path, PathBuf};
use std::process::Command;

use jsonschema::{Resource, Validator};
use serde_json::Value;
use wssp_core::corpus::{default_corpus, gen_guest_b_bypass, write_corpus};
use wssp_core::layout::Layout;

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load(name: &str) -> Value {
    let text = std::fs::read_to_string(schema_dir().join(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn validator(name: &str) -> Validator {
    let mut opts = jsonschema::options();
    for entry in std::fs::read_dir(schema_dir()).unwrap() {
        let schema: Value = serde_json::from_str(&std::fs::read_to_string(entry.unwrap().path()).unwrap()).unwrap();
        let id = schema["$id"].as_str().unwrap().to_owned();
        opts = opts.with_resource(id, Resource::from_contents(schema).unwrap());
    }
    opts.build(&load(name)).unwrap()
}

fn check(name: &str, doc: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}");
}

fn wssp_json(args: &[&str]) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_wssp")).args(args).output().unwrap();
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

#[test]
fn schemas_are_valid_documents() {
    for entry in std::fs::read_dir(schema_dir()).unwrap() {
        let p = entry.unwrap().path();
        let schema: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        assert!(jsonschema::meta::is_valid(&schema), "{}", p.display());
    }
}

#[test]
fn cli_outputs_conform() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c");
    let guests = vec![gen_guest_b_bypass(0x4141_4141, Layout::StackFirst).unwrap()];
    write_corpus(&corpus, &guests).unwrap();
    let input = corpus.join(format!("{}.wasm", guests[0].1.name));
    let input = input.to_str().unwrap();
    let h = dir.path().join("h.wasm");
    let l = dir.path().join("l.wasm");
    let (h, l) = (h.to_str().unwrap(), l.to_str().unwrap());

    check("instrumentation-summary.schema.json", &wssp_json(&["instrument", input, "-o", h, "--debug-export"]));
    check(
        "instrumentation-summary.schema.json",
        &wssp_json(&["instrument", input, "-o", l, "--flavor", "legacy", "--debug-export"]),
    );
    for m in [input, h, l] {
        check("robustness-report.schema.json", &wssp_json(&["audit", m, "--json"]));
        check("analysis.schema.json", &wssp_json(&["analyze", m, "--json"]));
        check("run-outcome.schema.json", &wssp_json(&["run", m, "--random", "fixed:DEADBEEF"]));
        check("run-outcome.schema.json", &wssp_json(&["run", m, "--random", "fail"]));
    }
    check("eval-report.schema.json", &wssp_json(&["eval", "--corpus", corpus.to_str().unwrap(), "--json"]));
}

#[test]
fn manifest_conforms() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &default_corpus()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(wssp_core::corpus::MANIFEST)).unwrap();
    check("corpus-manifest.schema.json", &serde_json::from_str(&text).unwrap());
}

#[test]
fn schemas_reject_malformed_documents() {
    let v = validator("run-outcome.schema.json");
    assert!(v.is_valid(&serde_json::json!({"outcome": {"category": "Timeout"}, "duration_ms": 3, "debug_guard": null})));
    assert!(!v.is_valid(&serde_json::json!({"outcome": {"category": "Crashed"}, "duration_ms": 3, "debug_guard": null})));
    assert!(!v.is_valid(&serde_json::json!({"outcome": {"category": "SspFault"}, "duration_ms": 3, "debug_guard": null})));
    let e = validator("eval-report.schema.json");
    let run = serde_json::json!({"name": "x", "flavor": "none", "mode": "fixed", "outcome": {"category": "Silent", "exit_code": 0, "stdout": ""}, "error": null, "duration_ms": 1});
    assert!(e.is_valid(&serde_json::json!({"runs": [run], "summary": {}, "mismatches": []})));
    let bad = serde_json::json!({"name": "x", "flavor": "none", "mode": "fixed", "outcome": {"category": "Silent"}, "error": null, "duration_ms": 1});
    assert!(!e.is_valid(&serde_json::json!({"runs": [bad], "summary": {}, "mismatches": []})));
}
