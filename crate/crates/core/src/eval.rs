//! Builds every flavor of every corpus guest, runs them, and compares the
//! outcomes with the guests' expected tables.

use std::time::Duration;

use serde::Serialize;

use crate::corpus::{EntropyMode, Guest};
use crate::harness::{engine_validate, run_matrix, EvalReport, MatrixEntry, RunOutcome, RunSpec};
use crate::model::{encode, validate};
use crate::ssp::{build_flavor, inject_fault_random, Flavor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub name: String,
    pub flavor: Flavor,
    pub mode: EntropyMode,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub mismatches: Vec<Mismatch>,
    /// Modules emitted (after instrumentation or fault injection).
    pub modules_built: usize,
}

impl Evaluation {
    pub fn diff(&self) -> String {
        self.mismatches
            .iter()
            .map(|m| {
                format!("{} [{} {}]: expected {}, got {}\n", m.name, m.flavor.as_str(), m.mode.as_str(), m.expected, m.actual)
            })
            .collect()
    }
}

struct Planned {
    entry: MatrixEntry,
    guest: usize,
    mode: EntropyMode,
}

fn entry_name(name: &str, flavor: Flavor, mode: EntropyMode) -> String {
    format!("{name}/{}/{}", flavor.as_str(), mode.as_str())
}

/// Builds all cells, failing a cell (not the whole run) when a build or the
/// validity gate fails.
fn plan(guests: &[Guest], timeout: Duration, mismatches: &mut Vec<Mismatch>) -> (Vec<Planned>, usize) {
    let mut planned = Vec::new();
    let mut built = 0;
    for (gi, (m, t)) in guests.iter().enumerate() {
        let cfg = t.ssp_config();
        for flavor in Flavor::ALL {
            let modes = EntropyMode::applicable(flavor);
            let fail_all = |why: String, mismatches: &mut Vec<Mismatch>| {
                for &mode in modes {
                    mismatches.push(Mismatch {
                        name: t.name.clone(),
                        flavor,
                        mode,
                        expected: t.expected_for(flavor, mode).map(|c| c.as_str().to_string()).unwrap_or_default(),
                        actual: why.clone(),
                    });
                }
            };
            let module = match build_flavor(m, flavor, &cfg) {
                Ok((module, _)) => module,
                Err(e) => {
                    fail_all(format!("build error: {e}"), mismatches);
                    continue;
                }
            };
            for &mode in modes {
                let module = if mode == EntropyMode::Injected {
                    match inject_fault_random(&module) {
                        Ok(x) => x,
                        Err(e) => {
                            fail_all(format!("fault injection error: {e}"), mismatches);
                            break;
                        }
                    }
                } else {
                    module.clone()
                };
                let gate = if validate(&module).is_empty() { Ok(()) } else { Err(format!("{:?}", validate(&module))) }
                    .and_then(|_| encode(&module).map_err(|e| e.to_string()))
                    .and_then(|bytes| engine_validate(&bytes).map(|_| bytes).map_err(|e| e.to_string()));
                let bytes = match gate {
                    Ok(b) => b,
                    Err(why) => {
                        mismatches.push(Mismatch {
                            name: t.name.clone(),
                            flavor,
                            mode,
                            expected: "valid module".into(),
                            actual: why,
                        });
                        continue;
                    }
                };
                built += 1;
                let spec = RunSpec::new(bytes, mode.random_mode()).with_timeout(timeout);
                planned.push(Planned {
                    entry: MatrixEntry {
                        name: entry_name(&t.name, flavor, mode),
                        flavor,
                        mode: mode.as_str().into(),
                        spec,
                    },
                    guest: gi,
                    mode,
                });
            }
        }
    }
    (planned, built)
}

pub fn evaluate(guests: &[Guest], jobs: usize, timeout: Duration) -> Evaluation {
    let mut mismatches = Vec::new();
    let (planned, modules_built) = plan(guests, timeout, &mut mismatches);
    let entries: Vec<MatrixEntry> = planned.iter().map(|p| p.entry.clone()).collect();
    let report = run_matrix(&entries, jobs);

    for (p, rec) in planned.iter().zip(&report.runs) {
        let t = &guests[p.guest].1;
        let flavor = p.entry.flavor;
        let expected = t.expected_for(flavor, p.mode);
        let actual = rec.label();
        let mut bad = expected.map(|c| c.as_str()) != Some(actual);
        let mut actual_text = match &rec.error {
            Some(e) => format!("Error ({e})"),
            None => actual.to_string(),
        };
        if !bad {
            if let (Some(RunOutcome::Silent { exit_code, stdout }), Some(want)) = (&rec.outcome, &t.stdout) {
                if stdout != want || *exit_code != t.exit_code {
                    bad = true;
                    actual_text = format!("Silent with exit {exit_code} and stdout {stdout:?}");
                }
            }
        }
        if bad {
            mismatches.push(Mismatch {
                name: t.name.clone(),
                flavor,
                mode: p.mode,
                expected: match (expected, &t.stdout) {
                    (Some(c), Some(out)) if c.as_str() == "Silent" => {
                        format!("Silent with exit {} and stdout {out:?}", t.exit_code)
                    }
                    (Some(c), _) => c.as_str().to_string(),
                    (None, _) => "no expectation".into(),
                },
                actual: actual_text,
            });
        }
    }
    Evaluation { report, mismatches, modules_built }
}
