use std::fmt;

use serde::Serialize;

use crate::engine::EventKind;
use crate::model::{attr, AttrValue, Owner, Pose};

use super::runner::{LogRecord, RunOutcome};
use super::scenario::{Expectation, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationResult {
    pub name: String,
    pub passed: bool,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for ExpectationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {} expected={} actual={}", self.name, self.expected, self.actual)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub results: Vec<ExpectationResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &ExpectationResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

fn compact<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("values serialize")
}

fn times_of(log: &[LogRecord], kind: EventKind) -> Vec<f64> {
    log.iter()
        .filter(|r| r.envelope.as_event().is_some_and(|e| e.kind == kind))
        .map(|r| r.time_ns as f64 / 1e9)
        .collect()
}

fn pose_error(a: &Pose, b: &Pose) -> f64 {
    let rot = 1.0 - a.rotation.dot(b.rotation).abs().min(1.0);
    a.position.distance(b.position).max(a.scale.distance(b.scale)).max(rot)
}

pub fn assert_expectations(scenario: &Scenario, outcome: &RunOutcome) -> Report {
    let state = &outcome.state;
    let results = scenario
        .expectations
        .iter()
        .map(|x| {
            let (passed, expected, actual) = match x {
                Expectation::EventCount { kind, n, .. } => {
                    let got = times_of(&outcome.events, *kind).len();
                    (got == *n, format!("{kind}x{n}"), format!("{kind}x{got}"))
                }
                Expectation::EventWithin { kind, t_s, tol_s, occurrence, .. } => {
                    let got = times_of(&outcome.events, *kind).get(*occurrence).copied();
                    let passed = got.is_some_and(|t| (t - t_s).abs() <= *tol_s + 1e-9);
                    let actual = got.map_or_else(|| "none".to_owned(), |t| format!("{t}"));
                    (passed, format!("{t_s}+-{tol_s}"), actual)
                }
                Expectation::StateEqual { hash: Some(h), .. } => {
                    let got = outcome.state_hash().to_hex();
                    (&got == h, h.clone(), got)
                }
                Expectation::StateEqual { hash: None, .. } => {
                    let server = outcome.state_hash();
                    let same = outcome.replica_hashes.values().filter(|h| **h == server).count();
                    let total = outcome.replica_hashes.len();
                    (same == total, format!("{total}/{total}"), format!("{same}/{total}"))
                }
                Expectation::PoseEqual { device, pose, tol, .. } => {
                    let id = scenario.device_id(device).expect("validated device");
                    match state.devices.get(&id) {
                        Some(d) => {
                            let passed = if *tol == 0.0 { d.pose == *pose } else { pose_error(&d.pose, pose) <= *tol };
                            (passed, compact(pose), compact(&d.pose))
                        }
                        None => (false, compact(pose), "missing".into()),
                    }
                }
                Expectation::AttributeEqual { element, attribute, value, .. } => {
                    let got = state.elements.get(element).and_then(|e| e.get(attribute));
                    (got == Some(value), compact(value), got.map_or_else(|| "missing".into(), compact))
                }
                Expectation::ElementOnDevice { element, device, local, tol, .. } => {
                    let id = scenario.device_id(device).expect("validated device");
                    let e = state.elements.get(element);
                    let place = e.map(|e| (e.owner, e.get(attr::POSITION).cloned()));
                    let passed = match &place {
                        Some((Owner::Device(d), Some(AttrValue::Vec2(p)))) if *d == id => {
                            (p[0] - local[0]).abs() <= *tol && (p[1] - local[1]).abs() <= *tol
                        }
                        _ => false,
                    };
                    let actual = match place {
                        Some((owner, pos)) => format!("{}@{}", compact(&owner), pos.map_or_else(|| "none".into(), |p| compact(&p))),
                        None => "missing".into(),
                    };
                    (passed, format!("{device}@{}", compact(local)), actual)
                }
                Expectation::ElementCount { owner, n, .. } => {
                    let o = scenario.owner(owner).expect("validated owner");
                    let got = state.elements.values().filter(|e| e.owner == o).count();
                    (got == *n, n.to_string(), got.to_string())
                }
            };
            ExpectationResult { name: x.name().to_owned(), passed, expected, actual }
        })
        .collect();
    Report { results }
}
