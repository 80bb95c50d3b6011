//! Deterministic scenario runner.
//!
//! Scripted clients talk to an in-process [`Session`](crate::server::Session)
//! through a simulated network. Time is virtual and integral (nanoseconds),
//! and every random choice comes from the scenario seed.

mod expect;
mod runner;
mod scenario;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::protocol::to_canonical_bytes;

pub use expect::{assert_expectations, ExpectationResult, Report};
pub use runner::{replay_inputs, run_scenario, InputRecord, LogRecord, RunMetrics, RunOutcome};
pub use scenario::{
    load_scenario, Action, DeviceSpec, ElementSpec, Expectation, Latency, NetworkModel, Scenario, ScenarioError,
    TimedAction, SHARED,
};

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    ("bump", include_str!("../../scenarios/bump.json")),
    ("possession", include_str!("../../scenarios/possession.json")),
    ("possession_disrupted", include_str!("../../scenarios/possession_disrupted.json")),
    ("sort_edit", include_str!("../../scenarios/sort_edit.json")),
    ("snap_pong", include_str!("../../scenarios/snap_pong.json")),
    ("extended_drag", include_str!("../../scenarios/extended_drag.json")),
    ("classroom", include_str!("../../scenarios/classroom.json")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| load_scenario(src).unwrap_or_else(|e| panic!("bundled scenario {name}: {e}")))
}

/// One canonical JSON record per line.
pub fn export_lines<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(to_canonical_bytes(r));
        out.push(b'\n');
    }
    out
}

pub fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
