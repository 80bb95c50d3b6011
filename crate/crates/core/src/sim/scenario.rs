use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EngineConfig, EventKind, Technique};
use crate::model::{AttrValue, DeviceId, DeviceKind, ElementId, Owner, Pose, Presence, ScreenExtents};
use crate::protocol::{Command, DeviceDescriptor, StreamKind};

/// A scripted session: devices, initial content, a timeline of client
/// actions, a network model and the checks to run afterwards.
///
/// Devices are referred to by name. The n-th declared device joins as
/// `DeviceId(n)`, so commands that carry raw ids can be written by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tick_hz")]
    pub tick_hz: f64,
    pub duration_s: f64,
    #[serde(default = "all_techniques")]
    pub techniques: BTreeSet<Technique>,
    #[serde(default)]
    pub network: NetworkModel,
    pub devices: Vec<DeviceSpec>,
    #[serde(default)]
    pub elements: Vec<ElementSpec>,
    #[serde(default)]
    pub timeline: Vec<TimedAction>,
    #[serde(default)]
    pub expectations: Vec<Expectation>,
}

fn default_tick_hz() -> f64 {
    60.0
}

fn all_techniques() -> BTreeSet<Technique> {
    Technique::ALL.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    pub kind: DeviceKind,
    pub extents: ScreenExtents,
    pub presence: Presence,
    #[serde(default)]
    pub pose: Pose,
}

impl DeviceSpec {
    pub fn descriptor(&self) -> DeviceDescriptor {
        DeviceDescriptor::new(self.kind, self.extents, self.presence).with_pose(self.pose)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub id: ElementId,
    /// A device name, or `shared`.
    pub owner: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Latency {
    Fixed { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
}

/// Applied independently to every directed link. Control traffic is never
/// lost; `loss` only affects stream frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub latency: Latency,
    /// Without reordering each link delivers in send order.
    #[serde(default)]
    pub reorder: bool,
    #[serde(default)]
    pub loss: f64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self { latency: Latency::Fixed { ms: 0.0 }, reorder: false, loss: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    /// Interpolated pose updates; `from` defaults to the last pose sent.
    MoveLinear {
        device: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<Pose>,
        to: Pose,
        duration_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_hz: Option<f64>,
    },
    SetPose {
        device: String,
        pose: Pose,
    },
    /// Keeps re-sending the current pose, as a tracked device at rest does.
    Hold {
        device: String,
        duration_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_hz: Option<f64>,
    },
    SetAttribute {
        device: String,
        element: ElementId,
        name: String,
        value: AttrValue,
    },
    RemoveElement {
        device: String,
        element: ElementId,
    },
    Command {
        device: String,
        command: Command,
    },
    /// Drags an element owned by `device` along a straight line in that
    /// screen's coordinates, which may run past its edges onto neighbours.
    DragContent {
        device: String,
        element: ElementId,
        to: [f64; 2],
        duration_s: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate_hz: Option<f64>,
    },
    InjectStream {
        device: String,
        kind: StreamKind,
        frames: u32,
        fps: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_fps: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        height: Option<u32>,
    },
}

impl Action {
    pub fn device(&self) -> &str {
        match self {
            Action::MoveLinear { device, .. }
            | Action::SetPose { device, .. }
            | Action::Hold { device, .. }
            | Action::SetAttribute { device, .. }
            | Action::RemoveElement { device, .. }
            | Action::Command { device, .. }
            | Action::DragContent { device, .. }
            | Action::InjectStream { device, .. } => device,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    EventCount {
        name: String,
        kind: EventKind,
        n: usize,
    },
    /// The `occurrence`-th event of `kind` (0-based) happens within `tol_s`.
    EventWithin {
        name: String,
        kind: EventKind,
        t_s: f64,
        tol_s: f64,
        #[serde(default)]
        occurrence: usize,
    },
    /// With a hash: the server state has it. Without: every replica matches
    /// the server.
    StateEqual {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hash: Option<String>,
    },
    /// `tol` 0 demands exact equality.
    PoseEqual {
        name: String,
        device: String,
        pose: Pose,
        tol: f64,
    },
    AttributeEqual {
        name: String,
        element: ElementId,
        attribute: String,
        value: AttrValue,
    },
    ElementOnDevice {
        name: String,
        element: ElementId,
        device: String,
        local: [f64; 2],
        tol: f64,
    },
    ElementCount {
        name: String,
        /// A device name, or `shared`.
        owner: String,
        n: usize,
    },
}

impl Expectation {
    pub fn name(&self) -> &str {
        match self {
            Expectation::EventCount { name, .. }
            | Expectation::EventWithin { name, .. }
            | Expectation::StateEqual { name, .. }
            | Expectation::PoseEqual { name, .. }
            | Expectation::AttributeEqual { name, .. }
            | Expectation::ElementOnDevice { name, .. }
            | Expectation::ElementCount { name, .. } => name,
        }
    }

    fn devices(&self) -> Vec<&str> {
        match self {
            Expectation::PoseEqual { device, .. } | Expectation::ElementOnDevice { device, .. } => vec![device],
            Expectation::ElementCount { owner, .. } if owner != SHARED => vec![owner],
            _ => Vec::new(),
        }
    }
}

pub const SHARED: &str = "shared";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line} column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{location}: {message}")]
    Invalid { location: String, message: String },
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { location: location.into(), message: message.into() }
}

pub fn load_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(source).map_err(|e| {
        // serde_json appends the position itself; keep it only once.
        let full = e.to_string();
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        let message = full.strip_suffix(&suffix).unwrap_or(&full).to_string();
        ScenarioError::Parse { line: e.line(), column: e.column(), message }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    /// Join id of a named device.
    pub fn device_id(&self, name: &str) -> Option<DeviceId> {
        self.devices.iter().position(|d| d.name == name).map(|i| DeviceId(i as u32 + 1))
    }

    pub fn owner(&self, name: &str) -> Option<Owner> {
        if name == SHARED {
            return Some(Owner::Shared);
        }
        self.device_id(name).map(Owner::Device)
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig { tick_hz: self.tick_hz, ..EngineConfig::default() }.with_techniques(self.techniques.iter().copied())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if !(self.tick_hz.is_finite() && self.tick_hz > 0.0) {
            return Err(invalid("tick_hz", "must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(invalid("duration_s", "must be positive"));
        }
        self.validate_network()?;
        if self.devices.is_empty() {
            return Err(invalid("devices", "at least one device is required"));
        }
        let mut names = BTreeSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            let at = format!("devices[{i}]");
            if d.name.is_empty() || d.name == SHARED {
                return Err(invalid(format!("{at}.name"), format!("{:?} is reserved", d.name)));
            }
            if !names.insert(d.name.as_str()) {
                return Err(invalid(format!("{at}.name"), format!("duplicate device {:?}", d.name)));
            }
            d.descriptor().validate().map_err(|e| invalid(&at, e.to_string()))?;
        }

        let mut known: BTreeSet<&ElementId> = BTreeSet::new();
        for (i, e) in self.elements.iter().enumerate() {
            let at = format!("elements[{i}]");
            if self.owner(&e.owner).is_none() {
                return Err(invalid(format!("{at}.owner"), format!("undeclared device {:?}", e.owner)));
            }
            if !known.insert(&e.id) {
                return Err(invalid(format!("{at}.id"), format!("duplicate element {:?}", e.id.as_str())));
            }
            if !e.attributes.values().all(AttrValue::is_finite) {
                return Err(invalid(format!("{at}.attributes"), "non-finite value"));
            }
        }

        let mut last = 0.0;
        for (i, t) in self.timeline.iter().enumerate() {
            let at = format!("timeline[{i}]");
            if !(t.at_s.is_finite() && t.at_s >= 0.0) {
                return Err(invalid(format!("{at}.at_s"), "must be a non-negative time"));
            }
            if t.at_s < last {
                return Err(invalid(format!("{at}.at_s"), format!("{} is earlier than the previous action at {last}", t.at_s)));
            }
            last = t.at_s;
            if self.device_id(t.action.device()).is_none() {
                return Err(invalid(format!("{at}.device"), format!("undeclared device {:?}", t.action.device())));
            }
            self.validate_action(&at, &t.action, &mut known)?;
        }

        let mut names = BTreeSet::new();
        for (i, x) in self.expectations.iter().enumerate() {
            let at = format!("expectations[{i}]");
            if !names.insert(x.name()) {
                return Err(invalid(format!("{at}.name"), format!("duplicate expectation {:?}", x.name())));
            }
            for d in x.devices() {
                if self.device_id(d).is_none() {
                    return Err(invalid(format!("{at}.device"), format!("undeclared device {d:?}")));
                }
            }
            if let Expectation::StateEqual { hash: Some(h), .. } = x {
                if h.len() != 64 || hex::decode(h).is_err() {
                    return Err(invalid(format!("{at}.hash"), "expected 64 hex digits"));
                }
            }
        }
        Ok(())
    }

    fn validate_network(&self) -> Result<(), ScenarioError> {
        let ok = match self.network.latency {
            Latency::Fixed { ms } => ms.is_finite() && ms >= 0.0,
            Latency::Uniform { min_ms, max_ms } => min_ms.is_finite() && max_ms.is_finite() && 0.0 <= min_ms && min_ms <= max_ms,
        };
        if !ok {
            return Err(invalid("network.latency", "latencies must be finite, non-negative and ordered"));
        }
        if !(0.0..=1.0).contains(&self.network.loss) {
            return Err(invalid("network.loss", "must be a probability"));
        }
        Ok(())
    }

    fn validate_action<'a>(&self, at: &str, action: &'a Action, known: &mut BTreeSet<&'a ElementId>) -> Result<(), ScenarioError> {
        let positive = |v: f64, field: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{at}.{field}"), "must be positive"))
            }
        };
        let rate = |r: &Option<f64>| r.map_or(Ok(()), |r| positive(r, "rate_hz"));
        match action {
            Action::MoveLinear { from, to, duration_s, rate_hz, .. } => {
                if let Some(p) = from {
                    p.validate().map_err(|e| invalid(format!("{at}.from"), e.to_string()))?;
                }
                to.validate().map_err(|e| invalid(format!("{at}.to"), e.to_string()))?;
                positive(*duration_s, "duration_s")?;
                rate(rate_hz)
            }
            Action::SetPose { pose, .. } => pose.validate().map_err(|e| invalid(format!("{at}.pose"), e.to_string())),
            Action::Hold { duration_s, rate_hz, .. } => {
                positive(*duration_s, "duration_s")?;
                rate(rate_hz)
            }
            Action::SetAttribute { element, value, .. } => {
                if !value.is_finite() {
                    return Err(invalid(format!("{at}.value"), "non-finite value"));
                }
                known.insert(element);
                Ok(())
            }
            Action::RemoveElement { element, .. } | Action::DragContent { element, .. } if !known.contains(element) => {
                Err(invalid(format!("{at}.element"), format!("undeclared element {:?}", element.as_str())))
            }
            Action::RemoveElement { .. } => Ok(()),
            Action::DragContent { to, duration_s, rate_hz, .. } => {
                if !to.iter().all(|v| v.is_finite()) {
                    return Err(invalid(format!("{at}.to"), "non-finite coordinate"));
                }
                positive(*duration_s, "duration_s")?;
                rate(rate_hz)
            }
            Action::Command { command, .. } => command.validate().map_err(|e| invalid(format!("{at}.command"), e.to_string())),
            Action::InjectStream { fps, target_fps, width, height, .. } => {
                positive(*fps, "fps")?;
                if let Some(t) = target_fps {
                    positive(*t, "target_fps")?;
                }
                if width == &Some(0) || height == &Some(0) {
                    return Err(invalid(at, "frame dimensions must be positive"));
                }
                Ok(())
            }
        }
    }
}
