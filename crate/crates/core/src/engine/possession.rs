use serde::{Deserialize, Serialize};

use crate::model::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PossessionConfig {
    pub distance: f64,
    pub hold_s: f64,
}

impl Default for PossessionConfig {
    fn default() -> Self {
        Self { distance: 0.05, hold_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Arming { elapsed_s: f64 },
    Possessed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PossessionTransition {
    Granted,
}

/// Hold-to-possess timer between one local device and one hologram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PossessionFsm {
    pub local_device: DeviceId,
    pub target_device: DeviceId,
    pub phase: Phase,
    pub d_threshold: f64,
    pub t_hold: f64,
    /// Set after a release; the local device has to leave the zone before it
    /// can arm again.
    pub latched: bool,
}

// Timers accumulate dt in floating point; ten ticks of 0.1 s must count as 1 s.
const HOLD_EPS: f64 = 1e-9;

impl PossessionFsm {
    pub fn new(local_device: DeviceId, target_device: DeviceId, cfg: &PossessionConfig) -> Self {
        Self {
            local_device,
            target_device,
            phase: Phase::Idle,
            d_threshold: cfg.distance,
            t_hold: cfg.hold_s,
            latched: false,
        }
    }

    pub fn is_possessed(&self) -> bool {
        self.phase == Phase::Possessed
    }

    /// Advances the timer with one distance sample.
    pub fn update(&mut self, distance: f64, dt: f64) -> Option<PossessionTransition> {
        let inside = distance < self.d_threshold;
        if self.latched {
            if !inside {
                self.latched = false;
            }
            return None;
        }
        match self.phase {
            Phase::Possessed => None,
            _ if !inside => {
                self.phase = Phase::Idle;
                None
            }
            Phase::Idle | Phase::Arming { .. } => {
                let before = match self.phase {
                    Phase::Arming { elapsed_s } => elapsed_s,
                    _ => 0.0,
                };
                let elapsed = (before + dt).clamp(0.0, self.t_hold);
                if before + dt >= self.t_hold - HOLD_EPS {
                    self.phase = Phase::Possessed;
                    Some(PossessionTransition::Granted)
                } else {
                    self.phase = Phase::Arming { elapsed_s: elapsed };
                    None
                }
            }
        }
    }

    pub fn release(&mut self) -> bool {
        let was = self.is_possessed();
        self.phase = Phase::Idle;
        self.latched = true;
        was
    }
}

/// Pure form of [`PossessionFsm::update`].
pub fn update_possession(mut fsm: PossessionFsm, distance: f64, dt: f64) -> (PossessionFsm, Option<PossessionTransition>) {
    let t = fsm.update(distance, dt);
    (fsm, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxemicsConfig {
    pub zones: Vec<f64>,
    pub hysteresis: f64,
}

impl Default for ProxemicsConfig {
    fn default() -> Self {
        Self { zones: vec![0.3, 1.0, 3.0], hysteresis: 0.1 }
    }
}

/// Number of zone thresholds at or below `distance`.
pub fn proxemic_level(distance: f64, zones: &[f64]) -> u32 {
    zones.iter().filter(|&&z| z <= distance).count() as u32
}

/// Level after a new sample, moving only once the distance clears a
/// threshold by the hysteresis fraction.
pub fn hysteretic_level(previous: u32, distance: f64, zones: &[f64], hysteresis: f64) -> u32 {
    let mut level = previous.min(zones.len() as u32) as usize;
    while level < zones.len() && distance >= zones[level] * (1.0 + hysteresis) {
        level += 1;
    }
    while level > 0 && distance < zones[level - 1] * (1.0 - hysteresis) {
        level -= 1;
    }
    level as u32
}
