//! Cross-device interaction engine for mixed physical and holographic
//! screens: a shared pose model, a sequenced sync server, tick-driven
//! interaction detectors, a depth-to-point-cloud pipeline and a
//! deterministic simulation harness.

pub mod engine;
pub mod model;
pub mod pointcloud;
pub mod protocol;
pub mod server;
pub mod sim;
