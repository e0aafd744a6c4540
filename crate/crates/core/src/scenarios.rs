//! Small bundled scenarios with hand-picked traffic.

use crate::backend::BackendConfig;
use crate::error::{Error, Result};
use crate::sim::scenario::{CodeSpec, Mobility, ScenarioConfig, ScriptStep};

/// A scenario together with the backend settings it is meant to be replayed with.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub scenario: ScenarioConfig,
    pub backend: BackendConfig,
}

pub const BUNDLED: &[&str] = &["example5", "example6"];

pub fn bundled(name: &str) -> Result<Bundle> {
    match name {
        "example5" => Ok(late_second_packet()),
        "example6" => Ok(crossing_counters()),
        _ => Err(Error::NotFound(format!("no bundled scenario named {name:?}; known: {}", BUNDLED.join(", ")))),
    }
}

fn scripted(name: &str, code: CodeSpec, first_cns: Vec<u64>, steps: &[(usize, bool)]) -> ScenarioConfig {
    ScenarioConfig {
        name: Some(name.into()),
        code,
        devices: first_cns.len(),
        epsilon: 0.0,
        events: 0,
        seed: 1,
        t_bits: 32,
        mean_interval: 100.0,
        mobility: Mobility::default(),
        commissioning: Vec::new(),
        first_cns: Some(first_cns),
        script: Some(steps.iter().map(|&(device, erased)| ScriptStep { device, erased }).collect()),
        payload_bytes: 4,
    }
}

/// Three unidentified devices with increments 1, 21 and 91 over `Z_110`.
/// The increment-21 device sends 77, loses 98, then sends 9.
fn late_second_packet() -> Bundle {
    let code = CodeSpec::Increments { q: 110, l: 10, deltas: vec![1, 21, 91] };
    let scenario = scripted("example5", code, vec![0, 77, 0], &[(1, false), (1, true), (1, false)]);
    Bundle { scenario, backend: BackendConfig::default() }
}

/// Incrementing and decrementing counters over `Z_20` whose code numbers
/// cross. Received: 1 2 10 9 3 7 5 3 4, where the decrementing device loses
/// 8, 6 and 4. MAC checks are left out of the decoder so only the code
/// numbers decide.
fn crossing_counters() -> Bundle {
    let code = CodeSpec::Increments { q: 20, l: 9, deltas: vec![1, 19] };
    let (inc, dec) = (0, 1);
    let steps = [
        (inc, false),
        (inc, false),
        (dec, false),
        (dec, false),
        (inc, false),
        (dec, true),
        (dec, false),
        (dec, true),
        (dec, false),
        (dec, true),
        (dec, false),
        (inc, false),
    ];
    let scenario = scripted("example6", code, vec![1, 10], &steps);
    let backend = BackendConfig { epsilon: 0.1, hmm_uses_mac: false, ..BackendConfig::default() };
    Bundle { scenario, backend }
}
