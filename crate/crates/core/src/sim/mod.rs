//! Discrete-event simulation of transmitters behind independent packet
//! erasure channels.

pub mod channel;
pub mod mac;
pub mod scenario;
pub mod trace;

pub use channel::{Delivery, ErasureChannel};
pub use mac::{compute_mac, verify_mac};
pub use scenario::{
    run_scenario, CodeSpec, Commission, Mobility, ScenarioConfig, ScenarioOutput, ScriptStep, TransmitterState,
};
pub use trace::{
    read_jsonl, region_distance, write_jsonl, DeviceId, DeviceProvision, Network, PacketEvent, Region, TruthRecord,
};
