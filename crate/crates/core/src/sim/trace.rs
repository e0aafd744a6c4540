//! On-disk formats shared by the simulator and the backend.
//!
//! Traces are JSON Lines: one [`PacketEvent`] per line. The ground-truth
//! sidecar has one [`TruthRecord`] per transmission, erased or not, and is
//! only ever read by scoring code.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::perm::Cn;

pub type DeviceId = u32;
pub type Region = u32;

/// One over-the-air packet as seen by a base station.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketEvent {
    pub ts: u64,
    pub region: Region,
    pub cn: Cn,
    pub mac: u64,
    #[serde(rename = "payload_b64", with = "b64")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub ts: u64,
    pub device_id: DeviceId,
    pub cn: Cn,
    pub region: Region,
    pub erased: bool,
    /// Transmissions since this device's previous delivered packet,
    /// counting this one; `None` for erased packets and first receptions.
    pub beta: Option<u64>,
}

/// What the backend is provisioned with: one entry per device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceProvision {
    pub device_id: DeviceId,
    pub delta: u64,
    #[serde(rename = "key_b64", with = "b64")]
    pub key: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub q: u64,
    pub l: u64,
    /// Regions are `0..regions` arranged in a ring.
    pub regions: u32,
    pub t_bits: u32,
    pub devices: Vec<DeviceProvision>,
}

/// Hop distance between two regions on the ring.
pub fn region_distance(a: Region, b: Region, regions: u32) -> u32 {
    if regions <= 1 {
        return 0;
    }
    let d = a.abs_diff(b) % regions;
    d.min(regions - d)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut w: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(r: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text).map_err(serde::de::Error::custom)
    }
}
