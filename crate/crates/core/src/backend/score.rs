use serde::{Deserialize, Serialize};

use super::{BackendConfig, DeviceRecord, Status};
use crate::sim::trace::{region_distance, DeviceId, PacketEvent};

/// `P_beta = (1 - eps) eps^(beta - 1)`: probability that exactly `beta - 1`
/// packets were lost between two receptions.
pub fn erasure_probability(epsilon: f64, beta: u64) -> f64 {
    if beta == 0 {
        return 0.0;
    }
    let exp = (beta - 1).min(i32::MAX as u64) as i32;
    (1.0 - epsilon) * epsilon.powi(exp)
}

/// Natural log of [`erasure_probability`], exact for large `beta`.
pub fn log_erasure_probability(epsilon: f64, beta: u64) -> f64 {
    if beta == 0 {
        return f64::NEG_INFINITY;
    }
    let tail = if beta == 1 { 0.0 } else { (beta - 1) as f64 * epsilon.ln() };
    (1.0 - epsilon).ln() + tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub device_id: DeviceId,
    pub beta: u64,
    pub probability: f64,
    /// `beta` exceeds the tolerated gap `l`.
    pub implausible: bool,
}

/// Whether a device last heard in `from_region` at `from_ts` could be heard in
/// `to_region` at `to_ts`. Without a hop speed every move is allowed.
pub fn region_plausible(cfg: &BackendConfig, regions: u32, from_region: u32, from_ts: u64, to_region: u32, to_ts: u64) -> bool {
    let Some(hop_ticks) = cfg.region_hop_ticks else {
        return true;
    };
    let dt = to_ts.saturating_sub(from_ts);
    let reach = 1 + dt / hop_ticks.max(1);
    u64::from(region_distance(from_region, to_region, regions)) <= reach
}

/// Scores every identified device as the possible source of `packet`,
/// best first. Devices ruled out by region keep probability zero.
pub fn score_candidates(
    packet: &PacketEvent,
    devices: &[DeviceRecord],
    cfg: &BackendConfig,
    regions: u32,
) -> Vec<CandidateScore> {
    let mut out: Vec<CandidateScore> = devices
        .iter()
        .filter_map(|d| {
            let Status::Identified(last) = d.status else {
                return None;
            };
            let beta = d.solver.beta(last.cn, packet.cn);
            let plausible = region_plausible(cfg, regions, last.region, last.ts, packet.region, packet.ts);
            let probability = if plausible { erasure_probability(cfg.epsilon, beta) } else { 0.0 };
            Some(CandidateScore { device_id: d.device_id, beta, probability, implausible: beta > cfg.l })
        })
        .collect();
    out.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.device_id.cmp(&b.device_id)));
    out
}
