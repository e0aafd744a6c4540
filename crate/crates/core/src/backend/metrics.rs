use serde::{Deserialize, Serialize};

use super::{Decision, Outcome};
use crate::error::{Error, Result};
use crate::sim::trace::TruthRecord;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub packets: u64,
    pub correct: u64,
    pub wrong: u64,
    pub dropped: u64,
}

impl CaseMetrics {
    fn add(&mut self, outcome: &Outcome, truth: &TruthRecord) {
        self.packets += 1;
        match *outcome {
            Outcome::Delivered { device_id, .. } if device_id == truth.device_id => self.correct += 1,
            Outcome::Delivered { .. } => self.wrong += 1,
            Outcome::Dropped(_) => self.dropped += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DelayStats {
    pub mean: f64,
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub packets: u64,
    pub delivered: u64,
    pub correct: u64,
    pub wrong: u64,
    pub dropped: u64,
    /// Correct deliveries over received packets.
    pub accuracy: f64,
    /// Wrong deliveries over deliveries.
    pub misidentification_rate: f64,
    pub drop_rate: f64,
    /// Delivery delay in received packets, over deliveries.
    pub delay: DelayStats,
    /// Previous packet of the device was received and at most `l` were lost.
    pub case_a: CaseMetrics,
    pub case_b: CaseMetrics,
}

/// Scores decisions against the ground truth of the delivered packets.
/// `truth` is aligned with the trace; `decisions` may come in any order but
/// must cover every index exactly once.
pub fn engine_metrics(truth: &[&TruthRecord], decisions: &[Decision], l: u64) -> Result<MetricsReport> {
    let mut by_index: Vec<Option<&Decision>> = vec![None; truth.len()];
    for d in decisions {
        let slot = by_index
            .get_mut(d.index as usize)
            .ok_or_else(|| Error::Validation(format!("decision for packet {} beyond the trace", d.index)))?;
        if slot.replace(d).is_some() {
            return Err(Error::Validation(format!("packet {} decided twice", d.index)));
        }
    }
    let mut r = MetricsReport { packets: truth.len() as u64, ..Default::default() };
    let mut delays = Vec::new();
    for (i, (t, d)) in truth.iter().zip(&by_index).enumerate() {
        let d = d.ok_or_else(|| Error::Validation(format!("packet {i} has no decision")))?;
        if d.cn != t.cn {
            return Err(Error::Validation(format!("packet {i}: decision and ground truth disagree on the CN")));
        }
        let case = if t.beta.is_some_and(|b| b <= l) { &mut r.case_a } else { &mut r.case_b };
        case.add(&d.outcome, t);
        match d.outcome {
            Outcome::Delivered { device_id, delay } => {
                r.delivered += 1;
                delays.push(delay);
                if device_id == t.device_id {
                    r.correct += 1;
                } else {
                    r.wrong += 1;
                }
            }
            Outcome::Dropped(_) => r.dropped += 1,
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    r.accuracy = ratio(r.correct, r.packets);
    r.misidentification_rate = ratio(r.wrong, r.delivered);
    r.drop_rate = ratio(r.dropped, r.packets);
    delays.sort_unstable();
    if !delays.is_empty() {
        r.delay = DelayStats {
            mean: delays.iter().sum::<u64>() as f64 / delays.len() as f64,
            p50: percentile(&delays, 50),
            p95: percentile(&delays, 95),
            p99: percentile(&delays, 99),
            max: *delays.last().unwrap(),
        };
    }
    Ok(r)
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[u64], pct: u64) -> u64 {
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}
