//! Backend identification engine.
//!
//! Each packet is first matched against identified devices (the fast path).
//! A single dominant candidate with a valid MAC is delivered at once. Every
//! other packet becomes an observation of a hidden Markov model whose state
//! is the last code number of each device that is not identified, decoded
//! with a pruned Viterbi search. Observations are delivered, possibly late,
//! once one attribution dominates, or dropped after a horizon.

pub mod hmm;
pub mod metrics;
pub mod score;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::construction::BetaSolver;
use crate::error::{Error, Result};
use crate::sim::mac::{check_tag_bits, verify_mac};
use crate::sim::trace::{DeviceId, Network, PacketEvent};

pub use hmm::{decode, DecodeModel, Decoded, PathScore, Pruning, Slot};
pub use metrics::{engine_metrics, CaseMetrics, MetricsReport};
pub use score::{erasure_probability, score_candidates, CandidateScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Erasure probability assumed by the backend.
    pub epsilon: f64,
    /// Largest gap the fast path accepts; taken from the network when zero.
    pub l: u64,
    /// Required probability ratio of the best over the second candidate.
    pub dominance_ratio: f64,
    /// Lower bound on the winning candidate's probability.
    pub min_probability: f64,
    /// Required ratio of the best path over the best path that disagrees
    /// before a buffered packet is delivered.
    pub delivery_ratio: f64,
    pub beam_ratio: Option<f64>,
    pub max_paths: Option<usize>,
    /// Buffered packets are dropped after this many further observations.
    pub horizon: u64,
    pub max_pending: usize,
    pub t_bits: u32,
    /// Let MAC validity gate transitions inside the decoder.
    pub hmm_uses_mac: bool,
    /// Ticks needed to move one region; `None` disables region checks.
    pub region_hop_ticks: Option<u64>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        let pruning = Pruning::default();
        BackendConfig {
            epsilon: 0.05,
            l: 0,
            dominance_ratio: 1e3,
            min_probability: 0.0,
            delivery_ratio: 1e3,
            beam_ratio: pruning.beam_ratio,
            max_paths: pruning.max_paths,
            horizon: 32,
            max_pending: 1024,
            t_bits: 32,
            hmm_uses_mac: true,
            region_hop_ticks: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::Parameter(format!("erasure estimate {} must lie in [0, 1)", self.epsilon)));
        }
        for (name, r) in [("dominance_ratio", self.dominance_ratio), ("delivery_ratio", self.delivery_ratio)] {
            if r.is_nan() || r < 1.0 {
                return Err(Error::Parameter(format!("{name} must be at least 1, got {r}")));
            }
        }
        if let Some(b) = self.beam_ratio {
            if b.is_nan() || b < 1.0 {
                return Err(Error::Parameter(format!("beam_ratio must be at least 1, got {b}")));
            }
        }
        if self.max_paths == Some(0) || self.horizon == 0 || self.max_pending == 0 {
            return Err(Error::Parameter("max_paths, horizon and max_pending must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_probability) {
            return Err(Error::Parameter("min_probability must lie in [0, 1]".into()));
        }
        check_tag_bits(self.t_bits)
    }

    pub fn pruning(&self) -> Pruning {
        Pruning { beam_ratio: self.beam_ratio, max_paths: self.max_paths }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Identified(Slot),
    Unidentified,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub delta: u64,
    pub key: Vec<u8>,
    pub status: Status,
    pub(crate) solver: BetaSolver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// No device explains the packet.
    Unexplained,
    /// No attribution dominated within the horizon.
    Ambiguous,
    /// The decoded device's MAC rejected the packet.
    MacInvalid,
    /// Still buffered when the trace ended.
    EndOfTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// `delay` counts packets received after this one before delivery.
    Delivered { device_id: DeviceId, delay: u64 },
    Dropped(DropReason),
}

/// Final verdict on one received packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    /// Position in the received trace.
    pub index: u64,
    pub ts: u64,
    pub cn: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone)]
struct PendingObs {
    index: u64,
    seq: u64,
    packet: PacketEvent,
}

/// The identification engine. Packets must be fed in arrival order.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: BackendConfig,
    q: u64,
    regions: u32,
    devices: Vec<DeviceRecord>,
    by_id: HashMap<DeviceId, usize>,
    in_hmm: Vec<bool>,
    paths: Vec<hmm::Path>,
    pending: Vec<PendingObs>,
    received: u64,
    seq: u64,
}

impl Engine {
    /// All provisioned devices start unidentified.
    pub fn new(network: &Network, mut cfg: BackendConfig) -> Result<Engine> {
        if cfg.l == 0 {
            cfg.l = network.l;
        }
        cfg.validate()?;
        let mut devices = Vec::with_capacity(network.devices.len());
        let mut by_id = HashMap::new();
        for (i, d) in network.devices.iter().enumerate() {
            if by_id.insert(d.device_id, i).is_some() {
                return Err(Error::Validation(format!("device {} is provisioned twice", d.device_id)));
            }
            devices.push(DeviceRecord {
                device_id: d.device_id,
                delta: d.delta,
                key: d.key.clone(),
                status: Status::Unidentified,
                solver: BetaSolver::new(d.delta, network.q)?,
            });
        }
        let n = devices.len();
        Ok(Engine {
            cfg,
            q: network.q,
            regions: network.regions,
            devices,
            by_id,
            in_hmm: vec![true; n],
            paths: vec![hmm::Path::empty(n)],
            pending: Vec::new(),
            received: 0,
            seq: 0,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceRecord] {
        &self.devices
    }

    pub fn device(&self, id: DeviceId) -> Option<&DeviceRecord> {
        self.by_id.get(&id).map(|&i| &self.devices[i])
    }

    /// Marks a device as identified with a known last code number.
    pub fn set_identified(&mut self, id: DeviceId, slot: Slot) -> Result<()> {
        let &i = self.by_id.get(&id).ok_or_else(|| Error::NotFound(format!("device {id}")))?;
        if slot.cn >= self.q {
            return Err(Error::Domain(format!("code number {} is outside Z_{}", slot.cn, self.q)));
        }
        if self.paths.iter().any(|p| p.attr.contains(&(i as u32))) {
            return Err(Error::State(format!("device {id} has buffered packets")));
        }
        self.devices[i].status = Status::Identified(slot);
        self.in_hmm[i] = false;
        for p in &mut self.paths {
            p.slots[i] = None;
        }
        self.dedupe();
        Ok(())
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn path_count(&self) -> usize {
        self.paths.len()
    }

    /// Processes one packet and returns every decision it made final, which
    /// may include earlier buffered packets.
    pub fn observe(&mut self, packet: &PacketEvent) -> Result<Vec<Decision>> {
        if packet.cn >= self.q {
            return Err(Error::Validation(format!("code number {} is outside Z_{}", packet.cn, self.q)));
        }
        let index = self.received;
        let scores = score_candidates(packet, &self.devices, &self.cfg, self.regions);
        if let Some(id) = self.fast_path(packet, &scores) {
            self.received += 1;
            return Ok(vec![Decision {
                index,
                ts: packet.ts,
                cn: packet.cn,
                outcome: Outcome::Delivered { device_id: id, delay: 0 },
            }]);
        }
        if self.pending.len() >= self.cfg.max_pending {
            return Err(Error::Capacity(format!("{} packets already buffered", self.pending.len())));
        }
        self.received += 1;
        self.escalate(packet, &scores);
        Ok(self.hmm_observe(index, packet))
    }

    /// Drops everything still buffered.
    pub fn finish(&mut self) -> Vec<Decision> {
        let out = self
            .pending
            .drain(..)
            .map(|p| Decision {
                index: p.index,
                ts: p.packet.ts,
                cn: p.packet.cn,
                outcome: Outcome::Dropped(DropReason::EndOfTrace),
            })
            .collect();
        for p in &mut self.paths {
            p.attr.clear();
            p.gaps.clear();
        }
        self.dedupe();
        out
    }

    fn fast_path(&mut self, packet: &PacketEvent, scores: &[CandidateScore]) -> Option<DeviceId> {
        let best = scores.first()?;
        if best.implausible || best.probability <= 0.0 || best.probability < self.cfg.min_probability {
            return None;
        }
        if let Some(second) = scores.get(1) {
            if second.probability > 0.0 && best.probability < second.probability * self.cfg.dominance_ratio {
                return None;
            }
        }
        let i = self.by_id[&best.device_id];
        let dev = &mut self.devices[i];
        if !verify_mac(&dev.key, packet.cn, &packet.payload, self.cfg.t_bits, packet.mac) {
            return None;
        }
        dev.status = Status::Identified(slot_of(packet));
        Some(dev.device_id)
    }

    /// Hands identified candidates that might have sent the packet over to
    /// the decoder, at their known coordinate.
    fn escalate(&mut self, packet: &PacketEvent, scores: &[CandidateScore]) {
        for c in scores {
            if c.probability <= 0.0 {
                continue;
            }
            let i = self.by_id[&c.device_id];
            let dev = &self.devices[i];
            let take = !c.implausible
                || (self.cfg.hmm_uses_mac
                    && verify_mac(&dev.key, packet.cn, &packet.payload, self.cfg.t_bits, packet.mac));
            if !take {
                continue;
            }
            let Status::Identified(slot) = dev.status else { continue };
            self.devices[i].status = Status::Unidentified;
            self.in_hmm[i] = true;
            for p in &mut self.paths {
                p.slots[i] = Some(slot);
            }
        }
    }

    fn hmm_observe(&mut self, index: u64, packet: &PacketEvent) -> Vec<Decision> {
        let slot = slot_of(packet);
        let eps = self.cfg.epsilon;
        let usable: Vec<usize> = (0..self.devices.len())
            .filter(|&i| self.in_hmm[i])
            .filter(|&i| {
                !self.cfg.hmm_uses_mac
                    || verify_mac(&self.devices[i].key, packet.cn, &packet.payload, self.cfg.t_bits, packet.mac)
            })
            .collect();
        let mut next = Vec::with_capacity(self.paths.len() * usable.len());
        for p in &self.paths {
            for &i in &usable {
                let step = match p.slots[i] {
                    Some(prev) => {
                        if !score::region_plausible(&self.cfg, self.regions, prev.region, prev.ts, slot.region, slot.ts) {
                            continue;
                        }
                        hmm::Step::Transition(self.devices[i].solver.beta(prev.cn, slot.cn))
                    }
                    None => hmm::Step::Fresh,
                };
                next.push(hmm::extend(p, i, step, slot, eps, self.q));
            }
        }
        let key = self.key_fn();
        let next = hmm::merge_and_prune(next, key, self.cfg.pruning());
        if next.is_empty() {
            self.fold();
            return vec![Decision {
                index,
                ts: packet.ts,
                cn: packet.cn,
                outcome: Outcome::Dropped(DropReason::Unexplained),
            }];
        }
        self.paths = next;
        self.seq += 1;
        self.pending.push(PendingObs { index, seq: self.seq, packet: packet.clone() });

        let mut out = self.commit();
        out.extend(self.expire());
        self.fold();
        out
    }

    /// Delivers buffered packets whose attribution dominates, in order.
    fn commit(&mut self) -> Vec<Decision> {
        let threshold = self.cfg.delivery_ratio.ln();
        let mut blocked = vec![false; self.devices.len()];
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.pending.len() {
            let best = &self.paths[0];
            let dev = best.attr[k];
            let alt = self.paths.iter().map(|p| p.rival_log(k, dev)).fold(f64::NEG_INFINITY, f64::max);
            if blocked[dev as usize] || best.log - alt < threshold {
                blocked[dev as usize] = true;
                k += 1;
                continue;
            }
            self.paths.retain(|p| p.attr[k] == dev);
            for p in &mut self.paths {
                p.forget(k);
            }
            let obs = self.pending.remove(k);
            let record = &self.devices[dev as usize];
            let pkt = &obs.packet;
            let outcome = if verify_mac(&record.key, pkt.cn, &pkt.payload, self.cfg.t_bits, pkt.mac) {
                Outcome::Delivered { device_id: record.device_id, delay: self.received - 1 - obs.index }
            } else {
                Outcome::Dropped(DropReason::MacInvalid)
            };
            out.push(Decision { index: obs.index, ts: pkt.ts, cn: pkt.cn, outcome });
        }
        self.dedupe();
        out
    }

    fn expire(&mut self) -> Vec<Decision> {
        let mut out = Vec::new();
        let mut k = 0;
        while k < self.pending.len() {
            if self.seq - self.pending[k].seq < self.cfg.horizon {
                k += 1;
                continue;
            }
            let obs = self.pending.remove(k);
            for p in &mut self.paths {
                p.forget(k);
            }
            out.push(Decision {
                index: obs.index,
                ts: obs.packet.ts,
                cn: obs.packet.cn,
                outcome: Outcome::Dropped(DropReason::Ambiguous),
            });
        }
        if !out.is_empty() {
            self.dedupe();
        }
        out
    }

    /// Moves devices whose coordinate every path agrees on back to the
    /// identified database.
    fn fold(&mut self) {
        let key = self.slot_key();
        let mut changed = false;
        for i in 0..self.devices.len() {
            if !self.in_hmm[i] {
                continue;
            }
            let Some(first) = self.paths[0].slots[i] else { continue };
            let agreed = self.paths.iter().all(|p| {
                p.slots[i].is_some_and(|s| key(s) == key(first)) && !p.attr.contains(&(i as u32))
            });
            if !agreed {
                continue;
            }
            self.devices[i].status = Status::Identified(first);
            self.in_hmm[i] = false;
            for p in &mut self.paths {
                p.slots[i] = None;
            }
            changed = true;
        }
        if changed {
            self.dedupe();
        }
    }

    fn dedupe(&mut self) {
        let key = self.key_fn();
        let paths = std::mem::take(&mut self.paths);
        self.paths = hmm::merge_and_prune(paths, key, Pruning::NONE);
        if self.paths.is_empty() {
            self.paths.push(hmm::Path::empty(self.devices.len()));
        }
    }

    fn slot_key(&self) -> impl Fn(Slot) -> (u64, u64, u32) {
        let with_region = self.cfg.region_hop_ticks.is_some();
        move |s| if with_region { (s.cn, s.ts, s.region) } else { (s.cn, 0, 0) }
    }

    fn key_fn(&self) -> impl Fn(&hmm::Path) -> Vec<Option<(u64, u64, u32)>> {
        let key = self.slot_key();
        move |p| p.slots.iter().map(|s| s.map(&key)).collect()
    }
}

fn slot_of(packet: &PacketEvent) -> Slot {
    Slot { cn: packet.cn, ts: packet.ts, region: packet.region }
}

/// Runs a whole trace and returns one decision per packet, in trace order.
pub fn identify_trace(network: &Network, cfg: BackendConfig, trace: &[PacketEvent]) -> Result<Vec<Decision>> {
    let mut engine = Engine::new(network, cfg)?;
    let mut out = Vec::with_capacity(trace.len());
    for p in trace {
        out.extend(engine.observe(p)?);
    }
    out.extend(engine.finish());
    out.sort_by_key(|d| d.index);
    Ok(out)
}
