use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::channel::ErasureChannel;
use super::mac::{check_tag_bits, compute_mac};
use super::trace::{DeviceId, DeviceProvision, Network, PacketEvent, Region, TruthRecord};
use crate::arith::{gcd, sub_mod};
use crate::construction::ConstructionParams;
use crate::error::{Error, Result};
use crate::perm::{Cn, Permutation};

/// A provisioned transmitter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitterState {
    pub device_id: DeviceId,
    pub permutation: Permutation,
    /// Last emitted code number; before the first packet this is the
    /// predecessor of the first code number.
    pub current_cn: Cn,
    pub key: Vec<u8>,
    pub region: Region,
    pub commissioned_at: u64,
    pub t_bits: u32,
}

impl TransmitterState {
    /// A transmitter whose first packet will carry `first_cn`.
    pub fn new(device_id: DeviceId, q: u64, delta: u64, first_cn: Cn, key: Vec<u8>, t_bits: u32) -> Result<Self> {
        let permutation = Permutation::increment(q, delta)?;
        if !permutation.is_cyclic() {
            return Err(Error::Validation(format!("increment {delta} is not cyclic on Z_{q}")));
        }
        if first_cn >= q {
            return Err(Error::Domain(format!("first code number {first_cn} is outside Z_{q}")));
        }
        check_tag_bits(t_bits)?;
        let current_cn = sub_mod(first_cn, delta % q, q);
        Ok(TransmitterState { device_id, permutation, current_cn, key, region: 0, commissioned_at: 0, t_bits })
    }

    /// Advances to the next code number and builds the packet for it.
    pub fn next_packet(&mut self, payload: Vec<u8>, ts: u64) -> PacketEvent {
        self.current_cn = self.permutation.step(self.current_cn);
        let mac = compute_mac(&self.key, self.current_cn, &payload, self.t_bits)
            .expect("tag length validated at construction");
        PacketEvent { ts, region: self.region, cn: self.current_cn, mac, payload }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeSpec {
    /// Devices take the first `devices` increments of the `(p, l)` construction.
    Construction(ConstructionParams),
    /// Explicit increments over `Z_q`; `l` is the tolerated gap the backend assumes.
    Increments { q: u64, l: u64, deltas: Vec<u64> },
}

impl CodeSpec {
    fn resolve(&self, devices: usize) -> Result<(u64, u64, Vec<u64>)> {
        match self {
            CodeSpec::Construction(params) => {
                if devices as u64 > params.m() {
                    return Err(Error::Validation(format!(
                        "{devices} devices exceed the {} permutations of the construction",
                        params.m()
                    )));
                }
                let deltas = (0..devices as u64).map(|i| params.increment(i)).collect::<Result<_>>()?;
                Ok((params.q(), params.l, deltas))
            }
            CodeSpec::Increments { q, l, deltas } => {
                if devices > deltas.len() {
                    return Err(Error::Validation(format!(
                        "{devices} devices exceed the {} listed increments",
                        deltas.len()
                    )));
                }
                if *l == 0 || l >= q {
                    return Err(Error::Validation(format!("l = {l} must lie in [1, q)")));
                }
                for &d in deltas {
                    if d >= *q || gcd(d, *q) != 1 {
                        return Err(Error::Validation(format!("increment {d} is not cyclic on Z_{q}")));
                    }
                }
                Ok((*q, *l, deltas[..devices].to_vec()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mobility {
    pub regions: u32,
    /// Per transmission, probability of moving to a neighboring region.
    pub move_prob: f64,
    /// Per transmission, probability of reappearing in a uniformly random
    /// region (a device that moved faster than the backend expects).
    pub jump_prob: f64,
}

impl Default for Mobility {
    fn default() -> Self {
        Mobility { regions: 1, move_prob: 0.0, jump_prob: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Commission {
    pub device: usize,
    pub at: u64,
}

/// One transmission of a scripted scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptStep {
    pub device: usize,
    #[serde(default)]
    pub erased: bool,
}

fn default_t_bits() -> u32 {
    32
}

fn default_mean_interval() -> f64 {
    100.0
}

fn default_payload_bytes() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub code: CodeSpec,
    pub devices: usize,
    pub epsilon: f64,
    /// Number of transmissions (delivered or erased) to simulate.
    #[serde(default)]
    pub events: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_t_bits")]
    pub t_bits: u32,
    /// Mean ticks between a device's transmissions (exponential).
    #[serde(default = "default_mean_interval")]
    pub mean_interval: f64,
    #[serde(default)]
    pub mobility: Mobility,
    /// Devices not listed are active from tick 0.
    #[serde(default)]
    pub commissioning: Vec<Commission>,
    /// First code number per device; drawn uniformly when absent.
    #[serde(default)]
    pub first_cns: Option<Vec<Cn>>,
    /// Fixed transmission order and erasures. Replaces the traffic model,
    /// the channel and `events`; transmission `k` happens at tick `k`.
    #[serde(default)]
    pub script: Option<Vec<ScriptStep>>,
    #[serde(default = "default_payload_bytes")]
    pub payload_bytes: usize,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioOutput {
    pub network: Network,
    /// Delivered packets in arrival order; carries no device identity.
    pub trace: Vec<PacketEvent>,
    /// Every transmission, delivered or not.
    pub truth: Vec<TruthRecord>,
}

impl ScenarioOutput {
    /// Ground truth of delivered packets only, aligned with `trace`.
    pub fn delivered_truth(&self) -> Vec<&TruthRecord> {
        self.truth.iter().filter(|t| !t.erased).collect()
    }
}

struct Sim {
    cfg: ScenarioConfig,
    rng: ChaCha8Rng,
    channel: ErasureChannel,
    devices: Vec<TransmitterState>,
    last_delivered: Vec<Option<u64>>,
    sent: Vec<u64>,
    trace: Vec<PacketEvent>,
    truth: Vec<TruthRecord>,
}

impl Sim {
    fn transmit(&mut self, idx: usize, ts: u64, erased: Option<bool>) {
        self.maybe_move(idx);
        let payload: Vec<u8> = (0..self.cfg.payload_bytes).map(|_| self.rng.random()).collect();
        let packet = self.devices[idx].next_packet(payload, ts);
        let erased = match erased {
            Some(e) => e,
            None => self.channel.erases(&mut self.rng),
        };
        let count = self.sent[idx] + 1;
        self.sent[idx] = count;
        let beta = if erased {
            None
        } else {
            let b = self.last_delivered[idx].map(|prev| count - prev);
            self.last_delivered[idx] = Some(count);
            b
        };
        self.truth.push(TruthRecord {
            ts,
            device_id: self.devices[idx].device_id,
            cn: packet.cn,
            region: packet.region,
            erased,
            beta,
        });
        if !erased {
            self.trace.push(packet);
        }
    }

    fn maybe_move(&mut self, idx: usize) {
        let m = self.cfg.mobility;
        if m.regions <= 1 {
            return;
        }
        let dev = &mut self.devices[idx];
        if m.jump_prob > 0.0 && self.rng.random::<f64>() < m.jump_prob {
            dev.region = self.rng.random_range(0..m.regions);
        } else if m.move_prob > 0.0 && self.rng.random::<f64>() < m.move_prob {
            dev.region = if self.rng.random::<bool>() {
                (dev.region + 1) % m.regions
            } else {
                (dev.region + m.regions - 1) % m.regions
            };
        }
    }
}

fn validate(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.devices == 0 {
        return Err(Error::Validation("a scenario needs at least one device".into()));
    }
    check_tag_bits(cfg.t_bits)?;
    if !(cfg.mean_interval.is_finite() && cfg.mean_interval > 0.0) {
        return Err(Error::Validation("mean_interval must be positive".into()));
    }
    let m = cfg.mobility;
    if m.regions == 0 {
        return Err(Error::Validation("at least one region is required".into()));
    }
    for p in [m.move_prob, m.jump_prob] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Validation(format!("mobility probability {p} must lie in [0, 1]")));
        }
    }
    if let Some(first) = &cfg.first_cns {
        if first.len() != cfg.devices {
            return Err(Error::Validation(format!(
                "first_cns lists {} values for {} devices",
                first.len(),
                cfg.devices
            )));
        }
    }
    for c in &cfg.commissioning {
        if c.device >= cfg.devices {
            return Err(Error::Validation(format!("commissioning refers to unknown device {}", c.device)));
        }
    }
    if let Some(script) = &cfg.script {
        if let Some(bad) = script.iter().find(|s| s.device >= cfg.devices) {
            return Err(Error::Validation(format!("script refers to unknown device {}", bad.device)));
        }
    }
    Ok(())
}

/// Runs a scenario to completion. Identical configs give identical output.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    validate(cfg)?;
    let (q, l, deltas) = cfg.code.resolve(cfg.devices)?;
    let channel = ErasureChannel::new(cfg.epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut devices = Vec::with_capacity(cfg.devices);
    for (idx, &delta) in deltas.iter().enumerate() {
        let key: [u8; 16] = rng.random();
        let first = match &cfg.first_cns {
            Some(v) => v[idx],
            None => rng.random_range(0..q),
        };
        let mut tx = TransmitterState::new(idx as DeviceId, q, delta, first, key.to_vec(), cfg.t_bits)?;
        tx.region = rng.random_range(0..cfg.mobility.regions);
        tx.commissioned_at = cfg.commissioning.iter().rev().find(|c| c.device == idx).map_or(0, |c| c.at);
        devices.push(tx);
    }
    let network = Network {
        q,
        l,
        regions: cfg.mobility.regions,
        t_bits: cfg.t_bits,
        devices: devices
            .iter()
            .map(|d| DeviceProvision {
                device_id: d.device_id,
                delta: d.permutation.delta().expect("increment form"),
                key: d.key.clone(),
            })
            .collect(),
    };

    let mut sim = Sim {
        cfg: cfg.clone(),
        rng,
        channel,
        last_delivered: vec![None; devices.len()],
        sent: vec![0; devices.len()],
        devices,
        trace: Vec::new(),
        truth: Vec::new(),
    };

    if let Some(script) = &cfg.script {
        for (k, step) in script.iter().enumerate() {
            sim.transmit(step.device, k as u64, Some(step.erased));
        }
    } else {
        let exp = Exp::new(1.0 / cfg.mean_interval)
            .map_err(|e| Error::Validation(format!("traffic model: {e}")))?;
        // min-heap on (time, device): ties go to the lower device id
        let mut queue: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
        for idx in 0..sim.devices.len() {
            let gap = interval(&exp, &mut sim.rng);
            queue.push(Reverse((sim.devices[idx].commissioned_at + gap, idx)));
        }
        for _ in 0..cfg.events {
            let Reverse((ts, idx)) = queue.pop().expect("every device stays scheduled");
            sim.transmit(idx, ts, None);
            let gap = interval(&exp, &mut sim.rng);
            queue.push(Reverse((ts + gap, idx)));
        }
    }

    Ok(ScenarioOutput { network, trace: sim.trace, truth: sim.truth })
}

fn interval(exp: &Exp<f64>, rng: &mut ChaCha8Rng) -> u64 {
    (exp.sample(rng).round() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn small(eps: f64, devices: usize, events: u64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            name: None,
            code: CodeSpec::Construction(ConstructionParams::new(11, 10).unwrap()),
            devices,
            epsilon: eps,
            events,
            seed,
            t_bits: 32,
            mean_interval: 50.0,
            mobility: Mobility::default(),
            commissioning: Vec::new(),
            first_cns: None,
            script: None,
            payload_bytes: 2,
        }
    }

    #[test]
    fn next_packet_examples() {
        let mut tx = TransmitterState::new(0, 110, 21, 98, vec![1; 16], 32).unwrap();
        assert_eq!(tx.current_cn, 77);
        let p = tx.next_packet(vec![0], 1);
        assert_eq!((p.cn, tx.current_cn), (98, 98));
        assert_eq!(p.mac, compute_mac(&[1; 16], 98, &[0], 32).unwrap());

        let mut t = TransmitterState::new(0, 110, 31, 43, vec![], 32).unwrap();
        assert_eq!(t.current_cn, 12);
        assert_eq!(t.next_packet(vec![], 0).cn, 43);
    }

    #[test]
    fn full_cycle_visits_every_cn_once() {
        let mut tx = TransmitterState::new(0, 110, 21, 5, vec![], 16).unwrap();
        let mut seen: Vec<Cn> = (0..110).map(|i| tx.next_packet(vec![], i).cn).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..110).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_non_cyclic_increment() {
        assert!(TransmitterState::new(0, 110, 11, 0, vec![], 32).is_err());
    }

    #[test]
    fn lossless_single_device_is_arithmetic_progression() {
        let mut cfg = small(0.0, 1, 300, 4);
        cfg.first_cns = Some(vec![7]);
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.trace.len(), 300);
        for (k, p) in out.trace.iter().enumerate() {
            assert_eq!(p.cn, (7 + k as u64) % 110);
        }
        assert!(out.truth.iter().skip(1).all(|t| t.beta == Some(1)));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = small(0.2, 5, 2000, 77);
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 78;
        assert_ne!(run_scenario(&other).unwrap().trace, a.trace);
    }

    #[test]
    fn nonce_recurrence_is_exactly_q() {
        let out = run_scenario(&small(0.3, 4, 3000, 9)).unwrap();
        let mut last_seen: HashMap<(DeviceId, Cn), usize> = HashMap::new();
        let mut count: HashMap<DeviceId, usize> = HashMap::new();
        let mut recurrences = 0;
        for t in &out.truth {
            let n = count.entry(t.device_id).or_default();
            if let Some(prev) = last_seen.insert((t.device_id, t.cn), *n) {
                assert_eq!(*n - prev, 110);
                recurrences += 1;
            }
            *n += 1;
        }
        assert!(recurrences > 0);
    }

    #[test]
    fn truth_beta_matches_recovered_beta() {
        use crate::construction::recover_beta;
        let out = run_scenario(&small(0.4, 3, 3000, 10)).unwrap();
        let deltas: HashMap<DeviceId, u64> = out.network.devices.iter().map(|d| (d.device_id, d.delta)).collect();
        let mut prev: HashMap<DeviceId, Cn> = HashMap::new();
        for t in out.truth.iter().filter(|t| !t.erased) {
            if let Some(u) = prev.insert(t.device_id, t.cn) {
                let beta = t.beta.unwrap();
                let rec = recover_beta(deltas[&t.device_id], 110, u, t.cn).unwrap();
                assert_eq!(rec % 110, beta % 110);
            } else {
                assert_eq!(t.beta, None);
            }
        }
    }

    #[test]
    fn erasure_rate_and_alignment() {
        let out = run_scenario(&small(0.25, 6, 40_000, 12)).unwrap();
        let erased = out.truth.iter().filter(|t| t.erased).count() as f64 / out.truth.len() as f64;
        assert!((erased - 0.25).abs() < 0.01, "{erased}");
        let delivered = out.delivered_truth();
        assert_eq!(delivered.len(), out.trace.len());
        for (t, p) in delivered.iter().zip(&out.trace) {
            assert_eq!((t.cn, t.ts, t.region), (p.cn, p.ts, p.region));
        }
    }

    #[test]
    fn config_errors() {
        assert!(run_scenario(&small(0.0, 11, 10, 0)).is_err());
        assert!(run_scenario(&small(1.0, 1, 10, 0)).is_err());
        assert!(run_scenario(&small(0.0, 0, 10, 0)).is_err());
        let mut cfg = small(0.0, 2, 10, 0);
        cfg.script = Some(vec![ScriptStep { device: 2, erased: false }]);
        assert!(run_scenario(&cfg).is_err());
        let mut cfg = small(0.0, 2, 10, 0);
        cfg.code = CodeSpec::Increments { q: 110, l: 10, deltas: vec![1, 11] };
        assert!(run_scenario(&cfg).is_err());
    }

    #[test]
    fn commissioning_delays_first_transmission() {
        let mut cfg = small(0.0, 2, 200, 3);
        cfg.commissioning = vec![Commission { device: 1, at: 5_000 }];
        let out = run_scenario(&cfg).unwrap();
        let first = out.truth.iter().find(|t| t.device_id == 1).map(|t| t.ts);
        assert!(first.is_none_or(|ts| ts > 5_000));
    }

    #[test]
    fn mobility_moves_between_neighbours() {
        let mut cfg = small(0.0, 3, 3000, 8);
        cfg.mobility = Mobility { regions: 8, move_prob: 0.3, jump_prob: 0.0 };
        let out = run_scenario(&cfg).unwrap();
        let mut last: HashMap<DeviceId, Region> = HashMap::new();
        let mut moves = 0;
        for t in &out.truth {
            if let Some(prev) = last.insert(t.device_id, t.region) {
                let d = super::super::trace::region_distance(prev, t.region, 8);
                assert!(d <= 1);
                moves += (d == 1) as usize;
            }
        }
        assert!(moves > 100);
    }

    #[test]
    fn config_parses_from_json() {
        let cfg = ScenarioConfig::from_json(
            r#"{"code": {"increments": {"q": 20, "l": 9, "deltas": [1, 19]}}, "devices": 2, "epsilon": 0.1,
                "script": [{"device": 0}, {"device": 1, "erased": true}]}"#,
        )
        .unwrap();
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.truth.len(), 2);
        assert_eq!(out.trace.len(), 1);
    }
}
