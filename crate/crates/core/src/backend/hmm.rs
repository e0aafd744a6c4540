//! Path bookkeeping for the Viterbi decoder over unidentified devices.
//!
//! The hidden state is the vector of last code numbers of all devices the
//! decoder tracks. Only states reachable from actual observations are kept:
//! each [`Path`] is one such state together with the attribution of the
//! observations that are still pending. A device never heard from has no
//! coordinate yet and explains a packet with the uniform prior `1/q`.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::score::log_erasure_probability;
use crate::construction::BetaSolver;
use crate::error::{Error, Result};
use crate::perm::Cn;

/// Where a device was last heard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub cn: Cn,
    pub ts: u64,
    pub region: u32,
}

/// Path likelihood kept as exact counts so equal paths compare equal:
/// `(1-eps)^delivered * eps^erased * (1/q)^fresh`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathScore {
    pub delivered: u32,
    pub erased: u64,
    pub fresh: u32,
}

impl PathScore {
    pub fn log_value(&self, epsilon: f64, q: u64) -> f64 {
        let mut v = self.delivered as f64 * (1.0 - epsilon).ln() - self.fresh as f64 * (q as f64).ln();
        if self.erased > 0 {
            if epsilon == 0.0 {
                return f64::NEG_INFINITY;
            }
            v += self.erased as f64 * epsilon.ln();
        }
        v
    }

    pub(crate) fn with(self, step: Step) -> PathScore {
        match step {
            Step::Transition(beta) => PathScore {
                delivered: self.delivered + 1,
                erased: self.erased + (beta - 1),
                fresh: self.fresh,
            },
            Step::Fresh => PathScore { fresh: self.fresh + 1, ..self },
        }
    }
}

/// How a device explains an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    /// From its known last code number after `beta` transmissions.
    Transition(u64),
    /// First packet heard from it.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    /// One coordinate per device, `None` while unknown or not tracked.
    pub slots: Vec<Option<Slot>>,
    /// Device index per pending observation.
    pub attr: Vec<u32>,
    /// Per pending observation, log-likelihood of the best merged-away
    /// history that attributes it elsewhere, relative to this path.
    pub gaps: Vec<f64>,
    pub score: PathScore,
    pub(crate) log: f64,
}

impl Path {
    pub fn empty(devices: usize) -> Path {
        Path { slots: vec![None; devices], attr: Vec::new(), gaps: Vec::new(), score: PathScore::default(), log: 0.0 }
    }

    /// Best log-likelihood among the histories this path stands for that do
    /// not attribute observation `k` to `dev`.
    pub(crate) fn rival_log(&self, k: usize, dev: u32) -> f64 {
        if self.attr[k] != dev {
            self.log
        } else {
            self.log + self.gaps[k]
        }
    }

    pub(crate) fn forget(&mut self, k: usize) {
        self.attr.remove(k);
        self.gaps.remove(k);
    }

    /// Takes over the histories of `other`, which reaches the same state.
    fn absorb(&mut self, other: &Path) {
        for k in 0..self.attr.len() {
            let rival = other.rival_log(k, self.attr[k]) - self.log;
            if rival > self.gaps[k] {
                self.gaps[k] = rival;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    /// Drop paths less likely than the best by more than this factor.
    pub beam_ratio: Option<f64>,
    /// Keep at most this many paths.
    pub max_paths: Option<usize>,
}

impl Pruning {
    pub const NONE: Pruning = Pruning { beam_ratio: None, max_paths: None };
}

impl Default for Pruning {
    fn default() -> Self {
        Pruning { beam_ratio: Some(1e12), max_paths: Some(256) }
    }
}

/// Best first; equal likelihoods go to the lexicographically smaller attribution.
pub(crate) fn rank(a: &Path, b: &Path) -> Ordering {
    b.log.total_cmp(&a.log).then_with(|| a.attr.cmp(&b.attr))
}

/// Keeps one path per hidden state (the best by [`rank`]), sorts and prunes.
/// `key` maps a path to its hidden state.
pub(crate) fn merge_and_prune<K, F>(paths: Vec<Path>, key: F, pruning: Pruning) -> Vec<Path>
where
    K: std::hash::Hash + Eq,
    F: Fn(&Path) -> K,
{
    let mut best: HashMap<K, usize> = HashMap::with_capacity(paths.len());
    let mut kept: Vec<Path> = Vec::with_capacity(paths.len());
    for p in paths {
        if p.log == f64::NEG_INFINITY {
            continue;
        }
        match best.entry(key(&p)) {
            std::collections::hash_map::Entry::Occupied(e) => {
                let slot = &mut kept[*e.get()];
                if rank(&p, slot) == Ordering::Less {
                    let mut p = p;
                    p.absorb(slot);
                    *slot = p;
                } else {
                    slot.absorb(&p);
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(kept.len());
                kept.push(p);
            }
        }
    }
    kept.sort_by(rank);
    if let (Some(ratio), Some(top)) = (pruning.beam_ratio, kept.first().map(|p| p.log)) {
        let floor = top - ratio.ln();
        kept.retain(|p| p.log >= floor);
    }
    if let Some(n) = pruning.max_paths {
        kept.truncate(n.max(1));
    }
    kept
}

/// Plain decoding problem: devices with known increments, all unheard at the
/// start, observed code numbers only.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeModel {
    pub q: u64,
    pub epsilon: f64,
    pub deltas: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    /// Device index per observation.
    pub attribution: Vec<usize>,
    pub score: PathScore,
}

/// Most likely attribution of `observations` to devices. `None` when no
/// attribution has nonzero probability.
pub fn decode(model: &DecodeModel, observations: &[Cn], pruning: Pruning) -> Result<Option<Decoded>> {
    if !(0.0..1.0).contains(&model.epsilon) {
        return Err(Error::Parameter(format!("erasure estimate {} must lie in [0, 1)", model.epsilon)));
    }
    let solvers = model
        .deltas
        .iter()
        .map(|&d| BetaSolver::new(d, model.q))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&bad) = observations.iter().find(|&&v| v >= model.q) {
        return Err(Error::Domain(format!("code number {bad} is outside Z_{}", model.q)));
    }
    let mut paths = vec![Path::empty(solvers.len())];
    for &v in observations {
        let mut next = Vec::with_capacity(paths.len() * solvers.len());
        for p in &paths {
            for (dev, solver) in solvers.iter().enumerate() {
                let step = match p.slots[dev] {
                    Some(s) => Step::Transition(solver.beta(s.cn, v)),
                    None => Step::Fresh,
                };
                next.push(extend(p, dev, step, Slot { cn: v, ts: 0, region: 0 }, model.epsilon, model.q));
            }
        }
        paths = merge_and_prune(next, |p| p.slots.clone(), pruning);
        if paths.is_empty() {
            return Ok(None);
        }
    }
    let best = paths.swap_remove(0);
    Ok(Some(Decoded { attribution: best.attr.iter().map(|&d| d as usize).collect(), score: best.score }))
}

pub(crate) fn extend(p: &Path, dev: usize, step: Step, slot: Slot, epsilon: f64, q: u64) -> Path {
    let mut slots = p.slots.clone();
    slots[dev] = Some(slot);
    let mut attr = Vec::with_capacity(p.attr.len() + 1);
    attr.extend_from_slice(&p.attr);
    attr.push(dev as u32);
    let mut gaps = Vec::with_capacity(p.gaps.len() + 1);
    gaps.extend_from_slice(&p.gaps);
    gaps.push(f64::NEG_INFINITY);
    let score = p.score.with(step);
    let log = score.log_value(epsilon, q);
    Path { slots, attr, gaps, score, log }
}

/// Log-likelihood contribution of one step, for callers that report it.
pub fn step_log(epsilon: f64, q: u64, beta: Option<u64>) -> f64 {
    match beta {
        Some(b) => log_erasure_probability(epsilon, b),
        None => -(q as f64).ln(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(q: u64, eps: f64, deltas: &[u64]) -> DecodeModel {
        DecodeModel { q, epsilon: eps, deltas: deltas.to_vec() }
    }

    #[test]
    fn collision_example_decodes_like_the_walkthrough() {
        let m = model(20, 0.1, &[1, 19]);
        let obs = [1, 2, 10, 9, 3, 7, 5, 3, 4];
        let d = decode(&m, &obs, Pruning::NONE).unwrap().unwrap();
        assert_eq!(d.attribution, vec![0, 0, 1, 1, 0, 1, 1, 1, 0]);
        // 1 and 10 are first sightings; 7, 5 and the second 3 each skip one CN
        assert_eq!(d.score, PathScore { delivered: 7, erased: 3, fresh: 2 });
    }

    #[test]
    fn two_packets_one_erasure() {
        let m = model(110, 0.05, &[1, 21, 91]);
        let d = decode(&m, &[77, 9], Pruning::NONE).unwrap().unwrap();
        assert_eq!(d.attribution, vec![1, 1]);
        assert_eq!(d.score, PathScore { delivered: 1, erased: 1, fresh: 1 });
    }

    #[test]
    fn lossless_channel_rules_out_gaps() {
        let m = model(20, 0.0, &[1]);
        assert!(decode(&m, &[3, 5], Pruning::NONE).unwrap().is_none());
        let d = decode(&m, &[3, 4], Pruning::NONE).unwrap().unwrap();
        assert_eq!(d.attribution, vec![0, 0]);
    }

    #[test]
    fn score_log_value() {
        let s = PathScore { delivered: 2, erased: 3, fresh: 1 };
        let expect = 2.0 * 0.9f64.ln() + 3.0 * 0.1f64.ln() - 20f64.ln();
        assert!((s.log_value(0.1, 20) - expect).abs() < 1e-12);
        assert_eq!(PathScore { erased: 1, ..s }.log_value(0.0, 20), f64::NEG_INFINITY);
        assert!((step_log(0.1, 20, Some(2)) - (0.9f64.ln() + 0.1f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn beam_keeps_best() {
        let mk = |log: f64, a: u32| Path {
            slots: vec![Some(Slot { cn: a as u64, ts: 0, region: 0 })],
            attr: vec![a],
            gaps: vec![f64::NEG_INFINITY],
            score: PathScore::default(),
            log,
        };
        let paths = vec![mk(-1.0, 0), mk(-30.0, 1), mk(-1.0, 2), mk(-2.0, 3)];
        let kept = merge_and_prune(paths, |p| p.slots.clone(), Pruning { beam_ratio: Some(1e3), max_paths: Some(2) });
        assert_eq!(kept.iter().map(|p| p.attr[0]).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn merging_remembers_rivals() {
        let state = vec![Some(Slot { cn: 4, ts: 0, region: 0 })];
        let mk = |attr: Vec<u32>, log: f64| Path {
            slots: state.clone(),
            gaps: vec![f64::NEG_INFINITY; attr.len()],
            attr,
            score: PathScore::default(),
            log,
        };
        let kept = merge_and_prune(vec![mk(vec![1, 0], -5.0), mk(vec![0, 0], -2.0)], |p| p.slots.clone(), Pruning::NONE);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].attr, vec![0, 0]);
        assert_eq!(kept[0].gaps[0], -3.0);
        assert_eq!(kept[0].gaps[1], f64::NEG_INFINITY);
        assert_eq!(kept[0].rival_log(0, 0), -5.0);
        assert_eq!(kept[0].rival_log(1, 1), -2.0);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(decode(&model(20, 1.0, &[1]), &[1], Pruning::NONE).is_err());
        assert!(decode(&model(20, 0.1, &[2]), &[1], Pruning::NONE).is_err());
        assert!(decode(&model(20, 0.1, &[1]), &[20], Pruning::NONE).is_err());
    }
}
