//! (q, l)-proper sets: verification, classification and exhaustive search.
//!
//! A set of cyclic permutations is `(q, l)`-proper when any observed pair
//! `(u, v)` with `v = sigma^beta[u]` and `1 <= beta <= l` pins down `sigma`.
//! Equivalently, for every `u` the `l`-follower sets of distinct members are
//! disjoint, which is what [`verify_proper`] checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::ConstructionParams;
use crate::error::{Error, Result};
use crate::perm::{check_gap, Cn, Permutation};

/// A concrete violation: `members[sigma_index]^beta1[u] = v = members[pi_index]^beta2[u]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImproperWitness {
    pub u: Cn,
    pub sigma_index: usize,
    pub pi_index: usize,
    pub beta1: u64,
    pub beta2: u64,
    pub v: Cn,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    #[default]
    Unverified,
    Proper,
    Improper(ImproperWitness),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quality {
    Ordinary,
    Quasiperfect,
    Perfect,
}

/// Members of a set: either listed one by one, or the arithmetic
/// progression rule for a `(p, l)` construction, which stays O(1) in size
/// for alphabets far too large to enumerate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Members {
    Listed(Vec<Permutation>),
    Progression(ConstructionParams),
}

/// Largest member count [`Members::to_vec`] will materialize.
pub const MAX_LISTED: u64 = 1 << 24;

impl Members {
    pub fn len(&self) -> u64 {
        match self {
            Members::Listed(v) => v.len() as u64,
            Members::Progression(p) => p.m(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: u64) -> Option<Permutation> {
        match self {
            Members::Listed(v) => v.get(index as usize).cloned(),
            Members::Progression(p) => {
                let delta = p.increment(index).ok()?;
                Permutation::increment(p.q(), delta).ok()
            }
        }
    }

    pub fn to_vec(&self) -> Result<Vec<Permutation>> {
        match self {
            Members::Listed(v) => Ok(v.clone()),
            Members::Progression(p) => {
                if p.m() > MAX_LISTED {
                    return Err(Error::Domain(format!(
                        "{} members are too many to enumerate (limit {MAX_LISTED})",
                        p.m()
                    )));
                }
                p.increments().map(|d| Permutation::increment(p.q(), d)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProperSet {
    pub q: u64,
    pub l: u64,
    pub members: Members,
    #[serde(default)]
    pub classification: Classification,
}

impl ProperSet {
    /// An unverified set. Checks only that every member lives on `Z_q`.
    pub fn new(q: u64, l: u64, members: Vec<Permutation>) -> Result<Self> {
        check_gap(q, l)?;
        for (i, m) in members.iter().enumerate() {
            if m.q() != q {
                return Err(Error::Validation(format!(
                    "member {i} acts on Z_{} but the set is over Z_{q}",
                    m.q()
                )));
            }
        }
        Ok(ProperSet { q, l, members: Members::Listed(members), classification: Classification::Unverified })
    }

    pub fn len(&self) -> u64 {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Re-runs the verifier and records the outcome.
    pub fn verified(mut self) -> Result<Self> {
        if let Members::Progression(p) = &self.members {
            if p.q() != self.q || p.l != self.l {
                return Err(Error::Validation("progression parameters disagree with q and l".into()));
            }
        }
        self.classification = verify_proper(&self.members.to_vec()?, self.q, self.l)?;
        Ok(self)
    }

    pub fn is_proper(&self) -> bool {
        self.classification == Classification::Proper
    }

    /// Increments of the members, if every member is in increment form.
    pub fn increments(&self) -> Option<Vec<u64>> {
        match &self.members {
            Members::Listed(v) => v.iter().map(Permutation::delta).collect(),
            Members::Progression(p) if p.m() <= MAX_LISTED => Some(p.increments().collect()),
            Members::Progression(_) => None,
        }
    }
}

/// `floor((q - 1) / l)`, the largest possible size of a `(q, l)`-proper set.
pub fn upper_bound(q: u64, l: u64) -> Result<u64> {
    check_gap(q, l)?;
    Ok((q - 1) / l)
}

/// Decides `(q, l)`-properness. On failure the returned witness is the
/// lexicographically smallest by `(u, sigma_index, pi_index, beta1, beta2)`.
pub fn verify_proper(candidates: &[Permutation], q: u64, l: u64) -> Result<Classification> {
    check_gap(q, l)?;
    for (i, m) in candidates.iter().enumerate() {
        if m.q() != q {
            return Err(Error::Validation(format!("member {i} acts on Z_{}, expected Z_{q}", m.q())));
        }
        if !m.is_cyclic() {
            return Err(Error::Validation(format!("member {i} is not a cyclic permutation of Z_{q}")));
        }
    }
    if candidates.len() < 2 {
        return Ok(Classification::Proper);
    }
    // Increment permutations commute with translation: the follower sets of u
    // are those of 0 shifted by u, so u = 0 decides every u, and any collision
    // found there is also the smallest one.
    let witness = if candidates.iter().all(|m| m.delta().is_some()) {
        witness_at(candidates, 0, l)
    } else {
        (0..q).into_par_iter().find_map_first(|u| witness_at(candidates, u, l))
    };
    Ok(match witness {
        Some(w) => Classification::Improper(w),
        None => Classification::Proper,
    })
}

/// Smallest collision among the follower sets of `u`, if any.
fn witness_at(members: &[Permutation], u: Cn, l: u64) -> Option<ImproperWitness> {
    let mut hits: Vec<(Cn, usize, u64)> = Vec::with_capacity(members.len() * l as usize);
    for (i, m) in members.iter().enumerate() {
        let mut v = u;
        for beta in 1..=l {
            v = m.step(v);
            hits.push((v, i, beta));
        }
    }
    hits.sort_unstable();
    let mut best: Option<ImproperWitness> = None;
    for group in hits.chunk_by(|a, b| a.0 == b.0) {
        let (v, i, beta1) = group[0];
        if let Some(&(_, j, beta2)) = group.iter().find(|h| h.1 != i) {
            let w = ImproperWitness { u, sigma_index: i, pi_index: j, beta1, beta2, v };
            if best.is_none_or(|b| w < b) {
                best = Some(w);
            }
        }
    }
    best
}

pub fn classify(set: &ProperSet) -> Result<Quality> {
    match set.classification {
        Classification::Proper => {}
        Classification::Unverified => {
            return Err(Error::State("set has not been verified".into()));
        }
        Classification::Improper(_) => {
            return Err(Error::State("set is not proper".into()));
        }
    }
    let bound = upper_bound(set.q, set.l)?;
    let m = set.members.len();
    Ok(if m < bound {
        Quality::Ordinary
    } else if (set.q - 1).is_multiple_of(set.l) {
        Quality::Perfect
    } else {
        Quality::Quasiperfect
    })
}

/// For each `u`, the sorted union of all members' follower sets.
/// A third party can check that every row has exactly `m * l` entries.
pub fn certificate(set: &ProperSet) -> Result<Vec<Vec<Cn>>> {
    check_gap(set.q, set.l)?;
    let members = set.members.to_vec()?;
    (0..set.q)
        .map(|u| {
            let mut row = Vec::with_capacity((members.len() as u64 * set.l) as usize);
            for m in &members {
                row.extend(m.follower_set(u, set.l)?.members);
            }
            row.sort_unstable();
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Largest alphabet the search accepts without `allow_large`.
    pub max_q: u64,
    pub allow_large: bool,
    /// Stop as soon as a proper set of this size is found.
    pub size_limit: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { max_q: 10, allow_large: false, size_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub max_m: usize,
    pub set: ProperSet,
    pub certificate: Vec<Vec<Cn>>,
    /// Search-tree nodes visited.
    pub nodes: u64,
}

/// Branch-and-bound search for the largest `(q, l)`-proper set.
///
/// Relabeling the alphabet maps proper sets to proper sets and every cyclic
/// permutation is a relabeling of `u -> u + 1`, so the incrementing cycle is
/// fixed as the first member. Remaining members are taken in increasing
/// enumeration order. The result is deterministic.
pub fn exhaustive_max_search(q: u64, l: u64, opts: SearchOptions) -> Result<SearchResult> {
    check_gap(q, l)?;
    if q > opts.max_q && !opts.allow_large {
        return Err(Error::Domain(format!(
            "q = {q} exceeds the exhaustive-search guard {}; pass an explicit override",
            opts.max_q
        )));
    }
    if q > 64 {
        return Err(Error::Domain("exhaustive search supports q <= 64 only".into()));
    }
    let bound = upper_bound(q, l)? as usize;
    let target = opts.size_limit.map_or(bound, |s| s.min(bound));

    let cycles = enumerate_cycles(q as usize);
    let masks: Vec<Vec<u64>> = cycles.iter().map(|c| follower_masks(c, l)).collect();
    // enumeration starts with the incrementing cycle (0, 1, .., q-1)
    let first = 0usize;
    let union = masks[first].clone();
    let candidates: Vec<usize> = (1..cycles.len()).filter(|&c| disjoint(&masks[c], &union)).collect();

    let mut search = Search { masks: &masks, best: vec![first], target, nodes: 1 };
    let mut chosen = vec![first];
    if target > 1 {
        search.dfs(&mut chosen, &union, &candidates);
    }
    let members: Vec<Permutation> = search
        .best
        .iter()
        .map(|&c| Permutation::from_cycle(&cycles[c]))
        .collect::<Result<_>>()?;
    let nodes = search.nodes;
    let max_m = members.len();
    let set = ProperSet::new(q, l, members)?.verified()?;
    debug_assert!(set.is_proper());
    let certificate = certificate(&set)?;
    Ok(SearchResult { max_m, set, certificate, nodes })
}

struct Search<'a> {
    masks: &'a [Vec<u64>],
    best: Vec<usize>,
    target: usize,
    nodes: u64,
}

impl Search<'_> {
    fn dfs(&mut self, chosen: &mut Vec<usize>, union: &[u64], candidates: &[usize]) {
        for (pos, &c) in candidates.iter().enumerate() {
            if self.best.len() >= self.target {
                return;
            }
            // even taking every remaining candidate cannot beat the incumbent
            if chosen.len() + candidates.len() - pos <= self.best.len() {
                return;
            }
            self.nodes += 1;
            let next_union: Vec<u64> = union.iter().zip(&self.masks[c]).map(|(a, b)| a | b).collect();
            let rest: Vec<usize> = candidates[pos + 1..]
                .iter()
                .copied()
                .filter(|&d| disjoint(&self.masks[d], &next_union))
                .collect();
            chosen.push(c);
            if chosen.len() > self.best.len() {
                self.best = chosen.clone();
            }
            if chosen.len() + rest.len() > self.best.len() {
                self.dfs(chosen, &next_union, &rest);
            }
            chosen.pop();
        }
    }
}

fn disjoint(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & y == 0)
}

/// Bitmask of the `l`-follower set of every `u` for the cycle given in
/// cycle notation.
fn follower_masks(cycle: &[Cn], l: u64) -> Vec<u64> {
    let q = cycle.len();
    let mut masks = vec![0u64; q];
    for (pos, &u) in cycle.iter().enumerate() {
        let mut m = 0u64;
        for beta in 1..=l as usize {
            m |= 1 << cycle[(pos + beta) % q];
        }
        masks[u as usize] = m;
    }
    masks
}

/// All cyclic permutations of `Z_q` in cycle notation starting at 0, in
/// lexicographic order of the cycle. The first is `(0, 1, .., q-1)`.
fn enumerate_cycles(q: usize) -> Vec<Vec<Cn>> {
    fn rec(prefix: &mut Vec<Cn>, used: &mut [bool], out: &mut Vec<Vec<Cn>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 1..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v as Cn);
                rec(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    let mut used = vec![false; q];
    used[0] = true;
    rec(&mut vec![0], &mut used, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};

    fn inc_dec(q: u64) -> Vec<Permutation> {
        vec![Permutation::increment(q, 1).unwrap(), Permutation::increment(q, q - 1).unwrap()]
    }

    fn example3() -> Vec<Permutation> {
        vec![
            Permutation::from_cycle(&[0, 1, 2, 3, 4, 5, 6, 7]).unwrap(),
            Permutation::from_cycle(&[0, 3, 7, 6, 2, 5, 1, 4]).unwrap(),
            Permutation::from_cycle(&[0, 6, 4, 1, 7, 5, 3, 2]).unwrap(),
        ]
    }

    /// Direct check of the definition: count, for every (u, v, beta), how many
    /// members map u to v in exactly beta steps.
    fn definition_oracle(members: &[Permutation], q: u64, l: u64) -> Option<ImproperWitness> {
        let mut found = Vec::new();
        for u in 0..q {
            for (i, s) in members.iter().enumerate() {
                for (j, p) in members.iter().enumerate().skip(i + 1) {
                    for b1 in 1..=l {
                        for b2 in 1..=l {
                            let v1 = s.apply_power(u, b1).unwrap();
                            if v1 == p.apply_power(u, b2).unwrap() {
                                found.push(ImproperWitness { u, sigma_index: i, pi_index: j, beta1: b1, beta2: b2, v: v1 });
                            }
                        }
                    }
                }
            }
        }
        found.into_iter().min()
    }

    #[test]
    fn verify_examples() {
        assert_eq!(verify_proper(&inc_dec(7), 7, 3).unwrap(), Classification::Proper);
        assert_eq!(verify_proper(&example3(), 8, 2).unwrap(), Classification::Proper);
        let verdict = verify_proper(&inc_dec(7), 7, 4).unwrap();
        let expected = definition_oracle(&inc_dec(7), 7, 4).expect("oracle finds a collision");
        assert_eq!(verdict, Classification::Improper(expected));
        // u = 0: 0 + 4 = 4 = 0 - 3 (mod 7)
        assert_eq!(expected, ImproperWitness { u: 0, sigma_index: 0, pi_index: 1, beta1: 3, beta2: 4, v: 3 });
    }

    #[test]
    fn verify_rejects_bad_inputs() {
        let members = vec![Permutation::increment(8, 1).unwrap(), Permutation::increment(8, 2).unwrap()];
        match verify_proper(&members, 8, 2) {
            Err(Error::Validation(msg)) => assert!(msg.contains("member 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(verify_proper(&inc_dec(7), 7, 7), Err(Error::Domain(_))));
        assert!(matches!(verify_proper(&inc_dec(7), 7, 0), Err(Error::Domain(_))));
        assert!(matches!(verify_proper(&inc_dec(7), 8, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn bound_examples() {
        assert_eq!(upper_bound(8, 2).unwrap(), 3);
        assert_eq!(upper_bound(7, 1).unwrap(), 6);
        assert_eq!(upper_bound(110, 10).unwrap(), 10);
        assert!(upper_bound(5, 5).is_err());
    }

    #[test]
    fn classification_examples() {
        let ex3 = ProperSet::new(8, 2, example3()).unwrap().verified().unwrap();
        assert_eq!(classify(&ex3).unwrap(), Quality::Quasiperfect);
        let incdec = ProperSet::new(7, 3, inc_dec(7)).unwrap().verified().unwrap();
        assert_eq!(classify(&incdec).unwrap(), Quality::Perfect);
        let single = ProperSet::new(7, 3, vec![Permutation::increment(7, 1).unwrap()]).unwrap().verified().unwrap();
        assert_eq!(classify(&single).unwrap(), Quality::Ordinary);
        let unverified = ProperSet::new(7, 3, inc_dec(7)).unwrap();
        assert!(matches!(classify(&unverified), Err(Error::State(_))));
    }

    #[test]
    fn certificate_rows_have_m_times_l_entries() {
        let set = ProperSet::new(8, 2, example3()).unwrap().verified().unwrap();
        let cert = certificate(&set).unwrap();
        assert_eq!(cert.len(), 8);
        for (u, row) in cert.iter().enumerate() {
            assert_eq!(row.len(), 6);
            assert!(row.windows(2).all(|w| w[0] < w[1]));
            assert!(!row.contains(&(u as u64)));
        }
    }

    #[test]
    fn json_schema() {
        let set = ProperSet::new(7, 3, inc_dec(7)).unwrap().verified().unwrap();
        let json = serde_json::to_value(&set).unwrap();
        assert_eq!(json["classification"], "proper");
        assert_eq!(json["members"][1]["delta"], 6);
        let back: ProperSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, set);
        let bad = ProperSet::new(7, 4, inc_dec(7)).unwrap().verified().unwrap();
        let json = serde_json::to_value(&bad).unwrap();
        assert_eq!(json["classification"]["improper"]["u"], 0);
    }

    fn random_cyclic(q: usize, rng: &mut impl Rng) -> Permutation {
        let mut order: Vec<Cn> = (0..q as Cn).collect();
        order.shuffle(rng);
        Permutation::from_cycle(&order).unwrap()
    }

    #[test]
    fn follower_disjointness_agrees_with_definition() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3000 {
            let q = rng.random_range(2..=10usize);
            let l = rng.random_range(1..q as u64);
            let m = rng.random_range(1..=4usize);
            let members: Vec<_> = (0..m).map(|_| random_cyclic(q, &mut rng)).collect();
            let verdict = verify_proper(&members, q as u64, l).unwrap();
            let oracle = definition_oracle(&members, q as u64, l);
            match (verdict, oracle) {
                (Classification::Proper, None) => {
                    assert!(members.len() as u64 <= upper_bound(q as u64, l).unwrap());
                    let set = ProperSet::new(q as u64, l, members).unwrap();
                    for row in certificate(&set).unwrap() {
                        assert_eq!(row.len() as u64, m as u64 * l);
                        assert!(row.windows(2).all(|w| w[0] < w[1]));
                    }
                }
                (Classification::Improper(w), Some(o)) => {
                    assert_eq!(w, o);
                    let a = members[w.sigma_index].apply_power(w.u, w.beta1).unwrap();
                    let b = members[w.pi_index].apply_power(w.u, w.beta2).unwrap();
                    assert_eq!(a, b);
                    assert_eq!(a, w.v);
                }
                (v, o) => panic!("verifier {v:?} disagrees with oracle {o:?}"),
            }
        }
    }

    #[test]
    fn increment_shortcut_agrees_with_all_u_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let q = rng.random_range(3..=40u64);
            let l = rng.random_range(1..q);
            let members: Vec<_> = (0..rng.random_range(2..=5))
                .map(|_| loop {
                    let d = rng.random_range(1..q);
                    if crate::arith::gcd(d, q) == 1 {
                        break Permutation::increment(q, d).unwrap();
                    }
                })
                .collect();
            let fast = verify_proper(&members, q, l).unwrap();
            let tables: Vec<_> = members.iter().map(|m| Permutation::from_table(m.to_table()).unwrap()).collect();
            let slow = verify_proper(&tables, q, l).unwrap();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn search_small_cases() {
        let r = exhaustive_max_search(8, 2, SearchOptions::default()).unwrap();
        assert_eq!(r.max_m, 3);
        assert!(r.set.is_proper());
        assert_eq!(classify(&r.set).unwrap(), Quality::Quasiperfect);
        for q in [3u64, 5, 7] {
            assert_eq!(exhaustive_max_search(q, 1, SearchOptions::default()).unwrap().max_m as u64, q - 1);
        }
        for q in [4u64, 6] {
            assert!((exhaustive_max_search(q, 1, SearchOptions::default()).unwrap().max_m as u64) < q - 1);
        }
    }

    #[test]
    fn search_guard() {
        assert!(matches!(exhaustive_max_search(11, 2, SearchOptions::default()), Err(Error::Domain(_))));
        let opts = SearchOptions { max_q: 10, allow_large: true, size_limit: Some(1) };
        assert_eq!(exhaustive_max_search(11, 2, opts).unwrap().max_m, 1);
    }

    #[test]
    fn search_is_deterministic() {
        let a = exhaustive_max_search(7, 2, SearchOptions::default()).unwrap();
        let b = exhaustive_max_search(7, 2, SearchOptions::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.max_m as u64 <= upper_bound(7, 2).unwrap());
    }

    /// Brute force over all subsets of cyclic permutations for tiny q, using
    /// pairwise compatibility from the definition oracle (properness is a
    /// pairwise condition).
    fn subset_max(q: usize, l: u64) -> usize {
        let cycles: Vec<Permutation> = enumerate_cycles(q).iter().map(|c| Permutation::from_cycle(c).unwrap()).collect();
        let n = cycles.len();
        assert!(n <= 24);
        let mut compat = vec![0u32; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && definition_oracle(&[cycles[i].clone(), cycles[j].clone()], q as u64, l).is_none() {
                    compat[i] |= 1 << j;
                }
            }
        }
        let mut best = 0;
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if size <= best {
                continue;
            }
            let ok = (0..n).filter(|i| mask >> i & 1 == 1).all(|i| (mask & !(1 << i)) & !compat[i] == 0);
            if ok {
                best = size;
            }
        }
        best
    }

    #[test]
    fn search_matches_subset_enumeration() {
        for q in 3..=5usize {
            for l in 1..q as u64 {
                let r = exhaustive_max_search(q as u64, l, SearchOptions::default()).unwrap();
                assert_eq!(r.max_m, subset_max(q, l), "q={q} l={l}");
            }
        }
    }

    #[test]
    fn one_proper_iff_edge_disjoint_hamiltonian_cycles() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let q = rng.random_range(3..=9usize);
            let members: Vec<_> = (0..rng.random_range(2..=4)).map(|_| random_cyclic(q, &mut rng)).collect();
            let edges: Vec<std::collections::HashSet<(Cn, Cn)>> = members
                .iter()
                .map(|m| (0..q as Cn).map(|u| (u, m.apply(u).unwrap())).collect())
                .collect();
            let mut edge_disjoint = true;
            for i in 0..edges.len() {
                for j in i + 1..edges.len() {
                    if !edges[i].is_disjoint(&edges[j]) {
                        edge_disjoint = false;
                    }
                }
            }
            let proper = verify_proper(&members, q as u64, 1).unwrap() == Classification::Proper;
            assert_eq!(proper, edge_disjoint);
        }
    }
}
