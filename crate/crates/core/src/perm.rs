//! Cyclic permutations of the alphabet `Z_q = {0, .., q-1}`.
//!
//! A transmitter walks its permutation one step per packet, so the only
//! operations needed are single and repeated application and the set of the
//! next `l` code numbers (the follower set). Two representations share one
//! interface: an increment `u -> (u + delta) mod q` that needs O(1) storage
//! at any alphabet size, and an explicit image table for small alphabets.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arith::{add_mod, gcd, mul_mod};
use crate::error::{Error, Result};

/// A code number, an element of `Z_q`.
pub type Cn = u64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Permutation {
    /// `u -> (u + delta) mod q`, with `delta < q`.
    Increment { q: u64, delta: u64 },
    /// `image[u]` is the successor of `u`.
    Table(Vec<Cn>),
}

/// The `l` code numbers following `origin`, in emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FollowerSet {
    pub origin: Cn,
    pub members: Vec<Cn>,
}

impl FollowerSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: Cn) -> bool {
        self.members.contains(&v)
    }
}

impl Permutation {
    pub fn increment(q: u64, delta: u64) -> Result<Self> {
        if q == 0 {
            return Err(Error::Domain("alphabet size q must be at least 1".into()));
        }
        Ok(Permutation::Increment { q, delta: delta % q })
    }

    /// Builds an explicit permutation from its image table, rejecting
    /// anything that is not a bijection on `0..table.len()`.
    pub fn from_table(table: Vec<Cn>) -> Result<Self> {
        let q = table.len();
        if q == 0 {
            return Err(Error::Domain("alphabet size q must be at least 1".into()));
        }
        let mut seen = vec![false; q];
        for (u, &v) in table.iter().enumerate() {
            let idx = usize::try_from(v).ok().filter(|&i| i < q).ok_or_else(|| {
                Error::Validation(format!("image {v} of {u} is outside Z_{q}"))
            })?;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::Validation(format!("{v} appears twice in the image table")));
            }
        }
        Ok(Permutation::Table(table))
    }

    /// Builds a permutation from disjoint cycles. A single cycle listing every
    /// element of `Z_q` gives a cyclic permutation; e.g. `[[0, 3, 7, 6, 2, 5, 1, 4]]`
    /// maps 0 to 3, 3 to 7, .., 4 back to 0.
    pub fn from_cycles(cycles: &[Vec<Cn>]) -> Result<Self> {
        let q: usize = cycles.iter().map(Vec::len).sum();
        if q == 0 {
            return Err(Error::Domain("alphabet size q must be at least 1".into()));
        }
        let mut table = vec![Cn::MAX; q];
        for cycle in cycles {
            for (k, &u) in cycle.iter().enumerate() {
                let idx = usize::try_from(u).ok().filter(|&i| i < q).ok_or_else(|| {
                    Error::Validation(format!("cycle element {u} is outside Z_{q}"))
                })?;
                if table[idx] != Cn::MAX {
                    return Err(Error::Validation(format!("{u} appears twice in cycle notation")));
                }
                table[idx] = cycle[(k + 1) % cycle.len()];
            }
        }
        Permutation::from_table(table)
    }

    pub fn from_cycle(cycle: &[Cn]) -> Result<Self> {
        Permutation::from_cycles(&[cycle.to_vec()])
    }

    pub fn q(&self) -> u64 {
        match self {
            Permutation::Increment { q, .. } => *q,
            Permutation::Table(t) => t.len() as u64,
        }
    }

    pub fn delta(&self) -> Option<u64> {
        match self {
            Permutation::Increment { delta, .. } => Some(*delta),
            Permutation::Table(_) => None,
        }
    }

    fn check(&self, u: Cn) -> Result<()> {
        if u >= self.q() {
            return Err(Error::Domain(format!("code number {u} is outside Z_{}", self.q())));
        }
        Ok(())
    }

    pub fn apply(&self, u: Cn) -> Result<Cn> {
        self.check(u)?;
        Ok(self.step(u))
    }

    #[inline]
    pub(crate) fn step(&self, u: Cn) -> Cn {
        match self {
            Permutation::Increment { q, delta } => add_mod(u, *delta, *q),
            Permutation::Table(t) => t[u as usize],
        }
    }

    /// `sigma^beta[u]` for `beta >= 1`.
    pub fn apply_power(&self, u: Cn, beta: u64) -> Result<Cn> {
        if beta == 0 {
            return Err(Error::Domain("beta must be at least 1".into()));
        }
        self.apply_power_allow_identity(u, beta)
    }

    /// Like [`Permutation::apply_power`] but treats `beta = 0` as the identity.
    pub fn apply_power_allow_identity(&self, u: Cn, beta: u64) -> Result<Cn> {
        self.check(u)?;
        Ok(self.power_unchecked(u, beta))
    }

    #[inline]
    pub(crate) fn power_unchecked(&self, u: Cn, beta: u64) -> Cn {
        match self {
            Permutation::Increment { q, delta } => add_mod(u, mul_mod(beta % q, *delta, *q), *q),
            Permutation::Table(t) => {
                let mut v = u;
                for _ in 0..beta {
                    v = t[v as usize];
                }
                v
            }
        }
    }

    /// The `l`-follower set `[sigma[u], .., sigma^l[u]]`; requires `1 <= l < q`.
    pub fn follower_set(&self, u: Cn, l: u64) -> Result<FollowerSet> {
        self.check(u)?;
        check_gap(self.q(), l)?;
        let mut members = Vec::with_capacity(l as usize);
        let mut v = u;
        for _ in 0..l {
            v = self.step(v);
            members.push(v);
        }
        Ok(FollowerSet { origin: u, members })
    }

    /// True iff the permutation is a single cycle with orbit `Z_q`.
    pub fn is_cyclic(&self) -> bool {
        match self {
            Permutation::Increment { q, delta } => *q == 1 || gcd(*delta, *q) == 1,
            Permutation::Table(_) => self.orbit_len_from_zero() == self.q(),
        }
    }

    /// Number of steps until the walk from 0 first returns to 0.
    pub fn orbit_len_from_zero(&self) -> u64 {
        let mut v = self.step(0);
        let mut n = 1;
        while v != 0 {
            v = self.step(v);
            n += 1;
        }
        n
    }

    /// Materialize the image table. Only sensible for small `q`.
    pub fn to_table(&self) -> Vec<Cn> {
        match self {
            Permutation::Table(t) => t.clone(),
            Permutation::Increment { q, .. } => (0..*q).map(|u| self.step(u)).collect(),
        }
    }

    /// Disjoint cycles, each starting at its smallest element, ordered by
    /// that element.
    pub fn cycles(&self) -> Vec<Vec<Cn>> {
        let q = self.q() as usize;
        let mut seen = vec![false; q];
        let mut out = Vec::new();
        for start in 0..q {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut v = start as Cn;
            while !seen[v as usize] {
                seen[v as usize] = true;
                cycle.push(v);
                v = self.step(v);
            }
            out.push(cycle);
        }
        out
    }
}

pub(crate) fn check_gap(q: u64, l: u64) -> Result<()> {
    if l == 0 {
        return Err(Error::Domain("l must be at least 1".into()));
    }
    if l >= q {
        return Err(Error::Domain(format!("l = {l} must be smaller than q = {q}")));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PermutationRepr {
    Increment { q: u64, delta: u64 },
    Cycle(Vec<Cn>),
    Cycles(Vec<Vec<Cn>>),
}

impl Serialize for Permutation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            Permutation::Increment { q, delta } => PermutationRepr::Increment { q: *q, delta: *delta },
            Permutation::Table(_) => {
                let mut cycles = self.cycles();
                if cycles.len() == 1 {
                    PermutationRepr::Cycle(cycles.pop().unwrap())
                } else {
                    PermutationRepr::Cycles(cycles)
                }
            }
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PermutationRepr::deserialize(d)?;
        match repr {
            PermutationRepr::Increment { q, delta } => {
                if delta >= q {
                    return Err(serde::de::Error::custom(format!("delta {delta} must be below q {q}")));
                }
                Permutation::increment(q, delta)
            }
            PermutationRepr::Cycle(c) => Permutation::from_cycle(&c),
            PermutationRepr::Cycles(cs) => Permutation::from_cycles(&cs),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn example3_pi() -> Permutation {
        Permutation::from_cycle(&[0, 6, 4, 1, 7, 5, 3, 2]).unwrap()
    }

    fn example3_rho() -> Permutation {
        Permutation::from_cycle(&[0, 3, 7, 6, 2, 5, 1, 4]).unwrap()
    }

    #[test]
    fn apply_examples() {
        assert_eq!(Permutation::increment(7, 1).unwrap().apply(5).unwrap(), 6);
        assert_eq!(Permutation::increment(110, 21).unwrap().apply(77).unwrap(), 98);
        assert_eq!(example3_pi().apply(4).unwrap(), 1);
    }

    #[test]
    fn apply_out_of_range() {
        assert!(matches!(Permutation::increment(7, 1).unwrap().apply(7), Err(Error::Domain(_))));
        assert!(matches!(example3_pi().apply(8), Err(Error::Domain(_))));
    }

    #[test]
    fn apply_power_examples() {
        let w21 = Permutation::increment(110, 21).unwrap();
        assert_eq!(w21.apply_power(77, 2).unwrap(), 9);
        assert_eq!(w21.apply_power(77, 110).unwrap(), 77);
        assert_eq!(example3_pi().apply_power(4, 2).unwrap(), 7);
        assert_eq!(example3_pi().apply_power(4, 8).unwrap(), 4);
        assert!(matches!(w21.apply_power(77, 0), Err(Error::Domain(_))));
        assert_eq!(w21.apply_power_allow_identity(77, 0).unwrap(), 77);
    }

    #[test]
    fn follower_set_examples() {
        // fragment .. 7 -> 6 -> 9 -> 4 -> 5 -> 2 .. closed into a cycle on Z_10
        let frag = Permutation::from_cycle(&[7, 6, 9, 4, 5, 2, 0, 1, 3, 8]).unwrap();
        assert_eq!(frag.follower_set(6, 3).unwrap().members, vec![9, 4, 5]);
        assert_eq!(Permutation::increment(7, 1).unwrap().follower_set(0, 2).unwrap().members, vec![1, 2]);
        assert_eq!(example3_rho().follower_set(4, 2).unwrap().members, vec![0, 3]);
    }

    #[test]
    fn follower_set_rejects_large_gap() {
        let inc = Permutation::increment(7, 1).unwrap();
        assert!(matches!(inc.follower_set(0, 7), Err(Error::Domain(_))));
        assert!(matches!(inc.follower_set(0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn cyclicity() {
        let w11 = Permutation::increment(110, 11).unwrap();
        assert!(!w11.is_cyclic());
        assert_eq!(Permutation::from_table(w11.to_table()).unwrap().orbit_len_from_zero(), 10);
        assert!(!Permutation::from_table(w11.to_table()).unwrap().is_cyclic());
        assert!(Permutation::increment(110, 21).unwrap().is_cyclic());
        assert!(Permutation::from_table(vec![0]).unwrap().is_cyclic());
        assert!(Permutation::increment(1, 0).unwrap().is_cyclic());
    }

    #[test]
    fn table_validation() {
        assert!(matches!(Permutation::from_table(vec![0, 0]), Err(Error::Validation(_))));
        assert!(matches!(Permutation::from_table(vec![1, 2]), Err(Error::Validation(_))));
        assert!(matches!(Permutation::from_cycle(&[0, 1, 1]), Err(Error::Validation(_))));
    }

    #[test]
    fn json_forms() {
        let rho = example3_rho();
        assert_eq!(serde_json::to_string(&rho).unwrap(), "[0,3,7,6,2,5,1,4]");
        let back: Permutation = serde_json::from_str("[0,3,7,6,2,5,1,4]").unwrap();
        assert_eq!(back, rho);
        let inc = Permutation::increment(110, 21).unwrap();
        assert_eq!(serde_json::to_string(&inc).unwrap(), r#"{"q":110,"delta":21}"#);
        let split: Permutation = serde_json::from_str("[[0,1],[2,3]]").unwrap();
        assert!(!split.is_cyclic());
        assert_eq!(serde_json::to_string(&split).unwrap(), "[[0,1],[2,3]]");
        assert!(serde_json::from_str::<Permutation>(r#"{"q":5,"delta":5}"#).is_err());
    }

    fn random_cycle(q: usize, seed: u64) -> Permutation {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<Cn> = (0..q as Cn).collect();
        order.shuffle(&mut rng);
        Permutation::from_cycle(&order).unwrap()
    }

    proptest! {
        #[test]
        fn bijective_images(q in 1usize..60, seed: u64) {
            let p = random_cycle(q, seed);
            let mut images = p.to_table();
            images.sort_unstable();
            prop_assert_eq!(images, (0..q as Cn).collect::<Vec<_>>());
            prop_assert!(p.is_cyclic());
        }

        #[test]
        fn power_composes(q in 2u64..500, delta in 0u64..500, u in 0u64..500, a in 1u64..600, b in 1u64..600) {
            let p = Permutation::increment(q, delta).unwrap();
            let u = u % q;
            let lhs = p.apply_power(u, a + b).unwrap();
            let rhs = p.apply_power(p.apply_power(u, a).unwrap(), b).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn table_power_composes(q in 2usize..40, seed: u64, u in 0u64..40, a in 1u64..50, b in 1u64..50) {
            let p = random_cycle(q, seed);
            let u = u % q as u64;
            prop_assert_eq!(
                p.apply_power(u, a + b).unwrap(),
                p.apply_power(p.apply_power(u, a).unwrap(), b).unwrap()
            );
        }

        #[test]
        fn cyclic_iff_full_orbit(q in 1u64..300, delta in 0u64..300) {
            let inc = Permutation::increment(q, delta).unwrap();
            let table = Permutation::from_table(inc.to_table()).unwrap();
            // orbit walk: q distinct values before returning to start
            let mut seen = std::collections::HashSet::new();
            let mut v = 0;
            loop {
                if !seen.insert(v) { break; }
                v = table.apply(v).unwrap();
            }
            let walk_cyclic = v == 0 && seen.len() as u64 == q;
            prop_assert_eq!(inc.is_cyclic(), walk_cyclic);
            prop_assert_eq!(table.is_cyclic(), walk_cyclic);
        }

        #[test]
        fn follower_sets_have_l_distinct_members(q in 2usize..50, seed: u64, u in 0u64..50, l in 1u64..50) {
            let p = random_cycle(q, seed);
            let u = u % q as u64;
            let l = 1 + l % (q as u64 - 1);
            let f = p.follower_set(u, l).unwrap();
            let distinct: std::collections::HashSet<_> = f.members.iter().collect();
            prop_assert_eq!(distinct.len() as u64, l);
            prop_assert!(!f.contains(u));
        }
    }

    #[test]
    fn increment_and_table_agree() {
        for q in [1u64, 2, 7, 10, 97, 110, 1000, 10_000] {
            for delta in [0, 1, 3, q / 2, q.saturating_sub(1)] {
                let inc = Permutation::increment(q, delta).unwrap();
                let table = Permutation::from_table(inc.to_table()).unwrap();
                for u in 0..q {
                    assert_eq!(inc.apply(u).unwrap(), table.apply(u).unwrap());
                    assert_eq!(inc.apply_power(u, 3).unwrap(), table.apply_power(u, 3).unwrap());
                }
                assert_eq!(inc.is_cyclic(), table.is_cyclic());
            }
        }
    }
}
