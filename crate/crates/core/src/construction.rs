//! Arithmetic-progression construction of quasiperfect proper sets and the
//! bit-budget planner built on it.
//!
//! For a prime `p` and `l | (p - 1)` the increments `1 + i*l`,
//! `i = 0..p-1` except `i = (p-1)/l`, give `p - 1` permutations over
//! `q = p*l` that form a `(q, l)`-proper set meeting the size bound.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arith::{is_prime, mod_inverse, mul_mod, sub_mod};
use crate::error::{Error, Result};
use crate::perm::Cn;
use crate::proper::{upper_bound, Classification, Members, ProperSet};

/// Largest alphabet the construction accepts.
pub const MAX_Q: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ConstructionParams {
    pub p: u64,
    pub l: u64,
}

#[derive(Deserialize)]
struct RawParams {
    p: u64,
    l: u64,
}

impl TryFrom<RawParams> for ConstructionParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ConstructionParams::new(raw.p, raw.l)
    }
}

impl ConstructionParams {
    pub fn new(p: u64, l: u64) -> Result<Self> {
        if l == 0 {
            return Err(Error::Parameter("l must be at least 1".into()));
        }
        if !is_prime(p) {
            return Err(Error::Parameter(format!("p = {p} is not prime")));
        }
        if !(p - 1).is_multiple_of(l) {
            return Err(Error::Parameter(format!("l = {l} does not divide p - 1 = {}", p - 1)));
        }
        match p.checked_mul(l) {
            Some(q) if q <= MAX_Q => {}
            _ => return Err(Error::Parameter(format!("q = p * l overflows the alphabet range ({p} * {l})"))),
        }
        Ok(ConstructionParams { p, l })
    }

    pub fn q(&self) -> u64 {
        self.p * self.l
    }

    pub fn m(&self) -> u64 {
        self.p - 1
    }

    /// The index `i = (p-1)/l` whose increment shares a factor with `q`.
    pub fn skipped_index(&self) -> u64 {
        (self.p - 1) / self.l
    }

    /// Increment assigned to device `index` (`0 <= index < m`), in the
    /// natural order of the kept `i` values.
    pub fn increment(&self, index: u64) -> Result<u64> {
        if index >= self.m() {
            return Err(Error::Domain(format!("device index {index} >= m = {}", self.m())));
        }
        let i = if index < self.skipped_index() { index } else { index + 1 };
        Ok(1 + i * self.l)
    }

    pub fn increments(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.p).filter(move |&i| i != self.skipped_index()).map(move |i| 1 + i * self.l)
    }
}

/// Device index to increment mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncrementAssignment {
    pub q: u64,
    pub increments: Vec<u64>,
}

impl IncrementAssignment {
    pub fn from_params(params: &ConstructionParams) -> Self {
        IncrementAssignment { q: params.q(), increments: params.increments().collect() }
    }

    pub fn delta_of(&self, device_index: usize) -> Option<u64> {
        self.increments.get(device_index).copied()
    }
}

/// Builds the increment-form proper set for `(p, l)`.
///
/// The returned set is marked proper on the strength of the construction;
/// [`ProperSet::verified`] re-checks it.
pub fn construct(p: u64, l: u64) -> Result<ProperSet> {
    let params = ConstructionParams::new(p, l)?;
    let q = params.q();
    debug_assert_eq!(params.m(), upper_bound(q, l)?);
    Ok(ProperSet { q, l, members: Members::Progression(params), classification: Classification::Proper })
}

/// Number of transmissions `beta` in `[1, q]` that take `u` to `v` under
/// `u -> u + delta`: `beta = delta^{-1} (v - u) mod q`, with the zero
/// residue reported as `q` (a full cycle).
pub fn recover_beta(delta: u64, q: u64, u: Cn, v: Cn) -> Result<u64> {
    if u >= q || v >= q {
        return Err(Error::Domain(format!("code numbers must be below q = {q}")));
    }
    let inv = mod_inverse(delta % q, q)
        .ok_or_else(|| Error::Domain(format!("increment {delta} is not invertible modulo {q}")))?;
    let beta = mul_mod(inv, sub_mod(v, u, q), q);
    Ok(if beta == 0 { q } else { beta })
}

/// Precomputed inverse for repeated `beta` recovery with one increment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BetaSolver {
    q: u64,
    inv: u64,
}

impl BetaSolver {
    pub fn new(delta: u64, q: u64) -> Result<Self> {
        let inv = mod_inverse(delta % q, q)
            .ok_or_else(|| Error::Domain(format!("increment {delta} is not invertible modulo {q}")))?;
        Ok(BetaSolver { q, inv })
    }

    /// Same as [`recover_beta`]; `u` and `v` must already be below `q`.
    #[inline]
    pub fn beta(&self, u: Cn, v: Cn) -> u64 {
        let beta = mul_mod(self.inv, sub_mod(v % self.q, u % self.q, self.q), self.q);
        if beta == 0 {
            self.q
        } else {
            beta
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub cn_bits: u32,
    pub l: u64,
    pub p: u64,
    pub q: u64,
    pub m: u64,
    pub baseline_sn_bits: u32,
    pub baseline_id_bits: u32,
    /// `q / 2^baseline_sn_bits`: how much longer a nonce lives.
    pub nonce_reuse_factor: f64,
    /// `(p - 1) / 2^baseline_id_bits - 1`: relative change in addressable devices.
    pub device_count_delta: f64,
    pub bits_saved: i64,
}

/// Finds the largest prime `p` with `p*l <= 2^cn_bits` and `l | (p - 1)`.
pub fn plan_parameters(cn_bits: u32, l: u64, baseline_sn_bits: u32, baseline_id_bits: u32) -> Result<PlanReport> {
    if !(2..=62).contains(&cn_bits) {
        return Err(Error::Parameter(format!("cn_bits = {cn_bits} must lie in [2, 62]")));
    }
    if l == 0 {
        return Err(Error::Parameter("l must be at least 1".into()));
    }
    let budget = 1u64 << cn_bits;
    let top = budget / l;
    if top < 2 {
        return Err(Error::NotFound(format!("no prime p with {l} * p <= 2^{cn_bits}")));
    }
    // walk the residue class p = 1 (mod l) downwards
    let mut p = top - (top - 1) % l;
    let found = loop {
        if p < 2 {
            break None;
        }
        if is_prime(p) {
            break Some(p);
        }
        if p <= l {
            break None;
        }
        p -= l;
    };
    let p = found.ok_or_else(|| {
        Error::NotFound(format!("no prime p = 1 (mod {l}) with {l} * p <= 2^{cn_bits}"))
    })?;
    let q = p * l;
    let m = p - 1;
    Ok(PlanReport {
        cn_bits,
        l,
        p,
        q,
        m,
        baseline_sn_bits,
        baseline_id_bits,
        nonce_reuse_factor: q as f64 / 2f64.powi(baseline_sn_bits as i32),
        device_count_delta: m as f64 / 2f64.powi(baseline_id_bits as i32) - 1.0,
        bits_saved: (baseline_id_bits as i64 + baseline_sn_bits as i64) - cn_bits as i64,
    })
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "code number bits      {}", self.cn_bits)?;
        writeln!(f, "max gap l             {}", self.l)?;
        writeln!(f, "prime p               {}", self.p)?;
        writeln!(f, "alphabet q = p*l      {}", self.q)?;
        writeln!(f, "devices m = p-1       {}", self.m)?;
        writeln!(
            f,
            "packet size           {} bit shorter than {} bit id + {} bit sequence number",
            self.bits_saved, self.baseline_id_bits, self.baseline_sn_bits
        )?;
        writeln!(
            f,
            "nonce reuse cycle     x{:.4e} (q / 2^{})",
            self.nonce_reuse_factor, self.baseline_sn_bits
        )?;
        write!(
            f,
            "addressable devices   {:+.2}% vs 2^{}",
            self.device_count_delta * 100.0,
            self.baseline_id_bits
        )
    }
}
