//! Permutation codes that merge device identifiers and sequence numbers
//! into a single code number (CN).
//!
//! Each transmitter emits its CNs in the order of a cyclic permutation of
//! `Z_q`, so a CN never repeats within `q` packets and can double as a nonce.
//! A receiver that sees `u` and later `v` from the same device can tell which
//! permutation produced the pair as long as fewer than `l` packets were lost
//! in between, provided the permutations form a `(q, l)`-proper set.
//!
//! * [`perm`], [`arith`]: permutation and modular-arithmetic primitives.
//! * [`proper`]: verification, bounds and exhaustive search for proper sets.
//! * [`construction`]: the arithmetic-progression construction and planner.
//! * [`sim`]: erasure-channel network simulator producing JSONL traces.
//! * [`backend`]: the identification engine (fast path plus HMM decoder).

pub mod arith;
pub mod backend;
pub mod construction;
pub mod error;
pub mod perm;
pub mod proper;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};
