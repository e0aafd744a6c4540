use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Packet erasure channel: each transmission is lost independently with
/// probability `epsilon`. Delivered packets are never altered and the
/// receiver is not told about losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ErasureChannel {
    epsilon: f64,
}

impl ErasureChannel {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Validation(format!("erasure probability {epsilon} must lie in [0, 1)")));
        }
        Ok(ErasureChannel { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn transmit<T, R: Rng + ?Sized>(&self, packet: T, rng: &mut R) -> Delivery<T> {
        if self.erases(rng) {
            Delivery::Erased
        } else {
            Delivery::Delivered(packet)
        }
    }

    /// Draws one erasure decision.
    pub fn erases<R: Rng + ?Sized>(&self, rng: &mut R) -> bool {
        self.epsilon > 0.0 && rng.random::<f64>() < self.epsilon
    }
}

impl TryFrom<f64> for ErasureChannel {
    type Error = Error;

    fn try_from(epsilon: f64) -> Result<Self> {
        ErasureChannel::new(epsilon)
    }
}

impl From<ErasureChannel> for f64 {
    fn from(c: ErasureChannel) -> f64 {
        c.epsilon
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery<T> {
    Delivered(T),
    Erased,
}

impl<T> Delivery<T> {
    pub fn is_erased(&self) -> bool {
        matches!(self, Delivery::Erased)
    }
}
