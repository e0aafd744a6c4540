use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::perm::Cn;

pub const MIN_TAG_BITS: u32 = 4;
pub const MAX_TAG_BITS: u32 = 64;

/// Truncated keyed tag over `cn || payload`.
///
/// This stands in for a real MAC: SHA-256 over `key || cn || payload`,
/// keeping the low `t_bits` bits. A wrong key matches with probability
/// about `2^-t_bits`, which is the only property the backend relies on.
pub fn compute_mac(key: &[u8], cn: Cn, payload: &[u8], t_bits: u32) -> Result<u64> {
    check_tag_bits(t_bits)?;
    let mut h = Sha256::new();
    h.update((key.len() as u32).to_le_bytes());
    h.update(key);
    h.update(cn.to_le_bytes());
    h.update(payload);
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    Ok(u64::from_le_bytes(word) & tag_mask(t_bits))
}

pub fn verify_mac(key: &[u8], cn: Cn, payload: &[u8], t_bits: u32, tag: u64) -> bool {
    compute_mac(key, cn, payload, t_bits).is_ok_and(|t| t == tag)
}

pub fn check_tag_bits(t_bits: u32) -> Result<()> {
    if !(MIN_TAG_BITS..=MAX_TAG_BITS).contains(&t_bits) {
        return Err(Error::Domain(format!(
            "tag length {t_bits} must lie in [{MIN_TAG_BITS}, {MAX_TAG_BITS}]"
        )));
    }
    Ok(())
}

fn tag_mask(t_bits: u32) -> u64 {
    if t_bits == 64 {
        u64::MAX
    } else {
        (1u64 << t_bits) - 1
    }
}
