//! Ciphertext wire format.
//!
//! Header: params hash (8 bytes), level (u8), scale log2 (u16), slot fill
//! (u32). Body: every residue as a little-endian u64, ordered by component,
//! then prime, then coefficient.

use crate::cipher::{Ciphertext, RnsPoly};
use crate::{CkksContext, CkksError};

pub const HEADER_LEN: usize = 8 + 1 + 2 + 4;

/// Exact encoded size of a ciphertext at `level`.
pub fn serialized_len(ctx: &CkksContext, level: usize) -> usize {
    HEADER_LEN + 2 * (level + 1) * ctx.n() * 8
}

pub fn serialize_ct(ctx: &CkksContext, ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(serialized_len(ctx, ct.level));
    out.extend_from_slice(&ctx.params_hash());
    out.push(ct.level as u8);
    out.extend_from_slice(&(ct.scale_log2 as u16).to_le_bytes());
    out.extend_from_slice(&(ct.slot_fill as u32).to_le_bytes());
    for comp in [&ct.c0, &ct.c1] {
        for residues in comp {
            for x in residues {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn deserialize_ct(ctx: &CkksContext, bytes: &[u8]) -> Result<Ciphertext, CkksError> {
    if bytes.len() < HEADER_LEN {
        return Err(CkksError::Decode(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..8] != ctx.params_hash() {
        return Err(CkksError::ParamsMismatch);
    }
    let level = bytes[8] as usize;
    let scale_log2 = u16::from_le_bytes([bytes[9], bytes[10]]) as u32;
    let slot_fill = u32::from_le_bytes(bytes[11..15].try_into().expect("four bytes")) as usize;
    if level > ctx.top_level() {
        return Err(CkksError::Decode(format!("level {level} above the top level {}", ctx.top_level())));
    }
    if slot_fill > ctx.slot_count() {
        return Err(CkksError::Decode(format!("slot fill {slot_fill} exceeds {} slots", ctx.slot_count())));
    }
    let want = serialized_len(ctx, level);
    if bytes.len() != want {
        return Err(CkksError::Decode(format!("expected {want} bytes, got {}", bytes.len())));
    }
    let n = ctx.n();
    let mut words = bytes[HEADER_LEN..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("eight bytes")));
    let mut read_component = || -> Result<RnsPoly, CkksError> {
        (0..=level)
            .map(|i| {
                let q = ctx.primes()[i];
                (0..n)
                    .map(|_| {
                        let x = words.next().expect("length checked");
                        if x >= q {
                            Err(CkksError::Decode(format!("residue {x} not reduced modulo prime {i}")))
                        } else {
                            Ok(x)
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let c0 = read_component()?;
    let c1 = read_component()?;
    Ok(Ciphertext { c0, c1, level, scale_log2, slot_fill })
}
