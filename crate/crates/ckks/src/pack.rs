//! Mapping flattened model updates onto ciphertext slots.

use std::ops::Range;

use privfed_core::rng::rng_for;
use privfed_core::{FlatVector, LayoutManifest};
use serde::{Deserialize, Serialize};

use crate::cipher::{decrypt, encrypt, Ciphertext, PublicKey, SecretKey};
use crate::encoding::{decode, encode, PlainPoly};
use crate::{CkksContext, CkksError};

/// How a flat update is split into plaintexts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingLayout {
    /// Consecutive runs of `slot_count` values, ignoring tensor boundaries.
    Flat,
    /// One or more plaintexts per tensor, so no ciphertext mixes two tensors.
    #[default]
    PerTensor,
}

/// Index ranges of the flat vector covered by each plaintext, in order.
pub fn chunk_ranges(layout: PackingLayout, manifest: &LayoutManifest, slot_count: usize) -> Vec<Range<usize>> {
    let split = |r: Range<usize>| {
        (r.start..r.end).step_by(slot_count).map(move |s| s..(s + slot_count).min(r.end)).collect::<Vec<_>>()
    };
    match layout {
        PackingLayout::Flat => split(0..manifest.total_len()),
        PackingLayout::PerTensor => manifest.entries().iter().flat_map(|e| split(e.range())).collect(),
    }
}

/// Flat packing of an update into `ceil(n / slot_count)` plaintexts.
pub fn pack_update(ctx: &CkksContext, flat: &FlatVector) -> Result<Vec<PlainPoly>, CkksError> {
    flat.as_slice().chunks(ctx.slot_count()).map(|c| encode(ctx, c)).collect()
}

pub fn pack_with_layout(
    ctx: &CkksContext,
    flat: &FlatVector,
    manifest: &LayoutManifest,
    layout: PackingLayout,
) -> Result<Vec<PlainPoly>, CkksError> {
    check_len(flat.len(), manifest)?;
    chunk_ranges(layout, manifest, ctx.slot_count()).into_iter().map(|r| encode(ctx, &flat.as_slice()[r])).collect()
}

/// Concatenates the meaningful slots of each decrypted chunk, dropping padding.
pub fn unpack_update(
    ctx: &CkksContext,
    decrypted: &[PlainPoly],
    manifest: &LayoutManifest,
) -> Result<FlatVector, CkksError> {
    let total: usize = decrypted.iter().map(PlainPoly::slot_fill).sum();
    check_len(total, manifest)?;
    let mut out = Vec::with_capacity(total);
    for pt in decrypted {
        out.extend_from_slice(&decode(ctx, pt)[..pt.slot_fill()]);
    }
    Ok(FlatVector(out))
}

fn check_len(n: usize, manifest: &LayoutManifest) -> Result<(), CkksError> {
    if n == manifest.total_len() {
        Ok(())
    } else {
        Err(CkksError::Structural(format!("{n} values against a manifest of {}", manifest.total_len())))
    }
}

/// Packs and encrypts an update. Chunk `i` draws its randomness from
/// `rng_for(seed, [i])`, so the output does not depend on the execution
/// strategy.
pub fn encrypt_update(
    ctx: &CkksContext,
    flat: &FlatVector,
    manifest: &LayoutManifest,
    layout: PackingLayout,
    pk: &PublicKey,
    seed: u64,
) -> Result<Vec<Ciphertext>, CkksError> {
    let plains = pack_with_layout(ctx, flat, manifest, layout)?;
    ctx.exec()
        .map_range(plains.len(), |i| encrypt(ctx, &plains[i], pk, &mut rng_for(seed, &[i as u64])))
        .into_iter()
        .collect()
}

pub fn decrypt_update(
    ctx: &CkksContext,
    cts: &[Ciphertext],
    sk: &SecretKey,
    manifest: &LayoutManifest,
) -> Result<FlatVector, CkksError> {
    let plains = ctx.exec().map(cts, |ct| decrypt(ctx, ct, sk)).into_iter().collect::<Result<Vec<_>, _>>()?;
    unpack_update(ctx, &plains, manifest)
}
