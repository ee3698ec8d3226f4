//! Weighted averaging of client deltas: `sum(delta_i) / sum(w_i)`, where
//! clients have already multiplied their delta by `w_i` when weights are not
//! all one. The encrypted variant sums ciphertexts and applies the reciprocal
//! as a single plaintext multiplication, so no ciphertext is ever divided.

use privfed_ckks::{add, mul_scalar_rescale, Ciphertext, CkksContext};
use privfed_core::FlatVector;

use crate::FedError;

fn weight_total(weights: &[f64], n_updates: usize) -> Result<f64, FedError> {
    if n_updates == 0 {
        return Err(FedError::Structural("no updates to aggregate".into()));
    }
    if weights.len() != n_updates {
        return Err(FedError::Structural(format!("{} weights for {n_updates} updates", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(FedError::Structural("client weights must be positive and finite".into()));
    }
    Ok(weights.iter().sum())
}

pub fn aggregate_plain(updates: &[FlatVector], weights: &[f64]) -> Result<FlatVector, FedError> {
    let total = weight_total(weights, updates.len())?;
    let n = updates[0].len();
    if let Some(u) = updates.iter().find(|u| u.len() != n) {
        return Err(FedError::Structural(format!("update lengths differ ({n} vs {})", u.len())));
    }
    let mut sum = vec![0.0; n];
    for u in updates {
        for (s, x) in sum.iter_mut().zip(u.as_slice()) {
            *s += x;
        }
    }
    Ok(FlatVector(sum.into_iter().map(|s| s / total).collect()))
}

/// `updates[client][chunk]`; every client must use the same chunking.
pub fn aggregate_encrypted(
    ctx: &CkksContext,
    updates: &[Vec<Ciphertext>],
    weights: &[f64],
) -> Result<Vec<Ciphertext>, FedError> {
    let total = weight_total(weights, updates.len())?;
    let chunks = updates[0].len();
    for u in updates {
        let same = u.len() == chunks
            && u.iter().zip(&updates[0]).all(|(a, b)| {
                a.level() == b.level() && a.scale_log2() == b.scale_log2() && a.slot_fill() == b.slot_fill()
            });
        if !same {
            return Err(FedError::Structural("clients sent differently shaped ciphertext chunks".into()));
        }
    }
    let inv = 1.0 / total;
    ctx.exec()
        .map_range(chunks, |c| {
            let mut acc = updates[0][c].clone();
            for u in &updates[1..] {
                acc = add(ctx, &acc, &u[c])?;
            }
            Ok(mul_scalar_rescale(ctx, &acc, inv)?)
        })
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_two() {
        let out = aggregate_plain(&[FlatVector(vec![1.0, 3.0]), FlatVector(vec![3.0, 5.0])], &[1.0, 1.0]).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn single_client_identity() {
        let u = FlatVector(vec![0.1, -7.25, 1e-300]);
        assert_eq!(aggregate_plain(&[u.clone()], &[1.0]).unwrap(), u);
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(aggregate_plain(&[], &[]), Err(FedError::Structural(_))));
        let a = FlatVector(vec![1.0]);
        let b = FlatVector(vec![1.0, 2.0]);
        assert!(matches!(aggregate_plain(&[a.clone(), b], &[1.0, 1.0]), Err(FedError::Structural(_))));
        assert!(matches!(aggregate_plain(&[a.clone()], &[1.0, 1.0]), Err(FedError::Structural(_))));
        assert!(matches!(aggregate_plain(&[a], &[0.0]), Err(FedError::Structural(_))));
    }
}
