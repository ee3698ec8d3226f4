//! RLWE keys, public-key encryption, decryption and the two homomorphic
//! operations the aggregation circuit needs.

use num_bigint::BigUint;
use rand::Rng;

use crate::arith::{add_mod, inv_mod, mul_mod, reduce_i128, reduce_i64, sub_mod};
use crate::encoding::PlainPoly;
use crate::{CkksContext, CkksError};

/// Residues of one ring element, one coefficient vector per active prime.
pub type RnsPoly = Vec<Vec<u64>>;

#[derive(Clone)]
pub struct SecretKey {
    hash: [u8; 8],
    /// NTT form of the ternary secret under each data prime.
    s_ntt: RnsPoly,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// `(b, a) = (-a·s + e, a)` in NTT form under each data prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    hash: [u8; 8],
    b_ntt: RnsPoly,
    a_ntt: RnsPoly,
}

impl PublicKey {
    /// Short digest of the key, for checking that parties share one key pair
    /// without revealing anything beyond the public key itself.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.hash);
        for poly in [&self.b_ntt, &self.a_ntt] {
            for residues in poly {
                for c in residues {
                    h.update(c.to_le_bytes());
                }
            }
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub secret: SecretKey,
    pub public: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub(crate) c0: RnsPoly,
    pub(crate) c1: RnsPoly,
    pub(crate) level: usize,
    pub(crate) scale_log2: u32,
    pub(crate) slot_fill: usize,
}

impl Ciphertext {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn scale_log2(&self) -> u32 {
        self.scale_log2
    }

    pub fn slot_fill(&self) -> usize {
        self.slot_fill
    }

    pub fn components(&self) -> [&RnsPoly; 2] {
        [&self.c0, &self.c1]
    }
}

fn sample_ternary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

/// Centered binomial with 21 trials per side: variance 10.5, sigma about 3.24.
fn sample_error<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    const MASK: u64 = (1 << 21) - 1;
    (0..n)
        .map(|_| {
            let bits = rng.next_u64();
            (bits & MASK).count_ones() as i64 - ((bits >> 21) & MASK).count_ones() as i64
        })
        .collect()
}

fn to_ntt(ctx: &CkksContext, small: &[i64], i: usize) -> Vec<u64> {
    let t = ctx.table(i);
    let q = t.modulus();
    let mut v: Vec<u64> = small.iter().map(|&x| reduce_i64(x, q)).collect();
    t.forward(&mut v);
    v
}

/// Generates a key pair over the data primes of `ctx`.
pub fn keygen<R: Rng + ?Sized>(ctx: &CkksContext, rng: &mut R) -> KeyPair {
    let n = ctx.n();
    let n_primes = ctx.top_level() + 1;
    let s = sample_ternary(rng, n);
    let e = sample_error(rng, n);
    let a_ntt: RnsPoly =
        (0..n_primes).map(|i| (0..n).map(|_| rng.gen_range(0..ctx.primes()[i])).collect()).collect();
    let s_ntt: RnsPoly = ctx.exec().map_range(n_primes, |i| to_ntt(ctx, &s, i));
    let b_ntt: RnsPoly = ctx.exec().map_range(n_primes, |i| {
        let q = ctx.primes()[i];
        let e_ntt = to_ntt(ctx, &e, i);
        a_ntt[i]
            .iter()
            .zip(&s_ntt[i])
            .zip(&e_ntt)
            .map(|((&a, &s), &e)| sub_mod(e, mul_mod(a, s, q), q))
            .collect()
    });
    let hash = ctx.params_hash();
    KeyPair { secret: SecretKey { hash, s_ntt }, public: PublicKey { hash, b_ntt, a_ntt } }
}

/// Encrypts under the public key at the top level.
pub fn encrypt<R: Rng + ?Sized>(
    ctx: &CkksContext,
    pt: &PlainPoly,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<Ciphertext, CkksError> {
    if pk.hash != ctx.params_hash() || pt.coeffs.len() != ctx.n() {
        return Err(CkksError::ParamsMismatch);
    }
    let level = ctx.top_level();
    let limit = ctx.crt(level).limit;
    if pt.coeffs.iter().any(|c| c.unsigned_abs() >= limit.unsigned_abs()) {
        return Err(CkksError::Overflow);
    }
    let n = ctx.n();
    let u = sample_ternary(rng, n);
    let e0 = sample_error(rng, n);
    let e1 = sample_error(rng, n);
    let parts: Vec<(Vec<u64>, Vec<u64>)> = ctx.exec().map_range(level + 1, |i| {
        let t = ctx.table(i);
        let q = t.modulus();
        let u_ntt = to_ntt(ctx, &u, i);
        let mut c0: Vec<u64> = pk.b_ntt[i].iter().zip(&u_ntt).map(|(&b, &u)| mul_mod(b, u, q)).collect();
        let mut c1: Vec<u64> = pk.a_ntt[i].iter().zip(&u_ntt).map(|(&a, &u)| mul_mod(a, u, q)).collect();
        t.inverse(&mut c0);
        t.inverse(&mut c1);
        for k in 0..n {
            c0[k] = add_mod(c0[k], add_mod(reduce_i64(e0[k], q), reduce_i128(pt.coeffs[k], q), q), q);
            c1[k] = add_mod(c1[k], reduce_i64(e1[k], q), q);
        }
        (c0, c1)
    });
    let (c0, c1) = parts.into_iter().unzip();
    Ok(Ciphertext { c0, c1, level, scale_log2: pt.scale_log2, slot_fill: pt.slot_fill })
}

/// Decrypts to a plaintext polynomial with centered integer coefficients.
pub fn decrypt(ctx: &CkksContext, ct: &Ciphertext, sk: &SecretKey) -> Result<PlainPoly, CkksError> {
    if sk.hash != ctx.params_hash() {
        return Err(CkksError::ParamsMismatch);
    }
    check_shape(ctx, ct)?;
    let residues: RnsPoly = ctx.exec().map_range(ct.level + 1, |i| {
        let t = ctx.table(i);
        let q = t.modulus();
        let mut m = ct.c1[i].clone();
        t.forward(&mut m);
        t.mul_assign_pointwise(&mut m, &sk.s_ntt[i]);
        t.inverse(&mut m);
        for (x, &c) in m.iter_mut().zip(&ct.c0[i]) {
            *x = add_mod(*x, c, q);
        }
        m
    });
    let coeffs = reconstruct(ctx, &residues, ct.level)?;
    Ok(PlainPoly { coeffs, scale_log2: ct.scale_log2, slot_fill: ct.slot_fill })
}

/// CRT reconstruction into the centered range `(-Q/2, Q/2]`.
fn reconstruct(ctx: &CkksContext, residues: &RnsPoly, level: usize) -> Result<Vec<i128>, CkksError> {
    let n = ctx.n();
    if level == 0 {
        let q = ctx.primes()[0];
        return Ok(residues[0].iter().map(|&x| if x > q / 2 { x as i128 - q as i128 } else { x as i128 }).collect());
    }
    let crt = ctx.crt(level);
    (0..n)
        .map(|k| {
            let mut acc = BigUint::from(0u32);
            for (r, basis) in residues.iter().zip(&crt.basis) {
                acc += basis * r[k];
            }
            acc %= &crt.modulus;
            let value = if acc > crt.half {
                -i128::try_from(&crt.modulus - acc).map_err(|_| CkksError::Overflow)?
            } else {
                i128::try_from(acc).map_err(|_| CkksError::Overflow)?
            };
            Ok(value)
        })
        .collect()
}

fn check_shape(ctx: &CkksContext, ct: &Ciphertext) -> Result<(), CkksError> {
    let ok = ct.level <= ctx.top_level()
        && ct.c0.len() == ct.level + 1
        && ct.c1.len() == ct.level + 1
        && ct.c0.iter().chain(&ct.c1).all(|r| r.len() == ctx.n());
    if ok {
        Ok(())
    } else {
        Err(CkksError::ParamsMismatch)
    }
}

/// Slot-wise sum. Both inputs must share level and scale.
pub fn add(ctx: &CkksContext, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CkksError> {
    check_shape(ctx, a)?;
    check_shape(ctx, b)?;
    if a.level != b.level {
        return Err(CkksError::LevelMismatch { left: a.level, right: b.level });
    }
    if a.scale_log2 != b.scale_log2 {
        return Err(CkksError::ScaleMismatch { left: a.scale_log2, right: b.scale_log2 });
    }
    let sum = |x: &RnsPoly, y: &RnsPoly| -> RnsPoly {
        x.iter()
            .zip(y)
            .zip(ctx.primes())
            .map(|((xs, ys), &q)| xs.iter().zip(ys).map(|(&u, &v)| add_mod(u, v, q)).collect())
            .collect()
    };
    Ok(Ciphertext {
        c0: sum(&a.c0, &b.c0),
        c1: sum(&a.c1, &b.c1),
        level: a.level,
        scale_log2: a.scale_log2,
        slot_fill: a.slot_fill.max(b.slot_fill),
    })
}

/// Multiplies by a real scalar and rescales once, consuming one level.
///
/// The scalar is encoded as `round(c · q_l)` where `q_l` is the prime being
/// dropped, so the rescale divides that factor back out and the scale stays
/// exactly a power of two.
pub fn mul_scalar_rescale(ctx: &CkksContext, ct: &Ciphertext, scalar: f64) -> Result<Ciphertext, CkksError> {
    check_shape(ctx, ct)?;
    if ct.level == 0 {
        return Err(CkksError::DepthExhausted);
    }
    if !scalar.is_finite() {
        return Err(CkksError::NonFinite);
    }
    let l = ct.level;
    let q_l = ctx.primes()[l];
    let encoded = scalar * q_l as f64;
    if encoded.abs() >= 2f64.powi(100) {
        return Err(CkksError::Overflow);
    }
    let k = encoded.round() as i128;
    let rescale = |comp: &RnsPoly| -> RnsPoly {
        let last: Vec<i128> = comp[l]
            .iter()
            .map(|&x| {
                let x = mul_mod(x, reduce_i128(k, q_l), q_l);
                if x > q_l / 2 {
                    x as i128 - q_l as i128
                } else {
                    x as i128
                }
            })
            .collect();
        ctx.exec().map_range(l, |i| {
            let q = ctx.primes()[i];
            let k_i = reduce_i128(k, q);
            let q_l_inv = inv_mod(q_l % q, q);
            comp[i]
                .iter()
                .zip(&last)
                .map(|(&x, &r)| mul_mod(sub_mod(mul_mod(x, k_i, q), reduce_i128(r, q), q), q_l_inv, q))
                .collect()
        })
    };
    Ok(Ciphertext {
        c0: rescale(&ct.c0),
        c1: rescale(&ct.c1),
        level: l - 1,
        scale_log2: ct.scale_log2,
        slot_fill: ct.slot_fill,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{decode, encode, CkksParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CkksContext, KeyPair, ChaCha8Rng) {
        let ctx = CkksContext::new(CkksParams::reduced()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keys = keygen(&ctx, &mut rng);
        (ctx, keys, rng)
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    fn roundtrip(ctx: &CkksContext, keys: &KeyPair, ct: &Ciphertext) -> Vec<f64> {
        decode(ctx, &decrypt(ctx, ct, &keys.secret).unwrap())
    }

    #[test]
    fn error_sampler_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = sample_error(&mut rng, 200_000);
        let mean = e.iter().sum::<i64>() as f64 / e.len() as f64;
        let var = e.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / e.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 10.5).abs() < 0.2, "variance {var}");
        assert!(sample_ternary(&mut rng, 1000).iter().all(|x| (-1..=1).contains(x)));
    }

    #[test]
    fn encrypt_is_randomized() {
        let (ctx, keys, mut rng) = setup();
        let v = vec![0.5; 10];
        let pt = encode(&ctx, &v).unwrap();
        let a = encrypt(&ctx, &pt, &keys.public, &mut rng).unwrap();
        let b = encrypt(&ctx, &pt, &keys.public, &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(max_err(&roundtrip(&ctx, &keys, &a)[..10], &v) < 1e-4);
        assert!(max_err(&roundtrip(&ctx, &keys, &b)[..10], &v) < 1e-4);
        assert_eq!(a.level(), ctx.top_level());
        assert_eq!(a.scale_log2(), 30);
    }

    #[test]
    fn scalar_identity_and_depth() {
        let (ctx, keys, mut rng) = setup();
        let v = [0.3, -0.9, 0.0, 1.0];
        let ct = encrypt(&ctx, &encode(&ctx, &v).unwrap(), &keys.public, &mut rng).unwrap();
        let once = mul_scalar_rescale(&ctx, &ct, 1.0).unwrap();
        assert_eq!(once.level(), ct.level() - 1);
        assert!(max_err(&roundtrip(&ctx, &keys, &once)[..4], &v) < 1e-3);
        assert!(matches!(mul_scalar_rescale(&ctx, &once, 1.0), Err(CkksError::DepthExhausted)));
    }

    #[test]
    fn add_rejects_mismatched_levels() {
        let (ctx, keys, mut rng) = setup();
        let ct = encrypt(&ctx, &encode(&ctx, &[1.0]).unwrap(), &keys.public, &mut rng).unwrap();
        let low = mul_scalar_rescale(&ctx, &ct, 0.5).unwrap();
        assert!(matches!(add(&ctx, &ct, &low), Err(CkksError::LevelMismatch { .. })));
    }

    #[test]
    fn wrong_context_is_rejected() {
        let (ctx, keys, _) = setup();
        let other = CkksContext::new(CkksParams { scale_log2: 25, ..CkksParams::reduced() }).unwrap();
        let pt = encode(&other, &[1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(encrypt(&other, &pt, &keys.public, &mut rng), Err(CkksError::ParamsMismatch)));
        let ct = encrypt(&ctx, &encode(&ctx, &[1.0]).unwrap(), &keys.public, &mut rng).unwrap();
        assert!(matches!(decrypt(&other, &ct, &keys.secret), Err(CkksError::ParamsMismatch)));
    }
}
