//! Word-sized modular arithmetic for NTT-friendly primes below 2^62.

#[inline(always)]
pub(crate) fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline(always)]
pub(crate) fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline(always)]
pub(crate) fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

/// Precomputed `floor(w · 2^64 / q)` for Shoup multiplication by a fixed `w`.
#[inline(always)]
pub(crate) fn shoup(w: u64, q: u64) -> u64 {
    (((w as u128) << 64) / q as u128) as u64
}

/// `a · w mod q` given `w_shoup = shoup(w, q)`; `a` must be below `q`.
#[inline(always)]
pub(crate) fn mul_shoup(a: u64, w: u64, w_shoup: u64, q: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(q));
    if r >= q {
        r - q
    } else {
        r
    }
}

pub(crate) fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1u64 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime.
pub(crate) fn inv_mod(a: u64, q: u64) -> u64 {
    pow_mod(a, q - 2, q)
}

/// Reduces a signed value into `[0, q)`.
#[inline(always)]
pub(crate) fn reduce_i64(x: i64, q: u64) -> u64 {
    let r = x.rem_euclid(q as i64);
    r as u64
}

#[inline(always)]
pub(crate) fn reduce_i128(x: i128, q: u64) -> u64 {
    x.rem_euclid(q as i128) as u64
}

/// Deterministic Miller–Rabin for 64-bit integers.
pub(crate) fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest primes `q < 2^bits` with `q ≡ 1 (mod 2n)`, one per requested bit
/// size, all distinct.
pub(crate) fn ntt_primes(bits: &[u32], n: usize) -> Option<Vec<u64>> {
    let step = 2 * n as u64;
    let mut out: Vec<u64> = Vec::with_capacity(bits.len());
    for &b in bits {
        let top = (1u64 << b) - 1;
        let mut q = (top / step) * step + 1;
        loop {
            if q <= step || q.leading_zeros() != 64 - b {
                return None;
            }
            if is_prime(q) && !out.contains(&q) {
                break;
            }
            q -= step;
        }
        out.push(q);
    }
    Some(out)
}

/// A primitive `2n`-th root of unity modulo `q` (requires `2n | q - 1`).
pub(crate) fn primitive_2n_root(q: u64, n: usize) -> u64 {
    let two_n = 2 * n as u64;
    let exp = (q - 1) / two_n;
    (2..q)
        .map(|g| pow_mod(g, exp, q))
        .find(|&c| pow_mod(c, n as u64, q) == q - 1)
        .expect("q is an NTT-friendly prime")
}
