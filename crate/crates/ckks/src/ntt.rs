//! Negacyclic number-theoretic transform modulo one prime: multiplication in
//! `Z_q[X]/(X^N + 1)` via pointwise products of transformed vectors.
//!
//! Forward is Cooley–Tukey with the `2N`-th root folded into the twiddles
//! (output in bit-reversed order); inverse is Gentleman–Sande back to natural
//! order.

use crate::arith::{add_mod, inv_mod, mul_mod, mul_shoup, pow_mod, primitive_2n_root, shoup, sub_mod};

#[derive(Clone, Debug)]
pub struct NttTable {
    q: u64,
    n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

fn bit_reverse(mut k: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (k & 1);
        k >>= 1;
    }
    r
}

impl NttTable {
    pub fn new(q: u64, n: usize) -> Self {
        assert!(n.is_power_of_two() && (q - 1) % (2 * n as u64) == 0);
        let bits = n.trailing_zeros();
        let psi = primitive_2n_root(q, n);
        let psi_inv = inv_mod(psi, q);
        let mut psi_rev = vec![0; n];
        let mut psi_inv_rev = vec![0; n];
        for i in 0..n {
            let r = bit_reverse(i, bits) as u64;
            psi_rev[i] = pow_mod(psi, r, q);
            psi_inv_rev[i] = pow_mod(psi_inv, r, q);
        }
        let n_inv = inv_mod(n as u64, q);
        NttTable {
            q,
            n,
            psi_rev_shoup: psi_rev.iter().map(|&w| shoup(w, q)).collect(),
            psi_inv_rev_shoup: psi_inv_rev.iter().map(|&w| shoup(w, q)).collect(),
            psi_rev,
            psi_inv_rev,
            n_inv,
            n_inv_shoup: shoup(n_inv, q),
        }
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let (w, ws) = (self.psi_rev[m + i], self.psi_rev_shoup[m + i]);
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_shoup(a[j + t], w, ws, q);
                    a[j] = add_mod(u, v, q);
                    a[j + t] = sub_mod(u, v, q);
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let (w, ws) = (self.psi_inv_rev[h + i], self.psi_inv_rev_shoup[h + i]);
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = add_mod(u, v, q);
                    a[j + t] = mul_shoup(sub_mod(u, v, q), w, ws, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, q);
        }
    }

    /// Pointwise product of two transformed vectors, into `a`.
    pub fn mul_assign_pointwise(&self, a: &mut [u64], b: &[u64]) {
        for (x, y) in a.iter_mut().zip(b) {
            *x = mul_mod(*x, *y, self.q);
        }
    }

    /// Negacyclic product of two coefficient vectors.
    pub fn multiply(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut fa = a.to_vec();
        let mut fb = b.to_vec();
        self.forward(&mut fa);
        self.forward(&mut fb);
        self.mul_assign_pointwise(&mut fa, &fb);
        self.inverse(&mut fa);
        fa
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::ntt_primes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Schoolbook multiplication modulo X^n + 1.
    fn negacyclic_schoolbook(a: &[u64], b: &[u64], q: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let p = mul_mod(a[i], b[j], q);
                let k = i + j;
                if k < n {
                    out[k] = add_mod(out[k], p, q);
                } else {
                    out[k - n] = sub_mod(out[k - n], p, q);
                }
            }
        }
        out
    }

    #[test]
    fn roundtrip_and_schoolbook_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (bits, n) in [(30u32, 16usize), (40, 256), (60, 512)] {
            let q = ntt_primes(&[bits], n).unwrap()[0];
            let t = NttTable::new(q, n);
            let a: Vec<u64> = (0..n).map(|_| rng.gen_range(0..q)).collect();
            let b: Vec<u64> = (0..n).map(|_| rng.gen_range(0..q)).collect();
            let mut c = a.clone();
            t.forward(&mut c);
            t.inverse(&mut c);
            assert_eq!(c, a);
            assert_eq!(t.multiply(&a, &b), negacyclic_schoolbook(&a, &b, q));
        }
    }

    #[test]
    fn x_to_the_n_is_minus_one() {
        let n = 8;
        let q = ntt_primes(&[30], n).unwrap()[0];
        let t = NttTable::new(q, n);
        let mut x = vec![0; n];
        x[n - 1] = 1; // X^(n-1)
        let mut xx = vec![0; n];
        xx[1] = 1; // X
        let p = t.multiply(&x, &xx);
        let mut want = vec![0; n];
        want[0] = q - 1;
        assert_eq!(p, want);
    }
}
